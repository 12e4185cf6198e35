//! Dense symmetric eigendecomposition by cyclic Jacobi rotations.

use ndarray::Array2;

const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, sorted by eigenvalue descending
/// (ties keep the lower original diagonal index first). Column `j` of the
/// returned matrix is the eigenvector for eigenvalue `j`.
///
/// Fully deterministic: rotation order is fixed and no randomisation is used.
pub fn symmetric_eigen(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "matrix must be square");
    let mut a: Vec<f64> = matrix.iter().copied().collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = f64::EPSILON * frob.max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, n, p, q, c, s);
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[[k, col]] = v[k * n + src];
        }
    }
    (values, vectors)
}

/// Applies `A <- Jᵀ A J` for the rotation in the (p, q) plane, keeping `A` symmetric.
fn rotate(a: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = c * akp - s * akq;
        a[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[p * n + k];
        let aqk = a[q * n + k];
        a[p * n + k] = c * apk - s * aqk;
        a[q * n + k] = s * apk + c * aqk;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diagonal_matrix() {
        let (vals, vecs) = symmetric_eigen(&array![[1.0, 0.0], [0.0, 3.0]]);
        assert_eq!(vals, vec![3.0, 1.0]);
        assert_eq!(vecs[[1, 0]].abs(), 1.0);
    }

    #[test]
    fn two_by_two_known_pairs() {
        let (vals, vecs) = symmetric_eigen(&array![[2.0, 1.0], [1.0, 2.0]]);
        assert!((vals[0] - 3.0).abs() < 1e-14);
        assert!((vals[1] - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[[0, 0]].abs() - r).abs() < 1e-14);
        assert!((vecs[[0, 0]] - vecs[[1, 0]]).abs() < 1e-14);
    }

    #[test]
    fn reconstructs_input() {
        let m = array![
            [4.0, 1.0, -2.0, 0.5],
            [1.0, 3.0, 0.0, 1.5],
            [-2.0, 0.0, 5.0, -1.0],
            [0.5, 1.5, -1.0, 2.0]
        ];
        let (vals, vecs) = symmetric_eigen(&m);
        let d = Array2::from_diag(&ndarray::Array1::from(vals));
        let back = vecs.dot(&d).dot(&vecs.t());
        for (x, y) in back.iter().zip(m.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let id = vecs.t().dot(&vecs);
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[[i, j]] - e).abs() < 1e-13);
            }
        }
    }
}
