//! Independent reference implementations used by the integration and
//! acceptance tests. None of these call into the library's algorithms.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;

/// EER by exhaustive sweep: every observed score (and +inf) is tried as an
/// acceptance threshold, the one with the smallest |FAR - FRR| wins and the
/// EER is the mean of FAR and FRR there.
pub fn brute_force_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.push(f64::INFINITY);
    let mut best = (f64::INFINITY, 0.0);
    for &t in &thresholds {
        let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        let gap = (far - frr).abs();
        if gap < best.0 {
            best = (gap, 0.5 * (far + frr));
        }
    }
    best.1
}

/// `(max_t min(FAR, FRR), min_t max(FAR, FRR))` over every threshold. Any
/// reasonable EER lies in this interval, whatever the tie structure.
pub fn eer_bracket(genuine: &[f64], impostor: &[f64]) -> (f64, f64) {
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.push(f64::INFINITY);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for &t in &thresholds {
        let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        lo = lo.max(far.min(frr));
        hi = hi.min(far.max(frr));
    }
    (lo, hi)
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp()
}

/// `sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij`.
pub fn svm_dual_value(points: &[Vec<f64>], y: &[f64], gamma: f64, alpha: &[f64]) -> f64 {
    let mut quad = 0.0;
    for i in 0..points.len() {
        for j in 0..points.len() {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * rbf(gamma, &points[i], &points[j]);
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Maximum of the SVM dual over `0 <= a_i <= upper_i`, `y^T a = 0`.
///
/// The problem is a convex QP, so its optimum is the best feasible KKT point
/// over all assignments of each variable to "at zero", "at its bound" or
/// "free". For every assignment the free block is solved exactly from the
/// equality-constrained stationarity system.
pub fn svm_dual_oracle(points: &[Vec<f64>], y: &[f64], gamma: f64, upper: &[f64]) -> f64 {
    let n = points.len();
    assert!(n <= 10, "enumeration is exponential in the number of points");
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * rbf(gamma, &points[i], &points[j]));
    let mut best = f64::NEG_INFINITY;
    let mut state = vec![0u8; n];
    loop {
        if let Some(alpha) = solve_assignment(&q, y, upper, &state) {
            best = best.max(svm_dual_value(points, y, gamma, &alpha));
        }
        // Next assignment in base 3.
        let mut k = 0;
        while k < n && state[k] == 2 {
            state[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
        state[k] += 1;
    }
    best
}

fn solve_assignment(q: &DMatrix<f64>, y: &[f64], upper: &[f64], state: &[u8]) -> Option<Vec<f64>> {
    const FEAS: f64 = 1e-9;
    let n = y.len();
    let mut alpha: Vec<f64> = (0..n).map(|i| if state[i] == 1 { upper[i] } else { 0.0 }).collect();
    let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
    if free.is_empty() {
        let balance: f64 = alpha.iter().zip(y).map(|(a, y)| a * y).sum();
        return (balance.abs() < FEAS).then_some(alpha);
    }
    // [Q_FF  y_F] [a_F]   [1 - Q_FB a_B]
    // [y_F^T  0 ] [ b ] = [  -y_B^T a_B ]
    let m = free.len();
    let mut lhs = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            lhs[(r, c)] = q[(i, j)];
        }
        lhs[(r, m)] = y[i];
        lhs[(m, r)] = y[i];
        rhs[r] = 1.0 - (0..n).filter(|&j| state[j] != 2).map(|j| q[(i, j)] * alpha[j]).sum::<f64>();
    }
    rhs[m] = -(0..n).filter(|&j| state[j] != 2).map(|j| y[j] * alpha[j]).sum::<f64>();
    let sol = lhs.lu().solve(&rhs)?;
    for (r, &i) in free.iter().enumerate() {
        let a = sol[r];
        if !(a > -FEAS && a < upper[i] + FEAS) {
            return None;
        }
        alpha[i] = a.clamp(0.0, upper[i]);
    }
    Some(alpha)
}

/// Per-class box bounds `C * n / (2 * n_class)`.
pub fn balanced_upper(c: f64, y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&v| v > 0.0).count() as f64;
    y.iter()
        .map(|&v| c * n / (2.0 * if v > 0.0 { pos } else { n - pos }))
        .collect()
}

/// Eigenvalues (descending) of the population covariance of the z-scored
/// columns of `x`, via nalgebra's symmetric eigensolver.
pub fn pca_eigenvalues_oracle(x: &Array2<f64>) -> Vec<f64> {
    let (n, d) = x.dim();
    let m = DMatrix::from_fn(n, d, |i, j| x[[i, j]]);
    let mut z = m.clone();
    for j in 0..d {
        let col = m.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            z[(i, j)] = (m[(i, j)] - mean) / sd;
        }
    }
    let cov = z.transpose() * &z / n as f64;
    let mut values: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Weighted mean log-loss with an L2 penalty on the weights, written out
/// directly from its definition.
pub fn logistic_loss(x: &Array2<f64>, labels: &[bool], weights: &[f64], l2: f64, theta: &[f64]) -> f64 {
    let d = x.ncols();
    let total: f64 = weights.iter().sum();
    let mut loss = 0.0;
    for (i, row) in x.rows().into_iter().enumerate() {
        let z = theta[d] + row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
        let p = 1.0 / (1.0 + (-z).exp());
        let ll = if labels[i] { -p.ln() } else { -(1.0 - p).ln() };
        loss += weights[i] * ll;
    }
    loss / total + 0.5 * l2 * theta[..d].iter().map(|w| w * w).sum::<f64>()
}

/// Central finite-difference gradient.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            probe[k] = theta[k] + h;
            let up = f(&probe);
            probe[k] = theta[k] - h;
            let down = f(&probe);
            probe[k] = theta[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Greedy one-to-one matching of detections to ground truth within `tol`
/// samples, nearest pairs first. Returns matched pairs `(truth, detected)`.
pub fn match_peaks(truth: &[usize], detected: &[usize], tol: usize) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for &t in truth {
        for &d in detected {
            let e = t.abs_diff(d);
            if e <= tol {
                candidates.push((e, t, d));
            }
        }
    }
    candidates.sort();
    let (mut used_t, mut used_d) = (std::collections::BTreeSet::new(), std::collections::BTreeSet::new());
    let mut pairs = Vec::new();
    for (_, t, d) in candidates {
        if !used_t.contains(&t) && !used_d.contains(&d) {
            used_t.insert(t);
            used_d.insert(d);
            pairs.push((t, d));
        }
    }
    pairs
}

pub mod checks;
