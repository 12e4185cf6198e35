//! Column z-scoring and principal component projection of beat waveforms.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::dataset::{SessionId, SubjectId};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::segmentation::BeatMatrix;

pub const DEFAULT_COMPONENTS: usize = 25;
pub const SCALE_FLOOR: f64 = 1e-8;
/// Eigenvalues below this fraction of the largest count as numerically zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub feature_mean: Vec<f64>,
    /// Population standard deviations, floored at [`SCALE_FLOOR`].
    pub feature_scale: Vec<f64>,
    /// K x W, orthonormal rows.
    pub components: Array2<f64>,
    /// Non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the standardised training covariance.
    pub total_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    /// Fewer than `requested` eigenvalues are numerically non-zero; the
    /// trailing components span the null space.
    RankDeficient { requested: usize, rank: usize },
    /// More components were requested than the beat width allows.
    Truncated { requested: usize, width: usize },
}

#[derive(Debug, Clone)]
pub struct FeatureFit {
    pub model: FeatureModel,
    pub warning: Option<FitWarning>,
}

impl FeatureModel {
    pub fn width(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.explained_variance.len()];
        }
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    pub fn standardize_row(&self, row: ArrayView1<f64>) -> Array1<f64> {
        row.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// `components . ((x - mean) / scale)`
    pub fn project_row(&self, row: ArrayView1<f64>) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(Error::DimensionMismatch {
                expected: self.width(),
                actual: row.len(),
            });
        }
        Ok(self.components.dot(&self.standardize_row(row)).to_vec())
    }

    pub fn project_matrix(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.width() {
            return Err(Error::DimensionMismatch {
                expected: self.width(),
                actual: rows.ncols(),
            });
        }
        let z = standardize(rows, &self.feature_mean, &self.feature_scale);
        Ok(z.dot(&self.components.t()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# feature model");
        let _ = writeln!(out, "width\t{}", self.width());
        let _ = writeln!(out, "components\t{}", self.n_components());
        let _ = writeln!(out, "total_variance\t{}", self.total_variance);
        let line = |v: &mut String, label: &str, xs: &mut dyn Iterator<Item = f64>| {
            let _ = writeln!(v, "[{label}]");
            let row: Vec<String> = xs.map(|x| x.to_string()).collect();
            let _ = writeln!(v, "{}", row.join("\t"));
        };
        line(&mut out, "feature_mean", &mut self.feature_mean.iter().copied());
        line(&mut out, "feature_scale", &mut self.feature_scale.iter().copied());
        line(&mut out, "explained_variance", &mut self.explained_variance.iter().copied());
        let _ = writeln!(out, "[components]");
        for row in self.components.rows() {
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join("\t"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Features(m);
        let mut width = None;
        let mut k = None;
        let mut total = None;
        let mut section: Option<String> = None;
        let mut vectors: std::collections::HashMap<String, Vec<f64>> = Default::default();
        let mut comp_rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(label) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(label.to_string());
                continue;
            }
            let parse_row = |l: &str| -> Result<Vec<f64>> {
                l.split('\t')
                    .filter(|c| !c.is_empty())
                    .map(|c| {
                        c.parse::<f64>()
                            .map_err(|_| bad(format!("line {}: bad number {c:?}", i + 1)))
                    })
                    .collect()
            };
            match section.as_deref() {
                None => {
                    let (key, value) = line
                        .split_once('\t')
                        .ok_or_else(|| bad(format!("line {}: expected key<TAB>value", i + 1)))?;
                    match key {
                        "width" => width = value.parse::<usize>().ok(),
                        "components" => k = value.parse::<usize>().ok(),
                        "total_variance" => total = value.parse::<f64>().ok(),
                        other => return Err(bad(format!("unknown key {other:?}"))),
                    }
                }
                Some("components") => comp_rows.push(parse_row(line)?),
                Some(label) => {
                    vectors.insert(label.to_string(), parse_row(line)?);
                }
            }
        }
        let width = width.ok_or_else(|| bad("missing width".into()))?;
        let k = k.ok_or_else(|| bad("missing component count".into()))?;
        let mut take = |label: &str, len: usize| -> Result<Vec<f64>> {
            let v = vectors
                .remove(label)
                .ok_or_else(|| bad(format!("missing [{label}]")))?;
            if v.len() != len {
                return Err(bad(format!("[{label}] has {} values, expected {len}", v.len())));
            }
            Ok(v)
        };
        let feature_mean = take("feature_mean", width)?;
        let feature_scale = take("feature_scale", width)?;
        let explained_variance = take("explained_variance", k)?;
        if comp_rows.len() != k || comp_rows.iter().any(|r| r.len() != width) {
            return Err(bad("component matrix has the wrong shape".into()));
        }
        Ok(FeatureModel {
            feature_mean,
            feature_scale,
            components: Array2::from_shape_vec((k, width), comp_rows.concat())
                .map_err(|e| bad(e.to_string()))?,
            explained_variance,
            total_variance: total.ok_or_else(|| bad("missing total_variance".into()))?,
        })
    }
}

fn standardize(rows: &Array2<f64>, mean: &[f64], scale: &[f64]) -> Array2<f64> {
    let mut z = rows.clone();
    for mut row in z.rows_mut() {
        for ((x, m), s) in row.iter_mut().zip(mean).zip(scale) {
            *x = (*x - m) / s;
        }
    }
    z
}

/// Column means and floored population standard deviations.
pub fn column_stats(rows: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = rows.nrows() as f64;
    let mean = rows.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let scale = rows
        .columns()
        .into_iter()
        .zip(&mean)
        .map(|(col, m)| {
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            var.sqrt().max(SCALE_FLOOR)
        })
        .collect();
    (mean, scale)
}

/// Fits standardisation and PCA on training rows only.
pub fn fit_matrix(train: &Array2<f64>, k: usize) -> Result<FeatureFit> {
    let (n, width) = train.dim();
    if k == 0 {
        return Err(Error::Features("need at least one component".into()));
    }
    if n <= k {
        return Err(Error::Features(format!(
            "need more training rows ({n}) than components ({k})"
        )));
    }
    if train.iter().any(|v| !v.is_finite()) {
        return Err(Error::Features("training matrix has non-finite values".into()));
    }
    let (feature_mean, feature_scale) = column_stats(train);
    let z = standardize(train, &feature_mean, &feature_scale);
    let cov = z.t().dot(&z) / n as f64;
    let total_variance = cov.diag().sum();

    let (values, vectors) = symmetric_eigen(&cov);
    let kept = k.min(width);
    let largest = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank = values.iter().filter(|&&v| v > RANK_TOL * largest).count();

    let mut components = Array2::zeros((kept, width));
    for c in 0..kept {
        let col = vectors.column(c);
        // Sign convention: the largest-magnitude entry (first on ties) is positive.
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (dst, v) in components.row_mut(c).iter_mut().zip(col.iter()) {
            *dst = sign * v;
        }
    }
    let explained_variance = values[..kept].iter().map(|v| v.max(0.0)).collect();

    let warning = if k > width {
        Some(FitWarning::Truncated {
            requested: k,
            width,
        })
    } else if rank < k {
        Some(FitWarning::RankDeficient { requested: k, rank })
    } else {
        None
    };
    Ok(FeatureFit {
        model: FeatureModel {
            feature_mean,
            feature_scale,
            components,
            explained_variance,
            total_variance,
        },
        warning,
    })
}

pub fn fit_feature_model(train_beats: &BeatMatrix, k: usize) -> Result<FeatureFit> {
    fit_matrix(&train_beats.beats, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub subject: SubjectId,
    pub session: SessionId,
    /// Relative to a target user; set by the classifier stage.
    pub genuine_label: bool,
}

pub fn transform(beats: &BeatMatrix, model: &FeatureModel) -> Result<Vec<FeatureVector>> {
    let projected = model.project_matrix(&beats.beats)?;
    Ok(projected
        .rows()
        .into_iter()
        .map(|row| FeatureVector {
            values: row.to_vec(),
            subject: beats.subject.clone(),
            session: beats.session,
            genuine_label: false,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn pseudo_random(n: usize, w: usize, seed: u64) -> Array2<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, w), |(_, c)| rng.gen_range(-1.0..1.0) * (1.0 + c as f64))
    }

    fn assert_orthonormal(c: &Array2<f64>) {
        let g = c.dot(&c.t());
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-9, "gram[{i},{j}] = {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn rank_one_diagonal() {
        let fit = fit_matrix(&array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]], 2).unwrap();
        let m = &fit.model;
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.components[[0, 0]] - r).abs() < 1e-12);
        assert!((m.components[[0, 1]] - r).abs() < 1e-12);
        let ratio = m.explained_variance_ratio();
        assert!((ratio[0] - 1.0).abs() < 1e-12);
        assert!(ratio[1].abs() < 1e-12);
        assert_eq!(
            fit.warning,
            Some(FitWarning::RankDeficient {
                requested: 2,
                rank: 1
            })
        );
        assert_orthonormal(&m.components);
    }

    #[test]
    fn column_standardizes_by_population_std() {
        let fit = fit_matrix(&array![[1.0], [2.0], [3.0]], 1).unwrap();
        let z = fit.model.standardize_row(ndarray::aview1(&[1.0]));
        assert!((z[0] + 1.2247).abs() < 1e-4);
        let z = fit.model.standardize_row(ndarray::aview1(&[3.0]));
        assert!((z[0] - 1.2247).abs() < 1e-4);
        assert!((fit.model.feature_scale[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn components_are_orthonormal_and_sorted() {
        let fit = fit_matrix(&pseudo_random(40, 12, 1), 8).unwrap();
        assert!(fit.warning.is_none());
        assert_orthonormal(&fit.model.components);
        let ev = &fit.model.explained_variance;
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
        for row in fit.model.components.rows() {
            let pivot = row.iter().fold(0.0_f64, |m, v| if v.abs() > m.abs() { *v } else { m });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn training_projection_is_centred() {
        let x = pseudo_random(50, 6, 2);
        let fit = fit_matrix(&x, 6).unwrap();
        let p = fit.model.project_matrix(&x).unwrap();
        for (c, col) in p.columns().into_iter().enumerate() {
            let mean = col.sum() / col.len() as f64;
            assert!(mean.abs() < 1e-9);
            let var = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
            assert!((var - fit.model.explained_variance[c]).abs() < 1e-9);
        }
        // Standardised columns: mean 0, population std 1.
        let z = standardize(&x, &fit.model.feature_mean, &fit.model.feature_scale);
        for col in z.columns() {
            let m = col.sum() / col.len() as f64;
            let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn full_rank_round_trip() {
        let x = pseudo_random(30, 7, 3);
        let fit = fit_matrix(&x, 7).unwrap();
        let m = &fit.model;
        let p = m.project_matrix(&x).unwrap();
        let back = p.dot(&m.components);
        let z = standardize(&x, &m.feature_mean, &m.feature_scale);
        for (a, b) in back.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        let total: f64 = m.explained_variance.iter().sum();
        assert!((total - m.total_variance).abs() < 1e-8);
    }

    #[test]
    fn constant_column_is_floored() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [4.0, 5.0]];
        let fit = fit_matrix(&x, 1).unwrap();
        assert_eq!(fit.model.feature_scale[1], SCALE_FLOOR);
        assert!(fit.model.project_matrix(&x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn precondition_errors() {
        let x = pseudo_random(5, 3, 4);
        assert!(fit_matrix(&x, 0).is_err());
        assert!(fit_matrix(&x, 5).is_err());
        let fit = fit_matrix(&pseudo_random(20, 3, 4), 5).unwrap();
        assert_eq!(fit.model.n_components(), 3);
        assert!(matches!(fit.warning, Some(FitWarning::Truncated { .. })));
        let err = fit.model.project_matrix(&pseudo_random(2, 4, 5)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, actual: 4 }));
    }

    #[test]
    fn test_data_never_moves_the_model() {
        let train = pseudo_random(40, 5, 6);
        let a = fit_matrix(&train, 3).unwrap().model;
        let b = fit_matrix(&train, 3).unwrap().model;
        assert_eq!(a, b);
        let test1 = pseudo_random(10, 5, 7);
        let test2 = pseudo_random(10, 5, 8);
        let _ = (a.project_matrix(&test1).unwrap(), a.project_matrix(&test2).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip() {
        let fit = fit_matrix(&pseudo_random(30, 6, 9), 4).unwrap();
        let text = fit.model.to_text();
        assert_eq!(FeatureModel::from_text(&text).unwrap(), fit.model);
        assert!(FeatureModel::from_text("width\t3\n").is_err());
    }
}
