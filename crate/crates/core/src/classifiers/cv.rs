//! Stratified k-fold cross-validation over a hyperparameter grid.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fit_rows, HyperGrid, Hyper, KernelCache, LabeledSet, ModelKind};
use crate::dataset::SubjectId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CvEntry {
    pub hyper: Hyper,
    /// NaN when the candidate failed to train on some fold.
    pub mean_balanced_accuracy: f64,
    pub fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    /// In the grid's simplicity order.
    pub entries: Vec<CvEntry>,
    pub selected: Hyper,
    pub folds: usize,
}

/// Per-target fold seed so that users get independent but reproducible shuffles.
pub fn fold_seed(seed: u64, target: &SubjectId) -> u64 {
    // FNV-1a over the subject id, mixed with the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in target.as_str().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

/// Fold index of every row. Positives and negatives are shuffled separately
/// and dealt round-robin, so each fold gets `floor` or `ceil` of its share of
/// each class.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if folds < 2 || pos.len() < folds || neg.len() < folds {
        return Err(Error::Stratification(format!(
            "{} positives and {} negatives cannot fill {folds} folds",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for mut class in [pos, neg] {
        class.shuffle(&mut rng);
        for i in class {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

pub fn balanced_accuracy(scores: &[f64], labels: &[bool], cutoff: f64) -> f64 {
    let (mut tp, mut p, mut tn, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if l {
            p += 1;
            tp += usize::from(s >= cutoff);
        } else {
            n += 1;
            tn += usize::from(s < cutoff);
        }
    }
    0.5 * (tp as f64 / p as f64 + tn as f64 / n as f64)
}

pub fn cross_validate(data: &LabeledSet, grid: &HyperGrid, kind: ModelKind, seed: u64) -> Result<CvReport> {
    let rows: Vec<usize> = (0..data.len()).collect();
    cross_validate_rows(&data.x, &rows, &data.labels, kind, grid, seed, None)
}

pub(crate) fn cross_validate_rows(
    x: &Array2<f64>,
    rows: &[usize],
    labels: &[bool],
    kind: ModelKind,
    grid: &HyperGrid,
    seed: u64,
    cache: Option<&KernelCache>,
) -> Result<CvReport> {
    grid.validate()?;
    let assignment = stratified_folds(labels, grid.folds, seed)?;
    let split = |f: usize, held_out: bool| -> (Vec<usize>, Vec<bool>) {
        (0..rows.len())
            .filter(|&i| (assignment[i] == f) == held_out)
            .map(|i| (rows[i], labels[i]))
            .unzip()
    };
    let folds: Vec<_> = (0..grid.folds).map(|f| (split(f, false), split(f, true))).collect();

    let mut entries = Vec::new();
    let mut best: Option<(f64, Hyper)> = None;
    let mut last_error = None;
    for hyper in grid.candidates(kind) {
        let mut fold_scores = Vec::with_capacity(grid.folds);
        for ((train_rows, train_labels), (valid_rows, valid_labels)) in &folds {
            match fit_rows(x, train_rows, train_labels, hyper, cache) {
                Ok(fitted) => {
                    let scores = fitted.score_rows(x, valid_rows, cache);
                    fold_scores.push(balanced_accuracy(&scores, valid_labels, fitted.payload.natural_cutoff()));
                }
                Err(e) => {
                    last_error = Some(e);
                    fold_scores.push(f64::NAN);
                }
            }
        }
        let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
        if !mean.is_nan() && best.map_or(true, |(b, _)| mean > b + 1e-12) {
            best = Some((mean, hyper));
        }
        entries.push(CvEntry {
            hyper,
            mean_balanced_accuracy: mean,
            fold_scores,
        });
    }
    match best {
        Some((_, selected)) => Ok(CvReport {
            entries,
            selected,
            folds: grid.folds,
        }),
        None => Err(last_error.unwrap_or_else(|| Error::InvalidParameter("empty grid".into()))),
    }
}
