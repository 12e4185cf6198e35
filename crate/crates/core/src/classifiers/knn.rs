//! k-nearest-neighbour scorer: the fraction of positives among the `k`
//! training points closest in Euclidean distance.

use ndarray::{Array2, ArrayView1};

use super::TrainView;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KnnPayload {
    pub k: usize,
    pub train_x: Array2<f64>,
    pub train_labels: Vec<bool>,
}

impl KnnPayload {
    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        self.score_from_distances(|j| {
            self.train_x
                .row(j)
                .iter()
                .zip(x.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
    }

    /// Scores a query given its squared distance to each training point.
    /// Equal distances are ordered by training index.
    pub fn score_from_distances(&self, sqdist: impl Fn(usize) -> f64) -> f64 {
        let n = self.train_labels.len();
        let mut order: Vec<(f64, usize)> = (0..n).map(|j| (sqdist(j), j)).collect();
        let k = self.k.min(n);
        order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let positives = order[..k].iter().filter(|&&(_, j)| self.train_labels[j]).count();
        positives as f64 / k as f64
    }
}

pub(crate) fn fit(view: &TrainView, k: usize) -> Result<KnnPayload> {
    if k == 0 || k > view.len() {
        return Err(Error::InvalidParameter(format!(
            "k must be in 1..={}, got {k}",
            view.len()
        )));
    }
    let d = view.x.ncols();
    let mut train_x = Array2::zeros((view.len(), d));
    for (i, mut row) in train_x.rows_mut().into_iter().enumerate() {
        row.assign(&view.row(i));
    }
    Ok(KnnPayload {
        k,
        train_x,
        train_labels: view.labels.to_vec(),
    })
}
