//! L2-regularised logistic regression fitted by full-batch gradient descent
//! with Armijo backtracking.
//!
//! Features are z-scored on the training rows before fitting and the
//! standardisation is folded back into the stored weights, so the penalty
//! acts on comparable scales while scoring needs no extra state.

use ndarray::{Array2, ArrayView1};

use super::TrainView;
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 100_000;
const SCALE_FLOOR: f64 = 1e-8;
const ARMIJO: f64 = 0.5;
const MIN_STEP: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub l2: f64,
    /// Gradient norm at which descent stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl LogisticParams {
    pub fn new(l2: f64) -> Self {
        LogisticParams {
            l2,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticPayload {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub iterations: usize,
    /// Gradient norm of the standardised problem at termination.
    pub grad_norm: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticPayload {
    pub fn probability(&self, x: ArrayView1<f64>) -> f64 {
        let z: f64 = self.bias + self.weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>();
        sigmoid(z)
    }
}

/// Weighted mean log-loss plus `l2 / 2 * |w|^2` and its gradient.
///
/// `theta` holds the weights followed by the (unpenalised) bias. Sample
/// weights are normalised by their sum.
pub fn loss_and_gradient(
    x: &Array2<f64>,
    labels: &[bool],
    sample_weights: &[f64],
    l2: f64,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let d = x.ncols();
    let total: f64 = sample_weights.iter().sum();
    let (w, b) = theta.split_at(d);
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for ((row, &label), &s) in x.rows().into_iter().zip(labels).zip(sample_weights) {
        let z = b[0] + row.iter().zip(w).map(|(v, w)| v * w).sum::<f64>();
        let y = if label { 1.0 } else { -1.0 };
        loss += s * softplus(-y * z);
        // d/dz softplus(-y z) = -y * sigmoid(-y z)
        let dz = -y * sigmoid(-y * z) * s;
        for (g, v) in grad.iter_mut().zip(row.iter()) {
            *g += dz * v;
        }
        grad[d] += dz;
    }
    loss /= total;
    for g in grad.iter_mut() {
        *g /= total;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (g, wi) in grad.iter_mut().zip(w) {
        *g += l2 * wi;
    }
    (loss, grad)
}

/// Inverse class frequency weights with mean 1.
pub fn balanced_weights(labels: &[bool]) -> Vec<f64> {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let (wp, wn) = (n / (2.0 * pos), n / (2.0 * (n - pos)));
    labels.iter().map(|&l| if l { wp } else { wn }).collect()
}

pub(crate) struct LogisticFit {
    pub payload: LogisticPayload,
    #[cfg_attr(not(test), allow(dead_code))]
    pub loss_history: Vec<f64>,
}

pub(crate) fn fit(view: &TrainView, params: &LogisticParams) -> Result<LogisticPayload> {
    fit_with_history(view, params).map(|f| f.payload)
}

pub(crate) fn fit_with_history(view: &TrainView, params: &LogisticParams) -> Result<LogisticFit> {
    if !(params.l2 >= 0.0 && params.l2.is_finite()) {
        return Err(Error::InvalidParameter(format!("l2 must be >= 0, got {}", params.l2)));
    }
    let n = view.len();
    let d = view.x.ncols();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(view.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in scale.iter_mut().zip(view.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    scale
        .iter_mut()
        .for_each(|s| *s = (*s / n as f64).sqrt().max(SCALE_FLOOR));
    let z = Array2::from_shape_fn((n, d), |(i, j)| (view.row(i)[j] - mean[j]) / scale[j]);
    let sw = balanced_weights(view.labels);

    let mut theta = vec![0.0; d + 1];
    let (mut loss, mut grad) = loss_and_gradient(&z, view.labels, &sw, params.l2, &theta);
    let mut history = vec![loss];
    let mut step = 1.0;
    let mut iterations = 0;
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    while norm(&grad) > params.tolerance {
        if iterations >= params.max_iterations {
            return Err(Error::NotConverged {
                iterations,
                residual: norm(&grad),
            });
        }
        iterations += 1;
        let g2: f64 = grad.iter().map(|v| v * v).sum();
        loop {
            let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let (l, g) = loss_and_gradient(&z, view.labels, &sw, params.l2, &trial);
            if l.is_finite() && l <= loss - ARMIJO * step * g2 {
                theta = trial;
                loss = l;
                grad = g;
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                return Err(Error::NotConverged {
                    iterations,
                    residual: norm(&grad),
                });
            }
        }
        history.push(loss);
        step *= 2.0;
    }

    let weights: Vec<f64> = theta[..d].iter().zip(&scale).map(|(w, s)| w / s).collect();
    let bias = theta[d] - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(LogisticFit {
        payload: LogisticPayload {
            weights,
            bias,
            l2: params.l2,
            iterations,
            grad_norm: norm(&grad),
        },
        loss_history: history,
    })
}
