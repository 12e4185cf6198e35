//! Soft-margin RBF support vector machine trained by sequential minimal
//! optimisation with second-order working set selection.
//!
//! Dual problem (minimisation form):
//!
//! ```text
//! min_a  1/2 a^T Q a - e^T a    s.t.  y^T a = 0,  0 <= a_i <= C_i
//! Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! `C_i = C * n / (2 n_class(i))` weights each class inversely to its frequency.

use ndarray::{Array2, ArrayView1};

use super::TrainView;
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const MAX_ITERATIONS: usize = 100_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
    /// KKT violation at which SMO stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl SvmParams {
    pub fn new(c: f64, gamma: f64) -> Self {
        SvmParams {
            c,
            gamma,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmPayload {
    pub gamma: f64,
    pub c: f64,
    /// Rows with non-zero dual coefficient.
    pub support_vectors: Array2<f64>,
    /// `alpha_i * y_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    /// Per-class box bounds `(positive, negative)`.
    pub class_bounds: (f64, f64),
    pub kkt_residual: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

pub fn rbf(gamma: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

impl SvmPayload {
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        let mut f = self.bias;
        for (sv, coef) in self.support_vectors.rows().into_iter().zip(&self.dual_coef) {
            f += coef * rbf(self.gamma, sv, x);
        }
        f
    }

    pub fn dimension(&self) -> usize {
        self.support_vectors.ncols()
    }
}

/// Raw SMO output over the rows of a view.
#[derive(Debug, Clone)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub bounds: Vec<f64>,
    pub kkt_residual: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

pub fn class_bounds(c: f64, labels: &[bool]) -> (f64, f64) {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = n - pos;
    (c * n / (2.0 * pos), c * n / (2.0 * neg))
}

/// Kernel values between rows of a training view.
pub(crate) trait KernelRows {
    fn diag(&self, i: usize) -> f64;
    /// Writes `K(i, t)` for every `t` into `out`.
    fn fill_row(&self, i: usize, out: &mut [f64]);
    fn value(&self, i: usize, j: usize) -> f64;
}

/// Rows `rows` of a precomputed Gram matrix.
pub(crate) struct GramRows<'a> {
    pub gram: &'a Array2<f64>,
    pub rows: &'a [usize],
}

impl KernelRows for GramRows<'_> {
    fn diag(&self, i: usize) -> f64 {
        let r = self.rows[i];
        self.gram[[r, r]]
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        let g = self.gram.row(self.rows[i]);
        let g = g.as_slice().expect("standard layout");
        for (o, &r) in out.iter_mut().zip(self.rows) {
            *o = g[r];
        }
    }

    fn value(&self, i: usize, j: usize) -> f64 {
        self.gram[[self.rows[i], self.rows[j]]]
    }
}

pub(crate) fn solve<K: KernelRows>(view: &TrainView, kernel: &K, params: &SvmParams) -> Result<SmoSolution> {
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::InvalidParameter(format!("C must be positive, got {}", params.c)));
    }
    if !(params.gamma > 0.0 && params.gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma must be positive, got {}",
            params.gamma
        )));
    }
    let n = view.len();
    let y: Vec<f64> = view.labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let (cp, cn) = class_bounds(params.c, view.labels);
    let bounds: Vec<f64> = view.labels.iter().map(|&l| if l { cp } else { cn }).collect();
    let diag: Vec<f64> = (0..n).map(|i| kernel.diag(i)).collect();

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut row_i = vec![0.0; n];
    let mut row_j = vec![0.0; n];
    // Membership of the "up" and "low" index sets; only i and j change per step.
    let in_up = |t: usize, a: f64| if y[t] > 0.0 { a < bounds[t] } else { a > 0.0 };
    let in_low = |t: usize, a: f64| if y[t] > 0.0 { a > 0.0 } else { a < bounds[t] };
    let mut up: Vec<bool> = (0..n).map(|t| in_up(t, 0.0)).collect();
    let mut low: Vec<bool> = (0..n).map(|t| in_low(t, 0.0)).collect();
    let mut iterations = 0;
    let residual = loop {
        // i maximally violates the optimality conditions; the gap to the
        // most violating partner decides convergence.
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up[t] && v > g_max {
                g_max = v;
                i = t;
            }
            if low[t] && v < g_min {
                g_min = v;
                j = t;
            }
        }
        let gap = g_max - g_min;
        if i == usize::MAX || j == usize::MAX || gap < params.tolerance {
            break gap.max(0.0);
        }
        if iterations >= params.max_iterations {
            return Err(Error::NotConverged {
                iterations,
                residual: gap,
            });
        }
        iterations += 1;

        kernel.fill_row(i, &mut row_i);
        // Second-order choice of j: largest guaranteed decrease of the dual.
        let mut best = f64::INFINITY;
        for t in 0..n {
            let b = g_max + y[t] * grad[t];
            if low[t] && b > 0.0 {
                let a = diag[i] + diag[t] - 2.0 * y[i] * y[t] * row_i[t];
                let gain = -b * b / if a > 0.0 { a } else { TAU };
                if gain < best {
                    best = gain;
                    j = t;
                }
            }
        }
        kernel.fill_row(j, &mut row_j);
        let (ci, cj) = (bounds[i], bounds[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (diag[i] + diag[j] - 2.0 * row_i[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (diag[i] + diag[j] - 2.0 * row_i[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        for t in [i, j] {
            up[t] = in_up(t, alpha[t]);
            low[t] = in_low(t, alpha[t]);
        }
        let (di, dj) = (y[i] * (alpha[i] - old_i), y[j] * (alpha[j] - old_j));
        for t in 0..n {
            grad[t] += y[t] * (row_i[t] * di + row_j[t] * dj);
        }
    };

    // Bias from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= bounds[t];
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else {
        0.5 * (ub + lb)
    };
    // 1/2 a^T Q a - e^T a = 1/2 a^T (grad - e)
    let primal_form: f64 = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    Ok(SmoSolution {
        alpha,
        bias: -rho,
        bounds,
        kkt_residual: residual,
        dual_objective: -primal_form,
        iterations,
    })
}

pub(crate) fn to_payload(view: &TrainView, sol: &SmoSolution, params: &SvmParams) -> SvmPayload {
    let support: Vec<usize> = (0..view.len()).filter(|&t| sol.alpha[t] > 0.0).collect();
    let d = view.x.ncols();
    let mut support_vectors = Array2::zeros((support.len(), d));
    for (r, &t) in support.iter().enumerate() {
        support_vectors.row_mut(r).assign(&view.x.row(view.rows[t]));
    }
    SvmPayload {
        gamma: params.gamma,
        c: params.c,
        support_vectors,
        dual_coef: support
            .iter()
            .map(|&t| if view.labels[t] { sol.alpha[t] } else { -sol.alpha[t] })
            .collect(),
        bias: sol.bias,
        class_bounds: class_bounds(params.c, view.labels),
        kkt_residual: sol.kkt_residual,
        dual_objective: sol.dual_objective,
        iterations: sol.iterations,
    }
}

/// Decision values of the training rows, reusing kernel values.
pub(crate) fn training_scores<K: KernelRows>(view: &TrainView, sol: &SmoSolution, kernel: &K) -> Vec<f64> {
    let support: Vec<(usize, f64)> = (0..view.len())
        .filter(|&t| sol.alpha[t] > 0.0)
        .map(|t| (t, if view.labels[t] { sol.alpha[t] } else { -sol.alpha[t] }))
        .collect();
    (0..view.len())
        .map(|t| sol.bias + support.iter().map(|&(s, c)| c * kernel.value(s, t)).sum::<f64>())
        .collect()
}
