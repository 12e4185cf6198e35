//! False accept / false reject rates, equal error rate and half total error rate.
//!
//! A score is accepted when `score >= threshold`.

use crate::error::{Error, Result};

fn check(genuine: &[f64], impostor: &[f64]) -> Result<()> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::Evaluation(format!(
            "need genuine and impostor scores (got {} and {})",
            genuine.len(),
            impostor.len()
        )));
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::Evaluation("non-finite score".into()));
    }
    Ok(())
}

/// `(FAR, FRR)` at `threshold`.
pub fn far_frr(genuine: &[f64], impostor: &[f64], threshold: f64) -> (f64, f64) {
    let fa = impostor.iter().filter(|&&s| s >= threshold).count();
    let fr = genuine.iter().filter(|&&s| s < threshold).count();
    (fa as f64 / impostor.len() as f64, fr as f64 / genuine.len() as f64)
}

pub fn compute_hter(genuine: &[f64], impostor: &[f64], threshold: f64) -> Result<f64> {
    check(genuine, impostor)?;
    let (far, frr) = far_frr(genuine, impostor, threshold);
    Ok(0.5 * (far + frr))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate by threshold sweep.
///
/// FAR and FRR are constant on each interval `(s[j-1], s[j]]` between
/// consecutive distinct scores, so every interval is represented by its
/// midpoint (the unbounded end intervals by mirroring the neighbouring
/// spacing). If `FAR - FRR` is exactly zero on a run of intervals, the
/// threshold is the centre of that run; otherwise FAR and FRR are linearly
/// interpolated between the two representatives where the sign changes.
pub fn compute_eer(genuine: &[f64], impostor: &[f64]) -> Result<EerPoint> {
    check(genuine, impostor)?;
    let mut scores: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let m = scores.len();
    if m == 1 {
        // Every score is identical: accepting all and rejecting all are the
        // only operating points, and they average to 0.5.
        return Ok(EerPoint {
            eer: 0.5,
            threshold: scores[0],
        });
    }

    let mut imp = impostor.to_vec();
    imp.sort_by(f64::total_cmp);
    let mut gen = genuine.to_vec();
    gen.sort_by(f64::total_cmp);
    let (ni, ng) = (imp.len() as f64, gen.len() as f64);

    // Interval j covers (s[j-1], s[j]] for j in 0..=m with s[-1] = -inf, s[m] = +inf.
    let far = |j: usize| -> f64 {
        if j == m {
            return 0.0;
        }
        let below = imp.partition_point(|&s| s < scores[j]);
        (imp.len() - below) as f64 / ni
    };
    let frr = |j: usize| -> f64 {
        if j == 0 {
            return 0.0;
        }
        gen.partition_point(|&s| s <= scores[j - 1]) as f64 / ng
    };
    let rep = |j: usize| -> f64 {
        if j == 0 {
            scores[0] - 0.5 * (scores[1] - scores[0])
        } else if j == m {
            scores[m - 1] + 0.5 * (scores[m - 1] - scores[m - 2])
        } else {
            0.5 * (scores[j - 1] + scores[j])
        }
    };

    let rates: Vec<(f64, f64)> = (0..=m).map(|j| (far(j), frr(j))).collect();
    let diff = |j: usize| rates[j].0 - rates[j].1;
    // diff(0) = 1 and diff(m) = -1; diff is non-increasing in j.
    let first = (0..=m).find(|&j| diff(j) <= 0.0).expect("diff(m) is -1");
    if diff(first) == 0.0 {
        let last = (first..=m).take_while(|&j| diff(j) == 0.0).last().unwrap_or(first);
        // The zero run spans thresholds (s[first-1], s[last]].
        return Ok(EerPoint {
            eer: rates[first].0,
            threshold: 0.5 * (scores[first - 1] + scores[last]),
        });
    }
    let j = first - 1;
    let (d0, d1) = (diff(j), diff(first));
    let lambda = d0 / (d0 - d1);
    let eer = rates[j].0 + lambda * (rates[first].0 - rates[j].0);
    let threshold = rep(j) + lambda * (rep(first) - rep(j));
    Ok(EerPoint { eer, threshold })
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
