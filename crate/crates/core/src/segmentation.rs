//! R-peak detection and heartbeat segmentation.
//!
//! QRS complexes are accentuated by correlating the conditioned trace with a
//! single-scale Ricker wavelet and taking the magnitude. Peaks are local
//! maxima above a multiple of the centred running mean of that response,
//! thinned by a refractory gap. Fixed windows around each R peak form the
//! beat matrix, and the beats furthest from the median beat are dropped.

use ndarray::{Array2, Axis};

use crate::dataset::{EcgTrace, SessionId, SubjectId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationConfig {
    /// Ricker wavelet sigma in seconds; of the order of the R-wave width.
    pub wavelet_scale_s: f64,
    pub threshold_window_s: f64,
    pub threshold_factor: f64,
    pub refractory_s: f64,
    pub pre_r_s: f64,
    pub post_r_s: f64,
    pub reject_fraction: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            wavelet_scale_s: 0.01,
            threshold_window_s: 1.5,
            threshold_factor: 3.0,
            refractory_s: 0.25,
            pre_r_s: 0.25,
            post_r_s: 0.45,
            reject_fraction: 0.20,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Segmentation(msg));
        if !(self.wavelet_scale_s > 0.0) {
            return bad(format!("wavelet scale must be positive, got {}", self.wavelet_scale_s));
        }
        if !(self.threshold_window_s > 0.0 && self.threshold_factor >= 0.0 && self.refractory_s >= 0.0) {
            return bad("threshold window, factor and refractory gap must be non-negative".into());
        }
        if !(self.pre_r_s >= 0.0 && self.post_r_s >= 0.0 && self.pre_r_s + self.post_r_s > 0.0) {
            return bad("beat window must have positive length".into());
        }
        if !(0.0..1.0).contains(&self.reject_fraction) {
            return bad(format!("reject fraction {} outside [0, 1)", self.reject_fraction));
        }
        Ok(())
    }

    pub fn pre_samples(&self, sample_rate_hz: f64) -> usize {
        (self.pre_r_s * sample_rate_hz).round() as usize
    }

    pub fn width_samples(&self, sample_rate_hz: f64) -> usize {
        ((self.pre_r_s + self.post_r_s) * sample_rate_hz).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRef {
    pub subject: SubjectId,
    pub session: SessionId,
    pub recording: u32,
}

impl TraceRef {
    pub fn of(trace: &EcgTrace) -> Self {
        TraceRef {
            subject: trace.subject.clone(),
            session: trace.session,
            recording: trace.recording_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PeakList {
    /// Strictly increasing sample indices.
    pub indices: Vec<usize>,
    pub trace_ref: Option<TraceRef>,
}

impl PeakList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatMatrix {
    /// One beat per row.
    pub beats: Array2<f64>,
    pub subject: SubjectId,
    pub session: SessionId,
    pub sample_rate_hz: f64,
    /// Samples before R in each row.
    pub pre_samples: usize,
    /// R index of each row in the source trace.
    pub row_peaks: Vec<usize>,
    pub origin_peaks: PeakList,
}

impl BeatMatrix {
    pub fn n_beats(&self) -> usize {
        self.beats.nrows()
    }

    pub fn width(&self) -> usize {
        self.beats.ncols()
    }

    /// Keeps the given rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> BeatMatrix {
        BeatMatrix {
            beats: self.beats.select(Axis(0), rows),
            row_peaks: rows.iter().map(|&r| self.row_peaks[r]).collect(),
            subject: self.subject.clone(),
            session: self.session,
            sample_rate_hz: self.sample_rate_hz,
            pre_samples: self.pre_samples,
            origin_peaks: self.origin_peaks.clone(),
        }
    }

    /// Per-sample mean beat.
    pub fn mean_beat(&self) -> Vec<f64> {
        self.beats
            .mean_axis(Axis(0))
            .map(|m| m.to_vec())
            .unwrap_or_default()
    }
}

/// Ricker (Mexican hat) wavelet sampled at integer offsets in `[-half, half]`.
pub fn ricker(sigma_samples: f64, half: usize) -> Vec<f64> {
    let norm = 2.0 / ((3.0 * sigma_samples).sqrt() * std::f64::consts::PI.powf(0.25));
    (0..=2 * half)
        .map(|i| {
            let t = (i as f64 - half as f64) / sigma_samples;
            norm * (1.0 - t * t) * (-0.5 * t * t).exp()
        })
        .collect()
}

/// Maps any integer index onto `0..n` by mirror reflection about the end samples.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// `|x ⋆ ricker|` with reflect padding; same length as the input.
pub fn accentuate_samples(x: &[f64], scale_s: f64, sample_rate_hz: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Segmentation("empty signal".into()));
    }
    let duration = x.len() as f64 / sample_rate_hz;
    if !(scale_s > 0.0) || scale_s >= duration {
        return Err(Error::Segmentation(format!(
            "wavelet scale {scale_s} s must be positive and below the trace duration {duration} s"
        )));
    }
    let sigma = scale_s * sample_rate_hz;
    let half = (5.0 * sigma).ceil() as usize;
    let kernel = ricker(sigma, half);
    let n = x.len();
    let h = half as isize;
    Ok((0..n as isize)
        .map(|i| {
            let acc: f64 = if i >= h && i + h < n as isize {
                let start = (i - h) as usize;
                x[start..start + kernel.len()]
                    .iter()
                    .zip(&kernel)
                    .map(|(a, b)| a * b)
                    .sum()
            } else {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * x[reflect_index(i + k as isize - h, n)])
                    .sum()
            };
            acc.abs()
        })
        .collect())
}

pub fn accentuate_qrs(trace: &EcgTrace, scale_s: f64) -> Result<Vec<f64>> {
    accentuate_samples(&trace.samples, scale_s, trace.sample_rate_hz)
}

/// Centred running mean over `window` samples, truncated at the edges.
pub fn running_mean(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    let before = window / 2;
    let after = window.saturating_sub(1) - before;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Detection threshold: `threshold_factor` times the running mean.
pub fn threshold_curve(accentuated: &[f64], config: &SegmentationConfig, sample_rate_hz: f64) -> Vec<f64> {
    let window = ((config.threshold_window_s * sample_rate_hz).round() as usize).max(1);
    running_mean(accentuated, window)
        .into_iter()
        .map(|m| m * config.threshold_factor)
        .collect()
}

pub fn detect_r_peaks(accentuated: &[f64], config: &SegmentationConfig, sample_rate_hz: f64) -> Result<PeakList> {
    if accentuated.is_empty() {
        return Err(Error::Segmentation("empty signal".into()));
    }
    let threshold = threshold_curve(accentuated, config, sample_rate_hz);
    let a = accentuated;
    let mut candidates: Vec<usize> = (1..a.len().saturating_sub(1))
        .filter(|&i| a[i] > a[i - 1] && a[i] >= a[i + 1] && a[i] > threshold[i])
        .collect();
    // Largest first; equal heights resolved towards the earlier sample.
    candidates.sort_by(|&i, &j| a[j].total_cmp(&a[i]).then(i.cmp(&j)));

    let gap = (config.refractory_s * sample_rate_hz).round() as usize;
    let mut accepted = std::collections::BTreeSet::new();
    for c in candidates {
        let lo = c.saturating_sub(gap.saturating_sub(1));
        let clash = gap > 0 && accepted.range(lo..c + gap).next().is_some();
        if !clash {
            accepted.insert(c);
        }
    }
    Ok(PeakList {
        indices: accepted.into_iter().collect(),
        trace_ref: None,
    })
}

/// Cuts `[R - pre, R - pre + W)` around every peak whose window fits in the trace.
pub fn extract_beats(trace: &EcgTrace, peaks: &PeakList, config: &SegmentationConfig) -> Result<BeatMatrix> {
    let fs = trace.sample_rate_hz;
    let pre = config.pre_samples(fs);
    let width = config.width_samples(fs);
    if width == 0 {
        return Err(Error::Segmentation("beat window is empty".into()));
    }
    let n = trace.samples.len();
    let usable: Vec<usize> = peaks
        .indices
        .iter()
        .copied()
        .filter(|&r| r >= pre && r - pre + width <= n)
        .collect();
    if usable.is_empty() {
        return Err(Error::Segmentation(format!(
            "no usable peaks in {} {} (of {} detected)",
            trace.subject,
            trace.session,
            peaks.len()
        )));
    }
    let mut beats = Array2::zeros((usable.len(), width));
    for (row, &r) in usable.iter().enumerate() {
        let start = r - pre;
        beats
            .row_mut(row)
            .iter_mut()
            .zip(&trace.samples[start..start + width])
            .for_each(|(dst, src)| *dst = *src);
    }
    Ok(BeatMatrix {
        beats,
        subject: trace.subject.clone(),
        session: trace.session,
        sample_rate_hz: fs,
        pre_samples: pre,
        row_peaks: usable,
        origin_peaks: peaks.clone(),
    })
}

/// Per-sample median across rows.
pub fn median_beat(beats: &Array2<f64>) -> Vec<f64> {
    beats
        .columns()
        .into_iter()
        .map(|col| {
            let mut v = col.to_vec();
            v.sort_by(f64::total_cmp);
            let m = v.len();
            if m % 2 == 1 {
                v[m / 2]
            } else {
                0.5 * (v[m / 2 - 1] + v[m / 2])
            }
        })
        .collect()
}

pub fn rejection_count(n: usize, fraction: f64) -> usize {
    // The epsilon keeps products such as 0.2 * 10 from rounding up past an integer.
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Drops the `ceil(fraction * N)` beats furthest (Euclidean) from the median
/// beat. Distance ties count the earlier row as closer. Survivors keep their order.
pub fn reject_outlier_beats(beats: &BeatMatrix, fraction: f64) -> Result<BeatMatrix> {
    let n = beats.n_beats();
    if n < 2 {
        return Err(Error::Segmentation(format!(
            "outlier rejection needs at least 2 beats, got {n}"
        )));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Segmentation(format!("reject fraction {fraction} outside [0, 1)")));
    }
    let drop = rejection_count(n, fraction);
    if drop == 0 {
        return Ok(beats.clone());
    }
    let median = median_beat(&beats.beats);
    let dist: Vec<f64> = beats
        .beats
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(&median)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| dist[j].total_cmp(&dist[i]).then(j.cmp(&i)));
    let mut keep = vec![true; n];
    for &i in &order[..drop] {
        keep[i] = false;
    }
    let rows: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    Ok(beats.select_rows(&rows))
}

/// Full segmentation of a conditioned trace.
#[derive(Debug, Clone)]
pub struct Segmented {
    pub peaks: PeakList,
    /// Beats after outlier rejection.
    pub beats: BeatMatrix,
    pub n_extracted: usize,
}

pub fn segment_trace(trace: &EcgTrace, config: &SegmentationConfig) -> Result<Segmented> {
    config.validate()?;
    let acc = accentuate_qrs(trace, config.wavelet_scale_s)?;
    let mut peaks = detect_r_peaks(&acc, config, trace.sample_rate_hz)?;
    peaks.trace_ref = Some(TraceRef::of(trace));
    let extracted = extract_beats(trace, &peaks, config)?;
    let n_extracted = extracted.n_beats();
    let beats = reject_outlier_beats(&extracted, config.reject_fraction)?;
    Ok(Segmented {
        peaks,
        beats,
        n_extracted,
    })
}
