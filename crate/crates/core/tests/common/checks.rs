//! Oracle, DSP and segmentation checks shared by the test suites. Each
//! returns the measured quantity so callers can assert or report it.

use ecg_auth_core::classifiers::{logistic, train_svm, LabeledSet, SvmParams};
use ecg_auth_core::dsp::{design_butterworth_bandpass, design_conditioning, design_notch, filtfilt, FilterConfig};
use ecg_auth_core::evaluation::compute_eer;
use ecg_auth_core::features::fit_matrix;
use ecg_auth_core::segmentation::{accentuate_qrs, detect_r_peaks, SegmentationConfig};
use ecg_auth_core::synth::{generate_corpus, snr_db, SynthConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Largest `|eer - oracle| * min(n_g, n_i)` over `n_sets` random score
/// sets; the tolerance is met when this is at most 1.
pub fn eer_worst_scaled_gap(n_sets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_sets {
        let ng = rng.gen_range(1..80);
        let ni = rng.gen_range(1..80);
        let shift = rng.gen_range(-1.0..2.0);
        let genuine: Vec<f64> = (0..ng).map(|_| rng.gen_range(0.0..1.0) + shift).collect();
        let impostor: Vec<f64> = (0..ni).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ours = compute_eer(&genuine, &impostor).expect("valid scores").eer;
        let oracle = brute_force_eer(&genuine, &impostor);
        worst = worst.max((ours - oracle).abs() * ng.min(ni) as f64);
    }
    worst
}

/// Largest `|W_svm - W_oracle|` over random six-point problems. Both the
/// solver's reported objective and the objective recomputed from its
/// support vectors are compared.
pub fn svm_worst_dual_gap(n_sets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_sets {
        let points: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let n_pos = rng.gen_range(1..6);
        let labels: Vec<bool> = (0..6).map(|i| i < n_pos).collect();
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let c = [0.1, 1.0, 10.0][rng.gen_range(0..3)];
        let gamma = [0.1, 0.5, 2.0][rng.gen_range(0..3)];
        let x = Array2::from_shape_fn((6, 2), |(i, j)| points[i][j]);
        let data = LabeledSet::new(x, labels).expect("two classes");
        let model = train_svm(&data, &SvmParams::new(c, gamma)).expect("converges");
        let sv: Vec<Vec<f64>> = model.support_vectors.rows().into_iter().map(|r| r.to_vec()).collect();
        let sv_y: Vec<f64> = model.dual_coef.iter().map(|a| a.signum()).collect();
        let sv_alpha: Vec<f64> = model.dual_coef.iter().map(|a| a.abs()).collect();
        let recomputed = svm_dual_value(&sv, &sv_y, gamma, &sv_alpha);
        let oracle = svm_dual_oracle(&points, &y, gamma, &balanced_upper(c, &y));
        worst = worst
            .max((model.dual_objective - oracle).abs())
            .max((recomputed - oracle).abs());
    }
    worst
}

/// Largest absolute eigenvalue difference between the fitted PCA model and
/// the nalgebra oracle over random full-rank matrices.
pub fn pca_worst_eigen_gap(n_sets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_sets {
        let d = rng.gen_range(2..10);
        let n = rng.gen_range(d + 2..60);
        let mix = Array2::from_shape_fn((d, d), |_| rng.gen_range(-1.0..1.0));
        let raw = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        let x = raw.dot(&mix) * rng.gen_range(0.1..50.0) + rng.gen_range(-5.0..5.0);
        let fit = fit_matrix(&x, d).expect("full rank");
        let oracle = pca_eigenvalues_oracle(&x);
        for (ours, theirs) in fit.model.explained_variance.iter().zip(&oracle) {
            worst = worst.max((ours - theirs.max(0.0)).abs());
        }
    }
    worst
}

/// Largest `|g - fd| / max(|fd|, 1e-3)` between the analytic logistic
/// gradient and central differences of an independent loss.
pub fn logistic_worst_relative_gradient_error(n_sets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_sets {
        let n = rng.gen_range(4..40);
        let d = rng.gen_range(1..8);
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let weights = logistic::balanced_weights(&labels);
        let l2 = [0.0, 0.01, 1.0][rng.gen_range(0..3)];
        let theta: Vec<f64> = (0..=d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let (_, grad) = logistic::loss_and_gradient(&x, &labels, &weights, l2, &theta);
        let fd = finite_difference(|t| logistic_loss(&x, &labels, &weights, l2, t), &theta, 1e-5);
        for (g, f) in grad.iter().zip(&fd) {
            worst = worst.max((g - f).abs() / f.abs().max(1e-3));
        }
    }
    worst
}

fn sine(freq_hz: f64, fs: f64, seconds: f64) -> Vec<f64> {
    let n = (fs * seconds) as usize;
    (0..n).map(|i| (std::f64::consts::TAU * freq_hz * i as f64 / fs).sin()).collect()
}

/// Peak absolute value over the middle half of `x`.
fn middle_amplitude(x: &[f64]) -> f64 {
    x[x.len() / 4..3 * x.len() / 4].iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub const FS: f64 = 300.0;

pub struct DspMeasurements {
    /// Magnitude response of the band-pass stage at 0 Hz.
    pub bandpass_dc_gain: f64,
    /// Steady-state amplitude of the conditioned output for a constant input.
    pub dc_residual: f64,
    /// Steady-state amplitude of a notched unit 50 Hz sine.
    pub notch_residual: f64,
    /// Steady-state amplitude of a conditioned unit 10 Hz sine.
    pub passband_gain: f64,
    /// Largest `|y(n) - y(N-1-n)|` for a time-symmetric input.
    pub symmetry_error: f64,
}

pub fn measure_dsp() -> DspMeasurements {
    let config = FilterConfig::default();
    let bandpass = design_butterworth_bandpass(&config, FS).expect("valid design");
    let notch = design_notch(config.mains_hz, config.mains_q, FS).expect("valid design");
    let full = design_conditioning(&config, FS).expect("valid design");

    let constant = vec![1.0; 20 * FS as usize];
    let notched = filtfilt(&sine(50.0, FS, 20.0), &notch).expect("long enough");
    let passed = filtfilt(&sine(10.0, FS, 20.0), &full).expect("long enough");

    // A noisy bump mirrored about the centre.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let half: Vec<f64> = (0..3000).map(|i| (-(i as f64 / 400.0)).exp() + rng.gen_range(-0.1..0.1)).collect();
    let symmetric: Vec<f64> = half.iter().rev().chain(half.iter()).copied().collect();
    let out = filtfilt(&symmetric, &full).expect("long enough");
    let n = out.len();
    let symmetry_error = (0..n).map(|i| (out[i] - out[n - 1 - i]).abs()).fold(0.0, f64::max);

    DspMeasurements {
        bandpass_dc_gain: bandpass.dc_gain().abs(),
        dc_residual: middle_amplitude(&filtfilt(&constant, &full).expect("long enough")),
        notch_residual: middle_amplitude(&notched),
        passband_gain: middle_amplitude(&passed),
        symmetry_error,
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DetectionStats {
    pub true_positives: usize,
    pub detected: usize,
    pub truth: usize,
    pub worst_timing: usize,
    pub worst_precision: f64,
    pub worst_recall: f64,
    pub min_snr_db: f64,
    pub traces: usize,
}

impl DetectionStats {
    pub fn precision(&self) -> f64 {
        self.true_positives as f64 / self.detected as f64
    }

    pub fn recall(&self) -> f64 {
        self.true_positives as f64 / self.truth as f64
    }
}

/// Peaks closer than this to either end of a recording are left out of the
/// comparison: the wavelet response there is built from reflected samples.
pub const EDGE_GUARD_S: f64 = 0.1;
/// A detection further than this from every true R peak is a false positive.
pub const MATCH_WINDOW_S: f64 = 0.05;

/// Runs conditioning and R-peak detection with default settings on every
/// recording of synthetic corpora with the given seeds and compares the
/// detections with the generator's ground truth.
pub fn detection_stats(seeds: &[u64], base: &SynthConfig) -> DetectionStats {
    let seg = SegmentationConfig::default();
    let mut stats = DetectionStats {
        worst_precision: 1.0,
        worst_recall: 1.0,
        min_snr_db: f64::INFINITY,
        ..Default::default()
    };
    for &seed in seeds {
        let synthetic = generate_corpus(&SynthConfig { seed, ..base.clone() }).expect("valid config");
        let fs = base.sample_rate_hz;
        let cascade = design_conditioning(&FilterConfig::default(), fs).expect("valid design");
        let guard = (EDGE_GUARD_S * fs) as usize;
        for trace in &synthetic.corpus.traces {
            let key = (trace.subject.clone(), trace.session, trace.recording_index);
            let n = trace.len();
            let interior = |i: &usize| *i >= guard && *i + guard < n;
            let truth: Vec<usize> = synthetic.r_peaks[&key].iter().copied().filter(interior).collect();
            let conditioned = ecg_auth_core::dsp::filter_zero_phase(trace, &cascade).expect("long enough");
            let acc = accentuate_qrs(&conditioned, seg.wavelet_scale_s).expect("valid scale");
            let detected: Vec<usize> = detect_r_peaks(&acc, &seg, fs)
                .expect("non-empty")
                .indices
                .into_iter()
                .filter(interior)
                .collect();
            let pairs = match_peaks(&truth, &detected, (MATCH_WINDOW_S * fs) as usize);
            stats.true_positives += pairs.len();
            stats.detected += detected.len();
            stats.truth += truth.len();
            stats.traces += 1;
            stats.worst_timing = pairs.iter().map(|(t, d)| t.abs_diff(*d)).fold(stats.worst_timing, usize::max);
            stats.worst_precision = stats.worst_precision.min(pairs.len() as f64 / detected.len().max(1) as f64);
            stats.worst_recall = stats.worst_recall.min(pairs.len() as f64 / truth.len().max(1) as f64);
            stats.min_snr_db = stats.min_snr_db.min(snr_db(&synthetic.clean[&key], &trace.samples));
        }
    }
    stats
}
