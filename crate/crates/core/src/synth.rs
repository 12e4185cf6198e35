//! Synthetic ECG corpora with known R-peak positions.
//!
//! Each beat is a sum of five Gaussians (P, Q, R, S, T) placed relative to
//! the R time. Subjects differ in their wave parameters and RR statistics;
//! session S2 perturbs every wave parameter multiplicatively to model
//! morphology drift between sessions.
//!
//! All randomness comes from one ChaCha generator keyed by the corpus seed,
//! split into independent streams per subject, session, recording and
//! purpose so the output does not depend on scheduling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::dataset::{self, Corpus, CorpusManifest, EcgTrace, SessionId, SubjectId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    /// mV
    pub amplitude: f64,
    /// Seconds relative to the R time.
    pub center_s: f64,
    /// Gaussian standard deviation in seconds.
    pub width_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTemplate {
    /// P, Q, R, S, T in that order.
    pub waves: [Wave; 5],
    pub mean_rr_s: f64,
    pub rr_jitter_s: f64,
}

pub const R_WAVE: usize = 2;
pub const DEFAULT_BEAT_VARIABILITY: f64 = 0.05;
/// Beat-to-beat factors are clipped to this many standard deviations.
const BEAT_CLIP: f64 = 3.0;
pub const MIN_RR_S: f64 = 0.4;

/// Parameter ranges for [`sample_subject`]: (amplitude, center, width) per wave.
const WAVE_RANGES: [[(f64, f64); 3]; 5] = [
    [(0.12, 0.21), (-0.20, -0.16), (0.019, 0.026)],
    [(-0.20, -0.10), (-0.040, -0.030), (0.0075, 0.0105)],
    [(1.0, 1.4), (0.0, 0.0), (0.0095, 0.0125)],
    [(-0.36, -0.17), (0.026, 0.039), (0.008, 0.012)],
    [(0.22, 0.38), (0.23, 0.29), (0.038, 0.052)],
];
const RR_RANGE: (f64, f64) = (0.7, 1.1);
const JITTER_RANGE: (f64, f64) = (0.02, 0.05);

impl SubjectTemplate {
    pub fn is_valid(&self) -> bool {
        let r = self.waves[R_WAVE].amplitude;
        self.waves
            .iter()
            .enumerate()
            .all(|(i, w)| w.width_s > 0.0 && (i == R_WAVE || w.amplitude.abs() < r))
            && (0.5..=1.5).contains(&self.mean_rr_s)
            && self.rr_jitter_s >= 0.0
    }

    /// Applies `(1 + delta * u)` to every wave parameter.
    pub fn drifted(&self, delta: f64, factors: &[f64; 15]) -> SubjectTemplate {
        let mut out = self.clone();
        for (i, w) in out.waves.iter_mut().enumerate() {
            w.amplitude *= 1.0 + delta * factors[3 * i];
            w.center_s *= 1.0 + delta * factors[3 * i + 1];
            w.width_s *= 1.0 + delta * factors[3 * i + 2];
        }
        out
    }

    /// Noise-free single beat evaluated at `t` seconds from the R time.
    pub fn beat_value(&self, t: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| {
                let d = (t - w.center_s) / w.width_s;
                w.amplitude * (-0.5 * d * d).exp()
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub baseline_amp_mv: f64,
    pub baseline_hz: f64,
    pub mains_amp_mv: f64,
    pub mains_hz: f64,
    pub white_std_mv: f64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            baseline_amp_mv: 0.0,
            baseline_hz: 0.3,
            mains_amp_mv: 0.0,
            mains_hz: 50.0,
            white_std_mv: 0.0,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            baseline_amp_mv: 0.05,
            baseline_hz: 0.3,
            mains_amp_mv: 0.02,
            mains_hz: 50.0,
            white_std_mv: 0.015,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Total duration per session, split evenly across recordings.
    pub duration_s: f64,
    pub recordings_per_session: u32,
    pub sample_rate_hz: f64,
    pub noise: NoiseConfig,
    pub session_drift: f64,
    /// Relative standard deviation of beat-to-beat changes in every wave's
    /// amplitude and width; 0 renders identical beats.
    pub beat_variability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 10,
            duration_s: 240.0,
            recordings_per_session: 2,
            sample_rate_hz: 300.0,
            noise: NoiseConfig::default(),
            session_drift: 0.15,
            beat_variability: DEFAULT_BEAT_VARIABILITY,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Stream {
    Template = 0,
    Drift = 1,
    Rhythm = 2,
    Noise = 3,
    Beat = 4,
}

fn stream_rng(seed: u64, subject: usize, purpose: Stream, session: SessionId, recording: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let session_bits = match session {
        SessionId::S1 => 0u64,
        SessionId::S2 => 1,
    };
    rng.set_stream(
        ((subject as u64) << 32) | ((purpose as u64) << 24) | (session_bits << 16) | recording as u64,
    );
    rng
}

/// Generator stream used to draw subject `index`'s template.
pub fn subject_rng(seed: u64, index: usize) -> ChaCha8Rng {
    stream_rng(seed, index, Stream::Template, SessionId::S1, 0)
}

pub fn subject_id(index: usize) -> SubjectId {
    SubjectId::new(format!("s{index:03}")).expect("generated ids are valid")
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

pub fn sample_subject(rng: &mut impl Rng) -> SubjectTemplate {
    let mut waves = [Wave {
        amplitude: 0.0,
        center_s: 0.0,
        width_s: 0.0,
    }; 5];
    for (w, ranges) in waves.iter_mut().zip(WAVE_RANGES.iter()) {
        w.amplitude = uniform(rng, ranges[0]);
        w.center_s = uniform(rng, ranges[1]);
        w.width_s = uniform(rng, ranges[2]);
    }
    SubjectTemplate {
        waves,
        mean_rr_s: uniform(rng, RR_RANGE),
        rr_jitter_s: uniform(rng, JITTER_RANGE),
    }
}

/// Per-parameter drift factors `u` in [-1, 1], fixed per subject.
pub fn drift_factors(seed: u64, subject: usize) -> [f64; 15] {
    let mut rng = stream_rng(seed, subject, Stream::Drift, SessionId::S1, 0);
    let mut u = [0.0; 15];
    for v in &mut u {
        *v = rng.gen_range(-1.0..=1.0);
    }
    u
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTrace {
    pub trace: EcgTrace,
    /// Noise-free signal.
    pub clean: Vec<f64>,
    /// Ground-truth R sample indices.
    pub r_peaks: Vec<usize>,
}

/// Renders one recording of subject `subject_index`. `template` is the
/// subject's S1 morphology; S2 drift is applied here.
pub fn render_trace(
    template: &SubjectTemplate,
    config: &SynthConfig,
    subject_index: usize,
    session: SessionId,
    recording: u32,
) -> RenderedTrace {
    let fs = config.sample_rate_hz;
    let per_recording = config.duration_s / config.recordings_per_session.max(1) as f64;
    let n = (per_recording * fs).round() as usize;
    let morph = match session {
        SessionId::S1 => template.clone(),
        SessionId::S2 => template.drifted(config.session_drift, &drift_factors(config.seed, subject_index)),
    };

    let mut rhythm = stream_rng(config.seed, subject_index, Stream::Rhythm, session, recording);
    let rr = Normal::new(morph.mean_rr_s, morph.rr_jitter_s.max(0.0)).expect("finite rr params");
    let duration = n as f64 / fs;
    // Start one beat before zero so the recording opens mid-rhythm.
    let mut t = -rhythm.gen_range(0.0..morph.mean_rr_s);
    let mut r_times = Vec::new();
    while t < duration + 1.0 {
        r_times.push(t);
        t += rr.sample(&mut rhythm).max(MIN_RR_S);
    }

    let mut clean = vec![0.0; n];
    let reach = 0.6;
    let mut beat_rng = stream_rng(config.seed, subject_index, Stream::Beat, session, recording);
    let mut beat = morph.clone();
    for &rt in &r_times {
        for (w, base) in beat.waves.iter_mut().zip(&morph.waves) {
            let za: f64 = beat_rng.sample(StandardNormal);
            let zw: f64 = beat_rng.sample(StandardNormal);
            let v = config.beat_variability;
            w.amplitude = base.amplitude * (1.0 + v * za.clamp(-BEAT_CLIP, BEAT_CLIP));
            w.width_s = base.width_s * (1.0 + v * zw.clamp(-BEAT_CLIP, BEAT_CLIP));
        }
        let lo = (((rt - reach) * fs).floor().max(0.0)) as usize;
        let hi = ((((rt + reach) * fs).ceil()).max(0.0) as usize).min(n);
        for (i, v) in clean.iter_mut().enumerate().take(hi).skip(lo) {
            *v += beat.beat_value(i as f64 / fs - rt);
        }
    }
    let r_peaks: Vec<usize> = r_times
        .iter()
        .filter(|&&rt| rt >= 0.0)
        .map(|&rt| (rt * fs).round() as usize)
        .filter(|&i| i < n)
        .collect();

    let noise = config.noise;
    let mut samples = clean.clone();
    let mut nrng = stream_rng(config.seed, subject_index, Stream::Noise, session, recording);
    let base_phase = nrng.gen_range(0.0..std::f64::consts::TAU);
    let mains_phase = nrng.gen_range(0.0..std::f64::consts::TAU);
    let white = Normal::new(0.0, noise.white_std_mv.max(0.0)).expect("finite noise std");
    for (i, v) in samples.iter_mut().enumerate() {
        let ts = i as f64 / fs;
        let mut e = 0.0;
        if noise.baseline_amp_mv != 0.0 {
            e += noise.baseline_amp_mv * (std::f64::consts::TAU * noise.baseline_hz * ts + base_phase).sin();
        }
        if noise.mains_amp_mv != 0.0 {
            e += noise.mains_amp_mv * (std::f64::consts::TAU * noise.mains_hz * ts + mains_phase).sin();
        }
        if noise.white_std_mv > 0.0 {
            e += white.sample(&mut nrng);
        }
        *v += e;
    }

    RenderedTrace {
        trace: EcgTrace {
            subject: subject_id(subject_index),
            session,
            recording_index: recording,
            sample_rate_hz: fs,
            samples,
        },
        clean,
        r_peaks,
    }
}

/// Signal-to-noise ratio in dB of `noisy` against its noise-free version.
pub fn snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let mean = clean.iter().sum::<f64>() / clean.len() as f64;
    let signal: f64 = clean.iter().map(|c| (c - mean) * (c - mean)).sum();
    let noise: f64 = clean.iter().zip(noisy).map(|(c, x)| (x - c) * (x - c)).sum();
    10.0 * (signal / noise).log10()
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub templates: Vec<SubjectTemplate>,
    /// Ground-truth R indices per (subject, session, recording).
    pub r_peaks: BTreeMap<(SubjectId, SessionId, u32), Vec<usize>>,
    pub clean: BTreeMap<(SubjectId, SessionId, u32), Vec<f64>>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_subjects == 0 || self.recordings_per_session == 0 {
            return bad("need at least one subject and one recording per session".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate must be positive, got {}", self.sample_rate_hz));
        }
        if !(0.0..1.0).contains(&self.session_drift) {
            return bad(format!("session drift must lie in [0, 1), got {}", self.session_drift));
        }
        // Clipped factors must stay positive.
        if !(0.0..1.0 / BEAT_CLIP).contains(&self.beat_variability) {
            return bad(format!(
                "beat variability must lie in [0, {:.3}), got {}",
                1.0 / BEAT_CLIP,
                self.beat_variability
            ));
        }
        Ok(())
    }
}

pub fn generate_corpus(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let per_subject: Vec<(SubjectTemplate, Vec<RenderedTrace>)> = (0..config.n_subjects)
        .into_par_iter()
        .map(|s| {
            let template = sample_subject(&mut subject_rng(config.seed, s));
            let mut rendered = Vec::new();
            for session in SessionId::ALL {
                for rec in 0..config.recordings_per_session {
                    rendered.push(render_trace(&template, config, s, session, rec));
                }
            }
            (template, rendered)
        })
        .collect();

    let mut templates = Vec::new();
    let mut traces = Vec::new();
    let mut r_peaks = BTreeMap::new();
    let mut clean = BTreeMap::new();
    for (template, rendered) in per_subject {
        templates.push(template);
        for r in rendered {
            let key = (r.trace.subject.clone(), r.trace.session, r.trace.recording_index);
            r_peaks.insert(key.clone(), r.r_peaks);
            clean.insert(key, r.clean);
            traces.push(r.trace);
        }
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::from_traces(traces)?,
        templates,
        r_peaks,
        clean,
    })
}

pub const PEAKS_EXTENSION: &str = "peaks";

/// Writes the corpus plus one `.peaks` ground-truth sidecar per trace.
pub fn emit_corpus(config: &SynthConfig, out: impl AsRef<Path>) -> Result<CorpusManifest> {
    let out = out.as_ref();
    let synthetic = generate_corpus(config)?;
    dataset::save_corpus(&synthetic.corpus, out)?;
    for entry in &synthetic.corpus.manifest.traces {
        let key = (entry.subject.clone(), entry.session, entry.recording);
        let peaks = &synthetic.r_peaks[&key];
        let body: String = peaks.iter().map(|p| format!("{p}\n")).collect();
        dataset::write_file(&out.join(entry.path.with_extension(PEAKS_EXTENSION)), body.as_bytes())?;
    }
    Ok(synthetic.corpus.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn quiet(n_subjects: usize, duration_s: f64) -> SynthConfig {
        SynthConfig {
            n_subjects,
            duration_s,
            recordings_per_session: 1,
            noise: NoiseConfig::none(),
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_template() {
        let a = sample_subject(&mut subject_rng(7, 3));
        let b = sample_subject(&mut subject_rng(7, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_seeds_give_distinct_templates() {
        let mut seen = HashSet::new();
        for seed in 0..1000u64 {
            let t = sample_subject(&mut subject_rng(seed, 0));
            let key: Vec<u64> = t
                .waves
                .iter()
                .flat_map(|w| [w.amplitude, w.center_s, w.width_s])
                .chain([t.mean_rr_s, t.rr_jitter_s])
                .map(f64::to_bits)
                .collect();
            assert!(seen.insert(key), "collision at seed {seed}");
        }
    }

    #[test]
    fn sampled_templates_are_valid() {
        for i in 0..500 {
            let t = sample_subject(&mut subject_rng(11, i));
            assert!(t.is_valid(), "{t:?}");
            assert!(t.drifted(0.15, &drift_factors(11, i)).is_valid());
        }
    }

    #[test]
    fn zero_drift_keeps_sessions_identical_in_shape() {
        let t = sample_subject(&mut subject_rng(1, 0));
        assert_eq!(t.drifted(0.0, &drift_factors(1, 0)), t);
        let cfg = SynthConfig {
            session_drift: 0.0,
            ..quiet(1, 10.0)
        };
        let s2 = render_trace(&t, &cfg, 0, SessionId::S2, 0);
        // With zero drift the S2 rendering is the S1 template at the S2 beat times.
        let fs = cfg.sample_rate_hz;
        let p = s2.r_peaks[3];
        for i in p - 20..p + 20 {
            let nearest = s2.r_peaks.iter().min_by_key(|&&r| r.abs_diff(i)).unwrap();
            let approx = t.beat_value((i as f64 - *nearest as f64) / fs);
            assert!((s2.clean[i] - approx).abs() < 0.25);
        }
    }

    #[test]
    fn zero_noise_equals_clean_rendering() {
        let t = sample_subject(&mut subject_rng(2, 0));
        let r = render_trace(&t, &quiet(1, 20.0), 0, SessionId::S1, 0);
        assert_eq!(r.trace.samples, r.clean);
    }

    #[test]
    fn sixty_seconds_at_one_second_rr() {
        let mut t = sample_subject(&mut subject_rng(3, 0));
        t.mean_rr_s = 1.0;
        t.rr_jitter_s = 0.03;
        let r = render_trace(&t, &quiet(1, 60.0), 0, SessionId::S1, 0);
        assert!((59..=61).contains(&r.r_peaks.len()), "{}", r.r_peaks.len());
    }

    #[test]
    fn ground_truth_matches_clean_maxima() {
        let t = sample_subject(&mut subject_rng(4, 0));
        let r = render_trace(&t, &quiet(1, 30.0), 0, SessionId::S1, 0);
        for &p in &r.r_peaks {
            let lo = p.saturating_sub(10);
            let hi = (p + 10).min(r.clean.len() - 1);
            let argmax = (lo..=hi).max_by(|&a, &b| r.clean[a].total_cmp(&r.clean[b])).unwrap();
            assert!(argmax.abs_diff(p) <= 1, "peak {p} max at {argmax}");
        }
    }

    #[test]
    fn default_noise_snr_is_at_least_10_db() {
        let synthetic = generate_corpus(&SynthConfig {
            n_subjects: 4,
            duration_s: 60.0,
            ..Default::default()
        })
        .unwrap();
        for t in &synthetic.corpus.traces {
            let key = (t.subject.clone(), t.session, t.recording_index);
            let snr = snr_db(&synthetic.clean[&key], &t.samples);
            assert!(snr >= 10.0, "{key:?}: {snr} dB");
        }
    }

    #[test]
    fn rejects_out_of_range_settings() {
        for bad in [
            SynthConfig { n_subjects: 0, ..quiet(1, 10.0) },
            SynthConfig { session_drift: 1.0, ..quiet(1, 10.0) },
            SynthConfig { beat_variability: 0.4, ..quiet(1, 10.0) },
            SynthConfig { duration_s: -1.0, ..quiet(1, 10.0) },
        ] {
            assert!(matches!(generate_corpus(&bad), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn emitted_corpus_loads_and_is_reproducible() {
        let cfg = SynthConfig {
            n_subjects: 10,
            duration_s: 8.0,
            ..Default::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let manifest = emit_corpus(&cfg, a.path()).unwrap();
        emit_corpus(&cfg, b.path()).unwrap();
        let groups: HashSet<_> = manifest
            .traces
            .iter()
            .map(|t| (t.subject.clone(), t.session))
            .collect();
        assert_eq!(groups.len(), 20);

        let loaded = dataset::load_corpus(a.path()).unwrap();
        assert_eq!(loaded.manifest, manifest);
        assert_eq!(loaded, generate_corpus(&cfg).unwrap().corpus);

        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let x = std::fs::read(a.path().join(&name)).unwrap();
            let y = std::fs::read(b.path().join(&name)).unwrap();
            assert_eq!(x, y, "{name:?} differs");
        }
    }
}
