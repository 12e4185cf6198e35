//! Signal conditioning: mains notch and Butterworth band-pass, both as
//! cascades of second-order sections, applied forward and backward so the
//! net phase is zero.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::dataset::EcgTrace;
use crate::error::{Error, Result};

/// One second-order section, normalised so that `a0 == 1`.
///
/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Complex response at normalised angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> (f64, f64) {
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (self.b0 + self.b1 * c1 + self.b2 * c2, self.b1 * s1 + self.b2 * s2);
        let den = (1.0 + self.a1 * c1 + self.a2 * c2, self.a1 * s1 + self.a2 * s2);
        complex_div(num, den)
    }

    /// Gain at z = 1, evaluated without trigonometry so that exact zeros stay exact.
    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Largest pole modulus.
    pub fn pole_radius(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            self.a2.sqrt()
        } else {
            let sq = disc.sqrt();
            ((-self.a1 + sq) / 2.0).abs().max(((-self.a1 - sq) / 2.0).abs())
        }
    }

    /// Jury criterion for a monic quadratic denominator.
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Steady-state transposed direct-form II state for a constant input `level`.
    fn steady_state(&self, level: f64) -> [f64; 2] {
        let y = self.dc_gain() * level;
        let z2 = self.b2 * level - self.a2 * y;
        let z1 = self.b1 * level - self.a1 * y + z2;
        [z1, z2]
    }

    fn normalized(b: [f64; 3], a: [f64; 3]) -> Biquad {
        Biquad {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: b[2] / a[0],
            a1: a[1] / a[0],
            a2: a[2] / a[0],
        }
    }
}

fn complex_div(n: (f64, f64), d: (f64, f64)) -> (f64, f64) {
    let den = d.0 * d.0 + d.1 * d.1;
    ((n.0 * d.0 + n.1 * d.1) / den, (n.1 * d.0 - n.0 * d.1) / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub description: String,
}

impl BiquadCascade {
    /// Runs `other` after `self`.
    pub fn chain(mut self, other: BiquadCascade) -> BiquadCascade {
        self.sections.extend(other.sections);
        self.description = format!("{}; {}", self.description, other.description);
        self
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    /// Magnitude response at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        if freq_hz == 0.0 {
            return self.dc_gain().abs();
        }
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(w);
                re.hypot(im)
            })
            .product()
    }

    pub fn dc_gain(&self) -> f64 {
        self.sections.iter().map(Biquad::dc_gain).product()
    }

    /// Samples for the slowest pole to decay by a factor of e.
    pub fn transient_len(&self) -> usize {
        let r = self
            .sections
            .iter()
            .map(Biquad::pole_radius)
            .fold(0.0_f64, f64::max);
        if r <= 0.0 {
            return 1;
        }
        (-1.0 / r.ln()).ceil().max(1.0) as usize
    }

    /// Causal filtering from rest.
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut state = vec![[0.0; 2]; self.sections.len()];
        run_cascade(&self.sections, &mut state, &mut x);
        x
    }

    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut x = vec![0.0; len];
        if len > 0 {
            x[0] = 1.0;
        }
        self.apply(&x)
    }

    /// Human-readable coefficient dump.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n# b0\tb1\tb2\ta1\ta2\n", self.description);
        for s in &self.sections {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", s.b0, s.b1, s.b2, s.a1, s.a2);
        }
        out
    }
}

fn run_cascade(sections: &[Biquad], state: &mut [[f64; 2]], x: &mut [f64]) {
    for (s, z) in sections.iter().zip(state.iter_mut()) {
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b0 * input + z[0];
            z[0] = s.b1 * input - s.a1 * y + z[1];
            z[1] = s.b2 * input - s.a2 * y;
            *v = y;
        }
    }
}

/// Causal pass whose initial state is the steady state for a constant input
/// equal to `x[0]`, so a constant signal produces no start-up transient.
fn run_cascade_steady(sections: &[Biquad], x: &mut [f64]) {
    let Some(&first) = x.first() else { return };
    let mut level = first;
    let mut state: Vec<[f64; 2]> = Vec::with_capacity(sections.len());
    for s in sections {
        state.push(s.steady_state(level));
        level *= s.dc_gain();
    }
    run_cascade(sections, &mut state, x);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub mains_hz: f64,
    pub mains_q: f64,
    pub hp_cutoff_hz: f64,
    pub lp_cutoff_hz: f64,
    /// Order of each band edge; must be even so each edge is a whole number of biquads.
    pub order: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            mains_hz: 50.0,
            mains_q: 30.0,
            hp_cutoff_hz: 0.5,
            lp_cutoff_hz: 40.0,
            order: 4,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        if !(self.hp_cutoff_hz > 0.0 && self.hp_cutoff_hz < self.lp_cutoff_hz) {
            return Err(Error::FilterDesign(format!(
                "need 0 < hp ({}) < lp ({})",
                self.hp_cutoff_hz, self.lp_cutoff_hz
            )));
        }
        if self.lp_cutoff_hz >= nyquist {
            return Err(Error::FilterDesign(format!(
                "low-pass cutoff {} Hz at or above Nyquist {nyquist} Hz",
                self.lp_cutoff_hz
            )));
        }
        if !(self.mains_hz > 0.0 && self.mains_hz < nyquist) {
            return Err(Error::FilterDesign(format!(
                "mains frequency {} Hz outside (0, {nyquist})",
                self.mains_hz
            )));
        }
        if self.order == 0 || self.order % 2 != 0 {
            return Err(Error::FilterDesign(format!(
                "order must be even and positive, got {}",
                self.order
            )));
        }
        if !(self.mains_q > 0.0) {
            return Err(Error::FilterDesign("notch Q must be positive".into()));
        }
        Ok(())
    }
}

/// Q of each biquad in an even-order Butterworth prototype.
fn butterworth_qs(order: usize) -> impl Iterator<Item = f64> {
    (0..order / 2).map(move |k| 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).sin()))
}

#[derive(Clone, Copy)]
enum Edge {
    Low,
    High,
}

/// Bilinear-transform Butterworth section, pre-warped at the cutoff.
fn butterworth_section(edge: Edge, cutoff_hz: f64, q: f64, sample_rate_hz: f64) -> Biquad {
    let w0 = 2.0 * PI * cutoff_hz / sample_rate_hz;
    let (sin, cos) = w0.sin_cos();
    let alpha = sin / (2.0 * q);
    let a = [1.0 + alpha, -2.0 * cos, 1.0 - alpha];
    let mut s = match edge {
        Edge::Low => {
            let b = (1.0 - cos) / 2.0;
            Biquad::normalized([b, 2.0 * b, b], a)
        }
        Edge::High => {
            let b = (1.0 + cos) / 2.0;
            Biquad::normalized([b, -2.0 * b, b], a)
        }
    };
    // Keep the numerator zero at z = +1 (high) or z = -1 (low) exact after normalisation.
    match edge {
        Edge::Low => s.b1 = 2.0 * s.b0,
        Edge::High => s.b1 = -2.0 * s.b0,
    }
    s.b2 = s.b0;
    s
}

/// Band-pass as a high-pass edge at `hp_cutoff_hz` followed by a low-pass
/// edge at `lp_cutoff_hz`, each a Butterworth filter of `config.order`.
pub fn design_butterworth_bandpass(config: &FilterConfig, sample_rate_hz: f64) -> Result<BiquadCascade> {
    let nyquist = sample_rate_hz / 2.0;
    if !(config.hp_cutoff_hz > 0.0 && config.hp_cutoff_hz < config.lp_cutoff_hz) {
        return Err(Error::FilterDesign(format!(
            "need 0 < hp ({}) < lp ({})",
            config.hp_cutoff_hz, config.lp_cutoff_hz
        )));
    }
    if config.lp_cutoff_hz >= nyquist {
        return Err(Error::FilterDesign(format!(
            "cutoff {} Hz at or above Nyquist {nyquist} Hz",
            config.lp_cutoff_hz
        )));
    }
    if config.order == 0 || config.order % 2 != 0 {
        return Err(Error::FilterDesign(format!(
            "order must be even and positive, got {}",
            config.order
        )));
    }
    let mut sections = Vec::with_capacity(config.order);
    for q in butterworth_qs(config.order) {
        sections.push(butterworth_section(Edge::High, config.hp_cutoff_hz, q, sample_rate_hz));
    }
    for q in butterworth_qs(config.order) {
        sections.push(butterworth_section(Edge::Low, config.lp_cutoff_hz, q, sample_rate_hz));
    }
    let cascade = BiquadCascade {
        sections,
        description: format!(
            "butterworth band-pass {}-{} Hz order {} at {} Hz",
            config.hp_cutoff_hz, config.lp_cutoff_hz, config.order, sample_rate_hz
        ),
    };
    if !cascade.is_stable() {
        return Err(Error::FilterDesign(format!(
            "unstable design: {}",
            cascade.description
        )));
    }
    Ok(cascade)
}

/// Second-order notch with -3 dB bandwidth `mains_hz / q`.
pub fn design_notch(mains_hz: f64, q: f64, sample_rate_hz: f64) -> Result<BiquadCascade> {
    let nyquist = sample_rate_hz / 2.0;
    if !(mains_hz > 0.0 && mains_hz < nyquist) {
        return Err(Error::FilterDesign(format!(
            "notch center {mains_hz} Hz outside (0, {nyquist})"
        )));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::FilterDesign(format!("notch Q must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * mains_hz / sample_rate_hz;
    let (sin, cos) = w0.sin_cos();
    let alpha = sin / (2.0 * q);
    let section = Biquad::normalized([1.0, -2.0 * cos, 1.0], [1.0 + alpha, -2.0 * cos, 1.0 - alpha]);
    let cascade = BiquadCascade {
        sections: vec![section],
        description: format!("notch {mains_hz} Hz q {q} at {sample_rate_hz} Hz"),
    };
    if !cascade.is_stable() {
        return Err(Error::FilterDesign(format!("unstable design: {}", cascade.description)));
    }
    Ok(cascade)
}

/// Notch followed by the band-pass.
pub fn design_conditioning(config: &FilterConfig, sample_rate_hz: f64) -> Result<BiquadCascade> {
    config.validate(sample_rate_hz)?;
    Ok(design_notch(config.mains_hz, config.mains_q, sample_rate_hz)?
        .chain(design_butterworth_bandpass(config, sample_rate_hz)?))
}

/// Number of reflected samples added on each side before filtering.
pub fn pad_len(cascade: &BiquadCascade) -> usize {
    3 * cascade.transient_len()
}

fn odd_reflect(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let (first, last) = (x[0], x[n - 1]);
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|k| 2.0 * first - x[k]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|k| 2.0 * last - x[n - 1 - k]));
    out
}

fn forward_backward(sections: &[Biquad], padded: &[f64]) -> Vec<f64> {
    let mut y = padded.to_vec();
    run_cascade_steady(sections, &mut y);
    y.reverse();
    run_cascade_steady(sections, &mut y);
    y.reverse();
    y
}

/// Zero-phase filtering of a raw sample slice.
///
/// The input is extended by odd reflection, then filtered forward-backward
/// and backward-forward; the two results are averaged so the operator
/// commutes exactly with time reversal.
pub fn filtfilt(x: &[f64], cascade: &BiquadCascade) -> Result<Vec<f64>> {
    let pad = pad_len(cascade);
    if x.len() <= pad {
        return Err(Error::TraceTooShort {
            len: x.len(),
            needed: pad,
        });
    }
    let padded = odd_reflect(x, pad);
    let fb = forward_backward(&cascade.sections, &padded);
    let mut reversed = padded;
    reversed.reverse();
    let bf = forward_backward(&cascade.sections, &reversed);
    let n = x.len();
    Ok((0..n)
        .map(|i| 0.5 * (fb[pad + i] + bf[pad + n - 1 - i]))
        .collect())
}

pub fn filter_zero_phase(trace: &EcgTrace, cascade: &BiquadCascade) -> Result<EcgTrace> {
    Ok(trace.with_samples(filtfilt(&trace.samples, cascade)?))
}
