//! Standalone SVG figures: overlaid mean beats of several subjects, and a
//! detection trace with its running-mean threshold and detected peaks.

use std::fmt::Write as _;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Roughly `target` round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / target.max(1) as f64;
    let magnitude = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * magnitude);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Data-to-pixel mapping of the plotting area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Frame { x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn polyline(&self, out: &mut String, points: impl Iterator<Item = (f64, f64)>, style: &str) {
        let coords: Vec<String> = points
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" {style} points="{}"/>"#, coords.join(" "));
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            out,
            r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#000000"/>"##,
            x1 - x0,
            y0 - y1
        );
        for t in ticks(self.x.0, self.x.1, 8) {
            let x = self.px(t);
            let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="#000000"/>"##, y0 + 5.0);
            let _ = writeln!(
                out,
                r#"<text x="{x:.2}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
                y0 + 18.0,
                tick_label(t)
            );
        }
        for t in ticks(self.y.0, self.y.1, 6) {
            let y = self.py(t);
            let _ = writeln!(out, r##"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="#000000"/>"##, x0 - 5.0);
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.2}" font-size="12" text-anchor="end">{}</text>"#,
                x0 - 8.0,
                y + 4.0,
                tick_label(t)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }
}

fn legend(out: &mut String, row: usize, color: &str, label: &str, marker: bool) {
    let x = WIDTH - RIGHT + 15.0;
    let y = TOP + 10.0 + 20.0 * row as f64;
    if marker {
        let _ = writeln!(
            out,
            r#"<circle cx="{}" cy="{y}" r="4" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            x + 10.0
        );
    } else {
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#,
            x + 20.0
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12">{}</text>"#, x + 26.0, y + 4.0, escape(label));
}

fn document(body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n{body}</svg>\n"
    )
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// One subject's mean beat, with the number of samples before the R peak.
#[derive(Debug, Clone)]
pub struct MeanBeat {
    pub label: String,
    pub samples: Vec<f64>,
    pub pre_samples: usize,
    pub sample_rate_hz: f64,
}

impl MeanBeat {
    fn times_ms(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(|i| 1000.0 * (i as f64 - self.pre_samples as f64) / self.sample_rate_hz)
    }
}

/// Mean waveforms overlaid on a common time axis centred on the R peak,
/// one labelled colour per subject.
pub fn mean_beats_svg(beats: &[MeanBeat], title: &str) -> String {
    let x = range(beats.iter().flat_map(|b| b.times_ms()));
    let y = range(beats.iter().flat_map(|b| b.samples.iter().copied()));
    let frame = Frame::new(x, y);
    let mut body = String::new();
    frame.axes(&mut body, title, "time from R peak (ms)", "amplitude (mV)");
    for (i, b) in beats.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(body, r#"<g id="beat-{i}">"#);
        let _ = writeln!(body, "<title>{}</title>", escape(&b.label));
        frame.polyline(
            &mut body,
            b.times_ms().zip(b.samples.iter().copied()),
            &format!(r#"stroke="{color}" stroke-width="1.5""#),
        );
        body.push_str("</g>\n");
        legend(&mut body, i, color, &b.label, false);
    }
    document(&body)
}

/// Detection signal and threshold over time with detected peaks circled.
/// An empty `peaks` slice draws the two curves only.
pub fn peaks_svg(signal: &[f64], threshold: &[f64], peaks: &[usize], sample_rate_hz: f64, offset: usize, title: &str) -> String {
    let t = |i: usize| (offset + i) as f64 / sample_rate_hz;
    let x = (t(0), t(signal.len().saturating_sub(1)));
    let y = range(signal.iter().chain(threshold).copied());
    let frame = Frame::new(x, y);
    let mut body = String::new();
    frame.axes(&mut body, title, "time (s)", "detection signal");
    let _ = writeln!(body, r#"<g id="signal">"#);
    frame.polyline(
        &mut body,
        signal.iter().enumerate().map(|(i, &v)| (t(i), v)),
        r##"stroke="#1f77b4" stroke-width="1""##,
    );
    body.push_str("</g>\n");
    let _ = writeln!(body, r#"<g id="threshold">"#);
    frame.polyline(
        &mut body,
        threshold.iter().enumerate().map(|(i, &v)| (t(i), v)),
        r##"stroke="#d62728" stroke-width="1.5" stroke-dasharray="6 3""##,
    );
    body.push_str("</g>\n");
    legend(&mut body, 0, "#1f77b4", "signal", false);
    legend(&mut body, 1, "#d62728", "threshold", false);
    if !peaks.is_empty() {
        let _ = writeln!(body, r#"<g id="peaks">"#);
        for &p in peaks.iter().filter(|&&p| p < signal.len()) {
            let _ = writeln!(
                body,
                r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="#2ca02c" stroke-width="1.5"/>"##,
                frame.px(t(p)),
                frame.py(signal[p])
            );
        }
        body.push_str("</g>\n");
        legend(&mut body, 2, "#2ca02c", "R peaks", true);
    }
    document(&body)
}
