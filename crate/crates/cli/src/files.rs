//! Text formats for the intermediate stage outputs: peak lists, beat
//! matrices and feature vectors. Every file is tab separated with `#`
//! metadata lines followed by a header row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ecg_auth_core::{BeatMatrix, FeatureVector, PeakList, SessionId, SubjectId};
use ndarray::Array2;

pub const PEAKS_SUFFIX: &str = ".peaks.tsv";
pub const TRAIN_BEATS_SUFFIX: &str = "_train.beats.tsv";
pub const TEST_BEATS_SUFFIX: &str = "_test.beats.tsv";

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// `# key=value` lines plus the data rows after the header row.
struct Table<'a> {
    meta: BTreeMap<&'a str, &'a str>,
    header: Vec<&'a str>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Table<'a> {
    fn parse(text: &'a str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut header = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(m) = line.strip_prefix('#') {
                if let Some((k, v)) = m.trim().split_once('=') {
                    meta.insert(k.trim(), v.trim());
                }
                continue;
            }
            let cells: Vec<&str> = line.split('\t').collect();
            if header.is_none() {
                header = Some(cells);
            } else {
                rows.push((i + 1, cells));
            }
        }
        Ok(Table {
            meta,
            header: header.ok_or_else(|| anyhow!("missing header row"))?,
            rows,
        })
    }

    fn meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta.get(key).ok_or_else(|| anyhow!("missing `# {key}=` line"))?;
        v.parse().map_err(|_| anyhow!("bad {key} value {v:?}"))
    }
}

fn number<T: std::str::FromStr>(cell: &str, line: usize) -> Result<T> {
    cell.trim()
        .parse()
        .map_err(|_| anyhow!("line {line}: malformed number {cell:?}"))
}

fn session_meta(out: &mut String, subject: &SubjectId, session: SessionId, sample_rate_hz: f64) {
    let _ = writeln!(out, "# subject={subject}");
    let _ = writeln!(out, "# session={session}");
    let _ = writeln!(out, "# sample_rate_hz={sample_rate_hz}");
}

pub fn format_peaks(peaks: &PeakList, subject: &SubjectId, session: SessionId, sample_rate_hz: f64) -> String {
    let mut out = String::new();
    session_meta(&mut out, subject, session, sample_rate_hz);
    out.push_str("index\n");
    for p in &peaks.indices {
        let _ = writeln!(out, "{p}");
    }
    out
}

pub fn parse_peaks(text: &str) -> Result<Vec<usize>> {
    let table = Table::parse(text)?;
    if table.header != ["index"] {
        bail!("expected header `index`, got {:?}", table.header.join("\t"));
    }
    let peaks: Vec<usize> = table
        .rows
        .iter()
        .map(|(line, cells)| number(cells[0], *line))
        .collect::<Result<_>>()?;
    if peaks.windows(2).any(|w| w[0] >= w[1]) {
        bail!("peak indices must be strictly increasing");
    }
    Ok(peaks)
}

pub fn read_peaks(path: &Path) -> Result<Vec<usize>> {
    parse_peaks(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// One beat per row: the R index in the source trace, then the samples.
pub fn format_beats(beats: &BeatMatrix) -> String {
    let mut out = String::new();
    session_meta(&mut out, &beats.subject, beats.session, beats.sample_rate_hz);
    let _ = writeln!(out, "# pre_samples={}", beats.pre_samples);
    out.push_str("r_index");
    for j in 0..beats.width() {
        let _ = write!(out, "\tv{j}");
    }
    out.push('\n');
    for (row, r) in beats.beats.rows().into_iter().zip(&beats.row_peaks) {
        let _ = write!(out, "{r}");
        for v in row {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_beats(text: &str) -> Result<BeatMatrix> {
    let table = Table::parse(text)?;
    if table.header.first() != Some(&"r_index") {
        bail!("expected header starting with `r_index`");
    }
    let width = table.header.len() - 1;
    let mut values = Vec::with_capacity(table.rows.len() * width);
    let mut row_peaks = Vec::with_capacity(table.rows.len());
    for (line, cells) in &table.rows {
        if cells.len() != width + 1 {
            bail!("line {line}: expected {} columns, got {}", width + 1, cells.len());
        }
        row_peaks.push(number(cells[0], *line)?);
        for c in &cells[1..] {
            let v: f64 = number(c, *line)?;
            if !v.is_finite() {
                bail!("line {line}: non-finite sample");
            }
            values.push(v);
        }
    }
    let beats = Array2::from_shape_vec((row_peaks.len(), width), values)?;
    Ok(BeatMatrix {
        beats,
        subject: SubjectId::new(table.meta::<String>("subject")?)?,
        session: table.meta("session")?,
        sample_rate_hz: table.meta("sample_rate_hz")?,
        pre_samples: table.meta("pre_samples")?,
        origin_peaks: PeakList {
            indices: row_peaks.clone(),
            trace_ref: None,
        },
        row_peaks,
    })
}

pub fn read_beats(path: &Path) -> Result<BeatMatrix> {
    parse_beats(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn format_vectors(vectors: &[FeatureVector]) -> String {
    let width = vectors.first().map_or(0, |v| v.values.len());
    let mut out = String::from("subject\tsession");
    for j in 0..width {
        let _ = write!(out, "\tpc{}", j + 1);
    }
    out.push('\n');
    for v in vectors {
        let _ = write!(out, "{}\t{}", v.subject, v.session);
        for x in &v.values {
            let _ = write!(out, "\t{x}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_vectors(text: &str) -> Result<Vec<FeatureVector>> {
    let table = Table::parse(text)?;
    if table.header.get(..2) != Some(&["subject", "session"]) {
        bail!("expected header starting with `subject\tsession`");
    }
    let width = table.header.len() - 2;
    table
        .rows
        .iter()
        .map(|(line, cells)| {
            if cells.len() != width + 2 {
                bail!("line {line}: expected {} columns, got {}", width + 2, cells.len());
            }
            Ok(FeatureVector {
                subject: SubjectId::new(cells[0])?,
                session: cells[1].parse()?,
                values: cells[2..].iter().map(|c| number(c, *line)).collect::<Result<_>>()?,
                genuine_label: false,
            })
        })
        .collect()
}

pub fn read_vectors(path: &Path) -> Result<Vec<FeatureVector>> {
    parse_vectors(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Files in `dir` whose names end with `suffix`, sorted by name.
pub fn files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)) {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}

pub fn session_stem(subject: &SubjectId, session: SessionId) -> String {
    format!("{subject}_{session}")
}
