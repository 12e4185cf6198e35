//! Corpus layout, trace validation and chronological splitting.
//!
//! A corpus is a directory holding `manifest.tsv` and one `.ecg` text file per
//! recording. The manifest is tab separated with the columns
//! `subject session recording path sample_rate_hz`; lines starting with `#`
//! are comments. A trace file starts with `# sample_rate_hz=<value>` followed
//! by one decimal voltage (mV) per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const TRACE_EXTENSION: &str = "ecg";
pub const SCHEMA_VERSION: u32 = 1;

/// Opaque subject token. Must be non-empty and free of whitespace so it can
/// live in tab separated files and file names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubjectId(String);

impl SubjectId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidTrace(format!(
                "subject id {id:?} must be non-empty and contain no whitespace"
            )));
        }
        Ok(SubjectId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SessionId {
    S1,
    S2,
}

impl SessionId {
    pub const ALL: [SessionId; 2] = [SessionId::S1, SessionId::S2];

    pub fn as_str(self) -> &'static str {
        match self {
            SessionId::S1 => "S1",
            SessionId::S2 => "S2",
        }
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SessionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "S1" | "s1" | "1" => Ok(SessionId::S1),
            "S2" | "s2" | "2" => Ok(SessionId::S2),
            other => Err(Error::Config(format!("unknown session {other:?}"))),
        }
    }
}

/// Uniformly sampled single-lead recording.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgTrace {
    pub subject: SubjectId,
    pub session: SessionId,
    pub recording_index: u32,
    pub sample_rate_hz: f64,
    pub samples: Vec<f64>,
}

impl EcgTrace {
    pub fn new(
        subject: SubjectId,
        session: SessionId,
        recording_index: u32,
        sample_rate_hz: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        let trace = EcgTrace {
            subject,
            session,
            recording_index,
            sample_rate_hz,
            samples,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidTrace(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::InvalidTrace("trace has no samples".into()));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTrace(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Same labels, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> EcgTrace {
        EcgTrace {
            subject: self.subject.clone(),
            session: self.session,
            recording_index: self.recording_index,
            sample_rate_hz: self.sample_rate_hz,
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub subject: SubjectId,
    pub session: SessionId,
    pub recording: u32,
    /// Relative to the corpus root.
    pub path: PathBuf,
    pub sample_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub subjects: Vec<SubjectId>,
    pub traces: Vec<TraceEntry>,
}

impl CorpusManifest {
    pub fn from_entries(mut traces: Vec<TraceEntry>) -> Self {
        traces.sort_by(|a, b| {
            (&a.subject, a.session, a.recording).cmp(&(&b.subject, b.session, b.recording))
        });
        let subjects: BTreeSet<SubjectId> = traces.iter().map(|t| t.subject.clone()).collect();
        CorpusManifest {
            schema_version: SCHEMA_VERSION,
            subjects: subjects.into_iter().collect(),
            traces,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# schema_version={}\n", self.schema_version);
        out.push_str("# subject\tsession\trecording\tpath\tsample_rate_hz\n");
        for t in &self.traces {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                t.subject,
                t.session,
                t.recording,
                t.path.display(),
                t.sample_rate_hz
            ));
        }
        out
    }
}

/// A loaded, validated corpus. Traces are ordered by (subject, session, recording).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub traces: Vec<EcgTrace>,
}

impl Corpus {
    pub fn from_traces(mut traces: Vec<EcgTrace>) -> Result<Self> {
        traces.sort_by(|a, b| {
            (&a.subject, a.session, a.recording_index).cmp(&(
                &b.subject,
                b.session,
                b.recording_index,
            ))
        });
        let mut seen = BTreeSet::new();
        let mut entries = Vec::with_capacity(traces.len());
        for t in &traces {
            t.validate()?;
            if !seen.insert((t.subject.clone(), t.session, t.recording_index)) {
                return Err(Error::InvalidTrace(format!(
                    "duplicate trace ({}, {}, {})",
                    t.subject, t.session, t.recording_index
                )));
            }
            entries.push(TraceEntry {
                subject: t.subject.clone(),
                session: t.session,
                recording: t.recording_index,
                path: default_trace_path(&t.subject, t.session, t.recording_index),
                sample_rate_hz: t.sample_rate_hz,
            });
        }
        Ok(Corpus {
            manifest: CorpusManifest::from_entries(entries),
            traces,
        })
    }

    pub fn subjects(&self) -> &[SubjectId] {
        &self.manifest.subjects
    }

    /// Traces grouped by (subject, session), recordings in index order.
    pub fn groups(&self) -> BTreeMap<(SubjectId, SessionId), Vec<&EcgTrace>> {
        let mut groups: BTreeMap<_, Vec<&EcgTrace>> = BTreeMap::new();
        for t in &self.traces {
            groups
                .entry((t.subject.clone(), t.session))
                .or_default()
                .push(t);
        }
        groups
    }

    /// All recordings of one subject and session concatenated in recording order.
    pub fn session_trace(&self, subject: &SubjectId, session: SessionId) -> Option<EcgTrace> {
        let parts: Vec<&EcgTrace> = self
            .traces
            .iter()
            .filter(|t| &t.subject == subject && t.session == session)
            .collect();
        let first = parts.first()?;
        if parts.iter().any(|p| p.sample_rate_hz != first.sample_rate_hz) {
            return None;
        }
        let samples = parts.iter().flat_map(|p| p.samples.iter().copied()).collect();
        Some(EcgTrace {
            subject: subject.clone(),
            session,
            recording_index: 0,
            sample_rate_hz: first.sample_rate_hz,
            samples,
        })
    }
}

pub fn default_trace_path(subject: &SubjectId, session: SessionId, recording: u32) -> PathBuf {
    PathBuf::from(format!("{subject}_{session}_r{recording}.{TRACE_EXTENSION}"))
}

fn parse_manifest(path: &Path, text: &str) -> Result<CorpusManifest> {
    let mut schema_version = SCHEMA_VERSION;
    let mut entries = Vec::new();
    let mut keys = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("schema_version=") {
                schema_version = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, format!("bad schema version {v:?}")))?;
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 5 tab-separated columns, found {}", cols.len()),
            ));
        }
        let subject =
            SubjectId::new(cols[0]).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let session: SessionId = cols[1]
            .parse()
            .map_err(|e: Error| Error::parse(path, line_no, e.to_string()))?;
        let recording: u32 = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad recording index {:?}", cols[2])))?;
        let sample_rate_hz: f64 = cols[4]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad sample rate {:?}", cols[4])))?;
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::parse(path, line_no, "sample rate must be positive"));
        }
        if !keys.insert((subject.clone(), session, recording)) {
            return Err(Error::DuplicateTrace {
                subject: subject.to_string(),
                session: session.to_string(),
                recording,
                path: path.to_path_buf(),
                line: line_no,
            });
        }
        entries.push(TraceEntry {
            subject,
            session,
            recording,
            path: PathBuf::from(cols[3]),
            sample_rate_hz,
        });
    }
    let mut manifest = CorpusManifest::from_entries(entries);
    manifest.schema_version = schema_version;
    Ok(manifest)
}

/// Parses a trace file body. Returns the header sample rate and the samples.
pub fn parse_trace_file(path: &Path, text: &str) -> Result<(f64, Vec<f64>)> {
    let mut rate = None;
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("sample_rate_hz=") {
                let r: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, format!("bad sample rate {v:?}")))?;
                rate = Some(r);
            }
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("malformed sample {line:?}")))?;
        if !v.is_finite() {
            return Err(Error::parse(path, line_no, format!("non-finite sample {line:?}")));
        }
        samples.push(v);
    }
    let rate = rate.ok_or_else(|| Error::parse(path, 1, "missing `# sample_rate_hz=` header"))?;
    if samples.is_empty() {
        return Err(Error::parse(path, 1, "trace file has no samples"));
    }
    Ok((rate, samples))
}

pub fn format_trace_file(trace: &EcgTrace) -> String {
    let mut out = String::with_capacity(trace.samples.len() * 12 + 32);
    out.push_str(&format!("# sample_rate_hz={}\n", trace.sample_rate_hz));
    for v in &trace.samples {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

pub fn load_corpus(root: impl AsRef<Path>) -> Result<Corpus> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest = parse_manifest(&manifest_path, &text)?;

    let mut traces = Vec::with_capacity(manifest.traces.len());
    for entry in &manifest.traces {
        let path = root.join(&entry.path);
        let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (rate, samples) = parse_trace_file(&path, &body)?;
        if rate != entry.sample_rate_hz {
            return Err(Error::parse(
                &path,
                1,
                format!(
                    "sample rate {rate} disagrees with manifest value {}",
                    entry.sample_rate_hz
                ),
            ));
        }
        traces.push(EcgTrace::new(
            entry.subject.clone(),
            entry.session,
            entry.recording,
            rate,
            samples,
        )?);
    }
    Ok(Corpus { manifest, traces })
}

/// Writes every trace to its manifest path and then the manifest itself.
pub fn save_corpus(corpus: &Corpus, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (entry, trace) in corpus.manifest.traces.iter().zip(&corpus.traces) {
        write_file(&root.join(&entry.path), format_trace_file(trace).as_bytes())?;
    }
    write_file(&root.join(MANIFEST_FILE), corpus.manifest.to_tsv().as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Index of the first test sample when splitting `len` samples chronologically.
pub fn split_index(len: usize, train_fraction: f64) -> usize {
    // The epsilon absorbs representation error in fractions such as 0.29.
    ((train_fraction * len as f64) + 1e-9).floor() as usize
}

/// Splits a trace into a leading training part and trailing test part.
pub fn chronological_split(trace: &EcgTrace, train_fraction: f64) -> Result<(EcgTrace, EcgTrace)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::DegenerateSplit(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = trace.samples.len();
    let cut = split_index(n, train_fraction);
    if cut == 0 || cut >= n {
        return Err(Error::DegenerateSplit(format!(
            "{n} samples at fraction {train_fraction} leaves an empty part"
        )));
    }
    let (head, tail) = trace.samples.split_at(cut);
    Ok((trace.with_samples(head.to_vec()), trace.with_samples(tail.to_vec())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> SubjectId {
        SubjectId::new(s).unwrap()
    }

    fn trace(subject: &str, session: SessionId, rec: u32, samples: Vec<f64>) -> EcgTrace {
        EcgTrace::new(sid(subject), session, rec, 300.0, samples).unwrap()
    }

    #[test]
    fn two_by_two_corpus_lists_four_traces() {
        let dir = tempfile::tempdir().unwrap();
        let mut traces = Vec::new();
        for s in ["a", "b"] {
            for sess in SessionId::ALL {
                traces.push(trace(s, sess, 0, vec![0.1, -0.2, 0.3]));
            }
        }
        let corpus = Corpus::from_traces(traces).unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.manifest.traces.len(), 4);
        assert_eq!(loaded.subjects().len(), 2);
        assert_eq!(loaded.groups().len(), 4);
        assert_eq!(loaded, corpus);
    }

    #[test]
    fn nan_token_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(MANIFEST_FILE),
            "a\tS1\t0\ta.ecg\t300\n",
        )
        .unwrap();
        fs::write(dir.path().join("a.ecg"), "# sample_rate_hz=300\n0.1\nNaN\n0.2\n").unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        match &err {
            Error::Parse { path, line, .. } => {
                assert!(path.ends_with("a.ecg"));
                assert_eq!(*line, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("a.ecg:3"));
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::MissingManifest(_))));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(MANIFEST_FILE),
            "# comment\na\tS1\t0\ta.ecg\t300\na\tS1\t0\tb.ecg\t300\n",
        )
        .unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(matches!(err, Error::DuplicateTrace { line: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_sample_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "a\tS1\t0\ta.ecg\t300\n").unwrap();
        fs::write(dir.path().join("a.ecg"), "# sample_rate_hz=300\n0.1\n1.2.3\n").unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn split_240s_at_80_percent() {
        let t = trace("a", SessionId::S1, 0, vec![0.0; 240 * 300]);
        let (train, test) = chronological_split(&t, 0.8).unwrap();
        assert_eq!(train.duration_s(), 192.0);
        assert_eq!(test.duration_s(), 48.0);
    }

    #[test]
    fn split_even_and_concat_identity() {
        let samples: Vec<f64> = (0..10).map(f64::from).collect();
        let t = trace("a", SessionId::S2, 1, samples.clone());
        let (train, test) = chronological_split(&t, 0.5).unwrap();
        assert_eq!((train.len(), test.len()), (5, 5));
        assert_eq!(train.subject, t.subject);
        assert_eq!(test.session, SessionId::S2);
        let joined: Vec<f64> = train.samples.iter().chain(&test.samples).copied().collect();
        assert_eq!(joined, samples);
    }

    #[test]
    fn degenerate_split_errors() {
        let t = trace("a", SessionId::S1, 0, vec![1.0]);
        assert!(matches!(chronological_split(&t, 0.8), Err(Error::DegenerateSplit(_))));
        let t = trace("a", SessionId::S1, 0, vec![1.0; 10]);
        assert!(chronological_split(&t, 1.0).is_err());
    }

    #[test]
    fn session_trace_concatenates_recordings() {
        let corpus = Corpus::from_traces(vec![
            trace("a", SessionId::S1, 1, vec![3.0, 4.0]),
            trace("a", SessionId::S1, 0, vec![1.0, 2.0]),
        ])
        .unwrap();
        let joined = corpus.session_trace(&sid("a"), SessionId::S1).unwrap();
        assert_eq!(joined.samples, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(corpus.session_trace(&sid("a"), SessionId::S2).is_none());
    }

    #[test]
    fn invalid_subject_ids() {
        assert!(SubjectId::new("").is_err());
        assert!(SubjectId::new("a b").is_err());
    }
}
