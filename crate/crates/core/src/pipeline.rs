//! End-to-end experiment: conditioning, segmentation, chronological split,
//! feature fitting, per-user training and both evaluation protocols for
//! every session condition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{split_index, write_file, Corpus, EcgTrace, SessionId, SubjectId};
use crate::dsp::{design_conditioning, filter_zero_phase};
use crate::error::{Error, Result};
use crate::classifiers::TrainingPool;
use crate::evaluation::{
    evaluate_protocol_a, evaluate_protocol_b, selected_hypers, summary_table, train_protocol_a, train_protocol_b,
    Condition, EvalReport, Experiment, Protocol, ProtocolConfig,
};
use crate::features::{fit_matrix, transform, FeatureFit, FeatureVector};
use crate::segmentation::{accentuate_qrs, detect_r_peaks, extract_beats, reject_outlier_beats, BeatMatrix, PeakList};

/// Beats of one subject's session, split chronologically and cleaned.
#[derive(Debug, Clone)]
pub struct SessionBeats {
    pub subject: SubjectId,
    pub session: SessionId,
    pub n_samples: usize,
    /// Every R peak detected in the session.
    pub peaks: PeakList,
    /// Beats whose window crosses the train/test boundary; used by neither side.
    pub n_straddling: usize,
    pub n_train_extracted: usize,
    pub n_test_extracted: usize,
    pub train: BeatMatrix,
    pub test: BeatMatrix,
}

/// Filters each recording on its own, then joins them in recording order.
pub fn condition_recordings(recordings: &[&EcgTrace], config: &RunConfig) -> Result<EcgTrace> {
    let first = recordings
        .first()
        .ok_or_else(|| Error::InvalidTrace("no recordings".into()))?;
    let cascade = design_conditioning(&config.filter, first.sample_rate_hz)?;
    let mut samples = Vec::new();
    for r in recordings {
        if r.sample_rate_hz != first.sample_rate_hz {
            return Err(Error::InvalidTrace(format!(
                "{} {} mixes sample rates {} and {}",
                r.subject, r.session, first.sample_rate_hz, r.sample_rate_hz
            )));
        }
        samples.extend(filter_zero_phase(r, &cascade)?.samples);
    }
    let mut joined = first.with_samples(samples);
    joined.recording_index = 0;
    Ok(joined)
}

/// Segments a conditioned session, assigns each beat to the training part
/// (window ends before the split point) or the test part (window starts at
/// or after it) and rejects outliers within each part separately, so test
/// beats never influence training data.
pub fn split_session(trace: &EcgTrace, config: &RunConfig) -> Result<SessionBeats> {
    let seg = &config.segmentation;
    seg.validate()?;
    let fs = trace.sample_rate_hz;
    let acc = accentuate_qrs(trace, seg.wavelet_scale_s)?;
    let peaks = detect_r_peaks(&acc, seg, fs)?;
    let beats = extract_beats(trace, &peaks, seg)?;
    let split = split_index(trace.len(), config.train_fraction);
    let (pre, width) = (beats.pre_samples, beats.width());
    let (mut train_rows, mut test_rows) = (Vec::new(), Vec::new());
    for (row, &r) in beats.row_peaks.iter().enumerate() {
        let start = r - pre;
        if start + width <= split {
            train_rows.push(row);
        } else if start >= split {
            test_rows.push(row);
        }
    }
    let n_straddling = beats.n_beats() - train_rows.len() - test_rows.len();
    let train = reject_outlier_beats(&beats.select_rows(&train_rows), seg.reject_fraction)?;
    let test = reject_outlier_beats(&beats.select_rows(&test_rows), seg.reject_fraction)?;
    Ok(SessionBeats {
        subject: trace.subject.clone(),
        session: trace.session,
        n_samples: trace.len(),
        peaks,
        n_straddling,
        n_train_extracted: train_rows.len(),
        n_test_extracted: test_rows.len(),
        train,
        test,
    })
}

#[derive(Debug, Clone, Default)]
pub struct PreparedCorpus {
    pub sessions: BTreeMap<(SubjectId, SessionId), SessionBeats>,
    /// Sessions that yielded too little signal to segment, with the reason.
    pub skipped: Vec<(SubjectId, SessionId, String)>,
}

/// Conditions and segments every (subject, session) of the corpus.
pub fn prepare_corpus(corpus: &Corpus, config: &RunConfig) -> Result<PreparedCorpus> {
    config.validate()?;
    let groups: Vec<_> = corpus.groups().into_iter().collect();
    let results: Vec<_> = groups
        .par_iter()
        .map(|((subject, session), recordings)| {
            let trace = match condition_recordings(recordings, config) {
                Ok(t) => t,
                Err(Error::TraceTooShort { len, needed }) => {
                    return Ok(Err(format!("recording too short to filter ({len} <= {needed} samples)")));
                }
                Err(e) => return Err(e.in_stage("preprocess")),
            };
            match split_session(&trace, config) {
                Ok(s) => Ok(Ok(s)),
                Err(Error::Segmentation(m)) => Ok(Err(m)),
                Err(e) => Err(e.in_stage("segment")),
            }
            .map(|r| r.map_err(|m| format!("{subject} {session}: {m}")))
        })
        .collect::<Result<_>>()?;
    let mut prepared = PreparedCorpus::default();
    for (((subject, session), _), result) in groups.into_iter().zip(results) {
        match result {
            Ok(beats) => {
                prepared.sessions.insert((subject, session), beats);
            }
            Err(reason) => {
                log::warn!("skipping {subject} {session}: {reason}");
                prepared.skipped.push((subject, session, reason));
            }
        }
    }
    Ok(prepared)
}

fn stack_rows(parts: &[&BeatMatrix]) -> Result<Array2<f64>> {
    let views: Vec<ArrayView2<f64>> = parts.iter().map(|b| b.beats.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Features(format!("cannot stack beats: {e}")))
}

/// Fits the feature model on the training beats of every user in `session`
/// and projects those beats with it.
pub fn fit_session_features(
    prepared: &PreparedCorpus,
    session: SessionId,
    config: &RunConfig,
) -> Result<(FeatureFit, Vec<FeatureVector>)> {
    let parts: Vec<&BeatMatrix> = prepared
        .sessions
        .values()
        .filter(|s| s.session == session)
        .map(|s| &s.train)
        .collect();
    if parts.is_empty() {
        return Err(Error::Evaluation(format!("no training data in session {session}")).in_stage("features"));
    }
    let fit = fit_features(&parts, config.components)?;
    if let Some(w) = &fit.warning {
        log::warn!("session {session}: feature model {w:?}");
    }
    let vectors = project_beats(&parts, &fit)?;
    Ok((fit, vectors))
}

/// Fits one feature model on the rows of all `parts` together.
pub fn fit_features(parts: &[&BeatMatrix], components: usize) -> Result<FeatureFit> {
    fit_matrix(&stack_rows(parts)?, components).map_err(|e| e.in_stage("features"))
}

/// Projects every beat of `parts`, in order.
pub fn project_beats(parts: &[&BeatMatrix], fit: &FeatureFit) -> Result<Vec<FeatureVector>> {
    let mut out = Vec::new();
    for b in parts {
        out.extend(transform(b, &fit.model).map_err(|e| e.in_stage("features"))?);
    }
    Ok(out)
}

/// Test-partition vectors of every user in `session`.
pub fn project_test(prepared: &PreparedCorpus, session: SessionId, fit: &FeatureFit) -> Result<Vec<FeatureVector>> {
    let parts: Vec<&BeatMatrix> = prepared
        .sessions
        .values()
        .filter(|s| s.session == session)
        .map(|s| &s.test)
        .collect();
    project_beats(&parts, fit)
}

/// Feature model, training pool and test vectors for one condition.
pub fn build_experiment(
    prepared: &PreparedCorpus,
    condition: Condition,
    config: &RunConfig,
) -> Result<(Experiment, FeatureFit)> {
    let (fit, train) = fit_session_features(prepared, condition.train, config)?;
    let test = project_test(prepared, condition.test, &fit)?;
    let exp = Experiment::new(condition, &train, test).map_err(|e| e.in_stage("train"))?;
    Ok((exp, fit))
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// For each condition in table order: Protocol A then Protocol B.
    pub reports: Vec<EvalReport>,
    pub log: String,
}

impl PipelineOutput {
    pub fn report(&self, protocol: Protocol, condition: Condition) -> Option<&EvalReport> {
        self.reports
            .iter()
            .find(|r| r.protocol == protocol && r.condition == condition)
    }

    /// Summary tables for both protocols followed by every per-user table.
    pub fn tables(&self) -> String {
        let all: Vec<&EvalReport> = self.reports.iter().collect();
        let mut s = summary_table(Protocol::A, &all);
        s.push('\n');
        s.push_str(&summary_table(Protocol::B, &all));
        for r in &self.reports {
            s.push('\n');
            s.push_str(&r.to_table());
        }
        s
    }
}

pub fn report_file_name(report: &EvalReport) -> String {
    format!("report_{}_{}.tsv", report.protocol, report.condition.slug())
}

pub fn protocol_config(config: &RunConfig) -> ProtocolConfig {
    ProtocolConfig {
        kind: config.model,
        grid: config.grid.clone(),
        seed: config.seed,
        reselect_per_pair: config.reselect_per_pair,
        config_digest: config.digest(),
    }
}

/// Runs both protocols for each condition in [`Condition::ALL`].
pub fn run_pipeline(corpus: &Corpus, config: &RunConfig) -> Result<PipelineOutput> {
    let mut log = String::new();
    let _ = writeln!(log, "config_digest={}", config.digest());
    let _ = writeln!(log, "seed={}", config.seed);
    let _ = writeln!(log, "subjects={}", corpus.subjects().len());
    let _ = writeln!(log, "traces={}", corpus.traces.len());

    log::info!("preprocessing and segmenting {} traces", corpus.traces.len());
    let prepared = prepare_corpus(corpus, config)?;
    for s in prepared.sessions.values() {
        let _ = writeln!(
            log,
            "session {} {}: samples={} peaks={} train_beats={}/{} test_beats={}/{} straddling={}",
            s.subject,
            s.session,
            s.n_samples,
            s.peaks.len(),
            s.train.n_beats(),
            s.n_train_extracted,
            s.test.n_beats(),
            s.n_test_extracted,
            s.n_straddling
        );
    }
    for (subject, session, reason) in &prepared.skipped {
        let _ = writeln!(log, "skipped session {subject} {session}: {reason}");
    }

    let pconf = protocol_config(config);
    let mut reports = Vec::new();
    // Conditions sharing a training session share the feature model and
    // every trained model; only the test vectors differ.
    for train_session in SessionId::ALL {
        let conditions: Vec<Condition> = Condition::ALL
            .into_iter()
            .filter(|c| c.train == train_session)
            .collect();
        if conditions.is_empty() {
            continue;
        }
        log::info!("session {train_session}: fitting features");
        let (fit, train) = fit_session_features(&prepared, train_session, config)?;
        let pool = Arc::new(TrainingPool::new(&train).map_err(|e| e.in_stage("train"))?);
        let mut experiments = Vec::new();
        for &condition in &conditions {
            let test = project_test(&prepared, condition.test, &fit)?;
            let exp = Experiment::with_pool(condition, pool.clone(), test).map_err(|e| e.in_stage("eval"))?;
            let ratio: f64 = fit.model.explained_variance_ratio().iter().sum();
            let _ = writeln!(
                log,
                "condition {condition}: train_vectors={} test_vectors={} targets={} components={} explained_variance={ratio} warning={:?}",
                pool.len(),
                exp.test.len(),
                exp.targets.len(),
                fit.model.n_components(),
                fit.warning
            );
            experiments.push(exp);
        }
        let targets: Vec<SubjectId> = experiments
            .iter()
            .flat_map(|e| e.targets.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        log::info!("session {train_session}: protocol A training ({} targets)", targets.len());
        let models = train_protocol_a(&pool, &targets, &pconf).map_err(|e| e.in_stage("train"))?;
        for m in &models {
            let _ = writeln!(log, "model {train_session} {}: {} threshold={}", m.target, m.hyper, m.decision_threshold);
        }
        log::info!("session {train_session}: protocol B training");
        let pairs = train_protocol_b(&pool, &targets, &pconf, Some(&selected_hypers(&models)))
            .map_err(|e| e.in_stage("train"))?;
        for exp in &experiments {
            let a = evaluate_protocol_a(exp, &pconf, &models).map_err(|e| e.in_stage("eval"))?;
            let b = evaluate_protocol_b(exp, &pconf, &pairs).map_err(|e| e.in_stage("eval"))?;
            reports.push(a);
            reports.push(b);
        }
    }
    reports.sort_by_key(|r| {
        let row = Condition::ALL.iter().position(|c| *c == r.condition).unwrap_or(usize::MAX);
        (row, r.protocol)
    });
    for r in &reports {
        let (mean, std) = r.mean_std();
        let _ = writeln!(
            log,
            "result protocol={} condition={} mean_{metric}={mean} std_{metric}={std} mean_eer={} mean_hter={}",
            r.protocol,
            r.condition,
            r.mean_eer(),
            r.mean_hter(),
            metric = r.protocol.metric_name().to_lowercase(),
        );
    }
    Ok(PipelineOutput { reports, log })
}

/// Writes every report, the tables and the run log (with the full config)
/// into `dir`. Returns the written paths in order.
pub fn write_outputs(output: &PipelineOutput, config: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for r in &output.reports {
        let path = dir.join(report_file_name(r));
        write_file(&path, r.to_tsv().as_bytes())?;
        written.push(path);
    }
    let tables = dir.join("tables.txt");
    write_file(&tables, output.tables().as_bytes())?;
    written.push(tables);
    let log = dir.join("run.log");
    let mut text = output.log.clone();
    text.push_str("\n# configuration\n");
    text.push_str(&config.to_text());
    write_file(&log, text.as_bytes())?;
    written.push(log);
    Ok(written)
}
