use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ecg_auth_cli::files::{self, PEAKS_SUFFIX, TEST_BEATS_SUFFIX, TRAIN_BEATS_SUFFIX};
use ecg_auth_cli::plot::{self, MeanBeat};
use ecg_auth_core::dataset::{load_corpus, parse_trace_file, save_corpus};
use ecg_auth_core::dsp::design_conditioning;
use ecg_auth_core::evaluation::{
    evaluate_protocol_a, run_protocol_a, run_protocol_b, selected_hypers, train_protocol_a, Experiment,
};
use ecg_auth_core::pipeline::{
    condition_recordings, fit_features, project_beats, protocol_config, report_file_name, run_pipeline,
    split_session, write_outputs,
};
use ecg_auth_core::segmentation::{accentuate_samples, detect_r_peaks, threshold_curve};
use ecg_auth_core::synth::{emit_corpus, NoiseConfig, SynthConfig};
use ecg_auth_core::{AuthModel, BeatMatrix, Condition, Corpus, Error, Protocol, RunConfig, SessionId, SubjectId};
use rayon::prelude::*;

use crate::{usage, EvalArgs, FeaturesArgs, PlotArgs, PlotStyle, SynthArgs, TrainArgs};

const MODEL_SUFFIX: &str = ".model.txt";

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("{what} {} does not exist or is not a directory", path.display())));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn open_corpus(path: &Path) -> Result<Corpus> {
    require_dir(path, "corpus")?;
    load_corpus(path).map_err(|e| match e {
        Error::MissingManifest(_) => usage(e.to_string()),
        e => anyhow::Error::new(e).context("ingest stage"),
    })
}

/// Writes `<stage>.log` with the seed, config digest and full configuration.
fn write_stage_log(config: &RunConfig, stage: &str, lines: &str) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "command={stage}");
    let _ = writeln!(text, "config_digest={}", config.digest());
    let _ = writeln!(text, "seed={}", config.seed);
    text.push_str(lines);
    text.push_str("\n# configuration\n");
    text.push_str(&config.to_text());
    files::write(&config.output_dir.join(format!("{stage}.log")), &text)
}

pub fn synth(config: &RunConfig, args: &SynthArgs) -> Result<()> {
    let synth = SynthConfig {
        n_subjects: args.subjects,
        duration_s: args.duration,
        recordings_per_session: args.recordings,
        sample_rate_hz: args.rate,
        noise: NoiseConfig::default(),
        session_drift: args.drift,
        beat_variability: args.beat_variability,
        seed: config.seed,
    };
    synth.validate().map_err(|e| usage(e.to_string()))?;
    log::info!(
        "generating {} subjects x {} s at {} Hz into {}",
        synth.n_subjects,
        synth.duration_s,
        synth.sample_rate_hz,
        config.output_dir.display()
    );
    let manifest = emit_corpus(&synth, &config.output_dir).context("synth stage")?;
    let lines = format!(
        "subjects={}\nduration_s={}\nrecordings_per_session={}\nsample_rate_hz={}\ndrift={}\nbeat_variability={}\ntraces={}\n",
        synth.n_subjects,
        synth.duration_s,
        synth.recordings_per_session,
        synth.sample_rate_hz,
        synth.session_drift,
        synth.beat_variability,
        manifest.traces.len()
    );
    write_stage_log(config, "synth", &lines)
}

pub fn ingest(config: &RunConfig, corpus: &Path) -> Result<()> {
    let corpus = open_corpus(corpus)?;
    let mut table = String::from("subject\tsession\trecording\tsample_rate_hz\tn_samples\tduration_s\tpath\n");
    for (entry, trace) in corpus.manifest.traces.iter().zip(&corpus.traces) {
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            trace.subject,
            trace.session,
            trace.recording_index,
            trace.sample_rate_hz,
            trace.len(),
            trace.duration_s(),
            entry.path.display()
        );
    }
    files::write(&config.output_dir.join("ingest.tsv"), &table)?;
    log::info!("{} subjects, {} traces", corpus.subjects().len(), corpus.traces.len());
    write_stage_log(
        config,
        "ingest",
        &format!("subjects={}\ntraces={}\n", corpus.subjects().len(), corpus.traces.len()),
    )
}

pub fn preprocess(config: &RunConfig, corpus: &Path) -> Result<()> {
    let corpus = open_corpus(corpus)?;
    let groups: Vec<_> = corpus.groups().into_values().collect();
    let conditioned = groups
        .par_iter()
        .map(|recs| condition_recordings(recs, config))
        .collect::<Result<Vec<_>, _>>()
        .context("preprocess stage")?;
    let rates: BTreeSet<u64> = conditioned.iter().map(|t| t.sample_rate_hz.to_bits()).collect();
    let mut coefficients = String::new();
    for bits in rates {
        let rate = f64::from_bits(bits);
        let cascade = design_conditioning(&config.filter, rate).context("preprocess stage")?;
        let _ = writeln!(coefficients, "# sample_rate_hz={rate}");
        coefficients.push_str(&cascade.to_text());
    }
    let out = Corpus::from_traces(conditioned).context("preprocess stage")?;
    save_corpus(&out, &config.output_dir).context("writing conditioned corpus")?;
    files::write(&config.output_dir.join("filter.txt"), &coefficients)?;
    log::info!("conditioned {} sessions", out.traces.len());
    write_stage_log(config, "preprocess", &format!("sessions={}\n", out.traces.len()))
}

pub fn segment(config: &RunConfig, corpus: &Path) -> Result<()> {
    let corpus = open_corpus(corpus)?;
    let mut sessions = Vec::new();
    for ((subject, session), recs) in corpus.groups() {
        if recs.len() > 1 {
            log::warn!(
                "{subject} {session}: {} recordings joined without filtering; run `preprocess` first",
                recs.len()
            );
        }
        let trace = corpus
            .session_trace(&subject, session)
            .with_context(|| format!("{subject} {session}: recordings with different sample rates"))?;
        sessions.push(trace);
    }
    let results: Vec<_> = sessions.par_iter().map(|t| split_session(t, config)).collect();

    let out = &config.output_dir;
    let mut summary = String::from(
        "subject\tsession\tn_samples\tn_peaks\ttrain_extracted\ttrain_kept\ttest_extracted\ttest_kept\tstraddling\tstatus\n",
    );
    for (trace, result) in sessions.iter().zip(results) {
        let stem = files::session_stem(&trace.subject, trace.session);
        match result {
            Ok(s) => {
                files::write(
                    &out.join(format!("{stem}{PEAKS_SUFFIX}")),
                    &files::format_peaks(&s.peaks, &s.subject, s.session, trace.sample_rate_hz),
                )?;
                files::write(&out.join(format!("{stem}{TRAIN_BEATS_SUFFIX}")), &files::format_beats(&s.train))?;
                files::write(&out.join(format!("{stem}{TEST_BEATS_SUFFIX}")), &files::format_beats(&s.test))?;
                let _ = writeln!(
                    summary,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\tok",
                    s.subject,
                    s.session,
                    s.n_samples,
                    s.peaks.len(),
                    s.n_train_extracted,
                    s.train.n_beats(),
                    s.n_test_extracted,
                    s.test.n_beats(),
                    s.n_straddling
                );
            }
            Err(Error::Segmentation(reason)) => {
                log::warn!("skipping {} {}: {reason}", trace.subject, trace.session);
                let _ = writeln!(
                    summary,
                    "{}\t{}\t{}\t\t\t\t\t\t\tskipped: {reason}",
                    trace.subject,
                    trace.session,
                    trace.len()
                );
            }
            Err(e) => return Err(anyhow::Error::new(e).context(format!("segment stage: {stem}"))),
        }
    }
    files::write(&out.join("segment.tsv"), &summary)?;
    write_stage_log(config, "segment", &format!("sessions={}\n", sessions.len()))
}

fn session_dir(root: &Path, session: SessionId) -> PathBuf {
    root.join(session.as_str())
}

pub fn features(config: &RunConfig, args: &FeaturesArgs) -> Result<()> {
    require_dir(&args.beats, "beats directory")?;
    let load = |suffix: &str| -> Result<Vec<BeatMatrix>> {
        files::files_with_suffix(&args.beats, suffix)?
            .iter()
            .map(|p| files::read_beats(p))
            .collect()
    };
    let train = load(TRAIN_BEATS_SUFFIX)?;
    let test = load(TEST_BEATS_SUFFIX)?;
    if train.is_empty() {
        bail!("features stage: no *{TRAIN_BEATS_SUFFIX} files in {}", args.beats.display());
    }
    let present: BTreeSet<SessionId> = train.iter().map(|b| b.session).collect();
    let sessions: Vec<SessionId> = if args.train_session.is_empty() {
        present.iter().copied().collect()
    } else {
        args.train_session.clone()
    };
    let mut lines = String::new();
    for fit_session in sessions {
        let parts: Vec<&BeatMatrix> = train.iter().filter(|b| b.session == fit_session).collect();
        if parts.is_empty() {
            bail!("features stage: no training beats for session {fit_session}");
        }
        let fit = fit_features(&parts, config.components)?;
        if let Some(w) = &fit.warning {
            log::warn!("session {fit_session}: {w:?}");
        }
        let explained: f64 = fit.model.explained_variance_ratio().iter().sum();
        log::info!(
            "session {fit_session}: {} components explain {:.1}% of the variance",
            fit.model.n_components(),
            100.0 * explained
        );
        let _ = writeln!(lines, "session {fit_session}: explained_variance={explained} warning={:?}", fit.warning);
        let dir = session_dir(&config.output_dir, fit_session);
        files::write(&dir.join("model.txt"), &fit.model.to_text())?;
        files::write(&dir.join("train.tsv"), &files::format_vectors(&project_beats(&parts, &fit)?))?;
        for test_session in test.iter().map(|b| b.session).collect::<BTreeSet<_>>() {
            let parts: Vec<&BeatMatrix> = test.iter().filter(|b| b.session == test_session).collect();
            files::write(
                &dir.join(format!("test_{test_session}.tsv")),
                &files::format_vectors(&project_beats(&parts, &fit)?),
            )?;
        }
    }
    write_stage_log(config, "features", &lines)
}

fn training_vectors(features: &Path, session: SessionId) -> Result<Vec<ecg_auth_core::FeatureVector>> {
    require_dir(features, "features directory")?;
    let path = session_dir(features, session).join("train.tsv");
    require_file(&path, "training vectors")?;
    files::read_vectors(&path)
}

fn models_dir(config: &RunConfig, session: SessionId) -> PathBuf {
    config.output_dir.join(format!("models_{session}"))
}

pub fn train(config: &RunConfig, args: &TrainArgs) -> Result<()> {
    let vectors = training_vectors(&args.features, args.train_session)?;
    let pool = ecg_auth_core::classifiers::TrainingPool::new(&vectors).context("train stage")?;
    let targets: Vec<SubjectId> = pool.subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    log::info!(
        "training {} {} models on {} vectors of session {}",
        targets.len(),
        config.model,
        pool.len(),
        args.train_session
    );
    let models = train_protocol_a(&pool, &targets, &protocol_config(config)).context("train stage")?;
    let dir = models_dir(config, args.train_session);
    let mut table = String::from("target\thyper\tdecision_threshold\tcv_balanced_accuracy\n");
    for m in &models {
        files::write(&dir.join(format!("{}{MODEL_SUFFIX}", m.target)), &m.to_text())?;
        let cv = m
            .cv_report
            .as_ref()
            .and_then(|r| r.entries.iter().find(|e| e.hyper == r.selected))
            .map_or(f64::NAN, |e| e.mean_balanced_accuracy);
        let _ = writeln!(table, "{}\t{}\t{}\t{cv}", m.target, m.hyper, m.decision_threshold);
    }
    files::write(&dir.join("selection.tsv"), &table)?;
    write_stage_log(
        config,
        "train",
        &format!("train_session={}\nmodels={}\n", args.train_session, models.len()),
    )
}

fn load_models(dir: &Path) -> Result<Vec<AuthModel>> {
    require_dir(dir, "models directory")?;
    let paths = files::files_with_suffix(dir, MODEL_SUFFIX)?;
    if paths.is_empty() {
        bail!("no *{MODEL_SUFFIX} files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| AuthModel::from_text(&files::read(p)?).with_context(|| format!("parsing {}", p.display())))
        .collect()
}

pub fn eval(config: &RunConfig, args: &EvalArgs) -> Result<()> {
    let train = training_vectors(&args.features, args.train_session)?;
    let test_path = session_dir(&args.features, args.train_session).join(format!("test_{}.tsv", args.test_session));
    require_file(&test_path, "test vectors")?;
    let test = files::read_vectors(&test_path)?;
    let condition = Condition {
        train: args.train_session,
        test: args.test_session,
    };
    let exp = Experiment::new(condition, &train, test).context("eval stage")?;
    let mut pconf = protocol_config(config);
    let models = args.models.as_deref().map(load_models).transpose()?;
    if let Some(kind) = models.as_ref().and_then(|m| m.first()).map(|m| m.kind()) {
        if args.model.model.is_some() && kind != pconf.kind {
            return Err(usage(format!("--model {} disagrees with the {kind} models given", pconf.kind)));
        }
        pconf.kind = kind;
    }
    let protocol: Protocol = args.protocol.into();
    let report = match (protocol, &models) {
        (Protocol::A, Some(m)) => evaluate_protocol_a(&exp, &pconf, m),
        (Protocol::A, None) => run_protocol_a(&exp, &pconf).map(|o| o.report),
        (Protocol::B, m) => {
            let hypers: Option<BTreeMap<_, _>> = m.as_deref().map(selected_hypers);
            run_protocol_b(&exp, &pconf, hypers.as_ref())
        }
    }
    .context("eval stage")?;
    files::write(&config.output_dir.join(report_file_name(&report)), &report.to_tsv())?;
    if config.verbosity > 0 {
        print!("{}", report.to_table());
    }
    write_stage_log(
        config,
        "eval",
        &format!("protocol={protocol}\ncondition={condition}\nmodel={}\n", pconf.kind),
    )
}

pub fn pipeline(config: &RunConfig, corpus: &Path) -> Result<()> {
    let corpus = open_corpus(corpus)?;
    let output = run_pipeline(&corpus, config)?;
    let written = write_outputs(&output, config, &config.output_dir)?;
    if config.verbosity > 0 {
        print!("{}", output.tables());
    }
    log::info!("wrote {} files to {}", written.len(), config.output_dir.display());
    Ok(())
}

pub fn plot(config: &RunConfig, args: &PlotArgs) -> Result<()> {
    for p in &args.inputs {
        require_file(p, "input")?;
    }
    let (svg, default_name) = match args.style {
        PlotStyle::MeanBeats => (mean_beats_figure(&args.inputs)?, "mean_beats.svg"),
        PlotStyle::Peaks => (peaks_figure(config, args)?, "peaks.svg"),
    };
    let path = config.output_dir.join(args.name.as_deref().unwrap_or(default_name));
    files::write(&path, &svg)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn mean_beats_figure(inputs: &[PathBuf]) -> Result<String> {
    let mut series = Vec::new();
    for p in inputs {
        let beats = files::read_beats(p)?;
        if beats.n_beats() == 0 {
            bail!("{} contains no beats", p.display());
        }
        series.push(MeanBeat {
            label: format!("{} {}", beats.subject, beats.session),
            samples: beats.mean_beat(),
            pre_samples: beats.pre_samples,
            sample_rate_hz: beats.sample_rate_hz,
        });
    }
    let title = format!("Mean heartbeat of {} recordings", series.len());
    Ok(plot::mean_beats_svg(&series, &title))
}

fn peaks_figure(config: &RunConfig, args: &PlotArgs) -> Result<String> {
    let [trace_path] = args.inputs.as_slice() else {
        return Err(usage("the peaks style takes exactly one trace file"));
    };
    if !(args.start >= 0.0 && args.window > 0.0) {
        return Err(usage("--start must be >= 0 and --window > 0"));
    }
    let (rate, samples) =
        parse_trace_file(trace_path, &files::read(trace_path)?).context("reading trace")?;
    let seg = &config.segmentation;
    let acc = accentuate_samples(&samples, seg.wavelet_scale_s, rate)?;
    let threshold = threshold_curve(&acc, seg, rate);
    let peaks = match &args.peaks {
        Some(p) => {
            require_file(p, "peaks file")?;
            files::read_peaks(p)?
        }
        None => detect_r_peaks(&acc, seg, rate)?.indices,
    };
    let start = ((args.start * rate) as usize).min(acc.len().saturating_sub(1));
    let end = (start + (args.window * rate).ceil() as usize).min(acc.len());
    let shown: Vec<usize> = peaks
        .iter()
        .filter(|&&p| p >= start && p < end)
        .map(|&p| p - start)
        .collect();
    let name = trace_path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    Ok(plot::peaks_svg(
        &acc[start..end],
        &threshold[start..end],
        &shown,
        rate,
        start,
        &format!("R-peak detection, {name}"),
    ))
}
