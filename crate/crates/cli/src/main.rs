use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use ecg_auth_core::{ModelKind, Protocol, RunConfig, SessionId};

mod commands;

/// Exit status for invalid invocations, matching clap's own usage errors.
const USAGE_EXIT: u8 = 2;
const THREADS_ENV: &str = "ECG_AUTH_THREADS";

/// ECG biometric authentication: synthetic corpora, signal conditioning,
/// beat segmentation, PCA features, per-user classifiers and the two
/// evaluation protocols.
///
/// Every stage reads files and writes files into the output directory, so
/// each can be run and inspected on its own. Settings come from built-in
/// defaults, then the `--config` file, then `--set` and the dedicated flags.
/// The environment variable ECG_AUTH_THREADS caps the number of worker
/// threads.
#[derive(Debug, Parser)]
#[command(name = "ecg-auth", version, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Flat key=value configuration file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override any configuration key, e.g. `--set segment.threshold_factor=2.5` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Run seed [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Band-pass lower cutoff in Hz [default: 0.5]
    #[arg(long, global = true, value_name = "HZ")]
    hp: Option<f64>,

    /// Band-pass upper cutoff in Hz [default: 40]
    #[arg(long, global = true, value_name = "HZ")]
    lp: Option<f64>,

    /// Butterworth order of each band edge, even [default: 4]
    #[arg(long, global = true)]
    order: Option<usize>,

    /// Mains notch frequency in Hz [default: 50]
    #[arg(long, global = true, value_name = "HZ")]
    mains: Option<f64>,

    /// Mains notch quality factor [default: 30]
    #[arg(long = "mains-q", global = true, value_name = "Q")]
    mains_q: Option<f64>,

    /// More progress output (repeat for detail) [default verbosity: 1]
    #[arg(short, long, global = true, action = clap::ArgAction::Count, conflicts_with = "quiet")]
    verbose: u8,

    /// Warnings and errors only
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-subject, two-session corpus with ground-truth R peaks
    Synth(SynthArgs),
    /// Load and validate a corpus; writes a per-trace inventory
    Ingest(CorpusArg),
    /// Notch and band-pass filter every session; writes a conditioned corpus
    Preprocess(CorpusArg),
    /// Detect R peaks and cut beats from a conditioned corpus, split into train and test parts
    Segment(CorpusArg),
    /// Fit the standardisation and PCA model per training session and project all beats
    Features(FeaturesArgs),
    /// Cross-validate and train one authenticator per user
    Train(TrainArgs),
    /// Evaluate one session condition under Protocol A or B
    Eval(EvalArgs),
    /// Run every stage for all session conditions and both protocols
    Pipeline(CorpusArg),
    /// Draw an SVG figure of mean beats or of peak detection
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of subjects
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    /// Seconds of signal per subject and session
    #[arg(long, default_value_t = 240.0)]
    duration: f64,
    /// Sample rate in Hz
    #[arg(long, default_value_t = 300.0)]
    rate: f64,
    /// Relative change of each subject's waveform parameters between sessions
    #[arg(long, default_value_t = 0.15)]
    drift: f64,
    /// Relative beat-to-beat variation of wave amplitudes and widths
    #[arg(long, default_value_t = ecg_auth_core::synth::DEFAULT_BEAT_VARIABILITY)]
    beat_variability: f64,
    /// Recordings per session; the session duration is split evenly across them
    #[arg(long, default_value_t = 2)]
    recordings: u32,
}

#[derive(Debug, Args)]
struct CorpusArg {
    /// Corpus directory containing manifest.tsv
    corpus: PathBuf,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    /// Directory written by `segment`
    beats: PathBuf,
    /// Training session(s) to fit a feature model on [default: every session present]
    #[arg(long, value_parser = parse_session)]
    train_session: Vec<SessionId>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Classifier [default: svm]
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    /// Hyperparameter grid as `key=v1,v2;key=v` over svm_c, svm_gamma, knn_k, logistic_l2, folds
    /// [default: svm_c=0.1,1,10,100;svm_gamma=0.001,0.01,0.1,1;knn_k=1,3,5,7,9;logistic_l2=1,0.1,0.01;folds=5]
    #[arg(long, value_name = "SPEC")]
    grid: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory written by `features`
    features: PathBuf,
    /// Session whose training vectors are used
    #[arg(long, value_parser = parse_session, default_value = "S1")]
    train_session: SessionId,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory written by `features`
    features: PathBuf,
    /// Evaluation protocol: a (shared population) or b (leave one impostor out)
    #[arg(long, value_enum, default_value_t = ProtocolChoice::A)]
    protocol: ProtocolChoice,
    /// Session the models are trained on
    #[arg(long, value_parser = parse_session, default_value = "S1")]
    train_session: SessionId,
    /// Session the test vectors come from
    #[arg(long, value_parser = parse_session, default_value = "S1")]
    test_session: SessionId,
    /// Directory written by `train`; Protocol A reuses its models, Protocol B its hyperparameters
    #[arg(long, value_name = "DIR")]
    models: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlotStyle {
    /// Overlaid mean beat of each input beats file
    MeanBeats,
    /// Detection signal, running-mean threshold and R peaks of one trace file
    Peaks,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Figure type
    #[arg(long, value_enum)]
    style: PlotStyle,
    /// Beats files (`mean-beats`) or a single conditioned trace file (`peaks`)
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Peaks file to overlay (`peaks` style); detection is re-run when omitted
    #[arg(long, value_name = "FILE")]
    peaks: Option<PathBuf>,
    /// Start of the plotted window in seconds (`peaks` style)
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    /// Length of the plotted window in seconds (`peaks` style)
    #[arg(long, default_value_t = 10.0)]
    window: f64,
    /// Output file name inside the output directory [default: mean_beats.svg or peaks.svg]
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelChoice {
    Svm,
    Logistic,
    Knn,
}

impl From<ModelChoice> for ModelKind {
    fn from(m: ModelChoice) -> Self {
        match m {
            ModelChoice::Svm => ModelKind::Svm,
            ModelChoice::Logistic => ModelKind::Logistic,
            ModelChoice::Knn => ModelKind::Knn,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolChoice {
    A,
    B,
}

impl From<ProtocolChoice> for Protocol {
    fn from(p: ProtocolChoice) -> Self {
        match p {
            ProtocolChoice::A => Protocol::A,
            ProtocolChoice::B => Protocol::B,
        }
    }
}

fn parse_session(s: &str) -> Result<SessionId, String> {
    s.parse().map_err(|e: ecg_auth_core::Error| e.to_string())
}

/// Errors reported with exit status 2 and a usage line.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn build_config(g: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        config
            .apply_text(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    for pair in &g.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        config.set(k.trim(), v.trim()).map_err(|e| usage(e.to_string()))?;
    }
    let f = &mut config.filter;
    if let Some(v) = g.hp {
        f.hp_cutoff_hz = v;
    }
    if let Some(v) = g.lp {
        f.lp_cutoff_hz = v;
    }
    if let Some(v) = g.order {
        f.order = v;
    }
    if let Some(v) = g.mains {
        f.mains_hz = v;
    }
    if let Some(v) = g.mains_q {
        f.mains_q = v;
    }
    if let Some(v) = g.seed {
        config.seed = v;
    }
    if let Some(v) = &g.out {
        config.output_dir = v.clone();
    }
    if g.quiet {
        config.verbosity = 0;
    } else if g.verbose > 0 {
        config.verbosity = config.verbosity.max(1).saturating_add(g.verbose);
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn apply_model_args(config: &mut RunConfig, args: &ModelArgs) -> anyhow::Result<()> {
    if let Some(m) = args.model {
        config.model = m.into();
    }
    if let Some(spec) = &args.grid {
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| usage(format!("--grid entries are key=values, got {part:?}")))?;
            config
                .set(&format!("grid.{}", k.trim()), v)
                .map_err(|e| usage(e.to_string()))?;
        }
    }
    config.validate().map_err(|e| usage(e.to_string()))
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow::anyhow!("cannot start thread pool: {e}"))
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .parse_default_env()
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    let mut config = build_config(&cli.global)?;
    init_logging(config.verbosity);
    match cli.command {
        Command::Synth(a) => commands::synth(&config, &a),
        Command::Ingest(a) => commands::ingest(&config, &a.corpus),
        Command::Preprocess(a) => commands::preprocess(&config, &a.corpus),
        Command::Segment(a) => commands::segment(&config, &a.corpus),
        Command::Features(a) => commands::features(&config, &a),
        Command::Train(a) => {
            apply_model_args(&mut config, &a.model)?;
            commands::train(&config, &a)
        }
        Command::Eval(a) => {
            apply_model_args(&mut config, &a.model)?;
            commands::eval(&config, &a)
        }
        Command::Pipeline(a) => commands::pipeline(&config, &a.corpus),
        Command::Plot(a) => commands::plot(&config, &a),
    }
}

fn subcommand_usage(name: Option<&str>) -> String {
    let mut cmd = Cli::command();
    match name.and_then(|n| cmd.find_subcommand_mut(n)) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = std::env::args().skip(1).find(|a| Cli::command().find_subcommand(a).is_some());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<UsageError>() {
            Some(u) => {
                eprintln!("error: {u}\n\n{}\n\nFor more information, try '--help'.", subcommand_usage(name.as_deref()));
                ExitCode::from(USAGE_EXIT)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}
