//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The trend criteria run the full pipeline on ten synthetic corpora, which
//! takes several minutes on a single core.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::checks;
use ecg_auth_core::pipeline::{prepare_corpus, run_pipeline, write_outputs, PipelineOutput};
use ecg_auth_core::segmentation::{rejection_count, reject_outlier_beats, BeatMatrix};
use ecg_auth_core::synth::{generate_corpus, SynthConfig};
use ecg_auth_core::{Condition, Corpus, PeakList, Protocol, RunConfig, SessionId, SubjectId};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
const REQUIRED_SEEDS: usize = 8;

const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const EER_SETS: usize = 1000;
const SVM_TOL: f64 = 1e-4;
const PCA_TOL: f64 = 1e-8;
const GRADIENT_TOL: f64 = 1e-5;

const NOTCH_TOL: f64 = 0.05;
const PASSBAND: (f64, f64) = (0.95, 1.05);
const SYMMETRY_TOL: f64 = 1e-9;

const MIN_SNR_DB: f64 = 10.0;
const MIN_PRECISION: f64 = 0.98;
const MIN_RECALL: f64 = 0.98;
const MAX_TIMING: usize = 3;

const TREND_SUBJECTS: usize = 10;
const TREND_DURATION_S: f64 = 240.0;
const TREND_DRIFT: f64 = 0.15;
const MAX_WITHIN_EER: f64 = 0.05;
const RUN_BUDGET: Duration = Duration::from_secs(600);

struct Gate {
    failures: usize,
}

impl Gate {
    fn report(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("criterion {id} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn oracles(gate: &mut Gate) {
    let start = Instant::now();
    let eer = checks::eer_worst_scaled_gap(EER_SETS, 1);
    let svm = checks::svm_worst_dual_gap(300, 2);
    let pca = checks::pca_worst_eigen_gap(300, 3);
    let grad = checks::logistic_worst_relative_gradient_error(300, 4);
    let elapsed = start.elapsed();
    let pass = eer <= 1.0 && svm <= SVM_TOL && pca <= PCA_TOL && grad <= GRADIENT_TOL && elapsed < ORACLE_BUDGET;
    gate.report(
        1,
        "oracle equivalence",
        pass,
        format!(
            "eer gap x min(n_g,n_i) {eer:.3} (<= 1), svm dual gap {svm:.2e} (<= {SVM_TOL:e}), \
             pca eigen gap {pca:.2e} (<= {PCA_TOL:e}), logistic gradient rel err {grad:.2e} (<= {GRADIENT_TOL:e}), \
             {:.1}s (< {}s)",
            elapsed.as_secs_f64(),
            ORACLE_BUDGET.as_secs()
        ),
    );
}

fn dsp(gate: &mut Gate) {
    let m = checks::measure_dsp();
    let pass = m.bandpass_dc_gain == 0.0
        && m.notch_residual < NOTCH_TOL
        && (PASSBAND.0..=PASSBAND.1).contains(&m.passband_gain)
        && m.symmetry_error <= SYMMETRY_TOL;
    gate.report(
        2,
        "signal conditioning",
        pass,
        format!(
            "band-pass dc gain {:.1e} (= 0), 50 Hz residual {:.4} (< {NOTCH_TOL}), 10 Hz gain {:.4} (in [{}, {}]), \
             symmetry error {:.1e} (<= {SYMMETRY_TOL:e})",
            m.bandpass_dc_gain, m.notch_residual, m.passband_gain, PASSBAND.0, PASSBAND.1, m.symmetry_error
        ),
    );
}

fn random_beats(rows: usize, rng: &mut ChaCha8Rng) -> BeatMatrix {
    let width = rng.gen_range(1..40);
    BeatMatrix {
        beats: Array2::from_shape_fn((rows, width), |_| rng.gen_range(-1.0..1.0)),
        subject: SubjectId::new("s000").expect("valid id"),
        session: SessionId::S1,
        sample_rate_hz: 300.0,
        origin_peaks: PeakList {
            indices: (0..rows).map(|i| 50 * (i + 1)).collect(),
            trace_ref: None,
        },
        row_peaks: (0..rows).map(|i| 50 * (i + 1)).collect(),
        pre_samples: 0,
    }
}

fn segmentation(gate: &mut Gate) {
    let stats = checks::detection_stats(&SEEDS, &SynthConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut rejection_ok = true;
    for rows in 2..=300 {
        let kept = reject_outlier_beats(&random_beats(rows, &mut rng), 0.2).map(|b| b.n_beats());
        let expected = rows - (0.2 * rows as f64).ceil() as usize;
        rejection_ok &= kept.ok() == Some(expected) && rows - rejection_count(rows, 0.2) == expected;
    }
    let pass = stats.min_snr_db >= MIN_SNR_DB
        && stats.worst_precision >= MIN_PRECISION
        && stats.worst_recall >= MIN_RECALL
        && stats.worst_timing <= MAX_TIMING
        && rejection_ok;
    gate.report(
        3,
        "segmentation",
        pass,
        format!(
            "{} recordings, min SNR {:.1} dB (>= {MIN_SNR_DB}), worst precision {:.4} / recall {:.4} (>= {MIN_PRECISION}), \
             worst timing {} samples (<= {MAX_TIMING}), rejection keeps N - ceil(0.2N) for N in 2..=300: {rejection_ok}",
            stats.traces, stats.min_snr_db, stats.worst_precision, stats.worst_recall, stats.worst_timing
        ),
    );
}

fn trend_corpus(seed: u64) -> Corpus {
    let config = SynthConfig {
        n_subjects: TREND_SUBJECTS,
        duration_s: TREND_DURATION_S,
        session_drift: TREND_DRIFT,
        seed,
        ..SynthConfig::default()
    };
    generate_corpus(&config).expect("valid synthetic config").corpus
}

struct SeedRun {
    seed: u64,
    output: PipelineOutput,
    elapsed: Duration,
    /// Training vectors per user and training session, counted independently
    /// of the pipeline's own bookkeeping.
    train_counts: BTreeMap<(SubjectId, SessionId), usize>,
}

impl SeedRun {
    fn eer(&self, condition: Condition) -> f64 {
        self.output.report(Protocol::A, condition).expect("all six reports").mean_eer()
    }

    fn hter(&self, protocol: Protocol, condition: Condition) -> f64 {
        self.output.report(protocol, condition).expect("all six reports").mean_hter()
    }
}

fn run_seed(seed: u64) -> SeedRun {
    let corpus = trend_corpus(seed);
    let config = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let start = Instant::now();
    let output = run_pipeline(&corpus, &config).expect("pipeline runs");
    let elapsed = start.elapsed();
    let prepared = prepare_corpus(&corpus, &config).expect("corpus prepares");
    let train_counts = prepared
        .sessions
        .iter()
        .map(|(key, s)| (key.clone(), s.train.n_beats()))
        .collect();
    println!("  seed {seed}: pipeline {:.1}s", elapsed.as_secs_f64());
    SeedRun {
        seed,
        output,
        elapsed,
        train_counts,
    }
}

fn within_cross(gate: &mut Gate, runs: &[SeedRun]) {
    let [within1, within2, cross] = [Condition::WITHIN_S1, Condition::WITHIN_S2, Condition::CROSS];
    let mut good = 0;
    let mut lines = Vec::new();
    for r in runs {
        let (w1, w2, c) = (r.eer(within1), r.eer(within2), r.eer(cross));
        let ok = w1 <= MAX_WITHIN_EER && w2 <= MAX_WITHIN_EER && c > w1 && c > w2;
        good += ok as usize;
        lines.push(format!("{}:{:.2}/{:.2}/{:.2}%", r.seed, 100.0 * w1, 100.0 * w2, 100.0 * c));
    }
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap_or_default();
    let pass = good >= REQUIRED_SEEDS && slowest <= RUN_BUDGET;
    gate.report(
        4,
        "session drift (EER)",
        pass,
        format!(
            "{good}/{} seeds with within EER <= {:.0}% and cross > both within (need {REQUIRED_SEEDS}); \
             slowest run {:.1}s (<= {}s); seed:S1-S1/S2-S2/S1-S2 {}",
            runs.len(),
            100.0 * MAX_WITHIN_EER,
            slowest.as_secs_f64(),
            RUN_BUDGET.as_secs(),
            lines.join(" ")
        ),
    );
}

fn protocols(gate: &mut Gate, runs: &[SeedRun]) {
    let mut per_condition = Vec::new();
    let mut all_conditions = 0;
    for r in runs {
        all_conditions += Condition::ALL
            .iter()
            .all(|&c| r.hter(Protocol::B, c) >= r.hter(Protocol::A, c)) as usize;
    }
    for &c in &Condition::ALL {
        let n = runs
            .iter()
            .filter(|r| r.hter(Protocol::B, c) >= r.hter(Protocol::A, c))
            .count();
        per_condition.push(format!("{c} {n}"));
    }
    let cross_worse = runs
        .iter()
        .filter(|r| {
            let b_cross = r.hter(Protocol::B, Condition::CROSS);
            b_cross > r.hter(Protocol::B, Condition::WITHIN_S1) && b_cross > r.hter(Protocol::B, Condition::WITHIN_S2)
        })
        .count();
    let pass = all_conditions >= REQUIRED_SEEDS && cross_worse >= REQUIRED_SEEDS;
    gate.report(
        5,
        "protocol B vs A (HTER)",
        pass,
        format!(
            "{all_conditions}/{} seeds with B >= A in every condition (per condition: {}); \
             {cross_worse}/{} seeds with cross B > both within B (need {REQUIRED_SEEDS} each)",
            runs.len(),
            per_condition.join(", "),
            runs.len()
        ),
    );
}

fn leave_one_out(gate: &mut Gate, runs: &[SeedRun]) {
    let mut pairs = 0;
    let mut violations = Vec::new();
    for r in runs {
        for report in r.output.reports.iter().filter(|x| x.protocol == Protocol::B) {
            let session = report.condition.train;
            let pool: usize = r
                .train_counts
                .iter()
                .filter(|((_, s), _)| *s == session)
                .map(|(_, n)| n)
                .sum();
            for user in &report.users {
                for p in &user.pairs {
                    pairs += 1;
                    let excluded = r.train_counts[&(p.excluded.clone(), session)];
                    if p.excluded_rows_in_training != 0 || p.n_training_rows + excluded != pool {
                        violations.push(format!(
                            "seed {} {} {}/{}: {} leaked, {} + {} != {}",
                            r.seed,
                            report.condition,
                            user.target,
                            p.excluded,
                            p.excluded_rows_in_training,
                            p.n_training_rows,
                            excluded,
                            pool
                        ));
                    }
                }
            }
        }
    }
    let pass = pairs > 0 && violations.is_empty();
    gate.report(
        6,
        "excluded user absent from training",
        pass,
        format!(
            "{pairs} pair trainings checked, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    );
}

fn written_bytes(output: &PipelineOutput, config: &RunConfig) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().expect("temp dir");
    let paths = write_outputs(output, config, dir.path()).expect("outputs written");
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().expect("file name").to_string_lossy().into_owned();
            (name, std::fs::read(p).expect("readable output"))
        })
        .collect()
}

fn determinism(gate: &mut Gate, first: &SeedRun) {
    let config = RunConfig {
        seed: first.seed,
        ..RunConfig::default()
    };
    let again = run_pipeline(&trend_corpus(first.seed), &config).expect("pipeline runs");
    let a = written_bytes(&first.output, &config);
    let b = written_bytes(&again, &config);
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let pass = a.len() == b.len() && a.len() == 8 && differing.is_empty();
    gate.report(
        7,
        "determinism",
        pass,
        format!(
            "seed {}: {} files compared byte for byte, {} differ{}",
            first.seed,
            a.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.join(", ")) }
        ),
    );
}

fn main() -> ExitCode {
    let mut gate = Gate { failures: 0 };
    oracles(&mut gate);
    dsp(&mut gate);
    segmentation(&mut gate);

    println!("running the pipeline on {} synthetic corpora", SEEDS.len());
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    within_cross(&mut gate, &runs);
    protocols(&mut gate, &runs);
    leave_one_out(&mut gate, &runs);
    determinism(&mut gate, &runs[0]);

    if gate.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failures);
        ExitCode::FAILURE
    }
}
