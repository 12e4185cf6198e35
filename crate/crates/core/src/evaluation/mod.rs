//! Error rates and the two evaluation protocols.
//!
//! Protocol A trains every user's model against all other enrolled users and
//! tests on the same population. Protocol B retrains once per (target,
//! impostor) pair with the impostor's data held out, so every impostor at
//! test time is one the model has never seen.

pub mod metrics;
pub mod protocol;

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::classifiers::{Hyper, ModelKind};
use crate::dataset::{SessionId, SubjectId};
use crate::error::{Error, Result};

pub use metrics::{compute_eer, compute_hter, far_frr, mean_std, EerPoint};
pub use protocol::{
    evaluate_protocol_a, evaluate_protocol_b, run_protocol_a, run_protocol_b, selected_hypers, train_protocol_a,
    train_protocol_b, Experiment, PairModel, ProtocolConfig, ProtocolOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    A,
    B,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::A => "A",
            Protocol::B => "B",
        }
    }

    /// The headline metric: EER for A, HTER for B.
    pub fn metric_name(self) -> &'static str {
        match self {
            Protocol::A => "EER",
            Protocol::B => "HTER",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(Protocol::A),
            "b" | "B" => Ok(Protocol::B),
            other => Err(Error::InvalidParameter(format!("unknown protocol {other:?} (expected a or b)"))),
        }
    }
}

/// Training session and test session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    pub train: SessionId,
    pub test: SessionId,
}

impl Condition {
    pub const WITHIN_S1: Condition = Condition {
        train: SessionId::S1,
        test: SessionId::S1,
    };
    pub const WITHIN_S2: Condition = Condition {
        train: SessionId::S2,
        test: SessionId::S2,
    };
    pub const CROSS: Condition = Condition {
        train: SessionId::S1,
        test: SessionId::S2,
    };
    /// The rows of the published result tables, in order.
    pub const ALL: [Condition; 3] = [Self::WITHIN_S1, Self::WITHIN_S2, Self::CROSS];

    pub fn is_cross_session(&self) -> bool {
        self.train != self.test
    }

    /// File-name friendly label such as `S1-S2`.
    pub fn slug(&self) -> String {
        format!("{}-{}", self.train, self.test)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.train, self.test)
    }
}

/// Genuine and impostor scores for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub target: SubjectId,
    pub condition: Condition,
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn far_frr(&self, threshold: f64) -> (f64, f64) {
        far_frr(&self.genuine, &self.impostor, threshold)
    }

    pub fn eer(&self) -> Result<EerPoint> {
        compute_eer(&self.genuine, &self.impostor)
    }

    pub fn hter(&self, threshold: f64) -> Result<f64> {
        compute_hter(&self.genuine, &self.impostor, threshold)
    }
}

/// One Protocol B training: `target` against the held-out `excluded` user.
#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub excluded: SubjectId,
    pub hter: f64,
    pub far: f64,
    pub frr: f64,
    pub threshold: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub n_training_rows: usize,
    /// Rows of the excluded user found in the training set. Always zero;
    /// training refuses to run otherwise.
    pub excluded_rows_in_training: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserResult {
    pub target: SubjectId,
    pub hyper: Hyper,
    /// Protocol A: test EER. Protocol B: mean over excluded users of the EER
    /// of genuine against that user's scores.
    pub eer: f64,
    /// Threshold at which the test EER is attained (Protocol A).
    pub eer_threshold: f64,
    /// HTER at the decision threshold fitted on training scores. Protocol B
    /// averages over excluded users.
    pub hter: f64,
    /// Protocol B: mean of the per-pair thresholds.
    pub decision_threshold: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub pairs: Vec<PairResult>,
}

impl UserResult {
    pub fn metric(&self, protocol: Protocol) -> f64 {
        match protocol {
            Protocol::A => self.eer,
            Protocol::B => self.hter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub condition: Condition,
    pub model: ModelKind,
    pub seed: u64,
    pub config_digest: String,
    /// Sorted by target.
    pub users: Vec<UserResult>,
    /// Users without data in the training or test session.
    pub skipped: Vec<SubjectId>,
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl EvalReport {
    pub fn metric_values(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.metric(self.protocol)).collect()
    }

    /// Population mean and standard deviation of the headline metric.
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.metric_values())
    }

    pub fn mean_eer(&self) -> f64 {
        mean_std(&self.users.iter().map(|u| u.eer).collect::<Vec<_>>()).0
    }

    pub fn mean_hter(&self) -> f64 {
        mean_std(&self.users.iter().map(|u| u.hter).collect::<Vec<_>>()).0
    }

    fn preamble(&self, s: &mut String) {
        let _ = writeln!(s, "# protocol={}", self.protocol);
        let _ = writeln!(s, "# condition={}", self.condition);
        let _ = writeln!(s, "# model={}", self.model);
        let _ = writeln!(s, "# seed={}", self.seed);
        let _ = writeln!(s, "# config_digest={}", self.config_digest);
        let skipped: Vec<&str> = self.skipped.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(s, "# skipped={}", skipped.join(","));
    }

    /// Tab-separated report with a header row. Protocol B has one row per
    /// (target, excluded) pair; Protocol A one row per target.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        self.preamble(&mut s);
        match self.protocol {
            Protocol::A => {
                let _ = writeln!(
                    s,
                    "target\teer\teer_threshold\thter\tdecision_threshold\tn_genuine\tn_impostor\thyper"
                );
                for u in &self.users {
                    let _ = writeln!(
                        s,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        u.target,
                        u.eer,
                        u.eer_threshold,
                        u.hter,
                        u.decision_threshold,
                        u.n_genuine,
                        u.n_impostor,
                        u.hyper
                    );
                }
            }
            Protocol::B => {
                let _ = writeln!(
                    s,
                    "target\texcluded\thter\tfar\tfrr\tthreshold\tn_genuine\tn_impostor\tn_training_rows\texcluded_rows_in_training\thyper"
                );
                for u in &self.users {
                    for p in &u.pairs {
                        let _ = writeln!(
                            s,
                            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                            u.target,
                            p.excluded,
                            p.hter,
                            p.far,
                            p.frr,
                            p.threshold,
                            p.n_genuine,
                            p.n_impostor,
                            p.n_training_rows,
                            p.excluded_rows_in_training,
                            u.hyper
                        );
                    }
                }
            }
        }
        let (mean, std) = self.mean_std();
        let _ = writeln!(s, "# mean_{}={mean}", self.protocol.metric_name().to_lowercase());
        let _ = writeln!(s, "# std_{}={std}", self.protocol.metric_name().to_lowercase());
        s
    }

    /// Fixed-width per-user table in percent, ending with the average and
    /// standard deviation rows.
    pub fn to_table(&self) -> String {
        let metric = self.protocol.metric_name();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Protocol {} ({metric}), train {} / test {}, model {}, seed {}",
            self.protocol, self.condition.train, self.condition.test, self.model, self.seed
        );
        let _ = writeln!(s, "{:<12} {:>10} {:>10} {:>10}", "User", "EER (%)", "HTER (%)", "Genuine");
        for u in &self.users {
            let _ = writeln!(s, "{:<12} {:>10} {:>10} {:>10}", u.target, pct(u.eer), pct(u.hter), u.n_genuine);
        }
        let (mean, std) = self.mean_std();
        let _ = writeln!(s, "{:<24} {:>10}", format!("Average {metric} (%)"), pct(mean));
        let _ = writeln!(s, "{:<24} {:>10}", "Standard Deviation (%)", pct(std));
        if !self.skipped.is_empty() {
            let _ = writeln!(s, "skipped users: {}", self.skipped.len());
        }
        s
    }
}

/// One line per report in the layout of the published tables: training
/// session, test session, average and standard deviation in percent.
pub fn summary_table(protocol: Protocol, reports: &[&EvalReport]) -> String {
    let metric = protocol.metric_name();
    let mut s = String::new();
    let _ = writeln!(s, "Protocol {protocol}");
    let _ = writeln!(
        s,
        "{:<10} {:<10} {:>18} {:>24}",
        "Training",
        "Test",
        format!("Average {metric} (%)"),
        "Standard Deviation (%)"
    );
    for r in reports.iter().filter(|r| r.protocol == protocol) {
        let (mean, std) = r.mean_std();
        let _ = writeln!(
            s,
            "{:<10} {:<10} {:>18} {:>24}",
            r.condition.train.to_string(),
            r.condition.test.to_string(),
            pct(mean),
            pct(std)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(id: &str, eer: f64, hter: f64) -> UserResult {
        UserResult {
            target: SubjectId::new(id).unwrap(),
            hyper: Hyper::Knn { k: 1 },
            eer,
            eer_threshold: 0.5,
            hter,
            decision_threshold: 0.5,
            n_genuine: 10,
            n_impostor: 90,
            pairs: vec![],
        }
    }

    fn report(protocol: Protocol) -> EvalReport {
        EvalReport {
            protocol,
            condition: Condition::CROSS,
            model: ModelKind::Knn,
            seed: 7,
            config_digest: "abc".into(),
            users: vec![user("a", 0.1, 0.2), user("b", 0.3, 0.4)],
            skipped: vec![],
        }
    }

    #[test]
    fn aggregate_matches_per_user_values() {
        let r = report(Protocol::A);
        let (m, s) = r.mean_std();
        assert!((m - 0.2).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        let (m, _) = report(Protocol::B).mean_std();
        assert!((m - 0.3).abs() < 1e-12);
    }

    #[test]
    fn tsv_has_header_and_rows() {
        let t = report(Protocol::A).to_tsv();
        let rows: Vec<&str> = t.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].starts_with("target\teer"));
        assert!(t.contains("# condition=S1->S2"));
    }

    #[test]
    fn table_mirrors_published_layout() {
        let t = report(Protocol::A).to_table();
        assert!(t.contains("Average EER (%)"));
        assert!(t.contains("Standard Deviation (%)"));
        assert!(t.contains("20.00"));
        let r = report(Protocol::A);
        let s = summary_table(Protocol::A, &[&r]);
        assert!(s.lines().nth(2).unwrap().starts_with("S1         S2"));
    }

    #[test]
    fn parse_labels() {
        assert_eq!("b".parse::<Protocol>().unwrap(), Protocol::B);
        assert!("c".parse::<Protocol>().is_err());
        assert_eq!(Condition::CROSS.to_string(), "S1->S2");
        assert_eq!(Condition::WITHIN_S2.slug(), "S2-S2");
    }
}
