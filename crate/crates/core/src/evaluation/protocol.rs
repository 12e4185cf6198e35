use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;

use super::{compute_eer, far_frr, mean_std, Condition, EvalReport, PairResult, Protocol, UserResult};
use crate::classifiers::{AuthModel, Hyper, HyperGrid, ModelKind, TrainingPool};
use crate::dataset::SubjectId;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub kind: ModelKind,
    pub grid: HyperGrid,
    pub seed: u64,
    /// Protocol B normally reuses each target's hyperparameters selected on
    /// the full training pool; set this to cross-validate every pair again.
    pub reselect_per_pair: bool,
    pub config_digest: String,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            kind: ModelKind::Svm,
            grid: HyperGrid::default(),
            seed: 0,
            reselect_per_pair: false,
            config_digest: String::new(),
        }
    }
}

/// Projected training vectors of one session and test vectors of another
/// (or the same) session.
#[derive(Debug)]
pub struct Experiment {
    pub condition: Condition,
    pub pool: Arc<TrainingPool>,
    pub test: Vec<FeatureVector>,
    /// Users with both training and test vectors, sorted.
    pub targets: Vec<SubjectId>,
    /// Users present on one side only.
    pub skipped: Vec<SubjectId>,
}

impl Experiment {
    pub fn new(condition: Condition, train: &[FeatureVector], test: Vec<FeatureVector>) -> Result<Self> {
        if let Some(v) = train.iter().find(|v| v.session != condition.train) {
            return Err(Error::Evaluation(format!(
                "training vector of {} from session {}, expected {}",
                v.subject, v.session, condition.train
            )));
        }
        Self::with_pool(condition, Arc::new(TrainingPool::new(train)?), test)
    }

    /// Builds an experiment on an existing pool, so several test conditions
    /// can share one set of trained models.
    pub fn with_pool(condition: Condition, pool: Arc<TrainingPool>, test: Vec<FeatureVector>) -> Result<Self> {
        if let Some(v) = test.iter().find(|v| v.session != condition.test) {
            return Err(Error::Evaluation(format!(
                "test vector of {} from session {}, expected {}",
                v.subject, v.session, condition.test
            )));
        }
        let in_train: BTreeSet<&SubjectId> = pool.subjects.iter().collect();
        let in_test: BTreeSet<&SubjectId> = test.iter().map(|v| &v.subject).collect();
        let targets: Vec<SubjectId> = in_train.intersection(&in_test).map(|s| (*s).clone()).collect();
        let skipped: Vec<SubjectId> = in_train
            .symmetric_difference(&in_test)
            .map(|s| (*s).clone())
            .collect();
        if targets.len() < 2 {
            return Err(Error::Evaluation(format!(
                "need at least two users with training and test data, found {}",
                targets.len()
            )));
        }
        Ok(Experiment {
            condition,
            pool,
            test,
            targets,
            skipped,
        })
    }

    fn scores_of(&self, model: &AuthModel, subject: &SubjectId) -> Result<Vec<f64>> {
        self.test
            .iter()
            .filter(|v| &v.subject == subject)
            .map(|v| model.score(&v.values))
            .collect()
    }

    fn impostor_scores(&self, model: &AuthModel) -> Result<Vec<f64>> {
        self.test
            .iter()
            .filter(|v| v.subject != model.target)
            .map(|v| model.score(&v.values))
            .collect()
    }

    fn report(&self, protocol: Protocol, config: &ProtocolConfig, users: Vec<UserResult>) -> EvalReport {
        EvalReport {
            protocol,
            condition: self.condition,
            model: config.kind,
            seed: config.seed,
            config_digest: config.config_digest.clone(),
            users,
            skipped: self.skipped.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub report: EvalReport,
    /// One per target, in target order.
    pub models: Vec<AuthModel>,
}

pub fn selected_hypers(models: &[AuthModel]) -> BTreeMap<SubjectId, Hyper> {
    models.iter().map(|m| (m.target.clone(), m.hyper)).collect()
}

impl ProtocolOutcome {
    pub fn selected_hypers(&self) -> BTreeMap<SubjectId, Hyper> {
        selected_hypers(&self.models)
    }
}

/// Trains one cross-validated model per target against the whole pool.
pub fn train_protocol_a(pool: &TrainingPool, targets: &[SubjectId], config: &ProtocolConfig) -> Result<Vec<AuthModel>> {
    let all_rows = pool.rows_excluding(None);
    targets
        .par_iter()
        .map(|target| pool.train(target, &all_rows, config.kind, &config.grid, config.seed))
        .collect()
}

fn find_model<'a>(models: &'a [AuthModel], target: &SubjectId) -> Result<&'a AuthModel> {
    models
        .iter()
        .find(|m| &m.target == target)
        .ok_or_else(|| Error::Evaluation(format!("no trained model for {target}")))
}

/// Scores every target's model against its own test vectors (genuine) and
/// every other user's test vectors (impostor).
pub fn evaluate_protocol_a(exp: &Experiment, config: &ProtocolConfig, models: &[AuthModel]) -> Result<EvalReport> {
    let users = exp
        .targets
        .par_iter()
        .map(|target| {
            let model = find_model(models, target)?;
            let genuine = exp.scores_of(model, target)?;
            let impostor = exp.impostor_scores(model)?;
            let eer = compute_eer(&genuine, &impostor)?;
            let (far, frr) = far_frr(&genuine, &impostor, model.decision_threshold);
            Ok(UserResult {
                target: target.clone(),
                hyper: model.hyper,
                eer: eer.eer,
                eer_threshold: eer.threshold,
                hter: 0.5 * (far + frr),
                decision_threshold: model.decision_threshold,
                n_genuine: genuine.len(),
                n_impostor: impostor.len(),
                pairs: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(exp.report(Protocol::A, config, users))
}

/// Shared-population protocol: each target is trained against every other
/// user's training vectors and tested against every other user's test vectors.
pub fn run_protocol_a(exp: &Experiment, config: &ProtocolConfig) -> Result<ProtocolOutcome> {
    let models = train_protocol_a(&exp.pool, &exp.targets, config)?;
    let report = evaluate_protocol_a(exp, config, &models)?;
    Ok(ProtocolOutcome { report, models })
}

/// Model for `target` trained without any vector of `excluded`.
#[derive(Debug, Clone)]
pub struct PairModel {
    pub excluded: SubjectId,
    pub model: AuthModel,
    pub n_training_rows: usize,
    pub excluded_rows_in_training: usize,
}

/// Trains every (target, excluded) pair among `targets`, in target-major
/// order. `selected` supplies per-target hyperparameters (typically from
/// Protocol A); targets without an entry are cross-validated on the full
/// pool, and with `reselect_per_pair` every pair is cross-validated on its
/// own reduced training set.
///
/// Every training row set is checked to contain none of the excluded
/// user's vectors before training starts.
pub fn train_protocol_b(
    pool: &TrainingPool,
    targets: &[SubjectId],
    config: &ProtocolConfig,
    selected: Option<&BTreeMap<SubjectId, Hyper>>,
) -> Result<Vec<PairModel>> {
    if targets.len() < 3 {
        return Err(Error::Evaluation(format!(
            "protocol B needs at least three users, found {}",
            targets.len()
        )));
    }
    let all_rows = pool.rows_excluding(None);
    let base: Vec<Option<Hyper>> = targets
        .par_iter()
        .map(|u| {
            if config.reselect_per_pair {
                return Ok(None);
            }
            match selected.and_then(|s| s.get(u)) {
                Some(h) if h.kind() == config.kind => Ok(Some(*h)),
                _ => pool
                    .cross_validate(u, &all_rows, config.kind, &config.grid, config.seed)
                    .map(|r| Some(r.selected)),
            }
        })
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> = (0..targets.len())
        .flat_map(|u| (0..targets.len()).filter(move |&v| v != u).map(move |v| (u, v)))
        .collect();
    pairs
        .par_iter()
        .map(|&(ui, vi)| {
            let (u, v) = (&targets[ui], &targets[vi]);
            let rows = pool.rows_excluding(Some(v));
            let leaked = rows.iter().filter(|&&r| &pool.subjects[r] == v).count();
            if leaked > 0 {
                return Err(Error::Evaluation(format!(
                    "training set for {u} contains {leaked} vectors of excluded user {v}"
                )));
            }
            let hyper = match base[ui] {
                Some(h) => h,
                None => pool.cross_validate(u, &rows, config.kind, &config.grid, config.seed)?.selected,
            };
            Ok(PairModel {
                excluded: v.clone(),
                model: pool.fit(u, &rows, hyper)?,
                n_training_rows: rows.len(),
                excluded_rows_in_training: leaked,
            })
        })
        .collect()
}

/// HTER of each pair model on the target's genuine test vectors against the
/// excluded user's test vectors, averaged per target.
pub fn evaluate_protocol_b(exp: &Experiment, config: &ProtocolConfig, pairs: &[PairModel]) -> Result<EvalReport> {
    let users = exp
        .targets
        .par_iter()
        .map(|u| {
            let mine: Vec<&PairModel> = pairs
                .iter()
                .filter(|p| &p.model.target == u && exp.targets.contains(&p.excluded))
                .collect();
            if mine.len() != exp.targets.len() - 1 {
                return Err(Error::Evaluation(format!(
                    "{u} has {} pair models, expected {}",
                    mine.len(),
                    exp.targets.len() - 1
                )));
            }
            let mut results = Vec::with_capacity(mine.len());
            let mut eers = Vec::with_capacity(mine.len());
            for p in &mine {
                let genuine = exp.scores_of(&p.model, u)?;
                let impostor = exp.scores_of(&p.model, &p.excluded)?;
                eers.push(compute_eer(&genuine, &impostor)?.eer);
                let (far, frr) = far_frr(&genuine, &impostor, p.model.decision_threshold);
                results.push(PairResult {
                    excluded: p.excluded.clone(),
                    hter: 0.5 * (far + frr),
                    far,
                    frr,
                    threshold: p.model.decision_threshold,
                    n_genuine: genuine.len(),
                    n_impostor: impostor.len(),
                    n_training_rows: p.n_training_rows,
                    excluded_rows_in_training: p.excluded_rows_in_training,
                });
            }
            let mean = |v: Vec<f64>| mean_std(&v).0;
            Ok(UserResult {
                target: u.clone(),
                // Hyperparameters only differ across pairs with per-pair
                // reselection; the first pair's are reported.
                hyper: mine[0].model.hyper,
                eer: mean(eers),
                eer_threshold: f64::NAN,
                hter: mean(results.iter().map(|r| r.hter).collect()),
                decision_threshold: mean(results.iter().map(|r| r.threshold).collect()),
                n_genuine: results[0].n_genuine,
                n_impostor: results.iter().map(|r| r.n_impostor).sum(),
                pairs: results,
            })
        })
        .collect::<Result<_>>()?;
    Ok(exp.report(Protocol::B, config, users))
}

/// Leave-one-impostor-out protocol. For every target `u` and every other
/// user `v`, `u`'s model is retrained without any of `v`'s vectors and its
/// error rates are measured against `v`'s test vectors only.
pub fn run_protocol_b(
    exp: &Experiment,
    config: &ProtocolConfig,
    selected: Option<&BTreeMap<SubjectId, Hyper>>,
) -> Result<EvalReport> {
    let pairs = train_protocol_b(&exp.pool, &exp.targets, config, selected)?;
    evaluate_protocol_b(exp, config, &pairs)
}
