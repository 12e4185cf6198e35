//! Per-user binary authenticators: RBF SVM, logistic regression and kNN,
//! with stratified cross-validated hyperparameter selection and a decision
//! threshold fitted on training scores.

pub mod cv;
pub mod knn;
pub mod logistic;
pub mod svm;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::dataset::SubjectId;
use crate::error::{Error, Result};
use crate::evaluation::metrics::compute_eer;
use crate::features::FeatureVector;

pub use cv::{cross_validate, stratified_folds, CvEntry, CvReport};
pub use knn::KnnPayload;
pub use logistic::{LogisticParams, LogisticPayload};
pub use svm::{SvmParams, SvmPayload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Svm,
    Logistic,
    Knn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Svm => "svm_rbf",
            ModelKind::Logistic => "logistic",
            ModelKind::Knn => "knn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" | "svm_rbf" => Ok(ModelKind::Svm),
            "logistic" => Ok(ModelKind::Logistic),
            "knn" => Ok(ModelKind::Knn),
            other => Err(Error::InvalidParameter(format!(
                "unknown model kind {other:?} (expected svm, logistic or knn)"
            ))),
        }
    }
}

/// One hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hyper {
    Svm { c: f64, gamma: f64 },
    Logistic { l2: f64 },
    Knn { k: usize },
}

impl Hyper {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyper::Svm { .. } => ModelKind::Svm,
            Hyper::Logistic { .. } => ModelKind::Logistic,
            Hyper::Knn { .. } => ModelKind::Knn,
        }
    }
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyper::Svm { c, gamma } => write!(f, "C={c},gamma={gamma}"),
            Hyper::Logistic { l2 } => write!(f, "l2={l2}"),
            Hyper::Knn { k } => write!(f, "k={k}"),
        }
    }
}

impl FromStr for Hyper {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse {
            path: "<hyper>".into(),
            line: 0,
            message: format!("malformed hyperparameters {s:?}"),
        };
        let mut fields = BTreeMap::new();
        for part in s.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            fields.insert(k.trim(), v.trim());
        }
        let num = |k: &str| -> Result<f64> { fields.get(k).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        match fields.len() {
            2 => Ok(Hyper::Svm {
                c: num("C")?,
                gamma: num("gamma")?,
            }),
            1 if fields.contains_key("l2") => Ok(Hyper::Logistic { l2: num("l2")? }),
            1 if fields.contains_key("k") => Ok(Hyper::Knn {
                k: fields["k"].parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub svm_c: Vec<f64>,
    pub svm_gamma: Vec<f64>,
    pub knn_k: Vec<usize>,
    pub logistic_l2: Vec<f64>,
    pub folds: usize,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            svm_c: vec![0.1, 1.0, 10.0, 100.0],
            svm_gamma: vec![0.001, 0.01, 0.1, 1.0],
            knn_k: vec![1, 3, 5, 7, 9],
            logistic_l2: vec![1.0, 0.1, 0.01],
            folds: 5,
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        if self.svm_c.is_empty() || self.svm_gamma.is_empty() || self.knn_k.is_empty() || self.logistic_l2.is_empty() {
            return Err(Error::InvalidParameter("hyperparameter lists must be non-empty".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidParameter(format!("folds must be >= 2, got {}", self.folds)));
        }
        if self.svm_c.iter().chain(&self.svm_gamma).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("SVM C and gamma must be positive".into()));
        }
        if self.logistic_l2.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("logistic l2 must be non-negative".into()));
        }
        if self.knn_k.contains(&0) {
            return Err(Error::InvalidParameter("kNN k must be >= 1".into()));
        }
        Ok(())
    }

    /// Candidates in order of increasing model complexity; cross-validation
    /// keeps the first of equally scoring candidates.
    pub fn candidates(&self, kind: ModelKind) -> Vec<Hyper> {
        fn sorted<T: Copy + PartialOrd>(v: &[T], descending: bool) -> Vec<T> {
            let mut v = v.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            if descending {
                v.reverse();
            }
            v.dedup_by(|a, b| a == b);
            v
        }
        match kind {
            ModelKind::Svm => {
                let gammas = sorted(&self.svm_gamma, false);
                sorted(&self.svm_c, false)
                    .into_iter()
                    .flat_map(|c| gammas.iter().map(move |&gamma| Hyper::Svm { c, gamma }))
                    .collect()
            }
            ModelKind::Logistic => sorted(&self.logistic_l2, true)
                .into_iter()
                .map(|l2| Hyper::Logistic { l2 })
                .collect(),
            ModelKind::Knn => sorted(&self.knn_k, true).into_iter().map(|k| Hyper::Knn { k }).collect(),
        }
    }
}

/// Feature rows with binary labels (positives are the target user).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub x: Array2<f64>,
    pub labels: Vec<bool>,
}

impl LabeledSet {
    pub fn new(x: Array2<f64>, labels: Vec<bool>) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                actual: labels.len(),
            });
        }
        check_labels(&labels)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTrainingSet("non-finite feature value".into()));
        }
        Ok(LabeledSet { x, labels })
    }

    pub fn from_vectors(vectors: &[FeatureVector], target: &SubjectId) -> Result<Self> {
        let x = stack(vectors)?;
        let labels = vectors.iter().map(|v| &v.subject == target).collect();
        LabeledSet::new(x, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn view<'a>(&'a self, rows: &'a [usize]) -> TrainView<'a> {
        TrainView {
            x: &self.x,
            rows,
            labels: &self.labels,
        }
    }
}

fn check_labels(labels: &[bool]) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::InvalidTrainingSet(format!(
            "need at least one positive and one negative (got {pos} of {})",
            labels.len()
        )));
    }
    Ok(())
}

/// Stacks feature vectors into a matrix; all must share one dimension.
pub fn stack(vectors: &[FeatureVector]) -> Result<Array2<f64>> {
    let d = vectors.first().map_or(0, |v| v.values.len());
    let mut x = Array2::zeros((vectors.len(), d));
    for (mut row, v) in x.rows_mut().into_iter().zip(vectors) {
        if v.values.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: v.values.len(),
            });
        }
        row.assign(&ArrayView1::from(&v.values));
    }
    Ok(x)
}

/// A subset of rows of a shared matrix. `labels` is indexed like `rows`.
pub(crate) struct TrainView<'a> {
    pub x: &'a Array2<f64>,
    pub rows: &'a [usize],
    pub labels: &'a [bool],
}

impl TrainView<'_> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(self.rows[i])
    }
}

/// Pairwise squared distances of a matrix's rows, plus RBF Gram matrices
/// built from them on first use of each gamma.
#[derive(Debug)]
pub struct KernelCache {
    sqdist: Array2<f64>,
    grams: Mutex<BTreeMap<u64, Arc<Array2<f64>>>>,
}

impl KernelCache {
    pub fn new(x: &Array2<f64>) -> Self {
        let n = x.nrows();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let a = x.row(i);
                (0..n)
                    .map(|j| a.iter().zip(x.row(j)).map(|(p, q)| (p - q) * (p - q)).sum())
                    .collect()
            })
            .collect();
        let sqdist = Array2::from_shape_vec((n, n), rows.concat()).expect("n x n");
        KernelCache {
            sqdist,
            grams: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn sqdist(&self) -> &Array2<f64> {
        &self.sqdist
    }

    pub fn gram(&self, gamma: f64) -> Arc<Array2<f64>> {
        let mut grams = self.grams.lock().expect("kernel cache poisoned");
        grams
            .entry(gamma.to_bits())
            .or_insert_with(|| Arc::new(self.sqdist.mapv(|d| (-gamma * d).exp())))
            .clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Svm(SvmPayload),
    Logistic(LogisticPayload),
    Knn(KnnPayload),
}

impl Payload {
    pub fn kind(&self) -> ModelKind {
        match self {
            Payload::Svm(_) => ModelKind::Svm,
            Payload::Logistic(_) => ModelKind::Logistic,
            Payload::Knn(_) => ModelKind::Knn,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Payload::Svm(p) => p.dimension(),
            Payload::Logistic(p) => p.weights.len(),
            Payload::Knn(p) => p.train_x.ncols(),
        }
    }

    /// Raw score; larger means more likely genuine.
    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            Payload::Svm(p) => p.decision(x),
            Payload::Logistic(p) => p.probability(x),
            Payload::Knn(p) => p.score(x),
        }
    }

    /// Score at which the classifier's own decision rule flips.
    pub fn natural_cutoff(&self) -> f64 {
        match self {
            Payload::Svm(_) => 0.0,
            Payload::Logistic(_) | Payload::Knn(_) => 0.5,
        }
    }
}

/// A model fitted on rows of a shared matrix.
pub(crate) struct Fitted {
    pub payload: Payload,
    /// Scores of the training rows, in row order.
    pub train_scores: Vec<f64>,
    /// Matrix rows of the SVM support vectors, aligned with `dual_coef`.
    pub support_rows: Vec<usize>,
}

impl Fitted {
    /// Scores further rows of the training matrix, reusing cached kernel
    /// values where possible.
    pub fn score_rows(&self, x: &Array2<f64>, rows: &[usize], cache: Option<&KernelCache>) -> Vec<f64> {
        match (&self.payload, cache) {
            (Payload::Svm(p), Some(cache)) => {
                let gram = cache.gram(p.gamma);
                rows.iter()
                    .map(|&r| {
                        let g = gram.row(r);
                        p.bias
                            + self
                                .support_rows
                                .iter()
                                .zip(&p.dual_coef)
                                .map(|(&s, c)| c * g[s])
                                .sum::<f64>()
                    })
                    .collect()
            }
            (payload, _) => rows.iter().map(|&r| payload.score(x.row(r))).collect(),
        }
    }
}

/// Fits one model on `rows` of `x`; `labels` is indexed like `rows`.
pub(crate) fn fit_rows(
    x: &Array2<f64>,
    rows: &[usize],
    labels: &[bool],
    hyper: Hyper,
    cache: Option<&KernelCache>,
) -> Result<Fitted> {
    check_labels(labels)?;
    let view = TrainView { x, rows, labels };
    match hyper {
        Hyper::Svm { c, gamma } => {
            let params = SvmParams::new(c, gamma);
            let (sol, train_scores) = match cache {
                Some(cache) => {
                    let gram = cache.gram(gamma);
                    let kernel = svm::GramRows { gram: &gram, rows };
                    let sol = svm::solve(&view, &kernel, &params)?;
                    let scores = svm::training_scores(&view, &sol, &kernel);
                    (sol, scores)
                }
                None => {
                    let gram = local_gram(&view, gamma);
                    let identity: Vec<usize> = (0..rows.len()).collect();
                    let kernel = svm::GramRows {
                        gram: &gram,
                        rows: &identity,
                    };
                    let sol = svm::solve(&view, &kernel, &params)?;
                    let scores = svm::training_scores(&view, &sol, &kernel);
                    (sol, scores)
                }
            };
            let support_rows = (0..rows.len()).filter(|&t| sol.alpha[t] > 0.0).map(|t| rows[t]).collect();
            Ok(Fitted {
                payload: Payload::Svm(svm::to_payload(&view, &sol, &params)),
                train_scores,
                support_rows,
            })
        }
        Hyper::Logistic { l2 } => {
            let p = logistic::fit(&view, &LogisticParams::new(l2))?;
            let train_scores = (0..view.len()).map(|i| p.probability(view.row(i))).collect();
            Ok(Fitted {
                payload: Payload::Logistic(p),
                train_scores,
                support_rows: Vec::new(),
            })
        }
        Hyper::Knn { k } => {
            let p = knn::fit(&view, k)?;
            let train_scores = match cache {
                Some(cache) => (0..view.len())
                    .map(|i| p.score_from_distances(|j| cache.sqdist()[[rows[i], rows[j]]]))
                    .collect(),
                None => (0..view.len()).map(|i| p.score(view.row(i))).collect(),
            };
            Ok(Fitted {
                payload: Payload::Knn(p),
                train_scores,
                support_rows: Vec::new(),
            })
        }
    }
}

fn local_gram(view: &TrainView, gamma: f64) -> Array2<f64> {
    let n = view.len();
    Array2::from_shape_fn((n, n), |(i, j)| svm::rbf(gamma, view.row(i), view.row(j)))
}

pub fn train_svm(data: &LabeledSet, params: &SvmParams) -> Result<SvmPayload> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let view = data.view(&rows);
    let gram = local_gram(&view, params.gamma);
    let sol = svm::solve(&view, &svm::GramRows { gram: &gram, rows: &rows }, params)?;
    Ok(svm::to_payload(&view, &sol, params))
}

pub fn train_logistic(data: &LabeledSet, params: &LogisticParams) -> Result<LogisticPayload> {
    let rows: Vec<usize> = (0..data.len()).collect();
    logistic::fit(&data.view(&rows), params)
}

pub fn train_knn(data: &LabeledSet, k: usize) -> Result<KnnPayload> {
    let rows: Vec<usize> = (0..data.len()).collect();
    knn::fit(&data.view(&rows), k)
}

/// Threshold at the equal error point of the training scores.
pub fn fit_threshold(genuine: &[f64], impostor: &[f64]) -> Result<f64> {
    Ok(compute_eer(genuine, impostor)?.threshold)
}

/// A trained authenticator for one target user.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthModel {
    pub target: SubjectId,
    pub hyper: Hyper,
    pub payload: Payload,
    pub decision_threshold: f64,
    pub cv_report: Option<CvReport>,
}

impl AuthModel {
    pub fn kind(&self) -> ModelKind {
        self.payload.kind()
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.payload.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.payload.dimension(),
                actual: x.len(),
            });
        }
        Ok(self.payload.score(ArrayView1::from(x)))
    }

    pub fn accepts(&self, x: &[f64]) -> Result<bool> {
        Ok(self.score(x)? >= self.decision_threshold)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# ecg-auth model");
        let _ = writeln!(s, "target={}", self.target);
        let _ = writeln!(s, "kind={}", self.kind());
        let _ = writeln!(s, "hyper={}", self.hyper);
        let _ = writeln!(s, "decision_threshold={}", self.decision_threshold);
        if let Some(cv) = &self.cv_report {
            let _ = writeln!(s, "cv.folds={}", cv.folds);
            let _ = writeln!(s, "cv.selected={}", cv.selected);
            for e in &cv.entries {
                let folds: Vec<String> = e.fold_scores.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "cv.candidate={};{};{}", e.hyper, e.mean_balanced_accuracy, folds.join(","));
            }
        }
        fn row(s: &mut String, key: &str, values: impl IntoIterator<Item = f64>) {
            let v: Vec<String> = values.into_iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{key}={}", v.join(" "));
        }
        match &self.payload {
            Payload::Svm(p) => {
                let _ = writeln!(s, "svm.c={}", p.c);
                let _ = writeln!(s, "svm.gamma={}", p.gamma);
                let _ = writeln!(s, "svm.bias={}", p.bias);
                let _ = writeln!(s, "svm.class_bounds={} {}", p.class_bounds.0, p.class_bounds.1);
                let _ = writeln!(s, "svm.kkt_residual={}", p.kkt_residual);
                let _ = writeln!(s, "svm.dual_objective={}", p.dual_objective);
                let _ = writeln!(s, "svm.iterations={}", p.iterations);
                let _ = writeln!(s, "svm.dimension={}", p.dimension());
                for (sv, coef) in p.support_vectors.rows().into_iter().zip(&p.dual_coef) {
                    row(&mut s, "sv", std::iter::once(*coef).chain(sv.iter().copied()));
                }
            }
            Payload::Logistic(p) => {
                row(&mut s, "logistic.weights", p.weights.iter().copied());
                let _ = writeln!(s, "logistic.bias={}", p.bias);
                let _ = writeln!(s, "logistic.l2={}", p.l2);
                let _ = writeln!(s, "logistic.iterations={}", p.iterations);
                let _ = writeln!(s, "logistic.grad_norm={}", p.grad_norm);
            }
            Payload::Knn(p) => {
                let _ = writeln!(s, "knn.k={}", p.k);
                let _ = writeln!(s, "knn.dimension={}", p.train_x.ncols());
                for (x, &l) in p.train_x.rows().into_iter().zip(&p.train_labels) {
                    row(&mut s, "point", std::iter::once(if l { 1.0 } else { 0.0 }).chain(x.iter().copied()));
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let path = "<model>";
        let err = |line: usize, m: String| Error::parse(path, line, m);
        let mut scalars: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        let mut candidates = Vec::new();
        let mut vectors: Vec<(usize, &str)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(ln, format!("expected key=value, got {line:?}")))?;
            match k {
                "cv.candidate" => candidates.push((ln, v)),
                "sv" | "point" => vectors.push((ln, v)),
                _ => {
                    if scalars.insert(k, (ln, v)).is_some() {
                        return Err(err(ln, format!("duplicate key {k}")));
                    }
                }
            }
        }
        let get = |k: &str| -> Result<(usize, &str)> {
            scalars
                .get(k)
                .copied()
                .ok_or_else(|| err(0, format!("missing key {k}")))
        };
        fn num<T: FromStr>(ln: usize, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::parse("<model>", ln, format!("bad number {v:?}")))
        }
        fn nums(ln: usize, v: &str) -> Result<Vec<f64>> {
            v.split_whitespace().map(|t| num(ln, t)).collect()
        }
        let scalar = |k: &str| -> Result<f64> {
            let (ln, v) = get(k)?;
            num(ln, v)
        };

        let (ln, t) = get("target")?;
        let target = SubjectId::new(t).map_err(|e| err(ln, e.to_string()))?;
        let (ln, k) = get("kind")?;
        let kind: ModelKind = k.parse().map_err(|e: Error| err(ln, e.to_string()))?;
        let (ln, h) = get("hyper")?;
        let hyper: Hyper = h.parse().map_err(|e: Error| err(ln, e.to_string()))?;
        let decision_threshold = scalar("decision_threshold")?;
        if !decision_threshold.is_finite() {
            return Err(err(get("decision_threshold")?.0, "threshold must be finite".into()));
        }

        let cv_report = match scalars.get("cv.folds") {
            None => None,
            Some(&(ln, f)) => {
                let folds = num(ln, f)?;
                let (sl, s) = get("cv.selected")?;
                let selected: Hyper = s.parse().map_err(|e: Error| err(sl, e.to_string()))?;
                let mut entries = Vec::new();
                for (ln, v) in candidates {
                    let parts: Vec<&str> = v.split(';').collect();
                    if parts.len() != 3 {
                        return Err(err(ln, "expected hyper;mean;fold scores".into()));
                    }
                    entries.push(CvEntry {
                        hyper: parts[0].parse().map_err(|e: Error| err(ln, e.to_string()))?,
                        mean_balanced_accuracy: num(ln, parts[1])?,
                        fold_scores: parts[2]
                            .split(',')
                            .filter(|t| !t.is_empty())
                            .map(|t| num(ln, t))
                            .collect::<Result<_>>()?,
                    });
                }
                Some(CvReport {
                    entries,
                    selected,
                    folds,
                })
            }
        };

        let matrix = |dim: usize| -> Result<(Vec<f64>, Array2<f64>)> {
            let mut lead = Vec::with_capacity(vectors.len());
            let mut data = Vec::with_capacity(vectors.len() * dim);
            for &(ln, v) in &vectors {
                let row = nums(ln, v)?;
                if row.len() != dim + 1 {
                    return Err(err(ln, format!("expected {} values, got {}", dim + 1, row.len())));
                }
                lead.push(row[0]);
                data.extend_from_slice(&row[1..]);
            }
            let m = Array2::from_shape_vec((lead.len(), dim), data).expect("shape checked");
            Ok((lead, m))
        };

        let payload = match kind {
            ModelKind::Svm => {
                let dim = scalar("svm.dimension")? as usize;
                let (dual_coef, support_vectors) = matrix(dim)?;
                let (ln, b) = get("svm.class_bounds")?;
                let bounds = nums(ln, b)?;
                if bounds.len() != 2 {
                    return Err(err(ln, "expected two class bounds".into()));
                }
                Payload::Svm(SvmPayload {
                    gamma: scalar("svm.gamma")?,
                    c: scalar("svm.c")?,
                    support_vectors,
                    dual_coef,
                    bias: scalar("svm.bias")?,
                    class_bounds: (bounds[0], bounds[1]),
                    kkt_residual: scalar("svm.kkt_residual")?,
                    dual_objective: scalar("svm.dual_objective")?,
                    iterations: scalar("svm.iterations")? as usize,
                })
            }
            ModelKind::Logistic => {
                let (ln, w) = get("logistic.weights")?;
                Payload::Logistic(LogisticPayload {
                    weights: nums(ln, w)?,
                    bias: scalar("logistic.bias")?,
                    l2: scalar("logistic.l2")?,
                    iterations: scalar("logistic.iterations")? as usize,
                    grad_norm: scalar("logistic.grad_norm")?,
                })
            }
            ModelKind::Knn => {
                let dim = scalar("knn.dimension")? as usize;
                let (labels, train_x) = matrix(dim)?;
                Payload::Knn(KnnPayload {
                    k: scalar("knn.k")? as usize,
                    train_x,
                    train_labels: labels.iter().map(|&l| l == 1.0).collect(),
                })
            }
        };
        if hyper.kind() != kind {
            return Err(err(get("hyper")?.0, format!("hyperparameters do not match kind {kind}")));
        }
        Ok(AuthModel {
            target,
            hyper,
            payload,
            decision_threshold,
            cv_report,
        })
    }
}

/// Feature vectors of every user in a training session, with caches shared
/// by all per-user trainings.
#[derive(Debug)]
pub struct TrainingPool {
    pub x: Array2<f64>,
    pub subjects: Vec<SubjectId>,
    cache: KernelCache,
}

impl TrainingPool {
    pub fn new(vectors: &[FeatureVector]) -> Result<Self> {
        let x = stack(vectors)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTrainingSet("non-finite feature value".into()));
        }
        let cache = KernelCache::new(&x);
        Ok(TrainingPool {
            x,
            subjects: vectors.iter().map(|v| v.subject.clone()).collect(),
            cache,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Every row, or every row not belonging to `exclude`.
    pub fn rows_excluding(&self, exclude: Option<&SubjectId>) -> Vec<usize> {
        (0..self.len())
            .filter(|&r| Some(&self.subjects[r]) != exclude)
            .collect()
    }

    pub fn labels(&self, target: &SubjectId, rows: &[usize]) -> Vec<bool> {
        rows.iter().map(|&r| &self.subjects[r] == target).collect()
    }

    pub fn cross_validate(
        &self,
        target: &SubjectId,
        rows: &[usize],
        kind: ModelKind,
        grid: &HyperGrid,
        seed: u64,
    ) -> Result<CvReport> {
        let labels = self.labels(target, rows);
        cv::cross_validate_rows(&self.x, rows, &labels, kind, grid, cv::fold_seed(seed, target), Some(&self.cache))
    }

    /// Trains on exactly `rows` with fixed hyperparameters and fits the
    /// decision threshold on the training scores.
    pub fn fit(&self, target: &SubjectId, rows: &[usize], hyper: Hyper) -> Result<AuthModel> {
        let labels = self.labels(target, rows);
        let fitted = fit_rows(&self.x, rows, &labels, hyper, Some(&self.cache))?;
        let (genuine, impostor) = split_scores(&fitted.train_scores, &labels);
        Ok(AuthModel {
            target: target.clone(),
            hyper,
            payload: fitted.payload,
            decision_threshold: fit_threshold(&genuine, &impostor)?,
            cv_report: None,
        })
    }

    /// Cross-validates over `grid`, then fits the selected candidate.
    pub fn train(
        &self,
        target: &SubjectId,
        rows: &[usize],
        kind: ModelKind,
        grid: &HyperGrid,
        seed: u64,
    ) -> Result<AuthModel> {
        let report = self.cross_validate(target, rows, kind, grid, seed)?;
        let mut model = self.fit(target, rows, report.selected)?;
        model.cv_report = Some(report);
        Ok(model)
    }
}

pub(crate) fn split_scores(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l {
            genuine.push(s);
        } else {
            impostor.push(s);
        }
    }
    (genuine, impostor)
}

/// Trains an authenticator for `target` on a labelled set with
/// cross-validated hyperparameters.
pub fn train_user_model(
    data: &LabeledSet,
    target: &SubjectId,
    kind: ModelKind,
    grid: &HyperGrid,
    seed: u64,
) -> Result<AuthModel> {
    let report = cross_validate(data, grid, kind, cv::fold_seed(seed, target))?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let fitted = fit_rows(&data.x, &rows, &data.labels, report.selected, None)?;
    let (genuine, impostor) = split_scores(&fitted.train_scores, &data.labels);
    Ok(AuthModel {
        target: target.clone(),
        hyper: report.selected,
        payload: fitted.payload,
        decision_threshold: fit_threshold(&genuine, &impostor)?,
        cv_report: Some(report),
    })
}
