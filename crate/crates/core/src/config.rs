//! Flat `key=value` run configuration covering every pipeline stage.

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::classifiers::{HyperGrid, ModelKind};
use crate::dsp::FilterConfig;
use crate::error::{Error, Result};
use crate::features::DEFAULT_COMPONENTS;
use crate::segmentation::SegmentationConfig;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub filter: FilterConfig,
    pub segmentation: SegmentationConfig,
    pub components: usize,
    /// Leading fraction of each session used for training.
    pub train_fraction: f64,
    pub model: ModelKind,
    pub grid: HyperGrid,
    pub reselect_per_pair: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            filter: FilterConfig::default(),
            segmentation: SegmentationConfig::default(),
            components: DEFAULT_COMPONENTS,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            model: ModelKind::Svm,
            grid: HyperGrid::default(),
            reselect_per_pair: false,
            seed: 0,
            output_dir: PathBuf::from("out"),
            verbosity: 1,
        }
    }
}

/// Every key with a one-line description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("filter.mains_hz", "mains notch centre frequency (Hz)"),
    ("filter.mains_q", "mains notch quality factor"),
    ("filter.hp_hz", "band-pass lower cutoff (Hz)"),
    ("filter.lp_hz", "band-pass upper cutoff (Hz)"),
    ("filter.order", "Butterworth order of each band edge (even)"),
    ("segment.wavelet_scale_s", "Ricker wavelet scale for QRS accentuation (s)"),
    ("segment.threshold_window_s", "running-mean threshold window (s)"),
    ("segment.threshold_factor", "threshold multiple of the running mean"),
    ("segment.refractory_s", "minimum spacing between R peaks (s)"),
    ("segment.pre_r_s", "beat window before the R peak (s)"),
    ("segment.post_r_s", "beat window after the R peak (s)"),
    ("segment.reject_fraction", "fraction of beats furthest from the median dropped"),
    ("features.components", "principal components kept"),
    ("split.train_fraction", "leading fraction of each session used for training"),
    ("model.kind", "classifier: svm, logistic or knn"),
    ("grid.svm_c", "SVM C candidates (comma separated)"),
    ("grid.svm_gamma", "SVM RBF gamma candidates (comma separated)"),
    ("grid.knn_k", "kNN k candidates (comma separated)"),
    ("grid.logistic_l2", "logistic L2 penalty candidates (comma separated)"),
    ("grid.folds", "cross-validation folds"),
    ("protocol_b.reselect_per_pair", "re-run cross-validation for every excluded user (true/false)"),
    ("seed", "run seed"),
    ("output_dir", "directory for reports and logs"),
    ("verbosity", "0 quiet, 1 progress, 2 detail"),
];

/// Keys that cannot change any computed result.
const PRESENTATION_KEYS: &[&str] = &["output_dir", "verbosity"];

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let v: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(v)
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Result<String> {
        let f = &self.filter;
        let s = &self.segmentation;
        let g = &self.grid;
        Ok(match key {
            "filter.mains_hz" => f.mains_hz.to_string(),
            "filter.mains_q" => f.mains_q.to_string(),
            "filter.hp_hz" => f.hp_cutoff_hz.to_string(),
            "filter.lp_hz" => f.lp_cutoff_hz.to_string(),
            "filter.order" => f.order.to_string(),
            "segment.wavelet_scale_s" => s.wavelet_scale_s.to_string(),
            "segment.threshold_window_s" => s.threshold_window_s.to_string(),
            "segment.threshold_factor" => s.threshold_factor.to_string(),
            "segment.refractory_s" => s.refractory_s.to_string(),
            "segment.pre_r_s" => s.pre_r_s.to_string(),
            "segment.post_r_s" => s.post_r_s.to_string(),
            "segment.reject_fraction" => s.reject_fraction.to_string(),
            "features.components" => self.components.to_string(),
            "split.train_fraction" => self.train_fraction.to_string(),
            "model.kind" => match self.model {
                ModelKind::Svm => "svm".to_string(),
                other => other.to_string(),
            },
            "grid.svm_c" => join(&g.svm_c),
            "grid.svm_gamma" => join(&g.svm_gamma),
            "grid.knn_k" => join(&g.knn_k),
            "grid.logistic_l2" => join(&g.logistic_l2),
            "grid.folds" => g.folds.to_string(),
            "protocol_b.reselect_per_pair" => self.reselect_per_pair.to_string(),
            "seed" => self.seed.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "verbosity" => self.verbosity.to_string(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.filter;
        let s = &mut self.segmentation;
        let g = &mut self.grid;
        match key {
            "filter.mains_hz" => f.mains_hz = parse(key, value)?,
            "filter.mains_q" => f.mains_q = parse(key, value)?,
            "filter.hp_hz" => f.hp_cutoff_hz = parse(key, value)?,
            "filter.lp_hz" => f.lp_cutoff_hz = parse(key, value)?,
            "filter.order" => f.order = parse(key, value)?,
            "segment.wavelet_scale_s" => s.wavelet_scale_s = parse(key, value)?,
            "segment.threshold_window_s" => s.threshold_window_s = parse(key, value)?,
            "segment.threshold_factor" => s.threshold_factor = parse(key, value)?,
            "segment.refractory_s" => s.refractory_s = parse(key, value)?,
            "segment.pre_r_s" => s.pre_r_s = parse(key, value)?,
            "segment.post_r_s" => s.post_r_s = parse(key, value)?,
            "segment.reject_fraction" => s.reject_fraction = parse(key, value)?,
            "features.components" => self.components = parse(key, value)?,
            "split.train_fraction" => self.train_fraction = parse(key, value)?,
            "model.kind" => {
                self.model = value
                    .trim()
                    .parse()
                    .map_err(|e: Error| Error::Config(format!("{key}: {e}")))?
            }
            "grid.svm_c" => g.svm_c = parse_list(key, value)?,
            "grid.svm_gamma" => g.svm_gamma = parse_list(key, value)?,
            "grid.knn_k" => g.knn_k = parse_list(key, value)?,
            "grid.logistic_l2" => g.logistic_l2 = parse_list(key, value)?,
            "grid.folds" => g.folds = parse(key, value)?,
            "protocol_b.reselect_per_pair" => self.reselect_per_pair = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            "verbosity" => self.verbosity = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file on top of `self`. Blank lines and lines
    /// starting with `#` are ignored; a repeated key is an error.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
            }
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, doc) in KEYS {
            let _ = writeln!(s, "# {doc}");
            let _ = writeln!(s, "{key}={}", self.get(key).expect("listed key"));
        }
        s
    }

    /// SHA-256 over the result-affecting keys, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (key, _) in KEYS.iter().filter(|(k, _)| !PRESENTATION_KEYS.contains(k)) {
            h.update(key.as_bytes());
            h.update(b"=");
            h.update(self.get(key).expect("listed key").as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.grid.validate()?;
        if self.components == 0 {
            return Err(Error::Config("features.components must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split.train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}
