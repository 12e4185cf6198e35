//! ECG biometric authentication toolkit.
//!
//! The pipeline runs in stages: [`dsp`] conditions raw traces,
//! [`segmentation`] cuts them into heartbeats, [`features`] standardises
//! and projects beats onto principal components, [`classifiers`] trains one
//! authenticator per user and [`evaluation`] scores them under the shared
//! population and leave-one-impostor-out protocols. [`synth`] generates
//! corpora with known ground truth.

pub mod classifiers;
pub mod config;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod linalg;
pub mod pipeline;
pub mod segmentation;
pub mod synth;

pub use classifiers::{AuthModel, HyperGrid, ModelKind};
pub use config::RunConfig;
pub use dataset::{Corpus, CorpusManifest, EcgTrace, SessionId, SubjectId};
pub use evaluation::{Condition, EvalReport, Protocol};
pub use features::{FeatureModel, FeatureVector};
pub use segmentation::{BeatMatrix, PeakList};
pub use error::{Error, Result};
