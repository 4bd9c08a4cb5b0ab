//! Fear-response scorer: a subject-grouped K-fold ensemble of MLPs over the
//! 12 window features.

use thiserror::Error;

pub mod ensemble;
pub mod mlp;

pub use ensemble::{group_kfold, train_ensemble, FrEnsemble, SubjectLabels, TrainedEnsemble, DEFAULT_K};
pub use mlp::{train_mlp, Mlp, MlpConfig, TrainedMlp};

#[derive(Debug, Error)]
pub enum FearModelError {
    #[error("cannot form {k} folds from {subjects} subjects")]
    TooFewSubjects { k: usize, subjects: usize },
    #[error("training set contains a single class")]
    DegenerateLabels,
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("window has a non-finite feature")]
    NonFiniteFeature,
    #[error("no labeled windows to train on")]
    NoLabeledWindows,
    #[error("invalid MLP config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("{0}")]
    Io(String),
}
