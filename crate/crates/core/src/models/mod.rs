//! Weighted linear SVM and embedding-average-pooling classifiers.
//!
//! Both families are trained single-threaded from a seeded ChaCha stream and
//! score a sample into (0, 1); a score of at least 0.5 means Diagnosed.

pub mod avepl;
mod optim;
pub mod persist;
pub mod svm;

pub use avepl::{train_avepl, EmbeddingPoolModel, Layout};
pub use optim::Adam;
pub use persist::{load_model, load_model_for, save_model};
pub use svm::{train_svm, LinearModel};

use crate::features::{encode_ids, encode_manyhot, FeatureError, SparseVector, Vocabulary};
use crate::sampling::{Label, Sample};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("vocabulary mismatch: model expects {expected}, got {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("input dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training data lacks the {0} class")]
    MissingClass(Label),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("unknown model family `{0}` (expected svm or avepl)")]
    UnknownFamily(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt model file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub svm_lambda: f64,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 1000,
            epochs: 1,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            svm_lambda: 1e-4,
            embedding_dim: 64,
            hidden_dim: 64,
            max_len: 64,
        }
    }
}

impl TrainConfig {
    /// Zero learning rate is accepted so that a no-op run can be checked.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.svm_lambda > 0.0 && self.svm_lambda.is_finite()) {
            return bad("svm_lambda must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("adam constants out of range");
        }
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return bad("embedding_dim, hidden_dim and max_len must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Svm,
    Avepl,
}

impl FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "svm" => Ok(Family::Svm),
            "avepl" => Ok(Family::Avepl),
            other => Err(ModelError::UnknownFamily(other.to_string())),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Svm => "svm",
            Family::Avepl => "avepl",
        })
    }
}

/// Encoded training or evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded<X> {
    pub inputs: Vec<X>,
    pub labels: Vec<Label>,
    pub weights: Vec<f64>,
    /// Vocabulary size the inputs were encoded against.
    pub dimension: usize,
    pub vocab_hash: String,
}

impl<X> Encoded<X> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub(crate) fn require_both_classes(&self) -> Result<(), ModelError> {
        for class in [Label::Diagnosed, Label::Control] {
            if !self.labels.contains(&class) {
                return Err(ModelError::MissingClass(class));
            }
        }
        Ok(())
    }
}

impl Encoded<SparseVector> {
    pub fn manyhot(samples: &[Sample], vocab: &Vocabulary) -> Self {
        Self {
            inputs: samples.iter().map(|s| encode_manyhot(&s.tokens, vocab)).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
            weights: samples.iter().map(|s| s.weight).collect(),
            dimension: vocab.len(),
            vocab_hash: vocab.hash().to_string(),
        }
    }
}

impl Encoded<Vec<u32>> {
    pub fn ids(samples: &[Sample], vocab: &Vocabulary, max_len: usize) -> Result<Self, ModelError> {
        let inputs = samples
            .iter()
            .map(|s| encode_ids(&s.tokens, vocab, max_len))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            inputs,
            labels: samples.iter().map(|s| s.label).collect(),
            weights: samples.iter().map(|s| s.weight).collect(),
            dimension: vocab.len(),
            vocab_hash: vocab.hash().to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    pub label: Label,
}

impl Prediction {
    pub fn from_score(score: f64) -> Self {
        let label = if score >= 0.5 { Label::Diagnosed } else { Label::Control };
        Self { score, label }
    }
}

/// Logistic function kept strictly inside (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// A trained model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Svm(LinearModel),
    Avepl(EmbeddingPoolModel),
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::Svm(_) => Family::Svm,
            Model::Avepl(_) => Family::Avepl,
        }
    }

    pub fn vocab_hash(&self) -> &str {
        match self {
            Model::Svm(m) => &m.vocab_hash,
            Model::Avepl(m) => &m.vocab_hash,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        match self {
            Model::Svm(m) => &m.config,
            Model::Avepl(m) => &m.config,
        }
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<(), ModelError> {
        if self.vocab_hash() != vocab.hash() {
            return Err(ModelError::VocabMismatch {
                expected: self.vocab_hash().to_string(),
                found: vocab.hash().to_string(),
            });
        }
        Ok(())
    }

    /// Encodes `tokens` with the model's own input scheme and scores them.
    pub fn predict_tokens(&self, tokens: &[String], vocab: &Vocabulary) -> Result<Prediction, ModelError> {
        self.check_vocab(vocab)?;
        match self {
            Model::Svm(m) => m.predict(&encode_manyhot(tokens, vocab)),
            Model::Avepl(m) => m.predict(&encode_ids(tokens, vocab, m.config.max_len)?),
        }
    }

    /// Trains the requested family on `samples`.
    pub fn train(family: Family, samples: &[Sample], vocab: &Vocabulary, cfg: &TrainConfig) -> Result<Self, ModelError> {
        match family {
            Family::Svm => Ok(Model::Svm(train_svm(&Encoded::manyhot(samples, vocab), cfg)?)),
            Family::Avepl => Ok(Model::Avepl(train_avepl(&Encoded::ids(samples, vocab, cfg.max_len)?, cfg)?)),
        }
    }
}

pub(crate) fn check_finite(loss: f64, epoch: usize, batch: usize) -> Result<(), ModelError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite { epoch, batch, loss })
    }
}

pub(crate) fn target(label: Label) -> f64 {
    match label {
        Label::Diagnosed => 1.0,
        Label::Control => 0.0,
    }
}
