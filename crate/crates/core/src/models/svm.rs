//! Linear SVM over many-hot inputs.
//!
//! Objective for a batch B with sample weights c_i and labels y_i ∈ {−1, +1}:
//!
//! ```text
//! L(w, b) = Σ_B c_i · max(0, 1 − y_i (w·x_i + b)) / Σ_B c_i  +  λ‖w‖²
//! ```
//!
//! Normalising by the total weight makes an integer weight k on a sample
//! identical to k unit-weight copies of it. After every step the weights are
//! projected onto the ball ‖w‖ ≤ 1/√λ, which contains the minimiser because
//! λ‖w*‖² ≤ L(w*) ≤ L(0) = 1.

use super::optim::Optimizer;
use super::{check_finite, sigmoid, Encoded, ModelError, Prediction, TrainConfig};
use crate::features::SparseVector;
use crate::sampling::Label;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub vocab_hash: String,
    pub config: TrainConfig,
}

impl LinearModel {
    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &SparseVector) -> Result<f64, ModelError> {
        if x.dimension != self.weights.len() {
            return Err(ModelError::DimensionMismatch { expected: self.weights.len(), found: x.dimension });
        }
        Ok(x.dot(&self.weights) + self.bias)
    }

    pub fn predict(&self, x: &SparseVector) -> Result<Prediction, ModelError> {
        Ok(Prediction::from_score(sigmoid(self.margin(x)?)))
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

fn sign(label: Label) -> f64 {
    match label {
        Label::Diagnosed => 1.0,
        Label::Control => -1.0,
    }
}

/// Loss and subgradient over the samples at `batch`. `params` holds the
/// weights followed by the bias; the returned gradient has the same layout.
pub fn loss_and_grad(params: &[f64], data: &Encoded<SparseVector>, batch: &[usize], lambda: f64) -> (f64, Vec<f64>) {
    let dim = params.len() - 1;
    let (w, b) = (&params[..dim], params[dim]);
    let mut grad = vec![0.0; dim + 1];
    let total: f64 = batch.iter().map(|&i| data.weights[i]).sum();
    let mut hinge = 0.0;
    if total > 0.0 {
        for &i in batch {
            let x = &data.inputs[i];
            let y = sign(data.labels[i]);
            let m = y * (x.dot(w) + b);
            if m < 1.0 {
                let c = data.weights[i] / total;
                hinge += c * (1.0 - m);
                for &j in &x.indices {
                    grad[j as usize] -= c * y;
                }
                grad[dim] -= c * y;
            }
        }
    }
    let mut sq = 0.0;
    for j in 0..dim {
        sq += w[j] * w[j];
        grad[j] += 2.0 * lambda * w[j];
    }
    (hinge + lambda * sq, grad)
}

fn project(w: &mut [f64], radius: f64) {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        let s = radius / norm;
        w.iter_mut().for_each(|v| *v *= s);
    }
}

pub(crate) fn validate_inputs<X>(data: &Encoded<X>, dims: impl Fn(&X) -> Option<usize>) -> Result<(), ModelError> {
    data.require_both_classes()?;
    if data.labels.len() != data.inputs.len() || data.weights.len() != data.inputs.len() {
        return Err(ModelError::InvalidConfig("inputs, labels and weights differ in length".into()));
    }
    if let Some(w) = data.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(ModelError::InvalidConfig(format!("sample weight {w} is not a finite non-negative number")));
    }
    for x in &data.inputs {
        if let Some(found) = dims(x) {
            return Err(ModelError::DimensionMismatch { expected: data.dimension, found });
        }
    }
    Ok(())
}

pub fn train_svm(data: &Encoded<SparseVector>, cfg: &TrainConfig) -> Result<LinearModel, ModelError> {
    cfg.validate()?;
    validate_inputs(data, |x| (x.dimension != data.dimension).then_some(x.dimension))?;
    let dim = data.dimension;
    let mut params = vec![0.0; dim + 1];
    let mut opt = Optimizer::new(cfg, params.len());
    let radius = 1.0 / cfg.svm_lambda.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = loss_and_grad(&params, data, batch, cfg.svm_lambda);
            check_finite(loss, epoch, b)?;
            opt.step(&mut params, &grad);
            project(&mut params[..dim], radius);
        }
    }
    let bias = params.pop().expect("bias slot");
    Ok(LinearModel { weights: params, bias, vocab_hash: data.vocab_hash.clone(), config: cfg.clone() })
}
