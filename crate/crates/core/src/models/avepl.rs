//! Embedding average pooling followed by three ReLU layers and a sigmoid unit.
//!
//! All parameters live in one flat vector; [`Layout`] maps each tensor to its
//! slice. Padding ids are masked out of the mean, so appending `<pad>` never
//! changes a score, and an all-padding input pools to the zero vector.

use super::optim::Optimizer;
use super::svm::validate_inputs;
use super::{check_finite, sigmoid, target, Encoded, ModelError, Prediction, TrainConfig};
use crate::features::PAD_ID;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

pub const TENSOR_NAMES: [&str; 9] =
    ["embedding", "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias", "fc3.weight", "fc3.bias", "out.weight", "out.bias"];

/// Shapes of the network: `vocab` embedding rows of width `d`, hidden width `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub vocab: usize,
    pub d: usize,
    pub h: usize,
}

impl Layout {
    pub fn new(vocab: usize, d: usize, h: usize) -> Self {
        Self { vocab, d, h }
    }

    /// Tensor names with their ranges, in storage order.
    pub fn tensors(&self) -> [(&'static str, Range<usize>); 9] {
        let (v, d, h) = (self.vocab, self.d, self.h);
        let sizes = [v * d, h * d, h, h * h, h, h * h, h, h, 1];
        let mut start = 0;
        let mut k = 0;
        TENSOR_NAMES.map(|name| {
            let r = start..start + sizes[k];
            start = r.end;
            k += 1;
            (name, r)
        })
    }

    pub fn total(&self) -> usize {
        self.tensors()[8].1.end
    }

    fn range(&self, i: usize) -> Range<usize> {
        self.tensors()[i].1.clone()
    }

    /// Fan-in of each tensor, used for the initialization bound.
    fn fan_in(&self, i: usize) -> usize {
        match i {
            0..=2 => self.d,
            _ => self.h,
        }
    }
}

/// Uniform initialization in ±1/√fan_in for every tensor.
pub fn init_params(layout: &Layout, rng: &mut impl Rng) -> Vec<f64> {
    let mut params = vec![0.0; layout.total()];
    for i in 0..9 {
        let bound = 1.0 / (layout.fan_in(i) as f64).sqrt();
        for p in &mut params[layout.range(i)] {
            *p = rng.gen_range(-bound..bound);
        }
    }
    params
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPoolModel {
    pub layout: Layout,
    pub params: Vec<f64>,
    pub vocab_hash: String,
    pub config: TrainConfig,
}

impl EmbeddingPoolModel {
    pub fn logit(&self, ids: &[u32]) -> Result<f64, ModelError> {
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.layout.vocab) {
            return Err(ModelError::DimensionMismatch { expected: self.layout.vocab, found: bad as usize + 1 });
        }
        Ok(forward(&self.params, &self.layout, ids).logit)
    }

    pub fn predict(&self, ids: &[u32]) -> Result<Prediction, ModelError> {
        Ok(Prediction::from_score(sigmoid(self.logit(ids)?)))
    }
}

struct Cache {
    count: usize,
    pooled: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    a3: Vec<f64>,
    logit: f64,
}

fn affine_relu(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| {
            let row = &w[i * cols..(i + 1) * cols];
            let z = bi + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            z.max(0.0)
        })
        .collect()
}

fn forward(params: &[f64], l: &Layout, ids: &[u32]) -> Cache {
    let d = l.d;
    let emb = &params[l.range(0)];
    let mut pooled = vec![0.0; d];
    let mut count = 0;
    for &id in ids.iter().filter(|&&i| i != PAD_ID) {
        let row = &emb[id as usize * d..(id as usize + 1) * d];
        pooled.iter_mut().zip(row).for_each(|(p, r)| *p += r);
        count += 1;
    }
    if count > 0 {
        pooled.iter_mut().for_each(|p| *p /= count as f64);
    }
    let a1 = affine_relu(&params[l.range(1)], &params[l.range(2)], &pooled);
    let a2 = affine_relu(&params[l.range(3)], &params[l.range(4)], &a1);
    let a3 = affine_relu(&params[l.range(5)], &params[l.range(6)], &a2);
    let out_w = &params[l.range(7)];
    let logit = params[l.range(8)][0] + out_w.iter().zip(&a3).map(|(a, b)| a * b).sum::<f64>();
    Cache { count, pooled, a1, a2, a3, logit }
}

/// Backpropagates through one ReLU affine layer. `delta` holds dL/da for the
/// layer output; returns dL/dx for its input.
fn backward_layer(grad: &mut [f64], w: &[f64], w_range: Range<usize>, b_range: Range<usize>, x: &[f64], a: &[f64], delta: &[f64]) -> Vec<f64> {
    let cols = x.len();
    let mut dx = vec![0.0; cols];
    for i in 0..a.len() {
        if a[i] <= 0.0 {
            continue;
        }
        let dz = delta[i];
        grad[b_range.start + i] += dz;
        let gw = &mut grad[w_range.start + i * cols..w_range.start + (i + 1) * cols];
        for j in 0..cols {
            gw[j] += dz * x[j];
            dx[j] += dz * w[i * cols + j];
        }
    }
    dx
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Weighted binary cross-entropy over `batch`, normalised by the batch's
/// total weight, and its gradient with respect to every parameter.
pub fn loss_and_grad(params: &[f64], layout: &Layout, data: &Encoded<Vec<u32>>, batch: &[usize]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let total: f64 = batch.iter().map(|&i| data.weights[i]).sum();
    if total <= 0.0 {
        return (0.0, grad);
    }
    let l = layout;
    let mut loss = 0.0;
    for &i in batch {
        let ids = &data.inputs[i];
        let c = data.weights[i] / total;
        if c == 0.0 {
            continue;
        }
        let y = target(data.labels[i]);
        let cache = forward(params, l, ids);
        loss += c * (softplus(cache.logit) - y * cache.logit);
        let g = c * (sigmoid_exact(cache.logit) - y);

        let out_w = l.range(7);
        grad[l.range(8).start] += g;
        for (k, a) in cache.a3.iter().enumerate() {
            grad[out_w.start + k] += g * a;
        }
        let d3: Vec<f64> = params[out_w].iter().map(|w| g * w).collect();
        let d2 = backward_layer(&mut grad, &params[l.range(5)], l.range(5), l.range(6), &cache.a2, &cache.a3, &d3);
        let d1 = backward_layer(&mut grad, &params[l.range(3)], l.range(3), l.range(4), &cache.a1, &cache.a2, &d2);
        let dp = backward_layer(&mut grad, &params[l.range(1)], l.range(1), l.range(2), &cache.pooled, &cache.a1, &d1);
        if cache.count > 0 {
            let emb = l.range(0).start;
            let inv = 1.0 / cache.count as f64;
            for &id in ids.iter().filter(|&&i| i != PAD_ID) {
                let row = emb + id as usize * l.d;
                for (k, v) in dp.iter().enumerate() {
                    grad[row + k] += v * inv;
                }
            }
        }
    }
    (loss, grad)
}

/// Unclamped logistic for gradients.
fn sigmoid_exact(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn train_avepl(data: &Encoded<Vec<u32>>, cfg: &TrainConfig) -> Result<EmbeddingPoolModel, ModelError> {
    cfg.validate()?;
    if data.inputs.iter().flatten().any(|&i| i as usize >= data.dimension) {
        return Err(ModelError::VocabMismatch {
            expected: format!("ids below {}", data.dimension),
            found: "out-of-range id".into(),
        });
    }
    validate_inputs(data, |_| None)?;
    let layout = Layout::new(data.dimension, cfg.embedding_dim, cfg.hidden_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(&layout, &mut rng);
    let mut opt = Optimizer::new(cfg, params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = loss_and_grad(&params, &layout, data, batch);
            check_finite(loss, epoch, b)?;
            opt.step(&mut params, &grad);
        }
    }
    Ok(EmbeddingPoolModel { layout, params, vocab_hash: data.vocab_hash.clone(), config: cfg.clone() })
}
