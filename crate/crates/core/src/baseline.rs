//! Multinomial logistic regression on block-pooled voxel features.
//!
//! This is a framework-free reference classifier: it consumes the packed
//! dataset exactly as a deep-learning trainer would, so every preprocessing
//! choice upstream shows up in its metrics.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::canonical::{AugmentConfig, FlipDecision};
use crate::error::{Error, Result};
use crate::eval::{PredictionRow, PredictionSet, RunMeta};
use crate::pack::PackedDataset;
use crate::rng::keyed_rng;
use crate::split::FoldRoles;
use crate::CANONICAL_SIZE;

pub const N_CLASSES: usize = 3;
const SD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    /// Each 224x224 layer is average-pooled to `pool_grid x pool_grid`.
    pub pool_grid: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec { pool_grid: 16 }
    }
}

impl FeatureSpec {
    pub fn block(&self) -> Result<usize> {
        if self.pool_grid == 0 || CANONICAL_SIZE % self.pool_grid != 0 {
            return Err(Error::IndivisiblePool {
                grid: self.pool_grid,
                size: CANONICAL_SIZE,
            });
        }
        Ok(CANONICAL_SIZE / self.pool_grid)
    }

    pub fn feature_len(&self, n_layers: usize) -> usize {
        n_layers * self.pool_grid * self.pool_grid
    }
}

/// Non-overlapping block averages of each layer, flattened in
/// (layer, row, col) order. `data` is a layer-major canonical tensor.
pub fn pool(data: &[u8], n_layers: usize, spec: &FeatureSpec) -> Result<Vec<f64>> {
    let block = spec.block()?;
    let g = spec.pool_grid;
    let side = CANONICAL_SIZE;
    assert_eq!(data.len(), n_layers * side * side);
    let area = (block * block) as f64;
    let mut out = vec![0.0; spec.feature_len(n_layers)];
    for (z, layer) in data.chunks_exact(side * side).enumerate() {
        let mut sums = vec![0u64; g * g];
        for r in 0..side {
            let row = &layer[r * side..(r + 1) * side];
            let base = (r / block) * g;
            for (c, &p) in row.iter().enumerate() {
                sums[base + c / block] += p as u64;
            }
        }
        for (i, s) in sums.into_iter().enumerate() {
            out[z * g * g + i] = s as f64 / area;
        }
    }
    Ok(out)
}

/// Applies a flip decision to pooled features. Block boundaries are
/// symmetric, so this equals pooling the flipped tensor.
pub fn flip_pooled(features: &mut [f64], grid: usize, d: FlipDecision) {
    for layer in features.chunks_exact_mut(grid * grid) {
        if d.horizontal {
            for row in layer.chunks_exact_mut(grid) {
                row.reverse();
            }
        }
        if d.vertical {
            for r in 0..grid / 2 {
                let (top, bottom) = layer.split_at_mut((grid - 1 - r) * grid);
                top[r * grid..(r + 1) * grid].swap_with_slice(&mut bottom[..grid]);
            }
        }
    }
}

/// Per-feature standardization learned on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population SD plus a small epsilon, always > 0.
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "cannot fit on no rows");
        let n = rows.len() as f64;
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var.into_iter().map(|s| (s / n).sqrt() + SD_EPSILON).collect();
        Standardizer { mean, sd }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Standardized features of one canonical tensor.
pub fn featurize(
    data: &[u8],
    n_layers: usize,
    spec: &FeatureSpec,
    standardizer: &Standardizer,
) -> Result<Vec<f64>> {
    Ok(standardizer.apply(&pool(data, n_layers, spec)?))
}

pub fn softmax(logits: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|l| (l - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `N_CLASSES x dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: [f64; N_CLASSES],
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: [f64; N_CLASSES],
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; N_CLASSES * dim],
            bias: [0.0; N_CLASSES],
            dim,
        }
    }

    pub fn logits(&self, x: &[f64]) -> [f64; N_CLASSES] {
        let mut out = self.bias;
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.weights[k * self.dim..(k + 1) * self.dim];
            *o += w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }

    pub fn probabilities(&self, x: &[f64]) -> [f64; N_CLASSES] {
        softmax(&self.logits(x))
    }

    /// Mean softmax cross-entropy over a batch.
    pub fn batch_loss(&self, xs: &[&[f64]], ys: &[usize]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| -self.probabilities(x)[y].ln())
            .sum::<f64>()
            / xs.len() as f64
    }

    /// Mean loss and its analytic gradient: `(p - onehot(y)) x^T`.
    pub fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[usize]) -> (f64, Gradient) {
        let n = xs.len() as f64;
        let mut g = Gradient {
            weights: vec![0.0; self.weights.len()],
            bias: [0.0; N_CLASSES],
        };
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let p = self.probabilities(x);
            loss -= p[y].ln();
            for k in 0..N_CLASSES {
                let delta = (p[k] - if k == y { 1.0 } else { 0.0 }) / n;
                g.bias[k] += delta;
                let row = &mut g.weights[k * self.dim..(k + 1) * self.dim];
                for (gw, xv) in row.iter_mut().zip(x.iter()) {
                    *gw += delta * xv;
                }
            }
        }
        (loss / n, g)
    }

    pub fn step(&mut self, g: &Gradient, lr: f64) {
        for (w, d) in self.weights.iter_mut().zip(&g.weights) {
            *w -= lr * d;
        }
        for (b, d) in self.bias.iter_mut().zip(&g.bias) {
            *b -= lr * d;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_batch_size: usize,
    pub seed: u64,
    /// Flip augmentation for the training split; `None` disables it.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 30,
            batch_size: 16,
            val_batch_size: 16,
            seed: 0,
            augment: Some(AugmentConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: usize,
    /// Pooled, unstandardized features.
    pub raw: Vec<f64>,
}

/// Train and validation examples with the standardizer fitted on the
/// training split.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub spec: FeatureSpec,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub standardizer: Standardizer,
    augment: Option<AugmentConfig>,
}

pub fn load_examples(
    dataset: &PackedDataset,
    ids: &[String],
    spec: &FeatureSpec,
) -> Result<Vec<Example>> {
    ids.par_iter()
        .map(|id| {
            let entry = dataset
                .entry(id)
                .ok_or_else(|| Error::UnknownId(id.clone()))?;
            let data = dataset.read_tensor(id)?;
            Ok(Example {
                id: id.clone(),
                label: entry.label.id(),
                raw: pool(&data, entry.n_layers, spec)?,
            })
        })
        .collect()
}

impl TrainingData {
    pub fn new(
        train: Vec<Example>,
        val: Vec<Example>,
        spec: FeatureSpec,
        augment: Option<AugmentConfig>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptySplit("training"));
        }
        if val.is_empty() {
            return Err(Error::EmptySplit("validation"));
        }
        let raw: Vec<Vec<f64>> = train.iter().map(|e| e.raw.clone()).collect();
        let standardizer = Standardizer::fit(&raw);
        Ok(TrainingData {
            spec,
            train,
            val,
            standardizer,
            augment,
        })
    }

    pub fn load(
        dataset: &PackedDataset,
        roles: &FoldRoles,
        spec: FeatureSpec,
        augment: Option<AugmentConfig>,
    ) -> Result<Self> {
        let train = load_examples(dataset, &roles.train, &spec)?;
        let val = load_examples(dataset, &roles.val, &spec)?;
        Self::new(train, val, spec, augment)
    }

    pub fn dim(&self) -> usize {
        self.standardizer.mean.len()
    }

    /// Standardized training features for one epoch, augmented when
    /// augmentation is enabled.
    pub fn train_features(&self, epoch: usize) -> Vec<Vec<f64>> {
        self.train
            .iter()
            .map(|e| {
                let mut raw = e.raw.clone();
                if let Some(cfg) = &self.augment {
                    flip_pooled(&mut raw, self.spec.pool_grid, cfg.decide(&e.id, epoch));
                }
                self.standardizer.apply(&raw)
            })
            .collect()
    }

    /// Standardized validation features. Never augmented.
    pub fn val_features(&self) -> Vec<Vec<f64>> {
        self.val
            .iter()
            .map(|e| self.standardizer.apply(&e.raw))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

pub fn log_tsv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch\ttrain_loss\tval_loss\tval_acc\tseconds\n");
    for e in log {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.6}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.seconds
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: LinearModel,
    pub standardizer: Standardizer,
    pub spec: FeatureSpec,
    pub log: Vec<EpochLog>,
}

impl Trained {
    pub fn mean_seconds_per_epoch(&self) -> Option<f64> {
        if self.log.is_empty() {
            None
        } else {
            Some(self.log.iter().map(|e| e.seconds).sum::<f64>() / self.log.len() as f64)
        }
    }
}

fn evaluate(model: &LinearModel, xs: &[Vec<f64>], ys: &[usize], batch: usize) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (cx, cy) in xs.chunks(batch.max(1)).zip(ys.chunks(batch.max(1))) {
        let refs: Vec<&[f64]> = cx.iter().map(Vec::as_slice).collect();
        loss += model.batch_loss(&refs, cy) * cx.len() as f64;
        correct += cx
            .iter()
            .zip(cy)
            .filter(|(x, &y)| crate::eval::argmax3(&model.probabilities(x)) == y)
            .count();
    }
    (loss / xs.len() as f64, correct as f64 / xs.len() as f64)
}

/// Mini-batch gradient descent on softmax cross-entropy from a zero
/// initialisation. Batch order per epoch comes from a stream keyed by
/// (seed, epoch).
pub fn train(data: &TrainingData, cfg: &TrainConfig) -> Result<Trained> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("train_batch must be at least 1".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Config(format!(
            "learning_rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    let mut model = LinearModel::zeros(data.dim());
    let train_labels: Vec<usize> = data.train.iter().map(|e| e.label).collect();
    let val_x = data.val_features();
    let val_y: Vec<usize> = data.val.iter().map(|e| e.label).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let xs = data.train_features(epoch);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.shuffle(&mut keyed_rng(
            "baseline-shuffle",
            cfg.seed,
            &[&(epoch as u64).to_le_bytes()],
        ));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let (loss, grad) = model.loss_and_gradient(&bx, &by);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * batch.len() as f64;
            model.step(&grad, cfg.learning_rate);
            if !model.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
        }
        let (val_loss, val_accuracy) = evaluate(&model, &val_x, &val_y, cfg.val_batch_size);
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / xs.len() as f64,
            val_loss,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(Trained {
        model,
        standardizer: data.standardizer.clone(),
        spec: data.spec,
        log,
    })
}

/// Softmax probabilities for the given ids, in the order given.
pub fn predict(
    trained: &Trained,
    dataset: &PackedDataset,
    ids: &[String],
    meta: RunMeta,
) -> Result<PredictionSet> {
    let examples = load_examples(dataset, ids, &trained.spec)?;
    let rows = examples
        .iter()
        .map(|e| PredictionRow {
            id: e.id.clone(),
            probs: trained
                .model
                .probabilities(&trained.standardizer.apply(&e.raw)),
        })
        .collect();
    Ok(PredictionSet { meta, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_pools_to_constant() {
        let data = vec![128u8; 2 * 224 * 224];
        let f = pool(&data, 2, &FeatureSpec::default()).unwrap();
        assert_eq!(f.len(), 2 * 256);
        assert!(f.iter().all(|&v| v == 128.0));
    }

    #[test]
    fn grid_224_is_identity() {
        let data: Vec<u8> = (0..224 * 224).map(|i| (i % 253) as u8).collect();
        let f = pool(&data, 1, &FeatureSpec { pool_grid: 224 }).unwrap();
        assert!(f.iter().zip(&data).all(|(a, &b)| *a == b as f64));
    }

    #[test]
    fn half_black_half_white() {
        // Boundary at column 100: block width 14, so block column 7
        // (columns 98..112) is mixed: 2 black + 12 white.
        let data: Vec<u8> = (0..224 * 224)
            .map(|i| if i % 224 < 100 { 0 } else { 255 })
            .collect();
        let f = pool(&data, 1, &FeatureSpec::default()).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                let v = f[r * 16 + c];
                match c {
                    0..=6 => assert_eq!(v, 0.0),
                    7 => assert_eq!(v, 255.0 * 12.0 / 14.0),
                    _ => assert_eq!(v, 255.0),
                }
            }
        }
    }

    #[test]
    fn indivisible_grid() {
        assert!(matches!(
            pool(&[0u8; 224 * 224], 1, &FeatureSpec { pool_grid: 15 }),
            Err(Error::IndivisiblePool { .. })
        ));
    }

    #[test]
    fn zero_model_loss_is_ln3() {
        let m = LinearModel::zeros(4);
        let x1 = [1.0, 2.0, 3.0, 4.0];
        let x2 = [-1.0, 0.5, 0.0, 2.0];
        let loss = m.batch_loss(&[&x1, &x2], &[0, 2]);
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[100.3, 98.8, 102.0]);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardizer_sd_positive() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![1.0, 7.0]]);
        assert!(s.sd.iter().all(|&v| v > 0.0));
        assert_eq!(s.apply(&[1.0, 6.0]), vec![0.0, 0.0]);
    }
}
