#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use pollenstack::baseline::LinearModel;
use pollenstack::eval::{PredictionRow, PredictionSet, RunMeta};
use pollenstack::rng::keyed_rng;
use pollenstack::stack::{ClassLabel, DatasetManifest, Layer, ManifestRecord};
use rand::Rng;

/// Sum of squared Sobel responses over interior pixels, computed pixel by
/// pixel with no smoothing.
pub fn tenengrad(layer: &Layer) -> f64 {
    let (h, w) = (layer.height(), layer.width());
    let px = |r: usize, c: usize| layer.get(r, c) as f64;
    let mut total = 0.0;
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let gx = (px(r - 1, c + 1) + 2.0 * px(r, c + 1) + px(r + 1, c + 1))
                - (px(r - 1, c - 1) + 2.0 * px(r, c - 1) + px(r + 1, c - 1));
            let gy = (px(r + 1, c - 1) + 2.0 * px(r + 1, c) + px(r + 1, c + 1))
                - (px(r - 1, c - 1) + 2.0 * px(r - 1, c) + px(r - 1, c + 1));
            total += gx * gx + gy * gy;
        }
    }
    total
}

/// First index of the maximum.
pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Manifest with `counts[c]` fake records for class `c`.
pub fn manifest(counts: [usize; 3]) -> DatasetManifest {
    let mut records = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        let label = ClassLabel::from_id(c).unwrap();
        for i in 0..n {
            records.push(ManifestRecord {
                id: format!("c{c}/s{i:05}"),
                path: PathBuf::from(format!("/nowhere/c{c}/s{i:05}")),
                label,
                depth: 20,
                height: 64,
                width: 64,
            });
        }
    }
    DatasetManifest::new(records).unwrap()
}

/// Splits `n` into three near-equal class counts.
pub fn balanced(n: usize) -> [usize; 3] {
    [n / 3 + usize::from(n % 3 > 0), n / 3 + usize::from(n % 3 > 1), n / 3]
}

pub fn truth(labels: &[usize]) -> BTreeMap<String, ClassLabel> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| (format!("s{i}"), ClassLabel::from_id(c).unwrap()))
        .collect()
}

pub fn predictions(probs: &[[f64; 3]]) -> PredictionSet {
    PredictionSet {
        meta: RunMeta {
            model: "fixture".into(),
            ..RunMeta::default()
        },
        rows: probs
            .iter()
            .enumerate()
            .map(|(i, p)| PredictionRow {
                id: format!("s{i}"),
                probs: *p,
            })
            .collect(),
    }
}

pub fn one_hot(classes: &[usize]) -> PredictionSet {
    let probs: Vec<[f64; 3]> = classes
        .iter()
        .map(|&c| {
            let mut p = [0.0; 3];
            p[c] = 1.0;
            p
        })
        .collect();
    predictions(&probs)
}

pub fn random_batch(seed: u64, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = keyed_rng("batch", seed, &[]);
    let xs = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let ys = (0..n).map(|_| rng.gen_range(0..3)).collect();
    (xs, ys)
}

pub fn random_model(seed: u64, dim: usize) -> LinearModel {
    let mut rng = keyed_rng("model", seed, &[]);
    let mut m = LinearModel::zeros(dim);
    m.weights.iter_mut().for_each(|w| *w = rng.gen_range(-0.5..0.5));
    m.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    m
}

/// Largest relative error between the analytic gradient and central
/// differences over every weight and bias.
pub fn max_gradient_error(seed: u64) -> f64 {
    let dim = 12;
    let (xs, ys) = random_batch(seed, 5, dim);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let model = random_model(seed, dim);
    let (_, g) = model.loss_and_gradient(&refs, &ys);
    let h = 1e-4;
    let rel = |analytic: f64, numeric: f64| {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
    };
    let mut worst: f64 = 0.0;
    for i in 0..model.weights.len() {
        let (mut plus, mut minus) = (model.clone(), model.clone());
        plus.weights[i] += h;
        minus.weights[i] -= h;
        let numeric = (plus.batch_loss(&refs, &ys) - minus.batch_loss(&refs, &ys)) / (2.0 * h);
        worst = worst.max(rel(g.weights[i], numeric));
    }
    for k in 0..3 {
        let (mut plus, mut minus) = (model.clone(), model.clone());
        plus.bias[k] += h;
        minus.bias[k] -= h;
        let numeric = (plus.batch_loss(&refs, &ys) - minus.batch_loss(&refs, &ys)) / (2.0 * h);
        worst = worst.max(rel(g.bias[k], numeric));
    }
    worst
}
