mod common;

use common::{max_gradient_error, random_batch};
use pollenstack::baseline::{
    flip_pooled, pool, train, Example, FeatureSpec, LinearModel, TrainConfig, TrainingData,
};
use pollenstack::canonical::{flip_layers, AugmentConfig, FlipAxis, FlipDecision};
use pollenstack::rng::keyed_rng;
use pollenstack::CANONICAL_SIZE;
use rand::Rng;

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..5 {
        let err = max_gradient_error(seed);
        assert!(err <= 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn zero_model_loss_is_ln3() {
    let (xs, ys) = random_batch(9, 7, 4);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let loss = LinearModel::zeros(4).batch_loss(&refs, &ys);
    approx::assert_abs_diff_eq!(loss, 3f64.ln(), epsilon = 1e-12);
}

fn separable(n_per_class: usize, dim: usize, seed: u64) -> Vec<Example> {
    let mut rng = keyed_rng("separable", seed, &[]);
    let mut out = Vec::new();
    for c in 0..3 {
        for i in 0..n_per_class {
            let raw = (0..dim)
                .map(|d| if d % 3 == c { 4.0 } else { 0.0 } + rng.gen_range(-1.0..1.0))
                .collect();
            out.push(Example {
                id: format!("c{c}/s{i}"),
                label: c,
                raw,
            });
        }
    }
    out
}

#[test]
fn full_batch_loss_never_increases() {
    let train_set = separable(20, 9, 1);
    let val = separable(3, 9, 2);
    let n = train_set.len();
    let data = TrainingData::new(train_set, val, FeatureSpec::default(), None).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-5,
        epochs: 25,
        batch_size: n,
        augment: None,
        ..TrainConfig::default()
    };
    let t = train(&data, &cfg).unwrap();
    for w in t.log.windows(2) {
        assert!(w[1].train_loss <= w[0].train_loss, "{} > {}", w[1].train_loss, w[0].train_loss);
    }
}

#[test]
fn separable_set_is_learned() {
    let train_set = separable(30, 9, 3);
    let val = separable(5, 9, 4);
    let data = TrainingData::new(train_set.clone(), val, FeatureSpec::default(), None).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 40,
        augment: None,
        ..TrainConfig::default()
    };
    let t = train(&data, &cfg).unwrap();
    let correct = train_set
        .iter()
        .filter(|e| {
            let p = t.model.probabilities(&t.standardizer.apply(&e.raw));
            pollenstack::eval::argmax3(&p) == e.label
        })
        .count();
    assert!(correct as f64 / train_set.len() as f64 >= 0.99);
}

#[test]
fn validation_features_are_never_augmented() {
    let spec = FeatureSpec { pool_grid: 4 };
    let examples: Vec<Example> = (0..6)
        .map(|i| Example {
            id: format!("s{i}"),
            label: i % 3,
            raw: (0..16).map(|v| (v * (i + 1)) as f64).collect(),
        })
        .collect();
    let data = TrainingData::new(
        examples.clone(),
        examples,
        spec,
        Some(AugmentConfig { p_flip: 1.0, seed: 0 }),
    )
    .unwrap();
    let first = data.val_features();
    for epoch in 0..5 {
        assert_eq!(data.val_features(), first);
        assert_ne!(data.train_features(epoch), first);
    }
}

#[test]
fn pooled_flip_equals_pooling_flipped_tensor() {
    let spec = FeatureSpec::default();
    let mut rng = keyed_rng("flip", 0, &[]);
    let mut data = vec![0u8; 2 * CANONICAL_SIZE * CANONICAL_SIZE];
    rng.fill(&mut data[..]);
    for (h, v) in [(true, false), (false, true), (true, true)] {
        let mut flipped = data.clone();
        if h {
            flip_layers(&mut flipped, CANONICAL_SIZE, FlipAxis::Horizontal);
        }
        if v {
            flip_layers(&mut flipped, CANONICAL_SIZE, FlipAxis::Vertical);
        }
        let mut pooled = pool(&data, 2, &spec).unwrap();
        flip_pooled(&mut pooled, spec.pool_grid, FlipDecision { horizontal: h, vertical: v });
        assert_eq!(pooled, pool(&flipped, 2, &spec).unwrap());
    }
}
