//! Pipeline configuration: `key = value` text with per-key validation.
//!
//! Precedence is flags > file > defaults; the `POLLENSTACK_SEED` environment
//! variable replaces the default seed only.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::baseline::{FeatureSpec, TrainConfig};
use crate::canonical::{AugmentConfig, PadMode};
use crate::error::{Error, Result};
use crate::focus::CannyParams;

pub const SEED_ENV: &str = "POLLENSTACK_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub folds: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub augment_threshold: f64,
    pub layers: usize,
    pub train_batch: usize,
    pub val_batch: usize,
    pub seed: u64,
    pub fold: usize,
    pub test_fraction: f64,
    pub pool_grid: usize,
    pub pad_mode: PadMode,
    pub canny: CannyParams,
    /// Worker threads for preprocessing; 0 means all available cores.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            folds: 10,
            epochs: 30,
            learning_rate: 0.0001,
            augment_threshold: 0.5,
            layers: 6,
            train_batch: 16,
            val_batch: 16,
            seed: 0,
            fold: 0,
            test_fraction: 0.10,
            pool_grid: 16,
            pad_mode: PadMode::PerLayer,
            canny: CannyParams::default(),
            workers: 0,
        }
    }
}

/// Every configuration key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("folds", "number of cross-validation folds"),
    ("epochs", "training epochs"),
    ("learning_rate", "learning rate"),
    ("augment_threshold", "probability of each flip during training"),
    ("layers", "number of layers in the focal window"),
    ("train_batch", "training batch size"),
    ("val_batch", "validation batch size"),
    ("seed", "seed for splitting, shuffling and augmentation"),
    ("fold", "fold used for validation by baseline runs"),
    ("test_fraction", "fraction of samples held out for testing"),
    ("pool_grid", "baseline feature pooling grid per layer"),
    ("pad_mode", "pad value source: per-layer or per-stack"),
    ("canny_sigma", "Gaussian sigma before edge detection"),
    ("canny_kernel", "Gaussian kernel width (odd)"),
    ("canny_high_quantile", "high hysteresis threshold as a quantile of nonzero gradients"),
    ("canny_low_ratio", "low threshold as a fraction of the high threshold"),
    ("workers", "preprocessing threads (0 = all cores)"),
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

impl PipelineConfig {
    /// Defaults, with the seed taken from `POLLENSTACK_SEED` when set.
    pub fn from_env() -> Result<Self> {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = parse_num(SEED_ENV, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "folds" => self.folds = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "augment_threshold" => self.augment_threshold = parse_num(key, value)?,
            "layers" => self.layers = parse_num(key, value)?,
            "train_batch" => self.train_batch = parse_num(key, value)?,
            "val_batch" => self.val_batch = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "fold" => self.fold = parse_num(key, value)?,
            "test_fraction" => self.test_fraction = parse_num(key, value)?,
            "pool_grid" => self.pool_grid = parse_num(key, value)?,
            "pad_mode" => self.pad_mode = value.trim().parse()?,
            "canny_sigma" => self.canny.gaussian_sigma = parse_num(key, value)?,
            "canny_kernel" => self.canny.gaussian_kernel = parse_num(key, value)?,
            "canny_high_quantile" => self.canny.high_threshold_quantile = parse_num(key, value)?,
            "canny_low_ratio" => self.canny.low_high_ratio = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "folds" => self.folds.to_string(),
            "epochs" => self.epochs.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "augment_threshold" => self.augment_threshold.to_string(),
            "layers" => self.layers.to_string(),
            "train_batch" => self.train_batch.to_string(),
            "val_batch" => self.val_batch.to_string(),
            "seed" => self.seed.to_string(),
            "fold" => self.fold.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "pool_grid" => self.pool_grid.to_string(),
            "pad_mode" => self.pad_mode.to_string(),
            "canny_sigma" => self.canny.gaussian_sigma.to_string(),
            "canny_kernel" => self.canny.gaussian_kernel.to_string(),
            "canny_high_quantile" => self.canny.high_threshold_quantile.to_string(),
            "canny_low_ratio" => self.canny.low_high_ratio.to_string(),
            "workers" => self.workers.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Applies a `key = value` document on top of `self`. Blank lines and
    /// `#` comments are ignored; unknown or repeated keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: {k} given twice", i + 1)));
            }
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("registered key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.folds < 2 {
            return fail(format!("folds must be >= 2, got {}", self.folds));
        }
        if self.fold >= self.folds {
            return fail(format!("fold {} out of range for {} folds", self.fold, self.folds));
        }
        if self.layers == 0 {
            return fail("layers must be >= 1".into());
        }
        if self.train_batch == 0 || self.val_batch == 0 {
            return fail("batch sizes must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.augment_threshold) {
            return fail(format!(
                "augment_threshold must be in [0, 1], got {}",
                self.augment_threshold
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return fail(format!("test_fraction must be in [0, 1), got {}", self.test_fraction));
        }
        FeatureSpec {
            pool_grid: self.pool_grid,
        }
        .block()?;
        self.canny.validate()
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            pool_grid: self.pool_grid,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            p_flip: self.augment_threshold,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.train_batch,
            val_batch_size: self.val_batch,
            seed: self.seed,
            augment: Some(self.augment()),
        }
    }
}
