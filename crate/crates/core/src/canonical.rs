//! Mean-value padding to the canonical 224x224 frame and stack-coherent flip
//! augmentation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::focus::LayerWindow;
use crate::rng::keyed_rng;
use crate::stack::{ClassLabel, Layer, ZStack};
use crate::CANONICAL_SIZE;

/// Where the pad value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadMode {
    /// Each layer is padded with its own rounded mean.
    #[default]
    PerLayer,
    /// All layers of a window share the rounded mean over the whole window.
    PerStack,
}

impl std::str::FromStr for PadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-layer" => Ok(PadMode::PerLayer),
            "per-stack" => Ok(PadMode::PerStack),
            _ => Err(Error::Config(format!(
                "pad_mode must be per-layer or per-stack, got {s:?}"
            ))),
        }
    }
}

impl std::fmt::Display for PadMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PadMode::PerLayer => "per-layer",
            PadMode::PerStack => "per-stack",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipAxis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

/// A fixed-shape `n_layers x 224 x 224` sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalSample {
    pub id: String,
    pub label: ClassLabel,
    pub n_layers: usize,
    /// Layer-major, each layer row-major.
    pub data: Vec<u8>,
    pub focal_index: usize,
    pub window: LayerWindow,
}

impl CanonicalSample {
    pub const LAYER_LEN: usize = CANONICAL_SIZE * CANONICAL_SIZE;

    pub fn layer(&self, z: usize) -> &[u8] {
        &self.data[z * Self::LAYER_LEN..(z + 1) * Self::LAYER_LEN]
    }

    pub fn byte_len(&self) -> usize {
        self.data.len()
    }
}

/// Rounded (half-up) arithmetic mean of 8-bit pixels.
pub fn rounded_mean<'a>(pixels: impl IntoIterator<Item = &'a u8>) -> u8 {
    let (sum, n) = pixels
        .into_iter()
        .fold((0u64, 0u64), |(s, n), &p| (s + p as u64, n + 1));
    assert!(n > 0, "mean of empty layer");
    ((2 * sum + n) / (2 * n)) as u8
}

fn check_fits(layer: &Layer, target: usize) -> Result<()> {
    if layer.height() > target || layer.width() > target {
        return Err(Error::Oversized {
            height: layer.height(),
            width: layer.width(),
            target,
        });
    }
    Ok(())
}

/// Centres `layer` in a `target x target` frame filled with `pad`.
pub fn pad_with(layer: &Layer, target: usize, pad: u8) -> Result<Layer> {
    check_fits(layer, target)?;
    let (h, w) = (layer.height(), layer.width());
    let top = (target - h) / 2;
    let left = (target - w) / 2;
    let mut out = vec![pad; target * target];
    for r in 0..h {
        let dst = (top + r) * target + left;
        out[dst..dst + w].copy_from_slice(&layer.pixels()[r * w..(r + 1) * w]);
    }
    Ok(Layer::new(target, target, out))
}

/// Centres `layer` in a `target x target` frame padded with the layer's own
/// rounded mean grayscale value.
pub fn pad_to_canonical(layer: &Layer, target: usize) -> Result<Layer> {
    check_fits(layer, target)?;
    pad_with(layer, target, rounded_mean(layer.pixels()))
}

/// Pads the window's layers into a canonical sample.
pub fn canonicalize(
    stack: &ZStack,
    focal_index: usize,
    window: LayerWindow,
    mode: PadMode,
) -> Result<CanonicalSample> {
    let layers = &stack.layers()[window.start..=window.end()];
    let shared = match mode {
        PadMode::PerLayer => None,
        PadMode::PerStack => Some(rounded_mean(layers.iter().flat_map(|l| l.pixels()))),
    };
    let mut data = Vec::with_capacity(window.len * CanonicalSample::LAYER_LEN);
    for layer in layers {
        let padded = match shared {
            Some(v) => pad_with(layer, CANONICAL_SIZE, v)?,
            None => pad_to_canonical(layer, CANONICAL_SIZE)?,
        };
        data.extend_from_slice(padded.pixels());
    }
    Ok(CanonicalSample {
        id: stack.id.clone(),
        label: stack.label,
        n_layers: window.len,
        data,
        focal_index,
        window,
    })
}

/// Flips every square `side x side` layer of a layer-major buffer in place.
pub fn flip_layers(data: &mut [u8], side: usize, axis: FlipAxis) {
    for layer in data.chunks_exact_mut(side * side) {
        match axis {
            FlipAxis::Horizontal => {
                for row in layer.chunks_exact_mut(side) {
                    row.reverse();
                }
            }
            FlipAxis::Vertical => {
                for r in 0..side / 2 {
                    let (top, bottom) = layer.split_at_mut((side - 1 - r) * side);
                    top[r * side..(r + 1) * side].swap_with_slice(&mut bottom[..side]);
                }
            }
        }
    }
}

/// Applies the same flip to every layer of the sample.
pub fn flip(sample: &CanonicalSample, axis: FlipAxis) -> CanonicalSample {
    let mut out = sample.clone();
    flip_layers(&mut out.data, CANONICAL_SIZE, axis);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub p_flip: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_flip: 0.5,
            seed: 0,
        }
    }
}

/// Which flips a (sample, epoch) pair receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlipDecision {
    pub horizontal: bool,
    pub vertical: bool,
}

impl AugmentConfig {
    /// Two independent uniform draws from the stream keyed by
    /// (seed, sample id, epoch); each flip fires when its draw is below
    /// `p_flip`.
    pub fn decide(&self, id: &str, epoch: usize) -> FlipDecision {
        let mut rng = keyed_rng(
            "augment",
            self.seed,
            &[id.as_bytes(), &(epoch as u64).to_le_bytes()],
        );
        let first: f64 = rng.gen();
        let second: f64 = rng.gen();
        FlipDecision {
            horizontal: first < self.p_flip,
            vertical: second < self.p_flip,
        }
    }
}

pub fn augment(sample: &CanonicalSample, cfg: &AugmentConfig, epoch: usize) -> CanonicalSample {
    let d = cfg.decide(&sample.id, epoch);
    let mut out = sample.clone();
    if d.horizontal {
        flip_layers(&mut out.data, CANONICAL_SIZE, FlipAxis::Horizontal);
    }
    if d.vertical {
        flip_layers(&mut out.data, CANONICAL_SIZE, FlipAxis::Vertical);
    }
    out
}
