//! Synthetic z-stacks for testing and desk-scale experiments.
//!
//! A stack is one sharp texture layer with progressively stronger Gaussian
//! blur away from it (a blur pyramid), which mimics a grain passing through
//! the focal plane of a widefield microscope.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::stack::{write_multipage_tiff, write_png, ClassLabel, Layer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Texture {
    Checkerboard,
    Noise,
    Blobs,
}

impl Texture {
    pub const ALL: [Texture; 3] = [Texture::Checkerboard, Texture::Noise, Texture::Blobs];
}

/// Builds a sharp texture. Intensities stay inside `[lo, hi]`.
pub fn texture(kind: Texture, h: usize, w: usize, lo: u8, hi: u8, rng: &mut ChaCha8Rng) -> Layer {
    match kind {
        Texture::Checkerboard => {
            let cell = rng.gen_range(3..=8);
            Layer::from_fn(h, w, |r, c| if (r / cell + c / cell) % 2 == 0 { lo } else { hi })
        }
        Texture::Noise => {
            let pixels = (0..h * w).map(|_| rng.gen_range(lo..=hi)).collect();
            Layer::new(h, w, pixels)
        }
        Texture::Blobs => {
            let n = rng.gen_range(6..=14);
            let blobs: Vec<(f64, f64, f64)> = (0..n)
                .map(|_| {
                    (
                        rng.gen_range(0.0..h as f64),
                        rng.gen_range(0.0..w as f64),
                        rng.gen_range(2.0..(h.min(w) as f64 / 5.0).max(2.5)),
                    )
                })
                .collect();
            Layer::from_fn(h, w, |r, c| {
                let inside = blobs.iter().any(|&(br, bc, rad)| {
                    let (dr, dc) = (r as f64 - br, c as f64 - bc);
                    dr * dr + dc * dc <= rad * rad
                });
                if inside {
                    hi
                } else {
                    lo
                }
            })
        }
    }
}

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicated borders, rounded back to 8 bits.
/// `sigma <= 0` returns the input unchanged.
pub fn gaussian_blur(layer: &Layer, sigma: f64) -> Layer {
    if sigma <= 0.0 {
        return layer.clone();
    }
    let (h, w) = (layer.height(), layer.width());
    let k = kernel(sigma);
    let half = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let src: Vec<f64> = layer.pixels().iter().map(|&p| p as f64).collect();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * src[r * w + clamp(c as isize + i as isize - half, w)])
                .sum();
        }
    }
    Layer::from_fn(h, w, |r, c| {
        let v: f64 = k
            .iter()
            .enumerate()
            .map(|(i, kv)| kv * tmp[clamp(r as isize + i as isize - half, h) * w + c])
            .sum();
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// Layer `z` is `sharp` blurred with sigma `step * |z - sharp_index|`.
pub fn blur_pyramid(sharp: &Layer, depth: usize, sharp_index: usize, step: f64) -> Vec<Layer> {
    (0..depth)
        .map(|z| gaussian_blur(sharp, step * (z as f64 - sharp_index as f64).abs()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackFormat {
    /// One directory per stack with a PNG per layer.
    PngLayers,
    /// One multi-page TIFF per stack.
    MultipageTiff,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub per_class: usize,
    pub depth: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub blur_step: f64,
    pub seed: u64,
    pub format: StackFormat,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_class: 10,
            depth: 20,
            min_size: 40,
            max_size: 72,
            blur_step: 0.5,
            seed: 0,
            format: StackFormat::PngLayers,
        }
    }
}

/// Class-specific texture and intensity band. The bands do not overlap, so
/// the classes are linearly separable by mean intensity.
pub fn class_appearance(label: ClassLabel) -> (Texture, u8, u8) {
    match label {
        ClassLabel::Urtica => (Texture::Checkerboard, 30, 90),
        ClassLabel::Parietaria => (Texture::Noise, 100, 160),
        ClassLabel::UrticaMembranacea => (Texture::Blobs, 170, 230),
    }
}

pub fn class_dir_name(label: ClassLabel) -> &'static str {
    match label {
        ClassLabel::Urtica => "urtica",
        ClassLabel::Parietaria => "parietaria",
        ClassLabel::UrticaMembranacea => "membranacea",
    }
}

/// One generated stack plus the index of its sharp layer.
pub struct SynthStack {
    pub name: String,
    pub label: ClassLabel,
    pub sharp_index: usize,
    pub layers: Vec<Layer>,
}

pub fn generate_stack(cfg: &SynthConfig, label: ClassLabel, i: usize) -> SynthStack {
    let mut rng = keyed_rng(
        "synth",
        cfg.seed,
        &[&(label.id() as u64).to_le_bytes(), &(i as u64).to_le_bytes()],
    );
    let h = rng.gen_range(cfg.min_size..=cfg.max_size);
    let w = rng.gen_range(cfg.min_size..=cfg.max_size);
    let sharp_index = rng.gen_range(0..cfg.depth);
    let (kind, lo, hi) = class_appearance(label);
    let sharp = texture(kind, h, w, lo, hi, &mut rng);
    SynthStack {
        name: format!("g{i:04}"),
        label,
        sharp_index,
        layers: blur_pyramid(&sharp, cfg.depth, sharp_index, cfg.blur_step),
    }
}

/// Writes a directory-per-class tree under `root` and returns the sharp
/// layer index of every stack, keyed by sample id.
pub fn write_tree(root: &Path, cfg: &SynthConfig) -> Result<Vec<(String, usize)>> {
    let mut truth = Vec::new();
    for label in ClassLabel::ALL {
        let class_dir = root.join(class_dir_name(label));
        fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        for i in 0..cfg.per_class {
            let s = generate_stack(cfg, label, i);
            match cfg.format {
                StackFormat::PngLayers => {
                    let dir = class_dir.join(&s.name);
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    for (z, layer) in s.layers.iter().enumerate() {
                        write_png(&dir.join(format!("z{z:02}.png")), layer)?;
                    }
                }
                StackFormat::MultipageTiff => {
                    write_multipage_tiff(&class_dir.join(format!("{}.tif", s.name)), &s.layers)?;
                }
            }
            truth.push((format!("{}/{}", class_dir_name(label), s.name), s.sharp_index));
        }
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_zero_is_identity_and_blur_flattens() {
        let mut rng = keyed_rng("t", 0, &[]);
        let t = texture(Texture::Checkerboard, 30, 30, 0, 255, &mut rng);
        assert_eq!(gaussian_blur(&t, 0.0), t);
        let b = gaussian_blur(&t, 3.0);
        let spread = |l: &Layer| {
            let (mn, mx) = l.pixels().iter().fold((255u8, 0u8), |(a, b), &p| (a.min(p), b.max(p)));
            mx - mn
        };
        assert!(spread(&b) < spread(&t));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = generate_stack(&cfg, ClassLabel::Parietaria, 3);
        let b = generate_stack(&cfg, ClassLabel::Parietaria, 3);
        assert_eq!(a.layers, b.layers);
        assert_eq!(a.sharp_index, b.sharp_index);
        assert_eq!(a.layers.len(), 20);
    }
}
