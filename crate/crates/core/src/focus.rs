//! Canny edge detection, edge-strength sharpness, focal-layer selection and
//! layer-window extraction.

use std::io::{self, Write};
use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stack::{Layer, ZStack};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    /// Odd kernel width, at least 3.
    pub gaussian_kernel: usize,
    /// High threshold as a quantile of the nonzero gradient magnitudes.
    pub high_threshold_quantile: f64,
    /// Low threshold = ratio * high threshold.
    pub low_high_ratio: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            gaussian_sigma: 1.4,
            gaussian_kernel: 5,
            high_threshold_quantile: 0.90,
            low_high_ratio: 0.5,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "canny_sigma must be > 0, got {}",
                self.gaussian_sigma
            )));
        }
        if self.gaussian_kernel < 3 || self.gaussian_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "canny_kernel must be odd and >= 3, got {}",
                self.gaussian_kernel
            )));
        }
        if !(self.high_threshold_quantile > 0.0 && self.high_threshold_quantile <= 1.0) {
            return Err(Error::Config(format!(
                "canny_high_quantile must be in (0, 1], got {}",
                self.high_threshold_quantile
            )));
        }
        if !(self.low_high_ratio > 0.0 && self.low_high_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "canny_low_ratio must be in (0, 1], got {}",
                self.low_high_ratio
            )));
        }
        Ok(())
    }
}

/// Output of [`canny_edges`]: gradient magnitude of the smoothed layer and
/// the hysteresis-confirmed edge mask, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub magnitude: Vec<f64>,
    pub mask: Vec<bool>,
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl EdgeMap {
    pub fn edge_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Edge mask as a black/white layer, for visual inspection.
    pub fn mask_layer(&self) -> Layer {
        Layer::new(
            self.height,
            self.width,
            self.mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
        )
    }
}

fn gaussian_kernel(sigma: f64, size: usize) -> Vec<f64> {
    let half = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Separable convolution with replicated borders.
fn smooth(src: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * row[clamp_index(c as isize + k as isize - half, w)];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[clamp_index(r as isize + k as isize - half, h) * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Sobel derivatives with replicated borders. `gx` grows to the right,
/// `gy` grows downward.
fn sobel(src: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let at = |r: isize, c: isize| src[clamp_index(r, h) * w + clamp_index(c, w)];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            gx[i] = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            gy[i] = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
        }
    }
    (gx, gy)
}

/// Neighbour offsets (row, col) along the gradient, quantized to 0/45/90/135
/// degrees.
fn gradient_neighbours(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (0, 1)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (1, 0)
    } else {
        (1, -1)
    }
}

fn non_maximum_suppression(mag: &[f64], gx: &[f64], gy: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let (dr, dc) = gradient_neighbours(gx[i], gy[i]);
            let (r, c) = (r as isize, c as isize);
            let at = |rr: isize, cc: isize| {
                if (0..h as isize).contains(&rr) && (0..w as isize).contains(&cc) {
                    mag[rr as usize * w + cc as usize]
                } else {
                    0.0
                }
            };
            let ahead = at(r + dr, c + dc);
            let behind = at(r - dr, c - dc);
            // A two-pixel plateau keeps only its far pixel.
            if m > ahead && m >= behind {
                out[i] = m;
            }
        }
    }
    out
}

/// Nearest-rank quantile of an unsorted sample.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = (q * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

fn hysteresis(thinned: &[f64], h: usize, w: usize, low: f64, high: f64) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask[start] || thinned[start] <= 0.0 || thinned[start] < high {
            continue;
        }
        mask[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if !mask[j] && thinned[j] > 0.0 && thinned[j] >= low {
                        mask[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    mask
}

/// Gaussian smoothing, Sobel gradients, non-maximum suppression and
/// double-threshold hysteresis.
///
/// The high threshold is the configured quantile of the nonzero gradient
/// magnitudes of this layer, so the detector adapts to per-layer contrast.
pub fn canny_edges(layer: &Layer, params: &CannyParams) -> EdgeMap {
    let (h, w) = (layer.height(), layer.width());
    let src: Vec<f64> = layer.pixels().iter().map(|&p| p as f64).collect();
    let kernel = gaussian_kernel(params.gaussian_sigma, params.gaussian_kernel);
    let smoothed = smooth(&src, h, w, &kernel);
    let (gx, gy) = sobel(&smoothed, h, w);
    let magnitude: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();

    let mut nonzero: Vec<f64> = magnitude.iter().copied().filter(|&m| m > 0.0).collect();
    if nonzero.is_empty() {
        return EdgeMap {
            height: h,
            width: w,
            magnitude,
            mask: vec![false; h * w],
            low_threshold: 0.0,
            high_threshold: 0.0,
        };
    }
    let high = quantile(&mut nonzero, params.high_threshold_quantile);
    let low = params.low_high_ratio * high;

    let thinned = non_maximum_suppression(&magnitude, &gx, &gy, h, w);
    let mask = hysteresis(&thinned, h, w, low, high);
    EdgeMap {
        height: h,
        width: w,
        magnitude,
        mask,
        low_threshold: low,
        high_threshold: high,
    }
}

/// Sum of gradient magnitude over confirmed edge pixels, divided by the
/// layer's pixel count.
pub fn sharpness(layer: &Layer, params: &CannyParams) -> f64 {
    let edges = canny_edges(layer, params);
    let total: f64 = edges
        .magnitude
        .iter()
        .zip(&edges.mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| v)
        .sum();
    total / layer.len() as f64
}

/// Inclusive, contiguous range of layer indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerWindow {
    pub start: usize,
    pub len: usize,
}

impl LayerWindow {
    pub fn end(&self) -> usize {
        self.start + self.len - 1
    }

    pub fn indices(&self) -> RangeInclusive<usize> {
        self.start..=self.end()
    }

    pub fn contains(&self, z: usize) -> bool {
        self.indices().contains(&z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocusProfile {
    pub scores: Vec<f64>,
    pub focal_index: usize,
    pub window: Option<LayerWindow>,
}

impl FocusProfile {
    /// Line-oriented dump: the id, one `layer<TAB>score` line per layer,
    /// then `focal<TAB>k`.
    pub fn write_dump(&self, id: &str, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "{id}")?;
        for (z, s) in self.scores.iter().enumerate() {
            writeln!(w, "{z}\t{s}")?;
        }
        writeln!(w, "focal\t{}", self.focal_index)
    }
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Scores every layer and picks the sharpest one. The returned profile has
/// no window yet; see [`extract_window`].
pub fn select_focal(stack: &ZStack, params: &CannyParams) -> FocusProfile {
    let scores: Vec<f64> = stack
        .layers()
        .par_iter()
        .map(|l| sharpness(l, params))
        .collect();
    let focal_index = argmax_lowest(&scores);
    FocusProfile {
        scores,
        focal_index,
        window: None,
    }
}

/// The `n` contiguous layers centred on `focal`, shifted (never shrunk) to
/// stay inside `[0, depth)`. For even `n` the extra layer goes below the
/// focal layer.
pub fn window_for_depth(depth: usize, focal: usize, n: usize) -> Result<LayerWindow> {
    if n < 1 {
        return Err(Error::EmptyWindow);
    }
    if n > depth {
        return Err(Error::WindowExceedsDepth { n, depth });
    }
    if focal >= depth {
        return Err(Error::FocalOutOfRange { focal, depth });
    }
    let ideal_start = focal as isize - ((n - 1) / 2) as isize;
    let start = ideal_start.clamp(0, (depth - n) as isize) as usize;
    Ok(LayerWindow { start, len: n })
}

pub fn extract_window(stack: &ZStack, focal_index: usize, n: usize) -> Result<LayerWindow> {
    window_for_depth(stack.depth(), focal_index, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::ClassLabel;

    fn stack_of(layers: Vec<Layer>) -> ZStack {
        ZStack::new("s", ClassLabel::Urtica, layers).unwrap()
    }

    #[test]
    fn constant_image_has_no_edges() {
        let edges = canny_edges(&Layer::filled(32, 32, 128), &CannyParams::default());
        assert!(edges.magnitude.iter().all(|&m| m == 0.0));
        assert_eq!(edges.edge_count(), 0);
        assert_eq!(sharpness(&Layer::filled(32, 32, 128), &CannyParams::default()), 0.0);
    }

    #[test]
    fn vertical_step_edge() {
        let layer = Layer::from_fn(40, 40, |_, c| if c < 20 { 0 } else { 255 });
        let edges = canny_edges(&layer, &CannyParams::default());
        assert!(edges.edge_count() > 0);
        let mut cols = std::collections::BTreeSet::new();
        for r in 0..40 {
            for c in 0..40 {
                let i = r * 40 + c;
                if edges.mask[i] {
                    assert!(edges.magnitude[i] > 0.0);
                    cols.insert(c);
                }
            }
        }
        // One narrow band straddling the step.
        assert!(cols.iter().all(|&c| (18..=21).contains(&c)), "{cols:?}");
        assert!(cols.len() <= 2);
        // Every row carries the edge.
        for r in 0..40 {
            assert!((0..40).any(|c| edges.mask[r * 40 + c]));
        }
    }

    #[test]
    fn mask_respects_low_threshold() {
        let layer = Layer::from_fn(50, 50, |r, c| ((r * 13 + c * 29) % 97 * 2) as u8);
        let e = canny_edges(&layer, &CannyParams::default());
        for (m, &on) in e.magnitude.iter().zip(&e.mask) {
            if on {
                assert!(*m >= e.low_threshold);
            }
        }
    }

    #[test]
    fn param_validation() {
        assert!(CannyParams::default().validate().is_ok());
        let bad = CannyParams {
            gaussian_kernel: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CannyParams {
            high_threshold_quantile: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn identical_layers_tie_to_zero() {
        let layer = Layer::from_fn(24, 24, |r, c| if (r / 4 + c / 4) % 2 == 0 { 30 } else { 220 });
        let profile = select_focal(&stack_of(vec![layer; 5]), &CannyParams::default());
        assert_eq!(profile.focal_index, 0);
        assert_eq!(profile.scores.len(), 5);
    }

    #[test]
    fn single_layer_stack() {
        let profile = select_focal(
            &stack_of(vec![Layer::filled(8, 8, 3)]),
            &CannyParams::default(),
        );
        assert_eq!(profile.focal_index, 0);
    }

    #[test]
    fn window_examples() {
        let w = window_for_depth(20, 10, 6).unwrap();
        assert_eq!(w.indices(), 8..=13);
        let w = window_for_depth(20, 1, 6).unwrap();
        assert_eq!(w.indices(), 0..=5);
        let w = window_for_depth(20, 10, 20).unwrap();
        assert_eq!(w.indices(), 0..=19);
        let w = window_for_depth(20, 19, 6).unwrap();
        assert_eq!(w.indices(), 14..=19);
    }

    #[test]
    fn window_errors() {
        assert!(matches!(
            window_for_depth(20, 3, 25),
            Err(Error::WindowExceedsDepth { n: 25, depth: 20 })
        ));
        assert!(window_for_depth(20, 3, 25)
            .unwrap_err()
            .to_string()
            .contains("window exceeds stack depth"));
        assert!(matches!(window_for_depth(20, 3, 0), Err(Error::EmptyWindow)));
    }

    #[test]
    fn dump_format() {
        let p = FocusProfile {
            scores: vec![0.5, 2.0],
            focal_index: 1,
            window: None,
        };
        let mut out = Vec::new();
        p.write_dump("urtica/a", &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "urtica/a\n0\t0.5\n1\t2\nfocal\t1\n");
    }
}
