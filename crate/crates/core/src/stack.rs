//! Z-stack domain types and ingestion of on-disk image stacks.
//!
//! Two on-disk shapes are understood: a directory holding one single-page
//! image per layer (layer order = lexicographic filename order), or one
//! multi-page TIFF per stack. Labels come either from the class directory a
//! sample sits in or from a sidecar `id<TAB>label` file.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::DynamicImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::CANONICAL_SIZE;

pub const MANIFEST_VERSION: &str = "manifest-v1";

/// Number of pollen grains in the original Urticaceae collection.
pub const REFERENCE_DATASET_SIZE: usize = 6472;

/// Layers per stack in the reference acquisition protocol.
pub const REFERENCE_DEPTH: usize = 20;

const LAYER_EXTENSIONS: &[&str] = &["png", "tif", "tiff"];
const STACK_EXTENSIONS: &[&str] = &["tif", "tiff"];

/// The three pollen classes. Ids and names form a fixed bijection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    /// Urtica urens and Urtica dioica.
    Urtica = 0,
    /// Parietaria judaica and Parietaria officinalis.
    Parietaria = 1,
    /// Urtica membranacea, kept apart because it is morphologically distinct.
    UrticaMembranacea = 2,
}

impl ClassLabel {
    pub const COUNT: usize = 3;
    pub const ALL: [ClassLabel; 3] = [
        ClassLabel::Urtica,
        ClassLabel::Parietaria,
        ClassLabel::UrticaMembranacea,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Urtica => "Urtica",
            ClassLabel::Parietaria => "Parietaria",
            ClassLabel::UrticaMembranacea => "Urtica membranacea",
        }
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    /// Accepts the numeric id, the display name, or the usual directory
    /// spellings (`urtica`, `parietaria`, `membranacea`, `urtica_membranacea`).
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '-' || c == ' ' { '_' } else { c })
            .collect();
        let label = match norm.as_str() {
            "0" | "urtica" => ClassLabel::Urtica,
            "1" | "parietaria" => ClassLabel::Parietaria,
            "2" | "membranacea" | "urtica_membranacea" => ClassLabel::UrticaMembranacea,
            _ => return Err(Error::UnknownClass(s.to_string())),
        };
        Ok(label)
    }
}

/// A single 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl Layer {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Self {
        assert!(height > 0 && width > 0, "layer must be nonempty");
        assert_eq!(pixels.len(), height * width, "pixel buffer size mismatch");
        Layer {
            height,
            width,
            pixels,
        }
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// One pollen grain: an ordered list of equally sized layers plus identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ZStack {
    pub id: String,
    pub label: ClassLabel,
    layers: Vec<Layer>,
}

impl ZStack {
    pub fn new(id: impl Into<String>, label: ClassLabel, layers: Vec<Layer>) -> Result<Self> {
        let id = id.into();
        let first = layers.first().ok_or_else(|| Error::Load {
            id: id.clone(),
            reason: "stack has no layers".into(),
        })?;
        let (h, w) = (first.height(), first.width());
        for (z, layer) in layers.iter().enumerate() {
            if layer.height() != h || layer.width() != w {
                return Err(Error::Load {
                    id,
                    reason: format!(
                        "layer {z} is {}x{}, expected {h}x{w}",
                        layer.height(),
                        layer.width()
                    ),
                });
            }
        }
        Ok(ZStack { id, label, layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn height(&self) -> usize {
        self.layers[0].height()
    }

    pub fn width(&self) -> usize {
        self.layers[0].width()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: ClassLabel,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

/// The list of valid stacks found by [`ingest_directory`], sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Builds a manifest, sorting by id and rejecting duplicate ids.
    pub fn new(mut records: Vec<ManifestRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(pair) = records.windows(2).find(|p| p[0].id == p[1].id) {
            return Err(Error::DuplicateId(pair[0].id.clone()));
        }
        Ok(DatasetManifest { records })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> [usize; ClassLabel::COUNT] {
        let mut counts = [0; ClassLabel::COUNT];
        for r in &self.records {
            counts[r.label.id()] += 1;
        }
        counts
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRecord> {
        self.records
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "#{MANIFEST_VERSION}")?;
        writeln!(w, "id\tpath\tlabel\tdepth\theight\twidth")?;
        for r in &self.records {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.id,
                r.path.display(),
                r.label.id(),
                r.depth,
                r.height,
                r.width
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l == format!("#{MANIFEST_VERSION}") => {}
            Some(l) => {
                return Err(Error::VersionMismatch {
                    found: l.trim_start_matches('#').to_string(),
                    expected: MANIFEST_VERSION.into(),
                })
            }
            None => return Err(Error::format(&name, 1, "empty manifest")),
        }
        if lines.next() != Some("id\tpath\tlabel\tdepth\theight\twidth") {
            return Err(Error::format(&name, 2, "bad column header"));
        }
        let mut records = Vec::new();
        for (i, l) in lines.enumerate() {
            let line = i + 3;
            if l.is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 6 {
                return Err(Error::format(&name, line, "expected 6 tab-separated fields"));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::format(&name, line, format!("{s:?}: {e}")))
            };
            records.push(ManifestRecord {
                id: f[0].to_string(),
                path: PathBuf::from(f[1]),
                label: ClassLabel::from_id(num(f[2])?)
                    .ok_or_else(|| Error::format(&name, line, "label id out of range"))?,
                depth: num(f[3])?,
                height: num(f[4])?,
                width: num(f[5])?,
            });
        }
        Self::new(records)
    }
}

/// How sample labels are determined during ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelingRule {
    /// `root/<class>/<sample>`: the class directory name is the label.
    DirectoryPerClass,
    /// `root/<sample>` with labels read from a tab-separated `path<TAB>label`
    /// file; paths are relative to the root.
    Sidecar(PathBuf),
}

/// A candidate sample that could not be ingested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRecord {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub manifest: DatasetManifest,
    pub rejected: Vec<RejectedRecord>,
}

struct Candidate {
    id: String,
    path: PathBuf,
    label: ClassLabel,
}

/// Scans `root` for stacks, validating dimensions from image headers only.
///
/// Per-record problems (unreadable images, mismatched layer sizes,
/// oversized layers) are collected in [`Ingested::rejected`]; the call fails
/// only if nothing valid remains.
pub fn ingest_directory(root: &Path, layout: &LabelingRule) -> Result<Ingested> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let candidates = match layout {
        LabelingRule::DirectoryPerClass => class_dir_candidates(root)?,
        LabelingRule::Sidecar(file) => sidecar_candidates(root, file)?,
    };

    let probed: Vec<std::result::Result<ManifestRecord, RejectedRecord>> = candidates
        .into_par_iter()
        .map(|c| match probe_dimensions(&c.path) {
            Ok((depth, height, width)) => Ok(ManifestRecord {
                id: c.id,
                path: c.path,
                label: c.label,
                depth,
                height,
                width,
            }),
            Err(reason) => Err(RejectedRecord {
                path: c.path,
                reason,
            }),
        })
        .collect();

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for p in probed {
        match p {
            Ok(r) => records.push(r),
            Err(r) => rejected.push(r),
        }
    }
    if records.is_empty() {
        return Err(Error::NoSamples(root.to_path_buf()));
    }
    Ok(Ingested {
        manifest: DatasetManifest::new(records)?,
        rejected,
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn has_extension(path: &Path, allowed: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| allowed.iter().any(|a| a.eq_ignore_ascii_case(e)))
        .unwrap_or(false)
}

fn is_stack_source(path: &Path) -> bool {
    path.is_dir() || (path.is_file() && has_extension(path, STACK_EXTENSIONS))
}

fn sample_name(path: &Path) -> String {
    let name = if path.is_dir() {
        path.file_name()
    } else {
        path.file_stem()
    };
    name.map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn class_dir_candidates(root: &Path) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for class_dir in sorted_entries(root)? {
        if !class_dir.is_dir() {
            continue;
        }
        let class_name = class_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let Ok(label) = class_name.parse::<ClassLabel>() else {
            log::warn!("skipping directory {class_name:?}: not a known class");
            continue;
        };
        for sample in sorted_entries(&class_dir)? {
            if !is_stack_source(&sample) {
                continue;
            }
            out.push(Candidate {
                id: format!("{class_name}/{}", sample_name(&sample)),
                path: sample,
                label,
            });
        }
    }
    Ok(out)
}

fn sidecar_candidates(root: &Path, sidecar: &Path) -> Result<Vec<Candidate>> {
    let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let name = sidecar.display().to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (rel, label) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(&name, i + 1, "expected path<TAB>label"))?;
        let label: ClassLabel = label
            .parse()
            .map_err(|e: Error| Error::format(&name, i + 1, e))?;
        let path = root.join(rel);
        let id = Path::new(rel)
            .with_extension("")
            .to_string_lossy()
            .into_owned();
        out.push(Candidate { id, path, label });
    }
    Ok(out)
}

fn layer_files(dir: &Path) -> std::result::Result<Vec<PathBuf>, String> {
    let files: Vec<PathBuf> = sorted_entries(dir)
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|p| p.is_file() && has_extension(p, LAYER_EXTENSIONS))
        .collect();
    if files.is_empty() {
        return Err("no layer images".into());
    }
    Ok(files)
}

fn check_size(z: usize, dims: (usize, usize), first: (usize, usize)) -> std::result::Result<(), String> {
    if dims != first {
        return Err(format!(
            "layer {z} is {}x{}, expected {}x{}",
            dims.0, dims.1, first.0, first.1
        ));
    }
    Ok(())
}

/// Returns (depth, height, width) without decoding pixel data.
fn probe_dimensions(path: &Path) -> std::result::Result<(usize, usize, usize), String> {
    let sizes: Vec<(usize, usize)> = if path.is_dir() {
        layer_files(path)?
            .iter()
            .map(|f| {
                image::image_dimensions(f)
                    .map(|(w, h)| (h as usize, w as usize))
                    .map_err(|e| format!("{}: {e}", f.display()))
            })
            .collect::<std::result::Result<_, _>>()?
    } else {
        tiff_page_dimensions(path)?
    };
    let first = sizes[0];
    for (z, &dims) in sizes.iter().enumerate() {
        check_size(z, dims, first)?;
    }
    let (h, w) = first;
    if h == 0 || w == 0 {
        return Err("empty layer".into());
    }
    if h > CANONICAL_SIZE || w > CANONICAL_SIZE {
        return Err(format!(
            "layer {h}x{w} exceeds {CANONICAL_SIZE}x{CANONICAL_SIZE}"
        ));
    }
    Ok((sizes.len(), h, w))
}

fn open_tiff(path: &Path) -> std::result::Result<tiff::decoder::Decoder<BufReader<File>>, String> {
    let file = File::open(path).map_err(|e| e.to_string())?;
    tiff::decoder::Decoder::new(BufReader::new(file)).map_err(|e| e.to_string())
}

fn tiff_page_dimensions(path: &Path) -> std::result::Result<Vec<(usize, usize)>, String> {
    let mut dec = open_tiff(path)?;
    let mut sizes = Vec::new();
    loop {
        let (w, h) = dec.dimensions().map_err(|e| e.to_string())?;
        sizes.push((h as usize, w as usize));
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| e.to_string())?;
    }
    Ok(sizes)
}

/// Decodes the stack described by a manifest record.
pub fn load_stack(record: &ManifestRecord) -> Result<ZStack> {
    let fail = |reason: String| Error::Load {
        id: record.id.clone(),
        reason,
    };
    let layers = if record.path.is_dir() {
        layer_files(&record.path)
            .map_err(fail)?
            .iter()
            .map(|f| {
                image::open(f)
                    .map(to_gray_layer)
                    .map_err(|e| fail(format!("{}: {e}", f.display())))
            })
            .collect::<Result<Vec<_>>>()?
    } else if record.path.is_file() {
        decode_tiff_pages(&record.path).map_err(fail)?
    } else {
        return Err(fail(format!("{} vanished", record.path.display())));
    };
    let stack = ZStack::new(record.id.clone(), record.label, layers)?;
    if (stack.depth(), stack.height(), stack.width()) != (record.depth, record.height, record.width)
    {
        return Err(fail(format!(
            "decoded {}x{}x{}, manifest says {}x{}x{}",
            stack.depth(),
            stack.height(),
            stack.width(),
            record.depth,
            record.height,
            record.width
        )));
    }
    Ok(stack)
}

/// Rounded mean of the colour channels.
fn luminance_average(channels: &[u8]) -> u8 {
    let sum: u32 = channels.iter().map(|&c| c as u32).sum();
    let n = channels.len() as u32;
    ((2 * sum + n) / (2 * n)) as u8
}

fn to_gray_layer(img: DynamicImage) -> Layer {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageLumaA8(_) => {
            img.to_luma8().into_raw()
        }
        other => other
            .to_rgb8()
            .into_raw()
            .chunks_exact(3)
            .map(luminance_average)
            .collect(),
    };
    Layer::new(h, w, pixels)
}

fn decode_tiff_pages(path: &Path) -> std::result::Result<Vec<Layer>, String> {
    use tiff::decoder::DecodingResult;
    use tiff::ColorType;

    let mut dec = open_tiff(path)?;
    let mut layers = Vec::new();
    loop {
        let (w, h) = dec.dimensions().map_err(|e| e.to_string())?;
        let (w, h) = (w as usize, h as usize);
        let color = dec.colortype().map_err(|e| e.to_string())?;
        let data = dec.read_image().map_err(|e| e.to_string())?;
        let pixels: Vec<u8> = match (color, data) {
            (ColorType::Gray(8), DecodingResult::U8(v)) => v,
            (ColorType::Gray(16), DecodingResult::U16(v)) => {
                v.into_iter().map(|p| (p >> 8) as u8).collect()
            }
            (ColorType::RGB(8), DecodingResult::U8(v)) => {
                v.chunks_exact(3).map(luminance_average).collect()
            }
            (ColorType::RGBA(8), DecodingResult::U8(v)) => {
                v.chunks_exact(4).map(|p| luminance_average(&p[..3])).collect()
            }
            (c, _) => return Err(format!("unsupported TIFF colour type {c:?}")),
        };
        if pixels.len() != w * h {
            return Err(format!("page {} has wrong pixel count", layers.len()));
        }
        layers.push(Layer::new(h, w, pixels));
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| e.to_string())?;
    }
    Ok(layers)
}

/// Writes layers as a multi-page 8-bit grayscale TIFF.
pub fn write_multipage_tiff(path: &Path, layers: &[Layer]) -> Result<()> {
    use tiff::encoder::{colortype::Gray8, TiffEncoder};

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::decode(path, e))?;
    for layer in layers {
        enc.write_image::<Gray8>(layer.width() as u32, layer.height() as u32, layer.pixels())
            .map_err(|e| Error::decode(path, e))?;
    }
    Ok(())
}

/// Writes one layer as an 8-bit grayscale PNG.
pub fn write_png(path: &Path, layer: &Layer) -> Result<()> {
    image::GrayImage::from_raw(layer.width() as u32, layer.height() as u32, layer.pixels().to_vec())
        .expect("buffer size matches dimensions")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::decode(path, e))
}

/// Ids appearing in a manifest, for quick membership tests.
pub fn id_set(manifest: &DatasetManifest) -> BTreeSet<&str> {
    manifest.records().iter().map(|r| r.id.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_dir_stack(dir: &Path, sizes: &[(usize, usize)], seed: u8) {
        fs::create_dir_all(dir).unwrap();
        for (z, &(h, w)) in sizes.iter().enumerate() {
            let layer = Layer::from_fn(h, w, |r, c| (r * 7 + c * 3 + z) as u8 ^ seed);
            write_png(&dir.join(format!("{z:02}.png")), &layer).unwrap();
        }
    }

    #[test]
    fn label_bijection() {
        for label in ClassLabel::ALL {
            assert_eq!(ClassLabel::from_id(label.id()), Some(label));
            assert_eq!(label.name().parse::<ClassLabel>().unwrap(), label);
            assert_eq!(label.id().to_string().parse::<ClassLabel>().unwrap(), label);
        }
        assert!(ClassLabel::from_id(3).is_none());
        assert!("urticaceae".parse::<ClassLabel>().is_err());
    }

    #[test]
    fn counts_per_class() {
        let root = tempdir().unwrap();
        write_dir_stack(&root.path().join("urtica/a"), &[(12, 10); 3], 1);
        write_dir_stack(&root.path().join("urtica/b"), &[(12, 10); 3], 2);
        write_dir_stack(&root.path().join("parietaria/c"), &[(8, 8); 2], 3);
        write_dir_stack(&root.path().join("membranacea/d"), &[(8, 9); 1], 4);
        let got = ingest_directory(root.path(), &LabelingRule::DirectoryPerClass).unwrap();
        assert_eq!(got.manifest.len(), 4);
        assert_eq!(got.manifest.class_counts(), [2, 1, 1]);
        assert!(got.rejected.is_empty());
        let ids: Vec<_> = got.manifest.records().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["membranacea/d", "parietaria/c", "urtica/a", "urtica/b"]);
    }

    #[test]
    fn empty_root_is_fatal() {
        let root = tempdir().unwrap();
        let err = ingest_directory(root.path(), &LabelingRule::DirectoryPerClass).unwrap_err();
        assert!(matches!(err, Error::NoSamples(_)));
        assert!(err.to_string().contains("no samples found"));
    }

    #[test]
    fn mismatched_layer_rejects_only_that_record() {
        let root = tempdir().unwrap();
        let mut sizes = vec![(120, 120); 10];
        sizes[7] = (100, 100);
        write_dir_stack(&root.path().join("urtica/bad"), &sizes, 0);
        write_dir_stack(&root.path().join("urtica/good"), &[(120, 120); 10], 0);
        let got = ingest_directory(root.path(), &LabelingRule::DirectoryPerClass).unwrap();
        assert_eq!(got.manifest.len(), 1);
        assert_eq!(got.manifest.records()[0].id, "urtica/good");
        assert_eq!(got.rejected.len(), 1);
        assert!(got.rejected[0].reason.contains("layer 7"));
    }

    #[test]
    fn oversized_and_unreadable_are_rejected() {
        let root = tempdir().unwrap();
        write_dir_stack(&root.path().join("urtica/big"), &[(225, 10); 2], 0);
        let junk = root.path().join("urtica/junk");
        fs::create_dir_all(&junk).unwrap();
        fs::write(junk.join("00.png"), b"not a png").unwrap();
        write_dir_stack(&root.path().join("parietaria/ok"), &[(224, 224); 2], 0);
        let got = ingest_directory(root.path(), &LabelingRule::DirectoryPerClass).unwrap();
        assert_eq!(got.manifest.len(), 1);
        assert_eq!(got.rejected.len(), 2);
    }

    #[test]
    fn multipage_tiff_roundtrip() {
        let root = tempdir().unwrap();
        let class = root.path().join("parietaria");
        fs::create_dir_all(&class).unwrap();
        let layers: Vec<Layer> = (0..REFERENCE_DEPTH)
            .map(|z| Layer::from_fn(30, 40, |r, c| ((r * 40 + c) * 3 + z * 11) as u8))
            .collect();
        write_multipage_tiff(&class.join("g1.tif"), &layers).unwrap();
        write_multipage_tiff(&class.join("single.tiff"), &layers[..1]).unwrap();
        let got = ingest_directory(root.path(), &LabelingRule::DirectoryPerClass).unwrap();
        let rec = got.manifest.get("parietaria/g1").unwrap();
        assert_eq!((rec.depth, rec.height, rec.width), (20, 30, 40));
        let stack = load_stack(rec).unwrap();
        assert_eq!(stack.depth(), 20);
        assert_eq!(stack.layers(), &layers[..]);
        let single = load_stack(got.manifest.get("parietaria/single").unwrap()).unwrap();
        assert_eq!(single.depth(), 1);
    }

    #[test]
    fn gray_rgb_matches_gray() {
        let root = tempdir().unwrap();
        let dir = root.path().join("urtica/rgb");
        fs::create_dir_all(&dir).unwrap();
        let gray = Layer::from_fn(5, 6, |r, c| (r * 40 + c * 9) as u8);
        let rgb = image::RgbImage::from_fn(6, 5, |x, y| {
            let v = gray.get(y as usize, x as usize);
            image::Rgb([v, v, v])
        });
        rgb.save(dir.join("0.png")).unwrap();
        let got = ingest_directory(root.path(), &LabelingRule::DirectoryPerClass).unwrap();
        let stack = load_stack(&got.manifest.records()[0]).unwrap();
        assert_eq!(stack.layers()[0], gray);
    }

    #[test]
    fn vanished_file_names_record() {
        let root = tempdir().unwrap();
        write_dir_stack(&root.path().join("urtica/x"), &[(4, 4); 2], 0);
        let got = ingest_directory(root.path(), &LabelingRule::DirectoryPerClass).unwrap();
        fs::remove_dir_all(root.path().join("urtica/x")).unwrap();
        let err = load_stack(&got.manifest.records()[0]).unwrap_err();
        assert!(err.to_string().contains("urtica/x"));
    }

    #[test]
    fn sidecar_labels() {
        let root = tempdir().unwrap();
        write_dir_stack(&root.path().join("s1"), &[(6, 6); 2], 0);
        write_dir_stack(&root.path().join("s2"), &[(6, 6); 2], 0);
        let side = root.path().join("labels.tsv");
        fs::write(&side, "s1\tparietaria\ns2\t2\n").unwrap();
        let got = ingest_directory(root.path(), &LabelingRule::Sidecar(side)).unwrap();
        assert_eq!(got.manifest.class_counts(), [0, 1, 1]);
    }

    #[test]
    fn manifest_file_roundtrip() {
        let root = tempdir().unwrap();
        write_dir_stack(&root.path().join("urtica/a"), &[(5, 7); 3], 0);
        write_dir_stack(&root.path().join("membranacea/b"), &[(5, 7); 3], 0);
        let m = ingest_directory(root.path(), &LabelingRule::DirectoryPerClass)
            .unwrap()
            .manifest;
        let file = root.path().join("manifest.tsv");
        m.save(&file).unwrap();
        let text = fs::read_to_string(&file).unwrap();
        assert!(text.starts_with("#manifest-v1\nid\tpath\tlabel\tdepth\theight\twidth\n"));
        assert_eq!(DatasetManifest::load(&file).unwrap(), m);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rec = ManifestRecord {
            id: "a".into(),
            path: "x".into(),
            label: ClassLabel::Urtica,
            depth: 1,
            height: 1,
            width: 1,
        };
        let err = DatasetManifest::new(vec![rec.clone(), rec]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(_)));
    }
}
