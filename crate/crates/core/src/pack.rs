//! The PSTK tensor container plus its index and split sidecars.
//!
//! ```text
//! offset size field
//!      0    4 magic "PSTK"
//!      4    2 format version (u16, currently 1)
//!      6    1 dtype code (0 = u8)
//!      7    1 reserved (0)
//!      8    4 sample count (u32)
//!     12    2 layers per sample (u16)
//!     14    2 height (u16)
//!     16    2 width (u16)
//!     18   14 reserved (0)
//! ```
//!
//! All integers little-endian. Samples follow the header back to back in
//! index order (ascending id), each layer row-major.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::canonical::CanonicalSample;
use crate::error::{Error, Result};
use crate::focus::LayerWindow;
use crate::split::SplitPlan;
use crate::stack::ClassLabel;
use crate::CANONICAL_SIZE;

pub const MAGIC: [u8; 4] = *b"PSTK";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_U8: u8 = 0;
pub const HEADER_LEN: u64 = 32;
pub const INDEX_VERSION: &str = "index-v1";
const INDEX_COLUMNS: &str = "id\tlabel\toffset\tn_layers\theight\twidth";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PstkHeader {
    pub version: u16,
    pub dtype: u8,
    pub count: u32,
    pub n_layers: u16,
    pub height: u16,
    pub width: u16,
}

impl PstkHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6] = self.dtype;
        b[8..12].copy_from_slice(&self.count.to_le_bytes());
        b[12..14].copy_from_slice(&self.n_layers.to_le_bytes());
        b[14..16].copy_from_slice(&self.height.to_le_bytes());
        b[16..18].copy_from_slice(&self.width.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        let magic = [b[0], b[1], b[2], b[3]];
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        if b[6] != DTYPE_U8 {
            return Err(Error::UnsupportedDtype(b[6]));
        }
        Ok(PstkHeader {
            version,
            dtype: b[6],
            count: u32::from_le_bytes([b[8], b[9], b[10], b[11]]),
            n_layers: u16::from_le_bytes([b[12], b[13]]),
            height: u16::from_le_bytes([b[14], b[15]]),
            width: u16::from_le_bytes([b[16], b[17]]),
        })
    }

    pub fn sample_bytes(&self) -> u64 {
        self.n_layers as u64 * self.height as u64 * self.width as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub id: String,
    pub label: ClassLabel,
    /// Absolute byte offset into the blob.
    pub offset: u64,
    pub n_layers: usize,
    pub height: usize,
    pub width: usize,
}

/// Paths of the three files making up a packed dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackPaths {
    pub blob: PathBuf,
    pub index: PathBuf,
    pub split: PathBuf,
}

impl PackPaths {
    /// `<prefix>.pstk`, `<prefix>.index.tsv`, `<prefix>.split.tsv`.
    pub fn from_prefix(prefix: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        PackPaths {
            blob: with(".pstk"),
            index: with(".index.tsv"),
            split: with(".split.tsv"),
        }
    }
}

/// Streaming writer. Samples must arrive in strictly ascending id order.
pub struct PackWriter {
    paths: PackPaths,
    blob: BufWriter<File>,
    plan: SplitPlan,
    n_layers: Option<usize>,
    entries: Vec<IndexEntry>,
    offset: u64,
}

impl PackWriter {
    pub fn create(prefix: &Path, plan: &SplitPlan) -> Result<Self> {
        let paths = PackPaths::from_prefix(prefix);
        if let Some(parent) = paths.blob.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(&paths.blob).map_err(|e| Error::io(&paths.blob, e))?;
        let mut blob = BufWriter::new(file);
        blob.write_all(&[0u8; HEADER_LEN as usize])
            .map_err(|e| Error::io(&paths.blob, e))?;
        Ok(PackWriter {
            paths,
            blob,
            plan: plan.clone(),
            n_layers: None,
            entries: Vec::new(),
            offset: HEADER_LEN,
        })
    }

    pub fn push(&mut self, sample: &CanonicalSample) -> Result<()> {
        if !self.plan.contains(&sample.id) {
            return Err(Error::UnknownId(sample.id.clone()));
        }
        if let Some(last) = self.entries.last() {
            if last.id == sample.id {
                return Err(Error::DuplicateId(sample.id.clone()));
            }
            if last.id > sample.id {
                return Err(Error::OutOfOrder {
                    id: sample.id.clone(),
                });
            }
        }
        let expected = *self.n_layers.get_or_insert(sample.n_layers);
        if sample.n_layers != expected {
            return Err(Error::LayerCountMismatch {
                id: sample.id.clone(),
                found: sample.n_layers,
                expected,
            });
        }
        assert_eq!(sample.data.len(), sample.n_layers * CanonicalSample::LAYER_LEN);
        self.blob
            .write_all(&sample.data)
            .map_err(|e| Error::io(&self.paths.blob, e))?;
        self.entries.push(IndexEntry {
            id: sample.id.clone(),
            label: sample.label,
            offset: self.offset,
            n_layers: sample.n_layers,
            height: CANONICAL_SIZE,
            width: CANONICAL_SIZE,
        });
        self.offset += sample.data.len() as u64;
        Ok(())
    }

    /// Writes the header, index and split files. Every id in the plan must
    /// have been pushed.
    pub fn finish(mut self) -> Result<PackedDataset> {
        let missing = self.plan.len() - self.entries.len();
        if missing > 0 {
            return Err(Error::MissingSamples(missing));
        }
        let header = PstkHeader {
            version: FORMAT_VERSION,
            dtype: DTYPE_U8,
            count: self.entries.len() as u32,
            n_layers: self.n_layers.unwrap_or(0) as u16,
            height: CANONICAL_SIZE as u16,
            width: CANONICAL_SIZE as u16,
        };
        let blob_err = |e| Error::io(&self.paths.blob, e);
        self.blob.flush().map_err(blob_err)?;
        let mut file = self.blob.into_inner().map_err(|e| blob_err(e.into_error()))?;
        file.seek(SeekFrom::Start(0)).map_err(blob_err)?;
        file.write_all(&header.to_bytes()).map_err(blob_err)?;
        file.sync_all().map_err(blob_err)?;

        fs::write(&self.paths.index, index_text(&self.entries))
            .map_err(|e| Error::io(&self.paths.index, e))?;
        self.plan.save(&self.paths.split)?;
        Ok(PackedDataset {
            paths: self.paths,
            header,
            entries: self.entries,
            plan: self.plan,
        })
    }
}

fn index_text(entries: &[IndexEntry]) -> String {
    let mut s = format!("#{INDEX_VERSION}\n{INDEX_COLUMNS}\n");
    for e in entries {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.id,
            e.label.id(),
            e.offset,
            e.n_layers,
            e.height,
            e.width
        ));
    }
    s
}

/// Packs samples in any order; they are sorted by id first.
pub fn pack(
    samples: impl IntoIterator<Item = CanonicalSample>,
    plan: &SplitPlan,
    out: &Path,
) -> Result<PackedDataset> {
    let mut samples: Vec<CanonicalSample> = samples.into_iter().collect();
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let mut w = PackWriter::create(out, plan)?;
    for s in &samples {
        w.push(s)?;
    }
    w.finish()
}

/// A packed dataset opened for random access.
#[derive(Debug, Clone)]
pub struct PackedDataset {
    pub paths: PackPaths,
    pub header: PstkHeader,
    entries: Vec<IndexEntry>,
    plan: SplitPlan,
}

pub fn parse_index(text: &str, name: &str) -> Result<Vec<IndexEntry>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l == format!("#{INDEX_VERSION}") => {}
        Some(l) => {
            return Err(Error::VersionMismatch {
                found: l.trim_start_matches('#').to_string(),
                expected: INDEX_VERSION.into(),
            })
        }
        None => return Err(Error::format(name, 1, "empty index")),
    }
    if lines.next() != Some(INDEX_COLUMNS) {
        return Err(Error::format(name, 2, "bad column header"));
    }
    let mut entries = Vec::new();
    for (i, l) in lines.enumerate() {
        let line = i + 3;
        if l.is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::format(name, line, "expected 6 tab-separated fields"));
        }
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| Error::format(name, line, format!("{s:?}: {e}")))
        };
        entries.push(IndexEntry {
            id: f[0].to_string(),
            label: ClassLabel::from_id(num(f[1])? as usize)
                .ok_or_else(|| Error::format(name, line, "label out of range"))?,
            offset: num(f[2])?,
            n_layers: num(f[3])? as usize,
            height: num(f[4])? as usize,
            width: num(f[5])? as usize,
        });
    }
    Ok(entries)
}

pub fn read_packed(prefix: &Path) -> Result<PackedDataset> {
    let paths = PackPaths::from_prefix(prefix);
    let mut file = File::open(&paths.blob).map_err(|e| Error::io(&paths.blob, e))?;
    let blob_len = file
        .metadata()
        .map_err(|e| Error::io(&paths.blob, e))?
        .len();
    if blob_len < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: blob_len,
        });
    }
    let mut raw = [0u8; HEADER_LEN as usize];
    file.read_exact(&mut raw)
        .map_err(|e| Error::io(&paths.blob, e))?;
    let header = PstkHeader::parse(&raw)?;
    let expected = HEADER_LEN + header.count as u64 * header.sample_bytes();
    if blob_len < expected {
        return Err(Error::Truncated {
            expected,
            found: blob_len,
        });
    }
    if blob_len > expected {
        return Err(Error::IndexMismatch(format!(
            "blob has {} trailing bytes",
            blob_len - expected
        )));
    }

    let index_text =
        fs::read_to_string(&paths.index).map_err(|e| Error::io(&paths.index, e))?;
    let entries = parse_index(&index_text, &paths.index.display().to_string())?;
    let plan = SplitPlan::load(&paths.split)?;

    if entries.len() != header.count as usize {
        return Err(Error::IndexMismatch(format!(
            "index lists {} samples, header says {}",
            entries.len(),
            header.count
        )));
    }
    let mut offset = HEADER_LEN;
    for (i, e) in entries.iter().enumerate() {
        if i > 0 && entries[i - 1].id >= e.id {
            return Err(Error::IndexMismatch(format!("index not sorted at {:?}", e.id)));
        }
        if e.offset != offset
            || e.n_layers != header.n_layers as usize
            || e.height != header.height as usize
            || e.width != header.width as usize
        {
            return Err(Error::IndexMismatch(format!(
                "entry {:?} disagrees with header layout",
                e.id
            )));
        }
        match plan.label(&e.id) {
            None => return Err(Error::IndexMismatch(format!("{:?} not in split", e.id))),
            Some(l) if l != e.label => {
                return Err(Error::IndexMismatch(format!("{:?} label differs from split", e.id)))
            }
            _ => {}
        }
        offset += header.sample_bytes();
    }
    if plan.len() != entries.len() {
        return Err(Error::IndexMismatch(format!(
            "split lists {} ids, index {}",
            plan.len(),
            entries.len()
        )));
    }
    Ok(PackedDataset {
        paths,
        header,
        entries,
        plan,
    })
}

impl PackedDataset {
    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn plan(&self) -> &SplitPlan {
        &self.plan
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_layers(&self) -> usize {
        self.header.n_layers as usize
    }

    pub fn entry(&self, id: &str) -> Option<&IndexEntry> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn labels(&self) -> BTreeMap<String, ClassLabel> {
        self.entries
            .iter()
            .map(|e| (e.id.clone(), e.label))
            .collect()
    }

    /// Reads one sample's tensor by seeking to its offset. Each call opens
    /// its own handle, so concurrent reads are independent.
    pub fn read_tensor(&self, id: &str) -> Result<Vec<u8>> {
        let entry = self
            .entry(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let mut file = File::open(&self.paths.blob).map_err(|e| Error::io(&self.paths.blob, e))?;
        file.seek(SeekFrom::Start(entry.offset))
            .map_err(|e| Error::io(&self.paths.blob, e))?;
        let mut buf = vec![0u8; self.header.sample_bytes() as usize];
        file.read_exact(&mut buf)
            .map_err(|e| Error::io(&self.paths.blob, e))?;
        Ok(buf)
    }

    /// Reads a sample back as a [`CanonicalSample`]. The focal provenance is
    /// not stored in the container, so it is reported as unknown (a window
    /// starting at 0).
    pub fn read_sample(&self, id: &str) -> Result<CanonicalSample> {
        let data = self.read_tensor(id)?;
        let entry = self.entry(id).expect("checked by read_tensor");
        Ok(CanonicalSample {
            id: entry.id.clone(),
            label: entry.label,
            n_layers: entry.n_layers,
            data,
            focal_index: 0,
            window: LayerWindow {
                start: 0,
                len: entry.n_layers,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::make_split;
    use crate::stack::{DatasetManifest, ManifestRecord};
    use tempfile::tempdir;

    fn fixture(n_per_class: usize, layers: usize) -> (Vec<CanonicalSample>, SplitPlan) {
        let mut records = Vec::new();
        let mut samples = Vec::new();
        for label in ClassLabel::ALL {
            for i in 0..n_per_class {
                let id = format!("{}-{i:03}", label.id());
                records.push(ManifestRecord {
                    id: id.clone(),
                    path: "x".into(),
                    label,
                    depth: layers,
                    height: 224,
                    width: 224,
                });
                let len = layers * CanonicalSample::LAYER_LEN;
                samples.push(CanonicalSample {
                    id,
                    label,
                    n_layers: layers,
                    data: (0..len).map(|j| ((j * 7 + i * 13 + label.id()) % 256) as u8).collect(),
                    focal_index: 0,
                    window: LayerWindow { start: 0, len: layers },
                });
            }
        }
        let plan = make_split(&DatasetManifest::new(records).unwrap(), 3, 0.1, 2).unwrap();
        (samples, plan)
    }

    #[test]
    fn header_layout() {
        let h = PstkHeader {
            version: 1,
            dtype: 0,
            count: 4,
            n_layers: 6,
            height: 224,
            width: 224,
        };
        let b = h.to_bytes();
        assert_eq!(&b[..4], b"PSTK");
        assert_eq!(b[4..6], [1, 0]);
        assert_eq!(b[8..12], [4, 0, 0, 0]);
        assert_eq!(b[12..14], [6, 0]);
        assert_eq!(b[14..16], [224, 0]);
        assert!(b[18..].iter().all(|&x| x == 0));
        assert_eq!(PstkHeader::parse(&b).unwrap(), h);
    }

    #[test]
    fn roundtrip_and_sizes() {
        let dir = tempdir().unwrap();
        let (samples, plan) = fixture(3, 2);
        let prefix = dir.path().join("ds");
        let packed = pack(samples.clone().into_iter().rev(), &plan, &prefix).unwrap();
        let len = fs::metadata(&packed.paths.blob).unwrap().len();
        assert_eq!(len, 32 + 9 * 2 * 224 * 224);
        let back = read_packed(&prefix).unwrap();
        assert_eq!(back.len(), 9);
        for s in &samples {
            assert_eq!(back.read_tensor(&s.id).unwrap(), s.data);
            assert_eq!(back.entry(&s.id).unwrap().label, s.label);
        }
        assert_eq!(back.plan(), &plan);
    }

    #[test]
    fn writer_guards() {
        let dir = tempdir().unwrap();
        let (samples, plan) = fixture(3, 2);
        let mut w = PackWriter::create(&dir.path().join("a"), &plan).unwrap();
        w.push(&samples[1]).unwrap();
        assert!(matches!(w.push(&samples[1]), Err(Error::DuplicateId(_))));
        assert!(matches!(w.push(&samples[0]), Err(Error::OutOfOrder { .. })));
        let mut odd = samples[2].clone();
        odd.n_layers = 1;
        odd.data.truncate(CanonicalSample::LAYER_LEN);
        assert!(matches!(w.push(&odd), Err(Error::LayerCountMismatch { .. })));
        let mut stranger = samples[2].clone();
        stranger.id = "zzz".into();
        assert!(matches!(w.push(&stranger), Err(Error::UnknownId(_))));
        assert!(matches!(w.finish(), Err(Error::MissingSamples(8))));
    }
}
