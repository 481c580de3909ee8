//! JSON manifests and lazy, seeded batch iteration.
//!
//! Record paths are stored relative to the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::train::Dataset;
use crate::packing::{pack_clip, pad_clip, MeasurementTensor, VideoClip};
use crate::rng::Rng;
use crate::sensing::{SensingConfig, SensingMatrix};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

/// Present on manifests whose records are MST1 measurement tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingInfo {
    pub sensing: SensingConfig,
    pub ratio: f64,
    /// `[T, Hb, Wb, 3M]` of every tensor.
    pub dims: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub geometry: Geometry,
    pub seed: u64,
    pub records: Vec<ClipRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<EncodingInfo>,
    #[serde(skip)]
    base: PathBuf,
}

impl DatasetManifest {
    pub fn new(classes: Vec<String>, geometry: Geometry, seed: u64, records: Vec<ClipRecord>) -> Self {
        DatasetManifest {
            classes,
            geometry,
            seed,
            records,
            encoding: None,
            base: PathBuf::new(),
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base
    }

    pub fn with_base(mut self, base: impl Into<PathBuf>) -> Self {
        self.base = base.into();
        self
    }

    pub fn resolve(&self, record: &ClipRecord) -> PathBuf {
        self.base.join(&record.path)
    }

    /// Record indices in `split`, in manifest order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Format("manifest lists no classes".into()));
        }
        let g = self.geometry;
        if g.t == 0 || g.h == 0 || g.w == 0 {
            return Err(Error::Format(format!("degenerate geometry {g:?}")));
        }
        if let Some(r) = self.records.iter().find(|r| r.label >= self.classes.len()) {
            return Err(Error::Format(format!(
                "record {} has label {} but only {} classes exist",
                r.path.display(),
                r.label,
                self.classes.len()
            )));
        }
        if let Some(e) = &self.encoding {
            if e.dims[0] != g.t || e.dims[3] != 3 * e.sensing.measurements {
                return Err(Error::Format(format!("encoding dims {:?} disagree with geometry", e.dims)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        crate::bytes::write_file(path, text.as_bytes())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    let m: DatasetManifest = serde_json::from_slice(&text).map_err(|e| Error::from(e).in_file(path))?;
    m.validate().map_err(|e| e.in_file(path))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(m.with_base(base))
}

/// One batch: decoded items, their labels and manifest record indices.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub items: Vec<T>,
    pub labels: Vec<usize>,
    pub records: Vec<usize>,
}

type Loader<T> = fn(&DatasetManifest, &ClipRecord) -> Result<T>;

/// Lazily decodes one batch at a time in a seeded order; the last batch may be short.
pub struct BatchIter<'a, T> {
    manifest: &'a DatasetManifest,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    load: Loader<T>,
}

impl<T> BatchIter<'_, T> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl<T> Iterator for BatchIter<'_, T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        let mut items = Vec::with_capacity(idx.len());
        for &i in &idx {
            match (self.load)(self.manifest, &self.manifest.records[i]) {
                Ok(x) => items.push(x),
                Err(e) => return Some(Err(e)),
            }
        }
        let labels = idx.iter().map(|&i| self.manifest.records[i].label).collect();
        Some(Ok(Batch {
            items,
            labels,
            records: idx,
        }))
    }
}

fn batch_iter<T>(
    manifest: &DatasetManifest,
    split: Split,
    batch: usize,
    seed: u64,
    epoch: u64,
    load: Loader<T>,
) -> Result<BatchIter<'_, T>> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut order = manifest.split_indices(split);
    Rng::derive(seed, epoch).shuffle(&mut order);
    Ok(BatchIter {
        manifest,
        order,
        pos: 0,
        batch,
        load,
    })
}

fn load_clip(m: &DatasetManifest, r: &ClipRecord) -> Result<VideoClip> {
    let path = m.resolve(r);
    let clip = VideoClip::load(&path)?;
    let g = m.geometry;
    if (clip.frames(), clip.height(), clip.width()) != (g.t, g.h, g.w) {
        return Err(Error::Geometry(format!(
            "clip is {}×{}×{}, manifest says {}×{}×{}",
            clip.frames(),
            clip.height(),
            clip.width(),
            g.t,
            g.h,
            g.w
        ))
        .in_file(path));
    }
    Ok(clip)
}

fn load_tensor(m: &DatasetManifest, r: &ClipRecord) -> Result<Tensor> {
    let path = m.resolve(r);
    let enc = m
        .encoding
        .ok_or_else(|| Error::Format("manifest has no encoding section; encode it first".into()))?;
    let mt = MeasurementTensor::load(&path)?;
    if mt.dims() != enc.dims {
        return Err(Error::Geometry(format!("tensor is {:?}, manifest says {:?}", mt.dims(), enc.dims)).in_file(path));
    }
    Ok(mt.into_tensor())
}

/// Raw VID1 clips of `split`, shuffled by `(seed, epoch)`.
pub fn iterate_batches(
    manifest: &DatasetManifest,
    split: Split,
    batch: usize,
    seed: u64,
    epoch: u64,
) -> Result<BatchIter<'_, VideoClip>> {
    batch_iter(manifest, split, batch, seed, epoch, load_clip)
}

/// Measurement tensors of an encoded manifest.
pub fn iterate_tensor_batches(
    manifest: &DatasetManifest,
    split: Split,
    batch: usize,
    seed: u64,
    epoch: u64,
) -> Result<BatchIter<'_, Tensor>> {
    batch_iter(manifest, split, batch, seed, epoch, load_tensor)
}

/// Every tensor of `split` in manifest order, ready for training.
pub fn load_tensor_split(manifest: &DatasetManifest, split: Split) -> Result<Dataset> {
    let idx = manifest.split_indices(split);
    let mut inputs = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for i in idx {
        let r = &manifest.records[i];
        inputs.push(load_tensor(manifest, r)?);
        labels.push(r.label);
    }
    Dataset::new(inputs, labels)
}

/// Pack every clip with `phi` into `out_dir/tensors/` and write `out_dir/manifest.json`.
///
/// Clips whose sides are not multiples of `B` are edge-padded first.
pub fn encode_manifest(manifest: &DatasetManifest, phi: &SensingMatrix, out_dir: &Path) -> Result<DatasetManifest> {
    if manifest.encoding.is_some() {
        return Err(Error::InvalidArgument("manifest is already encoded".into()));
    }
    let b = phi.block();
    let g = manifest.geometry;
    let dims = [g.t, g.h.div_ceil(b), g.w.div_ceil(b), 3 * phi.rows()];
    let mut records = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let clip = load_clip(manifest, r)?;
        let mt = pack_clip(&pad_clip(&clip, b), phi)?;
        let stem = r.path.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
        let rel = PathBuf::from(format!("tensors/{stem}.mst"));
        mt.save(&out_dir.join(&rel))?;
        records.push(ClipRecord {
            path: rel,
            label: r.label,
            split: r.split,
        });
    }
    let mut out = DatasetManifest::new(manifest.classes.clone(), g, manifest.seed, records);
    out.encoding = Some(EncodingInfo {
        sensing: *phi.config(),
        ratio: phi.config().ratio(),
        dims,
    });
    out.save(&out_dir.join("manifest.json"))?;
    Ok(out.with_base(out_dir))
}
