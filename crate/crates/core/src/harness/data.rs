use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::Batch;
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Idx,
    CifarBinary,
}

/// Labelled examples stacked along the first axis of `inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, provenance: Provenance) -> Result<Self> {
        if inputs.shape().first() != Some(&labels.len()) {
            return Err(Error::shape("dataset", inputs.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Dataset {
            inputs,
            labels,
            classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one example.
    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    fn row_len(&self) -> usize {
        self.example_shape().iter().product()
    }

    /// Examples at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::EmptyRequest("batch of zero examples"));
        }
        let row = self.row_len();
        let src = self.inputs.data();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("example index {i} out of range")));
            }
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.example_shape());
        Batch::new(
            Tensor::new(shape, data)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let b = self.batch(indices)?;
        Dataset::new(b.inputs, b.labels, self.classes, self.provenance)
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// Disjoint train/test parts; the permutation depends only on `seed`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::invalid(format!("test fraction {test_fraction} outside (0, 1)")));
        }
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        if n_test == 0 || n_test == self.len() {
            return Err(Error::invalid("split leaves one side empty"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        seeded_rng(seed).shuffle(&mut order);
        let (test, train) = order.split_at(n_test);
        Ok((self.subset(train)?, self.subset(test)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Gaussian clusters centred on a circle of radius 2.
    Blobs,
    /// Interleaved arms, each winding through one full turn out to radius 2.
    Spirals,
}

/// Two-feature classification data. Example `i` belongs to class
/// `i mod classes`.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, classes: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::invalid(format!(
            "need n ≥ classes ≥ 1, got n = {n}, classes = {classes}"
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid("noise_std must be finite and non-negative"));
    }
    let mut rng = seeded_rng(seed);
    let mut data = Vec::with_capacity(2 * n);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &c in &labels {
        let phase = 2.0 * PI * c as f64 / classes as f64;
        let (x, y) = match kind {
            SyntheticKind::Blobs => (2.0 * phase.cos(), 2.0 * phase.sin()),
            SyntheticKind::Spirals => {
                let t = rng.uniform();
                let angle = phase + 2.0 * PI * t;
                (2.0 * t * angle.cos(), 2.0 * t * angle.sin())
            }
        };
        data.push(x + noise_std * rng.normal());
        data.push(y + noise_std * rng.normal());
    }
    Dataset::new(Tensor::matrix(n, 2, data)?, labels, classes, Provenance::Synthetic)
}

struct Bytes<'a> {
    name: String,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Bytes<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "{}: wanted {} bytes at offset {}, file has {}",
                    self.name,
                    n,
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn read_idx(path: &Path, magic: u32, rank: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let raw = fs::read(path)?;
    let mut r = Bytes {
        name: path.display().to_string(),
        bytes: &raw,
        pos: 0,
    };
    let observed = r.u32_be()?;
    if observed != magic {
        return Err(Error::BadMagic {
            file: r.name,
            expected: magic,
            observed,
        });
    }
    let dims = (0..rank)
        .map(|_| r.u32_be().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = dims.iter().product();
    let body = r.take(count)?.to_vec();
    if r.pos != raw.len() {
        return Err(Error::Parse(format!(
            "{}: {} bytes past the declared payload",
            r.name,
            raw.len() - r.pos
        )));
    }
    Ok((dims, body))
}

/// IDX image/label pair. Images come out as `N × rows × cols × 1` with bytes
/// scaled to `[0, 1]`; the class count is one past the largest label.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (dims, pixels) = read_idx(images.as_ref(), IDX_IMAGES, 3)?;
    let (ldims, label_bytes) = read_idx(labels.as_ref(), IDX_LABELS, 1)?;
    if dims[0] != ldims[0] {
        return Err(Error::CountMismatch {
            images: dims[0],
            labels: ldims[0],
        });
    }
    if dims[0] == 0 {
        return Err(Error::EmptyRequest("IDX file with zero images"));
    }
    let inputs = Tensor::new(
        vec![dims[0], dims[1], dims[2], 1],
        pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(inputs, labels, classes, Provenance::Idx)
}

/// Writes `data` (images `N × rows × cols × 1`, values multiples of 1/255)
/// as an IDX pair.
pub fn write_idx(data: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let shape = data.inputs.shape();
    if shape.len() != 4 || shape[3] != 1 {
        return Err(Error::shape("write_idx", shape, &[data.len(), 0, 0, 1]));
    }
    let mut img = Vec::with_capacity(16 + data.inputs.len());
    img.extend_from_slice(&IDX_IMAGES.to_be_bytes());
    for &d in &shape[..3] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &x in data.inputs.data() {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::invalid(format!("pixel {x} outside [0, 1]")));
        }
        img.push((x * 255.0).round() as u8);
    }
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&(data.len() as u32).to_be_bytes());
    for &l in &data.labels {
        lab.push(u8::try_from(l).map_err(|_| Error::invalid(format!("label {l} does not fit a byte")))?);
    }
    fs::write(images, img)?;
    fs::write(labels, lab)?;
    Ok(())
}

/// CIFAR-10 binary batches: 3073-byte records of one label byte followed by
/// the red, green, and blue 32×32 planes. Images come out `N × 32 × 32 × 3`.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::EmptyRequest("CIFAR binary file list"));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let raw = fs::read(path)?;
        if raw.is_empty() || raw.len() % CIFAR_RECORD != 0 {
            return Err(Error::Framing {
                len: raw.len(),
                record: CIFAR_RECORD,
            });
        }
        for rec in raw.chunks_exact(CIFAR_RECORD) {
            if rec[0] >= 10 {
                return Err(Error::Parse(format!(
                    "{}: label {} outside [0, 10)",
                    path.as_ref().display(),
                    rec[0]
                )));
            }
            labels.push(rec[0] as usize);
            let px = &rec[1..];
            for p in 0..plane {
                for c in 0..3 {
                    data.push(f64::from(px[c * plane + p]) / 255.0);
                }
            }
        }
    }
    let n = labels.len();
    let inputs = Tensor::new(vec![n, CIFAR_SIDE, CIFAR_SIDE, 3], data)?;
    Dataset::new(inputs, labels, 10, Provenance::CifarBinary)
}
