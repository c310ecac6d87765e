//! Named, kind-tagged parameter groups and their binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian `u64`, floats little-endian
//! `f64`):
//!
//! ```text
//! group_count
//! repeat group_count times:
//!     name_len, name (UTF-8 bytes)
//!     kind (one byte: 0 = dense, 1 = conv, 2 = bias)
//!     rank, extents[rank]
//!     values[product(extents)]
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Dense,
    Conv,
    Bias,
}

impl ParamKind {
    fn to_byte(self) -> u8 {
        match self {
            ParamKind::Dense => 0,
            ParamKind::Conv => 1,
            ParamKind::Bias => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(ParamKind::Dense),
            1 => Ok(ParamKind::Conv),
            2 => Ok(ParamKind::Bias),
            other => Err(Error::Checkpoint(format!("unknown kind byte {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    name: String,
    kind: ParamKind,
    pub values: Tensor,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, kind: ParamKind, values: Tensor) -> Self {
        ParamGroup {
            name: name.into(),
            kind,
            values,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.values.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.values.data_mut()
    }

    pub fn norm(&self) -> f64 {
        self.values.l2_norm()
    }
}

/// Ordered parameter groups of a model. Gradients, noise, and optimizer
/// buffers use the same structure, aligned group-for-group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    groups: Vec<ParamGroup>,
}

pub type Gradients = ParamSet;

impl ParamSet {
    pub fn new(groups: Vec<ParamGroup>) -> Result<Self> {
        let mut seen = HashSet::new();
        for g in &groups {
            if !seen.insert(g.name.as_str()) {
                return Err(Error::invalid(format!("duplicate group name `{}`", g.name)));
            }
        }
        Ok(ParamSet { groups })
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup] {
        &mut self.groups
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.groups.iter().map(|g| g.values.len()).sum()
    }

    /// Same names, kinds, and shapes, all zero.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            groups: self
                .groups
                .iter()
                .map(|g| ParamGroup::new(g.name.clone(), g.kind, Tensor::zeros(g.shape())))
                .collect(),
        }
    }

    pub fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.groups.len() != other.groups.len() {
            return Err(Error::Misaligned(format!(
                "{} groups vs {} groups",
                self.groups.len(),
                other.groups.len()
            )));
        }
        for (a, b) in self.groups.iter().zip(&other.groups) {
            if a.name != b.name || a.shape() != b.shape() {
                return Err(Error::Misaligned(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    a.name,
                    a.shape(),
                    b.name,
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Elementwise combination of two aligned sets.
    pub fn zip_map(&self, other: &ParamSet, f: impl Fn(f64, f64) -> f64) -> Result<ParamSet> {
        self.check_aligned(other)?;
        let groups = self
            .groups
            .iter()
            .zip(&other.groups)
            .map(|(a, b)| {
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                ParamGroup::new(
                    a.name.clone(),
                    a.kind,
                    Tensor::new(a.shape().to_vec(), data).expect("aligned"),
                )
            })
            .collect();
        Ok(ParamSet { groups })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ParamSet {
        let groups = self
            .groups
            .iter()
            .map(|g| {
                let data = g.data().iter().map(|&x| f(x)).collect();
                ParamGroup::new(
                    g.name.clone(),
                    g.kind,
                    Tensor::new(g.shape().to_vec(), data).expect("same shape"),
                )
            })
            .collect();
        ParamSet { groups }
    }

    pub fn add(&self, other: &ParamSet) -> Result<ParamSet> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamSet) -> Result<ParamSet> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> ParamSet {
        self.map(|x| x * c)
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &ParamSet) -> Result<ParamSet> {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.check_aligned(other)?;
        Ok(self
            .groups
            .iter()
            .zip(&other.groups)
            .map(|(a, b)| dot(a.data(), b.data()))
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.groups.iter().map(|g| dot(g.data(), g.data())).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.groups.iter().all(|g| g.values.is_finite())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for g in &self.groups {
            out.extend_from_slice(g.data());
        }
        out
    }

    /// A set shaped like `self` holding `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("with_flat", &[self.num_params()], &[flat.len()]));
        }
        let mut offset = 0;
        let groups = self
            .groups
            .iter()
            .map(|g| {
                let n = g.values.len();
                let t = Tensor::new(g.shape().to_vec(), flat[offset..offset + n].to_vec()).expect("sized");
                offset += n;
                ParamGroup::new(g.name.clone(), g.kind, t)
            })
            .collect();
        Ok(ParamSet { groups })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.groups.len() as u64).to_le_bytes());
        for g in &self.groups {
            out.extend_from_slice(&(g.name.len() as u64).to_le_bytes());
            out.extend_from_slice(g.name.as_bytes());
            out.push(g.kind.to_byte());
            out.extend_from_slice(&(g.shape().len() as u64).to_le_bytes());
            for &d in g.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in g.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        let mut r = Reader { bytes, pos: 0 };
        let count = r.u64()? as usize;
        let mut groups = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u64()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Checkpoint(format!("group name is not UTF-8: {e}")))?
                .to_string();
            let kind = ParamKind::from_byte(r.take(1)?[0])?;
            let rank = r.u64()? as usize;
            if rank > 16 {
                return Err(Error::Checkpoint(format!("implausible rank {rank} for `{name}`")));
            }
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("extent overflow for `{name}`")))?;
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let values = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            groups.push(ParamGroup::new(name, kind, values));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        ParamSet::new(groups).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
        ParamSet::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated("checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
