//! Weight-noise generation for the noisy update rules.
//!
//! Each targeted group `g` gets an isotropic Gaussian direction rescaled to a
//! chosen L2 magnitude. With [`NoiseScale::LayerNorm`] (the default) that
//! magnitude is `level · ‖w_g‖`; [`NoiseScale::Absolute`] uses `level`
//! directly. Draw order is fixed: groups in declaration order, and for each
//! targeted group its direction values followed (for SmoothOut) by one
//! uniform magnitude draw. Untargeted groups consume nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{ParamKind, ParamSet};
use crate::rng::RngState;
use crate::tensor::l2_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    /// Every draw has exactly the target magnitude.
    #[default]
    FixedMagnitude,
    /// Magnitude uniform on `[0, target]`, resampled per group.
    SmoothoutUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    #[default]
    All,
    ConvOnly,
    DenseOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    #[default]
    LayerNorm,
    Absolute,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level: f64,
    #[serde(default)]
    pub family: NoiseFamily,
    #[serde(default)]
    pub target: NoiseTarget,
    #[serde(default = "yes")]
    pub exclude_bias: bool,
    #[serde(default)]
    pub scale: NoiseScale,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::fixed(0.0)
    }
}

impl NoiseSpec {
    pub fn fixed(level: f64) -> Self {
        NoiseSpec {
            level,
            family: NoiseFamily::FixedMagnitude,
            target: NoiseTarget::All,
            exclude_bias: true,
            scale: NoiseScale::LayerNorm,
        }
    }

    pub fn smoothout(level: f64) -> Self {
        NoiseSpec {
            family: NoiseFamily::SmoothoutUniform,
            ..NoiseSpec::fixed(level)
        }
    }

    pub fn with_target(self, target: NoiseTarget) -> Self {
        NoiseSpec { target, ..self }
    }

    pub fn with_family(self, family: NoiseFamily) -> Self {
        NoiseSpec { family, ..self }
    }

    /// Bias groups are targeted only under `target = all` with
    /// `exclude_bias = false`.
    pub fn targets(&self, kind: ParamKind) -> bool {
        match (kind, self.target) {
            (ParamKind::Bias, NoiseTarget::All) => !self.exclude_bias,
            (ParamKind::Bias, _) => false,
            (_, NoiseTarget::All) => true,
            (ParamKind::Conv, NoiseTarget::ConvOnly) => true,
            (ParamKind::Dense, NoiseTarget::DenseOnly) => true,
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0 && self.level.is_finite()) {
            return Err(Error::invalid(format!(
                "noise level must be finite and non-negative, got {}",
                self.level
            )));
        }
        Ok(())
    }
}

/// Per-group perturbation aligned to a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Noise(ParamSet);

impl Noise {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Noise(params.zeros_like())
    }

    /// Wraps an explicit perturbation.
    pub fn from_params(values: ParamSet) -> Self {
        Noise(values)
    }

    pub fn as_params(&self) -> &ParamSet {
        &self.0
    }

    pub fn neg(&self) -> Noise {
        Noise(self.0.map(|x| -x))
    }

    pub fn group_norms(&self) -> Vec<f64> {
        self.0.groups().iter().map(|g| g.norm()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.0.groups().iter().all(|g| g.data().iter().all(|&x| x == 0.0))
    }
}

pub fn sample_noise(spec: &NoiseSpec, params: &ParamSet, rng: &mut RngState) -> Result<Noise> {
    spec.validate()?;
    if params.is_empty() {
        return Err(Error::EmptyRequest("noise for an empty parameter set"));
    }
    let mut noise = params.zeros_like();
    if spec.level == 0.0 {
        return Ok(Noise(noise));
    }
    for (g, out) in params.groups().iter().zip(noise.groups_mut()) {
        if !spec.targets(g.kind()) {
            continue;
        }
        let reference = match spec.scale {
            NoiseScale::LayerNorm => {
                let norm = g.norm();
                if norm == 0.0 && spec.family == NoiseFamily::FixedMagnitude {
                    return Err(Error::DegenerateGroup(g.name().to_string()));
                }
                spec.level * norm
            }
            NoiseScale::Absolute => spec.level,
        };
        let dst = out.data_mut();
        for d in dst.iter_mut() {
            *d = rng.normal();
        }
        let dir_norm = l2_norm(dst);
        let magnitude = match spec.family {
            NoiseFamily::FixedMagnitude => reference,
            NoiseFamily::SmoothoutUniform => rng.uniform() * reference,
        };
        if dir_norm == 0.0 {
            return Err(Error::NonFinite(format!("zero noise direction for `{}`", g.name())));
        }
        let s = magnitude / dir_norm;
        for d in dst.iter_mut() {
            *d *= s;
        }
    }
    Ok(Noise(noise))
}

/// `(w + n, w − n)`
pub fn apply_symmetric(params: &ParamSet, noise: &Noise) -> Result<(ParamSet, ParamSet)> {
    Ok((params.add(&noise.0)?, params.sub(&noise.0)?))
}

/// `w + n`
pub fn apply_single(params: &ParamSet, noise: &Noise) -> Result<ParamSet> {
    params.add(&noise.0)
}
