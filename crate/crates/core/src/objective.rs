//! Loss functions the optimizers and landscape probes can drive.
//!
//! [`BatchObjective`] wraps a model and a mini-batch. The analytic toys
//! ([`Quadratic`], [`PiecewiseQuadratic`]) give closed-form oracles for the
//! update rules.

use crate::error::{Error, Result};
use crate::nnet::{Batch, Gradients, Mode, Model, ParamGroup, ParamKind, ParamSet};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Eval-mode loss and misclassification ratio (fraction in `[0, 1]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub error_rate: f64,
}

impl Metrics {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.error_rate
    }
}

pub trait Objective: Sync {
    /// Loss and gradient at `params`. Train mode may draw masks from `rng`.
    fn loss_grad(&self, params: &ParamSet, mode: Mode, rng: &mut RngState) -> Result<(f64, Gradients)>;

    fn evaluate(&self, params: &ParamSet) -> Result<Metrics>;

    fn eval_grad(&self, params: &ParamSet) -> Result<(f64, Gradients)> {
        self.loss_grad(params, Mode::Eval, &mut RngState::new(0))
    }
}

pub struct BatchObjective<'a> {
    pub model: &'a Model,
    pub batch: &'a Batch,
}

impl<'a> BatchObjective<'a> {
    pub fn new(model: &'a Model, batch: &'a Batch) -> Self {
        BatchObjective { model, batch }
    }
}

impl Objective for BatchObjective<'_> {
    fn loss_grad(&self, params: &ParamSet, mode: Mode, rng: &mut RngState) -> Result<(f64, Gradients)> {
        self.model.grad(params, self.batch, mode, rng)
    }

    fn evaluate(&self, params: &ParamSet) -> Result<Metrics> {
        let out = self
            .model
            .forward(params, self.batch, Mode::Eval, &mut RngState::new(0))?;
        let wrong = out
            .logits
            .argmax_rows()?
            .iter()
            .zip(&self.batch.labels)
            .filter(|(p, l)| p != l)
            .count();
        Ok(Metrics {
            loss: out.loss,
            error_rate: wrong as f64 / self.batch.len() as f64,
        })
    }
}

/// Single dense group named `w`, the parameter layout of the toy objectives.
pub fn vector_params(values: Vec<f64>) -> ParamSet {
    ParamSet::new(vec![ParamGroup::new("w", ParamKind::Dense, Tensor::from_vec(values))]).expect("one group")
}

/// `L(w) = ½ (w − c)ᵀ H (w − c)` over a single group.
#[derive(Debug, Clone)]
pub struct Quadratic {
    dim: usize,
    hessian: Vec<f64>,
    center: Vec<f64>,
}

impl Quadratic {
    /// `hessian` is row-major `dim × dim` and must be symmetric.
    pub fn new(hessian: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        let dim = center.len();
        if dim == 0 || hessian.len() != dim * dim {
            return Err(Error::shape("quadratic", &[hessian.len()], &[dim, dim]));
        }
        for i in 0..dim {
            for j in 0..i {
                if hessian[i * dim + j] != hessian[j * dim + i] {
                    return Err(Error::invalid("quadratic Hessian must be symmetric"));
                }
            }
        }
        Ok(Quadratic { dim, hessian, center })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hessian(&self) -> &[f64] {
        &self.hessian
    }

    fn w<'p>(&self, params: &'p ParamSet) -> Result<&'p [f64]> {
        match params.groups() {
            [g] if g.data().len() == self.dim => Ok(g.data()),
            _ => Err(Error::Misaligned(format!(
                "quadratic expects one group of {}",
                self.dim
            ))),
        }
    }

    /// `H (w − c)`
    pub fn gradient_at(&self, w: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = w.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        (0..self.dim)
            .map(|i| crate::tensor::dot(&self.hessian[i * self.dim..(i + 1) * self.dim], &d))
            .collect()
    }

    pub fn loss_at(&self, w: &[f64]) -> f64 {
        let d: Vec<f64> = w.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        0.5 * crate::tensor::dot(&d, &self.gradient_at(w))
    }
}

impl Objective for Quadratic {
    fn loss_grad(&self, params: &ParamSet, _mode: Mode, _rng: &mut RngState) -> Result<(f64, Gradients)> {
        let w = self.w(params)?;
        Ok((self.loss_at(w), vector_params(self.gradient_at(w))))
    }

    fn evaluate(&self, params: &ParamSet) -> Result<Metrics> {
        Ok(Metrics {
            loss: self.loss_at(self.w(params)?),
            error_rate: 0.0,
        })
    }
}

/// One-dimensional `L(w) = a w²` for `w < 0` and `b w²` for `w ≥ 0`.
#[derive(Debug, Clone, Copy)]
pub struct PiecewiseQuadratic {
    pub left: f64,
    pub right: f64,
}

impl PiecewiseQuadratic {
    pub fn curvature(&self, w: f64) -> f64 {
        if w < 0.0 {
            self.left
        } else {
            self.right
        }
    }

    fn w(params: &ParamSet) -> Result<f64> {
        match params.groups() {
            [g] if g.data().len() == 1 => Ok(g.data()[0]),
            _ => Err(Error::Misaligned("piecewise quadratic expects one scalar group".into())),
        }
    }
}

impl Objective for PiecewiseQuadratic {
    fn loss_grad(&self, params: &ParamSet, _mode: Mode, _rng: &mut RngState) -> Result<(f64, Gradients)> {
        let w = Self::w(params)?;
        let k = self.curvature(w);
        Ok((k * w * w, vector_params(vec![2.0 * k * w])))
    }

    fn evaluate(&self, params: &ParamSet) -> Result<Metrics> {
        let w = Self::w(params)?;
        Ok(Metrics {
            loss: self.curvature(w) * w * w,
            error_rate: 0.0,
        })
    }
}
