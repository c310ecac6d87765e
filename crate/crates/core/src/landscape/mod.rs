//! Loss-landscape probes: linear interpolation between solutions, loss
//! surfaces on the plane through three solutions, Hessian spectra, and
//! ε-sharpness. All evaluations run in eval mode.

mod hessian;
mod sharpness;

pub use hessian::{
    eigen_density, exact_hessian, hvp, hvp_flat, lanczos_spectrum, tridiagonal_eigenvalues, DenseHessian, Spectrum,
    DEFAULT_HESSIAN_CAP,
};
pub use sharpness::epsilon_sharpness;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::ParamSet;
use crate::objective::Objective;
use crate::tensor::{dot, l2_norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub train_loss: f64,
    pub train_mcr: f64,
    pub test_loss: f64,
    pub test_mcr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve1D {
    pub points: Vec<CurvePoint>,
}

impl Curve1D {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,train_loss,train_mcr,test_loss,test_mcr\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e}",
                p.alpha, p.train_loss, p.train_mcr, p.test_loss, p.test_mcr
            );
        }
        out
    }

    /// Index of the smallest training misclassification ratio; ties go to the
    /// first occurrence.
    pub fn argmin_train_mcr(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, p) in self.points.iter().enumerate() {
            if best.is_none_or(|b| p.train_mcr < self.points[b].train_mcr) {
                best = Some(i);
            }
        }
        best
    }
}

/// `count` evenly spaced values from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![start],
        _ => (0..count)
            .map(|i| start + (end - start) * (i as f64 / (count - 1) as f64))
            .collect(),
    }
}

/// `(1 − α)·a + α·b`, which is exactly `a` at `α = 0` and `b` at `α = 1`.
pub fn interpolate(a: &ParamSet, b: &ParamSet, alpha: f64) -> Result<ParamSet> {
    a.zip_map(b, |x, y| (1.0 - alpha) * x + alpha * y)
}

pub fn interpolate_1d(
    a: &ParamSet,
    b: &ParamSet,
    train: &dyn Objective,
    test: &dyn Objective,
    alphas: &[f64],
) -> Result<Curve1D> {
    a.check_aligned(b)?;
    if alphas.is_empty() {
        return Err(Error::EmptyRequest("interpolation alphas"));
    }
    if alphas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("interpolation alphas must be strictly increasing"));
    }
    let points = alphas
        .par_iter()
        .map(|&alpha| {
            let w = interpolate(a, b, alpha)?;
            let tr = train.evaluate(&w)?;
            let te = test.evaluate(&w)?;
            Ok(CurvePoint {
                alpha,
                train_loss: tr.loss,
                train_mcr: tr.error_rate,
                test_loss: te.loss,
                test_mcr: te.error_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Curve1D { points })
}

/// Orthonormal frame of the plane through three solutions, with `w1` at the
/// origin and `w2` on the positive first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneBasis {
    origin: ParamSet,
    u_hat: Vec<f64>,
    v_hat: Vec<f64>,
    /// Raw (unnormalized) first axis `w2 − w1`.
    pub u: Vec<f64>,
    /// `w3 − w1` with its component along `u` removed.
    pub v: Vec<f64>,
    pub anchors: [(f64, f64); 3],
}

impl PlaneBasis {
    pub fn u_hat(&self) -> &[f64] {
        &self.u_hat
    }

    pub fn v_hat(&self) -> &[f64] {
        &self.v_hat
    }

    pub fn origin(&self) -> &ParamSet {
        &self.origin
    }

    /// `w1 + x·û + y·v̂`
    pub fn point(&self, x: f64, y: f64) -> Result<ParamSet> {
        let flat: Vec<f64> = self
            .origin
            .to_flat()
            .iter()
            .zip(self.u_hat.iter().zip(&self.v_hat))
            .map(|(&w, (&u, &v))| w + x * u + y * v)
            .collect();
        self.origin.with_flat(&flat)
    }

    /// Anchor bounding box scaled by `factor` about its centre.
    pub fn default_ranges(&self, factor: f64) -> ((f64, f64), (f64, f64)) {
        let span = |coords: [f64; 3]| {
            let lo = coords.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (mid, half) = ((lo + hi) * 0.5, (hi - lo) * 0.5 * factor);
            (mid - half, mid + half)
        };
        let a = self.anchors;
        (span([a[0].0, a[1].0, a[2].0]), span([a[0].1, a[1].1, a[2].1]))
    }
}

fn sub_flat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn remove_component(v: &mut [f64], unit: &[f64]) {
    let c = dot(v, unit);
    for (x, u) in v.iter_mut().zip(unit) {
        *x -= c * u;
    }
}

pub fn plane_basis(w1: &ParamSet, w2: &ParamSet, w3: &ParamSet) -> Result<PlaneBasis> {
    w1.check_aligned(w2)?;
    w1.check_aligned(w3)?;
    let (f1, f2, f3) = (w1.to_flat(), w2.to_flat(), w3.to_flat());
    let u = sub_flat(&f2, &f1);
    let u_norm = l2_norm(&u);
    if u_norm == 0.0 {
        return Err(Error::Collinear);
    }
    let u_hat: Vec<f64> = u.iter().map(|x| x / u_norm).collect();
    let d3 = sub_flat(&f3, &f1);
    let mut v = d3.clone();
    // Two passes keep the axes orthogonal to working precision.
    remove_component(&mut v, &u_hat);
    remove_component(&mut v, &u_hat);
    let v_norm = l2_norm(&v);
    if !(v_norm >= 1e-12 * l2_norm(&d3)) || v_norm == 0.0 {
        return Err(Error::Collinear);
    }
    let v_hat: Vec<f64> = v.iter().map(|x| x / v_norm).collect();
    let anchors = [(0.0, 0.0), (u_norm, 0.0), (dot(&d3, &u_hat), dot(&d3, &v_hat))];
    Ok(PlaneBasis {
        origin: w1.clone(),
        u_hat,
        v_hat,
        u,
        v,
        anchors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub x: f64,
    pub y: f64,
    pub loss: f64,
    pub mcr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Intervals per axis; the grid has `(resolution + 1)²` points.
    pub resolution: usize,
    /// Row-major over `y` then `x`.
    pub cells: Vec<SurfacePoint>,
    /// The three solutions evaluated at their own plane coordinates.
    pub anchors: [SurfacePoint; 3],
}

impl SurfaceGrid {
    pub fn at(&self, i: usize, j: usize) -> &SurfacePoint {
        &self.cells[j * (self.resolution + 1) + i]
    }

    pub fn argmin_loss(&self) -> usize {
        let mut best = 0;
        for (k, c) in self.cells.iter().enumerate() {
            if c.loss < self.cells[best].loss {
                best = k;
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,x,y,loss,mcr\n");
        let n = self.resolution + 1;
        for (k, c) in self.cells.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:e},{:e},{:e},{:e}", k % n, k / n, c.x, c.y, c.loss, c.mcr);
        }
        out
    }

    pub fn anchors_csv(&self) -> String {
        let mut out = String::from("anchor,x,y,loss,mcr\n");
        for (k, c) in self.anchors.iter().enumerate() {
            let _ = writeln!(out, "{},{:e},{:e},{:e},{:e}", k + 1, c.x, c.y, c.loss, c.mcr);
        }
        out
    }
}

/// Grid coordinate `i` of `n` intervals. Doubling `n` reproduces every
/// original coordinate exactly, so coarse grids nest inside fine ones.
fn grid_coord(range: (f64, f64), i: usize, n: usize) -> f64 {
    range.0 + (range.1 - range.0) * (i as f64 / n as f64)
}

pub fn surface_eval(
    basis: &PlaneBasis,
    objective: &dyn Objective,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
) -> Result<SurfaceGrid> {
    if resolution < 2 {
        return Err(Error::invalid("surface resolution must be at least 2"));
    }
    if !(x_range.0 < x_range.1 && y_range.0 < y_range.1) {
        return Err(Error::invalid("surface ranges must be increasing"));
    }
    let eval = |x: f64, y: f64| -> Result<SurfacePoint> {
        let m = objective.evaluate(&basis.point(x, y)?)?;
        Ok(SurfacePoint {
            x,
            y,
            loss: m.loss,
            mcr: m.error_rate,
        })
    };
    let n = resolution + 1;
    let cells = (0..n * n)
        .into_par_iter()
        .map(|k| {
            eval(
                grid_coord(x_range, k % n, resolution),
                grid_coord(y_range, k / n, resolution),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let a = basis.anchors;
    let anchors = [eval(a[0].0, a[0].1)?, eval(a[1].0, a[1].1)?, eval(a[2].0, a[2].1)?];
    Ok(SurfaceGrid {
        x_range,
        y_range,
        resolution,
        cells,
        anchors,
    })
}
