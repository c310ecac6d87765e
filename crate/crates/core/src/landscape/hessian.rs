use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::ParamSet;
use crate::objective::Objective;
use crate::rng::seeded_rng;
use crate::tensor::{dot, l2_norm};

/// Largest parameter count [`exact_hessian`] accepts by default.
pub const DEFAULT_HESSIAN_CAP: usize = 2000;

fn default_step(params: &ParamSet) -> f64 {
    1e-4 * (1.0 + params.norm())
}

/// Hessian-vector product by central differences of the eval-mode gradient:
/// `(∇L(w + h·v̂) − ∇L(w − h·v̂)) / 2h · ‖v‖`. `h` defaults to
/// `1e-4·(1 + ‖w‖)`.
pub fn hvp(objective: &dyn Objective, params: &ParamSet, v: &ParamSet, h: Option<f64>) -> Result<ParamSet> {
    params.check_aligned(v)?;
    let out = hvp_flat(objective, params, &v.to_flat(), h)?;
    params.with_flat(&out)
}

pub fn hvp_flat(objective: &dyn Objective, params: &ParamSet, v: &[f64], h: Option<f64>) -> Result<Vec<f64>> {
    if v.len() != params.num_params() {
        return Err(Error::shape("hvp", &[params.num_params()], &[v.len()]));
    }
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Err(Error::invalid("hvp direction must be non-zero"));
    }
    let h = h.unwrap_or_else(|| default_step(params));
    if !(h > 0.0) {
        return Err(Error::invalid("hvp step must be positive"));
    }
    let w = params.to_flat();
    let shifted = |sign: f64| -> Result<Vec<f64>> {
        let p: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + sign * h * (b / norm)).collect();
        Ok(objective.eval_grad(&params.with_flat(&p)?)?.1.to_flat())
    };
    let plus = shifted(1.0)?;
    let minus = shifted(-1.0)?;
    let c = norm / (2.0 * h);
    Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) * c).collect())
}

/// Dense Hessian assembled column by column from [`hvp`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHessian {
    pub dim: usize,
    /// Row-major, symmetrized as `(H + Hᵀ)/2`.
    pub values: Vec<f64>,
    /// `max |H − Hᵀ|` before symmetrization.
    pub asymmetry: f64,
    pub max_abs: f64,
}

impl DenseHessian {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    /// All eigenvalues, descending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.values);
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }
}

/// Column `j` is `hvp(e_j)` with a step a tenth of the [`hvp`] default unless
/// `h` is given.
pub fn exact_hessian(objective: &dyn Objective, params: &ParamSet, h: Option<f64>, cap: usize) -> Result<DenseHessian> {
    let n = params.num_params();
    if n > cap {
        return Err(Error::CapExceeded { count: n, cap });
    }
    let h = h.unwrap_or_else(|| 0.1 * default_step(params));
    let columns = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            hvp_flat(objective, params, &e, Some(h))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; n * n];
    let mut asymmetry = 0.0f64;
    let mut max_abs = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            // H[i][j] is entry i of column j.
            let (a, b) = (columns[j][i], columns[i][j]);
            asymmetry = asymmetry.max((a - b).abs());
            max_abs = max_abs.max(a.abs());
            values[i * n + j] = (a + b) * 0.5;
        }
    }
    Ok(DenseHessian {
        dim: n,
        values,
        asymmetry,
        max_abs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Ritz values, descending.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
    /// Set when the Krylov space closed before the requested iteration count.
    pub breakdown: bool,
}

impl Spectrum {
    pub fn top(&self) -> Option<f64> {
        self.values.first().copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,ritz_value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{i},{v:e}");
        }
        out
    }
}

/// `k`-step Lanczos with full reorthogonalization from a Gaussian unit start
/// vector drawn from `seed`. Stops early, flagged, when `β < 1e-12`.
pub fn lanczos_spectrum(op: &dyn Fn(&[f64]) -> Result<Vec<f64>>, dim: usize, k: usize, seed: u64) -> Result<Spectrum> {
    if k == 0 || k > dim {
        return Err(Error::invalid(format!(
            "lanczos needs 1 ≤ k ≤ dim, got k = {k}, dim = {dim}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut q: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let n0 = l2_norm(&q);
    q.iter_mut().for_each(|x| *x /= n0);

    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alphas = Vec::with_capacity(k);
    let mut betas: Vec<f64> = Vec::with_capacity(k);
    let mut breakdown = false;
    for j in 0..k {
        let qj = &basis[j];
        let mut w = op(qj)?;
        if w.len() != dim {
            return Err(Error::shape("lanczos operator", &[dim], &[w.len()]));
        }
        let alpha = dot(&w, qj);
        for (x, y) in w.iter_mut().zip(qj) {
            *x -= alpha * y;
        }
        if j > 0 {
            let beta = betas[j - 1];
            for (x, y) in w.iter_mut().zip(&basis[j - 1]) {
                *x -= beta * y;
            }
        }
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                for (x, y) in w.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
        }
        alphas.push(alpha);
        if j + 1 == k {
            break;
        }
        let beta = l2_norm(&w);
        if beta < 1e-12 {
            breakdown = true;
            break;
        }
        w.iter_mut().for_each(|x| *x /= beta);
        betas.push(beta);
        basis.push(w);
    }
    let iterations = alphas.len();
    let mut values = tridiagonal_eigenvalues(&alphas, &betas[..iterations - 1])?;
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(Spectrum {
        values,
        iterations,
        seed,
        breakdown,
    })
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `diag` and
/// off-diagonal `off` (length `diag.len() − 1`) by implicit-shift QL.
/// Returned in no particular order.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return Err(Error::shape("tridiagonal", &[n.saturating_sub(1)], &[off.len()]));
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                return Err(Error::NonFinite("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("tridiagonal eigenvalues".into()));
    }
    Ok(d)
}

/// Gaussian-kernel density of `values` sampled at `points` evenly spaced
/// points spanning their range; kernel width is range/50.
pub fn eigen_density(values: &[f64], points: usize) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() || points == 0 {
        return Err(Error::EmptyRequest("eigenvalue density"));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let width = if range > 0.0 {
        range / 50.0
    } else {
        1e-3 * lo.abs().max(1.0)
    };
    let norm = 1.0 / (values.len() as f64 * width * (2.0 * std::f64::consts::PI).sqrt());
    Ok(super::linspace(lo - 3.0 * width, hi + 3.0 * width, points)
        .into_iter()
        .map(|x| {
            let s: f64 = values.iter().map(|v| (-0.5 * ((x - v) / width).powi(2)).exp()).sum();
            (x, s * norm)
        })
        .collect())
}
