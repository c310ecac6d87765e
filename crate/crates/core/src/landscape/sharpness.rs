use crate::error::{Error, Result};
use crate::nnet::ParamSet;
use crate::objective::Objective;
use crate::rng::RngState;
use crate::tensor::l2_norm;

/// ε-sharpness in percent: `(max L(w + d) − L(w)) / (1 + L(w)) · 100` over
/// probes `‖d‖ ≤ eps`. Each of `n_samples` probes starts on the sphere in a
/// random direction and takes `ascent_steps` projected normalized-gradient
/// ascent steps, halving the step whenever a move fails to raise the loss.
/// Directions depend only on `rng`, not on `eps`.
pub fn epsilon_sharpness(
    objective: &dyn Objective,
    params: &ParamSet,
    eps: f64,
    n_samples: usize,
    ascent_steps: usize,
    rng: &mut RngState,
) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("sharpness radius must be positive, got {eps}")));
    }
    if n_samples == 0 {
        return Err(Error::EmptyRequest("sharpness probes"));
    }
    let w = params.to_flat();
    let base = objective.evaluate(params)?.loss;
    let at = |d: &[f64]| -> Result<ParamSet> {
        let p: Vec<f64> = w.iter().zip(d).map(|(a, b)| a + b).collect();
        params.with_flat(&p)
    };
    let project = |d: &mut Vec<f64>| {
        let n = l2_norm(d);
        if n > eps {
            d.iter_mut().for_each(|x| *x *= eps / n);
        }
    };
    let mut best = base;
    for _ in 0..n_samples {
        let mut d: Vec<f64> = (0..w.len()).map(|_| rng.normal()).collect();
        let n = l2_norm(&d);
        if n == 0.0 {
            continue;
        }
        d.iter_mut().for_each(|x| *x *= eps / n);
        let (mut loss, grad) = objective.eval_grad(&at(&d)?)?;
        let mut grad = grad.to_flat();
        best = best.max(loss);
        let mut step = eps;
        for _ in 0..ascent_steps {
            let g = l2_norm(&grad);
            if g == 0.0 {
                break;
            }
            let mut next: Vec<f64> = d.iter().zip(&grad).map(|(a, b)| a + step * b / g).collect();
            project(&mut next);
            let (l, gr) = objective.eval_grad(&at(&next)?)?;
            if l > loss {
                d = next;
                loss = l;
                grad = gr.to_flat();
                best = best.max(loss);
            } else {
                step *= 0.5;
            }
        }
    }
    Ok((best - base) / (1.0 + base) * 100.0)
}
