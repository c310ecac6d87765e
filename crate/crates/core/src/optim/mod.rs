//! Update rules and their schedules.
//!
//! Every rule follows the same rng protocol so that a noisy rule at noise
//! level zero retraces plain SGD bit for bit. At the start of a step two
//! kinds of child streams are derived from the caller's rng without
//! advancing it: one noise stream, and one mask stream per gradient pass
//! (pass `i` uses the same tag under every rule). The caller's rng then
//! advances by exactly one draw. Noise is drawn before any masks.
//!
//! Momentum and Adam filter the averaged gradient estimate; weight decay, when
//! enabled, acts on the master weights only.

mod schedule;
mod train;

pub use schedule::{lr_at, LrSchedule, Phase, PhaseSchedule};
pub use train::{run_phase_schedule, EpochRecord, TrainLog, TrainingTask};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Gradients, Mode, ParamSet};
use crate::objective::Objective;
use crate::perturb::{apply_single, apply_symmetric, sample_noise, NoiseFamily, NoiseSpec};
use crate::rng::RngState;

const NOISE_STREAM: u64 = 0x006e_6f69_7365;
const PASS_STREAM: u64 = 0x0070_6173_7300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    Sgd,
    NoiseSgd,
    Ssgd,
    SsgdX2,
    Smoothout,
}

impl UpdateRule {
    /// Forward/backward passes per step, which is also the budget cost of one
    /// epoch relative to plain SGD.
    pub fn passes(self) -> u64 {
        match self {
            UpdateRule::Sgd | UpdateRule::NoiseSgd | UpdateRule::Smoothout => 1,
            UpdateRule::Ssgd => 2,
            UpdateRule::SsgdX2 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BaseOptimizer {
    #[default]
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl BaseOptimizer {
    pub fn adam() -> Self {
        BaseOptimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub optimizer: BaseOptimizer,
}

impl Hyper {
    pub fn sgd(lr: f64) -> Self {
        Hyper {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            optimizer: BaseOptimizer::Sgd,
        }
    }

    pub fn with_momentum(self, momentum: f64) -> Self {
        Hyper { momentum, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        if let BaseOptimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::invalid("adam needs betas in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

/// Cumulative gradient passes; every gradient evaluation is one forward and
/// one backward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCounter {
    pub forward: u64,
    pub backward: u64,
}

impl PassCounter {
    fn record(&mut self) {
        self.forward += 1;
        self.backward += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub step: u64,
    velocity: ParamSet,
    second_moment: Option<ParamSet>,
}

impl OptState {
    pub fn new(params: &ParamSet, hyper: &Hyper) -> Self {
        OptState {
            step: 0,
            velocity: params.zeros_like(),
            second_moment: matches!(hyper.optimizer, BaseOptimizer::Adam { .. }).then(|| params.zeros_like()),
        }
    }

    /// Momentum buffer, or Adam's first moment.
    pub fn velocity(&self) -> &ParamSet {
        &self.velocity
    }
}

/// Loss (mean over the step's passes) and the gradient estimate a step used.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub gradient: Gradients,
}

/// One update of `params` under `rule`.
#[allow(clippy::too_many_arguments)]
pub fn step(
    rule: UpdateRule,
    params: &mut ParamSet,
    state: &mut OptState,
    objective: &dyn Objective,
    hyper: &Hyper,
    noise: &NoiseSpec,
    rng: &mut RngState,
    counter: &mut PassCounter,
) -> Result<StepOutput> {
    hyper.validate()?;
    params.check_aligned(&state.velocity)?;
    let mut noise_rng = rng.derive(NOISE_STREAM);
    let pass_rng = |i: u64| rng.derive(PASS_STREAM + i);
    let pass = |p: &ParamSet, i: u64, counter: &mut PassCounter| -> Result<(f64, Gradients)> {
        counter.record();
        objective.loss_grad(p, Mode::Train, &mut pass_rng(i))
    };

    let (loss, gradient) = match rule {
        UpdateRule::Sgd => pass(params, 0, counter)?,
        UpdateRule::NoiseSgd | UpdateRule::Smoothout => {
            let spec = if rule == UpdateRule::Smoothout {
                noise.with_family(NoiseFamily::SmoothoutUniform)
            } else {
                *noise
            };
            let n = sample_noise(&spec, params, &mut noise_rng)?;
            pass(&apply_single(params, &n)?, 0, counter)?
        }
        UpdateRule::Ssgd => {
            let n = sample_noise(noise, params, &mut noise_rng)?;
            let (plus, minus) = apply_symmetric(params, &n)?;
            let (lp, gp) = pass(&plus, 0, counter)?;
            let (lm, gm) = pass(&minus, 1, counter)?;
            ((lp + lm) * 0.5, gp.zip_map(&gm, |a, b| (a + b) * 0.5)?)
        }
        UpdateRule::SsgdX2 => {
            let n1 = sample_noise(noise, params, &mut noise_rng)?;
            let n2 = sample_noise(noise, params, &mut noise_rng)?;
            let (p1, m1) = apply_symmetric(params, &n1)?;
            let (p2, m2) = apply_symmetric(params, &n2)?;
            let (l1, g1) = pass(&p1, 0, counter)?;
            let (l2, g2) = pass(&m1, 1, counter)?;
            let (l3, g3) = pass(&p2, 2, counter)?;
            let (l4, g4) = pass(&m2, 3, counter)?;
            let first = g1.add(&g2)?;
            let second = g3.add(&g4)?;
            (
                ((l1 + l2) + (l3 + l4)) * 0.25,
                first.zip_map(&second, |a, b| (a + b) * 0.25)?,
            )
        }
    };
    rng.next_u64();

    if !gradient.is_finite() {
        return Err(Error::NonFinite("gradient estimate".into()));
    }
    apply_update(params, state, &gradient, hyper)?;
    Ok(StepOutput { loss, gradient })
}

fn apply_update(params: &mut ParamSet, state: &mut OptState, gradient: &Gradients, hyper: &Hyper) -> Result<()> {
    params.check_aligned(gradient)?;
    state.step += 1;
    let lr = hyper.lr;
    let wd = hyper.weight_decay;
    let t = state.step as i32;
    let groups = params.groups_mut().iter_mut().zip(gradient.groups());
    match hyper.optimizer {
        BaseOptimizer::Sgd => {
            let mu = hyper.momentum;
            for ((w, g), v) in groups.zip(state.velocity.groups_mut()) {
                let (w, g, v) = (w.data_mut(), g.data(), v.data_mut());
                for j in 0..w.len() {
                    let gj = if wd > 0.0 { g[j] + wd * w[j] } else { g[j] };
                    v[j] = mu * v[j] + gj;
                    w[j] -= lr * v[j];
                }
            }
        }
        BaseOptimizer::Adam { beta1, beta2, eps } => {
            let second = state.second_moment.get_or_insert_with(|| state.velocity.zeros_like());
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((w, g), m), s) in groups.zip(state.velocity.groups_mut()).zip(second.groups_mut()) {
                let (w, g, m, s) = (w.data_mut(), g.data(), m.data_mut(), s.data_mut());
                for j in 0..w.len() {
                    let gj = if wd > 0.0 { g[j] + wd * w[j] } else { g[j] };
                    m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                    s[j] = beta2 * s[j] + (1.0 - beta2) * gj * gj;
                    w[j] -= lr * (m[j] / c1) / ((s[j] / c2).sqrt() + eps);
                }
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(())
}

macro_rules! rule_fn {
    ($(#[$doc:meta])* $name:ident, $rule:expr) => {
        $(#[$doc])*
        pub fn $name(
            params: &mut ParamSet,
            state: &mut OptState,
            objective: &dyn Objective,
            hyper: &Hyper,
            noise: &NoiseSpec,
            rng: &mut RngState,
            counter: &mut PassCounter,
        ) -> Result<StepOutput> {
            step($rule, params, state, objective, hyper, noise, rng, counter)
        }
    };
}

/// Plain (momentum) SGD. `noise` is ignored.
pub fn sgd_step(
    params: &mut ParamSet,
    state: &mut OptState,
    objective: &dyn Objective,
    hyper: &Hyper,
    rng: &mut RngState,
    counter: &mut PassCounter,
) -> Result<StepOutput> {
    step(
        UpdateRule::Sgd,
        params,
        state,
        objective,
        hyper,
        &NoiseSpec::default(),
        rng,
        counter,
    )
}

rule_fn!(
    /// Gradient at `w + n` for a single noise draw.
    noise_sgd_step,
    UpdateRule::NoiseSgd
);
rule_fn!(
    /// Mean of the gradients at `w + n` and `w − n` for one draw `n`.
    ssgd_step,
    UpdateRule::Ssgd
);
rule_fn!(
    /// Two independent symmetric pairs, mean of four gradients.
    ssgd_x2_step,
    UpdateRule::SsgdX2
);
rule_fn!(
    /// Single-sided noise with magnitude uniform on `[0, level·‖w‖]`.
    smoothout_step,
    UpdateRule::Smoothout
);
