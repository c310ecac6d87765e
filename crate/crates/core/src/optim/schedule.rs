use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::UpdateRule;
use crate::error::{Error, Result};
use crate::perturb::NoiseSpec;

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// `initial · factor^k` after the k-th milestone epoch.
    StepDecay {
        initial: f64,
        milestones: Vec<usize>,
        factor: f64,
    },
    /// Cosine annealing with warm restarts; period `i` lasts
    /// `first_period · period_multiplier^i` epochs.
    Sgdr {
        initial: f64,
        first_period: f64,
        #[serde(default = "two")]
        period_multiplier: f64,
    },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            LrSchedule::Constant { lr } => *lr > 0.0,
            LrSchedule::StepDecay { initial, factor, .. } => *initial > 0.0 && *factor > 0.0,
            LrSchedule::Sgdr {
                initial,
                first_period,
                period_multiplier,
            } => *initial > 0.0 && *first_period > 0.0 && *period_multiplier >= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid learning-rate schedule {self:?}")))
        }
    }

    pub fn initial(&self) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::StepDecay { initial, .. } | LrSchedule::Sgdr { initial, .. } => initial,
        }
    }

    /// Epochs at which SGDR restarts, up to and including `horizon`.
    pub fn restarts(&self, horizon: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if let LrSchedule::Sgdr {
            first_period,
            period_multiplier,
            ..
        } = *self
        {
            let (mut start, mut period) = (0.0, first_period);
            loop {
                start += period;
                period *= period_multiplier;
                if start > horizon {
                    break;
                }
                out.push(start);
            }
        }
        out
    }
}

/// Learning rate at step `step_in_epoch` of `epoch`. SGDR advances by a
/// fraction of an epoch per step.
pub fn lr_at(schedule: &LrSchedule, epoch: usize, step_in_epoch: usize, steps_per_epoch: usize) -> f64 {
    match schedule {
        LrSchedule::Constant { lr } => *lr,
        LrSchedule::StepDecay {
            initial,
            milestones,
            factor,
        } => {
            let passed = milestones.iter().filter(|&&m| epoch >= m).count();
            decay(*initial, *factor, passed)
        }
        LrSchedule::Sgdr {
            initial,
            first_period,
            period_multiplier,
        } => {
            let t = epoch as f64 + step_in_epoch as f64 / steps_per_epoch.max(1) as f64;
            let (mut start, mut period) = (0.0, *first_period);
            while t >= start + period {
                start += period;
                period *= period_multiplier;
            }
            initial * 0.5 * (1.0 + (PI * (t - start) / period).cos())
        }
    }
}

/// `initial · factor^k`. Reciprocal-integer factors (0.1, 0.5, ...) divide
/// instead so decimal rates stay exact: 0.1 → 0.01 → 0.001.
fn decay(initial: f64, factor: f64, k: usize) -> f64 {
    let inv = 1.0 / factor;
    let divisor = inv.round();
    let mut lr = initial;
    if factor < 1.0 && divisor >= 2.0 && (inv - divisor).abs() < 1e-9 * divisor {
        for _ in 0..k {
            lr /= divisor;
        }
    } else {
        for _ in 0..k {
            lr *= factor;
        }
    }
    lr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub epochs: usize,
    pub rule: UpdateRule,
    pub noise: NoiseSpec,
}

/// Ordered training phases, written as dash-separated tokens: an epoch count
/// with an optional rule suffix, `S` (S-SGD), `S2` (S-SGD×2), `N`
/// (noise-SGD), `M` (SmoothOut), or none (SGD). Example: `75-25S-25S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub phases: Vec<Phase>,
}

impl PhaseSchedule {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        let s = PhaseSchedule { phases };
        if s.total_epochs() == 0 {
            return Err(Error::Parse("schedule has no epochs".into()));
        }
        Ok(s)
    }

    pub fn single(epochs: usize, rule: UpdateRule, noise: NoiseSpec) -> Result<Self> {
        PhaseSchedule::new(vec![Phase { epochs, rule, noise }])
    }

    /// Parses the token grammar; every phase gets `noise`.
    pub fn parse(text: &str, noise: NoiseSpec) -> Result<Self> {
        let phases = text
            .split('-')
            .map(|tok| {
                let tok = tok.trim().to_ascii_uppercase();
                let digits = tok.chars().take_while(|c| c.is_ascii_digit()).count();
                if digits == 0 {
                    return Err(Error::Parse(format!(
                        "token `{tok}` does not start with an epoch count"
                    )));
                }
                let epochs: usize = tok[..digits]
                    .parse()
                    .map_err(|e| Error::Parse(format!("token `{tok}`: {e}")))?;
                let rule = match &tok[digits..] {
                    "" => UpdateRule::Sgd,
                    "S" => UpdateRule::Ssgd,
                    "S2" => UpdateRule::SsgdX2,
                    "N" => UpdateRule::NoiseSgd,
                    "M" => UpdateRule::Smoothout,
                    other => return Err(Error::Parse(format!("unknown rule suffix `{other}` in `{tok}`"))),
                };
                Ok(Phase { epochs, rule, noise })
            })
            .collect::<Result<Vec<_>>>()?;
        PhaseSchedule::new(phases)
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    /// Cost in SGD-epoch equivalents.
    pub fn budget_units(&self) -> u64 {
        self.phases.iter().map(|p| p.epochs as u64 * p.rule.passes()).sum()
    }

    pub fn fits_budget_of(&self, other: &PhaseSchedule) -> bool {
        self.budget_units() <= other.budget_units()
    }
}

impl fmt::Display for PhaseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.phases.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            let suffix = match p.rule {
                UpdateRule::Sgd => "",
                UpdateRule::Ssgd => "S",
                UpdateRule::SsgdX2 => "S2",
                UpdateRule::NoiseSgd => "N",
                UpdateRule::Smoothout => "M",
            };
            write!(f, "{}{}", p.epochs, suffix)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn step_decay_values() {
        let s = LrSchedule::StepDecay {
            initial: 0.1,
            milestones: vec![75, 125],
            factor: 0.1,
        };
        assert_eq!(lr_at(&s, 0, 0, 10), 0.1);
        assert_eq!(lr_at(&s, 74, 9, 10), 0.1);
        assert_eq!(lr_at(&s, 75, 0, 10), 0.01);
        assert_eq!(lr_at(&s, 124, 0, 10), 0.01);
        assert_eq!(lr_at(&s, 125, 0, 10), 0.001);
        let odd = LrSchedule::StepDecay {
            initial: 1.0,
            milestones: vec![1],
            factor: 0.3,
        };
        assert_eq!(lr_at(&odd, 1, 0, 1), 0.3);
    }

    #[test]
    fn sgdr_restarts_and_midpoint() {
        let s = LrSchedule::Sgdr {
            initial: 0.1,
            first_period: 10.0,
            period_multiplier: 2.0,
        };
        assert_eq!(lr_at(&s, 0, 0, 50), 0.1);
        assert_eq!(s.restarts(150.0), vec![10.0, 30.0, 70.0, 150.0]);
        for r in [10, 30, 70, 150] {
            assert_eq!(lr_at(&s, r, 0, 50), 0.1);
            assert!(lr_at(&s, r - 1, 49, 50) < 1e-3);
        }
        assert!((lr_at(&s, 5, 0, 50) - 0.05).abs() < 1e-12);
        assert!((lr_at(&s, 20, 0, 50) - 0.05).abs() < 1e-12);
        // Fractional progress within an epoch.
        assert!(lr_at(&s, 5, 25, 50) < lr_at(&s, 5, 0, 50));
    }

    #[test]
    fn parse_grammar() {
        let n = NoiseSpec::fixed(0.4);
        let s = PhaseSchedule::parse("75-25S-25S", n).unwrap();
        assert_eq!(s.phases.len(), 3);
        assert_eq!(s.phases[1].rule, UpdateRule::Ssgd);
        assert_eq!(s.to_string(), "75-25S-25S");
        let s = PhaseSchedule::parse(" 10s2 - 5n -3M-1 ", n).unwrap();
        assert_eq!(s.to_string(), "10S2-5N-3M-1");
        assert!(PhaseSchedule::parse("", n).is_err());
        assert!(PhaseSchedule::parse("S", n).is_err());
        assert!(PhaseSchedule::parse("10X", n).is_err());
        assert!(PhaseSchedule::parse("0-0S", n).is_err());
        assert!(PhaseSchedule::parse("10--5", n).is_err());
    }

    #[test]
    fn equal_budget_rows() {
        let n = NoiseSpec::fixed(0.4);
        let sgd = PhaseSchedule::parse("75-50-50", n).unwrap();
        let mixed = PhaseSchedule::parse("75-25S-25S", n).unwrap();
        let all_s = PhaseSchedule::parse("37S-25S-25S", n).unwrap();
        assert_eq!(sgd.budget_units(), 175);
        assert_eq!(mixed.budget_units(), 175);
        assert_eq!(all_s.budget_units(), 174);
        assert!(all_s.fits_budget_of(&sgd));
        assert!(!PhaseSchedule::parse("38S-25S-25S", n).unwrap().fits_budget_of(&sgd));
    }

    proptest! {
        #[test]
        fn sgdr_is_positive_and_bounded(epoch in 0usize..400, step in 0usize..30, first in 1.0f64..20.0) {
            let s = LrSchedule::Sgdr { initial: 0.1, first_period: first, period_multiplier: 2.0 };
            let lr = lr_at(&s, epoch, step, 30);
            prop_assert!(lr > 0.0 && lr <= 0.1);
        }

        #[test]
        fn sgdr_is_continuous_within_a_period(epoch in 0usize..300, step in 0usize..99) {
            let s = LrSchedule::Sgdr { initial: 0.1, first_period: 10.0, period_multiplier: 2.0 };
            let restart_next = s.restarts(1e9).contains(&(epoch as f64 + 1.0)) && step == 98;
            let a = lr_at(&s, epoch, step, 100);
            let b = lr_at(&s, epoch, step + 1, 100);
            if !restart_next {
                // Max slope of the cosine is π·initial/(2·period) per epoch.
                prop_assert!((a - b).abs() <= 0.1 * PI / 2.0 / 10.0 / 100.0 + 1e-15);
            }
        }
    }
}
