use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{lr_at, step, Hyper, LrSchedule, OptState, PassCounter, PhaseSchedule};
use crate::error::{Error, Result};
use crate::nnet::ParamSet;
use crate::objective::{Metrics, Objective};
use crate::rng::RngState;

/// Source of mini-batch objectives and held-out evaluation for a training run.
pub trait TrainingTask: Sync {
    fn steps_per_epoch(&self) -> usize;

    /// The epoch's mini-batches in visiting order.
    fn epoch(&self, epoch: usize) -> Result<Vec<Box<dyn Objective + '_>>>;

    /// Eval-mode metrics on the training and test sets.
    fn evaluate(&self, params: &ParamSet) -> Result<(Metrics, Metrics)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub forward: u64,
    pub backward: u64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.rows.last()
    }

    /// CSV with a header row. Wall time is left out so that logs of identical
    /// runs compare byte for byte; see [`TrainLog::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,train_acc,test_loss,test_acc,forward_passes,backward_passes\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{},{}\n",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.forward, r.backward
            ));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,wall_secs\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.6}\n", r.epoch, r.wall_secs));
        }
        out
    }
}

/// Runs every phase in order with a shared optimizer state. `hyper.lr` is
/// replaced step by step with the schedule's value; the epoch index used for
/// the schedule runs across phases.
pub fn run_phase_schedule(
    task: &dyn TrainingTask,
    params: ParamSet,
    phases: &PhaseSchedule,
    hyper: &Hyper,
    schedule: &LrSchedule,
    rng: &mut RngState,
) -> Result<(ParamSet, TrainLog, PassCounter)> {
    hyper.validate()?;
    schedule.validate()?;
    if phases.phases.is_empty() {
        return Err(Error::EmptyRequest("phase schedule"));
    }
    let steps = task.steps_per_epoch();
    let mut params = params;
    let mut state = OptState::new(&params, hyper);
    let mut counter = PassCounter::default();
    let mut log = TrainLog::default();
    let started = Instant::now();
    let mut epoch = 0;
    for phase in &phases.phases {
        for _ in 0..phase.epochs {
            let batches = task.epoch(epoch)?;
            let mut h = *hyper;
            for (i, obj) in batches.iter().enumerate() {
                h.lr = lr_at(schedule, epoch, i, steps);
                step(
                    phase.rule,
                    &mut params,
                    &mut state,
                    obj.as_ref(),
                    &h,
                    &phase.noise,
                    rng,
                    &mut counter,
                )?;
            }
            let (train, test) = task.evaluate(&params)?;
            log.rows.push(EpochRecord {
                epoch,
                lr: lr_at(schedule, epoch, 0, steps),
                train_loss: train.loss,
                train_acc: train.accuracy(),
                test_loss: test.loss,
                test_acc: test.accuracy(),
                forward: counter.forward,
                backward: counter.backward,
                wall_secs: started.elapsed().as_secs_f64(),
            });
            epoch += 1;
        }
    }
    Ok((params, log, counter))
}
