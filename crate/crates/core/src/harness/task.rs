use rayon::prelude::*;

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::nnet::{Batch, Gradients, Mode, Model, ParamSet};
use crate::objective::{BatchObjective, Metrics, Objective};
use crate::optim::TrainingTask;
use crate::rng::RngState;

/// Examples per forward pass when a whole dataset is evaluated.
pub const EVAL_CHUNK: usize = 1024;

fn check_compatible(model: &Model, data: &Dataset) -> Result<()> {
    if model.input_shape() != data.example_shape() {
        return Err(Error::shape("model input", model.input_shape(), data.example_shape()));
    }
    if data.classes > model.classes() {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model outputs {}",
            data.classes,
            model.classes()
        )));
    }
    Ok(())
}

/// Mean loss over a whole dataset, computed in fixed chunks and combined in
/// chunk order so the result does not depend on thread scheduling.
pub struct DatasetObjective<'a> {
    model: &'a Model,
    chunks: Vec<Batch>,
    total: usize,
}

impl<'a> DatasetObjective<'a> {
    pub fn new(model: &'a Model, data: &Dataset) -> Result<Self> {
        check_compatible(model, data)?;
        if data.is_empty() {
            return Err(Error::EmptyRequest("objective over an empty dataset"));
        }
        let idx: Vec<usize> = (0..data.len()).collect();
        let chunks = idx.chunks(EVAL_CHUNK).map(|c| data.batch(c)).collect::<Result<_>>()?;
        Ok(DatasetObjective {
            model,
            chunks,
            total: data.len(),
        })
    }

    fn weight(&self, b: &Batch) -> f64 {
        b.len() as f64 / self.total as f64
    }
}

impl Objective for DatasetObjective<'_> {
    fn loss_grad(&self, params: &ParamSet, mode: Mode, rng: &mut RngState) -> Result<(f64, Gradients)> {
        let base = *rng;
        let parts = self
            .chunks
            .par_iter()
            .enumerate()
            .map(|(i, b)| self.model.grad(params, b, mode, &mut base.derive(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        rng.next_u64();
        let mut loss = 0.0;
        let mut grad = params.zeros_like();
        for ((l, g), b) in parts.into_iter().zip(&self.chunks) {
            let w = self.weight(b);
            loss += w * l;
            grad = grad.axpy(w, &g)?;
        }
        Ok((loss, grad))
    }

    fn evaluate(&self, params: &ParamSet) -> Result<Metrics> {
        let parts = self
            .chunks
            .par_iter()
            .map(|b| BatchObjective::new(self.model, b).evaluate(params))
            .collect::<Result<Vec<_>>>()?;
        let mut loss = 0.0;
        let mut wrong = 0.0;
        for (m, b) in parts.iter().zip(&self.chunks) {
            loss += self.weight(b) * m.loss;
            wrong += (m.error_rate * b.len() as f64).round();
        }
        Ok(Metrics {
            loss,
            error_rate: wrong / self.total as f64,
        })
    }
}

/// One mini-batch that owns its examples.
pub struct MiniBatch<'a> {
    pub model: &'a Model,
    pub batch: Batch,
}

impl Objective for MiniBatch<'_> {
    fn loss_grad(&self, params: &ParamSet, mode: Mode, rng: &mut RngState) -> Result<(f64, Gradients)> {
        self.model.grad(params, &self.batch, mode, rng)
    }

    fn evaluate(&self, params: &ParamSet) -> Result<Metrics> {
        BatchObjective::new(self.model, &self.batch).evaluate(params)
    }
}

/// Mini-batch training of a model on a train/test pair. Epoch `e` visits the
/// training set in a permutation drawn from `shuffle.derive(e)`; the last
/// batch may be short.
pub struct ModelTask<'a> {
    model: &'a Model,
    train: &'a Dataset,
    batch_size: usize,
    shuffle: RngState,
    train_eval: DatasetObjective<'a>,
    test_eval: DatasetObjective<'a>,
}

impl<'a> ModelTask<'a> {
    pub fn new(
        model: &'a Model,
        train: &'a Dataset,
        test: &'a Dataset,
        batch_size: usize,
        shuffle: RngState,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(ModelTask {
            model,
            train,
            batch_size,
            shuffle,
            train_eval: DatasetObjective::new(model, train)?,
            test_eval: DatasetObjective::new(model, test)?,
        })
    }

    pub fn order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        self.shuffle.derive(epoch as u64).shuffle(&mut order);
        order
    }

    pub fn train_objective(&self) -> &DatasetObjective<'a> {
        &self.train_eval
    }

    pub fn test_objective(&self) -> &DatasetObjective<'a> {
        &self.test_eval
    }
}

impl TrainingTask for ModelTask<'_> {
    fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.batch_size)
    }

    fn epoch(&self, epoch: usize) -> Result<Vec<Box<dyn Objective + '_>>> {
        self.order(epoch)
            .chunks(self.batch_size)
            .map(|idx| {
                Ok(Box::new(MiniBatch {
                    model: self.model,
                    batch: self.train.batch(idx)?,
                }) as Box<dyn Objective + '_>)
            })
            .collect()
    }

    fn evaluate(&self, params: &ParamSet) -> Result<(Metrics, Metrics)> {
        Ok((self.train_eval.evaluate(params)?, self.test_eval.evaluate(params)?))
    }
}
