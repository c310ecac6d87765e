//! Datasets, experiment configuration, and multi-seed orchestration.

mod config;
mod data;
mod experiment;
mod task;

pub use config::{DatasetSpec, ExperimentConfig, OUT_DIR_ENV};
pub use data::{gen_synthetic, load_cifar_binary, load_idx, write_idx, Dataset, Provenance, SyntheticKind};
pub use experiment::{
    run_experiment, run_experiment_in, run_seed, seed_checkpoint_path, seed_init, seed_log_path, summarize,
    ExperimentReport, SeedRun, SummaryStats,
};
pub use task::{DatasetObjective, MiniBatch, ModelTask, EVAL_CHUNK};

#[cfg(test)]
mod tests;
