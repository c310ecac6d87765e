use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::Dataset;
use super::task::ModelTask;
use crate::error::{Error, Result};
use crate::nnet::{Model, ParamSet};
use crate::optim::{run_phase_schedule, PassCounter, TrainLog};
use crate::rng::seeded_rng;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

/// Initial parameters for `seed`. They depend on the model and seed only, so
/// runs that differ in update rule start from the same point.
pub fn seed_init(model: &Model, seed: u64) -> ParamSet {
    model.init_params(&mut seeded_rng(seed).derive(INIT_STREAM))
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub params: ParamSet,
    pub log: TrainLog,
    pub passes: PassCounter,
}

impl SeedRun {
    pub fn final_test_acc(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.test_acc)
    }
}

/// Trains one seed in memory.
pub fn run_seed(
    config: &ExperimentConfig,
    model: &Model,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<SeedRun> {
    let root = seeded_rng(seed);
    let task = ModelTask::new(model, train, test, config.batch_size, root.derive(SHUFFLE_STREAM))?;
    let (params, log, passes) = run_phase_schedule(
        &task,
        seed_init(model, seed),
        &config.phase_schedule()?,
        &config.hyper,
        &config.lr_schedule,
        &mut root.derive(TRAIN_STREAM),
    )?;
    Ok(SeedRun {
        seed,
        params,
        log,
        passes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub label: String,
    pub seeds: usize,
    pub mean_test_acc: f64,
    pub min_test_acc: f64,
    pub max_test_acc: f64,
}

impl SummaryStats {
    pub fn from_accuracies(label: impl Into<String>, accs: &[f64]) -> Result<Self> {
        if accs.is_empty() {
            return Err(Error::EmptyRequest("summary over zero seeds"));
        }
        Ok(SummaryStats {
            label: label.into(),
            seeds: accs.len(),
            mean_test_acc: accs.iter().sum::<f64>() / accs.len() as f64,
            min_test_acc: accs.iter().cloned().fold(f64::INFINITY, f64::min),
            max_test_acc: accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub const CSV_HEADER: &'static str = "label,seeds,mean_test_acc,min_test_acc,max_test_acc\n";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e}\n",
            self.label, self.seeds, self.mean_test_acc, self.min_test_acc, self.max_test_acc
        )
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub runs: Vec<SeedRun>,
    /// Seeds that errored, with the message.
    pub failures: Vec<(u64, String)>,
    pub summary: SummaryStats,
}

pub fn seed_log_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed{seed}.csv"))
}

pub fn seed_checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed{seed}.ckpt"))
}

fn write_seed(dir: &Path, run: &SeedRun) -> Result<()> {
    fs::write(seed_log_path(dir, run.seed), run.log.to_csv())?;
    fs::write(dir.join(format!("seed{}.timing.csv", run.seed)), run.log.timing_csv())?;
    run.params.save(seed_checkpoint_path(dir, run.seed))
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Trains every seed (concurrently) and writes, under the resolved output
/// directory: `config.json`, per-seed `seed{s}.csv`, `seed{s}.timing.csv`
/// and `seed{s}.ckpt`, then `summary.csv` and `failures.csv`. A failing seed
/// is listed in `failures.csv` and left out of the summary.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_in(config, config.resolved_out_dir())
}

/// [`run_experiment`] writing to `out_dir` regardless of the config.
pub fn run_experiment_in(config: &ExperimentConfig, out_dir: impl Into<PathBuf>) -> Result<ExperimentReport> {
    config.validate()?;
    let out_dir = out_dir.into();
    fs::create_dir_all(&out_dir)?;
    config.save(out_dir.join("config.json"))?;
    let model = Model::new(config.model.clone())?;
    let (train, test) = config.dataset.load()?;

    let outcomes: Vec<(u64, Result<SeedRun>)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = run_seed(config, &model, &train, &test, seed).and_then(|r| write_seed(&out_dir, &r).map(|_| r));
            (seed, run)
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in outcomes {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let mut fail_csv = String::from("seed,error\n");
    for (seed, msg) in &failures {
        let _ = writeln!(fail_csv, "{seed},{}", csv_quote(msg));
    }
    fs::write(out_dir.join("failures.csv"), fail_csv)?;
    if runs.is_empty() {
        return Err(Error::Config(format!(
            "every seed failed; see {}",
            out_dir.join("failures.csv").display()
        )));
    }
    let accs: Vec<f64> = runs.iter().map(SeedRun::final_test_acc).collect();
    let summary = SummaryStats::from_accuracies(config.phases.trim(), &accs)?;
    fs::write(
        out_dir.join("summary.csv"),
        format!("{}{}", SummaryStats::CSV_HEADER, summary.csv_row()),
    )?;
    Ok(ExperimentReport {
        out_dir,
        runs,
        failures,
        summary,
    })
}

/// Summary over the `seed*.csv` logs in `dir`, using each log's last row.
/// The label is the phase string of `config.json` when present, else the
/// directory name.
pub fn summarize(dir: impl AsRef<Path>) -> Result<SummaryStats> {
    let dir = dir.as_ref();
    let mut logs: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(seed) = name.strip_prefix("seed").and_then(|s| s.strip_suffix(".csv")) {
            if let Ok(seed) = seed.parse::<u64>() {
                logs.push((seed, path));
            }
        }
    }
    logs.sort();
    let mut accs = Vec::with_capacity(logs.len());
    for (_, path) in &logs {
        accs.push(last_test_acc(path)?);
    }
    let label = match ExperimentConfig::load(dir.join("config.json")) {
        Ok(cfg) => cfg.phases.trim().to_string(),
        Err(_) => dir.file_name().and_then(|n| n.to_str()).unwrap_or("run").to_string(),
    };
    SummaryStats::from_accuracies(label, &accs)
}

fn last_test_acc(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == "test_acc")
        .ok_or_else(|| Error::Parse(format!("{}: no test_acc column", path.display())))?;
    let last = lines
        .rfind(|l| !l.is_empty())
        .ok_or_else(|| Error::Parse(format!("{}: no rows", path.display())))?;
    last.split(',')
        .nth(col)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse(format!("{}: bad test_acc in `{last}`", path.display())))
}
