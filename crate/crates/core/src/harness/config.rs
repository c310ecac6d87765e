use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{gen_synthetic, load_cifar_binary, load_idx, Dataset, SyntheticKind};
use crate::error::{Error, Result};
use crate::nnet::ModelSpec;
use crate::optim::{Hyper, LrSchedule, PhaseSchedule};
use crate::perturb::NoiseSpec;

/// Environment variable that, when set, replaces the configured output
/// directory.
pub const OUT_DIR_ENV: &str = "SSGD_OUT_DIR";

fn quarter() -> f64 {
    0.25
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Generated data split into train and test parts by `seed`.
    Synthetic {
        shape: SyntheticKind,
        n: usize,
        classes: usize,
        noise_std: f64,
        seed: u64,
        #[serde(default = "quarter")]
        test_fraction: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    CifarBinary {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
}

fn limit(d: Dataset, n: Option<usize>) -> Result<Dataset> {
    match n {
        Some(n) => d.head(n),
        None => Ok(d),
    }
}

impl DatasetSpec {
    /// `(train, test)`
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Synthetic {
                shape,
                n,
                classes,
                noise_std,
                seed,
                test_fraction,
            } => gen_synthetic(*shape, *n, *classes, *noise_std, *seed)?.split(*test_fraction, *seed),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => {
                let train = limit(load_idx(train_images, train_labels)?, *train_limit)?;
                let mut test = limit(load_idx(test_images, test_labels)?, *test_limit)?;
                let classes = train.classes.max(test.classes);
                test.classes = classes;
                Ok((Dataset { classes, ..train }, test))
            }
            DatasetSpec::CifarBinary {
                train,
                test,
                train_limit,
                test_limit,
            } => Ok((
                limit(load_cifar_binary(train)?, *train_limit)?,
                limit(load_cifar_binary(test)?, *test_limit)?,
            )),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSpec::Synthetic { .. } => {}
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DatasetSpec::CifarBinary { train, test, .. } => train.iter_mut().chain(test.iter_mut()).for_each(fix),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub hyper: Hyper,
    pub lr_schedule: LrSchedule,
    /// Phase grammar, e.g. `"75-25S-25S"`.
    pub phases: String,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Reads a config file. Relative dataset paths are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.dataset.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.hyper.validate()?;
        self.lr_schedule.validate()?;
        self.noise.validate()?;
        self.phase_schedule()?;
        Ok(())
    }

    pub fn phase_schedule(&self) -> Result<PhaseSchedule> {
        PhaseSchedule::parse(&self.phases, self.noise)
    }

    /// `out_dir`, unless the override variable is set.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone(),
        }
    }
}
