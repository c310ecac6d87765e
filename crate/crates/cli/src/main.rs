use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ssgd_lab::harness::{run_experiment_in, summarize, Dataset, DatasetObjective, ExperimentConfig, SummaryStats};
use ssgd_lab::landscape::{
    epsilon_sharpness, hvp_flat, interpolate_1d, lanczos_spectrum, linspace, plane_basis, surface_eval,
};
use ssgd_lab::nnet::{Model, ParamSet};
use ssgd_lab::rng::seeded_rng;
use ssgd_lab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ssgd",
    version,
    about = "Symmetric weight-noise training and loss-landscape tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory. Overrides SSGD_OUT_DIR and the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss and error rate along the segment between two checkpoints.
    Interp {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Defaults to config.json next to `--a`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `start:end:count`
        #[arg(long, default_value = "-0.5:1.5:41", allow_hyphen_values = true)]
        alphas: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss surface on the plane through three checkpoints.
    Surface {
        #[arg(long)]
        w1: PathBuf,
        #[arg(long)]
        w2: PathBuf,
        #[arg(long)]
        w3: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grid intervals per axis.
        #[arg(long, default_value_t = 20)]
        resolution: usize,
        /// `lo:hi`; defaults to 1.2 times the anchors' bounding box.
        #[arg(long, allow_hyphen_values = true)]
        x_range: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        y_range: Option<String>,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top Hessian eigenvalues of the training loss at a checkpoint.
    Spectrum {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Lanczos iterations, capped at the parameter count.
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Epsilon-sharpness of the training loss at a checkpoint.
    Sharpness {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        ascent_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary row over the seed logs in a run directory.
    Summarize {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_floats(text: &str, parts: usize, what: &str) -> Result<Vec<f64>> {
    let fields: Vec<&str> = text.split(':').collect();
    if fields.len() != parts {
        return Err(Error::InvalidArgument(format!(
            "{what}: expected {parts} fields separated by ':', got `{text}`"
        )));
    }
    fields
        .iter()
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("{what}: `{f}`: {e}")))
        })
        .collect()
}

fn parse_alphas(text: &str) -> Result<Vec<f64>> {
    let v = parse_floats(text, 3, "alphas")?;
    let count = v[2];
    if !(count >= 1.0 && count.fract() == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alphas: count must be a positive integer, got {count}"
        )));
    }
    Ok(linspace(v[0], v[1], count as usize))
}

fn parse_range(text: &str, what: &str) -> Result<(f64, f64)> {
    let v = parse_floats(text, 2, what)?;
    Ok((v[0], v[1]))
}

/// Config named on the command line, else `config.json` beside `anchor`.
fn find_config(explicit: Option<PathBuf>, anchor: &Path) -> Result<ExperimentConfig> {
    let path = explicit.unwrap_or_else(|| anchor.parent().unwrap_or(Path::new(".")).join("config.json"));
    ExperimentConfig::load(path)
}

struct Loaded {
    model: Model,
    train: Dataset,
    test: Dataset,
}

fn load_setup(config: &ExperimentConfig) -> Result<Loaded> {
    let model = Model::new(config.model.clone())?;
    let (train, test) = config.dataset.load()?;
    Ok(Loaded { model, train, test })
}

fn load_checkpoint(model: &Model, path: &Path) -> Result<ParamSet> {
    let params = ParamSet::load(path)?;
    model.check_params(&params)?;
    Ok(params)
}

fn beside(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    println!("{}", path.display());
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.resolved_out_dir());
            let report = run_experiment_in(&cfg, dir)?;
            for (seed, msg) in &report.failures {
                eprintln!("{}", json!({"warning": {"seed": seed, "message": msg}}));
            }
            print!("{}{}", SummaryStats::CSV_HEADER, report.summary.csv_row());
            Ok(())
        }
        Command::Interp {
            a,
            b,
            config,
            alphas,
            out,
        } => {
            let alphas = parse_alphas(&alphas)?;
            let cfg = find_config(config, &a)?;
            let s = load_setup(&cfg)?;
            let wa = load_checkpoint(&s.model, &a)?;
            let wb = load_checkpoint(&s.model, &b)?;
            let train = DatasetObjective::new(&s.model, &s.train)?;
            let test = DatasetObjective::new(&s.model, &s.test)?;
            let curve = interpolate_1d(&wa, &wb, &train, &test, &alphas)?;
            write_out(&out.unwrap_or_else(|| beside(&a, "interp.csv")), &curve.to_csv())
        }
        Command::Surface {
            w1,
            w2,
            w3,
            config,
            resolution,
            x_range,
            y_range,
            split,
            out,
        } => {
            let cfg = find_config(config, &w1)?;
            let s = load_setup(&cfg)?;
            let basis = plane_basis(
                &load_checkpoint(&s.model, &w1)?,
                &load_checkpoint(&s.model, &w2)?,
                &load_checkpoint(&s.model, &w3)?,
            )?;
            let (dx, dy) = basis.default_ranges(1.2);
            let xr = x_range.map(|t| parse_range(&t, "x-range")).transpose()?.unwrap_or(dx);
            let yr = y_range.map(|t| parse_range(&t, "y-range")).transpose()?.unwrap_or(dy);
            let data = match split {
                Split::Train => &s.train,
                Split::Test => &s.test,
            };
            let grid = surface_eval(&basis, &DatasetObjective::new(&s.model, data)?, xr, yr, resolution)?;
            let out = out.unwrap_or_else(|| beside(&w1, "surface.csv"));
            write_out(&out, &grid.to_csv())?;
            write_out(&beside(&out, "anchors.csv"), &grid.anchors_csv())
        }
        Command::Spectrum {
            checkpoint,
            config,
            iterations,
            seed,
            out,
        } => {
            let cfg = find_config(config, &checkpoint)?;
            let s = load_setup(&cfg)?;
            let params = load_checkpoint(&s.model, &checkpoint)?;
            let objective = DatasetObjective::new(&s.model, &s.train)?;
            let dim = params.num_params();
            let op = |v: &[f64]| hvp_flat(&objective, &params, v, None);
            let spectrum = lanczos_spectrum(&op, dim, iterations.min(dim), seed)?;
            write_out(
                &out.unwrap_or_else(|| beside(&checkpoint, "spectrum.csv")),
                &spectrum.to_csv(),
            )
        }
        Command::Sharpness {
            checkpoint,
            config,
            eps,
            samples,
            ascent_steps,
            seed,
            out,
        } => {
            let cfg = find_config(config, &checkpoint)?;
            let s = load_setup(&cfg)?;
            let params = load_checkpoint(&s.model, &checkpoint)?;
            let objective = DatasetObjective::new(&s.model, &s.train)?;
            let value = epsilon_sharpness(&objective, &params, eps, samples, ascent_steps, &mut seeded_rng(seed))?;
            let csv =
                format!("eps,samples,ascent_steps,seed,sharpness\n{eps:e},{samples},{ascent_steps},{seed},{value:e}\n");
            match out {
                Some(path) => write_out(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Summarize { dir, out } => {
            let stats = summarize(&dir)?;
            let csv = format!("{}{}", SummaryStats::CSV_HEADER, stats.csv_row());
            match out {
                Some(path) => write_out(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", json!({"error": {"kind": "usage", "message": message.trim_end()}}));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::FAILURE
        }
    }
}
