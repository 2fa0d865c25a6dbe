//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 failed checks, 2 usage, input or contract
//! errors, 3 training divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hypoc::config::TrainConfig;
use hypoc::data::{self, SyntheticSpec};
use hypoc::trainer::{self, Checkpoint, TrainState};
use hypoc::{selfcheck, Error};

const CHECKPOINT_FILE: &str = "checkpoint.json";
const LOG_FILE: &str = "train_log.csv";

#[derive(Parser)]
#[command(
    name = "hypoc",
    version,
    about = "One-class spoof detection in the Poincaré ball"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on real-only features; writes <out>/checkpoint.json and <out>/train_log.csv.
    Train {
        /// Feature CSV with label-0 rows only.
        #[arg(long)]
        train: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Continue from a checkpoint; its config replaces --config.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a labelled feature file and print the metric report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Fixed decision threshold instead of the EER threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a two-Gaussian task as <out>/train.csv and <out>/test.csv.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// JSON file with SyntheticSpec fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
    },
    /// Run the geometry and gradient property suite.
    CheckGeometry {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        cases: usize,
    },
    /// Retrain over a grid of curvatures or clip radii and tabulate HTER.
    Sweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Axis::Curvature)]
        axis: Axis,
        /// Grid values; defaults to 0.01,0.1,0.3,1.0 for curvature and 0.5,1,2,4 for clip-r.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Curvature,
    ClipR,
}

/// Flags that take precedence over the config file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    curvature: Option<f64>,
    #[arg(long)]
    clip_r: Option<f64>,
    /// Disable Euclidean feature clipping.
    #[arg(long)]
    no_feature_clip: bool,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl Overrides {
    fn resolve(&self, base: Option<TrainConfig>) -> hypoc::Result<TrainConfig> {
        let mut cfg = match (base, &self.config) {
            (Some(c), _) => c,
            (None, Some(path)) => TrainConfig::load(path)?,
            (None, None) => TrainConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.curvature {
            cfg.curvature = v;
        }
        if let Some(v) = self.clip_r {
            cfg.feature_clip = v;
        }
        if self.no_feature_clip {
            cfg.feature_clipping = false;
        }
        if let Some(v) = self.grad_clip {
            cfg.grad_clip = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
    }
}

enum Failure {
    Checks,
    Err(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Err(e)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Err(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            train,
            overrides,
            resume,
            out,
        } => {
            let features = data::load_features(&train)?;
            let (cfg, mut state) = match resume {
                Some(path) => {
                    let cp = Checkpoint::load(path)?;
                    (overrides.resolve(Some(cp.config))?, cp.state)
                }
                None => {
                    let cfg = overrides.resolve(None)?;
                    let state = TrainState::init(&cfg)?;
                    (cfg, state)
                }
            };
            let log = trainer::run_epochs(&mut state, &cfg, &features, cfg.epochs)?;
            for (epoch, mean) in log.epoch_means() {
                println!("epoch={epoch} mean_total={mean}");
            }
            fs::create_dir_all(&out).map_err(Error::from)?;
            write(&out.join(LOG_FILE), &log.to_csv())?;
            Checkpoint { config: cfg, state }.save(out.join(CHECKPOINT_FILE))?;
            println!("checkpoint={}", out.join(CHECKPOINT_FILE).display());
        }
        Command::Evaluate {
            checkpoint,
            data: path,
            threshold,
            out,
        } => {
            let cp = Checkpoint::load(checkpoint)?;
            let batch = data::load_features(path)?;
            let report = cp.state.params.evaluate(&batch, &cp.config, threshold)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(out) = out {
                write(&out, &text)?;
            }
        }
        Command::SynthData {
            out,
            spec,
            seed,
            dim,
            separation,
        } => {
            let mut spec = match spec {
                Some(p) => {
                    SyntheticSpec::from_json_str(&fs::read_to_string(p).map_err(Error::from)?)?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(v) = seed {
                spec.seed = v;
            }
            if let Some(v) = dim {
                spec.dim = v;
            }
            if let Some(v) = separation {
                spec.separation = v;
            }
            let (train, test) = data::generate_synthetic(&spec)?;
            fs::create_dir_all(&out).map_err(Error::from)?;
            data::save_features(&train, out.join("train.csv"))?;
            data::save_features(&test, out.join("test.csv"))?;
        }
        Command::CheckGeometry { seed, cases } => {
            let results = selfcheck::run(seed, cases);
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("{status} {} ({})", r.name, r.detail);
            }
            if results.iter().any(|r| !r.passed) {
                return Err(Failure::Checks);
            }
        }
        Command::Sweep {
            train,
            test,
            axis,
            values,
            overrides,
        } => {
            let train = data::load_features(train)?;
            let test = data::load_features(test)?;
            let base = overrides.resolve(None)?;
            let values = match (values.is_empty(), axis) {
                (false, _) => values,
                (true, Axis::Curvature) => vec![0.01, 0.1, 0.3, 1.0],
                (true, Axis::ClipR) => vec![0.5, 1.0, 2.0, 4.0],
            };
            let name = match axis {
                Axis::Curvature => "curvature",
                Axis::ClipR => "clip_r",
            };
            println!("{name}\tstatus\thter\tauc");
            for v in values {
                let mut cfg = base.clone();
                match axis {
                    Axis::Curvature => cfg.curvature = v,
                    Axis::ClipR => cfg.feature_clip = v,
                }
                let outcome = cfg
                    .validate()
                    .and_then(|()| trainer::fit(&cfg, &train))
                    .and_then(|(state, _)| state.params.evaluate(&test, &cfg, None));
                match outcome {
                    Ok(r) => println!("{v}\tok\t{}\t{}", r.hter, r.auc),
                    Err(Error::Divergence { op }) => println!("{v}\tdiverged ({op})\t-\t-"),
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Err(e.into()))
}
