//! Command-line front end. [`run`] parses arguments, executes one command,
//! and returns the process exit code (0 ok, 1 usage/config, 2 data, 3 numerical).

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::gradsuite::CheckCase;

pub use commands::{
    cmd_eval_cnn, cmd_eval_svm, cmd_gradcheck, cmd_pixel_features, cmd_prepare, cmd_synth_data, cmd_train_cnn,
    cmd_train_svm, CLASS_COUNTS_FILE, CONFIG_ECHO, CONFUSION_FILE, CV_TABLE_FILE, DATASET_FILE, SVM_MODEL_FILE,
};
pub use config::{DataConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "anatomy-net",
    version,
    about = "Train and evaluate radiograph anatomy classifiers"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Root seed; overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = "run")]
    pub out_dir: PathBuf,
    /// 1 = strictly sequential and reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Config override, e.g. `--set train.epochs=2` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Increase log verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flatten labels, drop rare classes, and split train/test.
    Prepare {
        /// Input manifest with `path,label_code` columns.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        min_count: Option<usize>,
        #[arg(long)]
        train_frac: Option<f64>,
    },
    /// Render a synthetic phantom corpus.
    SynthData {
        #[arg(long, default_value_t = 24)]
        classes: usize,
        #[arg(long, default_value_t = 60)]
        per_class: usize,
    },
    /// Train the CNN on a prepared manifest.
    TrainCnn {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate a CNN checkpoint on one split of a prepared manifest.
    EvalCnn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Downsample prepared images into pixel feature files (a linear baseline input).
    PixelFeatures {
        #[arg(long)]
        manifest: PathBuf,
        /// Side length of the downsampled image; side^2 is the feature dimension.
        #[arg(long, default_value_t = 64)]
        side: usize,
    },
    /// Train the one-vs-rest SVM, selecting C by cross-validation.
    TrainSvm {
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Score an SVM model on a feature file.
    EvalSvm {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Resolve the config (file, overrides, then flags) and validate it.
pub fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(global.config.as_deref(), &global.overrides)?;
    if let Some(seed) = global.seed {
        cfg.set_seed(seed);
    }
    if let Some(t) = global.threads {
        cfg.train.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    execute_with_cases(cli, crate::gradsuite::default_cases)
}

/// As [`execute`], with the gradient-check cases supplied by the caller.
pub fn execute_with_cases(cli: &Cli, cases: impl FnOnce() -> Vec<CheckCase>) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    let out = cli.global.out_dir.as_path();
    match &cli.command {
        Command::Prepare {
            manifest,
            min_count,
            train_frac,
        } => {
            let mut cfg = cfg;
            if let Some(m) = min_count {
                cfg.data.min_count = *m;
            }
            if let Some(f) = train_frac {
                cfg.data.train_frac = *f;
            }
            cfg.validate()?;
            cmd_prepare(manifest, out, &cfg)
        }
        Command::SynthData { classes, per_class } => cmd_synth_data(*classes, *per_class, cfg.seed, out),
        Command::TrainCnn { manifest } => {
            let manifest = manifest
                .clone()
                .or_else(|| cfg.data.manifest.clone())
                .ok_or_else(|| Error::Config("train-cnn needs --manifest or data.manifest".into()))?;
            cmd_train_cnn(&manifest, out, &cfg).map(|_| ())
        }
        Command::EvalCnn {
            checkpoint,
            manifest,
            split,
        } => cmd_eval_cnn(checkpoint, manifest, (*split).into(), out, &cfg).map(|_| ()),
        Command::PixelFeatures { manifest, side } => cmd_pixel_features(manifest, *side, out, &cfg),
        Command::TrainSvm { features } => {
            let features = features
                .clone()
                .or_else(|| cfg.data.features.clone())
                .ok_or_else(|| Error::Config("train-svm needs --features or data.features".into()))?;
            cmd_train_svm(&features, out, &cfg).map(|_| ())
        }
        Command::EvalSvm { model, features } => cmd_eval_svm(model, features).map(|_| ()),
        Command::Gradcheck => {
            if cmd_gradcheck(&cases())? {
                Ok(())
            } else {
                Err(Error::Numerical("gradient check exceeded its threshold".into()))
            }
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .try_init();
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_cases(args, crate::gradsuite::default_cases)
}

pub fn run_with_cases<I, T>(args: I, cases: impl FnOnce() -> Vec<CheckCase>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.global.verbose);
    match execute_with_cases(&cli, cases) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
