use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use log::{error, info, warn};

use qgml_core::config::parse_config_document;
use qgml_core::pipeline::{parse_duration_days, Mode, Pipeline, StageArgs};
use qgml_core::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Stage {
    Truth,
    Obs,
    Assimilate,
    Dataset,
    Train,
    Skill,
    Report,
    /// Every stage in order, including hybrid and oracle cycling.
    All,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Truth => "truth",
            Stage::Obs => "obs",
            Stage::Assimilate => "assimilate",
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Skill => "skill",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Original,
    Hybrid,
    Oracle,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Original => Mode::Original,
            ModeArg::Hybrid => Mode::Hybrid,
            ModeArg::Oracle => Mode::Oracle,
        }
    }
}

/// Two-layer QG twin experiments: truth runs, 4D-Var cycling, neural
/// model-error correction and forecast skill.
#[derive(Debug, Parser)]
#[command(name = "qgml", version)]
struct Cli {
    #[arg(value_enum)]
    stage: Stage,

    /// Experiment config (JSON), or a stage manifest to rerun its config.
    #[arg(long)]
    config: PathBuf,

    /// Model cycled by `assimilate`.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    /// Correction period, e.g. `1d` or `3h`.
    #[arg(long)]
    tau: Option<String>,

    /// Output directory, overriding `paths.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Master seed, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,

    /// Trained weights for hybrid runs, overriding `paths.weights`.
    #[arg(long)]
    weights: Option<PathBuf>,
}

fn threads() -> Result<Option<usize>, String> {
    match std::env::var("QGML_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("QGML_THREADS must be a positive integer, got {v:?}")),
        },
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidParameter { .. } | Error::NotStepMultiple { .. } => 2,
        Error::Missing { .. } => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let text = std::fs::read_to_string(&cli.config)?;
    let (mut cfg, warnings) = parse_config_document(&text)?;
    let checked = cfg.validate()?;
    for w in warnings.iter().filter(|w| !checked.contains(w)) {
        warn!("{w}");
    }
    if let Some(out) = cli.out {
        cfg.paths.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let args = StageArgs {
        mode: cli.mode.map(Mode::from),
        tau_days: cli.tau.as_deref().map(parse_duration_days).transpose()?,
        weights: cli.weights,
    };
    let pipeline = Pipeline::new(cfg)?;
    match cli.stage {
        Stage::All => {
            let manifests = pipeline.run_all()?;
            info!("{} stages written to {}", manifests.len(), pipeline.out_dir().display());
        }
        stage => {
            let m = pipeline.run(stage.name(), &args)?;
            info!("{}: {} artifacts in {}", m.stage, m.outputs.len(), pipeline.out_dir().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match threads() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                error!("{e}");
                return ExitCode::from(1);
            }
        }
        Ok(None) => {}
        Err(e) => {
            error!("{e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
