mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "tipseg",
    version,
    about = "Instrument part segmentation with kinematics priors"
)]
struct Cli {
    /// Suppress progress output on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, default_value = "tipseg-out")]
    pub out: PathBuf,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub arm: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub feature_channels: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataFlags {
    /// Dataset directory from `gen-data`; generated under `<out>/data` when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Family count (first N of A..E) or a list such as `A,C`.
    #[arg(long)]
    pub families: Option<String>,
    #[arg(long)]
    pub per_family: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a part-label mask from a mesh and a kinematics log.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        kinematics: Option<PathBuf>,
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        /// Frame time; the nearest kinematics sample is used.
        #[arg(long)]
        time: Option<f64>,
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long)]
        decimation: Option<usize>,
        /// Also write a false-color PNG.
        #[arg(long)]
        png: bool,
    },
    /// Time render settings against the full-resolution reference.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// OBJ mesh; the built-in instrument is used when absent.
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Tessellation detail of the built-in instrument.
        #[arg(long)]
        detail: Option<usize>,
        #[arg(long)]
        kinematics: Option<PathBuf>,
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        /// Comma-separated settings such as `s2_r10,s1_r10`.
        #[arg(long)]
        configs: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Generate a synthetic multi-family dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        families: Option<String>,
        #[arg(long)]
        per_family: Option<usize>,
        #[arg(long)]
        data_seed: Option<u64>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Train one model and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        /// Families excluded from training and used for the validation column.
        #[arg(long)]
        holdout: Option<String>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        data: DataFlags,
        /// Number of prediction/ground-truth PNG pairs to write.
        #[arg(long)]
        overlays: Option<usize>,
    },
    /// Leave-one-family-out cross-validation of one arm.
    Crossval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        timing_frames: Option<usize>,
    },
    /// Cross-validate several arms under several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        /// Comma-separated arms, e.g. `VIS,FULL`.
        #[arg(long)]
        arms: Option<String>,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        timing_frames: Option<usize>,
    },
}

/// Misuse that clap cannot catch.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use tipseg::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<E>() {
        Some(E::Shape { .. } | E::NonFinite(_) | E::NonFiniteLoss { .. } | E::ArmInput(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let log = commands::Log { quiet: cli.quiet };
    let result = match cli.command {
        Command::Render {
            common,
            mesh,
            kinematics,
            intrinsics,
            time,
            scale,
            decimation,
            png,
        } => commands::render(
            &common, mesh, kinematics, intrinsics, time, scale, decimation, png, &log,
        ),
        Command::Benchmark {
            common,
            mesh,
            detail,
            kinematics,
            intrinsics,
            configs,
            repeats,
        } => commands::benchmark(
            &common, mesh, detail, kinematics, intrinsics, configs, repeats, &log,
        ),
        Command::GenData {
            common,
            families,
            per_family,
            data_seed,
            image_size,
        } => commands::gen_data(&common, families, per_family, data_seed, image_size, &log),
        Command::Train {
            common,
            model,
            data,
            holdout,
        } => commands::train(&common, &model, &data, holdout, &log),
        Command::Eval {
            common,
            checkpoint,
            data,
            overlays,
        } => commands::eval(&common, checkpoint, &data, overlays, &log),
        Command::Crossval {
            common,
            model,
            data,
            timing_frames,
        } => commands::crossval(&common, &model, &data, timing_frames, &log),
        Command::Ablate {
            common,
            model,
            data,
            arms,
            seeds,
            timing_frames,
        } => commands::ablate(&common, &model, &data, arms, seeds, timing_frames, &log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
