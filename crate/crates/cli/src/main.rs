//! `curvefeat`: curvelet transforms, feature enhancement, toy training and
//! reporting from the command line.
//!
//! Exit status: 0 success, 1 bad arguments or configuration, 2 unreadable
//! or unwritable files, 3 invalid transform geometry, 4 checkpoint that does
//! not fit the input, 5 evaluation data with no items or a single class.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use io::{fail, Class};

const COMMANDS: &[&str] = &["transform", "reconstruct", "enhance", "train", "eval", "gates-report"];

#[derive(Debug, Parser)]
#[command(name = "curvefeat", version, about = "Curvelet feature enhancement tools")]
#[command(args_override_self = true)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "CURVEFEAT_THREADS")]
    threads: Option<usize>,
    /// key=value file whose entries act as defaults for the other flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GeometryArgs {
    /// Number of scales, coarsest included.
    #[arg(long, default_value_t = curvefeat::curvelet::DEFAULT_NUM_SCALES)]
    pub scales: usize,
    /// Angles at the second-coarsest scale (a multiple of 4).
    #[arg(long, default_value_t = curvefeat::curvelet::DEFAULT_ANGLES)]
    pub angles: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SyntheticArgs {
    /// Number of synthetic images (half real, half doctored).
    #[arg(long, default_value_t = 400)]
    pub samples: usize,
    /// Doctored band 1..=3, or 0 to draw one per pair.
    #[arg(long, default_value_t = 2)]
    pub doctored_band: usize,
    /// Coefficient multiplier inside the doctored band.
    #[arg(long, default_value_t = 1.5)]
    pub factor: f64,
    /// Seed of the generator; defaults to --seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RegArgs {
    #[arg(long, default_value_t = 0.2)]
    pub l_min: f64,
    #[arg(long, default_value_t = 0.5)]
    pub l_max: f64,
    #[arg(long, default_value_t = 0.25)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_cls: f64,
    /// Target total of active wedges over the three colour channels.
    #[arg(long, default_value_t = 63.0)]
    pub m_total: f64,
    #[arg(long, default_value_t = 2.5e-4)]
    pub l1_base: f64,
    #[arg(long, default_value_t = 1.25e-4)]
    pub l1_increment: f64,
    /// Epochs between increments of the sparsity weight.
    #[arg(long, default_value_t = 5)]
    pub l1_every: usize,
    /// Fixed sparsity weight; replaces the stepped schedule.
    #[arg(long)]
    pub l1_constant: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forward transform of each colour channel into a coefficient archive.
    Transform {
        input: PathBuf,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inverts a coefficient archive. A `.png` output is quantized to 8 bits;
    /// any other extension gets an f64 tensor record.
    Reconstruct {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes the 12-map enhanced stack as an f32 tensor record.
    Enhance {
        input: PathBuf,
        /// Trained parameters; neutral parameters when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the toy detector on synthetic data.
    Train {
        /// Output directory for checkpoint.cft and history.csv.
        #[arg(long)]
        out: PathBuf,
        /// Starting parameters; geometry and epoch count come from it.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        scales: usize,
        #[arg(long, default_value_t = curvefeat::curvelet::DEFAULT_ANGLES)]
        angles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.002)]
        lr: f64,
        #[arg(long, default_value_t = 1e-4)]
        weight_decay: f64,
        #[arg(long, default_value_t = curvefeat::wedge_gate::DEFAULT_HIDDEN)]
        hidden: usize,
        /// Share of image pairs held out for the final test report.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[command(flatten)]
        data: SyntheticArgs,
        #[command(flatten)]
        reg: RegArgs,
    },
    /// Prints accuracy and AUC.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// CSV of `path,label[,group]` lines.
        #[arg(long, conflicts_with_all = ["scores", "synthetic"])]
        list: Option<PathBuf>,
        /// CSV of `group,score,label` lines; no model is run.
        #[arg(long, conflicts_with = "synthetic")]
        scores: Option<PathBuf>,
        /// Evaluate on this many synthetic images.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 2)]
        doctored_band: usize,
        #[arg(long, default_value_t = 1.5)]
        factor: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Optional CSV of per-item scores.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-wedge gate activity as CSV and PGM heatmaps.
    GatesReport {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "synthetic")]
        list: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 2)]
        doctored_band: usize,
        #[arg(long, default_value_t = 1.5)]
        factor: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Geometry when no checkpoint is given.
        #[command(flatten)]
        geometry: GeometryArgs,
        /// Image side for synthetic data when no checkpoint is given.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> io::CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| fail(Class::Other, e))?;
    }
    match cli.command {
        Command::Transform { input, geometry, out } => commands::transform(&input, &geometry, &out),
        Command::Reconstruct { input, out } => commands::reconstruct(&input, &out),
        Command::Enhance {
            input,
            checkpoint,
            geometry,
            out,
        } => commands::enhance(&input, checkpoint.as_deref(), &geometry, &out),
        Command::Train {
            out,
            checkpoint,
            size,
            scales,
            angles,
            seed,
            epochs,
            batch_size,
            lr,
            weight_decay,
            hidden,
            test_fraction,
            data,
            reg,
        } => commands::train(&commands::TrainArgs {
            out,
            checkpoint,
            size,
            scales,
            angles,
            seed,
            epochs,
            batch_size,
            lr,
            weight_decay,
            hidden,
            test_fraction,
            data,
            reg,
        }),
        Command::Eval {
            checkpoint,
            list,
            scores,
            synthetic,
            doctored_band,
            factor,
            seed,
            threshold,
            out,
        } => {
            let source = commands::Source::pick(list, synthetic, doctored_band, factor, seed);
            commands::eval(
                checkpoint.as_deref(),
                scores.as_deref(),
                source,
                threshold,
                out.as_deref(),
            )
        }
        Command::GatesReport {
            checkpoint,
            list,
            synthetic,
            doctored_band,
            factor,
            seed,
            geometry,
            size,
            out,
        } => {
            let source = commands::Source::pick(list, synthetic, doctored_band, factor, seed);
            commands::gates_report(checkpoint.as_deref(), source, &geometry, size, &out)
        }
    }
}

fn main() -> ExitCode {
    let args = match config::merge(std::env::args().collect(), COMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(Class::Io as u8);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Class::Other as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.class as u8)
        }
    }
}
