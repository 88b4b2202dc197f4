//! `simg`: parse, label, build, train, predict, acquire and evaluate
//! stereoelectronics-infused molecular graphs from the command line.

mod commands;
mod config;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Overrides, RunConfig};
use crate::files::Outputs;

#[derive(Parser)]
#[command(name = "simg", version, about = "Stereoelectronics-infused molecular graph pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Reject out-of-range label values (the default).
    #[arg(long, global = true, conflicts_with = "lenient")]
    strict: bool,
    /// Accept out-of-range label values with a warning.
    #[arg(long, global = true)]
    lenient: bool,
    /// Link-probability threshold τ for predicted interactions.
    #[arg(long, global = true, value_name = "TAU")]
    threshold: Option<f64>,
    /// Worker threads for ensemble training.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelFormat {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Validate MOLJ, NBOJ, NBOTXT and SIMG files.
    Parse {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also write the report to a file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic molecules.
    Generate {
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Peptide-like chains instead of small molecules.
        #[arg(long)]
        chains: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label molecules with the deterministic oracle.
    Oracle {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = LabelFormat::Json)]
        format: LabelFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Molecule plus labels to a SIMG file.
    BuildGraph {
        molecule: PathBuf,
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the lone-pair model.
    TrainLp {
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the multitask model.
    TrainMt {
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the SIMG* of a molecule.
    Predict {
        molecule: PathBuf,
        #[arg(long)]
        lp: PathBuf,
        #[arg(long)]
        mt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the active-learning loop over a molecule pool.
    AlRun {
        /// Pool state directory; created from `--molecules` when empty.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        molecules: Vec<PathBuf>,
        /// Molecules labeled by the oracle for per-round metrics.
        #[arg(long)]
        held_out: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score trained models on labeled data.
    Eval {
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        mt: PathBuf,
        #[arg(long)]
        lp: Option<PathBuf>,
        /// Also write per-molecule interaction-matrix differences.
        #[arg(long)]
        matrices: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Downstream benchmark of graph representations on the Σ e2 target.
    Bench {
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "mol-graph,simg-features-only,full-simg")]
        variants: Vec<String>,
        /// Models used to build the predicted graphs of `simg-star`.
        #[arg(long)]
        lp: Option<PathBuf>,
        #[arg(long)]
        mt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export evolver hidden-state trajectories.
    ExportTraj {
        /// A SIMG file, or a MOLJ file together with `--lp`.
        input: PathBuf,
        #[arg(long)]
        mt: PathBuf,
        #[arg(long)]
        lp: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIMG_LOG", "warn")).format_timestamp(None).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let overrides = Overrides {
        seed: g.seed,
        threshold: g.threshold,
        strict: g.strict,
        lenient: g.lenient,
        jobs: g.jobs,
    };
    let cfg = match RunConfig::load(g.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let mut outputs = Outputs::default();
    let explicit = g.config.is_some();
    match commands::run(cli.command, &cfg, explicit, &mut outputs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            outputs.rollback();
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
