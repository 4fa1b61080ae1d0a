//! Thin command-line front end over the library commands.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rtfn::cli::{self, Overrides};

#[derive(Parser)]
#[command(name = "rtfn", version, about = "Time-series classification and clustering toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat key=value run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory holding the dataset files named in the config.
    #[arg(long, default_value = ".")]
    data: PathBuf,
    /// Output directory for manifest, loss CSV, and checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable per-channel z-normalization.
    #[arg(long)]
    no_normalize: bool,
    /// Override the attention-stack depth.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=3))]
    lstman_depth: Option<u64>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            no_normalize: self.no_normalize,
            lstman_depth: self.lstman_depth.map(|d| d as usize),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a supervised classifier and report test top-1 accuracy.
    Train(RunArgs),
    /// Train the autoencoder, cluster features with k-means, report the
    /// Rand index.
    Cluster(RunArgs),
    /// Verify every analytic gradient against finite differences.
    Gradcheck,
    /// Aggregate run manifests into a win/tie/lose leaderboard.
    Report {
        /// Glob pattern matching manifest files, e.g. "runs/*/manifest.txt".
        manifests: String,
        /// Report the mean accuracy gap to the best instead of the mean
        /// ordinal rank.
        #[arg(long)]
        gap: bool,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // Cap rayon's pool at the requested worker count before any kernel
    // runs; RTFN_THREADS defaults to 1.
    let threads = rtfn::threads();
    if threads > 1 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Train(args) => {
            cli::cmd_train(&args.config, &args.data, &args.out, &args.overrides())
        }
        Command::Cluster(args) => {
            cli::cmd_cluster(&args.config, &args.data, &args.out, &args.overrides())
        }
        Command::Gradcheck => cli::cmd_gradcheck(None),
        Command::Report { manifests, gap, csv } => {
            cli::cmd_report(manifests, *gap, csv.as_deref())
        }
    };
    ExitCode::from(code as u8)
}
