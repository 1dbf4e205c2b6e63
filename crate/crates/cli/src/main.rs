//! `lcl`: build similarity matrices, check curricula, run experiment suites
//! and summarize their results.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or input error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "lcl",
    version,
    about = "Label-similarity curriculum learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SimKind {
    Embedding,
    Attribute,
    Hierarchy,
}

#[derive(Subcommand)]
enum Command {
    /// Build a class-similarity matrix and print a spectrum summary.
    BuildSim {
        #[arg(long, value_enum)]
        kind: SimKind,
        /// Embedding/attribute vectors, or a `parent child` edge list.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reject negative cosines instead of clamping them to zero.
        #[arg(long)]
        no_clamp: bool,
        #[arg(long)]
        expected_dim: Option<usize>,
        #[arg(long, default_value_t = 0.8)]
        decay: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        /// Also write all eigenvalues as CSV.
        #[arg(long)]
        spectrum: Option<PathBuf>,
    },
    /// Initialize targets from a similarity matrix and check the curriculum
    /// axioms over a horizon.
    Verify {
        #[arg(
            long,
            required_unless_present = "identity",
            conflicts_with = "identity"
        )]
        sim: Option<PathBuf>,
        /// Use a C x C identity similarity instead of a file.
        #[arg(long)]
        identity: Option<usize>,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 500)]
        horizon: u64,
    },
    /// Run every experiment in a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Comma-separated seeds replacing every experiment's seed list.
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        /// Re-check the curriculum axioms inside every LCL trial.
        #[arg(long)]
        debug_verify_curriculum: bool,
    },
    /// Aggregate raw result CSVs and run the rank test.
    Report {
        #[arg(required = true)]
        raw: Vec<PathBuf>,
        /// Write aggregate.csv and ranks.txt here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate the synthetic hierarchical dataset.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        superclusters: usize,
        #[arg(long, default_value_t = 5)]
        classes_per_supercluster: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        train_per_class: usize,
        #[arg(long, default_value_t = 50)]
        test_per_class: usize,
        #[arg(long, default_value_t = 1.0)]
        intra_spread: f64,
        #[arg(long, default_value_t = 2.0)]
        inter_spread: f64,
        #[arg(long, default_value_t = 1.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::BuildSim {
            kind,
            input,
            out,
            no_clamp,
            expected_dim,
            decay,
            tol,
            max_iter,
            spectrum,
        } => commands::build_sim(&commands::BuildSimArgs {
            kind,
            input,
            out,
            clamp: !no_clamp,
            expected_dim,
            simrank: lcl_core::similarity::SimrankParams {
                decay,
                tol,
                max_iter,
            },
            spectrum,
        }),
        Command::Verify {
            sim,
            identity,
            epsilon,
            horizon,
        } => commands::verify(sim.as_deref(), identity, epsilon, horizon),
        Command::Run {
            config,
            jobs,
            out_dir,
            seed_list,
            debug_verify_curriculum,
        } => commands::run(&commands::RunArgs {
            config,
            jobs,
            out_dir,
            seed_list,
            debug_verify_curriculum,
        }),
        Command::Report { raw, out_dir } => commands::report(&raw, out_dir.as_deref()),
        Command::GenData {
            out_dir,
            superclusters,
            classes_per_supercluster,
            dim,
            train_per_class,
            test_per_class,
            intra_spread,
            inter_spread,
            noise_sigma,
            seed,
        } => commands::gen_data(
            &out_dir,
            &lcl_core::data::SyntheticSpec {
                num_superclusters: superclusters,
                classes_per_supercluster,
                dim,
                train_per_class,
                test_per_class,
                intra_spread,
                inter_spread,
                noise_sigma,
                seed,
            },
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
