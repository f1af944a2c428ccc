//! `dronecov`: train, meta-train, and inspect multi-drone coverage
//! experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime numeric error,
//! 4 oracle enumeration cap exceeded.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dronecov_cli::plot::{emit_plot_data, Figure};
use dronecov_cli::runner;
use dronecov_cli::spec::{preset_files, Algo, Experiment};
use dronecov_core::presets;
use dronecov_core::sim::DEFAULT_ENUMERATION_CAP;

#[derive(Parser)]
#[command(
    name = "dronecov",
    version,
    about = "Cooperative drone coverage experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SpecArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Dotted-path config overrides, e.g. `train.max_iterations=500`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a preset world file and a starter experiment spec.
    GenWorld {
        /// One of: paper-tiny, coordination, paper-like.
        #[arg(long)]
        preset: String,
        /// Fleet size for paper-like.
        #[arg(long)]
        dbs: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Train the spec's algorithm across its seeds.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Replace the spec's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads across runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Seed of the shared training realization.
        #[arg(long, default_value_t = runner::DEFAULT_TASK_SEED)]
        task_seed: u64,
    },
    /// Meta-train an initialization over the spec's task distribution.
    MetaTrain {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Compare adaptation speed of random, pre-trained, and meta inits.
    EvalAdaptation {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Brute-force the optimal joint trajectory of the spec's realization.
    Oracle {
        #[command(flatten)]
        spec: SpecArgs,
        /// Seed of the realization to solve.
        #[arg(long, default_value_t = runner::DEFAULT_TASK_SEED)]
        seed: u64,
        /// Joint-trajectory enumeration cap.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
        cap: u128,
    },
    /// Run several algorithms and print a summary table.
    Compare {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Comma-separated algorithms (vdrl, iac, oracle).
        #[arg(long, default_value = "vdrl,iac,oracle")]
        algos: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value_t = runner::DEFAULT_TASK_SEED)]
        task_seed: u64,
    },
    /// Extract plot-ready CSV series from stored metrics.
    PlotData {
        /// Directory holding `<run>/metrics.csv` subdirectories.
        #[arg(long)]
        metrics: PathBuf,
        /// fig-4, fig-5, fig-7, fig-9, or fig-10.
        #[arg(long)]
        figure: String,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<dronecov_core::Error>() {
        Some(dronecov_core::Error::CapExceeded { .. }) => 4,
        Some(dronecov_core::Error::Numeric(_)) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld { preset, dbs, out } => {
            let p = presets::by_name(&preset, dbs)
                .with_context(|| format!("unknown preset {preset:?}"))?;
            std::fs::create_dir_all(&out)?;
            let (world, spec) = preset_files(&p);
            let world_path = out.join(format!("{}.world.toml", p.name));
            let spec_path = out.join(format!("{}.exp.toml", p.name));
            std::fs::write(&world_path, world)?;
            std::fs::write(&spec_path, spec)?;
            println!("wrote {}", world_path.display());
            println!("wrote {}", spec_path.display());
        }
        Command::Train {
            spec,
            out,
            seed,
            jobs,
            task_seed,
        } => {
            let mut exp = Experiment::load(&spec.spec, &spec.overrides)?;
            if let Some(seed) = seed {
                exp.seeds = vec![seed];
            }
            let algo = exp.algo;
            if !matches!(algo, Algo::Vdrl | Algo::Iac | Algo::Pretrain) {
                bail!("`train` handles vdrl, iac, or pretrain specs; use the {algo} subcommand");
            }
            let summaries = runner::run_training(&exp, algo, &out, jobs, task_seed)?;
            for s in &summaries {
                println!(
                    "{}: {} iterations, converged at {}, final G {:.4}",
                    s.run_id,
                    s.iterations,
                    s.converged_at
                        .map(|i| i.to_string())
                        .unwrap_or_else(|| "-".into()),
                    s.final_utility
                );
            }
        }
        Command::MetaTrain { spec, out } => {
            let exp = Experiment::load(&spec.spec, &spec.overrides)?;
            let ckpt = runner::run_meta_train(&exp, &out)?;
            println!("meta-trained initialization at {}", ckpt.display());
        }
        Command::EvalAdaptation { spec, out } => {
            let exp = Experiment::load(&spec.spec, &spec.overrides)?;
            let text = runner::run_eval_adaptation(&exp, &out)?;
            print!("{text}");
        }
        Command::Oracle { spec, seed, cap } => {
            let exp = Experiment::load(&spec.spec, &spec.overrides)?;
            let (search, z) = runner::run_oracle(&exp, seed, cap)?;
            println!("active users: {}", z.active_count());
            println!("optimal team utility G* = {}", search.best_utility);
            println!("maximizers: {}", search.maximizers.len());
            println!("one optimal joint trajectory: {}", search.maximizers[0]);
            println!(
                "feasible evaluated: {}, infeasible skipped: {}",
                search.evaluated, search.infeasible
            );
        }
        Command::Compare {
            spec,
            out,
            algos,
            jobs,
            task_seed,
        } => {
            let exp = Experiment::load(&spec.spec, &spec.overrides)?;
            let algos: Vec<Algo> = algos
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_>>()?;
            let table = runner::run_compare(&exp, &algos, &out, jobs, task_seed)?;
            print!("{table}");
        }
        Command::PlotData {
            metrics,
            figure,
            out,
        } => {
            let figure: Figure = figure.parse()?;
            let written = emit_plot_data(&metrics, figure, &out)?;
            for name in &written {
                println!("wrote {}", out.join(name).display());
            }
        }
    }
    Ok(())
}
