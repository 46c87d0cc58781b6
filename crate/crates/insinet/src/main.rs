//! Change-detection pipeline CLI: synthetic data, training, evaluation,
//! robustness benchmarks, efficiency profiling and plots.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use insinet::commands;
use insinet::config::RunConfig;
use insinet::runs::RunDir;

#[derive(Parser)]
#[command(
    name = "insinet",
    about = "Bitemporal change detection with neighborhood context",
    version
)]
struct Cli {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the data seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Data directory for scenes, samples and manifests.
    #[arg(long, global = true, default_value = "data")]
    out: PathBuf,

    /// Run name under the run root (see INSINET_RUN_ROOT).
    #[arg(long, global = true, default_value = "default")]
    run: String,

    /// Run root directory; beats the INSINET_RUN_ROOT environment variable.
    #[arg(long, global = true)]
    run_root: Option<PathBuf>,

    /// Abort on any non-finite training loss (on by default; use
    /// --deterministic=false to skip diverged batches instead).
    #[arg(long, global = true, default_value_t = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic bitemporal scene pairs with change labels.
    Synth,
    /// Tile scenes into samples with precomputed neighborhood images.
    Prepare,
    /// Partition samples into train/val/test.
    Split,
    /// Neighborhood-ring benchmark (detection region vs ring band).
    BenchNeigh,
    /// Resolution-degradation benchmark over the test split.
    BenchScale,
    /// Misregistration benchmark (translated T2).
    BenchMisreg,
    /// Train the full model and write a checkpoint.
    Train,
    /// Evaluate the checkpoint on the test split, with size strata.
    Eval,
    /// Predict and stitch a full scene.
    Predict {
        /// Scene id from the manifest, e.g. scene_0.
        scene: String,
    },
    /// Cumulative component ablation, trained from scratch per row.
    Ablate,
    /// Parameter and multiply-accumulate counts.
    Profile,
    /// Finite-difference verification of the backward pass.
    Gradcheck,
    /// Render SVG charts for all reports present in the run directory.
    Plot,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
        cfg.network.init_seed = seed;
    }
    cfg.train.abort_on_divergence = cli.deterministic;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let run = RunDir::resolve(cli.run_root.as_deref(), &cli.run);
    match &cli.command {
        Command::Synth => {
            let entries = commands::synth(&cfg, &cli.out)?;
            println!("synthesized {} scenes under {}", entries.len(), cli.out.display());
        }
        Command::Prepare => {
            let entries = commands::prepare(&cfg, &cli.out)?;
            println!("prepared {} samples", entries.len());
        }
        Command::Split => {
            let file = commands::split(&cfg, &cli.out)?;
            println!(
                "split {} samples into {}/{}/{}",
                file.train.len() + file.val.len() + file.test.len(),
                file.train.len(),
                file.val.len(),
                file.test.len()
            );
        }
        Command::Train => {
            let result = commands::train_cmd(&cfg, &cli.out, &run)?;
            println!(
                "trained {} epochs, best val F1 {:.4} at epoch {}",
                result.epoch_losses.len(),
                result.best_val_f1,
                result.best_epoch
            );
        }
        Command::Eval => {
            let report = commands::eval_cmd(&cli.out, &run)?;
            println!(
                "test F1 {:.4} IoU {:.4} OA {:.4} (small {:.4} / medium {:.4} / large {:.4})",
                report.overall.f1,
                report.overall.iou,
                report.overall.overall_accuracy,
                report.small.f1,
                report.medium.f1,
                report.large.f1
            );
        }
        Command::Predict { scene } => {
            let report = commands::predict_cmd(&cfg, &cli.out, &run, scene)?;
            println!("{scene}: stitched F1 {:.4}", report.f1);
        }
        Command::BenchNeigh => {
            let report = commands::bench_neigh(&cfg, &cli.out, &run)?;
            for band in &report.bands {
                println!("band {:<8} mean F1 {:.4}", band.band, band.mean_f1);
            }
        }
        Command::BenchScale => {
            let report = commands::bench_scale(&cfg, &cli.out, &run)?;
            for (f, m) in &report.scores {
                println!("factor {:<3} F1 {:.4}", f, m.f1);
            }
        }
        Command::BenchMisreg => {
            let report = commands::bench_misreg(&cfg, &cli.out, &run)?;
            println!(
                "aligned F1 {:.4}; shift {:?} F1 {:.4}",
                report.aligned.f1, report.shift, report.shifted.f1
            );
        }
        Command::Ablate => {
            let rows = commands::ablate_cmd(&cfg, &cli.out, &run)?;
            for row in &rows {
                println!(
                    "{:<28} F1 {:.4} params {:>9} MACs {:>12} ok={}",
                    row.label, row.f1, row.params, row.macs, row.trained_ok
                );
            }
        }
        Command::Profile => {
            let report = commands::profile_cmd(&cfg, &run)?;
            println!(
                "params {} ({:.3} M), MACs {} ({:.3} G) at input {}",
                report.params,
                report.params as f64 / 1e6,
                report.macs,
                report.macs as f64 / 1e9,
                report.input_size
            );
        }
        Command::Gradcheck => {
            let seed = cli.seed.unwrap_or(cfg.data.seed);
            let report = commands::gradcheck_cmd(seed, &run)?;
            println!(
                "gradient check passed: {} coords, {} groups, max rel err {:.3e}",
                report.coords.len(),
                report.groups_covered,
                report.max_rel_err
            );
        }
        Command::Plot => {
            let made = commands::plot_cmd(&run)?;
            println!("wrote {}", made.join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with its own usage code (2) on bad arguments
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
