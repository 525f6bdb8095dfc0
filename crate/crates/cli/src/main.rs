//! `audit`: run the three audit levels over a CelebA-format dataset.
//!
//! Exit status is 0 on success, 2 for data, configuration or missing-input
//! errors, and 3 when a numerical procedure fails.

mod bundle;
mod config;
mod error;
mod fixture;
mod levels;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::bundle::Bundle;
use crate::config::AuditConfig;
use crate::error::{CliError, Result};

/// Worker thread count for the parallel parts of each level.
const THREADS_VAR: &str = "AUDIT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "audit", version, about = "Representational-bias audit of binary-attribute face datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Attribute correlations, average-linkage clustering, elbow curve and
    /// per-image cluster assignments
    Cluster(RunArgs),
    /// Cluster x sex label proportions, interaction logistic model and
    /// collinearity diagnostics
    Regress(RunArgs),
    /// Gradient-boosted label model with TreeSHAP attributions by sex
    Shap(RunArgs),
    /// Small CNN, subgroup accuracy / AP and Top-K averaged Grad-CAM maps
    Saliency(RunArgs),
    /// Every level in order; saliency is skipped without an image manifest
    All(RunArgs),
    /// Write a synthetic dataset with images and a ready-to-run config
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        rows: usize,
        /// Image side length in pixels
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u16).range(4..=256))]
        side: u16,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = raw.trim().parse().map_err(|_| CliError::Config {
        path: PathBuf::from(THREADS_VAR),
        message: format!("expected a thread count, got {raw:?}"),
    })?;
    // Fails only if a pool already exists, which cannot happen this early.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load_config(args: &RunArgs) -> Result<AuditConfig> {
    let mut config = AuditConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let base = args.config.parent().map(PathBuf::from).unwrap_or_default();
    config.resolve_paths(&base);
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn run(command: &Command) -> Result<(String, PathBuf, usize)> {
    let (name, args) = match command {
        Command::Fixture { out, seed, rows, side } => {
            let spec = fixture::FixtureSpec { rows: *rows, side: usize::from(*side), seed: *seed };
            let bundle = fixture::write_fixture(&spec, out)?;
            let files = bundle.finish("fixture", "", *seed)?;
            return Ok(("fixture".into(), out.clone(), files.len()));
        }
        Command::Cluster(a) => ("cluster", a),
        Command::Regress(a) => ("regress", a),
        Command::Shap(a) => ("shap", a),
        Command::Saliency(a) => ("saliency", a),
        Command::All(a) => ("all", a),
    };
    let config = load_config(args)?;
    let mut bundle = Bundle::create(&config.out_dir)?;
    match name {
        "cluster" => {
            let table = levels::load_table(&config)?;
            levels::run_cluster(&config, &table, &mut bundle)?;
        }
        "regress" => {
            let table = levels::load_table(&config)?;
            let assignments = levels::assignments_for(&config, &table, &mut bundle)?;
            levels::run_regress(&config, &table, &assignments, &mut bundle)?;
        }
        "shap" => {
            let table = levels::load_table(&config)?;
            levels::run_shap(&config, &table, &mut bundle)?;
        }
        "saliency" => levels::run_saliency(&config, &mut bundle)?,
        _ => {
            let table = levels::load_table(&config)?;
            let assignments = levels::assignments_for(&config, &table, &mut bundle)?;
            levels::run_regress(&config, &table, &assignments, &mut bundle)?;
            levels::run_shap(&config, &table, &mut bundle)?;
            if config.image_manifest.is_some() {
                levels::run_saliency(&config, &mut bundle)?;
            } else {
                eprintln!("audit: no image_manifest configured; skipping the saliency level");
            }
        }
    }
    let out = bundle.root().to_path_buf();
    let files = bundle.finish(name, &config.hash(), config.seed)?;
    Ok((name.to_owned(), out, files.len()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(&cli.command)) {
        Ok((name, out, n)) => {
            println!("audit {name}: wrote {n} files to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("audit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
