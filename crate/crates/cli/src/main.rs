use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use stokes_ocp::experiment::{self, ExperimentConfig, Scheme};
use stokes_ocp::fe_spaces::ElementFamily;

#[derive(Parser)]
#[command(name = "stokes-ocp", version, about = "Convergence studies for Stokes optimal control with point data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence study and write CSV, table and plot files.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON configuration; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    example: Option<u8>,
    /// fd (piecewise constant controls) or vd (variational discretization)
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Inclusive level range, e.g. 2:5
    #[arg(long)]
    levels: Option<String>,
    /// th (Taylor-Hood) or mini
    #[arg(long)]
    family: Option<ElementFamily>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
}

fn parse_levels(s: &str) -> anyhow::Result<(usize, usize)> {
    let (a, b) = s.split_once(':').context("levels must look like <min>:<max>")?;
    let a: usize = a.trim().parse().context("invalid minimum level")?;
    let b: usize = b.trim().parse().context("invalid maximum level")?;
    if a > b {
        bail!("minimum level {a} exceeds maximum level {b}");
    }
    Ok((a, b))
}

fn build_config(args: RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(e) = args.example {
        cfg.example = e;
    }
    if let Some(s) = args.scheme {
        cfg.scheme = s;
    }
    if let Some(l) = &args.levels {
        (cfg.min_level, cfg.max_level) = parse_levels(l)?;
    }
    if let Some(f) = args.family {
        cfg.family = f;
    }
    if let Some(o) = args.out {
        cfg.output_dir = Some(o);
    }
    if args.lambda.is_some() {
        cfg.overrides.lambda = args.lambda;
    }
    if args.alpha.is_some() {
        cfg.overrides.alpha = args.alpha;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => build_config(args).and_then(|cfg| {
            let out = experiment::run(&cfg)?;
            print!("{}", experiment::format_table(&out.report));
            if let Some(dir) = &cfg.output_dir {
                eprintln!("wrote {}/{}.csv", dir.display(), cfg.stem());
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
