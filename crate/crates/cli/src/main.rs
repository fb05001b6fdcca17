use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cran_core::harness::{self, AlphaSpec, Direction, ExperimentConfig, ModeSelection};

#[derive(Parser)]
#[command(name = "cran-sim", version, about = "Cloud RAN backhaul compression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Uplink run at one fairness exponent.
    Uplink(RunArgs),
    /// Downlink run at one fairness exponent.
    Downlink(RunArgs),
    /// Fairness sweep; the direction comes from the config or preset.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Fairness exponent, overriding the config.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated fairness exponents, overriding the config.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: ul-cdf, ul-sweep, dl-sweep, dl-sweep-small.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    drops: Option<usize>,
    /// p2p, mt or both.
    #[arg(long)]
    mode: Option<ModeSelection>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, env = harness::OUTPUT_DIR_ENV)]
    out: Option<PathBuf>,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s {
        "uplink" | "ul" => Ok(Direction::Uplink),
        "downlink" | "dl" => Ok(Direction::Downlink),
        _ => Err(format!("expected uplink or downlink, got '{s}'")),
    }
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(name)) => harness::preset(name)?,
            (None, None) => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.drops {
            cfg.drops = d;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(harness::default_output_dir)
    }
}

fn run(args: RunArgs, direction: Direction) -> Result<()> {
    let mut cfg = args.common.load()?;
    cfg.direction = direction;
    if let Some(a) = args.alpha {
        cfg.alpha = AlphaSpec::Single(a);
    }
    if let AlphaSpec::Sweep(v) = &cfg.alpha {
        if v.len() > 1 {
            bail!("the configuration lists {} fairness exponents; use the sweep subcommand or --alpha", v.len());
        }
    }
    cfg.validate()?;
    let report = harness::run_experiment(&cfg)?;
    let dir = args.common.out_dir();
    let files = harness::write_report(&report, &dir).with_context(|| format!("writing results to {}", dir.display()))?;
    print!("{}", harness::summary_text(&report));
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(a) = args.alphas {
        cfg.alpha = AlphaSpec::Sweep(a);
    }
    if let Some(d) = args.direction {
        cfg.direction = d;
    }
    cfg.validate()?;
    let result = harness::alpha_sweep(&cfg)?;
    let dir = args.common.out_dir();
    let files = harness::write_sweep(&result, &dir).with_context(|| format!("writing results to {}", dir.display()))?;
    print!("{}", harness::sweep_plot_data(&result));
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Uplink(a) => run(a, Direction::Uplink),
        Command::Downlink(a) => run(a, Direction::Downlink),
        Command::Sweep(a) => sweep(a),
    }
}
