//! `drl`: run robust-learning experiments from TOML configs.
//!
//! ```text
//! drl run configs/synthetic.toml --seed 7 --out results/
//! drl cv configs/synthetic.toml
//! drl plotdata results/ > long.csv
//! ```
//!
//! The number of worker threads is read from `DRL_THREADS` (default 1).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use drl_core::erm::CvConfig;
use drl_core::harness::{self, ExperimentConfig, ExperimentOutcome, Overrides};
use drl_core::Method;

#[derive(Parser)]
#[command(name = "drl", version, about = "Distributionally robust learning experiments")]
#[command(after_help = "Set DRL_THREADS to run seeds and methods in parallel.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method over all seeds and write traces plus a summary.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run only the cross-validated ERM baseline of a config.
    Cv {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Merge the trace files of an output directory into one long-format CSV.
    Plotdata {
        dir: PathBuf,
        /// Output file; defaults to stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OverrideArgs {
    /// Base seed; seed s of the run uses base + s.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ambiguity radius applied to every method.
    #[arg(long)]
    rho: Option<f64>,
    /// Keep only these methods (repeatable): gssg, pssg, fsg, sgd.
    #[arg(long = "method", value_parser = parse_method)]
    methods: Vec<Method>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: drl_core::DrlError| e.to_string())
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            output_dir: self.out.clone(),
            rho: self.rho,
            methods: self.methods.clone(),
        }
    }
}

fn load(config: &Path, o: &OverrideArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(config)
        .with_context(|| format!("reading config {}", config.display()))?;
    cfg.apply(&o.to_overrides());
    Ok(cfg)
}

fn report(outcome: &ExperimentOutcome) {
    println!(
        "{:<12} {:>14} {:>14} {:>12} {:>16}",
        "method", "misclass", "ci95", "wall_s", "samples"
    );
    for r in &outcome.summary {
        println!(
            "{:<12} {:>14.6} {:>14.6} {:>12.4} {:>16.0}",
            r.method, r.mean_misclass, r.ci95_halfwidth, r.mean_wall_s, r.mean_cumulative_samples
        );
    }
    for r in outcome.runs.iter().filter(|r| !r.ok()) {
        eprintln!(
            "warning: {} seed {} failed: {}",
            r.method,
            r.seed,
            r.error.as_deref().unwrap_or("")
        );
    }
    println!("results written to {}", outcome.output_dir.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            if cfg.methods.is_empty() && cfg.cv.is_none() {
                bail!("no methods left to run");
            }
            report(&harness::run_experiment(&cfg)?);
        }
        Command::Cv { config, overrides } => {
            let mut cfg = load(&config, &overrides)?;
            cfg.methods.clear();
            cfg.cv.get_or_insert_with(CvConfig::default);
            report(&harness::run_experiment(&cfg)?);
        }
        Command::Plotdata { dir, out } => {
            let files = harness::collect_trace_files(&dir)
                .with_context(|| format!("listing traces in {}", dir.display()))?;
            let rep = match &out {
                Some(path) => {
                    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                    harness::emit_plot_data(&files, BufWriter::new(f))?
                }
                None => harness::emit_plot_data(&files, io::stdout().lock())?,
            };
            for m in &rep.missing {
                eprintln!("missing trace: {}", m.display());
            }
            eprintln!("{} rows from {} traces", rep.rows, files.len() - rep.missing.len());
            io::stdout().flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
