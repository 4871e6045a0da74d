use std::fs::{self, File};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ibn_cli::analyze::{analyze, AnalyzeOptions};
use ibn_cli::calibrate::{calibrate, read_rows};
use ibn_cli::output::to_toml;
use ibn_cli::{run_scenario, sweep, ScenarioFile, SweepParam};

/// Energy-balanced relay clustering for galvanic-coupled intra-body networks.
///
/// Set `IBNTOPO_QUIET=1` to suppress summaries on stdout.
#[derive(Debug, Parser)]
#[command(name = "ibntopo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster one scenario and write topology, trace and energy files.
    Run {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Record every step of every iteration in trace.toml.
        #[arg(long)]
        trace: bool,
    },
    /// Run a scenario across parameter values and seeds.
    Sweep {
        scenario: PathBuf,
        /// alpha, uniformity, threshold, eta1 or n; defaults to the [sweep] block.
        #[arg(long)]
        param: Option<SweepParam>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Number of consecutive seeds starting at the scenario seed.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Fit the channel model to measurements with header `path,length_cm,pt_mw`.
    Calibrate {
        measurements: PathBuf,
        /// Write the fitted block here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compare closed-form grid statistics with sampled ones.
    Analyze {
        /// Grid side, cm.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// `C1,C2` for the split-count distribution.
        #[arg(long, value_delimiter = ',')]
        split: Option<Vec<f64>>,
        /// Also report ICAP link lengths for this scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn quiet() -> bool {
    std::env::var("IBNTOPO_QUIET").is_ok_and(|v| !v.is_empty() && v != "0")
}

fn emit(body: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            trace,
        } => {
            let mut s = ScenarioFile::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let result = run_scenario(&s)?;
            result.write(&out, trace)?;
            if !quiet() {
                println!(
                    "K = {} (initial {}), {} iterations, {:?}; wrote {}",
                    result.outcome.state.k(),
                    result.grid.occupied,
                    result.outcome.iterations,
                    result.outcome.termination,
                    out.display()
                );
            }
        }
        Command::Sweep {
            scenario,
            param,
            values,
            seeds,
            out,
        } => {
            let s = ScenarioFile::load(&scenario)?;
            let block = s.sweep.clone();
            let param = match (param, &block) {
                (Some(p), _) => p,
                (None, Some(b)) => b.param,
                (None, None) => bail!("no --param given and the scenario has no [sweep] block"),
            };
            let values = match (values.is_empty(), &block) {
                (false, _) => values,
                (true, Some(b)) => b.values.clone(),
                (true, None) => bail!("no --values given and the scenario has no [sweep] block"),
            };
            let count = seeds.or(block.map(|b| b.seeds)).unwrap_or(1);
            let seed_list: Vec<u64> = (0..count).map(|i| s.seed + i).collect();
            let table = sweep(&s, param, &values, &seed_list);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("sweep.toml"), to_toml(&table)?)?;
            if !quiet() {
                print!("{table}");
            }
        }
        Command::Calibrate { measurements, out } => {
            let file = File::open(&measurements).with_context(|| format!("reading {}", measurements.display()))?;
            let rows = read_rows(file).with_context(|| format!("parsing {}", measurements.display()))?;
            let fit = calibrate(&rows, &Default::default())?;
            emit(&to_toml(&fit)?, out.as_ref())?;
        }
        Command::Analyze {
            lambda,
            samples,
            seed,
            points,
            split,
            scenario,
            out,
        } => {
            let scenario = scenario.map(|p| ScenarioFile::load(&p)).transpose()?;
            let opts = AnalyzeOptions {
                lambda,
                samples,
                seed,
                points,
                split: match split.as_deref() {
                    None => None,
                    Some(&[c1, c2]) => Some((c1, c2)),
                    Some(_) => bail!("--split takes exactly two values, C1,C2"),
                },
            };
            let report = analyze(&opts, scenario.as_ref())?;
            emit(&to_toml(&report)?, out.as_ref())?;
        }
    }
    Ok(())
}
