//! `interference-lab`: simulate experiments, run estimators, benchmark them
//! and render reports.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 when a
//! computation fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use interference_core::harness::{self, BenchConfig, BenchReport, EstimatorSettings, ReportFormat};
use interference_core::sim::{simulate_experiment, SimConfig};
use interference_core::{io, Error, Method};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "interference-lab", version, about = "Total treatment effect estimation under network interference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one experiment and write it as a dataset directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one estimator on a dataset directory.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Estimator settings; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Monte Carlo comparison for one or more scenarios.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 uses every core. Output does not depend on it.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Render a saved bench report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
        format: FormatArg,
        /// Write to a file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Basic,
    Network,
    Cmp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Basic => Method::Basic,
            MethodArg::Network => Method::NetworkAware,
            MethodArg::Cmp => Method::Cmp,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Markdown,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Markdown => ReportFormat::Markdown,
        }
    }
}

/// Settings file for `estimate`: estimator settings plus the bootstrap seed.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct EstimateConfig {
    #[serde(flatten)]
    estimators: EstimatorSettings,
    seed: u64,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn seed_override() -> Result<Option<u64>, Failure> {
    harness::seed_override().map_err(Failure::from)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, out } => {
            let mut cfg: SimConfig = read_json(&config)?;
            if let Some(seed) = seed_override()? {
                cfg.seed = seed;
            }
            let experiment = simulate_experiment(&cfg)?;
            io::save_dataset(&experiment.dataset, &out)?;
        }
        Command::Estimate { data, method, config, out } => {
            let mut cfg: EstimateConfig = match config {
                Some(path) => read_json(&path)?,
                None => EstimateConfig::default(),
            };
            if let Some(seed) = seed_override()? {
                cfg.seed = seed;
            }
            let dataset = io::load_dataset(&data)?;
            let estimate = cfg.estimators.estimate(method.into(), &dataset, cfg.seed)?;
            let mut text = serde_json::to_string_pretty(&estimate).map_err(|e| Failure::Runtime(e.to_string()))?;
            text.push('\n');
            write_text(&out, &text)?;
        }
        Command::Bench { config, out, jobs } => {
            let cfg: BenchConfig = read_json(&config)?;
            let mut scenarios = cfg.into_scenarios();
            if let Some(seed) = seed_override()? {
                for s in &mut scenarios {
                    s.sim.seed = seed;
                }
            }
            let report = harness::run_bench(&scenarios, jobs)?;
            write_text(&out, &harness::render_report(&report, ReportFormat::Json)?)?;
        }
        Command::Report { input, format, out } => {
            let report: BenchReport = read_json(&input)?;
            report
                .check()
                .map_err(|e| Failure::Validation(format!("{}: {e}", input.display())))?;
            let text = harness::render_report(&report, format.into())?;
            match out {
                Some(path) => write_text(&path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
