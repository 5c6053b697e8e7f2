use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use specnorm_cli::config::DataSource;
use specnorm_cli::pipeline::load_sample;
use specnorm_cli::report::{error_json, to_json};
use specnorm_cli::{parse_config, run_estimate, run_measure, run_pipeline, run_quantiles, write_csv, Failure, Stage};

/// Spectral deviation measures and self-normalized inference for functional time series.
#[derive(Parser, Debug)]
#[command(name = "specnorm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Caps the number of worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Output file; standard output when absent.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Estimate the spectral operator and summarize it per cell.
    Estimate,
    /// Evaluate the configured measure with its sequential path.
    Measure,
    /// Confidence interval and, if `delta` is set, the relevant-deviation test.
    Infer,
    /// Order selection for the configured share measure (needs `nu`).
    SelectD,
    /// Build or reuse the pivot quantile table of the configured measure.
    Quantiles,
    /// Draw the configured process and write it as CSV.
    Simulate,
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::data(Stage::Output, e.to_string());
    match out {
        Some(path) => std::fs::write(path, text).map_err(io),
        None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(io),
    }
}

fn run(cli: &Cli) -> Result<(String, Option<PathBuf>), Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::config(Stage::Config, "--config PATH is required"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(Stage::Config, format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone());
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::config(Stage::Config, "--threads must be at least 1"));
        }
        // a pool may already exist when embedded; the cap is then advisory
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cache = std::env::var_os("SPECNORM_CACHE_DIR").map(PathBuf::from);
    let cache = cache.as_deref();

    let text = match cli.command {
        Command::Estimate => to_json(&run_estimate(&cfg)?),
        Command::Measure => to_json(&run_measure(&cfg)?),
        Command::Infer => to_json(&run_pipeline(&cfg, cache)?),
        Command::SelectD => {
            if cfg.nu.is_none() {
                return Err(Failure::config(Stage::Config, "select-d requires 'nu'"));
            }
            to_json(&run_pipeline(&cfg, cache)?)
        }
        Command::Quantiles => to_json(&run_quantiles(&cfg, cache)?),
        Command::Simulate => {
            if !matches!(cfg.source, DataSource::Simulated(_)) {
                return Err(Failure::config(Stage::Config, "simulate requires a 'process' configuration"));
            }
            let sample = load_sample(&cfg)?;
            let mut buf = Vec::new();
            write_csv(&sample, &mut buf).map_err(|e| Failure::data(Stage::Output, e.to_string()))?;
            String::from_utf8(buf).expect("CSV output is ASCII")
        }
    };
    Ok((text, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|(text, out)| write_output(out.as_deref(), &text));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("specnorm: {f}");
            let _ = write_output(cli.out.as_deref(), &error_json(&f));
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
