use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use irs_mec::channel::synthesize_seeded;
use irs_mec::orchestrator::run_bcd;
use irs_mec::sweep::{run_sweep, write_csv, Method, SweepSpec};
use irs_mec::{Error, ScenarioConfig, Scheme};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "irs-mec",
    version,
    about = "Min-max latency optimization for IRS-aided cell-free MEC"
)]
struct Cli {
    /// Progress messages on stderr (repeat for more).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and print a JSON summary.
    Solve {
        /// Scenario JSON; defaults are used for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "sdr")]
        scheme: Scheme,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the outer-iteration trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a parameter sweep and write one CSV.
    Sweep {
        /// Sweep spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Base scenario JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated override of the spec's schemes.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<Method>>,
        /// Overrides the number of realizations per grid point.
        #[arg(long)]
        seeds: Option<u64>,
        /// Directory for the CSV; the file is named after the swept parameter
        /// unless the spec names an output path.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Fill the wall_ms column.
        #[arg(long)]
        wall_time: bool,
    },
    /// Print the default scenario as JSON.
    Defaults,
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, Error> {
    let cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Writes one line to stdout; a closed pipe is not an error.
fn emit(line: &str) -> Result<(), Error> {
    match writeln!(io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Solve {
            config,
            scheme,
            seed,
            trace,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let channels = synthesize_seeded(&cfg)?;
            if cli.verbose > 0 {
                eprintln!("solving with {scheme}, seed {}", cfg.seed);
            }
            let out = run_bcd(&channels, &cfg, scheme)?;
            if let Some(path) = trace {
                out.trace.write_csv(fs::File::create(&path)?)?;
            }
            let summary = json!({
                "scheme": scheme.as_str(),
                "seed": cfg.seed,
                "t_ms": out.report.objective * 1e3,
                "per_wd_latency_ms": out.report.rows.iter().map(|r| r.total * 1e3).collect::<Vec<_>>(),
                "ell_bits": out.plan.offload_bits,
                "fe_cycles": out.plan.edge_cpu,
                "theta": out.theta.angles(),
                "iters": out.trace.rows.len(),
                "converged": out.trace.converged,
            });
            emit(&summary.to_string())?;
        }
        Command::Sweep {
            spec,
            config,
            schemes,
            seeds,
            out_dir,
            wall_time,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut spec = SweepSpec::load(&spec)?;
            if let Some(s) = schemes {
                spec.schemes = s;
            }
            if let Some(n) = seeds {
                spec.seeds = n;
            }
            spec.record_wall_time |= wall_time;
            spec.validate()?;
            let path = match &spec.output {
                Some(p) if p.is_absolute() => p.clone(),
                Some(p) => out_dir.join(p),
                None => out_dir.join(format!("{}.csv", spec.param)),
            };
            if cli.verbose > 0 {
                eprintln!(
                    "sweeping {} over {} values x {} schemes x {} seeds",
                    spec.param,
                    spec.values.len(),
                    spec.schemes.len(),
                    spec.seeds
                );
            }
            let rows = run_sweep(&spec, &cfg)?;
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            write_csv(&rows, fs::File::create(&path)?)?;
            emit(&json!({ "rows": rows.len(), "output": path.display().to_string() }).to_string())?;
        }
        Command::Defaults => emit(&ScenarioConfig::default().to_json_string()?)?,
    }
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension { .. } => "dimension",
        Error::InvalidConfig(_) => "invalid_config",
        Error::Geometry(_) => "geometry",
        Error::Index { .. } => "index",
        Error::Degenerate(_) => "degenerate",
        Error::Solver(_) => "solver",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.to_string(), "kind": error_kind(&e) }));
            ExitCode::FAILURE
        }
    }
}
