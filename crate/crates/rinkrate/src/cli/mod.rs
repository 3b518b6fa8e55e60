//! Command-line front end.
//!
//! Eight subcommands tie the pipeline together: `summarize`, `fit`,
//! `compare`, `mvp`, `pairs`, `gnet`, `simulate`, and `validate`. Every
//! command reads one TOML configuration file plus a few overriding flags,
//! writes CSV/JSON outputs under a run directory, and finishes the run with
//! a `manifest.json` whose embedded config and digests make the run exactly
//! reproducible. Failures print one machine-readable JSON line to stderr and
//! exit 1 (usage), 2 (bad data), or 3 (numerical trouble).

mod commands;
mod config;

pub use config::{sha256_file, FileRecord, Manifest, RunConfig};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "rinkrate",
    version,
    about = "Competing-hazards lineup ratings: summarize, fit, compare, and simulate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding [run] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding [run] out.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads, overriding [run] threads (0 keeps the default width).
    #[arg(long)]
    threads: Option<usize>,
    /// Events CSV, overriding [inputs] events.
    #[arg(long, value_name = "PATH")]
    events: Option<PathBuf>,
    /// Roster CSV, overriding [inputs] roster.
    #[arg(long, value_name = "PATH")]
    roster: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tally goal/censoring counts and percentages for an event log.
    Summarize {
        #[command(flatten)]
        common: CommonArgs,
        /// Summarize direct counts instead of a file.
        #[arg(long, value_name = "AWAY,NONE,HOME", conflicts_with = "events")]
        counts: Option<String>,
    },
    /// Fit the rating model by penalized MLE or posterior sampling.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit score-only, teams, and players models on one split and compare
    /// held-out deviance.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Tighten the player penalty until each team's six MVP/LVP cells fill.
    Mvp {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Select pair chemistries on a cross-validated penalty path.
    Pairs {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Turn a coefficient table and ice time into goal contributions.
    Gnet {
        #[command(flatten)]
        common: CommonArgs,
        /// Coefficient CSV (label, omega, delta, seconds), overriding
        /// [inputs] coefficients.
        #[arg(long, value_name = "PATH")]
        coefficients: Option<PathBuf>,
    },
    /// Fabricate a synthetic league with known true ratings.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the statistical self-checks; nonzero exit when any fails.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn resolve(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.run.out = Some(out.clone());
    }
    if let Some(threads) = common.threads {
        cfg.run.threads = threads;
    }
    if let Some(events) = &common.events {
        cfg.inputs.events = Some(events.clone());
    }
    if let Some(roster) = &common.roster {
        cfg.inputs.roster = Some(roster.clone());
    }
    Ok(cfg)
}

/// Pin the global worker pool width once; later calls with the same or a
/// different width are ignored, matching rayon's first-wins semantics.
fn init_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn parse_counts(raw: &str) -> Result<(u64, u64, u64)> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Usage(format!(
            "--counts needs three comma-separated tallies (away,none,home), got '{raw}'"
        )));
    }
    let mut vals = [0u64; 3];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| Error::Usage(format!("bad count '{part}' in --counts '{raw}'")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Summarize { common, counts } => {
            let cfg = resolve(&common)?;
            init_threads(cfg.run.threads);
            let counts = counts.as_deref().map(parse_counts).transpose()?;
            commands::cmd_summarize(&cfg, counts)
        }
        Command::Fit { common } => {
            let cfg = resolve(&common)?;
            init_threads(cfg.run.threads);
            commands::cmd_fit(&cfg)
        }
        Command::Compare { common } => {
            let cfg = resolve(&common)?;
            init_threads(cfg.run.threads);
            commands::cmd_compare(&cfg)
        }
        Command::Mvp { common } => {
            let cfg = resolve(&common)?;
            init_threads(cfg.run.threads);
            commands::cmd_mvp(&cfg)
        }
        Command::Pairs { common } => {
            let cfg = resolve(&common)?;
            init_threads(cfg.run.threads);
            commands::cmd_pairs(&cfg)
        }
        Command::Gnet { common, coefficients } => {
            let mut cfg = resolve(&common)?;
            if let Some(path) = coefficients {
                cfg.inputs.coefficients = Some(path);
            }
            init_threads(cfg.run.threads);
            commands::cmd_gnet(&cfg)
        }
        Command::Simulate { common } => {
            let cfg = resolve(&common)?;
            init_threads(cfg.run.threads);
            commands::cmd_simulate(&cfg)
        }
        Command::Validate { common } => {
            let cfg = resolve(&common)?;
            init_threads(cfg.run.threads);
            commands::cmd_validate(&cfg)
        }
    }
}

/// Entry point used by the binary: parse, dispatch, and map any failure to
/// its exit code after printing the error as one JSON line on stderr.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Same as [`run`] but on explicit arguments, for tests.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            // Humans get clap's full rendering; the last stderr line stays
            // machine-readable like every other failure.
            eprint!("{e}");
            let first_line = e.to_string().lines().next().unwrap_or("bad arguments").to_string();
            eprintln!("{}", Error::Usage(first_line).to_json());
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", err.to_json());
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_parse_and_reject() {
        assert_eq!(parse_counts("10935, 1301799, 11981").unwrap(), (10935, 1301799, 11981));
        assert!(parse_counts("1,2").is_err());
        assert!(parse_counts("1,2,three").is_err());
        assert!(parse_counts("1,2,3,4").is_err());
    }

    #[test]
    fn flags_override_config_values() {
        let common = CommonArgs {
            config: None,
            seed: Some(9),
            out: Some(PathBuf::from("elsewhere")),
            threads: Some(2),
            events: Some(PathBuf::from("ev.csv")),
            roster: Some(PathBuf::from("ro.csv")),
        };
        let cfg = resolve(&common).unwrap();
        assert_eq!(cfg.run.seed, 9);
        assert_eq!(cfg.run.out.as_deref(), Some(std::path::Path::new("elsewhere")));
        assert_eq!(cfg.run.threads, 2);
        assert_eq!(cfg.inputs.events.as_deref(), Some(std::path::Path::new("ev.csv")));
        assert_eq!(cfg.inputs.roster.as_deref(), Some(std::path::Path::new("ro.csv")));
    }

    #[test]
    fn unknown_flags_exit_with_usage_code() {
        assert_eq!(run_from(["rinkrate", "fit", "--bogus"]), 1);
        assert_eq!(run_from(["rinkrate", "no-such-command"]), 1);
    }

    #[test]
    fn missing_required_inputs_exit_with_usage_code() {
        assert_eq!(run_from(["rinkrate", "fit"]), 1);
        assert_eq!(run_from(["rinkrate", "gnet"]), 1);
    }

    #[test]
    fn absent_files_exit_with_data_code() {
        assert_eq!(
            run_from(["rinkrate", "summarize", "--events", "/nonexistent/events.csv"]),
            2
        );
    }
}
