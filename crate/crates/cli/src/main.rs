use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ddlab_cli::config;
use ddlab_cli::run::{execute, Format, RunOptions};
use ddlab_cli::{compare, CliError, EXIT_CHECK_FAILED, EXIT_PASS};

#[derive(Parser)]
#[command(name = "ddlab", version, about = "Drawdown-constrained investment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Override a config value, e.g. `--set sim.n_paths=2000`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Replace the simulation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the main run; 0 keeps the default pool.
        #[arg(long, env = "DDLAB_WORKERS", default_value_t = 0)]
        workers: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Diff two summary.json files of the same experiment kind.
    Compare { a: PathBuf, b: PathBuf },
    /// Parse a config and print it fully resolved, without running.
    Check {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn seed_overrides(table: &toml::Table, seed: Option<u64>) -> Vec<String> {
    let Some(seed) = seed else { return Vec::new() };
    let sde = table
        .get("experiment")
        .and_then(|e| e.get("kind"))
        .and_then(|k| k.as_str())
        == Some("sde-convergence");
    let mut out = Vec::new();
    if table.contains_key("sim") {
        out.push(format!("sim.seed={seed}"));
    }
    if sde {
        out.push(format!("experiment.seed={seed}"));
    }
    out
}

fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<config::ExperimentConfig, CliError> {
    let (_, table) = config::load(path, overrides)?;
    let mut all = overrides.to_vec();
    all.extend(seed_overrides(&table, seed));
    Ok(config::load(path, &all)?.0)
}

fn real_main() -> Result<i32, CliError> {
    match Cli::parse().command {
        Command::Run {
            config,
            overrides,
            seed,
            workers,
            out_dir,
            format,
        } => {
            let cfg = load(&config, &overrides, seed)?;
            let opts = RunOptions {
                workers,
                out_dir,
                format,
                default_name: config
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "run".into()),
            };
            let base = config.parent().unwrap_or(Path::new("."));
            let done = execute(&cfg, base, &opts)?;
            for c in &done.outcome.checks {
                println!(
                    "  {} {}: {} (target {}, tol {})",
                    if c.pass { "ok  " } else { "FAIL" },
                    c.name,
                    c.value,
                    c.target,
                    c.tolerance
                );
            }
            let pass = done.outcome.pass();
            println!(
                "{} {} -> {}",
                if pass { "PASS" } else { "FAIL" },
                done.outcome.kind,
                done.out_dir.display()
            );
            Ok(if pass { EXIT_PASS } else { EXIT_CHECK_FAILED })
        }
        Command::Compare { a, b } => {
            let c = compare::compare_files(&a, &b)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
            Ok(if c.consistent() { EXIT_PASS } else { EXIT_CHECK_FAILED })
        }
        Command::Check { config, overrides } => {
            let cfg = load(&config, &overrides, None)?;
            let text = toml::to_string_pretty(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
            print!("{text}");
            Ok(EXIT_PASS)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("ddlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
