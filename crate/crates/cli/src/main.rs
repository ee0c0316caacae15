use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use gpfl_cli::{parse_config, run_scenario, CliError, PRESET_NAMES};

#[derive(Parser)]
#[command(
    name = "gpfl",
    version,
    about = "Event-triggered GP feedback linearization simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a config file and write trace, events and metrics.
    Run {
        /// Preset name or path to a TOML config.
        target: String,
        /// `key=value` override, applied after the config (repeatable).
        #[arg(short = 'o', long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory.
        #[arg(long, env = "GPFL_OUT_DIR", default_value = "gpfl-out")]
        out: PathBuf,
        /// RNG seed, replacing the config's.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the built-in presets.
    Presets {
        /// Print each preset's full config.
        #[arg(long)]
        show: bool,
    },
    /// Check a preset or config file without running it.
    Validate {
        target: String,
        #[arg(short = 'o', long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            target,
            mut overrides,
            out,
            seed,
        } => {
            if let Some(seed) = seed {
                overrides.push(format!("seed={seed}"));
            }
            let cfg = parse_config(&target, &overrides)?;
            log::info!("running `{}` into {}", cfg.name, out.display());
            let output = run_scenario(&cfg, &out)?;
            println!("{}", output.metrics);
            println!("outputs in {}", output.out_dir.display());
        }
        Command::Presets { show } => {
            for name in PRESET_NAMES {
                if show {
                    let cfg = gpfl_cli::preset(name).context("preset table out of sync")?;
                    println!("# {name}\n{}", cfg.to_toml());
                } else {
                    println!("{name}");
                }
            }
        }
        Command::Validate { target, overrides } => {
            let cfg = parse_config(&target, &overrides)?;
            let run_cfg = cfg.to_run_config()?;
            println!(
                "ok: `{}`, {} steps of dt = {}",
                cfg.name,
                run_cfg.steps().map_err(CliError::from)?,
                cfg.dt
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<CliError>()
                .map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
