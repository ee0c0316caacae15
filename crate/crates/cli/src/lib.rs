//! Scenario presets, config parsing and trace export for `gpfl-core` runs.

pub mod config;
pub mod error;
pub mod export;

use std::path::{Path, PathBuf};

use gpfl_core::simulator::{run_closed_loop, Forgetting};
use gpfl_core::Trace64;

pub use config::{parse_config, parse_config_str, preset, ScenarioConfig, PRESET_NAMES};
pub use error::CliError;
pub use export::MetricsSummary;

/// Result of a completed run: the trace and where its files went.
#[derive(Debug)]
pub struct RunOutput {
    pub trace: Trace64,
    pub metrics: MetricsSummary,
    pub out_dir: PathBuf,
}

fn write_outputs(
    cfg: &ScenarioConfig,
    trace: &Trace64,
    out_dir: &Path,
    completed: bool,
) -> Result<MetricsSummary, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    export::export_trace(trace, &out_dir.join(export::TRACE_FILE))?;
    export::export_events(trace, &out_dir.join(export::EVENTS_FILE))?;
    if cfg.forgetting == config::ForgettingName::Budget {
        export::export_budget_checks(trace, &out_dir.join(export::BUDGET_FILE))?;
    }
    let metrics = MetricsSummary::from_trace(&cfg.name, trace, cfg.horizon, completed);
    metrics.write(&out_dir.join(export::METRICS_FILE))?;
    Ok(metrics)
}

/// Runs `cfg` and writes trace, event log and metrics into `out_dir`.
/// A simulator fault still writes the partial trace before the error is
/// returned.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunOutput, CliError> {
    let run_cfg = cfg.to_run_config()?;
    match run_closed_loop(&run_cfg) {
        Ok(trace) => {
            let metrics = write_outputs(cfg, &trace, out_dir, true)?;
            Ok(RunOutput {
                trace,
                metrics,
                out_dir: out_dir.to_owned(),
            })
        }
        Err(failure) => {
            let failure = *failure;
            match failure.trace {
                Some(trace) => {
                    write_outputs(cfg, &trace, out_dir, false)?;
                    Err(CliError::Numerical(failure.error))
                }
                None => Err(CliError::config(failure.error.to_string())),
            }
        }
    }
}

/// Budget used by a config, if any.
pub fn budget_of(cfg: &gpfl_core::RunConfig64) -> Option<usize> {
    match cfg.forgetting {
        Forgetting::Budget(n) => Some(n),
        _ => None,
    }
}
