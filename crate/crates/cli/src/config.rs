//! Flat scenario configuration with preset inheritance.
//!
//! A config document is a flat TOML table. An optional `preset` key names the
//! base scenario; every other key overrides one field of it. Unknown keys are
//! rejected.

use std::path::Path;

use gpfl_core::controller::{hurwitz_check, ControllerConfig};
use gpfl_core::hyperopt::OptimizerOptions;
use gpfl_core::kernels::{Kernel, SeHyperparams};
use gpfl_core::simulator::{
    Forgetting, HyperPolicy, ModelSpec, PlantSpec, TrajectorySpec, TriggerMode,
};
use gpfl_core::trigger::TriggerConfig;
use gpfl_core::RunConfig64;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantName {
    Pendulum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    SoftStep,
    Sinusoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerName {
    Variance,
    Error,
    Noisy,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForgettingName {
    None,
    All,
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    UnknownG,
    KnownG,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperName {
    Fixed,
    Reoptimize,
}

/// Every tunable of one closed-loop run, as flat keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub horizon: f64,
    pub dt: f64,
    pub x0: Vec<f64>,
    pub noise_variance: f64,
    pub plant: PlantName,

    pub trajectory: TrajectoryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_steepness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sine_amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sine_frequency: Option<f64>,

    pub lambda: Vec<f64>,
    pub k_c: f64,
    pub r_min: f64,

    pub trigger: TriggerName,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Dead-band noise level of the noisy trigger; defaults to `√noise_variance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_interval: Option<f64>,

    pub forgetting: ForgettingName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,

    pub model: ModelName,
    pub kf_lengthscales: Vec<f64>,
    pub kf_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg_lengthscales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_mean_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,

    pub hyper: HyperName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opt_restarts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opt_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opt_min_points: Option<usize>,
    /// Upper bound on the signal variance of the `g` kernel during optimization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opt_g_variance_max: Option<f64>,
}

fn required<T: Copy>(value: Option<T>, key: &str, why: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::config(format!("missing required field `{key}` ({why})")))
}

fn se_kernel(lengthscales: &[f64], variance: f64, what: &str) -> Result<Kernel<f64>, CliError> {
    SeHyperparams::new(lengthscales.to_vec(), variance)
        .map(Kernel::se)
        .map_err(|e| CliError::config(format!("{what}: {e}")))
}

impl ScenarioConfig {
    /// Serializes to the flat TOML form accepted by [`parse_config`].
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Builds the simulator configuration, checking cross-field consistency.
    pub fn to_run_config(&self) -> Result<RunConfig64, CliError> {
        if !hurwitz_check(&self.lambda) || self.lambda.is_empty() {
            return Err(CliError::config(format!(
                "lambda {:?} is not Hurwitz: every root of s^n + λ_{{n-1}} s^{{n-1}} + … + λ_1 must have negative real part",
                self.lambda
            )));
        }
        let controller = ControllerConfig::new(self.lambda.clone(), self.k_c, self.r_min)
            .map_err(|e| CliError::config(e.to_string()))?;

        let plant = match self.plant {
            PlantName::Pendulum => PlantSpec::pendulum(),
        };

        let trajectory = match self.trajectory {
            TrajectoryKind::SoftStep => TrajectorySpec::SoftStep {
                center: required(self.step_center, "step_center", "soft-step trajectory")?,
                steepness: required(
                    self.step_steepness,
                    "step_steepness",
                    "soft-step trajectory",
                )?,
                from: required(self.step_from, "step_from", "soft-step trajectory")?,
                to: required(self.step_to, "step_to", "soft-step trajectory")?,
            },
            TrajectoryKind::Sinusoid => TrajectorySpec::Sinusoid {
                amplitude: required(self.sine_amplitude, "sine_amplitude", "sinusoid trajectory")?,
                frequency: required(self.sine_frequency, "sine_frequency", "sinusoid trajectory")?,
            },
        };

        let trigger = TriggerConfig {
            beta: self.beta,
            delta: self.delta,
            noise_std: self
                .noise_std
                .unwrap_or(self.noise_variance.max(0.0).sqrt()),
            lipschitz_sigma: self.lipschitz_sigma,
            r_min: self.r_min,
        };
        trigger
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;

        let trigger_mode = match self.trigger {
            TriggerName::Variance => TriggerMode::Variance,
            TriggerName::Error => TriggerMode::Error,
            TriggerName::Noisy => TriggerMode::Noisy,
            TriggerName::Time => TriggerMode::Time {
                interval: required(self.time_interval, "time_interval", "time trigger")?,
            },
        };

        let forgetting = match self.forgetting {
            ForgettingName::None => Forgetting::None,
            ForgettingName::All => Forgetting::All,
            ForgettingName::Budget => {
                Forgetting::Budget(required(self.budget, "budget", "budget forgetting")?)
            }
        };

        let kf = se_kernel(&self.kf_lengthscales, self.kf_variance, "kf")?;
        let model = match self.model {
            ModelName::KnownG => ModelSpec::KnownG { kf },
            ModelName::UnknownG => {
                let lengthscales = self.kg_lengthscales.as_deref().ok_or_else(|| {
                    CliError::config("missing required field `kg_lengthscales` (unknown-g model)")
                })?;
                let variance = required(self.kg_variance, "kg_variance", "unknown-g model")?;
                ModelSpec::UnknownG {
                    kf,
                    kg: se_kernel(lengthscales, variance, "kg")?,
                    prior_mean_g: required(self.prior_mean_g, "prior_mean_g", "unknown-g model")?,
                    eta: required(self.eta, "eta", "unknown-g model")?,
                }
            }
        };

        let hyper = match self.hyper {
            HyperName::Fixed => HyperPolicy::Fixed,
            HyperName::Reoptimize => {
                let defaults = OptimizerOptions::default();
                let g_log_variance_bounds = match self.opt_g_variance_max {
                    Some(v) if v > defaults.log_variance_bounds.0.exp() => {
                        Some((defaults.log_variance_bounds.0, v.ln()))
                    }
                    Some(v) => {
                        return Err(CliError::config(format!(
                            "opt_g_variance_max {v} is below the optimizer's lower variance bound"
                        )))
                    }
                    None => None,
                };
                HyperPolicy::Reoptimize {
                    options: OptimizerOptions {
                        n_restarts: self.opt_restarts.unwrap_or(defaults.n_restarts),
                        max_iterations: self.opt_iterations.unwrap_or(defaults.max_iterations),
                        g_log_variance_bounds,
                        ..defaults
                    },
                    min_points: self.opt_min_points.unwrap_or(1),
                }
            }
        };

        let cfg = RunConfig64 {
            plant,
            trajectory,
            controller,
            trigger,
            trigger_mode,
            noise_variance: self.noise_variance,
            x0: self.x0.clone(),
            horizon: self.horizon,
            dt: self.dt,
            seed: self.seed,
            hyper,
            forgetting,
            model,
        };
        cfg.validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 5] = ["s1", "s2", "s2-time", "s2-forget-all", "s2-budget"];

fn pendulum_base(name: &str) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_owned(),
        seed: 1,
        horizon: 100.0,
        dt: 1e-3,
        x0: vec![3.0, 2.0],
        noise_variance: 1e-16,
        plant: PlantName::Pendulum,
        trajectory: TrajectoryKind::Sinusoid,
        step_center: None,
        step_steepness: None,
        step_from: None,
        step_to: None,
        sine_amplitude: Some(1.0),
        sine_frequency: Some(1.0),
        lambda: vec![1.0],
        k_c: 1.0,
        r_min: 1e-5,
        trigger: TriggerName::Variance,
        beta: 7.0,
        delta: Some(0.01),
        noise_std: None,
        lipschitz_sigma: None,
        time_interval: None,
        forgetting: ForgettingName::None,
        budget: None,
        model: ModelName::KnownG,
        kf_lengthscales: vec![5f64.sqrt(), 5f64.sqrt()],
        kf_variance: 5.0,
        kg_lengthscales: None,
        kg_variance: None,
        prior_mean_g: None,
        eta: None,
        hyper: HyperName::Fixed,
        opt_restarts: None,
        opt_iterations: None,
        opt_min_points: None,
        opt_g_variance_max: None,
    }
}

/// Built-in scenario by name.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let cfg = match name {
        "s2" => pendulum_base(name),
        "s2-time" => ScenarioConfig {
            trigger: TriggerName::Time,
            time_interval: Some(0.5),
            ..pendulum_base(name)
        },
        "s2-forget-all" => ScenarioConfig {
            forgetting: ForgettingName::All,
            ..pendulum_base(name)
        },
        "s2-budget" => ScenarioConfig {
            forgetting: ForgettingName::Budget,
            budget: Some(20),
            ..pendulum_base(name)
        },
        "s1" => ScenarioConfig {
            horizon: 20.0,
            noise_variance: 1e-6,
            trajectory: TrajectoryKind::SoftStep,
            step_center: Some(10.0),
            step_steepness: Some(20.0),
            step_from: Some(1.0),
            step_to: Some(0.0),
            sine_amplitude: None,
            sine_frequency: None,
            trigger: TriggerName::Time,
            time_interval: Some(0.5),
            model: ModelName::UnknownG,
            kf_lengthscales: vec![1.0, 1.0],
            kf_variance: 1.0,
            kg_lengthscales: Some(vec![1.0, 1.0]),
            kg_variance: Some(1.0),
            prior_mean_g: Some(2.0),
            eta: Some(1e-3),
            hyper: HyperName::Reoptimize,
            opt_restarts: Some(2),
            opt_iterations: Some(200),
            opt_min_points: Some(6),
            opt_g_variance_max: Some(1.0),
            ..pendulum_base(name)
        },
        _ => return None,
    };
    Some(cfg)
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to
/// a bare string (so `trigger=time` works without quotes).
pub fn parse_override(spec: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::config(format!("override `{spec}` is not of the form key=value"))
    })?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::config(format!(
            "override `{spec}` has an empty key"
        )));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key present"),
        Err(_) => Value::String(raw.to_owned()),
    };
    Ok((key.to_owned(), value))
}

/// Keys holding floats; integer literals given for them are widened, so
/// `beta = 7` and `x0 = [3, 2]` are accepted.
const FLOAT_KEYS: [&str; 19] = [
    "horizon",
    "dt",
    "noise_variance",
    "step_center",
    "step_steepness",
    "step_from",
    "step_to",
    "sine_amplitude",
    "sine_frequency",
    "k_c",
    "r_min",
    "beta",
    "delta",
    "noise_std",
    "lipschitz_sigma",
    "time_interval",
    "kf_variance",
    "kg_variance",
    "prior_mean_g",
];
const FLOAT_ARRAY_KEYS: [&str; 4] = ["x0", "lambda", "kf_lengthscales", "kg_lengthscales"];

fn widen(v: Value) -> Value {
    match v {
        Value::Integer(i) => Value::Float(i as f64),
        other => other,
    }
}

fn coerce_key(key: &str, value: Value) -> Value {
    if FLOAT_KEYS.contains(&key) || key == "eta" || key == "opt_g_variance_max" {
        widen(value)
    } else if FLOAT_ARRAY_KEYS.contains(&key) {
        match value {
            Value::Array(items) => Value::Array(items.into_iter().map(widen).collect()),
            other => other,
        }
    } else {
        value
    }
}

fn table_of(cfg: &ScenarioConfig) -> Table {
    cfg.to_toml()
        .parse::<Table>()
        .expect("serialized config parses")
}

fn decode(table: Table) -> Result<ScenarioConfig, CliError> {
    ScenarioConfig::deserialize(Value::Table(table))
        .map_err(|e| CliError::config(e.message().to_owned()))
}

/// Resolves a config document plus `key=value` overrides into a complete
/// [`ScenarioConfig`]. Keys set to the empty string are not accepted; unknown
/// keys and missing required fields are config errors.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let doc = text
        .parse::<Table>()
        .map_err(|e| CliError::config(e.message().to_owned()))?;
    resolve(doc, overrides)
}

fn resolve(mut doc: Table, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let mut base = match doc.remove("preset") {
        Some(Value::String(name)) => table_of(
            &preset(&name).ok_or_else(|| CliError::config(format!("unknown preset `{name}`")))?,
        ),
        Some(other) => {
            return Err(CliError::config(format!(
                "preset must be a string, got {other}"
            )))
        }
        None => Table::new(),
    };
    for (key, value) in doc {
        let value = coerce_key(&key, value);
        base.insert(key, value);
    }
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        if key == "preset" {
            return Err(CliError::config("`preset` cannot be overridden"));
        }
        let value = coerce_key(&key, value);
        base.insert(key, value);
    }
    decode(base)
}

/// Resolves a preset name or a config file path.
pub fn parse_config(target: &str, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    if let Some(cfg) = preset(target) {
        let mut table = table_of(&cfg);
        table.insert("preset".into(), Value::String(target.to_owned()));
        return resolve(table, overrides);
    }
    let path = Path::new(target);
    if !path.exists() {
        return Err(CliError::config(format!(
            "`{target}` is neither a preset ({}) nor an existing file",
            PRESET_NAMES.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config_str(&text, overrides)
}
