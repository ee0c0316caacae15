use std::cell::{Cell, RefCell};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::plant::{integrate_step, measure, PlantSpec};
use super::trajectory::{reference_eval, TrajectorySpec};
use crate::affine::{AffineModel, FgEstimate, ModelQuery, StateFn};
use crate::controller::{control, feedforward_rho, filtered_state, ControllerConfig};
use crate::error::{Error, Result};
use crate::hyperopt::{optimize_hyperparameters, OptimizerOptions};
use crate::kernels::Kernel;
use crate::scalar::{norm, Scalar};
use crate::trigger::{
    error_trigger, forget_all, forget_to_budget, noisy_trigger, variance_trigger, Event, EventLog,
    TriggerConfig, TriggerKind,
};

/// States beyond this magnitude are treated as divergence.
const DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub enum TriggerMode<T> {
    Variance,
    /// Uses the true `f` and `g` as an oracle for the model error.
    Error,
    Noisy,
    /// Periodic updates every `interval` seconds.
    Time {
        interval: T,
    },
}

impl<T> TriggerMode<T> {
    pub fn kind(&self) -> TriggerKind {
        match self {
            TriggerMode::Variance => TriggerKind::Variance,
            TriggerMode::Error => TriggerKind::Error,
            TriggerMode::Noisy => TriggerKind::Noisy,
            TriggerMode::Time { .. } => TriggerKind::Time,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HyperPolicy {
    Fixed,
    /// Maximize the marginal likelihood after every update, warm-started from
    /// the current hyperparameters. Updates that leave fewer than `min_points`
    /// stored points keep the current hyperparameters.
    Reoptimize {
        options: OptimizerOptions,
        min_points: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forgetting {
    None,
    All,
    Budget(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec<T> {
    UnknownG {
        kf: Kernel<T>,
        kg: Kernel<T>,
        prior_mean_g: T,
        eta: T,
    },
    /// Uses the plant's own `g`.
    KnownG { kf: Kernel<T> },
}

#[derive(Debug, Clone)]
pub struct RunConfig<T> {
    pub plant: PlantSpec<T>,
    pub trajectory: TrajectorySpec<T>,
    pub controller: ControllerConfig<T>,
    pub trigger: TriggerConfig<T>,
    pub trigger_mode: TriggerMode<T>,
    pub noise_variance: T,
    pub x0: Vec<T>,
    pub horizon: T,
    pub dt: T,
    pub seed: u64,
    pub hyper: HyperPolicy,
    pub forgetting: Forgetting,
    pub model: ModelSpec<T>,
}

fn whole_multiple(span: f64, dt: f64) -> Option<usize> {
    let n = (span / dt).round();
    ((n * dt - span).abs() <= 1e-9 * span.abs().max(dt) && n >= 0.0).then_some(n as usize)
}

impl<T: Scalar> RunConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.plant.order;
        if self.controller.order() != n {
            return Err(Error::contract(format!(
                "lambda has {} entries, plant order is {n}",
                self.controller.lambda.len()
            )));
        }
        if self.x0.len() != n {
            return Err(Error::contract(format!(
                "x0 has {} entries, plant order is {n}",
                self.x0.len()
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("x0 must be finite"));
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(Error::contract("dt must be positive"));
        }
        if !(self.horizon >= T::zero()) || !self.horizon.is_finite() {
            return Err(Error::contract("horizon must be non-negative"));
        }
        self.steps()?;
        if !(self.noise_variance >= T::zero()) {
            return Err(Error::contract("noise variance must be non-negative"));
        }
        self.trigger.validate()?;
        self.time_period()?;
        if self.forgetting == Forgetting::Budget(0) {
            return Err(Error::contract("budget must be at least 1"));
        }
        if let ModelSpec::UnknownG {
            prior_mean_g, eta, ..
        } = &self.model
        {
            if !(*prior_mean_g > T::zero()) {
                return Err(Error::contract("prior mean of g must be positive"));
            }
            if !(*eta > T::zero()) {
                return Err(Error::contract("positivity floor must be positive"));
            }
        }
        Ok(())
    }

    /// Number of integrator steps; the horizon must be a whole multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        whole_multiple(self.horizon.as_f64(), self.dt.as_f64())
            .ok_or_else(|| Error::contract("horizon must be a whole multiple of dt"))
    }

    fn time_period(&self) -> Result<Option<usize>> {
        match &self.trigger_mode {
            TriggerMode::Time { interval } => {
                match whole_multiple(interval.as_f64(), self.dt.as_f64()) {
                    Some(m) if m >= 1 => Ok(Some(m)),
                    _ => Err(Error::contract(
                        "time-trigger interval must be a positive whole multiple of dt",
                    )),
                }
            }
            _ => Ok(None),
        }
    }

    pub fn initial_model(&self) -> Result<AffineModel<T>> {
        match &self.model {
            ModelSpec::UnknownG {
                kf,
                kg,
                prior_mean_g,
                eta,
            } => {
                let m = *prior_mean_g;
                let prior: StateFn<T> = Arc::new(move |_| m);
                AffineModel::unknown_g(kf.clone(), kg.clone(), prior, *eta, self.noise_variance)
            }
            ModelSpec::KnownG { kf } => Ok(AffineModel::known_g(
                kf.clone(),
                Arc::clone(&self.plant.g),
                self.noise_variance,
            )),
        }
    }
}

/// Closed-loop quantities at one integrator grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow<T> {
    pub t: T,
    pub x: Vec<T>,
    pub x_d: Vec<T>,
    pub e_norm: T,
    pub r: T,
    pub u: T,
    /// Posterior standard deviation the trigger compares against.
    pub sigma: T,
    pub f_hat: T,
    pub g_hat: T,
    pub kappa: usize,
    /// An update happened during the step ending at this row.
    pub event: bool,
}

/// Trigger inequality after a budget reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetCheck<T> {
    pub time: T,
    pub dataset_size: usize,
    pub sigma_after: T,
    /// `k_c max(|r|, r_min)`.
    pub threshold: T,
    pub condition_holds: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct Trace<T: Scalar> {
    pub rows: Vec<TraceRow<T>>,
    pub events: EventLog,
    pub budget_checks: Vec<BudgetCheck<T>>,
    pub final_model: AffineModel<T>,
    /// Number of `ĝ` evaluations where the positivity floor was active.
    pub floor_hits: usize,
    pub peak_dataset_size: usize,
    /// Log hyperparameters after each re-optimization.
    pub hyper_history: Vec<Vec<T>>,
    pub wall_clock_seconds: f64,
}

/// A run aborted by a fault, with everything recorded up to the fault.
/// `trace` is `None` when the configuration was rejected before starting.
#[derive(Debug, Clone)]
pub struct RunFailure<T: Scalar> {
    pub error: Error,
    pub trace: Option<Trace<T>>,
}

impl<T: Scalar> std::fmt::Display for RunFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.trace {
            Some(trace) => write!(f, "{} (after {} rows)", self.error, trace.rows.len()),
            None => write!(f, "{}", self.error),
        }
    }
}

impl<T: Scalar> std::error::Error for RunFailure<T> {}

struct LawEval<T: Scalar> {
    query: ModelQuery<T>,
    u: T,
    est: FgEstimate<T>,
    r: T,
    e: Vec<T>,
    x_d: Vec<T>,
}

/// `(x, t, κ, u)` of the last trace evaluation.
type LastControl<T> = (Vec<T>, T, usize, T);

struct Runner<'a, T: Scalar> {
    cfg: &'a RunConfig<T>,
    model: AffineModel<T>,
    kappa: usize,
    floor_hits: Cell<usize>,
    rng: ChaCha8Rng,
    noise_std: T,
    events: EventLog,
    budget_checks: Vec<BudgetCheck<T>>,
    peak: usize,
    hyper_history: Vec<Vec<T>>,
    rows: Vec<TraceRow<T>>,
    /// Control of the last trace evaluation, reused by the first RK4 stage
    /// of the following step.
    last_control: RefCell<Option<LastControl<T>>>,
}

impl<T: Scalar> Runner<'_, T> {
    fn law(&self, model: &AffineModel<T>, x: &[T], t: T) -> Result<LawEval<T>> {
        let c = &self.cfg.controller;
        let reference = reference_eval(&self.cfg.trajectory, t, self.cfg.plant.order);
        let e = reference.error(x)?;
        let r = filtered_state(&e, &c.lambda)?;
        let rho = feedforward_rho(&e, &reference, &c.lambda)?;
        let query = model.query(x)?;
        let est = model.estimates_at(&query)?;
        if est.floored {
            self.floor_hits.set(self.floor_hits.get() + 1);
        }
        let u = control(est.f_hat, est.g_hat, r, rho, c.k_c)?;
        Ok(LawEval {
            query,
            u,
            est,
            r,
            e,
            x_d: reference.x_d,
        })
    }

    /// Trace row at `(x, t)` under the current model, and whether the
    /// state-dependent trigger fires there.
    fn evaluate(&self, x: &[T], t: T) -> Result<(TraceRow<T>, bool)> {
        let c = &self.cfg.controller;
        let tr = &self.cfg.trigger;
        let law = self.law(&self.model, x, t)?;
        *self.last_control.borrow_mut() = Some((x.to_vec(), t, self.kappa, law.u));
        let u_query = (!self.model.is_known_g()).then_some(law.u);
        let sigma = self.model.variance_at(&law.query, u_query)?.sqrt();
        let fires = match self.cfg.trigger_mode {
            TriggerMode::Time { .. } => false,
            TriggerMode::Variance => variance_trigger(sigma, tr.beta, law.r, c.k_c, tr.r_min),
            TriggerMode::Noisy => noisy_trigger(
                sigma,
                tr.beta,
                law.r,
                c.k_c,
                &law.e,
                &c.lambda,
                tr.noise_std,
                tr.r_min,
            ),
            TriggerMode::Error => {
                let plant = &self.cfg.plant;
                let truth = plant.eval_f(x)? + plant.eval_g(x)? * law.u;
                let estimate = law.est.f_hat + law.est.g_hat * law.u;
                error_trigger((truth - estimate).abs(), law.r, c.k_c, tr.r_min)
            }
        };
        let row = TraceRow {
            t,
            x: x.to_vec(),
            x_d: law.x_d,
            e_norm: norm(&law.e),
            r: law.r,
            u: law.u,
            sigma,
            f_hat: law.est.f_hat,
            g_hat: law.est.g_hat,
            kappa: self.kappa,
            event: false,
        };
        Ok((row, fires))
    }

    fn fires(&self, x: &[T], t: T) -> Result<bool> {
        Ok(self.evaluate(x, t)?.1)
    }

    fn step(&self, x: &[T], t: T, h: T) -> Result<Vec<T>> {
        let model = &self.model;
        let cached = self
            .last_control
            .borrow()
            .as_ref()
            .and_then(|(cx, ct, kappa, u)| {
                (*kappa == self.kappa && *ct == t && cx.as_slice() == x).then_some(*u)
            });
        let mut u_fn = |xs: &[T], ts: T| match cached {
            Some(u) if ts == t && xs == x => Ok(u),
            _ => self.law(model, xs, ts).map(|l| l.u),
        };
        let next = integrate_step(&self.cfg.plant, &mut u_fn, x, t, h)?;
        if norm(&next).as_f64() > DIVERGENCE_BOUND {
            return Err(Error::Divergence {
                time: (t + h).as_f64(),
                detail: format!("state {next:?} left the bounded region"),
            });
        }
        Ok(next)
    }

    fn row(&self, x: &[T], t: T, event: bool) -> Result<TraceRow<T>> {
        Ok(TraceRow {
            event,
            ..self.evaluate(x, t)?.0
        })
    }

    /// Measures at `x`, applies forgetting and the hyperparameter policy, and
    /// switches to the next control law.
    fn event(&mut self, x: &[T], t: T, step: usize) -> Result<()> {
        let cfg = self.cfg;
        let law = self.law(&self.model, x, t)?;
        let y = measure(&cfg.plant, x, law.u, self.noise_std, &mut self.rng)?;
        let mut model = self.model.add_measurement(x.to_vec(), y, law.u)?;
        match cfg.forgetting {
            Forgetting::None => {}
            Forgetting::All => model = forget_all(&model)?,
            Forgetting::Budget(budget) => {
                let tr = &cfg.trigger;
                let u_query = (!model.is_known_g()).then_some(law.u);
                let red = forget_to_budget(
                    &model,
                    budget,
                    x,
                    u_query,
                    law.r,
                    cfg.controller.k_c,
                    tr.beta,
                    tr.r_min,
                )?;
                if red.fallback {
                    log::warn!("t = {t}: budget reduction fell back to the newest point");
                }
                self.budget_checks.push(BudgetCheck {
                    time: t,
                    dataset_size: red.model.len(),
                    sigma_after: red.sigma_after,
                    threshold: cfg.controller.k_c * law.r.abs().max(tr.r_min),
                    condition_holds: red.condition_holds,
                    fallback: red.fallback,
                });
                model = red.model;
            }
        }
        if let HyperPolicy::Reoptimize {
            options: opts,
            min_points,
        } = &cfg.hyper
        {
            if model.len() >= *min_points {
                let opts = OptimizerOptions {
                    seed: cfg
                        .seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add(self.kappa as u64),
                    ..opts.clone()
                };
                let family = model.kernel().clone();
                let report = optimize_hyperparameters(
                    model.dataset(),
                    &family,
                    model.posterior().prior_mean(),
                    &family.log_params(),
                    &opts,
                )?;
                self.hyper_history.push(report.log_params.clone());
                model = model.refit(model.dataset().clone(), report.kernel)?;
            }
        }
        self.model = model;
        self.kappa += 1;
        self.peak = self.peak.max(self.model.len());
        self.events.push(Event {
            time: t.as_f64(),
            step,
            kind: cfg.trigger_mode.kind(),
            dataset_size: self.model.len(),
        })
    }

    fn run(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let steps = cfg.steps()?;
        let period = cfg.time_period()?;
        let dt = cfg.dt;
        let refine_to = dt / T::lit(100.0);

        let mut x = cfg.x0.clone();
        let (row, fires) = self.evaluate(&x, T::zero())?;
        if period.is_none() && fires {
            self.event(&x.clone(), T::zero(), 0)?;
            self.rows.push(self.row(&x, T::zero(), true)?);
        } else {
            self.rows.push(row);
        }

        for k in 0..steps {
            let t = T::from_usize_lossy(k) * dt;
            let t_next = T::from_usize_lossy(k + 1) * dt;
            let mut next = self.step(&x, t, dt)?;
            let mut event = false;
            let mut pending = None;
            if let Some(m) = period {
                if (k + 1) % m == 0 {
                    self.event(&next, t_next, k + 1)?;
                    event = true;
                }
            } else if let (row, false) = self.evaluate(&next, t_next)? {
                pending = Some(row);
            } else {
                // First crossing inside the step, to a bracket below dt/100.
                let (mut lo, mut hi) = (T::zero(), dt);
                while hi - lo > refine_to {
                    let mid = T::lit(0.5) * (lo + hi);
                    if self.fires(&self.step(&x, t, mid)?, t + mid)? {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let x_event = if hi < dt {
                    self.step(&x, t, hi)?
                } else {
                    next.clone()
                };
                let t_event = if hi < dt { t + hi } else { t_next };
                self.event(&x_event, t_event, k + 1)?;
                event = true;
                if hi < dt {
                    next = self.step(&x_event, t_event, dt - hi)?;
                    if self.fires(&next, t_next)? {
                        self.event(&next.clone(), t_next, k + 1)?;
                    }
                }
            }
            x = next;
            let row = match pending {
                Some(row) => row,
                None => self.row(&x, t_next, event)?,
            };
            self.rows.push(row);
        }
        Ok(())
    }
}

/// Runs the event-triggered online-learning loop over the configured horizon.
/// On a fault the partially recorded trace is returned inside the error.
pub fn run_closed_loop<T: Scalar>(
    config: &RunConfig<T>,
) -> std::result::Result<Trace<T>, Box<RunFailure<T>>> {
    let start = Instant::now();
    let model = match config.validate().and_then(|_| config.initial_model()) {
        Ok(m) => m,
        Err(error) => return Err(Box::new(RunFailure { error, trace: None })),
    };
    let mut runner = Runner {
        cfg: config,
        model,
        kappa: 0,
        floor_hits: Cell::new(0),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        noise_std: config.noise_variance.sqrt(),
        events: EventLog::new(),
        budget_checks: Vec::new(),
        peak: 0,
        hyper_history: Vec::new(),
        rows: Vec::with_capacity(config.steps().unwrap_or(0) + 1),
        last_control: RefCell::new(None),
    };
    let outcome = runner.run();
    let trace = Trace {
        rows: runner.rows,
        events: runner.events,
        budget_checks: runner.budget_checks,
        final_model: runner.model,
        floor_hits: runner.floor_hits.get(),
        peak_dataset_size: runner.peak,
        hyper_history: runner.hyper_history,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    match outcome {
        Ok(()) => Ok(trace),
        Err(error) => Err(Box::new(RunFailure {
            error,
            trace: Some(trace),
        })),
    }
}
