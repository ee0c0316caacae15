//! Event-triggering laws, error-ball radii, the inter-event lower bound and
//! forgetting strategies.

use std::fmt;

use crate::affine::AffineModel;
use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerConfig<T> {
    pub beta: T,
    /// Confidence level the constant `beta` stands for; informational only.
    pub delta: Option<T>,
    pub noise_std: T,
    pub lipschitz_sigma: Option<T>,
    pub r_min: T,
}

impl<T: Scalar> TriggerConfig<T> {
    pub fn new(beta: T, noise_std: T, r_min: T) -> Result<Self> {
        let cfg = Self {
            beta,
            delta: None,
            noise_std,
            lipschitz_sigma: None,
            r_min,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > T::zero()) || !self.beta.is_finite() {
            return Err(Error::contract("beta must be positive"));
        }
        if let Some(d) = self.delta {
            if !(d > T::zero() && d < T::one()) {
                return Err(Error::contract("delta must lie in (0, 1)"));
            }
        }
        if !(self.noise_std >= T::zero()) {
            return Err(Error::contract("noise_std must be non-negative"));
        }
        if let Some(l) = self.lipschitz_sigma {
            if !(l > T::zero()) {
                return Err(Error::contract("lipschitz_sigma must be positive"));
            }
        }
        if !(self.r_min >= T::zero()) {
            return Err(Error::contract("r_min must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriggerKind {
    Variance,
    Error,
    Noisy,
    Time,
}

impl TriggerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::Variance => "variance",
            TriggerKind::Error => "error",
            TriggerKind::Noisy => "noisy",
            TriggerKind::Time => "time",
        }
    }
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    /// Refined event time.
    pub time: f64,
    /// Integrator step during which the event fired (0 for an event at `t = 0`).
    pub step: usize,
    pub kind: TriggerKind,
    /// Dataset size after the update.
    pub dataset_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event; times must increase strictly.
    pub fn push(&mut self, event: Event) -> Result<()> {
        if let Some(last) = self.events.last() {
            if !(event.time > last.time) {
                return Err(Error::contract(format!(
                    "event at t = {} does not follow the previous one at t = {}",
                    event.time, last.time
                )));
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    /// Gaps between consecutive events.
    pub fn gaps(&self) -> Vec<f64> {
        self.events
            .windows(2)
            .map(|w| w[1].time - w[0].time)
            .collect()
    }

    pub fn min_gap(&self) -> Option<f64> {
        self.gaps().into_iter().reduce(f64::min)
    }

    pub fn mean_gap(&self) -> Option<f64> {
        let g = self.gaps();
        (!g.is_empty()).then(|| g.iter().sum::<f64>() / g.len() as f64)
    }
}

/// `β σ ≥ k_c max(|r|, r_min)`.
pub fn variance_trigger<T: Scalar>(sigma: T, beta: T, r: T, k_c: T, r_min: T) -> bool {
    beta * sigma >= k_c * r.abs().max(r_min)
}

/// `|f − f̂| ≥ k_c max(|r|, r_min)`.
pub fn error_trigger<T: Scalar>(delta_f: T, r: T, k_c: T, r_min: T) -> bool {
    delta_f >= k_c * r.abs().max(r_min)
}

/// Variance trigger restricted to errors outside the noise ball.
#[allow(clippy::too_many_arguments)]
pub fn noisy_trigger<T: Scalar>(
    sigma: T,
    beta: T,
    r: T,
    k_c: T,
    e: &[T],
    lambda: &[T],
    noise_std: T,
    r_min: T,
) -> bool {
    variance_trigger(sigma, beta, r, k_c, r_min)
        && norm(e) > noise_ball_radius(noise_std, beta, k_c, lambda)
}

fn filter_norm<T: Scalar>(lambda: &[T]) -> T {
    (lambda.iter().map(|&l| l * l).sum::<T>() + T::one()).sqrt()
}

/// `σ_on β / (k_c ‖[λᵀ 1]‖)`.
pub fn noise_ball_radius<T: Scalar>(noise_std: T, beta: T, k_c: T, lambda: &[T]) -> T {
    noise_std * beta / (k_c * filter_norm(lambda))
}

/// `β σ̄ / (k_c ‖[λᵀ 1]‖)`.
pub fn ultimate_bound_radius<T: Scalar>(beta: T, sigma_bar: T, k_c: T, lambda: &[T]) -> T {
    beta * sigma_bar / (k_c * filter_norm(lambda))
}

const BOUND_STEPS: usize = 20_000;

/// Time for `φ̇ = β φ² + (L β + k_c) φ + L k_c` to climb from `φ0` to
/// `k_c / β`, by fixed-step RK4 with the crossing step bisected.
pub fn inter_event_lower_bound<T: Scalar>(
    beta: T,
    lipschitz_sigma: T,
    k_c: T,
    phi0: T,
) -> Result<T> {
    let l = lipschitz_sigma;
    if !(beta > T::zero() && l > T::zero() && k_c > T::zero()) {
        return Err(Error::contract(
            "beta, lipschitz_sigma and k_c must be positive",
        ));
    }
    let target = k_c / beta;
    if !(phi0 >= T::zero()) || phi0 >= target {
        return Err(Error::contract(format!("phi0 must lie in [0, {target:e})")));
    }
    let rate = |p: T| beta * p * p + (l * beta + k_c) * p + l * k_c;
    let rk4 = |p: T, h: T| {
        let half = T::lit(0.5) * h;
        let k1 = rate(p);
        let k2 = rate(p + half * k1);
        let k3 = rate(p + half * k2);
        let k4 = rate(p + h * k3);
        p + h / T::lit(6.0) * (k1 + T::lit(2.0) * (k2 + k3) + k4)
    };
    // The rate grows with φ, so the linearized climb time bounds the true one.
    let upper = (target - phi0) / rate(phi0);
    let h = upper / T::from_usize_lossy(BOUND_STEPS);
    let (mut t, mut phi) = (T::zero(), phi0);
    for _ in 0..2 * BOUND_STEPS {
        let next = rk4(phi, h);
        if next >= target {
            let (mut lo, mut hi) = (T::zero(), h);
            for _ in 0..100 {
                let mid = T::lit(0.5) * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if rk4(phi, mid) >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(t + T::lit(0.5) * (lo + hi));
        }
        t = t + h;
        phi = next;
    }
    Err(Error::degenerate(
        "inter-event bound integration did not reach the threshold",
    ))
}

/// Keeps only the newest point. Returns the reduced model.
pub fn forget_all<T: Scalar>(model: &AffineModel<T>) -> Result<AffineModel<T>> {
    let mut m = model.clone();
    while m.len() > 1 {
        m = m.remove_point(0)?;
    }
    Ok(m)
}

/// Outcome of [`forget_to_budget`].
#[derive(Debug, Clone)]
pub struct BudgetReduction<T: Scalar> {
    pub model: AffineModel<T>,
    /// Removed points as indices into the dataset before reduction.
    pub removed: Vec<usize>,
    /// Posterior standard deviation at the current state after reduction.
    pub sigma_after: T,
    /// Greedy elimination could not keep the trigger inequality; only the newest point was kept.
    pub fallback: bool,
    /// `β σ_after < k_c max(|r|, r_min)`.
    pub condition_holds: bool,
}

/// Greedy backward elimination down to `budget` points. The newest point
/// (last in the dataset) is never removed. Each round drops the point whose
/// removal leaves the smallest posterior standard deviation at `current_x`,
/// oldest first on ties. If the final set violates the trigger inequality the
/// model falls back to the newest point alone.
#[allow(clippy::too_many_arguments)]
pub fn forget_to_budget<T: Scalar>(
    model: &AffineModel<T>,
    budget: usize,
    current_x: &[T],
    u_query: Option<T>,
    r: T,
    k_c: T,
    beta: T,
    r_min: T,
) -> Result<BudgetReduction<T>> {
    if budget == 0 {
        return Err(Error::contract("budget must be at least 1"));
    }
    if model.is_empty() {
        return Err(Error::contract("cannot reduce an empty dataset"));
    }
    let sigma_at =
        |m: &AffineModel<T>| -> Result<T> { Ok(m.predict_fg_variance(current_x, u_query)?.sqrt()) };
    let holds = |s: T| beta * s < k_c * r.abs().max(r_min);

    let mut current = model.clone();
    let mut original: Vec<usize> = (0..model.len()).collect();
    let mut removed = Vec::new();
    let tie = T::lit(1e-14);
    while current.len() > budget {
        let mut best: Option<(usize, T, AffineModel<T>)> = None;
        for i in 0..current.len() - 1 {
            let candidate = current.remove_point(i)?;
            let var = candidate.predict_fg_variance(current_x, u_query)?;
            if best.as_ref().is_none_or(|b| var < b.1 - tie) {
                best = Some((i, var, candidate));
            }
        }
        let (i, _, next) = best.expect("at least two points remain");
        removed.push(original.remove(i));
        current = next;
    }
    let sigma = sigma_at(&current)?;
    if holds(sigma) || current.len() == 1 {
        return Ok(BudgetReduction {
            model: current,
            removed,
            sigma_after: sigma,
            fallback: false,
            condition_holds: holds(sigma),
        });
    }
    log::warn!("budget elimination broke the trigger inequality; keeping only the newest point");
    let single = forget_all(model)?;
    let sigma = sigma_at(&single)?;
    Ok(BudgetReduction {
        model: single,
        removed: (0..model.len() - 1).collect(),
        sigma_after: sigma,
        fallback: true,
        condition_holds: holds(sigma),
    })
}
