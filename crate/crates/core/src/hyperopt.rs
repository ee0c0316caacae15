//! Marginal-likelihood hyperparameter optimization.
//!
//! Multi-start projected gradient ascent in log-parameter space with a
//! backtracking step. Each restart is monotone, so the reported optimum is
//! never worse than any restart's starting point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::gp::{log_marginal_likelihood_with_grad, Dataset, LikelihoodEval, PriorMean};
use crate::kernels::Kernel;
use crate::scalar::{norm, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    pub n_restarts: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Standard deviation of the log-space perturbation for restarts after the first.
    pub restart_spread: f64,
    pub seed: u64,
    /// Box on log lengthscales.
    pub log_lengthscale_bounds: (f64, f64),
    /// Box on log signal variances.
    pub log_variance_bounds: (f64, f64),
    /// Replaces `log_variance_bounds` for the `g` part of a compound kernel.
    /// A small `σ_g²` lets the prior mean `m_g` dominate the data term, which
    /// keeps `ĝ` positive.
    pub g_log_variance_bounds: Option<(f64, f64)>,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            n_restarts: 3,
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            restart_spread: 1.0,
            seed: 0,
            log_lengthscale_bounds: (1e-2f64.ln(), 1e3f64.ln()),
            log_variance_bounds: (1e-4f64.ln(), 1e4f64.ln()),
            g_log_variance_bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartTrace<T> {
    pub initial: Vec<T>,
    /// Likelihood after every accepted iterate, starting with the initial value.
    pub likelihoods: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperOptReport<T> {
    pub kernel: Kernel<T>,
    pub log_params: Vec<T>,
    pub log_likelihood: T,
    pub restarts: Vec<RestartTrace<T>>,
    /// Index into `restarts` of the winner.
    pub best_restart: usize,
    pub converged: bool,
}

/// Maximizes the log marginal likelihood over the hyperparameters of
/// `kernel_family`, starting from `init` (log space) and `n_restarts - 1`
/// random perturbations of it.
pub fn optimize_hyperparameters<T: Scalar>(
    dataset: &Dataset<T>,
    kernel_family: &Kernel<T>,
    prior_mean: &PriorMean<T>,
    init: &[T],
    options: &OptimizerOptions,
) -> Result<HyperOptReport<T>> {
    if dataset.is_empty() {
        return Err(Error::contract("hyperparameter optimization needs data"));
    }
    if options.n_restarts == 0 {
        return Err(Error::contract("n_restarts must be at least 1"));
    }
    if init.len() != kernel_family.n_params() {
        return Err(Error::contract(
            "initial hyperparameter vector has the wrong length",
        ));
    }
    let bounds = param_bounds(kernel_family, options);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let spread = Normal::new(0.0, options.restart_spread.max(0.0)).expect("finite spread");

    let mut restarts = Vec::with_capacity(options.n_restarts);
    let mut best: Option<(usize, Vec<T>, T)> = None;
    for r in 0..options.n_restarts {
        let start: Vec<T> = init
            .iter()
            .zip(&bounds)
            .map(|(&p, &(lo, hi))| {
                let jump = if r == 0 { 0.0 } else { spread.sample(&mut rng) };
                project(p + T::lit(jump), lo, hi)
            })
            .collect();
        let (params, trace) = ascend(dataset, kernel_family, prior_mean, start, &bounds, options);
        if let Some(&last) = trace.likelihoods.last() {
            if best.as_ref().is_none_or(|b| last > b.2) {
                best = Some((r, params, last));
            }
        }
        restarts.push(trace);
    }

    match best {
        Some((idx, params, value)) => Ok(HyperOptReport {
            kernel: kernel_family.with_log_params(&params)?,
            log_params: params,
            log_likelihood: value,
            converged: restarts[idx].converged,
            best_restart: idx,
            restarts,
        }),
        None => {
            // No restart could even evaluate its starting point; fall back to init.
            log::warn!("hyperparameter optimization failed at every starting point");
            Ok(HyperOptReport {
                kernel: kernel_family.with_log_params(init)?,
                log_params: init.to_vec(),
                log_likelihood: T::neg_infinity(),
                restarts,
                best_restart: 0,
                converged: false,
            })
        }
    }
}

fn param_bounds<T: Scalar>(kernel: &Kernel<T>, options: &OptimizerOptions) -> Vec<(T, T)> {
    let mut out = Vec::with_capacity(kernel.n_params());
    collect_bounds(kernel, options, &mut out);
    out
}

fn collect_bounds<T: Scalar>(
    kernel: &Kernel<T>,
    options: &OptimizerOptions,
    out: &mut Vec<(T, T)>,
) {
    collect_bounds_with(kernel, options, options.log_variance_bounds, out)
}

fn collect_bounds_with<T: Scalar>(
    kernel: &Kernel<T>,
    options: &OptimizerOptions,
    variance: (f64, f64),
    out: &mut Vec<(T, T)>,
) {
    match kernel {
        Kernel::SeArd(h) => {
            let (llo, lhi) = options.log_lengthscale_bounds;
            out.extend(std::iter::repeat_n((T::lit(llo), T::lit(lhi)), h.dim()));
            out.push((T::lit(variance.0), T::lit(variance.1)));
        }
        Kernel::Sum(a, b) => {
            collect_bounds_with(a, options, variance, out);
            collect_bounds_with(b, options, variance, out);
        }
        Kernel::Scaled(k) => collect_bounds_with(k, options, variance, out),
        Kernel::CompoundAffine { f, g } => {
            collect_bounds_with(f, options, variance, out);
            collect_bounds_with(
                g,
                options,
                options.g_log_variance_bounds.unwrap_or(variance),
                out,
            );
        }
    }
}

fn project<T: Scalar>(v: T, lo: T, hi: T) -> T {
    v.max(lo).min(hi)
}

fn evaluate<T: Scalar>(
    dataset: &Dataset<T>,
    family: &Kernel<T>,
    prior_mean: &PriorMean<T>,
    params: &[T],
) -> Option<LikelihoodEval<T>> {
    let kernel = family.with_log_params(params).ok()?;
    let eval = log_marginal_likelihood_with_grad(dataset, &kernel, prior_mean).ok()?;
    (eval.value.is_finite() && eval.gradient.iter().all(|g| g.is_finite())).then_some(eval)
}

/// Gradient with components that push against an active bound zeroed.
fn projected_gradient<T: Scalar>(params: &[T], grad: &[T], bounds: &[(T, T)]) -> Vec<T> {
    params
        .iter()
        .zip(grad)
        .zip(bounds)
        .map(|((&p, &g), &(lo, hi))| {
            if (p <= lo && g < T::zero()) || (p >= hi && g > T::zero()) {
                T::zero()
            } else {
                g
            }
        })
        .collect()
}

fn ascend<T: Scalar>(
    dataset: &Dataset<T>,
    family: &Kernel<T>,
    prior_mean: &PriorMean<T>,
    start: Vec<T>,
    bounds: &[(T, T)],
    options: &OptimizerOptions,
) -> (Vec<T>, RestartTrace<T>) {
    let mut trace = RestartTrace {
        initial: start.clone(),
        likelihoods: Vec::new(),
        iterations: 0,
        converged: false,
    };
    let Some(mut current) = evaluate(dataset, family, prior_mean, &start) else {
        return (start, trace);
    };
    let mut params = start;
    trace.likelihoods.push(current.value);

    let tol = T::lit(options.gradient_tolerance);
    let min_step = T::lit(1e-12);
    let mut step = T::lit(0.5);
    for _ in 0..options.max_iterations {
        let pg = projected_gradient(&params, &current.gradient, bounds);
        let gnorm = norm(&pg);
        if gnorm <= tol {
            trace.converged = true;
            break;
        }
        let mut accepted = false;
        while step >= min_step {
            let candidate: Vec<T> = params
                .iter()
                .zip(&pg)
                .zip(bounds)
                .map(|((&p, &g), &(lo, hi))| project(p + step * g / gnorm, lo, hi))
                .collect();
            let moved: T = candidate
                .iter()
                .zip(&params)
                .zip(&pg)
                .map(|((&c, &p), &g)| (c - p) * g)
                .sum();
            if let Some(next) = evaluate(dataset, family, prior_mean, &candidate) {
                // Armijo sufficient increase along the projected path.
                if next.value >= current.value + T::lit(1e-4) * moved {
                    let gain = next.value - current.value;
                    params = candidate;
                    current = next;
                    trace.likelihoods.push(current.value);
                    step = (step * T::lit(2.0)).min(T::lit(4.0));
                    accepted = true;
                    if gain <= T::epsilon() * current.value.abs().max(T::one()) {
                        trace.converged = true;
                    }
                    break;
                }
            }
            step = step * T::lit(0.5);
        }
        trace.iterations += 1;
        if !accepted || trace.converged {
            break;
        }
    }
    (params, trace)
}
