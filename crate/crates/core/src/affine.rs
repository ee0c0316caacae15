//! Closed-loop identification of `f` and `g` in `ẋ_n = f(x) + g(x) u`.
//!
//! With `g` unknown, the targets are raw sums `f(x_i) + g(x_i) u_i + ε` and the
//! GP uses the compound kernel `k_f + u k_g u'` with prior mean `u · m_g(x)`;
//! the two summands are recovered by splitting the kernel rows against the
//! shared weight vector. With `g` known, the targets are residuals
//! `y − g(x) u` and a plain GP models `f`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gp::{Dataset, Posterior, PriorMean};
use crate::kernels::Kernel;
use crate::scalar::{dot_wide, Real, Scalar};

/// Shared handle to a scalar state function (`g`, `m_g`, …).
pub type StateFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// `max(y, η)`.
pub fn sanitize_positive<T: Scalar>(y: T, eta: T) -> T {
    debug_assert!(eta > T::zero());
    y.max(eta)
}

#[derive(Clone)]
pub enum GMode<T> {
    Unknown,
    Known(StateFn<T>),
}

impl<T> fmt::Debug for GMode<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GMode::Unknown => f.write_str("Unknown"),
            GMode::Known(_) => f.write_str("Known(..)"),
        }
    }
}

/// Direct measurements of `f`, recorded while the control is switched off.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopBatch<T> {
    pub inputs: Vec<Vec<T>>,
    pub targets: Vec<T>,
}

/// Model estimates at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgEstimate<T> {
    pub f_hat: T,
    pub g_hat: T,
    /// The positivity floor replaced a smaller raw `ĝ`.
    pub floored: bool,
}

/// Kernel rows of one query state against a model's training set: `k_f` rows
/// and the `u_i k_g` rows (the latter empty for a known-g model).
#[derive(Debug, Clone)]
pub struct ModelQuery<T: Scalar> {
    x: Vec<T>,
    cf: Vec<T::Wide>,
    cg: Vec<T::Wide>,
}

/// Posterior components of a [`Kernel::Sum`] GP at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumDecomposition<T> {
    pub mean_a: T,
    pub var_a: T,
    pub mean_b: T,
    pub var_b: T,
}

/// Splits the posterior of a sum-kernel GP into its two summands. The prior
/// mean of the full GP is attributed to the first summand.
pub fn decompose_sum<T: Scalar>(
    post: &Posterior<T>,
    x: &[T],
    w: Option<T>,
) -> Result<SumDecomposition<T>> {
    let Kernel::Sum(ka, kb) = post.kernel() else {
        return Err(Error::contract("decompose_sum requires a Sum kernel"));
    };
    let w = match w {
        Some(w) => w,
        None if post.kernel().uses_weights() => {
            return Err(Error::contract(
                "a weight is required to query a weighted kernel",
            ))
        }
        None => T::zero(),
    };
    let ca = post.cross_with(ka, x, w)?;
    let cb = post.cross_with(kb, x, w)?;
    let (mean_a, var_a) =
        post.condition(&ca, post.prior_mean().eval(x, w), ka.eval_wide(x, w, x, w)?)?;
    let (mean_b, var_b) = post.condition(&cb, T::zero(), kb.eval_wide(x, w, x, w)?)?;
    Ok(SumDecomposition {
        mean_a,
        var_a,
        mean_b,
        var_b,
    })
}

/// GP model of the control-affine dynamics.
#[derive(Clone)]
pub struct AffineModel<T: Scalar> {
    posterior: Posterior<T>,
    prior_g: StateFn<T>,
    eta: T,
    mode: GMode<T>,
}

impl<T: Scalar> fmt::Debug for AffineModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineModel")
            .field("mode", &self.mode)
            .field("eta", &self.eta)
            .field("posterior", &self.posterior)
            .finish()
    }
}

fn compound_prior<T: Scalar>(prior_g: &StateFn<T>) -> PriorMean<T> {
    let m = Arc::clone(prior_g);
    PriorMean::from_fn(move |x, u| u * m(x))
}

impl<T: Scalar> AffineModel<T> {
    /// Joint `f̂`/`ĝ` model with an empty dataset: `f̂ = 0`, `ĝ = m_g`.
    pub fn unknown_g(
        kf: Kernel<T>,
        kg: Kernel<T>,
        prior_g: StateFn<T>,
        eta: T,
        noise_variance: T,
    ) -> Result<Self> {
        if !(eta > T::zero()) {
            return Err(Error::contract("positivity floor must be > 0"));
        }
        let kernel = Kernel::compound(kf, kg);
        let posterior = Posterior::prior(kernel, compound_prior(&prior_g), noise_variance);
        Ok(Self {
            posterior,
            prior_g,
            eta,
            mode: GMode::Unknown,
        })
    }

    /// Residual model of `f` for a known `g`.
    pub fn known_g(kf: Kernel<T>, g: StateFn<T>, noise_variance: T) -> Self {
        let posterior = Posterior::prior(kf, PriorMean::zero(), noise_variance);
        let prior_g = Arc::clone(&g);
        Self {
            posterior,
            prior_g,
            eta: T::min_positive_value(),
            mode: GMode::Known(g),
        }
    }

    pub fn mode(&self) -> &GMode<T> {
        &self.mode
    }

    pub fn is_known_g(&self) -> bool {
        matches!(self.mode, GMode::Known(_))
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn posterior(&self) -> &Posterior<T> {
        &self.posterior
    }

    /// Stored training data. In known-g mode the targets are residuals.
    pub fn dataset(&self) -> &Dataset<T> {
        self.posterior.dataset()
    }

    pub fn len(&self) -> usize {
        self.posterior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posterior.is_empty()
    }

    /// Full GP kernel (compound in unknown-g mode).
    pub fn kernel(&self) -> &Kernel<T> {
        self.posterior.kernel()
    }

    fn kernel_parts(&self) -> Result<(&Kernel<T>, &Kernel<T>)> {
        match self.posterior.kernel() {
            Kernel::CompoundAffine { f, g } => Ok((f, g)),
            _ => Err(Error::contract("model is not in unknown-g mode")),
        }
    }

    /// Target actually stored for a raw measurement `y = ẋ_n` taken under control `u`.
    pub fn stored_target(&self, x: &[T], y: T, u: T) -> T {
        match &self.mode {
            GMode::Unknown => y,
            GMode::Known(g) => y - g(x) * u,
        }
    }

    /// Adds a raw measurement of `ẋ_n` recorded under control `u`.
    pub fn add_measurement(&self, x: Vec<T>, y: T, u: T) -> Result<Self> {
        let target = self.stored_target(&x, y, u);
        let posterior = self.posterior.add_point(x, target, u)?;
        Ok(Self {
            posterior,
            ..self.clone()
        })
    }

    pub fn remove_point(&self, index: usize) -> Result<Self> {
        let posterior = self.posterior.remove_point(index)?;
        Ok(Self {
            posterior,
            ..self.clone()
        })
    }

    /// Refits on `dataset` (targets already in stored form) with `kernel`.
    pub fn refit(&self, dataset: Dataset<T>, kernel: Kernel<T>) -> Result<Self> {
        if matches!(self.mode, GMode::Unknown) && !matches!(kernel, Kernel::CompoundAffine { .. }) {
            return Err(Error::contract("unknown-g model needs a compound kernel"));
        }
        let posterior = Posterior::fit(dataset, kernel, self.posterior.prior_mean().clone())?;
        Ok(Self {
            posterior,
            ..self.clone()
        })
    }

    /// Kernel rows against the training set at `x`, shared by the estimates
    /// and the variances at that state.
    pub fn query(&self, x: &[T]) -> Result<ModelQuery<T>> {
        let (cf, cg) = match &self.mode {
            GMode::Unknown => {
                let (kf, kg) = self.kernel_parts()?;
                let data = self.posterior.dataset();
                let cg = data
                    .inputs
                    .iter()
                    .zip(&data.controls)
                    .map(|(xi, &ui)| {
                        if ui == T::zero() {
                            Ok(T::Wide::zero())
                        } else {
                            Ok(ui.widen() * kg.eval_wide(xi, ui, x, T::zero())?)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                (self.posterior.cross_with(kf, x, T::zero())?, cg)
            }
            GMode::Known(_) => (
                self.posterior
                    .cross_with(self.posterior.kernel(), x, T::zero())?,
                Vec::new(),
            ),
        };
        Ok(ModelQuery {
            x: x.to_vec(),
            cf,
            cg,
        })
    }

    /// Estimates from a [`ModelQuery`] built by this model.
    pub fn estimates_at(&self, q: &ModelQuery<T>) -> Result<FgEstimate<T>> {
        let alpha = self.posterior.alpha();
        let f_hat = T::narrow(dot_wide(&q.cf, alpha));
        match &self.mode {
            GMode::Unknown => {
                let raw = (self.prior_g)(&q.x) + T::narrow(dot_wide(&q.cg, alpha));
                let g_hat = sanitize_positive(raw, self.eta);
                let floored = raw < self.eta;
                if floored {
                    log::warn!(
                        "positivity floor active: raw g estimate {raw:e} at {:?}",
                        q.x
                    );
                }
                Ok(FgEstimate {
                    f_hat,
                    g_hat,
                    floored,
                })
            }
            GMode::Known(g) => {
                let g_hat = g(&q.x);
                if !(g_hat > T::zero()) {
                    return Err(Error::Plant(format!(
                        "known g is not positive at {:?}",
                        q.x
                    )));
                }
                Ok(FgEstimate {
                    f_hat,
                    g_hat,
                    floored: false,
                })
            }
        }
    }

    /// Variance from a [`ModelQuery`]; see [`AffineModel::predict_fg_variance`].
    pub fn variance_at(&self, q: &ModelQuery<T>, u_hypothetical: Option<T>) -> Result<T> {
        let zero = T::zero();
        match (&self.mode, u_hypothetical) {
            (GMode::Known(_), _) => {
                let kss = self.posterior.kernel().eval_wide(&q.x, zero, &q.x, zero)?;
                Ok(self.posterior.condition(&q.cf, zero, kss)?.1)
            }
            (GMode::Unknown, u) => {
                let (kf, kg) = self.kernel_parts()?;
                let mut kss = kf.eval_wide(&q.x, zero, &q.x, zero)?;
                let mut cross = q.cf.clone();
                if let Some(u) = u.filter(|&u| u != zero) {
                    let uw = u.widen();
                    kss = kss + uw * uw * kg.eval_wide(&q.x, zero, &q.x, zero)?;
                    for (c, &g) in cross.iter_mut().zip(&q.cg) {
                        *c = *c + uw * g;
                    }
                }
                Ok(self.posterior.condition(&cross, zero, kss)?.1)
            }
        }
    }

    /// `(f̂, ĝ)` from the joint posterior; unknown-g mode only.
    pub fn predict_fg(&self, x: &[T]) -> Result<FgEstimate<T>> {
        self.kernel_parts()?;
        self.estimates_at(&self.query(x)?)
    }

    /// `f̂` from the residual GP; known-g mode only.
    pub fn predict_f_known_g(&self, x: &[T]) -> Result<T> {
        if !self.is_known_g() {
            return Err(Error::contract("model is not in known-g mode"));
        }
        self.posterior.mean(x, None)
    }

    /// Estimates usable by the control law in either mode.
    pub fn estimates(&self, x: &[T]) -> Result<FgEstimate<T>> {
        self.estimates_at(&self.query(x)?)
    }

    /// Posterior variance used by the event trigger. In known-g mode this is
    /// the residual GP's variance. In unknown-g mode it is the variance of
    /// `f + g u` at the hypothetical control `u`, or of the `f` summand alone
    /// when no control is given.
    pub fn predict_fg_variance(&self, x: &[T], u_hypothetical: Option<T>) -> Result<T> {
        self.variance_at(&self.query(x)?, u_hypothetical)
    }

    /// Merges open-loop samples (control off, so each target observes `f`
    /// alone). They enter the compound dataset with control `0`, which zeroes
    /// their covariance with `g`.
    pub fn augment_open_loop(&self, batch: &OpenLoopBatch<T>) -> Result<Self> {
        if self.is_known_g() {
            return Err(Error::contract(
                "open-loop fusion applies to the unknown-g model",
            ));
        }
        if batch.inputs.len() != batch.targets.len() {
            return Err(Error::contract(
                "open-loop batch inputs and targets differ in length",
            ));
        }
        let mut posterior = self.posterior.clone();
        for (x, &y) in batch.inputs.iter().zip(&batch.targets) {
            posterior = posterior.add_point(x.clone(), y, T::zero())?;
        }
        Ok(Self {
            posterior,
            ..self.clone()
        })
    }
}
