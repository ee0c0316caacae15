//! Exact Gaussian process regression with incremental dataset updates.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{cross_covariance_wide, gram, gram_wide, regularized_cholesky, Kernel};
use crate::linalg::CholeskyFactor;
use crate::scalar::{dot_wide, Real, Scalar};

/// Training data: inputs, scalar targets and one weight (the recorded control
/// value) per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Vec<Vec<T>>,
    pub targets: Vec<T>,
    pub controls: Vec<T>,
    pub noise_variance: T,
}

impl<T: Scalar> Dataset<T> {
    pub fn empty(noise_variance: T) -> Self {
        Self {
            inputs: Vec::new(),
            targets: Vec::new(),
            controls: Vec::new(),
            noise_variance,
        }
    }

    pub fn new(
        inputs: Vec<Vec<T>>,
        targets: Vec<T>,
        controls: Vec<T>,
        noise_variance: T,
    ) -> Result<Self> {
        let d = Self {
            inputs,
            targets,
            controls,
            noise_variance,
        };
        d.validate()?;
        Ok(d)
    }

    /// Dataset whose weights are all zero (plain, unweighted regression).
    pub fn unweighted(inputs: Vec<Vec<T>>, targets: Vec<T>, noise_variance: T) -> Result<Self> {
        let controls = vec![T::zero(); inputs.len()];
        Self::new(inputs, targets, controls, noise_variance)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, x: Vec<T>, y: T, u: T) {
        self.inputs.push(x);
        self.targets.push(y);
        self.controls.push(u);
    }

    pub fn remove(&mut self, index: usize) {
        self.inputs.remove(index);
        self.targets.remove(index);
        self.controls.remove(index);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.inputs.len();
        if self.targets.len() != n || self.controls.len() != n {
            return Err(Error::contract(format!(
                "dataset has {} inputs, {} targets, {} controls",
                n,
                self.targets.len(),
                self.controls.len()
            )));
        }
        if !(self.noise_variance >= T::zero()) || !self.noise_variance.is_finite() {
            return Err(Error::contract(
                "noise variance must be finite and non-negative",
            ));
        }
        if let Some(first) = self.inputs.first() {
            if self.inputs.iter().any(|x| x.len() != first.len()) {
                return Err(Error::contract("inputs of differing dimension"));
            }
        }
        if self
            .targets
            .iter()
            .chain(&self.controls)
            .any(|v| !v.is_finite())
            || self.inputs.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::contract("dataset contains non-finite values"));
        }
        Ok(())
    }

    fn check_duplicate(&self, x: &[T], u: T, skip: Option<usize>) -> Result<()> {
        if self.noise_variance > T::zero() {
            return Ok(());
        }
        for (i, (xi, &ui)) in self.inputs.iter().zip(&self.controls).enumerate() {
            if Some(i) != skip && xi.as_slice() == x && ui == u {
                return Err(Error::degenerate(format!(
                    "duplicate noiseless input at index {i}"
                )));
            }
        }
        Ok(())
    }

    fn check_duplicates(&self) -> Result<()> {
        for i in 0..self.len() {
            self.check_duplicate(&self.inputs[i], self.controls[i], Some(i))?;
        }
        Ok(())
    }
}

/// Prior mean `m(x, w)` as a shared function handle. The weight argument lets
/// the control-affine model express the prior `u · m_g(x)` of its targets.
type MeanFn<T> = Arc<dyn Fn(&[T], T) -> T + Send + Sync>;

#[derive(Clone)]
pub struct PriorMean<T> {
    f: MeanFn<T>,
    label: &'static str,
}

impl<T: Scalar> PriorMean<T> {
    pub fn zero() -> Self {
        Self {
            f: Arc::new(|_, _| T::zero()),
            label: "zero",
        }
    }

    pub fn constant(c: T) -> Self {
        Self {
            f: Arc::new(move |_, _| c),
            label: "constant",
        }
    }

    pub fn from_fn(f: impl Fn(&[T], T) -> T + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            label: "function",
        }
    }

    pub fn eval(&self, x: &[T], w: T) -> T {
        (self.f)(x, w)
    }
}

impl<T> fmt::Debug for PriorMean<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PriorMean({})", self.label)
    }
}

/// Factorized posterior for a fixed dataset, kernel and prior mean.
///
/// The factor, residuals and weights are held in the scalar's wide type
/// ([`Scalar::Wide`]) so that nearly collinear training points still give
/// accurate variances. Immutable: [`Posterior::add_point`] and
/// [`Posterior::remove_point`] return new snapshots.
#[derive(Debug, Clone)]
pub struct Posterior<T: Scalar> {
    kernel: Kernel<T>,
    prior_mean: PriorMean<T>,
    data: Dataset<T>,
    jitter: T::Wide,
    factor: CholeskyFactor<T::Wide>,
    residual: Vec<T::Wide>,
    alpha: Vec<T::Wide>,
}

/// Conditions a GP on `dataset`.
pub fn fit<T: Scalar>(
    dataset: Dataset<T>,
    kernel: Kernel<T>,
    prior_mean: PriorMean<T>,
) -> Result<Posterior<T>> {
    Posterior::fit(dataset, kernel, prior_mean)
}

impl<T: Scalar> Posterior<T> {
    pub fn fit(dataset: Dataset<T>, kernel: Kernel<T>, prior_mean: PriorMean<T>) -> Result<Self> {
        dataset.validate()?;
        dataset.check_duplicates()?;
        let residual: Vec<T::Wide> = dataset
            .inputs
            .iter()
            .zip(&dataset.targets)
            .zip(&dataset.controls)
            .map(|((x, &y), &u)| (y - prior_mean.eval(x, u)).widen())
            .collect();
        let (factor, jitter) = if dataset.is_empty() {
            (CholeskyFactor::empty(), T::Wide::zero())
        } else {
            let mut k = gram_wide(&kernel, &dataset.inputs, Some(&dataset.controls))?;
            k.add_diagonal(dataset.noise_variance.widen());
            regularized_cholesky(&k, kernel.signal_scale().widen())?
        };
        let alpha = factor.solve(&residual);
        Ok(Self {
            kernel,
            prior_mean,
            data: dataset,
            jitter,
            factor,
            residual,
            alpha,
        })
    }

    /// The prior: no data conditioned on.
    pub fn prior(kernel: Kernel<T>, prior_mean: PriorMean<T>, noise_variance: T) -> Self {
        Self {
            kernel,
            prior_mean,
            data: Dataset::empty(noise_variance),
            jitter: T::Wide::zero(),
            factor: CholeskyFactor::empty(),
            residual: Vec::new(),
            alpha: Vec::new(),
        }
    }

    pub fn kernel(&self) -> &Kernel<T> {
        &self.kernel
    }

    pub fn prior_mean(&self) -> &PriorMean<T> {
        &self.prior_mean
    }

    pub fn dataset(&self) -> &Dataset<T> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Diagonal jitter added on top of the noise variance.
    pub fn jitter(&self) -> T {
        T::narrow(self.jitter)
    }

    pub fn factor(&self) -> &CholeskyFactor<T::Wide> {
        &self.factor
    }

    /// `(K + (σ_on² + jitter) I)⁻¹ (y − m^X)`.
    pub fn alpha(&self) -> &[T::Wide] {
        &self.alpha
    }

    fn weight_for_query(&self, u: Option<T>) -> Result<T> {
        match u {
            Some(u) => Ok(u),
            None if self.kernel.uses_weights() => Err(Error::contract(
                "a control value is required to query a weighted kernel",
            )),
            None => Ok(T::zero()),
        }
    }

    /// Covariances between the training points and a query point under an
    /// arbitrary kernel (used for component-wise predictions).
    pub fn cross_with(&self, kernel: &Kernel<T>, x: &[T], w: T) -> Result<Vec<T::Wide>> {
        cross_covariance_wide(kernel, &self.data.inputs, &self.data.controls, x, w)
    }

    /// Mean and variance of any jointly Gaussian quantity given its prior mean,
    /// prior variance and covariance `cross` with the observations.
    pub fn condition(
        &self,
        cross: &[T::Wide],
        prior_mean: T,
        prior_var: T::Wide,
    ) -> Result<(T, T)> {
        let mean = prior_mean + T::narrow(dot_wide(cross, &self.alpha));
        let v = self.factor.solve_lower(cross);
        let var = T::narrow(prior_var - dot_wide(&v, &v));
        Ok((mean, clamp_variance(var, T::narrow(prior_var))?))
    }

    /// Posterior mean only; O(N).
    pub fn mean(&self, x: &[T], u: Option<T>) -> Result<T> {
        let w = self.weight_for_query(u)?;
        let k = self.cross_with(&self.kernel, x, w)?;
        Ok(self.prior_mean.eval(x, w) + T::narrow(dot_wide(&k, &self.alpha)))
    }

    /// Posterior `(mean, variance)` at `x` (with control `u` for weighted kernels).
    pub fn predict(&self, x: &[T], u: Option<T>) -> Result<(T, T)> {
        let w = self.weight_for_query(u)?;
        let k = self.cross_with(&self.kernel, x, w)?;
        let kss = self.kernel.eval_wide(x, w, x, w)?;
        self.condition(&k, self.prior_mean.eval(x, w), kss)
    }

    /// New snapshot with `(x, y, u)` appended; extends the factor by one row.
    pub fn add_point(&self, x: Vec<T>, y: T, u: T) -> Result<Self> {
        if let Some(first) = self.data.inputs.first() {
            if first.len() != x.len() {
                return Err(Error::contract("new input has the wrong dimension"));
            }
        }
        if !y.is_finite() || !u.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite training point"));
        }
        self.data.check_duplicate(&x, u, None)?;

        let cross = self.cross_with(&self.kernel, &x, u)?;
        let diag =
            self.kernel.eval_wide(&x, u, &x, u)? + self.data.noise_variance.widen() + self.jitter;
        let residual = (y - self.prior_mean.eval(&x, u)).widen();
        let mut next = self.clone();
        next.data.push(x, y, u);
        if next.factor.push_row(&cross, diag).is_none() {
            return Self::fit(next.data, next.kernel, next.prior_mean);
        }
        next.residual.push(residual);
        next.alpha = next.factor.solve(&next.residual);
        Ok(next)
    }

    /// New snapshot with point `index` deleted; downdates the factor.
    pub fn remove_point(&self, index: usize) -> Result<Self> {
        if index >= self.len() {
            return Err(Error::contract(format!(
                "index {index} out of range for {} points",
                self.len()
            )));
        }
        let mut next = self.clone();
        next.factor.remove(index);
        next.data.remove(index);
        next.residual.remove(index);
        if next.data.is_empty() {
            next.jitter = T::Wide::zero();
        }
        next.alpha = next.factor.solve(&next.residual);
        Ok(next)
    }
}

/// Rounding can push a variance slightly below zero; anything within
/// `√ε · prior_var` of zero is clamped, larger negatives are faults.
fn clamp_variance<T: Scalar>(var: T, prior_var: T) -> Result<T> {
    if var >= T::zero() {
        Ok(var)
    } else if var >= -T::epsilon().sqrt() * prior_var.abs() {
        Ok(T::zero())
    } else {
        Err(Error::degenerate(format!(
            "negative posterior variance {var:e}"
        )))
    }
}

/// `(mean, variance)` at a query point; free-function form of [`Posterior::predict`].
pub fn posterior<T: Scalar>(
    state: &Posterior<T>,
    x_star: &[T],
    u_star: Option<T>,
) -> Result<(T, T)> {
    state.predict(x_star, u_star)
}

/// Log marginal likelihood and its gradient with respect to the kernel's log
/// hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEval<T> {
    pub value: T,
    pub gradient: Vec<T>,
}

/// `−½ rᵀ(K + σ²I)⁻¹r − ½ log det(K + σ²I) − (N/2) log 2π` with `r = y − m`.
pub fn log_marginal_likelihood<T: Scalar>(
    dataset: &Dataset<T>,
    kernel: &Kernel<T>,
    prior_mean: &PriorMean<T>,
) -> Result<T> {
    let (factor, residual) = likelihood_factor(dataset, kernel, prior_mean)?;
    let alpha = factor.solve(&residual);
    Ok(T::from_base(lml_value(&factor, &residual, &alpha)))
}

/// [`log_marginal_likelihood`] together with its analytic gradient.
pub fn log_marginal_likelihood_with_grad<T: Scalar>(
    dataset: &Dataset<T>,
    kernel: &Kernel<T>,
    prior_mean: &PriorMean<T>,
) -> Result<LikelihoodEval<T>> {
    let (factor, residual) = likelihood_factor(dataset, kernel, prior_mean)?;
    let alpha = factor.solve(&residual);
    let value = T::from_base(lml_value(&factor, &residual, &alpha));
    let alpha: Vec<T> = alpha.into_iter().map(T::from_base).collect();

    // ∂/∂θ = ½ tr((α αᵀ − K⁻¹) ∂K/∂θ)
    let inv = factor.inverse();
    let n = dataset.len();
    let mut gradient = vec![T::zero(); kernel.n_params()];
    let half = T::lit(0.5);
    for i in 0..n {
        for j in 0..=i {
            let dk = kernel.grad_log_params(
                &dataset.inputs[i],
                dataset.controls[i],
                &dataset.inputs[j],
                dataset.controls[j],
            )?;
            let weight = alpha[i] * alpha[j] - T::from_base(inv[(i, j)]);
            let weight = if i == j { weight * half } else { weight };
            for (g, d) in gradient.iter_mut().zip(dk) {
                *g = *g + weight * d;
            }
        }
    }
    Ok(LikelihoodEval { value, gradient })
}

/// Factor of `K + σ²I` and the residual `y − m`, in the base scalar.
type BaseFactor<T> = (
    CholeskyFactor<<T as Scalar>::Base>,
    Vec<<T as Scalar>::Base>,
);

fn likelihood_factor<T: Scalar>(
    dataset: &Dataset<T>,
    kernel: &Kernel<T>,
    prior_mean: &PriorMean<T>,
) -> Result<BaseFactor<T>> {
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("likelihood of an empty dataset"));
    }
    let mut k = gram(kernel, &dataset.inputs, Some(&dataset.controls))?;
    k.add_diagonal(dataset.noise_variance.base());
    let (factor, _) = regularized_cholesky(&k, kernel.signal_scale().base())?;
    let residual = dataset
        .inputs
        .iter()
        .zip(&dataset.targets)
        .zip(&dataset.controls)
        .map(|((x, &y), &u)| (y - prior_mean.eval(x, u)).base())
        .collect();
    Ok((factor, residual))
}

fn lml_value<R: Real>(factor: &CholeskyFactor<R>, residual: &[R], alpha: &[R]) -> R {
    let n = R::from_f64(residual.len() as f64);
    let half = R::from_f64(0.5);
    let log_two_pi = R::from_f64((2.0 * std::f64::consts::PI).ln());
    -half * dot_wide(residual, alpha) - half * factor.log_det() - half * n * log_two_pi
}
