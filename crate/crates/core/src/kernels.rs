//! Covariance functions and kernel algebra.
//!
//! Every kernel is evaluated on *weighted* points `(x, w)`. The weight is the
//! per-point scalar carried by the dataset: the control value active when the
//! sample was recorded, or the value of a known multiplicative function. Plain
//! squared-exponential kernels ignore it; [`Kernel::Scaled`] and
//! [`Kernel::CompoundAffine`] use it.

use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, Matrix};
use crate::scalar::{Real, Scalar};

/// Hyperparameters of a squared-exponential kernel with automatic relevance
/// determination.
#[derive(Debug, Clone, PartialEq)]
pub struct SeHyperparams<T> {
    /// One lengthscale per input dimension. `+inf` switches a dimension off.
    pub lengthscales: Vec<T>,
    pub signal_variance: T,
}

impl<T: Scalar> SeHyperparams<T> {
    pub fn new(lengthscales: Vec<T>, signal_variance: T) -> Result<Self> {
        if lengthscales.iter().any(|&l| !(l > T::zero())) {
            return Err(Error::contract("lengthscales must be positive"));
        }
        if !(signal_variance >= T::zero()) || !signal_variance.is_finite() {
            return Err(Error::contract(
                "signal variance must be finite and non-negative",
            ));
        }
        Ok(Self {
            lengthscales,
            signal_variance,
        })
    }

    /// Same lengthscale in every dimension.
    pub fn isotropic(dim: usize, lengthscale: T, signal_variance: T) -> Result<Self> {
        Self::new(vec![lengthscale; dim], signal_variance)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn check_dims(&self, x: &[T], x_prime: &[T]) -> Result<()> {
        if x.len() != self.dim() || x_prime.len() != self.dim() {
            return Err(Error::contract(format!(
                "SE kernel of dimension {} evaluated on points of dimension {} and {}",
                self.dim(),
                x.len(),
                x_prime.len()
            )));
        }
        Ok(())
    }

    fn scaled_sq_dist(&self, x: &[T], x_prime: &[T]) -> T {
        x.iter()
            .zip(x_prime)
            .zip(&self.lengthscales)
            .map(|((&a, &b), &l)| {
                let d = a - b;
                if d == T::zero() {
                    T::zero()
                } else {
                    (d / l) * (d / l)
                }
            })
            .sum()
    }

    pub fn eval(&self, x: &[T], x_prime: &[T]) -> Result<T> {
        self.check_dims(x, x_prime)?;
        Ok(self.signal_variance * (-self.scaled_sq_dist(x, x_prime) / T::lit(2.0)).exp())
    }

    /// [`SeHyperparams::eval`] carried out in the wide type.
    pub fn eval_wide(&self, x: &[T], x_prime: &[T]) -> Result<T::Wide> {
        self.check_dims(x, x_prime)?;
        let mut acc = T::Wide::zero();
        for ((&a, &b), &l) in x.iter().zip(x_prime).zip(&self.lengthscales) {
            if a == b || l.is_infinite() {
                continue;
            }
            let q = (a.widen() - b.widen()) / l.widen();
            acc = acc + q * q;
        }
        Ok(self.signal_variance.widen() * (-(acc * T::Wide::from_f64(0.5))).exp())
    }

    /// Partial derivatives with respect to `[ln l_1, …, ln l_n, ln σ²]`.
    pub fn grad(&self, x: &[T], x_prime: &[T]) -> Result<Vec<T>> {
        let k = self.eval(x, x_prime)?;
        let mut g: Vec<T> = x
            .iter()
            .zip(x_prime)
            .zip(&self.lengthscales)
            .map(|((&a, &b), &l)| {
                let d = a - b;
                if d == T::zero() {
                    T::zero()
                } else {
                    k * (d / l) * (d / l)
                }
            })
            .collect();
        g.push(k);
        Ok(g)
    }

    pub fn log_params(&self) -> Vec<T> {
        let mut p: Vec<T> = self.lengthscales.iter().map(|l| l.ln()).collect();
        p.push(self.signal_variance.ln());
        p
    }

    pub fn from_log_params(p: &[T]) -> Self {
        let (ls, var) = p.split_at(p.len() - 1);
        Self {
            lengthscales: ls.iter().map(|v| v.exp()).collect(),
            signal_variance: var[0].exp(),
        }
    }
}

/// `σ² exp(−Σ_j (x_j − x'_j)² / (2 l_j²))`.
pub fn se_eval<T: Scalar>(h: &SeHyperparams<T>, x: &[T], x_prime: &[T]) -> Result<T> {
    h.eval(x, x_prime)
}

/// Gradient of [`se_eval`] in log-parameter space.
pub fn se_grad<T: Scalar>(h: &SeHyperparams<T>, x: &[T], x_prime: &[T]) -> Result<Vec<T>> {
    h.grad(x, x_prime)
}

/// `k_f(x, x') + u · k_g(x, x') · u'`.
pub fn compound_eval<T: Scalar>(
    kf: &Kernel<T>,
    kg: &Kernel<T>,
    u_x: T,
    u_xp: T,
    x: &[T],
    x_prime: &[T],
) -> Result<T> {
    Ok(kf.eval(x, u_x, x_prime, u_xp)? + (u_x * u_xp) * kg.eval(x, u_x, x_prime, u_xp)?)
}

/// A covariance function assembled from squared-exponential building blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel<T> {
    SeArd(SeHyperparams<T>),
    /// `k_a + k_b`, the prior of a sum of independent functions.
    Sum(Box<Kernel<T>>, Box<Kernel<T>>),
    /// `h(x) k(x, x') h(x')` with `h` supplied through the point weights.
    Scaled(Box<Kernel<T>>),
    /// `k_f(x, x') + u k_g(x, x') u'` for control-affine dynamics `f + g u`.
    CompoundAffine {
        f: Box<Kernel<T>>,
        g: Box<Kernel<T>>,
    },
}

impl<T: Scalar> Kernel<T> {
    pub fn se(h: SeHyperparams<T>) -> Self {
        Kernel::SeArd(h)
    }

    pub fn sum(a: Kernel<T>, b: Kernel<T>) -> Self {
        Kernel::Sum(Box::new(a), Box::new(b))
    }

    pub fn scaled(inner: Kernel<T>) -> Self {
        Kernel::Scaled(Box::new(inner))
    }

    pub fn compound(f: Kernel<T>, g: Kernel<T>) -> Self {
        Kernel::CompoundAffine {
            f: Box::new(f),
            g: Box::new(g),
        }
    }

    pub fn eval(&self, x: &[T], w: T, x_prime: &[T], w_prime: T) -> Result<T> {
        match self {
            Kernel::SeArd(h) => h.eval(x, x_prime),
            Kernel::Sum(a, b) => {
                Ok(a.eval(x, w, x_prime, w_prime)? + b.eval(x, w, x_prime, w_prime)?)
            }
            Kernel::Scaled(k) => Ok((w * w_prime) * k.eval(x, w, x_prime, w_prime)?),
            Kernel::CompoundAffine { f, g } => compound_eval(f, g, w, w_prime, x, x_prime),
        }
    }

    /// [`Kernel::eval`] carried out in the wide type.
    pub fn eval_wide(&self, x: &[T], w: T, x_prime: &[T], w_prime: T) -> Result<T::Wide> {
        match self {
            Kernel::SeArd(h) => h.eval_wide(x, x_prime),
            Kernel::Sum(a, b) => {
                Ok(a.eval_wide(x, w, x_prime, w_prime)? + b.eval_wide(x, w, x_prime, w_prime)?)
            }
            Kernel::Scaled(k) => {
                Ok((w.widen() * w_prime.widen()) * k.eval_wide(x, w, x_prime, w_prime)?)
            }
            Kernel::CompoundAffine { f, g } => Ok(f.eval_wide(x, w, x_prime, w_prime)?
                + (w.widen() * w_prime.widen()) * g.eval_wide(x, w, x_prime, w_prime)?),
        }
    }

    /// Whether evaluations depend on the point weights.
    pub fn uses_weights(&self) -> bool {
        match self {
            Kernel::SeArd(_) => false,
            Kernel::Sum(a, b) => a.uses_weights() || b.uses_weights(),
            Kernel::Scaled(_) | Kernel::CompoundAffine { .. } => true,
        }
    }

    /// Sum of the signal variances of all SE leaves; sets the jitter scale.
    pub fn signal_scale(&self) -> T {
        match self {
            Kernel::SeArd(h) => h.signal_variance,
            Kernel::Sum(a, b) => a.signal_scale() + b.signal_scale(),
            Kernel::Scaled(k) => k.signal_scale(),
            Kernel::CompoundAffine { f, g } => f.signal_scale() + g.signal_scale(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Kernel::SeArd(h) => h.dim() + 1,
            Kernel::Sum(a, b) => a.n_params() + b.n_params(),
            Kernel::Scaled(k) => k.n_params(),
            Kernel::CompoundAffine { f, g } => f.n_params() + g.n_params(),
        }
    }

    /// Hyperparameters in log space, leaves in depth-first order.
    pub fn log_params(&self) -> Vec<T> {
        match self {
            Kernel::SeArd(h) => h.log_params(),
            Kernel::Sum(a, b) => [a.log_params(), b.log_params()].concat(),
            Kernel::Scaled(k) => k.log_params(),
            Kernel::CompoundAffine { f, g } => [f.log_params(), g.log_params()].concat(),
        }
    }

    /// Same structure, new hyperparameters (inverse of [`Kernel::log_params`]).
    pub fn with_log_params(&self, p: &[T]) -> Result<Self> {
        if p.len() != self.n_params() {
            return Err(Error::contract(format!(
                "expected {} hyperparameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        Ok(self.rebuild(p))
    }

    fn rebuild(&self, p: &[T]) -> Self {
        match self {
            Kernel::SeArd(_) => Kernel::SeArd(SeHyperparams::from_log_params(p)),
            Kernel::Sum(a, b) => {
                let (pa, pb) = p.split_at(a.n_params());
                Kernel::sum(a.rebuild(pa), b.rebuild(pb))
            }
            Kernel::Scaled(k) => Kernel::scaled(k.rebuild(p)),
            Kernel::CompoundAffine { f, g } => {
                let (pf, pg) = p.split_at(f.n_params());
                Kernel::compound(f.rebuild(pf), g.rebuild(pg))
            }
        }
    }

    /// Gradient of one evaluation with respect to [`Kernel::log_params`].
    pub fn grad_log_params(&self, x: &[T], w: T, x_prime: &[T], w_prime: T) -> Result<Vec<T>> {
        match self {
            Kernel::SeArd(h) => h.grad(x, x_prime),
            Kernel::Sum(a, b) => Ok([
                a.grad_log_params(x, w, x_prime, w_prime)?,
                b.grad_log_params(x, w, x_prime, w_prime)?,
            ]
            .concat()),
            Kernel::Scaled(k) => {
                let s = w * w_prime;
                Ok(k.grad_log_params(x, w, x_prime, w_prime)?
                    .into_iter()
                    .map(|v| v * s)
                    .collect())
            }
            Kernel::CompoundAffine { f, g } => {
                let s = w * w_prime;
                let gf = f.grad_log_params(x, w, x_prime, w_prime)?;
                let gg = g.grad_log_params(x, w, x_prime, w_prime)?;
                Ok(gf
                    .into_iter()
                    .chain(gg.into_iter().map(|v| v * s))
                    .collect())
            }
        }
    }
}

fn weights_or_zero<T: Scalar>(
    kernel: &Kernel<T>,
    n: usize,
    weights: Option<&[T]>,
) -> Result<Vec<T>> {
    match weights {
        Some(w) if w.len() == n => Ok(w.to_vec()),
        Some(w) => Err(Error::contract(format!(
            "{} weights for {} inputs",
            w.len(),
            n
        ))),
        None if kernel.uses_weights() => Err(Error::contract("kernel requires per-point weights")),
        None => Ok(vec![T::zero(); n]),
    }
}

/// Gram matrix `K[i, i'] = k((x_i, w_i), (x_i', w_i'))`.
pub fn gram<T: Scalar>(
    kernel: &Kernel<T>,
    inputs: &[Vec<T>],
    weights: Option<&[T]>,
) -> Result<Matrix<T::Base>> {
    let n = inputs.len();
    let w = weights_or_zero(kernel, n, weights)?;
    let mut k = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&inputs[i], w[i], &inputs[j], w[j])?.base();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// [`gram`] in the wide type.
pub fn gram_wide<T: Scalar>(
    kernel: &Kernel<T>,
    inputs: &[Vec<T>],
    weights: Option<&[T]>,
) -> Result<Matrix<T::Wide>> {
    let n = inputs.len();
    let w = weights_or_zero(kernel, n, weights)?;
    let mut k = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval_wide(&inputs[i], w[i], &inputs[j], w[j])?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// [`cross_covariance`] in the wide type.
pub fn cross_covariance_wide<T: Scalar>(
    kernel: &Kernel<T>,
    inputs: &[Vec<T>],
    weights: &[T],
    x: &[T],
    w: T,
) -> Result<Vec<T::Wide>> {
    inputs
        .iter()
        .zip(weights)
        .map(|(xi, &wi)| kernel.eval_wide(xi, wi, x, w))
        .collect()
}

/// Covariances between every input and one query point.
pub fn cross_covariance<T: Scalar>(
    kernel: &Kernel<T>,
    inputs: &[Vec<T>],
    weights: &[T],
    x: &[T],
    w: T,
) -> Result<Vec<T>> {
    inputs
        .iter()
        .zip(weights)
        .map(|(xi, &wi)| kernel.eval(xi, wi, x, w))
        .collect()
}

/// Relative jitter levels tried in turn when a factorization fails.
pub const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky factorization of `a`, retrying with diagonal jitter
/// `JITTER_LADDER[i] · scale` when the plain factorization fails.
/// Returns the factor together with the jitter that was added.
pub fn regularized_cholesky<R: Real>(a: &Matrix<R>, scale: R) -> Result<(CholeskyFactor<R>, R)> {
    if let Some(l) = CholeskyFactor::factorize(a) {
        return Ok((l, R::zero()));
    }
    let scale = if scale > R::zero() {
        scale
    } else {
        a.max_diagonal().max(R::one())
    };
    for rel in JITTER_LADDER {
        let jitter = R::from_f64(rel) * scale;
        let mut b = a.clone();
        b.add_diagonal(jitter);
        if let Some(l) = CholeskyFactor::factorize(&b) {
            return Ok((l, jitter));
        }
    }
    Err(Error::degenerate(format!(
        "Gram matrix of size {} not positive definite after jitter {:e}",
        a.dim(),
        JITTER_LADDER[JITTER_LADDER.len() - 1] * scale.to_f64()
    )))
}
