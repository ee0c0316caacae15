use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::affine::StateFn;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Single-input plant in controllable canonical form.
#[derive(Clone)]
pub struct PlantSpec<T> {
    pub name: String,
    pub order: usize,
    pub f: StateFn<T>,
    pub g: StateFn<T>,
}

impl<T> fmt::Debug for PlantSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantSpec")
            .field("name", &self.name)
            .field("order", &self.order)
            .finish()
    }
}

impl<T: Scalar> PlantSpec<T> {
    pub fn new(name: impl Into<String>, order: usize, f: StateFn<T>, g: StateFn<T>) -> Self {
        Self {
            name: name.into(),
            order,
            f,
            g,
        }
    }

    /// Pendulum-like benchmark:
    /// `f = 1 − sin x₁ + 0.5 / (1 + e^{−x₂/10})`, `g = 1 + 0.5 sin(x₂/2)`.
    pub fn pendulum() -> Self {
        let f: StateFn<T> = Arc::new(|x: &[T]| {
            let half = T::lit(0.5);
            T::one() - x[0].sin() + half / (T::one() + (-x[1] / T::lit(10.0)).exp())
        });
        let g: StateFn<T> = Arc::new(|x: &[T]| T::one() + T::lit(0.5) * (x[1] / T::lit(2.0)).sin());
        Self::new("pendulum", 2, f, g)
    }

    fn check(&self, x: &[T]) -> Result<()> {
        if x.len() != self.order {
            return Err(Error::contract(format!(
                "state has dimension {}, plant has order {}",
                x.len(),
                self.order
            )));
        }
        Ok(())
    }

    pub fn eval_f(&self, x: &[T]) -> Result<T> {
        self.check(x)?;
        Ok((self.f)(x))
    }

    /// `g(x)`, rejected unless strictly positive.
    pub fn eval_g(&self, x: &[T]) -> Result<T> {
        self.check(x)?;
        let g = (self.g)(x);
        if !(g > T::zero()) {
            return Err(Error::Plant(format!("{}: g = {g:e} at {x:?}", self.name)));
        }
        Ok(g)
    }
}

/// `ẋ_i = x_{i+1}` for `i < n`, `ẋ_n = f(x) + g(x) u`.
pub fn plant_deriv<T: Scalar>(plant: &PlantSpec<T>, x: &[T], u: T) -> Result<Vec<T>> {
    let g = plant.eval_g(x)?;
    let f = plant.eval_f(x)?;
    let mut d: Vec<T> = x[1..].to_vec();
    d.push(f + g * u);
    Ok(d)
}

/// One classical RK4 step. The control is re-evaluated at every stage state.
pub fn integrate_step<T: Scalar>(
    plant: &PlantSpec<T>,
    control_fn: &mut dyn FnMut(&[T], T) -> Result<T>,
    x: &[T],
    t: T,
    dt: T,
) -> Result<Vec<T>> {
    if !(dt > T::zero()) {
        return Err(Error::contract("integration step must be positive"));
    }
    let half = T::lit(0.5) * dt;
    let axpy =
        |a: T, v: &[T]| -> Vec<T> { x.iter().zip(v).map(|(&xi, &vi)| xi + a * vi).collect() };
    let mut stage = |xs: &[T], ts: T| -> Result<Vec<T>> {
        let u = control_fn(xs, ts)?;
        plant_deriv(plant, xs, u)
    };
    let k1 = stage(x, t)?;
    let k2 = stage(&axpy(half, &k1), t + half)?;
    let k3 = stage(&axpy(half, &k2), t + half)?;
    let k4 = stage(&axpy(dt, &k3), t + dt)?;
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let next: Vec<T> = (0..x.len())
        .map(|i| x[i] + sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            time: (t + dt).as_f64(),
            detail: format!("non-finite state {next:?} after a step from {x:?}"),
        });
    }
    Ok(next)
}

/// `y = f(x) + g(x) u + ε`, `ε ~ N(0, noise_std²)` drawn from `rng`.
pub fn measure<T: Scalar, R: Rng + ?Sized>(
    plant: &PlantSpec<T>,
    x: &[T],
    u: T,
    noise_std: T,
    rng: &mut R,
) -> Result<T> {
    let clean = plant.eval_f(x)? + plant.eval_g(x)? * u;
    if noise_std == T::zero() {
        return Ok(clean);
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(clean + noise_std * T::lit(z))
}
