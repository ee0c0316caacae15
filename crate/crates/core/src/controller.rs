//! Filtered tracking error and the feedback-linearizing control law.

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig<T> {
    /// `[λ_1, …, λ_{n−1}]`; `r = λ_1 e_1 + … + λ_{n−1} e_{n−1} + e_n`.
    pub lambda: Vec<T>,
    pub k_c: T,
    /// Lower bound on `|r|` used by trigger comparisons.
    pub r_min: T,
}

impl<T: Scalar> ControllerConfig<T> {
    pub fn new(lambda: Vec<T>, k_c: T, r_min: T) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::contract("lambda must have at least one entry"));
        }
        if !hurwitz_check(&lambda) {
            return Err(Error::contract(format!(
                "lambda {lambda:?} does not define a Hurwitz polynomial"
            )));
        }
        if !(k_c > T::zero()) || !k_c.is_finite() {
            return Err(Error::contract("k_c must be positive"));
        }
        if !(r_min >= T::zero()) {
            return Err(Error::contract("r_min must be non-negative"));
        }
        Ok(Self { lambda, k_c, r_min })
    }

    /// State dimension `n`.
    pub fn order(&self) -> usize {
        self.lambda.len() + 1
    }

    /// `max(|r|, r_min)`.
    pub fn clamped_r(&self, r: T) -> T {
        r.abs().max(self.r_min)
    }
}

/// Desired trajectory and its first `n − 1` derivatives, plus the `n`-th.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint<T> {
    pub x_d: Vec<T>,
    pub x_d_n: T,
}

impl<T: Scalar> ReferencePoint<T> {
    /// `e = x − x_d`.
    pub fn error(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.x_d.len() {
            return Err(Error::contract(
                "state and reference have different dimensions",
            ));
        }
        Ok(x.iter().zip(&self.x_d).map(|(&a, &b)| a - b).collect())
    }
}

fn check_dims<T>(e: &[T], lambda: &[T]) -> Result<()> {
    if lambda.is_empty() || e.len() != lambda.len() + 1 {
        return Err(Error::contract(format!(
            "error vector of length {} needs {} lambda entries, got {}",
            e.len(),
            e.len().saturating_sub(1),
            lambda.len()
        )));
    }
    Ok(())
}

/// `r = [λᵀ 1] e`.
pub fn filtered_state<T: Scalar>(e: &[T], lambda: &[T]) -> Result<T> {
    check_dims(e, lambda)?;
    let n = e.len();
    Ok(dot(lambda, &e[..n - 1]) + e[n - 1])
}

/// `ρ = λᵀ e_{2:n} − x_d^{(n)}`, so that `ṙ = f + g u + ρ`.
pub fn feedforward_rho<T: Scalar>(
    e: &[T],
    reference: &ReferencePoint<T>,
    lambda: &[T],
) -> Result<T> {
    check_dims(e, lambda)?;
    Ok(dot(lambda, &e[1..]) - reference.x_d_n)
}

/// `u = (−f̂ − k_c r − ρ) / ĝ`.
pub fn control<T: Scalar>(f_hat: T, g_hat: T, r: T, rho: T, k_c: T) -> Result<T> {
    if !(g_hat > T::zero()) {
        return Err(Error::Controller(format!(
            "g estimate {g_hat:e} is not positive"
        )));
    }
    let u = (-f_hat - k_c * r - rho) / g_hat;
    if !u.is_finite() {
        return Err(Error::Controller(format!(
            "non-finite control from f = {f_hat:e}, g = {g_hat:e}, r = {r:e}, rho = {rho:e}"
        )));
    }
    Ok(u)
}

/// Whether `s^{m} + λ_m s^{m−1} + … + λ_1` (with `m = lambda.len()`) has all
/// roots in the open left half plane. Routh array; any non-positive entry in
/// the first column means the polynomial is not strictly Hurwitz.
pub fn hurwitz_check<T: Scalar>(lambda: &[T]) -> bool {
    if lambda.is_empty() || lambda.iter().any(|v| !v.is_finite()) {
        return false;
    }
    // Descending powers: 1, λ_m, …, λ_1.
    let coeffs: Vec<T> = std::iter::once(T::one())
        .chain(lambda.iter().rev().copied())
        .collect();
    let mut prev: Vec<T> = coeffs.iter().step_by(2).copied().collect();
    let mut curr: Vec<T> = coeffs.iter().skip(1).step_by(2).copied().collect();
    for _ in 1..coeffs.len() {
        let Some(&lead) = curr.first() else {
            return false;
        };
        if !(lead > T::zero()) {
            return false;
        }
        let next: Vec<T> = (0..prev.len().saturating_sub(1))
            .map(|j| {
                let c = curr.get(j + 1).copied().unwrap_or_else(T::zero);
                (lead * prev[j + 1] - prev[0] * c) / lead
            })
            .collect();
        prev = curr;
        curr = next;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn filtered_state_examples() {
        assert_eq!(filtered_state(&[0.0, 0.0], &[1.0]).unwrap(), 0.0);
        assert_relative_eq!(
            filtered_state(&[0.5, -0.2], &[1.0]).unwrap(),
            0.3,
            epsilon = 1e-15
        );
        assert!(filtered_state(&[0.5, -0.2, 0.1], &[1.0]).is_err());
        assert!(filtered_state::<f64>(&[0.5], &[]).is_err());
    }

    #[test]
    fn rho_examples() {
        let r = ReferencePoint {
            x_d: vec![0.0, 0.0],
            x_d_n: -0.7,
        };
        assert_relative_eq!(
            feedforward_rho(&[9.0, 0.4], &r, &[1.0]).unwrap(),
            1.1,
            epsilon = 1e-15
        );
        let r0 = ReferencePoint {
            x_d: vec![0.0, 0.0],
            x_d_n: 0.0,
        };
        assert_eq!(feedforward_rho(&[0.0, 0.0], &r0, &[1.0]).unwrap(), 0.0);
        let r3 = ReferencePoint {
            x_d: vec![0.0; 3],
            x_d_n: 2.5,
        };
        assert_eq!(
            feedforward_rho(&[1.0, 0.0, 0.0], &r3, &[3.0, 1.0]).unwrap(),
            -2.5
        );
    }

    #[test]
    fn control_examples() {
        assert_relative_eq!(
            control(0.0, 2.0, 0.3, 0.0, 1.0).unwrap(),
            -0.15,
            epsilon = 1e-15
        );
        assert!(matches!(
            control(0.0, 0.0, 0.3, 0.0, 1.0),
            Err(Error::Controller(_))
        ));
        assert!(control(0.0, -1.0, 0.3, 0.0, 1.0).is_err());
        let a = control(0.4, 1.0, 0.3, -0.2, 2.0).unwrap();
        let b = control(0.4, 2.0, 0.3, -0.2, 2.0).unwrap();
        assert_relative_eq!(a, 2.0 * b, epsilon = 1e-15);
    }

    #[test]
    fn exact_model_linearizes() {
        // On the reference with the true f and g, the closed loop gives ẋ_n = x_d^(n).
        let (f, g, xdn) = (1.25, 1.3, -0.8);
        let r = ReferencePoint {
            x_d: vec![0.2, 0.1],
            x_d_n: xdn,
        };
        let e = r.error(&[0.2, 0.1]).unwrap();
        let rv = filtered_state(&e, &[1.0]).unwrap();
        let rho = feedforward_rho(&e, &r, &[1.0]).unwrap();
        let u = control(f, g, rv, rho, 1.0).unwrap();
        assert_relative_eq!(f + g * u, xdn, epsilon = 1e-15);
    }

    #[test]
    fn hurwitz_examples() {
        assert!(hurwitz_check(&[1.0]));
        assert!(!hurwitz_check(&[-1.0]));
        assert!(!hurwitz_check(&[0.0]));
        assert!(hurwitz_check(&[1.0, 2.0]));
        assert!(!hurwitz_check(&[1.0, 0.0]));
        assert!(!hurwitz_check::<f64>(&[]));
        // s³ + s² + s + 1 has roots on the imaginary axis.
        assert!(!hurwitz_check(&[1.0, 1.0, 1.0]));
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig::new(vec![1.0], 1.0, 1e-5).is_ok());
        assert!(ControllerConfig::new(vec![-1.0], 1.0, 1e-5).is_err());
        assert!(ControllerConfig::new(vec![1.0], 0.0, 1e-5).is_err());
        assert!(ControllerConfig::new(vec![1.0], 1.0, -1.0).is_err());
        let c = ControllerConfig::new(vec![1.0], 1.0, 1e-5).unwrap();
        assert_eq!(c.clamped_r(-0.5), 0.5);
        assert_eq!(c.clamped_r(1e-9), 1e-5);
    }

    /// Monic polynomial coefficients (descending powers, leading 1 dropped)
    /// from real roots and complex pairs `a ± bi`.
    fn poly_from_roots(real: &[f64], pairs: &[(f64, f64)]) -> Vec<f64> {
        let mut p = vec![1.0];
        let mul = |p: &[f64], q: &[f64]| {
            let mut out = vec![0.0; p.len() + q.len() - 1];
            for (i, a) in p.iter().enumerate() {
                for (j, b) in q.iter().enumerate() {
                    out[i + j] += a * b;
                }
            }
            out
        };
        for &r in real {
            p = mul(&p, &[1.0, -r]);
        }
        for &(a, b) in pairs {
            p = mul(&p, &[1.0, -2.0 * a, a * a + b * b]);
        }
        // Convert to lambda order: [λ_1, …, λ_m] = constant term first.
        p[1..].iter().rev().copied().collect()
    }

    proptest! {
        #[test]
        fn routh_agrees_with_root_locations(
            real in proptest::collection::vec(-3.0f64..3.0, 0..4),
            pairs in proptest::collection::vec((-3.0f64..3.0, 0.1f64..3.0), 0..3),
        ) {
            prop_assume!(!real.is_empty() || !pairs.is_empty());
            let margin = real.iter().map(|r| r.abs()).chain(pairs.iter().map(|p| p.0.abs())).fold(f64::INFINITY, f64::min);
            prop_assume!(margin > 0.05);
            let stable = real.iter().all(|&r| r < 0.0) && pairs.iter().all(|p| p.0 < 0.0);
            prop_assert_eq!(hurwitz_check(&poly_from_roots(&real, &pairs)), stable);
        }
    }
}
