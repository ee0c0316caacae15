use crate::controller::ReferencePoint;
use crate::scalar::Scalar;

/// Reference signal `x_d(t)` with closed-form derivatives of any order.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySpec<T> {
    /// `from + (to − from) / (1 + e^{−steepness (t − center)})`.
    SoftStep {
        center: T,
        steepness: T,
        from: T,
        to: T,
    },
    /// `amplitude · sin(frequency · t)`.
    Sinusoid { amplitude: T, frequency: T },
}

impl<T: Scalar> TrajectorySpec<T> {
    /// `d^k x_d / dt^k` at `t`.
    pub fn derivative(&self, t: T, k: usize) -> T {
        match *self {
            TrajectorySpec::SoftStep {
                center,
                steepness,
                from,
                to,
            } => {
                let s = (-(steepness * (t - center))).exp();
                let sigma = T::one() / (T::one() + s);
                if k == 0 {
                    return from + (to - from) * sigma;
                }
                let p = logistic_derivative_poly::<T>(k);
                let val = p.iter().rev().fold(T::zero(), |acc, &c| acc * sigma + c);
                (to - from) * steepness.powi(k as i32) * val
            }
            TrajectorySpec::Sinusoid {
                amplitude,
                frequency,
            } => {
                let phase = T::from_usize_lossy(k % 4) * T::lit(std::f64::consts::FRAC_PI_2);
                amplitude * frequency.powi(k as i32) * (frequency * t + phase).sin()
            }
        }
    }
}

/// Coefficients (ascending powers of `σ`) of `P_k` with
/// `d^k σ / dz^k = P_k(σ)` for the logistic `σ(z)`.
fn logistic_derivative_poly<T: Scalar>(k: usize) -> Vec<T> {
    let mut p = vec![T::zero(), T::one()];
    for _ in 0..k {
        // d/dz P(σ) = P'(σ) (σ − σ²)
        let dp: Vec<T> = (1..p.len())
            .map(|i| T::from_usize_lossy(i) * p[i])
            .collect();
        let mut next = vec![T::zero(); dp.len() + 2];
        for (i, &c) in dp.iter().enumerate() {
            next[i + 1] = next[i + 1] + c;
            next[i + 2] = next[i + 2] - c;
        }
        p = next;
    }
    p
}

/// `x_d` and its first `order − 1` derivatives, plus the `order`-th.
pub fn reference_eval<T: Scalar>(
    traj: &TrajectorySpec<T>,
    t: T,
    order: usize,
) -> ReferencePoint<T> {
    ReferencePoint {
        x_d: (0..order).map(|k| traj.derivative(t, k)).collect(),
        x_d_n: traj.derivative(t, order),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn step() -> TrajectorySpec<f64> {
        TrajectorySpec::SoftStep {
            center: 10.0,
            steepness: 20.0,
            from: 1.0,
            to: 0.0,
        }
    }

    #[test]
    fn soft_step_values() {
        assert_eq!(reference_eval(&step(), 10.0, 2).x_d[0], 0.5);
        assert!((reference_eval(&step(), 0.0, 2).x_d[0] - 1.0).abs() < 1e-8);
        assert!(reference_eval(&step(), 20.0, 2).x_d[0].abs() < 1e-8);
        // σ'(0) = 1/4, σ''(0) = 0 at the center.
        let r = reference_eval(&step(), 10.0, 2);
        assert_relative_eq!(r.x_d[1], -20.0 / 4.0, epsilon = 1e-12);
        assert!(r.x_d_n.abs() < 1e-12);
    }

    #[test]
    fn soft_step_derivatives_match_differences() {
        let tr = step();
        let h = 1e-5;
        for &t in &[9.8, 9.95, 10.1, 10.3] {
            for k in 0..4 {
                let fd = (tr.derivative(t + h, k) - tr.derivative(t - h, k)) / (2.0 * h);
                let scale = tr.derivative(t, k + 1).abs().max(1.0);
                assert!(
                    (fd - tr.derivative(t, k + 1)).abs() < 1e-5 * scale,
                    "t={t} k={k}"
                );
            }
        }
    }

    #[test]
    fn logistic_polys() {
        assert_eq!(logistic_derivative_poly::<f64>(1), vec![0.0, 1.0, -1.0]);
        assert_eq!(
            logistic_derivative_poly::<f64>(2),
            vec![0.0, 1.0, -3.0, 2.0]
        );
    }

    #[test]
    fn sinusoid_derivatives() {
        let tr = TrajectorySpec::Sinusoid {
            amplitude: 1.0,
            frequency: 1.0,
        };
        for &t in &[0.0, 0.7, 2.0, 5.5] {
            let r = reference_eval(&tr, t, 2);
            assert_relative_eq!(r.x_d[0], f64::sin(t), epsilon = 1e-14);
            assert_relative_eq!(r.x_d[1], f64::cos(t), epsilon = 1e-14);
            assert_relative_eq!(r.x_d_n, -f64::sin(t), epsilon = 1e-14);
        }
        let tr = TrajectorySpec::Sinusoid {
            amplitude: 2.0,
            frequency: 3.0,
        };
        assert_relative_eq!(
            tr.derivative(0.4, 3),
            -2.0 * 27.0 * f64::cos(1.2),
            epsilon = 1e-12
        );
    }
}
