//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`
//! values, carrying about 32 significant decimal digits.
//!
//! Squared-exponential Gram matrices of densely sampled trajectories have
//! condition numbers far beyond `1/ε` of `f64`, and posterior variances near
//! the data must still be resolved to `~1e-12`. The GP linear algebra runs in
//! this type when the user-facing scalar is `f64`.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[cfg(target_feature = "fma")]
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

// Without hardware FMA, `mul_add` is a slow software routine; Dekker's
// splitting is exact for operands away from overflow.
#[cfg(not(target_feature = "fma"))]
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    #[inline]
    fn split(a: f64) -> (f64, f64) {
        let t = 134_217_729.0 * a;
        let hi = t - (t - a);
        (hi, a - hi)
    }
    let p = a * b;
    if !p.is_finite() || a.abs() > 1e290 || b.abs() > 1e290 {
        return (p, a.mul_add(b, -p));
    }
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

/// `1/n!` for `n = 1..=9`, split into `hi + lo`.
const INV_FACTORIALS: [(f64, f64); 9] = [
    (1.0, 0.0),
    (0.5, 0.0),
    (1.6666666666666666e-1, 9.25185853854297e-18),
    (4.1666666666666664e-2, 2.3129646346357427e-18),
    (8.333333333333333e-3, 1.1564823173178714e-19),
    (1.388888888888889e-3, -5.300543954373577e-20),
    (1.984126984126984e-4, 1.7209558293420705e-22),
    (2.48015873015873e-5, 2.1511947866775882e-23),
    (2.7557319223985893e-6, -1.858393274046472e-22),
];

/// Horner form of `s + s²/2! + … + s⁹/9!`.
fn expm1_series(s: DoubleDouble) -> DoubleDouble {
    let mut em1 = DoubleDouble::ZERO;
    for &(hi, lo) in INV_FACTORIALS.iter().rev() {
        em1 = (em1 + DoubleDouble { hi, lo }) * s;
    }
    em1
}

/// Slow path for the table: `exp(r)` for `|r| < 0.5` by argument halving,
/// `|r / 2^10| < 5e-4` so the truncated series term is below 1e-40.
fn exp_by_squaring(r: DoubleDouble) -> DoubleDouble {
    let mut em1 = expm1_series(r.scale_pow2(-10));
    for _ in 0..10 {
        em1 = em1.scale_pow2(1) + em1 * em1;
    }
    em1 + DoubleDouble::ONE
}

const EXP_TABLE_STEPS: f64 = 256.0;
/// `|x − k ln2| ≤ ln2 / 2 < 89 / 256`.
const EXP_TABLE_HALF: usize = 89;

/// `exp(j / 256)` for `j = −89..=89`.
fn exp_table() -> &'static [DoubleDouble] {
    static TABLE: OnceLock<Vec<DoubleDouble>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let half = EXP_TABLE_HALF as i32;
        (-half..=half)
            .map(|j| exp_by_squaring(DoubleDouble::from(f64::from(j) / EXP_TABLE_STEPS)))
            .collect()
    })
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };
    /// Relative rounding error of the format.
    pub const EPSILON: f64 = 4.93038065763132e-32;

    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Self { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn scale_pow2(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        Self {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Self { hi, lo }
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return if self.hi == 0.0 {
                Self::ZERO
            } else {
                Self {
                    hi: f64::NAN,
                    lo: f64::NAN,
                }
            };
        }
        let q = self.hi.sqrt();
        let (p, e) = two_prod(q, q);
        let r = (self - Self { hi: p, lo: e }).hi;
        let (hi, lo) = quick_two_sum(q, r / (2.0 * q));
        Self { hi, lo }
    }

    pub fn exp(self) -> Self {
        if self.hi < -745.2 {
            return Self::ZERO;
        }
        if self.hi > 709.7 {
            return Self {
                hi: f64::INFINITY,
                lo: 0.0,
            };
        }
        if self.hi == 0.0 && self.lo == 0.0 {
            return Self::ONE;
        }
        // x = k ln2 + j/256 + s with |s| ≤ 1/512, exp(j/256) from the table.
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2.mul_f64(k);
        let j = (r.hi * EXP_TABLE_STEPS).round();
        let s = r - Self::from(j / EXP_TABLE_STEPS);
        let em1 = expm1_series(s);
        let base = exp_table()[(j as i64 + EXP_TABLE_HALF as i64) as usize];
        (base + base * em1).scale_pow2(k as i32)
    }

    pub fn ln(self) -> Self {
        if !(self.hi > 0.0) {
            return Self {
                hi: if self.hi == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    f64::NAN
                },
                lo: 0.0,
            };
        }
        // One Newton step on exp(y) = x doubles the digits of the f64 guess.
        let y = Self::from(self.hi.ln());
        y + self * (-y).exp() - Self::ONE
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }
}

impl From<DoubleDouble> for f64 {
    fn from(v: DoubleDouble) -> f64 {
        v.hi + v.lo
    }
}

impl PartialEq for DoubleDouble {
    fn eq(&self, other: &Self) -> bool {
        self.hi == other.hi && self.lo == other.lo
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            ord => Some(ord),
        }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Self { hi, lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        let (hi, lo) = quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi));
        Self { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo } + Self::from(q3)
    }
}

impl Real for DoubleDouble {
    fn zero() -> Self {
        Self::ZERO
    }
    fn one() -> Self {
        Self::ONE
    }
    fn from_f64(v: f64) -> Self {
        Self::from(v)
    }
    fn to_f64(self) -> f64 {
        self.into()
    }
    fn sqrt(self) -> Self {
        DoubleDouble::sqrt(self)
    }
    fn exp(self) -> Self {
        DoubleDouble::exp(self)
    }
    fn ln(self) -> Self {
        DoubleDouble::ln(self)
    }
    fn abs(self) -> Self {
        DoubleDouble::abs(self)
    }
    fn epsilon() -> Self {
        Self::from(Self::EPSILON)
    }
    fn is_finite(self) -> bool {
        DoubleDouble::is_finite(self)
    }
}
