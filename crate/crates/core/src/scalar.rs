//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::dd::DoubleDouble;

/// Minimal field-like number used by the dense linear algebra.
pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn epsilon() -> Self;
    fn is_finite(self) -> bool;

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

macro_rules! real_for_float {
    ($t:ty) => {
        impl Real for $t {
            fn zero() -> Self {
                0.0
            }
            fn one() -> Self {
                1.0
            }
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            fn epsilon() -> Self {
                <$t>::EPSILON
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

real_for_float!(f32);
real_for_float!(f64);

/// Real floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Higher-precision type used inside posterior factorizations.
    type Wide: Real;
    /// The scalar itself, seen through [`Real`].
    type Base: Real;

    fn widen(self) -> Self::Wide;
    fn narrow(w: Self::Wide) -> Self;
    fn base(self) -> Self::Base;
    fn from_base(b: Self::Base) -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::infinity)
    }
}

impl Scalar for f32 {
    type Wide = f64;
    type Base = f32;

    fn base(self) -> f32 {
        self
    }

    fn from_base(b: f32) -> f32 {
        b
    }

    fn widen(self) -> f64 {
        self as f64
    }

    fn narrow(w: f64) -> f32 {
        w as f32
    }
}

impl Scalar for f64 {
    type Wide = DoubleDouble;
    type Base = f64;

    fn base(self) -> f64 {
        self
    }

    fn from_base(b: f64) -> f64 {
        b
    }

    fn widen(self) -> DoubleDouble {
        DoubleDouble::from(self)
    }

    fn narrow(w: DoubleDouble) -> f64 {
        w.into()
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Four independent partial sums, so wide multiply-adds can overlap.
pub(crate) fn dot_wide<R: Real>(a: &[R], b: &[R]) -> R {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [R::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = R::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
