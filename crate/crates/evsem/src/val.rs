//! Probability values attached to configurations.
//!
//! Probabilistic programs carry exact rationals end to end; structures
//! derived from a quantum state carry floating-point traces. The two kinds
//! never mix inside one event structure.

use std::fmt;
use std::ops::{Add, Div, Mul, Sub};

use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

#[derive(Debug, Clone, PartialEq)]
pub enum Val {
    Rat(BigRational),
    Fl(f64),
}

impl Val {
    pub fn zero() -> Self {
        Val::Rat(BigRational::zero())
    }

    pub fn one() -> Self {
        Val::Rat(BigRational::one())
    }

    pub fn rational(num: i64, den: i64) -> Self {
        Val::Rat(BigRational::new(num.into(), den.into()))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Val::Rat(r) => r.is_zero(),
            Val::Fl(f) => *f == 0.0,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Val::Rat(r) => r.to_f64().unwrap_or(f64::NAN),
            Val::Fl(f) => *f,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Val::Rat(_))
    }

    /// `self >= other`, exactly for rationals, within `tol` otherwise.
    pub fn ge(&self, other: &Val, tol: f64) -> bool {
        match (self, other) {
            (Val::Rat(a), Val::Rat(b)) => a >= b,
            _ => self.to_f64() >= other.to_f64() - tol,
        }
    }

    /// `self >= 0`, exactly for rationals, within `tol` otherwise.
    pub fn non_negative(&self, tol: f64) -> bool {
        match self {
            Val::Rat(r) => !r.is_negative(),
            Val::Fl(f) => *f >= -tol,
        }
    }

    /// Equality, exact for rationals, within `tol` otherwise.
    pub fn eq_within(&self, other: &Val, tol: f64) -> bool {
        match (self, other) {
            (Val::Rat(a), Val::Rat(b)) => a == b,
            _ => (self.to_f64() - other.to_f64()).abs() <= tol,
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Rat(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Val::Fl(x) => write!(f, "{x:.12}"),
        }
    }
}

macro_rules! val_binop {
    ($trait:ident, $method:ident) => {
        impl $trait for &Val {
            type Output = Val;
            fn $method(self, rhs: &Val) -> Val {
                match (self, rhs) {
                    (Val::Rat(a), Val::Rat(b)) => Val::Rat(a.$method(b)),
                    _ => Val::Fl(self.to_f64().$method(rhs.to_f64())),
                }
            }
        }
    };
}

val_binop!(Add, add);
val_binop!(Sub, sub);
val_binop!(Mul, mul);
val_binop!(Div, div);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_rational_arithmetic() {
        let third = Val::rational(1, 3);
        let two_thirds = &third + &third;
        assert_eq!(two_thirds, Val::rational(2, 3));
        assert!((&two_thirds + &third).eq_within(&Val::one(), 0.0));
    }

    #[test]
    fn mixed_comparisons_fall_back_to_floats() {
        let r = Val::rational(1, 2);
        let f = Val::Fl(0.5);
        assert!(r.eq_within(&f, 1e-12));
        assert!(f.ge(&r, 1e-12));
    }
}
