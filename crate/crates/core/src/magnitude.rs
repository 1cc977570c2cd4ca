//! Nonnegative reals stored by their natural logarithm.
//!
//! Sample-complexity bounds span hundreds of orders of magnitude and overflow
//! `f64` for small accuracies, so they are accumulated in the log domain.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul};

use num_bigint::BigUint;
use serde::{Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Magnitude {
    ln: f64,
}

impl Magnitude {
    pub const ZERO: Magnitude = Magnitude {
        ln: f64::NEG_INFINITY,
    };
    pub const ONE: Magnitude = Magnitude { ln: 0.0 };

    /// Panics on negative or NaN input.
    pub fn new(value: f64) -> Self {
        assert!(
            value >= 0.0,
            "magnitude of a negative or NaN value: {value}"
        );
        Self { ln: value.ln() }
    }

    pub fn from_ln(ln: f64) -> Self {
        assert!(!ln.is_nan(), "NaN log-magnitude");
        Self { ln }
    }

    pub fn ln(self) -> f64 {
        self.ln
    }

    pub fn log10(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }

    /// Plain value; `inf` when it exceeds the `f64` range.
    pub fn value(self) -> f64 {
        self.ln.exp()
    }

    pub fn powf(self, exponent: f64) -> Self {
        if exponent == 0.0 {
            return Self::ONE;
        }
        Self::from_ln(self.ln * exponent)
    }

    pub fn is_zero(self) -> bool {
        self.ln == f64::NEG_INFINITY
    }
}

impl Add for Magnitude {
    type Output = Magnitude;

    fn add(self, rhs: Magnitude) -> Magnitude {
        let (hi, lo) = if self.ln >= rhs.ln {
            (self.ln, rhs.ln)
        } else {
            (rhs.ln, self.ln)
        };
        if lo == f64::NEG_INFINITY {
            return Magnitude { ln: hi };
        }
        Magnitude {
            ln: hi + (lo - hi).exp().ln_1p(),
        }
    }
}

impl Mul for Magnitude {
    type Output = Magnitude;

    fn mul(self, rhs: Magnitude) -> Magnitude {
        if self.is_zero() || rhs.is_zero() {
            return Magnitude::ZERO;
        }
        Magnitude {
            ln: self.ln + rhs.ln,
        }
    }
}

impl Div for Magnitude {
    type Output = Magnitude;

    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Magnitude) -> Magnitude {
        Magnitude::from_ln(self.ln - rhs.ln)
    }
}

impl PartialOrd for Magnitude {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.ln.partial_cmp(&other.ln)
    }
}

impl From<u64> for Magnitude {
    fn from(v: u64) -> Self {
        Magnitude::new(v as f64)
    }
}

impl From<&BigUint> for Magnitude {
    /// Exact to `f64` precision for integers of any size.
    fn from(n: &BigUint) -> Self {
        let bits = n.bits();
        if bits <= 64 {
            return Magnitude::new(n.iter_u64_digits().next().unwrap_or(0) as f64);
        }
        let shift = bits - 64;
        let top = (n >> shift)
            .iter_u64_digits()
            .next()
            .expect("64 leading bits");
        Magnitude::from_ln((top as f64).ln() + shift as f64 * std::f64::consts::LN_2)
    }
}

impl fmt::Display for Magnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let exp = self.log10().floor();
        write!(f, "{:.6}e{}", 10f64.powf(self.log10() - exp), exp)
    }
}

impl Serialize for Magnitude {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.log10())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_matches_plain_floats() {
        let a = Magnitude::new(3.0);
        let b = Magnitude::new(5.0);
        assert!(((a + b).value() - 8.0).abs() < 1e-14);
        assert!(((a * b).value() - 15.0).abs() < 1e-13);
        assert!(((b / a).value() - 5.0 / 3.0).abs() < 1e-15);
        assert!((a.powf(3.0).value() - 27.0).abs() < 1e-12);
        assert_eq!((a + Magnitude::ZERO).value(), a.value());
        assert!((a * Magnitude::ZERO).is_zero());
    }

    #[test]
    fn survives_overflow() {
        let huge = Magnitude::from_ln(1000.0);
        let sum = huge + huge;
        assert!((sum.ln() - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(sum.value(), f64::INFINITY);
        assert!((huge.log10() - 1000.0 / std::f64::consts::LN_10).abs() < 1e-12);
        assert!(huge > Magnitude::new(1e300));
    }

    #[test]
    fn from_big_integers() {
        assert_eq!(Magnitude::from(&BigUint::from(12u32)).value(), 12.0);
        assert!(Magnitude::from(&BigUint::from(0u32)).is_zero());
        let big = BigUint::from(3u32).pow(1000);
        assert!((Magnitude::from(&big).ln() - 1000.0 * 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn display() {
        assert_eq!(Magnitude::new(1234.5).to_string(), "1.234500e3");
        assert_eq!(Magnitude::ZERO.to_string(), "0");
    }
}
