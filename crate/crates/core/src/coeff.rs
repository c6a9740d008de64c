//! Numeric coefficients: exact rationals with a float escape hatch.
//!
//! A coefficient stays rational as long as every literal that fed it was an
//! integer or a ratio of integers.  The first float literal (or an i64
//! overflow in rational arithmetic) demotes the whole term to `f64`, and the
//! demotion is sticky: rational-times-float is float.

use num::rational::Rational64;
use num::{One, Signed, Zero};
use std::cmp::Ordering;
use std::fmt;

#[derive(Clone, Copy, Debug)]
pub enum Coeff {
    Rational(Rational64),
    Float(f64),
}

impl Coeff {
    pub const ZERO: Coeff = Coeff::Rational(Rational64::new_raw(0, 1));
    pub const ONE: Coeff = Coeff::Rational(Rational64::new_raw(1, 1));

    pub fn int(n: i64) -> Coeff {
        Coeff::Rational(Rational64::from_integer(n))
    }

    /// Exact ratio; panics on zero denominator (parser rejects that earlier).
    pub fn ratio(num: i64, den: i64) -> Coeff {
        Coeff::Rational(Rational64::new(num, den))
    }

    pub fn float(x: f64) -> Coeff {
        Coeff::Float(x)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coeff::Rational(r) => r.is_zero(),
            Coeff::Float(x) => *x == 0.0,
        }
    }

    pub fn is_one(&self) -> bool {
        match self {
            Coeff::Rational(r) => r.is_one(),
            Coeff::Float(x) => *x == 1.0,
        }
    }

    pub fn is_negative(&self) -> bool {
        match self {
            Coeff::Rational(r) => r.is_negative(),
            Coeff::Float(x) => *x < 0.0,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Coeff::Rational(r) => *r.numer() as f64 / *r.denom() as f64,
            Coeff::Float(x) => *x,
        }
    }

    pub fn neg(&self) -> Coeff {
        match self {
            Coeff::Rational(r) => Coeff::Rational(-r),
            Coeff::Float(x) => Coeff::Float(-x),
        }
    }

    pub fn abs(&self) -> Coeff {
        if self.is_negative() {
            self.neg()
        } else {
            *self
        }
    }

    pub fn add(&self, other: &Coeff) -> Coeff {
        match (self, other) {
            (Coeff::Rational(a), Coeff::Rational(b)) => match checked_add(*a, *b) {
                Some(r) => Coeff::Rational(r),
                None => Coeff::Float(self.to_f64() + other.to_f64()),
            },
            _ => Coeff::Float(self.to_f64() + other.to_f64()),
        }
    }

    pub fn mul(&self, other: &Coeff) -> Coeff {
        match (self, other) {
            (Coeff::Rational(a), Coeff::Rational(b)) => match checked_mul(*a, *b) {
                Some(r) => Coeff::Rational(r),
                None => Coeff::Float(self.to_f64() * other.to_f64()),
            },
            _ => Coeff::Float(self.to_f64() * other.to_f64()),
        }
    }

    pub fn pow(&self, k: u32) -> Coeff {
        let mut acc = Coeff::ONE;
        for _ in 0..k {
            acc = acc.mul(self);
        }
        acc
    }

    /// Exact small non-negative integer view, used for exponents.
    pub fn as_u32(&self) -> Option<u32> {
        match self {
            Coeff::Rational(r) if *r.denom() == 1 => u32::try_from(*r.numer()).ok(),
            _ => None,
        }
    }

    /// Multiplicative inverse.  None for zero.
    pub fn recip(&self) -> Option<Coeff> {
        if self.is_zero() {
            return None;
        }
        Some(match self {
            Coeff::Rational(r) => Coeff::Rational(r.recip()),
            Coeff::Float(x) => Coeff::Float(1.0 / x),
        })
    }
}

fn checked_add(a: Rational64, b: Rational64) -> Option<Rational64> {
    let den = a.denom().checked_mul(*b.denom())?;
    let lhs = a.numer().checked_mul(*b.denom())?;
    let rhs = b.numer().checked_mul(*a.denom())?;
    Some(Rational64::new(lhs.checked_add(rhs)?, den))
}

fn checked_mul(a: Rational64, b: Rational64) -> Option<Rational64> {
    let num = a.numer().checked_mul(*b.numer())?;
    let den = a.denom().checked_mul(*b.denom())?;
    Some(Rational64::new(num, den))
}

// Rational(q) and Float(x) with q == x are still distinct coefficients: the
// float mark records provenance and must survive canonicalization.
impl PartialEq for Coeff {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Coeff::Rational(a), Coeff::Rational(b)) => a == b,
            (Coeff::Float(a), Coeff::Float(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl Eq for Coeff {}

impl PartialOrd for Coeff {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Coeff {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Coeff::Rational(a), Coeff::Rational(b)) => a.cmp(b),
            (Coeff::Float(a), Coeff::Float(b)) => a.total_cmp(b),
            (Coeff::Rational(_), Coeff::Float(_)) => Ordering::Less,
            (Coeff::Float(_), Coeff::Rational(_)) => Ordering::Greater,
        }
    }
}

impl std::hash::Hash for Coeff {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            Coeff::Rational(r) => {
                0u8.hash(state);
                r.numer().hash(state);
                r.denom().hash(state);
            }
            Coeff::Float(x) => {
                1u8.hash(state);
                x.to_bits().hash(state);
            }
        }
    }
}

impl fmt::Display for Coeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coeff::Rational(r) => {
                if r.denom() == &1 {
                    write!(f, "{}", r.numer())
                } else {
                    write!(f, "{}/{}", r.numer(), r.denom())
                }
            }
            Coeff::Float(x) => {
                // Shortest round-trip form; force a decimal point so the
                // printer-parser loop preserves the float mark.
                let s = format!("{x}");
                if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
                    write!(f, "{s}")
                } else {
                    write!(f, "{s}.0")
                }
            }
        }
    }
}
