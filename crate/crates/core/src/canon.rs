//! Canonical forms: fully expanded polynomials over atoms.
//!
//! A canonical form is a sum of monomials.  Each monomial maps atoms to
//! positive integer exponents; function atoms carry canonicalized arguments
//! so structurally distinct atoms are semantically distinct (on the
//! polynomial fragment).  Terms and factors follow the total order on
//! [`Atom`], which puts coordinates before constants before field jets before
//! action jets before function atoms.
//!
//! Two expressions are semantically equal on the fragment iff their
//! [`Poly`] forms are equal, which is plain structural equality here.

use crate::coeff::Coeff;
use crate::expr::{Atom, Expr};
use std::collections::BTreeMap;
use std::fmt;

pub(crate) type Monomial = BTreeMap<Atom, u32>;

/// Expanded polynomial: monomial -> nonzero coefficient.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poly {
    terms: BTreeMap<Monomial, Coeff>,
}

impl Poly {
    pub fn zero() -> Poly {
        Poly { terms: BTreeMap::new() }
    }

    pub fn constant(c: Coeff) -> Poly {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Monomial::new(), c);
        }
        Poly { terms }
    }

    fn atom(a: Atom) -> Poly {
        let mut mono = Monomial::new();
        mono.insert(a, 1);
        let mut terms = BTreeMap::new();
        terms.insert(mono, Coeff::ONE);
        Poly { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn add_term(&mut self, mono: Monomial, c: Coeff) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(mono) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let sum = e.get().add(&c);
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    fn add(mut self, other: Poly) -> Poly {
        for (m, c) in other.terms {
            self.add_term(m, c);
        }
        self
    }

    fn neg(self) -> Poly {
        Poly {
            terms: self.terms.into_iter().map(|(m, c)| (m, c.neg())).collect(),
        }
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut mono = ma.clone();
                for (atom, k) in mb {
                    *mono.entry(atom.clone()).or_insert(0) += k;
                }
                out.add_term(mono, ca.mul(cb));
            }
        }
        out
    }

    fn pow(&self, k: u32) -> Poly {
        let mut acc = Poly::constant(Coeff::ONE);
        for _ in 0..k {
            acc = acc.mul(self);
        }
        acc
    }

    /// Rebuild the canonical expression tree: ascending terms, each a product
    /// of an optional coefficient literal and ascending atom powers.
    pub fn to_expr(&self) -> Expr {
        if self.terms.is_empty() {
            return Expr::ZERO;
        }
        let mut terms = Vec::with_capacity(self.terms.len());
        for (mono, c) in &self.terms {
            terms.push(term_expr(mono, c));
        }
        if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expr::Sum(terms)
        }
    }
}

fn term_expr(mono: &Monomial, c: &Coeff) -> Expr {
    let mut factors: Vec<Expr> = Vec::with_capacity(mono.len() + 1);
    // A rational 1 coefficient is implied; a float 1.0 is kept because the
    // float mark is part of the term's identity.
    let keep_coeff = !matches!(c, Coeff::Rational(_) if c.is_one()) || mono.is_empty();
    if keep_coeff {
        factors.push(Expr::Num(*c));
    }
    for (atom, k) in mono {
        let base = Expr::Atom(atom.clone());
        factors.push(if *k == 1 { base } else { base.pow(*k) });
    }
    if factors.len() == 1 {
        factors.pop().unwrap()
    } else {
        Expr::Prod(factors)
    }
}

/// Lower an arbitrary tree to its polynomial form.
pub(crate) fn poly(e: &Expr) -> Poly {
    match e {
        Expr::Num(c) => Poly::constant(*c),
        Expr::Atom(a) => Poly::atom(canon_atom(a)),
        Expr::Sum(ts) => ts.iter().fold(Poly::zero(), |acc, t| acc.add(poly(t))),
        Expr::Prod(fs) => {
            let mut acc = Poly::constant(Coeff::ONE);
            for f in fs {
                if acc.is_zero() {
                    return acc;
                }
                acc = acc.mul(&poly(f));
            }
            acc
        }
        Expr::Pow(b, k) => poly(b).pow(*k),
        Expr::Neg(inner) => poly(inner).neg(),
    }
}

fn canon_atom(a: &Atom) -> Atom {
    match a {
        Atom::Func(f, arg) => Atom::Func(*f, Box::new(canonical(arg))),
        _ => a.clone(),
    }
}

pub(crate) fn canonical(e: &Expr) -> Expr {
    poly(e).to_expr()
}

/// Print the canonical form of `e` in parseable surface syntax.
pub(crate) fn write_canonical(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let p = poly(e);
    if p.terms.is_empty() {
        return write!(f, "0");
    }
    for (i, (mono, c)) in p.terms.iter().enumerate() {
        let neg = c.is_negative();
        if i == 0 {
            if neg {
                write!(f, "-")?;
            }
        } else if neg {
            write!(f, " - ")?;
        } else {
            write!(f, " + ")?;
        }
        write_term(mono, &c.abs(), f)?;
    }
    Ok(())
}

fn write_term(mono: &Monomial, c_abs: &Coeff, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if mono.is_empty() {
        return write!(f, "{c_abs}");
    }
    let mut lead = true;
    let implied_one = matches!(c_abs, Coeff::Rational(_) if c_abs.is_one());
    if !implied_one {
        match c_abs {
            Coeff::Rational(r) if r.denom() != &1 => write!(f, "({c_abs})")?,
            _ => write!(f, "{c_abs}")?,
        }
        lead = false;
    }
    for (atom, k) in mono {
        if !lead {
            write!(f, "*")?;
        }
        lead = false;
        write!(f, "{atom}")?;
        if *k > 1 {
            write!(f, "^{k}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::coord("x")
    }

    #[test]
    fn like_terms_collect() {
        let e = x() + x() + Expr::int(2) * x();
        assert_eq!(e.simplify(), (Expr::int(4) * x()).simplify());
        assert_eq!(e.simplify().to_string(), "4*x");
    }

    #[test]
    fn expansion_and_cancellation() {
        // (x + 1)^2 - x^2 - 2x - 1 == 0
        let e = (x() + Expr::ONE).pow(2) - x().pow(2) - Expr::int(2) * x() - Expr::ONE;
        assert!(e.is_zero());
    }

    #[test]
    fn canonical_is_idempotent() {
        let e = (x() + Expr::ratio(1, 2)).pow(3) * (Expr::constant("a") - x());
        let c1 = e.simplify();
        let c2 = c1.simplify();
        assert_eq!(c1, c2);
    }

    #[test]
    fn term_order_is_stable() {
        let e = x().pow(2) + Expr::int(2) * x() + Expr::ONE;
        assert_eq!(e.simplify().to_string(), "1 + 2*x + x^2");
    }

    #[test]
    fn float_mark_survives() {
        let e = Expr::float(1.0) * x();
        assert_eq!(e.simplify().to_string(), "1.0*x");
        // float zero coefficient still vanishes
        let z = Expr::float(0.0) * x();
        assert!(z.is_zero());
    }
}
