//! Expression trees over jet-bundle atoms.
//!
//! An [`Expr`] is an immutable tree built from numeric literals, atoms
//! (coordinates, named constants, field jets `u_tx`, action jets `z^t_x`),
//! sums, products, non-negative integer powers, negation, and elementary
//! function applications.  Function applications are themselves atoms: for
//! canonicalization purposes `sin(u_t + x)` is a single opaque variable keyed
//! by the canonical form of its argument.
//!
//! The carrier fragment is "multivariate polynomial over atoms".  Division is
//! not a node: rational literals fold into coefficients, and `recip(e)` (the
//! multiplicative inverse as a function application) covers the rare
//! non-polynomial need, e.g. the chain rule for `log`.
//!
//! Semantic equality is decided by comparing canonical forms; see
//! [`crate::canon`].

use crate::canon;
use crate::coeff::Coeff;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use thiserror::Error;

/// Elementary functions admitted as opaque atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sinh,
    Cosh,
    Tanh,
    /// Multiplicative inverse, `recip(e) = 1/e`.
    Recip,
}

impl Func {
    pub fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Recip => "recip",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "recip" => Func::Recip,
            _ => return None,
        })
    }

    pub fn apply(&self, x: f64) -> Result<f64, EvalError> {
        match self {
            Func::Sin => Ok(x.sin()),
            Func::Cos => Ok(x.cos()),
            Func::Exp => Ok(x.exp()),
            Func::Log => {
                if x > 0.0 {
                    Ok(x.ln())
                } else {
                    Err(EvalError::Domain { func: "log", arg: x })
                }
            }
            Func::Sinh => Ok(x.sinh()),
            Func::Cosh => Ok(x.cosh()),
            Func::Tanh => Ok(x.tanh()),
            Func::Recip => {
                if x != 0.0 {
                    Ok(1.0 / x)
                } else {
                    Err(EvalError::Domain { func: "recip", arg: x })
                }
            }
        }
    }

    /// Unchecked application for compiled hot loops. Domain failures come
    /// back as IEEE non-finite values instead of errors; callers watch for
    /// those at step granularity.
    pub fn apply_raw(&self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
            Func::Recip => 1.0 / x,
        }
    }
}

/// A leaf variable.
///
/// Variant order is the canonical atom order: coordinates, then constants,
/// then field jets (lexicographic in (field, derivative suffix)), then action
/// jets, then function atoms.  Derived `Ord` relies on it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    /// Independent coordinate, e.g. `t`.
    Coord(String),
    /// Named constant, e.g. `gamma`.  May or may not carry a numeric value;
    /// the value table lives in the Lagrangian spec, not here.
    Const(String),
    /// Field jet `u_tx`: `field` name plus the derivative suffix, a sorted
    /// string of coordinate letters.  Empty suffix is the field value itself.
    FieldJet { field: String, jet: String },
    /// Action jet `z^t_x`: component coordinate plus derivative suffix.
    ActionJet { comp: String, jet: String },
    /// Opaque function application.  The argument is kept canonical inside
    /// canonical forms so equal atoms compare equal structurally.
    Func(Func, Box<Expr>),
}

impl Atom {
    pub fn is_jet(&self) -> bool {
        matches!(self, Atom::FieldJet { .. } | Atom::ActionJet { .. })
    }

    /// Jet with one extra derivative in coordinate `letter`.
    /// Panics on non-jet atoms; callers filter first.
    pub fn bump(&self, letter: &str) -> Atom {
        match self {
            Atom::FieldJet { field, jet } => Atom::FieldJet {
                field: field.clone(),
                jet: sorted_suffix(jet, letter),
            },
            Atom::ActionJet { comp, jet } => Atom::ActionJet {
                comp: comp.clone(),
                jet: sorted_suffix(jet, letter),
            },
            _ => panic!("bump on non-jet atom"),
        }
    }

    pub fn jet_order(&self) -> usize {
        match self {
            Atom::FieldJet { jet, .. } | Atom::ActionJet { jet, .. } => jet.chars().count(),
            _ => 0,
        }
    }
}

fn sorted_suffix(jet: &str, letter: &str) -> String {
    let mut chars: Vec<char> = jet.chars().chain(letter.chars()).collect();
    chars.sort_unstable();
    chars.into_iter().collect()
}

/// Expression tree.  Variant order matters for derived `Ord` (used only to
/// give canonical forms a total order; any fixed order works).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Num(Coeff),
    Atom(Atom),
    Sum(Vec<Expr>),
    Prod(Vec<Expr>),
    Pow(Box<Expr>, u32),
    Neg(Box<Expr>),
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("unbound atom `{0}`")]
    Unbound(String),
    #[error("domain error: {func}({arg})")]
    Domain { func: &'static str, arg: f64 },
}

impl Expr {
    pub const ZERO: Expr = Expr::Num(Coeff::ZERO);
    pub const ONE: Expr = Expr::Num(Coeff::ONE);

    pub fn int(n: i64) -> Expr {
        Expr::Num(Coeff::int(n))
    }

    pub fn ratio(num: i64, den: i64) -> Expr {
        Expr::Num(Coeff::ratio(num, den))
    }

    pub fn float(x: f64) -> Expr {
        Expr::Num(Coeff::float(x))
    }

    pub fn coord(name: &str) -> Expr {
        Expr::Atom(Atom::Coord(name.to_string()))
    }

    pub fn constant(name: &str) -> Expr {
        Expr::Atom(Atom::Const(name.to_string()))
    }

    /// Field jet; the suffix is sorted on construction so `u_tx == u_xt`.
    pub fn field_jet(field: &str, jet: &str) -> Expr {
        Expr::Atom(Atom::FieldJet {
            field: field.to_string(),
            jet: sorted_suffix(jet, ""),
        })
    }

    pub fn action_jet(comp: &str, jet: &str) -> Expr {
        Expr::Atom(Atom::ActionJet {
            comp: comp.to_string(),
            jet: sorted_suffix(jet, ""),
        })
    }

    pub fn func(f: Func, arg: Expr) -> Expr {
        Expr::Atom(Atom::Func(f, Box::new(arg)))
    }

    pub fn pow(self, k: u32) -> Expr {
        Expr::Pow(Box::new(self), k)
    }

    /// Canonical form: fully expanded polynomial over atoms with like terms
    /// collected, ordered deterministically.  Idempotent.
    pub fn simplify(&self) -> Expr {
        canon::canonical(self)
    }

    /// Exact zero test, sound and complete on the polynomial-over-atoms
    /// fragment (`sin(x)^2 + cos(x)^2 - 1` is *not* zero here: function atoms
    /// are opaque).
    pub fn is_zero(&self) -> bool {
        canon::poly(self).is_zero()
    }

    /// Semantic equality through canonical forms.
    pub fn equivalent(&self, other: &Expr) -> bool {
        canon::poly(self) == canon::poly(other)
    }

    /// Partial derivative with respect to one atom.  `v` must not itself be a
    /// function atom; function applications always differentiate through the
    /// chain rule.
    pub fn partial_deriv(&self, v: &Atom) -> Expr {
        debug_assert!(
            !matches!(v, Atom::Func(..)),
            "differentiation variable must be a coordinate, constant, or jet atom"
        );
        match self {
            Expr::Num(_) => Expr::ZERO,
            Expr::Atom(a) => match a {
                Atom::Func(f, arg) => {
                    let inner = arg.partial_deriv(v);
                    if inner.is_zero() {
                        Expr::ZERO
                    } else {
                        func_deriv(*f, arg) * inner
                    }
                }
                _ => {
                    if a == v {
                        Expr::ONE
                    } else {
                        Expr::ZERO
                    }
                }
            },
            Expr::Sum(ts) => Expr::Sum(ts.iter().map(|t| t.partial_deriv(v)).collect()),
            Expr::Prod(fs) => {
                let mut terms = Vec::with_capacity(fs.len());
                for i in 0..fs.len() {
                    let mut factors = Vec::with_capacity(fs.len());
                    for (j, f) in fs.iter().enumerate() {
                        if i == j {
                            factors.push(f.partial_deriv(v));
                        } else {
                            factors.push(f.clone());
                        }
                    }
                    terms.push(Expr::Prod(factors));
                }
                Expr::Sum(terms)
            }
            Expr::Pow(b, k) => {
                if *k == 0 {
                    Expr::ZERO
                } else {
                    Expr::int(*k as i64) * b.as_ref().clone().pow(k - 1) * b.partial_deriv(v)
                }
            }
            Expr::Neg(e) => Expr::Neg(Box::new(e.partial_deriv(v))),
        }
    }

    /// Simultaneous substitution of atoms by expressions; replacements are
    /// inserted verbatim (no re-substitution) and the result is simplified.
    /// Function atoms cannot be substitution keys; substitution recurses into
    /// their arguments instead.
    pub fn substitute(&self, bindings: &BTreeMap<Atom, Expr>) -> Expr {
        debug_assert!(
            bindings.keys().all(|a| !matches!(a, Atom::Func(..))),
            "function atoms cannot be substitution keys"
        );
        self.replace(bindings).simplify()
    }

    fn replace(&self, bindings: &BTreeMap<Atom, Expr>) -> Expr {
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Atom(a) => {
                if let Some(r) = bindings.get(a) {
                    r.clone()
                } else if let Atom::Func(f, arg) = a {
                    Expr::func(*f, arg.replace(bindings))
                } else {
                    self.clone()
                }
            }
            Expr::Sum(ts) => Expr::Sum(ts.iter().map(|t| t.replace(bindings)).collect()),
            Expr::Prod(fs) => Expr::Prod(fs.iter().map(|f| f.replace(bindings)).collect()),
            Expr::Pow(b, k) => Expr::Pow(Box::new(b.replace(bindings)), *k),
            Expr::Neg(e) => Expr::Neg(Box::new(e.replace(bindings))),
        }
    }

    /// Evaluate with a full atom binding.  Every non-function atom that
    /// occurs must be bound.
    pub fn eval_numeric(&self, bindings: &HashMap<Atom, f64>) -> Result<f64, EvalError> {
        match self {
            Expr::Num(c) => Ok(c.to_f64()),
            Expr::Atom(a) => match a {
                Atom::Func(f, arg) => f.apply(arg.eval_numeric(bindings)?),
                _ => bindings
                    .get(a)
                    .copied()
                    .ok_or_else(|| EvalError::Unbound(a.to_string())),
            },
            Expr::Sum(ts) => {
                let mut acc = 0.0;
                for t in ts {
                    acc += t.eval_numeric(bindings)?;
                }
                Ok(acc)
            }
            Expr::Prod(fs) => {
                let mut acc = 1.0;
                for f in fs {
                    acc *= f.eval_numeric(bindings)?;
                }
                Ok(acc)
            }
            Expr::Pow(b, k) => Ok(b.eval_numeric(bindings)?.powi(*k as i32)),
            Expr::Neg(e) => Ok(-e.eval_numeric(bindings)?),
        }
    }

    /// All leaf atoms (coordinates, constants, jets), recursing into function
    /// arguments.  Function atoms themselves are not collected.
    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<Atom>) {
        match self {
            Expr::Num(_) => {}
            Expr::Atom(a) => match a {
                Atom::Func(_, arg) => arg.collect_atoms(out),
                _ => {
                    out.insert(a.clone());
                }
            },
            Expr::Sum(es) | Expr::Prod(es) => {
                for e in es {
                    e.collect_atoms(out);
                }
            }
            Expr::Pow(b, _) => b.collect_atoms(out),
            Expr::Neg(e) => e.collect_atoms(out),
        }
    }

    /// Highest derivative order among field jets.
    pub fn max_field_jet_order(&self) -> usize {
        self.atoms()
            .iter()
            .filter(|a| matches!(a, Atom::FieldJet { .. }))
            .map(Atom::jet_order)
            .max()
            .unwrap_or(0)
    }

    /// Highest derivative order among action jets (z itself counts as 0).
    pub fn max_action_jet_order(&self) -> usize {
        self.atoms()
            .iter()
            .filter(|a| matches!(a, Atom::ActionJet { .. }))
            .map(Atom::jet_order)
            .max()
            .unwrap_or(0)
    }
}

fn func_deriv(f: Func, arg: &Expr) -> Expr {
    let a = arg.clone();
    match f {
        Func::Sin => Expr::func(Func::Cos, a),
        Func::Cos => Expr::Neg(Box::new(Expr::func(Func::Sin, a))),
        Func::Exp => Expr::func(Func::Exp, a),
        Func::Log => Expr::func(Func::Recip, a),
        Func::Sinh => Expr::func(Func::Cosh, a),
        Func::Cosh => Expr::func(Func::Sinh, a),
        Func::Tanh => Expr::ONE - Expr::func(Func::Tanh, a).pow(2),
        Func::Recip => Expr::Neg(Box::new(Expr::func(Func::Recip, a).pow(2))),
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Sum(vec![self, rhs])
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Sum(vec![self, Expr::Neg(Box::new(rhs))])
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Prod(vec![self, rhs])
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Coord(n) | Atom::Const(n) => write!(f, "{n}"),
            Atom::FieldJet { field, jet } => {
                if jet.is_empty() {
                    write!(f, "{field}")
                } else {
                    write!(f, "{field}_{jet}")
                }
            }
            Atom::ActionJet { comp, jet } => {
                if jet.is_empty() {
                    write!(f, "z^{comp}")
                } else {
                    write!(f, "z^{comp}_{jet}")
                }
            }
            Atom::Func(func, arg) => write!(f, "{}({})", func.name(), arg),
        }
    }
}

/// `Display` prints the canonical form in parseable surface syntax, so
/// `parse(e.to_string())` is canonically equal to `e`.  The printer itself
/// lives in `canon`, next to the term order it relies on.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        canon::write_canonical(self, f)
    }
}
