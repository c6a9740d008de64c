//! Jet-space calculus for action-dependent Lagrangians.
//!
//! A [`LagrangianSpec`] fixes the vocabulary: independent coordinates
//! `x^mu`, fields `u^a`, derivative order `r`, and named constants.  The
//! Lagrangian may depend on the action densities `z^mu` (undifferentiated).
//! On top of that this module implements:
//!
//! * the total derivative `D_mu`, raising jets formally,
//! * the dissipation components `theta_mu = dL/dz^mu`,
//! * the deformed derivative `D^L_mu F = D_mu F - F theta_mu`,
//! * closedness residuals `C[mu][nu] = D_nu theta_mu - D_mu theta_nu`,
//! * the generalized Euler--Lagrange derivations (mechanics, first-order
//!   field, higher-order field).
//!
//! Sign conventions.  Every stored residual `E_a` follows the first-order
//! orientation
//!
//! ```text
//! E_a = sum_mu D_mu(dL/du^a_mu) - dL/du^a - sum_mu theta_mu dL/du^a_mu
//! ```
//!
//! The higher-order derivation computes `sum_I (-1)^|I| D^L_I(dL/du^a_I)`
//! and negates it before storing, so at order 1 both derivations produce
//! canonically equal residuals and second-derivative terms carry positive
//! sign in printed equations.

use crate::expr::{Atom, Expr};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Derivative multi-index over the coordinate list: `counts[mu]` repetitions
/// of coordinate `mu`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(pub Vec<u16>);

impl MultiIndex {
    pub fn zero(m: usize) -> MultiIndex {
        MultiIndex(vec![0; m])
    }

    /// Total order `|I|`.
    pub fn order(&self) -> usize {
        self.0.iter().map(|&k| k as usize).sum()
    }

    /// Sorted derivative-suffix string for the given coordinate names.
    pub fn suffix(&self, coords: &[String]) -> String {
        let mut letters: Vec<char> = Vec::with_capacity(self.order());
        for (mu, &count) in self.0.iter().enumerate() {
            let c = coords[mu].chars().next().expect("nonempty coordinate");
            for _ in 0..count {
                letters.push(c);
            }
        }
        letters.sort_unstable();
        letters.into_iter().collect()
    }

    /// Every multi-index over `m` coordinates with `|I| <= r`, the zero index
    /// first, in a fixed deterministic order.
    pub fn all_up_to(m: usize, r: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut current = vec![0u16; m];
        fn rec(out: &mut Vec<MultiIndex>, current: &mut Vec<u16>, pos: usize, left: usize) {
            if pos == current.len() {
                out.push(MultiIndex(current.clone()));
                return;
            }
            for k in 0..=left {
                current[pos] = k as u16;
                rec(out, current, pos + 1, left - k);
            }
            current[pos] = 0;
        }
        rec(&mut out, &mut current, 0, r);
        out.sort_by_key(|i| (i.order(), i.0.clone()));
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("no coordinates declared")]
    NoCoords,
    #[error("no fields declared")]
    NoFields,
    #[error("invalid name `{name}`: {reason}")]
    BadName { name: String, reason: String },
    #[error("duplicate declaration of `{0}`")]
    Duplicate(String),
    #[error("constant `{name}` shadows the derivative `{looks_like}` of field `{field}`")]
    ShadowsJet {
        name: String,
        field: String,
        looks_like: String,
    },
    #[error("Lagrangian references undeclared symbol `{0}`")]
    Undeclared(String),
    #[error("jet `{atom}` has order {found}, above the declared order {declared}")]
    OrderExceeded {
        atom: String,
        found: usize,
        declared: u32,
    },
    #[error("action density `{0}` appears differentiated in the Lagrangian")]
    DifferentiatedAction(String),
    #[error("action component `{0}` is not a declared coordinate")]
    BadActionComponent(String),
    #[error("declared order must be at least 1")]
    ZeroOrder,
}

#[derive(Debug, Error)]
pub enum JetError {
    #[error("total derivative would raise a jet past the cap r_max = {r_max}")]
    OrderOverflow { r_max: u32 },
    #[error("action dependence is not closed: {summary}")]
    NotClosed {
        summary: String,
        residuals: Vec<Vec<Expr>>,
    },
    #[error("derivation requires a first-order Lagrangian, but the declared order is {0}")]
    WrongOrder(u32),
    #[error("mechanics derivation requires a single coordinate, found {0}")]
    NotMechanics(usize),
    #[error("higher-order mechanics (single coordinate, order above 1) is not supported")]
    HigherOrderMechanics,
}

/// Which derivation produced an [`EquationSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivationKind {
    Mechanics,
    FirstOrder,
    HigherOrder,
}

impl DerivationKind {
    pub fn name(&self) -> &'static str {
        match self {
            DerivationKind::Mechanics => "mechanics",
            DerivationKind::FirstOrder => "first-order",
            DerivationKind::HigherOrder => "higher-order",
        }
    }
}

/// Derived equations plus the diagnostics that travel with them.
#[derive(Clone, Debug)]
pub struct EquationSet {
    pub kind: DerivationKind,
    pub fields: Vec<String>,
    /// Residuals `E_a`; a section solves the equations iff each is zero.
    pub residuals: Vec<Expr>,
    /// Constraint `phi = z^mu_mu - L` (summed over coordinates).
    pub constraint: Expr,
    /// Dissipation components `theta_mu = dL/dz^mu`.
    pub dissipation: Vec<Expr>,
    /// Closedness residuals `C[mu][nu] = D_nu theta_mu - D_mu theta_nu`.
    pub closedness: Vec<Vec<Expr>>,
    pub closed: bool,
}

#[derive(Serialize)]
struct EquationSetDoc {
    kind: &'static str,
    fields: Vec<String>,
    equations: BTreeMap<String, String>,
    constraint: String,
    dissipation: Vec<String>,
    closed: bool,
    closedness_matrix: Vec<Vec<String>>,
}

impl EquationSet {
    pub fn to_json(&self) -> serde_json::Value {
        let doc = EquationSetDoc {
            kind: self.kind.name(),
            fields: self.fields.clone(),
            equations: self
                .fields
                .iter()
                .cloned()
                .zip(self.residuals.iter().map(|e| e.to_string()))
                .collect(),
            constraint: self.constraint.to_string(),
            dissipation: self.dissipation.iter().map(|e| e.to_string()).collect(),
            closed: self.closed,
            closedness_matrix: self
                .closedness
                .iter()
                .map(|row| row.iter().map(|e| e.to_string()).collect())
                .collect(),
        };
        serde_json::to_value(doc).expect("equation set serializes")
    }
}

/// Mechanics equations in acceleration form: `W qdd = R` with
/// `W[i][j] = d^2 L / dqdot_i dqdot_j`.
#[derive(Clone, Debug)]
pub struct MechanicsEquations {
    pub equations: EquationSet,
    pub mass_matrix: Vec<Vec<Expr>>,
    pub forcing: Vec<Expr>,
}

/// A validated Lagrangian problem: vocabulary plus the Lagrangian itself.
#[derive(Clone, Debug)]
pub struct LagrangianSpec {
    coords: Vec<String>,
    fields: Vec<String>,
    order: u32,
    r_max: u32,
    constants: BTreeMap<String, Option<f64>>,
    lagrangian: Expr,
}

const RESERVED: &[&str] = &["z", "pi", "sin", "cos", "exp", "log", "sinh", "cosh", "tanh", "recip"];

fn check_name(name: &str, single_letter: bool, allow_underscore: bool) -> Result<(), SpecError> {
    let bad = |reason: &str| SpecError::BadName {
        name: name.to_string(),
        reason: reason.to_string(),
    };
    if name.is_empty() {
        return Err(bad("empty"));
    }
    if RESERVED.contains(&name) {
        return Err(bad("reserved"));
    }
    let mut chars = name.chars();
    let first = chars.next().unwrap();
    if !first.is_ascii_alphabetic() {
        return Err(bad("must start with a letter"));
    }
    for c in name.chars() {
        let ok = c.is_ascii_alphanumeric() || (allow_underscore && c == '_');
        if !ok {
            return Err(bad("contains characters outside [A-Za-z0-9_]"));
        }
    }
    if single_letter && name.chars().count() != 1 {
        return Err(bad("coordinates must be single letters"));
    }
    Ok(())
}

impl LagrangianSpec {
    /// Validate and build.  `r_max` of `None` defaults to `2*order + 2`,
    /// enough headroom for the higher-order derivation plus diagnostics.
    pub fn new(
        coords: Vec<String>,
        fields: Vec<String>,
        order: u32,
        r_max: Option<u32>,
        constants: BTreeMap<String, Option<f64>>,
        lagrangian: Expr,
    ) -> Result<LagrangianSpec, SpecError> {
        if coords.is_empty() {
            return Err(SpecError::NoCoords);
        }
        if fields.is_empty() {
            return Err(SpecError::NoFields);
        }
        if order == 0 {
            return Err(SpecError::ZeroOrder);
        }

        let mut seen = std::collections::BTreeSet::new();
        for c in &coords {
            check_name(c, true, false)?;
            if !seen.insert(c.clone()) {
                return Err(SpecError::Duplicate(c.clone()));
            }
        }
        for f in &fields {
            check_name(f, false, false)?;
            if !seen.insert(f.clone()) {
                return Err(SpecError::Duplicate(f.clone()));
            }
        }
        for name in constants.keys() {
            check_name(name, false, true)?;
            if !seen.insert(name.clone()) {
                return Err(SpecError::Duplicate(name.clone()));
            }
            // `gamma_x` is a fine constant; `u_x` next to a field `u` is not.
            if let Some((base, suffix)) = name.split_once('_') {
                if fields.iter().any(|f| f == base)
                    && !suffix.is_empty()
                    && suffix.chars().all(|c| coords.iter().any(|k| k == &c.to_string()))
                {
                    return Err(SpecError::ShadowsJet {
                        name: name.clone(),
                        field: base.to_string(),
                        looks_like: name.clone(),
                    });
                }
            }
        }

        let spec = LagrangianSpec {
            coords,
            fields,
            order,
            r_max: r_max.unwrap_or(2 * order + 2),
            constants,
            lagrangian,
        };
        spec.validate_lagrangian()?;
        Ok(spec)
    }

    fn validate_lagrangian(&self) -> Result<(), SpecError> {
        for atom in self.lagrangian.atoms() {
            match &atom {
                Atom::Coord(name) => {
                    if !self.coords.contains(name) {
                        return Err(SpecError::Undeclared(name.clone()));
                    }
                }
                Atom::Const(name) => {
                    if name != "pi" && !self.constants.contains_key(name) {
                        return Err(SpecError::Undeclared(name.clone()));
                    }
                }
                Atom::FieldJet { field, jet } => {
                    if !self.fields.contains(field) {
                        return Err(SpecError::Undeclared(atom.to_string()));
                    }
                    let order = jet.chars().count();
                    if order > self.order as usize {
                        return Err(SpecError::OrderExceeded {
                            atom: atom.to_string(),
                            found: order,
                            declared: self.order,
                        });
                    }
                    for c in jet.chars() {
                        if !self.coords.iter().any(|k| k == &c.to_string()) {
                            return Err(SpecError::Undeclared(atom.to_string()));
                        }
                    }
                }
                Atom::ActionJet { comp, jet } => {
                    if !self.coords.contains(comp) {
                        return Err(SpecError::BadActionComponent(atom.to_string()));
                    }
                    if !jet.is_empty() {
                        return Err(SpecError::DifferentiatedAction(atom.to_string()));
                    }
                }
                Atom::Func(..) => {}
            }
        }
        Ok(())
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn r_max(&self) -> u32 {
        self.r_max
    }

    pub fn constants(&self) -> &BTreeMap<String, Option<f64>> {
        &self.constants
    }

    pub fn lagrangian(&self) -> &Expr {
        &self.lagrangian
    }

    /// One coordinate means contact mechanics.
    pub fn is_mechanics(&self) -> bool {
        self.coords.len() == 1
    }

    /// Numeric value of a constant, with `pi` built in.
    pub fn constant_value(&self, name: &str) -> Option<f64> {
        if name == "pi" {
            return Some(std::f64::consts::PI);
        }
        self.constants.get(name).copied().flatten()
    }

    fn action_atom(&self, mu: usize) -> Atom {
        Atom::ActionJet {
            comp: self.coords[mu].clone(),
            jet: String::new(),
        }
    }

    pub fn field_atom(&self, field: &str, suffix: &str) -> Atom {
        let mut letters: Vec<char> = suffix.chars().collect();
        letters.sort_unstable();
        Atom::FieldJet {
            field: field.to_string(),
            jet: letters.into_iter().collect(),
        }
    }

    /// Total derivative `D_mu e`: the explicit coordinate derivative plus the
    /// formal chain rule over every jet atom occurring in `e`.
    pub fn total_derivative(&self, e: &Expr, mu: usize) -> Result<Expr, JetError> {
        assert!(mu < self.coords.len(), "coordinate index out of range");
        let jets: Vec<Atom> = e.atoms().into_iter().filter(Atom::is_jet).collect();
        let letter = &self.coords[mu];
        let mut terms = vec![e.partial_deriv(&Atom::Coord(letter.clone()))];
        for jet in jets {
            let coeff = e.partial_deriv(&jet);
            if coeff.is_zero() {
                continue;
            }
            // raising this jet produces order + 1
            if jet.jet_order() >= self.r_max as usize {
                return Err(JetError::OrderOverflow { r_max: self.r_max });
            }
            terms.push(Expr::Atom(jet.bump(letter)) * coeff);
        }
        Ok(Expr::Sum(terms).simplify())
    }

    /// Dissipation components `theta_mu = dL/dz^mu`, one per coordinate.
    pub fn dissipation_form(&self) -> Vec<Expr> {
        (0..self.coords.len())
            .map(|mu| self.lagrangian.partial_deriv(&self.action_atom(mu)).simplify())
            .collect()
    }

    /// Deformed derivative `D^L_mu F = D_mu F - F theta_mu`.
    pub fn herglotz_operator(&self, f: &Expr, mu: usize) -> Result<Expr, JetError> {
        let theta = self.lagrangian.partial_deriv(&self.action_atom(mu));
        let d = self.total_derivative(f, mu)?;
        Ok((d - f.clone() * theta).simplify())
    }

    /// `(D^L_mu D^L_nu - D^L_nu D^L_mu) F`, simplified.  Zero for every `F`
    /// iff the action dependence is closed.
    pub fn commutator_residual(&self, f: &Expr, mu: usize, nu: usize) -> Result<Expr, JetError> {
        let a = self.herglotz_operator(&self.herglotz_operator(f, nu)?, mu)?;
        let b = self.herglotz_operator(&self.herglotz_operator(f, mu)?, nu)?;
        Ok((a - b).simplify())
    }

    /// Closedness residual matrix `C[mu][nu] = D_nu theta_mu - D_mu theta_nu`.
    /// Antisymmetric; all-zero iff the dissipation 1-form is closed.
    pub fn closed_action_residuals(&self) -> Result<Vec<Vec<Expr>>, JetError> {
        let m = self.coords.len();
        let theta = self.dissipation_form();
        let mut c = vec![vec![Expr::ZERO; m]; m];
        for mu in 0..m {
            for nu in (mu + 1)..m {
                let r = (self.total_derivative(&theta[mu], nu)?
                    - self.total_derivative(&theta[nu], mu)?)
                .simplify();
                c[nu][mu] = (-r.clone()).simplify();
                c[mu][nu] = r;
            }
        }
        Ok(c)
    }

    /// Constraint `phi = z^mu_mu - L` (Einstein sum over coordinates); in
    /// mechanics this is `z^t_t - L`, the defining relation of the action.
    pub fn constraint_expression(&self) -> Expr {
        let mut terms: Vec<Expr> = self
            .coords
            .iter()
            .map(|c| {
                Expr::Atom(Atom::ActionJet {
                    comp: c.clone(),
                    jet: c.clone(),
                })
            })
            .collect();
        terms.push(-self.lagrangian.clone());
        Expr::Sum(terms).simplify()
    }

    fn closedness_summary(c: &[Vec<Expr>], coords: &[String]) -> Option<String> {
        for (mu, row) in c.iter().enumerate() {
            for (nu, e) in row.iter().enumerate() {
                if !e.is_zero() {
                    return Some(format!("C[{}][{}] = {}", coords[mu], coords[nu], e));
                }
            }
        }
        None
    }

    fn equation_set(
        &self,
        kind: DerivationKind,
        residuals: Vec<Expr>,
    ) -> Result<EquationSet, JetError> {
        let closedness = self.closed_action_residuals()?;
        let closed = closedness.iter().flatten().all(Expr::is_zero);
        Ok(EquationSet {
            kind,
            fields: self.fields.clone(),
            residuals,
            constraint: self.constraint_expression(),
            dissipation: self.dissipation_form(),
            closedness,
            closed,
        })
    }

    /// First-order field equations
    /// `E_a = D_mu(dL/du^a_mu) - dL/du^a - theta_mu dL/du^a_mu` (summed over
    /// `mu`).  Works for any action dependence, closed or not.
    pub fn derive_first_order_equations(&self) -> Result<EquationSet, JetError> {
        if self.order != 1 {
            return Err(JetError::WrongOrder(self.order));
        }
        let theta = self.dissipation_form();
        let m = self.coords.len();
        let mut residuals = Vec::with_capacity(self.fields.len());
        for field in &self.fields {
            let mut terms = Vec::new();
            for mu in 0..m {
                let momentum = self.lagrangian.partial_deriv(&self.field_atom(field, &self.coords[mu]));
                if momentum.is_zero() {
                    continue;
                }
                terms.push(self.total_derivative(&momentum, mu)?);
                terms.push(-(theta[mu].clone() * momentum));
            }
            terms.push(-self.lagrangian.partial_deriv(&self.field_atom(field, "")));
            residuals.push(Expr::Sum(terms).simplify());
        }
        self.equation_set(DerivationKind::FirstOrder, residuals)
    }

    /// Higher-order field equations via iterated deformed derivatives:
    /// stored as `E_a = -sum_{|I| <= r} (-1)^|I| D^L_I (dL/du^a_I)`.
    ///
    /// `D^L_I` applies `D^L_mu` once per entry of `I`, ascending in `mu`;
    /// the closedness precondition makes the order immaterial.  Refuses
    /// non-closed Lagrangians (the iterated operator is ill-defined there)
    /// and single-coordinate problems above order 1.
    pub fn derive_higher_order_equations(&self) -> Result<EquationSet, JetError> {
        if self.coords.len() == 1 && self.order > 1 {
            return Err(JetError::HigherOrderMechanics);
        }
        let closedness = self.closed_action_residuals()?;
        if let Some(summary) = Self::closedness_summary(&closedness, &self.coords) {
            return Err(JetError::NotClosed {
                summary,
                residuals: closedness,
            });
        }
        let m = self.coords.len();
        let r = self.order as usize;
        let mut residuals = Vec::with_capacity(self.fields.len());
        for field in &self.fields {
            let mut terms = Vec::new();
            for index in MultiIndex::all_up_to(m, r) {
                let suffix = index.suffix(&self.coords);
                let mut term = self.lagrangian.partial_deriv(&self.field_atom(field, &suffix));
                if term.is_zero() {
                    continue;
                }
                for (mu, &count) in index.0.iter().enumerate() {
                    for _ in 0..count {
                        term = self.herglotz_operator(&term, mu)?;
                    }
                }
                // overall minus folds in the sign normalization
                if index.order() % 2 == 0 {
                    term = -term;
                }
                terms.push(term);
            }
            residuals.push(Expr::Sum(terms).simplify());
        }
        self.equation_set(DerivationKind::HigherOrder, residuals)
    }

    /// Contact mechanics equations `E_i = D_t(dL/dqdot_i) - dL/dq_i -
    /// theta dL/dqdot_i`, plus the acceleration form `W qdd = R`.
    pub fn derive_mechanics_equations(&self) -> Result<MechanicsEquations, JetError> {
        if self.coords.len() != 1 {
            return Err(JetError::NotMechanics(self.coords.len()));
        }
        if self.order != 1 {
            return Err(JetError::WrongOrder(self.order));
        }
        let mut set = self.derive_first_order_equations()?;
        set.kind = DerivationKind::Mechanics;

        let t = self.coords[0].clone();
        let n = self.fields.len();
        let accel_atoms: Vec<Atom> = self
            .fields
            .iter()
            .map(|f| self.field_atom(f, &format!("{t}{t}")))
            .collect();
        let mut mass = vec![vec![Expr::ZERO; n]; n];
        let mut forcing = Vec::with_capacity(n);
        let zero_accel: BTreeMap<Atom, Expr> = accel_atoms
            .iter()
            .map(|a| (a.clone(), Expr::ZERO))
            .collect();
        for (i, e) in set.residuals.iter().enumerate() {
            for (j, qdd) in accel_atoms.iter().enumerate() {
                let w = e.partial_deriv(qdd).simplify();
                debug_assert!(
                    w.atoms().iter().all(|a| a.jet_order() < 2),
                    "mass matrix must not depend on accelerations"
                );
                mass[i][j] = w;
            }
            forcing.push((-e.substitute(&zero_accel)).simplify());
        }
        Ok(MechanicsEquations {
            equations: set,
            mass_matrix: mass,
            forcing,
        })
    }
}
