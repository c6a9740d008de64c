//! Herglotz variational toolkit: parse action-dependent Lagrangians, derive
//! their generalized Euler--Lagrange equations symbolically, and verify
//! candidate solutions numerically.
//!
//! The crate is organized bottom-up:
//!
//! * [`expr`] / [`coeff`]: expression trees over jet atoms with exact
//!   rational coefficients and a decidable canonical form,
//! * [`jet`]: total derivatives, the deformed derivative `D_mu - theta_mu`,
//!   closedness diagnostics, and the equation derivations themselves,
//! * [`parse`]: the text format for problem files,
//! * [`compile`]: flat evaluators for expressions in numeric inner loops,
//! * [`mech`]: contact mechanics integration and variational checks,
//! * [`field`]: the two reference PDE solvers, action-density
//!   reconstruction, and residual reports.

// Stencil and quadrature loops index several arrays at matching offsets;
// indexed form keeps them readable next to their difference formulas.
#![allow(clippy::needless_range_loop)]

pub mod canon;
pub mod coeff;
pub mod compile;
pub mod expr;
pub mod field;
pub mod jet;
pub mod mech;
pub mod parse;
pub mod selftest;
pub mod stencil;

pub use coeff::Coeff;
pub use compile::{CompileError, Program};
pub use expr::{Atom, EvalError, Expr, Func};
pub use field::{
    action_value, analytic_section, discrete_action_gradient_check, evaluate_residuals,
    reconstruct_action_density, section_residuals, solve_damped_kdv, solve_damped_string,
    string_energy_series, FieldError, FieldSolution, GradientCheck, Grid2D, Provenance,
    ResidualReport, SectionResiduals, KDV_STABILITY_SAFETY,
};
pub use jet::{
    DerivationKind, EquationSet, JetError, LagrangianSpec, MechanicsEquations, MultiIndex,
    SpecError,
};
pub use mech::{HermitePath, MechError, MechanicsSystem, PathPoint, Trajectory};
pub use parse::{
    parse_expression, parse_problem, print_expression, Bc, ParseError, ProblemFile, Scheme,
    SectionSpec, SolverConfig, Symbols,
};
