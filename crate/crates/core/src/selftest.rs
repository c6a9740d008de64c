//! Deterministic generators for the test suites.
//!
//! Hidden from docs; the acceptance tests and the core property tests both
//! need the same seeded random Lagrangians, so the generators live here
//! rather than being copied between crates.  The RNG is a self-contained
//! splitmix64 so the crate's public surface carries no RNG dependency.

#![doc(hidden)]

use crate::expr::Expr;
use crate::jet::LagrangianSpec;
use std::collections::BTreeMap;

/// splitmix64: tiny, seedable, stable across platforms.
pub struct Rng64 {
    state: u64,
}

impl Rng64 {
    pub fn new(seed: u64) -> Rng64 {
        Rng64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Small nonzero integer in `[-max, max]`.
    pub fn small_int(&mut self, max: i64) -> i64 {
        let span = 2 * max;
        let v = (self.next_u64() % span as u64) as i64 - max;
        if v >= 0 {
            v + 1
        } else {
            v
        }
    }
}

fn first_order_atom(rng: &mut Rng64) -> Expr {
    match rng.below(7) {
        0 => Expr::coord("t"),
        1 => Expr::coord("x"),
        2 => Expr::constant("c1"),
        3 => Expr::constant("c2"),
        4 => Expr::field_jet("u", ""),
        5 => Expr::field_jet("u", "t"),
        _ => Expr::field_jet("u", "x"),
    }
}

fn coord_atom(rng: &mut Rng64) -> Expr {
    match rng.below(3) {
        0 => Expr::coord("t"),
        1 => Expr::coord("x"),
        _ => Expr::constant("c1"),
    }
}

fn polynomial<F: FnMut(&mut Rng64) -> Expr>(
    rng: &mut Rng64,
    terms: usize,
    factors_max: usize,
    mut atom: F,
) -> Expr {
    let mut sum = Vec::new();
    for _ in 0..terms {
        let mut prod = vec![Expr::int(rng.small_int(4))];
        for _ in 0..(1 + rng.below(factors_max)) {
            let base = atom(rng);
            let k = 1 + rng.below(2) as u32;
            prod.push(base.pow(k));
        }
        sum.push(Expr::Prod(prod));
    }
    Expr::Sum(sum)
}

/// Random first-order field Lagrangian over coords (t, x) and one field u.
///
/// `closed` selects the action-dependence family: a closed one built from a
/// coordinate potential `h(t, x)` via `theta_mu = D_mu h`, or a generic
/// (almost surely non-closed) polynomial dependence that may drag jets into
/// `theta`.
pub fn random_field_spec(seed: u64, closed: bool) -> LagrangianSpec {
    let mut rng = Rng64::new(seed);
    let n_terms = 2 + rng.below(3);
    let l0 = polynomial(&mut rng, n_terms, 3, first_order_atom);

    let (theta_t, theta_x) = if closed {
        match rng.below(2) {
            0 => {
                // separated: theta_t depends on t only, theta_x on x only
                let nf = 1 + rng.below(2);
                let f = polynomial(&mut rng, nf, 2, |r| {
                    if r.below(2) == 0 { Expr::coord("t") } else { Expr::constant("c1") }
                });
                let ng = 1 + rng.below(2);
                let g = polynomial(&mut rng, ng, 2, |r| {
                    if r.below(2) == 0 { Expr::coord("x") } else { Expr::constant("c2") }
                });
                (f, g)
            }
            _ => {
                // potential: theta_mu = D_mu h for a coordinate polynomial h
                let h = polynomial(&mut rng, 2, 2, coord_atom);
                let dt = h.partial_deriv(&crate::expr::Atom::Coord("t".into()));
                let dx = h.partial_deriv(&crate::expr::Atom::Coord("x".into()));
                (dt, dx)
            }
        }
    } else {
        let nf = 1 + rng.below(2);
        let f = polynomial(&mut rng, nf, 2, first_order_atom);
        let ng = 1 + rng.below(2);
        let g = polynomial(&mut rng, ng, 2, first_order_atom);
        (f, g)
    };

    let l = l0
        + theta_t * Expr::action_jet("t", "")
        + theta_x * Expr::action_jet("x", "");

    let mut constants = BTreeMap::new();
    constants.insert("c1".to_string(), Some(0.7));
    constants.insert("c2".to_string(), Some(-1.3));
    LagrangianSpec::new(
        vec!["t".into(), "x".into()],
        vec!["u".into()],
        1,
        None,
        constants,
        l,
    )
    .expect("generated spec validates")
}

/// Random polynomial test function in jets, action densities, and coords.
pub fn random_test_function(rng: &mut Rng64) -> Expr {
    let n_terms = 1 + rng.below(3);
    polynomial(rng, n_terms, 2, |r| match r.below(6) {
        0 => Expr::coord("t"),
        1 => Expr::coord("x"),
        2 => Expr::field_jet("u", ""),
        3 => Expr::field_jet("u", "t"),
        4 => Expr::action_jet("t", ""),
        _ => Expr::field_jet("u", "x"),
    })
}
