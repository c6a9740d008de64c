#![allow(dead_code)]

//! Shared helpers for the integration tests: finite-difference oracles and
//! tolerance assertions.  Everything here goes through `eval_numeric` only,
//! so the oracles stay independent of the symbolic differentiation path.

use herglotz_core::{Atom, Expr};
use std::collections::HashMap;

pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: |{actual} - {expected}| = {:e} > {tol:e}",
        (actual - expected).abs()
    );
}

/// Central finite difference of `e` along atom `v` at the given bindings.
pub fn fd_partial(e: &Expr, v: &Atom, env: &HashMap<Atom, f64>, h: f64) -> f64 {
    let x = env[v];
    let mut plus = env.clone();
    plus.insert(v.clone(), x + h);
    let mut minus = env.clone();
    minus.insert(v.clone(), x - h);
    let fp = e.eval_numeric(&plus).expect("eval at +h");
    let fm = e.eval_numeric(&minus).expect("eval at -h");
    (fp - fm) / (2.0 * h)
}

/// Magnitude scale of an expression at a binding: the sum of absolute values
/// of its canonical terms.  Relative tolerances against this scale stay
/// meaningful under cancellation.
pub fn eval_scale(e: &Expr, env: &HashMap<Atom, f64>) -> f64 {
    let canon = e.simplify();
    let terms: Vec<Expr> = match canon {
        Expr::Sum(ts) => ts,
        other => vec![other],
    };
    let mut scale = 0.0;
    for t in &terms {
        scale += t.eval_numeric(env).expect("eval term").abs();
    }
    scale.max(1.0)
}
