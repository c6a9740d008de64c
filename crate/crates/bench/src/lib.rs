//! Shared model builders for the benchmark suite. Kept here so the bench
//! targets measure library work, not setup boilerplate.

use std::collections::BTreeMap;

use herglotz_core::{parse_expression, Expr, LagrangianSpec, Symbols};

pub fn field_spec(constants: &[(&str, f64)], lagrangian: &str) -> LagrangianSpec {
    let consts: BTreeMap<String, Option<f64>> = constants
        .iter()
        .map(|(n, v)| (n.to_string(), Some(*v)))
        .collect();
    let coords = vec!["t".to_string(), "x".to_string()];
    let fields = vec!["u".to_string()];
    let syms = Symbols {
        coords: coords.clone(),
        fields: fields.clone(),
        constants: consts.keys().cloned().collect(),
    };
    let lag = parse_expression(lagrangian, &syms).unwrap();
    let order = lag.max_field_jet_order().max(1) as u32;
    LagrangianSpec::new(coords, fields, order, None, consts, lag).unwrap()
}

pub fn damped_string_spec() -> LagrangianSpec {
    field_spec(
        &[("rho", 1.0), ("tau", 1.0), ("gamma", 0.1)],
        "(1/2)*rho*u_t^2 - (1/2)*tau*u_x^2 - gamma*z^t",
    )
}

pub fn damped_kdv_spec() -> LagrangianSpec {
    field_spec(
        &[("gamma_t", 0.2), ("gamma_x", 0.1)],
        "(1/2)*u_t*u_x + u_x^3 - (1/2)*u_xx^2 - gamma_t*z^t - gamma_x*z^x",
    )
}

pub fn oscillator_spec() -> LagrangianSpec {
    let syms = Symbols {
        coords: vec!["t".into()],
        fields: vec!["q".into()],
        constants: vec!["gamma".into()],
    };
    let l = parse_expression("(1/2)*q_t^2 - (1/2)*q^2 - gamma*z", &syms).unwrap();
    let mut consts = BTreeMap::new();
    consts.insert("gamma".to_string(), Some(0.1));
    LagrangianSpec::new(syms.coords, vec!["q".into()], 1, None, consts, l).unwrap()
}

/// A deliberately unnormalized expression at roughly the size the KdV
/// derivation produces, for exercising simplification.
pub fn messy_expression(spec: &LagrangianSpec) -> Expr {
    let syms = Symbols {
        coords: spec.coords().to_vec(),
        fields: vec!["u".into()],
        constants: spec.constants().keys().cloned().collect(),
    };
    parse_expression(
        "(u_t + 2*u_x^2 - u_xx)^3 + (z^t + u*u_x)^2*(u_xx - gamma_t) \
         - (u_t + 2*u_x^2 - u_xx)^2*(u_t + 2*u_x^2)",
        &syms,
    )
    .unwrap()
}
