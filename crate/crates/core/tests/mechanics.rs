//! Mechanics integration against closed-form oracles: the damped oscillator,
//! exponentially decaying velocity, the contact action along prescribed
//! paths, criticality of solutions, and the multiplier profile.

mod common;

use std::collections::BTreeMap;

use herglotz_core::mech::{MechError, MechanicsSystem, PathPoint};
use herglotz_core::parse::{parse_expression, Symbols};
use herglotz_core::LagrangianSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mech_spec(fields: &[&str], constants: &[(&str, f64)], lagrangian: &str) -> LagrangianSpec {
    let syms = Symbols {
        coords: vec!["t".into()],
        fields: fields.iter().map(|s| s.to_string()).collect(),
        constants: constants.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let l = parse_expression(lagrangian, &syms).unwrap();
    let consts: BTreeMap<String, Option<f64>> =
        constants.iter().map(|(n, v)| (n.to_string(), Some(*v))).collect();
    LagrangianSpec::new(
        syms.coords,
        fields.iter().map(|s| s.to_string()).collect(),
        1,
        None,
        consts,
        l,
    )
    .unwrap()
}

fn damped_oscillator(gamma: f64) -> MechanicsSystem {
    let spec = mech_spec(
        &["q"],
        &[("gamma", gamma)],
        "(1/2)*q_t^2 - (1/2)*q^2 - gamma*z",
    );
    MechanicsSystem::new(&spec).unwrap()
}

/// Closed form for q(0)=1, qdot(0)=0 under qdd + q + gamma qdot = 0.
fn oscillator_exact(gamma: f64, t: f64) -> f64 {
    let om = (1.0 - gamma * gamma / 4.0).sqrt();
    (-gamma * t / 2.0).exp() * ((om * t).cos() + gamma / (2.0 * om) * (om * t).sin())
}

fn oscillator_max_error(gamma: f64, dt: f64) -> f64 {
    let sys = damped_oscillator(gamma);
    let traj = sys.integrate(&[1.0], &[0.0], 0.0, (0.0, 10.0), dt).unwrap();
    traj.t
        .iter()
        .zip(&traj.q)
        .map(|(&t, q)| (q[0] - oscillator_exact(gamma, t)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn oscillator_matches_closed_form() {
    let err = oscillator_max_error(0.1, 1e-3);
    assert!(err <= 1e-6, "max abs error {err:.3e} exceeds 1e-6");
}

#[test]
fn oscillator_convergence_is_fourth_order() {
    let e1 = oscillator_max_error(0.1, 4e-3);
    let e2 = oscillator_max_error(0.1, 2e-3);
    let e3 = oscillator_max_error(0.1, 1e-3);
    let r12 = e1 / e2;
    let r23 = e2 / e3;
    assert!((12.0..=20.0).contains(&r12), "halving 4e-3 -> 2e-3 gave ratio {r12:.2}");
    assert!((12.0..=20.0).contains(&r23), "halving 2e-3 -> 1e-3 gave ratio {r23:.2}");
}

#[test]
fn conservative_limit_conserves_energy() {
    let sys = damped_oscillator(0.0);
    let traj = sys.integrate(&[1.0], &[0.0], 0.0, (0.0, 10.0), 1e-3).unwrap();
    let energy =
        |k: usize| 0.5 * traj.v[k][0] * traj.v[k][0] + 0.5 * traj.q[k][0] * traj.q[k][0];
    let e0 = energy(0);
    let drift = (0..traj.len())
        .map(|k| (energy(k) - e0).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-8, "energy drift {drift:.3e}");
}

#[test]
fn velocity_decays_exponentially_under_drag() {
    // L = q_t^2/2 - gamma z gives qdd = -gamma qdot.
    let gamma = 0.3;
    let spec = mech_spec(&["q"], &[("gamma", gamma)], "(1/2)*q_t^2 - gamma*z");
    let sys = MechanicsSystem::new(&spec).unwrap();
    let traj = sys.integrate(&[0.0], &[1.0], 0.0, (0.0, 5.0), 1e-3).unwrap();
    let worst = traj
        .t
        .iter()
        .zip(&traj.v)
        .map(|(&t, v)| {
            let exact = (-gamma * t).exp();
            ((v[0] - exact) / exact).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 1e-7, "max rel velocity error {worst:.3e}");
}

#[test]
fn contact_action_along_prescribed_paths() {
    let gamma = 0.1;
    let spec = mech_spec(&["q"], &[("gamma", gamma)], "(1/2)*q_t^2 - gamma*z");
    let sys = MechanicsSystem::new(&spec).unwrap();
    let line = |t: f64| PathPoint { q: vec![t], v: vec![1.0] };

    // zdot = 1/2 - gamma z, z(0) = 0 has z(1) = (1 - e^{-gamma})/(2 gamma).
    let z1 = sys.action_along_path(line, (0.0, 1.0), 1000, 0.0).unwrap();
    let exact = (1.0 - (-gamma).exp()) / (2.0 * gamma);
    assert!((z1 - exact).abs() <= 1e-10, "got {z1}, want {exact}");
    assert!((exact - 0.475812909).abs() < 1e-9, "oracle sanity");

    // Without action dependence the integrand is constant 1/2.
    let free = mech_spec(&["q"], &[], "(1/2)*q_t^2");
    let fsys = MechanicsSystem::new(&free).unwrap();
    let z2 = fsys.action_along_path(line, (0.0, 1.0), 100, 0.0).unwrap();
    assert!((z2 - 0.5).abs() <= 1e-13);

    // Constant path: no velocity, no action.
    let rest = |_: f64| PathPoint { q: vec![2.0], v: vec![0.0] };
    let z3 = fsys.action_along_path(rest, (0.0, 1.0), 100, 0.0).unwrap();
    assert!(z3.abs() <= 1e-15);
}

#[test]
fn solutions_are_critical_points_of_the_contact_action() {
    let sys = damped_oscillator(0.1);
    let traj = sys.integrate(&[1.0], &[0.0], 0.0, (0.0, 10.0), 1e-3).unwrap();

    let at_solution = sys.action_gradient_check(&traj, 5, 1e-4).unwrap();
    assert!(at_solution <= 1e-5, "gradient at solution {at_solution:.3e}");

    let bumped = sys.bumped_trajectory(&traj, 0.1, 1).unwrap();
    let off_solution = sys.action_gradient_check(&bumped, 5, 1e-4).unwrap();
    assert!(off_solution >= 1e-2, "gradient off solution {off_solution:.3e}");
    assert!(
        off_solution >= 1e3 * at_solution,
        "separation only {:.1}x",
        off_solution / at_solution
    );
}

#[test]
fn free_particle_line_is_critical() {
    let spec = mech_spec(&["q"], &[], "(1/2)*q_t^2");
    let sys = MechanicsSystem::new(&spec).unwrap();
    let traj = sys.integrate(&[0.0], &[1.0], 0.0, (0.0, 1.0), 1e-3).unwrap();
    let g = sys.action_gradient_check(&traj, 3, 1e-4).unwrap();
    assert!(g <= 1e-8, "free-particle gradient {g:.3e}");
}

#[test]
fn multiplier_profile_matches_exponential() {
    let gamma = 0.1;
    let sys = damped_oscillator(gamma);
    let traj = sys.integrate(&[1.0], &[0.0], 0.0, (0.0, 1.0), 1e-3).unwrap();
    let lambda = sys.multiplier_profile(&traj).unwrap();
    let t_n = traj.t[traj.len() - 1];
    let worst = traj
        .t
        .iter()
        .zip(&lambda)
        .map(|(&t, &l)| (l - (-gamma * (t_n - t)).exp()).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "multiplier error {worst:.3e}");
    assert!((lambda[0] - (-0.1f64).exp()).abs() <= 1e-10);
}

#[test]
fn multiplier_is_one_without_action_dependence() {
    let spec = mech_spec(&["q"], &[], "(1/2)*q_t^2 - (1/2)*q^2");
    let sys = MechanicsSystem::new(&spec).unwrap();
    let traj = sys.integrate(&[1.0], &[0.0], 0.0, (0.0, 2.0), 1e-3).unwrap();
    let lambda = sys.multiplier_profile(&traj).unwrap();
    assert!(lambda.iter().all(|&l| (l - 1.0).abs() <= 1e-14));
}

#[test]
fn multiplier_stays_positive_on_random_specs() {
    // lambda = exp of an integral, so positivity must survive any spec the
    // integrator itself survives.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..20 {
        let a = rng.gen_range(-0.3..0.3);
        let b = rng.gen_range(-0.3..0.3);
        let spec = mech_spec(
            &["q"],
            &[("a", a), ("b", b)],
            "(1/2)*q_t^2 - (1/2)*q^2 + (a + b*q)*z",
        );
        let sys = MechanicsSystem::new(&spec).unwrap();
        let traj = sys.integrate(&[0.5], &[0.0], 0.0, (0.0, 2.0), 1e-3).unwrap();
        let lambda = sys.multiplier_profile(&traj).unwrap();
        assert!(
            lambda.iter().all(|&l| l > 0.0 && l.is_finite()),
            "case {case}: a={a}, b={b}"
        );
    }
}

#[test]
fn lambda_weighted_equation_residual_is_small() {
    let sys = damped_oscillator(0.1);
    let traj = sys.integrate(&[1.0], &[0.0], 0.0, (0.0, 10.0), 1e-3).unwrap();
    let lambda = sys.multiplier_profile(&traj).unwrap();
    let residual = sys.lambda_weighted_residual(&traj, &lambda);
    assert!(residual[0] <= 1e-5, "weighted residual {:.3e}", residual[0]);
}

#[test]
fn z_consistency_improves_at_second_order() {
    let sys = damped_oscillator(0.1);
    let coarse = sys.integrate(&[1.0], &[0.0], 0.0, (0.0, 2.0), 2e-3).unwrap();
    let fine = sys.integrate(&[1.0], &[0.0], 0.0, (0.0, 2.0), 1e-3).unwrap();
    let ec = sys.z_consistency(&coarse);
    let ef = sys.z_consistency(&fine);
    let ratio = ec / ef;
    assert!(
        (3.0..=5.5).contains(&ratio),
        "z-consistency ratio {ratio:.2} (coarse {ec:.3e}, fine {ef:.3e})"
    );
}

#[test]
fn two_coordinate_system_solves_componentwise() {
    // Decoupled oscillators with frequencies 1 and omega share the damping.
    let gamma = 0.1;
    let om2 = 2.0;
    let spec = mech_spec(
        &["q1", "q2"],
        &[("gamma", gamma), ("w", om2)],
        "(1/2)*q1_t^2 + (1/2)*q2_t^2 - (1/2)*q1^2 - (1/2)*w^2*q2^2 - gamma*z",
    );
    let sys = MechanicsSystem::new(&spec).unwrap();
    let traj = sys.integrate(&[1.0, 1.0], &[0.0, 0.0], 0.0, (0.0, 5.0), 1e-3).unwrap();
    let exact2 = |t: f64| {
        let om = (om2 * om2 - gamma * gamma / 4.0).sqrt();
        (-gamma * t / 2.0).exp() * ((om * t).cos() + gamma / (2.0 * om) * (om * t).sin())
    };
    let mut worst1: f64 = 0.0;
    let mut worst2: f64 = 0.0;
    for (k, &t) in traj.t.iter().enumerate() {
        worst1 = worst1.max((traj.q[k][0] - oscillator_exact(gamma, t)).abs());
        worst2 = worst2.max((traj.q[k][1] - exact2(t)).abs());
    }
    assert!(worst1 <= 1e-6, "coordinate 1 error {worst1:.3e}");
    assert!(worst2 <= 1e-6, "coordinate 2 error {worst2:.3e}");
}

#[test]
fn singular_mass_matrix_is_reported() {
    // L = (q1_t + q2_t)^2/2 has a rank-one velocity Hessian.
    let spec = mech_spec(&["q1", "q2"], &[], "(1/2)*(q1_t + q2_t)^2");
    let sys = MechanicsSystem::new(&spec).unwrap();
    match sys.integrate(&[0.0, 0.0], &[1.0, -1.0], 0.0, (0.0, 1.0), 0.1) {
        Err(MechError::SingularMass { step: 0, .. }) => {}
        other => panic!("expected a singular mass matrix error, got {other:?}"),
    }
}

#[test]
fn blowup_is_reported_as_nonfinite() {
    // qdd = 2 q^3 with large initial data escapes in finite time.
    let spec = mech_spec(&["q"], &[], "(1/2)*q_t^2 + (1/2)*q^4");
    let sys = MechanicsSystem::new(&spec).unwrap();
    match sys.integrate(&[3.0], &[10.0], 0.0, (0.0, 50.0), 0.5) {
        Err(MechError::NonFinite { .. }) => {}
        other => panic!("expected a non-finite state error, got {other:?}"),
    }
}

#[test]
fn trajectory_csv_has_fixed_columns() {
    let sys = damped_oscillator(0.1);
    let traj = sys.integrate(&[1.0], &[0.0], 0.0, (0.0, 0.01), 1e-3).unwrap();
    let lambda = sys.multiplier_profile(&traj).unwrap();
    let mut plain = Vec::new();
    traj.write_csv(&mut plain, None).unwrap();
    let text = String::from_utf8(plain).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,q,q_t,z"));
    assert_eq!(lines.count(), traj.len());

    let mut with_lambda = Vec::new();
    traj.write_csv(&mut with_lambda, Some(&lambda)).unwrap();
    let text = String::from_utf8(with_lambda).unwrap();
    assert!(text.starts_with("t,q,q_t,z,lambda\n"));
}

#[test]
fn initial_condition_shapes_are_checked() {
    let sys = damped_oscillator(0.1);
    match sys.integrate(&[1.0, 2.0], &[0.0], 0.0, (0.0, 1.0), 0.1) {
        Err(MechError::BadInit { what: "q0", expected: 1, got: 2 }) => {}
        other => panic!("expected a shape error, got {other:?}"),
    }
}
