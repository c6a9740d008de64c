//! The four subcommands: derive, solve, verify, demo.
//!
//! Everything funnels into [`Failure`], which carries the process exit code:
//! 2 for problem-file parse errors, 3 when a higher-order derivation hits
//! non-closed action dependence, 4 for stability violations, 1 otherwise.
//! Summaries go to stdout, diagnostics to stderr, artifacts to `--out`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use herglotz_core::selftest::{random_field_spec, random_test_function, Rng64};
use herglotz_core::{
    action_value, analytic_section, evaluate_residuals, parse_problem, section_residuals,
    solve_damped_kdv, solve_damped_string, string_energy_series, Atom, Bc, EquationSet, Expr,
    FieldError, FieldSolution, Grid2D, JetError, LagrangianSpec, MechError, MechanicsSystem,
    ParseError, ProblemFile, ResidualReport, Scheme, SolverConfig, KDV_STABILITY_SAFETY,
};
use serde_json::{json, Value};

use crate::manifest::{sha256_hex, Artifacts, InputRecord};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_NOT_CLOSED: i32 = 3;
pub const EXIT_STABILITY: i32 = 4;

pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, Failure>;

fn fail<T>(code: i32, message: impl Into<String>) -> Result<T> {
    Err(Failure { code, message: message.into() })
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Failure {
        Failure { code: EXIT_FAILURE, message: e.to_string() }
    }
}

impl From<JetError> for Failure {
    fn from(e: JetError) -> Failure {
        let code = match e {
            JetError::NotClosed { .. } => EXIT_NOT_CLOSED,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<FieldError> for Failure {
    fn from(e: FieldError) -> Failure {
        let code = match e {
            FieldError::Cfl { .. } | FieldError::NonFinite { .. } => EXIT_STABILITY,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<MechError> for Failure {
    fn from(e: MechError) -> Failure {
        let code = match e {
            MechError::NonFinite { .. } => EXIT_STABILITY,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

struct Loaded {
    problem: ProblemFile,
    input: InputRecord,
}

fn load_problem(path: &Path) -> Result<Loaded> {
    let src = fs::read_to_string(path)
        .map_err(|e| Failure { code: EXIT_FAILURE, message: format!("{}: {e}", path.display()) })?;
    let problem = parse_problem(&src).map_err(|e: ParseError| Failure {
        code: EXIT_PARSE,
        message: format!("{}: {e}", path.display()),
    })?;
    let input = InputRecord { path: path.display().to_string(), sha256: sha256_hex(src.as_bytes()) };
    Ok(Loaded { problem, input })
}

/// Substitute declared numeric values for every constant in `e`.
fn bind_constants(spec: &LagrangianSpec, e: &Expr) -> Result<Expr> {
    let mut map = BTreeMap::new();
    for a in e.atoms() {
        if let Atom::Const(name) = &a {
            match spec.constant_value(name) {
                Some(v) => {
                    map.insert(a.clone(), Expr::float(v));
                }
                None => {
                    return fail(
                        EXIT_FAILURE,
                        format!("constant `{name}` has no numeric value; give it one to integrate"),
                    )
                }
            }
        }
    }
    Ok(e.substitute(&map))
}

/// Evaluate an expression that must come out to a plain number.
fn numeric(spec: &LagrangianSpec, e: &Expr, what: &str) -> Result<f64> {
    match bind_constants(spec, e)?.simplify() {
        Expr::Num(c) => Ok(c.to_f64()),
        other => fail(EXIT_FAILURE, format!("{what} must be a constant, found `{other}`")),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderChoice {
    /// Mechanics for one coordinate, else first-order or higher by declared order
    Auto,
    /// Force the first-order derivation
    #[value(name = "1", alias = "first")]
    First,
    /// Force the iterated higher-order derivation (requires closed action dependence)
    Higher,
}

impl OrderChoice {
    fn name(self) -> &'static str {
        match self {
            OrderChoice::Auto => "auto",
            OrderChoice::First => "1",
            OrderChoice::Higher => "higher",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    /// Field solutions only
    Bin,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Bin => "bin",
        }
    }
}

fn derive_by_choice(spec: &LagrangianSpec, choice: OrderChoice) -> Result<EquationSet> {
    let eqs = match choice {
        OrderChoice::Auto => {
            if spec.is_mechanics() {
                spec.derive_mechanics_equations()?.equations
            } else if spec.order() == 1 {
                spec.derive_first_order_equations()?
            } else {
                spec.derive_higher_order_equations()?
            }
        }
        OrderChoice::First => spec.derive_first_order_equations()?,
        OrderChoice::Higher => spec.derive_higher_order_equations()?,
    };
    Ok(eqs)
}

fn first_open_entry(eqs: &EquationSet, coords: &[String]) -> Option<(usize, usize)> {
    for mu in 0..coords.len() {
        for nu in mu + 1..coords.len() {
            if !eqs.closedness[mu][nu].is_zero() {
                return Some((mu, nu));
            }
        }
    }
    None
}

fn render_equation_set(eqs: &EquationSet, coords: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "derivation: {}", eqs.kind.name());
    let _ = writeln!(out, "field equations:");
    for (f, e) in eqs.fields.iter().zip(&eqs.residuals) {
        let _ = writeln!(out, "  E_{f}: {e} = 0");
    }
    let _ = writeln!(out, "constraint:");
    let _ = writeln!(out, "  phi: {} = 0", eqs.constraint);
    let _ = writeln!(out, "dissipation form:");
    for (c, th) in coords.iter().zip(&eqs.dissipation) {
        let _ = writeln!(out, "  theta_{c}: {th}");
    }
    if coords.len() > 1 {
        let _ = writeln!(out, "closedness residuals:");
        for mu in 0..coords.len() {
            for nu in mu + 1..coords.len() {
                let _ = writeln!(out, "  C[{}][{}]: {}", coords[mu], coords[nu], eqs.closedness[mu][nu]);
            }
        }
    }
    match first_open_entry(eqs, coords) {
        None => {
            let _ = writeln!(out, "closed action dependence: YES");
        }
        Some((mu, nu)) => {
            let _ = writeln!(
                out,
                "closed action dependence: NO, C[{}][{}] = {}",
                coords[mu], coords[nu], eqs.closedness[mu][nu]
            );
        }
    }
    out
}

// ---------------------------------------------------------------------------
// derive

#[derive(Args)]
pub struct DeriveArgs {
    /// Problem file
    pub file: PathBuf,
    /// Which derivation to run
    #[arg(long, value_enum, default_value_t = OrderChoice::Auto)]
    pub order: OrderChoice,
    /// Directory for equations.json and the run manifest
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_derive(args: &DeriveArgs) -> Result<()> {
    let loaded = load_problem(&args.file)?;
    let spec = &loaded.problem.spec;
    let eqs = derive_by_choice(spec, args.order)?;
    print!("{}", render_equation_set(&eqs, spec.coords()));
    if args.order == OrderChoice::Auto && spec.is_mechanics() {
        let mech = spec.derive_mechanics_equations()?;
        println!("acceleration form:");
        for (i, f) in eqs.fields.iter().enumerate() {
            for (j, g) in eqs.fields.iter().enumerate() {
                println!("  W[{f}][{g}]: {}", mech.mass_matrix[i][j]);
            }
            println!("  R_{f}: {}", mech.forcing[i]);
        }
    }

    if let Some(dir) = &args.out {
        let mut artifacts = Artifacts::create(dir)?;
        let mut text = serde_json::to_string_pretty(&eqs.to_json()).expect("equations serialize");
        text.push('\n');
        artifacts.write("equations.json", text.as_bytes())?;
        let options = BTreeMap::from([("order".to_string(), json!(args.order.name()))]);
        let names = artifacts.finish("derive", Some(&loaded.input), &options)?;
        println!("outputs: {} (in {})", names.join(" "), dir.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Lagrangian families the integrators accept

struct WaveFamily {
    rho: f64,
    tau: f64,
    gamma: f64,
}

fn two_coords(spec: &LagrangianSpec, scheme: &str) -> Result<(String, String)> {
    let c = spec.coords();
    if c.len() != 2 || spec.fields().len() != 1 {
        return fail(
            EXIT_FAILURE,
            format!("the {scheme} scheme needs two coordinates and a single field"),
        );
    }
    Ok((c[0].clone(), c[1].clone()))
}

fn action_atom(comp: &str) -> Expr {
    Expr::action_jet(comp, "")
}

/// Check that the Lagrangian is exactly the damped-wave family
/// `rho/2 u_t^2 - tau/2 u_x^2 + theta_t z^t` and pull out the numbers.
fn wave_family(spec: &LagrangianSpec) -> Result<WaveFamily> {
    let (t, x) = two_coords(spec, "string")?;
    let u = spec.fields()[0].clone();
    let l = spec.lagrangian();
    let ut = spec.field_atom(&u, &t);
    let ux = spec.field_atom(&u, &x);
    let ptt = l.partial_deriv(&ut).partial_deriv(&ut).simplify();
    let pxx = l.partial_deriv(&ux).partial_deriv(&ux).simplify();
    let theta = spec.dissipation_form();

    let half = Expr::ratio(1, 2);
    let model = half.clone() * ptt.clone() * Expr::Atom(ut).pow(2)
        + half * pxx.clone() * Expr::Atom(ux).pow(2)
        + theta[0].clone() * action_atom(&t)
        + theta[1].clone() * action_atom(&x);
    let leftover = (l.clone() - model).simplify();
    if !leftover.is_zero() {
        return fail(
            EXIT_FAILURE,
            format!(
                "the string scheme integrates rho/2*{u}_{t}^2 - tau/2*{u}_{x}^2 - gamma*z^{t}; \
                 this Lagrangian has extra terms: {leftover}"
            ),
        );
    }

    let rho = numeric(spec, &ptt, "the kinetic coefficient rho")?;
    let tau = -numeric(spec, &pxx, "the tension coefficient tau")?;
    // `+ 0.0` turns a negated zero back into plain zero
    let gamma = -numeric(spec, &theta[0], "the damping coefficient")? + 0.0;
    let gamma_x = numeric(spec, &theta[1], "the z^x coupling")?;
    if rho <= 0.0 || tau <= 0.0 {
        return fail(EXIT_FAILURE, format!("need rho > 0 and tau > 0, got rho {rho} tau {tau}"));
    }
    if gamma_x != 0.0 {
        return fail(EXIT_FAILURE, "the string scheme needs a vanishing z^x coupling");
    }
    Ok(WaveFamily { rho, tau, gamma })
}

/// Check for `1/2 u_t u_x + u_x^3 - 1/2 u_xx^2 + theta_t z^t` exactly
/// (the integrator hardcodes that normalization) and pull out gamma_t.
fn kdv_family(spec: &LagrangianSpec) -> Result<f64> {
    let (t, x) = two_coords(spec, "kdv")?;
    let u = spec.fields()[0].clone();
    let ut = Expr::Atom(spec.field_atom(&u, &t));
    let ux = Expr::Atom(spec.field_atom(&u, &x));
    let uxx = Expr::Atom(spec.field_atom(&u, &format!("{x}{x}")));
    let theta = spec.dissipation_form();

    let model = Expr::ratio(1, 2) * ut * ux.clone() + ux.pow(3) - Expr::ratio(1, 2) * uxx.pow(2)
        + theta[0].clone() * action_atom(&t)
        + theta[1].clone() * action_atom(&x);
    let leftover = (spec.lagrangian().clone() - model).simplify();
    if !leftover.is_zero() {
        return fail(
            EXIT_FAILURE,
            format!(
                "the kdv scheme integrates 1/2*{u}_{t}*{u}_{x} + {u}_{x}^3 - 1/2*{u}_{x}{x}^2 \
                 - gamma_t*z^{t}; this Lagrangian has extra terms: {leftover}"
            ),
        );
    }

    let gamma_t = -numeric(spec, &theta[0], "the damping coefficient gamma_t")? + 0.0;
    let gamma_x = numeric(spec, &theta[1], "the z^x coupling")?;
    if gamma_x != 0.0 {
        return fail(EXIT_FAILURE, "the kdv integrator needs a vanishing z^x coupling");
    }
    Ok(gamma_t)
}

// ---------------------------------------------------------------------------
// solve

#[derive(Args)]
pub struct SolveArgs {
    /// Problem file with a solver block
    pub file: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override the time step
    #[arg(long)]
    pub dt: Option<f64>,
    /// Override the number of time nodes
    #[arg(long)]
    pub nt: Option<usize>,
    /// Override the number of space nodes
    #[arg(long)]
    pub nx: Option<usize>,
    /// Solution file format
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

/// Resolve the grid: `--nt` beats `--dt` beats the file's `nt` beats its `dt`.
fn field_grid(cfg: &SolverConfig, args: &SolveArgs, default_bc: Bc) -> Result<Grid2D> {
    let t = match cfg.t_range {
        Some(r) => r,
        None => return fail(EXIT_FAILURE, "the solver block needs `t: start end`"),
    };
    let x = match cfg.x_range {
        Some(r) => r,
        None => return fail(EXIT_FAILURE, "the solver block needs `x: start end`"),
    };
    let from_dt = |dt: f64| ((t.1 - t.0) / dt).round() as usize + 1;
    let nt = args
        .nt
        .or(args.dt.map(from_dt))
        .or(cfg.nt)
        .or(cfg.dt.map(from_dt));
    let nt = match nt {
        Some(n) => n,
        None => return fail(EXIT_FAILURE, "give a time resolution: `nt` or `dt`"),
    };
    let nx = match args.nx.or(cfg.nx) {
        Some(n) => n,
        None => return fail(EXIT_FAILURE, "the solver block needs `nx`"),
    };
    Ok(Grid2D::new(t, x, nt, nx, cfg.bc.unwrap_or(default_bc))?)
}

fn grid_options(grid: &Grid2D) -> Vec<(String, Value)> {
    vec![
        ("t".into(), json!([grid.t_range().0, grid.t_range().1])),
        ("x".into(), json!([grid.x_range().0, grid.x_range().1])),
        ("nt".into(), json!(grid.nt())),
        ("nx".into(), json!(grid.nx())),
        ("dt".into(), json!(grid.dt())),
        ("dx".into(), json!(grid.dx())),
        ("bc".into(), json!(grid.bc().name())),
    ]
}

fn solution_json(spec: &LagrangianSpec, sol: &FieldSolution) -> Value {
    let grid = &sol.grid;
    let fields: BTreeMap<&str, _> = spec
        .fields()
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), &sol.fields[i]))
        .collect();
    let jumps: BTreeMap<&str, _> = spec
        .fields()
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), &sol.seam_jump[i]))
        .collect();
    json!({
        "grid": {
            "t": [grid.t_range().0, grid.t_range().1],
            "x": [grid.x_range().0, grid.x_range().1],
            "nt": grid.nt(),
            "nx": grid.nx(),
            "bc": grid.bc().name(),
        },
        "provenance": sol.provenance.name(),
        "fields": fields,
        "z^t": sol.zt,
        "z^x": sol.zx,
        "seam_jump": jumps,
    })
}

/// Write the solution in the requested format, returning the file name.
fn write_solution(
    artifacts: &mut Artifacts,
    spec: &LagrangianSpec,
    sol: &FieldSolution,
    format: Format,
) -> Result<String> {
    let name = match format {
        Format::Csv => {
            let mut buf = Vec::new();
            sol.write_csv(spec, &mut buf)?;
            artifacts.write("solution.csv", &buf)?;
            "solution.csv"
        }
        Format::Bin => {
            let mut buf = Vec::new();
            sol.write_binary(&mut buf)?;
            artifacts.write("solution.bin", &buf)?;
            "solution.bin"
        }
        Format::Json => {
            let mut text =
                serde_json::to_string(&solution_json(spec, sol)).expect("solution serializes");
            text.push('\n');
            artifacts.write("solution.json", text.as_bytes())?;
            "solution.json"
        }
    };
    Ok(name.to_string())
}

fn series_csv(header: &str, rows: impl Iterator<Item = (f64, f64)>) -> Vec<u8> {
    let mut text = String::from(header);
    text.push('\n');
    for (a, b) in rows {
        let _ = writeln!(text, "{a},{b}");
    }
    text.into_bytes()
}

fn require_ic<'a>(cfg: &'a SolverConfig, key: &str) -> Result<&'a Expr> {
    match cfg.ic.get(key) {
        Some(e) => Ok(e),
        None => fail(EXIT_FAILURE, format!("the solver block needs `{key}: <expression>`")),
    }
}

pub fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let loaded = load_problem(&args.file)?;
    let spec = &loaded.problem.spec;
    let cfg = match &loaded.problem.solver {
        Some(c) => c,
        None => return fail(EXIT_FAILURE, "the problem file has no solver block"),
    };
    let scheme = match cfg.scheme {
        Some(s) => s,
        None => return fail(EXIT_FAILURE, "the solver block does not name a scheme"),
    };

    let mut artifacts = Artifacts::create(&args.out)?;
    let mut options: BTreeMap<String, Value> = BTreeMap::new();
    options.insert("scheme".into(), json!(scheme.name()));
    options.insert("format".into(), json!(args.format.name()));
    println!("scheme: {}", scheme.name());

    match scheme {
        Scheme::Mechanics => {
            if !spec.is_mechanics() {
                return fail(EXIT_FAILURE, "the mechanics scheme needs a single coordinate");
            }
            let t = match cfg.t_range {
                Some(r) => r,
                None => return fail(EXIT_FAILURE, "the solver block needs `t: start end`"),
            };
            let dt = match args.dt.or(cfg.dt).or(cfg.nt.map(|n| (t.1 - t.0) / (n - 1) as f64)) {
                Some(v) => v,
                None => return fail(EXIT_FAILURE, "give a time resolution: `dt` or `nt`"),
            };
            let n = spec.fields().len();
            if cfg.q0.len() != n {
                return fail(
                    EXIT_FAILURE,
                    format!("q0: expected {n} values, got {}", cfg.q0.len()),
                );
            }
            let v0 = if cfg.v0.is_empty() { vec![0.0; n] } else { cfg.v0.clone() };
            let z0 = cfg.z0.unwrap_or(0.0);

            let sys = MechanicsSystem::new(spec)?;
            let traj = sys.integrate(&cfg.q0, &v0, z0, t, dt)?;
            let lambda = sys.multiplier_profile(&traj)?;
            let weighted = sys.lambda_weighted_residual(&traj, &lambda);

            options.extend([
                ("t".to_string(), json!([t.0, t.1])),
                ("dt".to_string(), json!(traj.dt)),
                ("q0".to_string(), json!(cfg.q0)),
                ("v0".to_string(), json!(v0)),
                ("z0".to_string(), json!(z0)),
            ]);

            match args.format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    traj.write_csv(&mut buf, Some(&lambda))?;
                    artifacts.write("trajectory.csv", &buf)?;
                }
                Format::Json => {
                    let columns = |rows: &Vec<Vec<f64>>| -> BTreeMap<String, Vec<f64>> {
                        spec.fields()
                            .iter()
                            .enumerate()
                            .map(|(i, f)| (f.clone(), rows.iter().map(|r| r[i]).collect()))
                            .collect()
                    };
                    let doc = json!({
                        "t": traj.t,
                        "q": columns(&traj.q),
                        "q_t": columns(&traj.v),
                        "z": traj.z,
                        "lambda": lambda,
                    });
                    let mut text = serde_json::to_string(&doc).expect("trajectory serializes");
                    text.push('\n');
                    artifacts.write("trajectory.json", text.as_bytes())?;
                }
                Format::Bin => {
                    return fail(
                        EXIT_FAILURE,
                        "binary output is defined for field solutions; mechanics writes csv or json",
                    )
                }
            }

            let last = traj.len() - 1;
            println!("steps: {} (dt {})", last, traj.dt);
            println!(
                "final state: q {:?}, q_t {:?}, z {:.9}",
                traj.q[last], traj.v[last], traj.z[last]
            );
            println!("contact action: {:.9}", traj.contact_action());
            println!("z consistency: {:.3e}", sys.z_consistency(&traj));
            let worst = weighted.iter().fold(0.0f64, |a, b| a.max(*b));
            println!("multiplier-weighted residual: {worst:.3e}");
        }
        Scheme::String => {
            let family = wave_family(spec)?;
            let grid = field_grid(cfg, args, Bc::Fixed)?;
            let u = &spec.fields()[0];
            let ic_u = require_ic(cfg, &format!("ic_{u}"))?;
            let zero = Expr::ZERO;
            let ic_ut = cfg.ic.get(&format!("ic_{u}t")).unwrap_or(&zero);
            let c2 = family.tau / family.rho;

            let sol = solve_damped_string(spec, c2, family.gamma, ic_u, ic_ut, grid)?;
            let energy = string_energy_series(&sol, family.rho, family.tau);
            let action = action_value(spec, &sol)?;

            options.extend(grid_options(&grid));
            options.extend([
                ("rho".to_string(), json!(family.rho)),
                ("tau".to_string(), json!(family.tau)),
                ("gamma".to_string(), json!(family.gamma)),
                (format!("ic_{u}"), json!(ic_u.to_string())),
                (format!("ic_{u}t"), json!(ic_ut.to_string())),
            ]);

            write_solution(&mut artifacts, spec, &sol, args.format)?;
            artifacts.write("energy.csv", &series_csv("t,energy", energy.iter().copied()))?;

            println!(
                "grid: t [{}, {}] x [{}, {}], {} x {} nodes, {}",
                grid.t_range().0,
                grid.t_range().1,
                grid.x_range().0,
                grid.x_range().1,
                grid.nt(),
                grid.nx(),
                grid.bc().name()
            );
            println!("cfl ratio: {:.4}", c2.sqrt() * grid.dt() / grid.dx());
            println!(
                "wave speed: {} (rho {}, tau {}), damping: {}",
                c2.sqrt(),
                family.rho,
                family.tau,
                family.gamma
            );
            println!("energy: {:.6} -> {:.6}", energy[0].1, energy[energy.len() - 1].1);
            println!("action: {action:.9}");
        }
        Scheme::Kdv => {
            let gamma_t = kdv_family(spec)?;
            let grid = field_grid(cfg, args, Bc::Periodic)?;
            if !grid.periodic() {
                return fail(EXIT_FAILURE, "the kdv scheme needs `bc: periodic`");
            }
            let ic_v = require_ic(cfg, "ic_v")?;

            let sol = solve_damped_kdv(spec, gamma_t, ic_v, grid, KDV_STABILITY_SAFETY)?;
            let mass: Vec<(f64, f64)> =
                (0..grid.nt()).map(|k| (grid.t_at(k), sol.seam_jump[0][k])).collect();

            options.extend(grid_options(&grid));
            options.extend([
                ("gamma_t".to_string(), json!(gamma_t)),
                ("safety".to_string(), json!(KDV_STABILITY_SAFETY)),
                ("ic_v".to_string(), json!(ic_v.to_string())),
            ]);

            write_solution(&mut artifacts, spec, &sol, args.format)?;
            artifacts.write("mass.csv", &series_csv("t,mass", mass.iter().copied()))?;

            println!(
                "grid: t [{}, {}] x [{}, {}], {} x {} nodes, {}",
                grid.t_range().0,
                grid.t_range().1,
                grid.x_range().0,
                grid.x_range().1,
                grid.nt(),
                grid.nx(),
                grid.bc().name()
            );
            println!("damping gamma_t: {gamma_t}");
            let m0 = mass[0].1;
            let m1 = mass[mass.len() - 1].1;
            println!("mass: {m0:.9} -> {m1:.9}");
            if gamma_t == 0.0 {
                println!("mass drift: {:.3e}", (m1 - m0).abs());
            } else {
                let span = grid.t_range().1 - grid.t_range().0;
                let expected = m0 * (-gamma_t * span / 2.0).exp();
                println!(
                    "mass decay vs exp(-gamma_t*T/2): {:.3e} relative",
                    ((m1 - expected) / expected).abs()
                );
            }
        }
    }

    let dir = args.out.clone();
    let names = artifacts.finish("solve", Some(&loaded.input), &options)?;
    println!("outputs: {} (in {})", names.join(" "), dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// verify

#[derive(Args)]
pub struct VerifyArgs {
    /// Problem file; needs a section block unless --solution is given
    pub file: PathBuf,
    /// Solved field output (solution.bin) to check instead of the section
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Directory for report.json and the run manifest
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Acceptance threshold for the max norms (default: 1e-9 for exact
    /// sections, 25*(dt^2+dx^2) for stencil evaluation)
    #[arg(long)]
    pub tol: Option<f64>,
    /// Override the section sampling grid in time
    #[arg(long)]
    pub nt: Option<usize>,
    /// Override the section sampling grid in space
    #[arg(long)]
    pub nx: Option<usize>,
}

/// Grid for sampling an analytic section: the file's solver block when
/// present, a unit square at modest resolution otherwise.
fn section_grid(cfg: Option<&SolverConfig>, args: &VerifyArgs) -> Result<Grid2D> {
    let t = cfg.and_then(|c| c.t_range).unwrap_or((0.0, 1.0));
    let x = cfg.and_then(|c| c.x_range).unwrap_or((0.0, 1.0));
    let nt = args.nt.or(cfg.and_then(|c| c.nt)).unwrap_or(65);
    let nx = args.nx.or(cfg.and_then(|c| c.nx)).unwrap_or(65);
    let bc = cfg.and_then(|c| c.bc).unwrap_or(Bc::Fixed);
    Ok(Grid2D::new(t, x, nt, nx, bc)?)
}

struct Verdicts {
    rows: Vec<(String, f64, f64, bool)>,
    tol: f64,
}

fn report_verdicts(report: &ResidualReport, tol: Option<f64>, grid: &Grid2D) -> Verdicts {
    let tol = tol.unwrap_or(if report.stencil_order == 0 {
        1e-9
    } else {
        25.0 * (grid.dt().powi(2) + grid.dx().powi(2))
    });
    let mut rows = Vec::new();
    for (i, f) in report.fields.iter().enumerate() {
        rows.push((
            format!("field equation {f}"),
            report.field_equation_max[i],
            report.field_equation_l2[i],
            report.field_equation_max[i] <= tol,
        ));
    }
    rows.push((
        "constraint".to_string(),
        report.constraint_max,
        report.constraint_l2,
        report.constraint_max <= tol,
    ));
    rows.push((
        "closedness".to_string(),
        report.closedness_max,
        report.closedness_l2,
        report.closedness_max <= tol,
    ));
    Verdicts { rows, tol }
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let loaded = load_problem(&args.file)?;
    let spec = &loaded.problem.spec;
    if spec.coords().len() != 2 {
        return fail(EXIT_FAILURE, "verify handles field problems over two coordinates");
    }
    let eqs = derive_by_choice(spec, OrderChoice::Auto)?;

    let mut options: BTreeMap<String, Value> = BTreeMap::new();
    let sol = match (&args.solution, &loaded.problem.section) {
        (Some(path), _) => {
            let bytes = fs::read(path).map_err(|e| Failure {
                code: EXIT_FAILURE,
                message: format!("{}: {e}", path.display()),
            })?;
            let sol = FieldSolution::read_binary(&mut bytes.as_slice()).map_err(|e| Failure {
                code: EXIT_FAILURE,
                message: format!("{}: {e}", path.display()),
            })?;
            if sol.fields.len() != spec.fields().len() {
                return fail(
                    EXIT_FAILURE,
                    format!(
                        "{} stores {} fields, the problem declares {}",
                        path.display(),
                        sol.fields.len(),
                        spec.fields().len()
                    ),
                );
            }
            options.insert("solution".into(), json!(path.display().to_string()));
            println!("checking: solved output {}", path.display());
            sol
        }
        (None, Some(section)) => {
            let grid = section_grid(loaded.problem.solver.as_ref(), args)?;
            options.insert("solution".into(), json!("section"));
            println!(
                "checking: section block on a {} x {} grid over t [{}, {}] x [{}, {}]",
                grid.nt(),
                grid.nx(),
                grid.t_range().0,
                grid.t_range().1,
                grid.x_range().0,
                grid.x_range().1
            );
            analytic_section(spec, section, grid)?
        }
        (None, None) => {
            return fail(
                EXIT_FAILURE,
                "verify needs a section block in the file or --solution <solution.bin>",
            )
        }
    };

    if let Some(section) = &sol.section {
        let sres = section_residuals(spec, &eqs, section)?;
        println!("symbolic residuals on the section:");
        for (f, e) in eqs.fields.iter().zip(&sres.field_eqs) {
            println!("  E_{f}: {e}");
        }
        println!("  phi: {}", sres.constraint);
        for mu in 0..spec.coords().len() {
            for nu in mu + 1..spec.coords().len() {
                println!(
                    "  C[{}][{}]: {}",
                    spec.coords()[mu],
                    spec.coords()[nu],
                    sres.closedness[mu][nu]
                );
            }
        }
    }

    let report = evaluate_residuals(spec, &eqs, &sol)?;
    let verdicts = report_verdicts(&report, args.tol, &sol.grid);
    if report.stencil_order == 0 {
        println!("norms: {} evaluation, full grid", report.method);
    } else {
        println!(
            "norms: {} evaluation, order {}, interior margin t {} x {}",
            report.method, report.stencil_order, report.margin_t, report.margin_x
        );
    }
    println!("tolerance: {:.3e} on max norms", verdicts.tol);
    for (label, max, l2, pass) in &verdicts.rows {
        println!(
            "  {label}: max {max:.3e}, l2 {l2:.3e}  {}",
            if *pass { "PASS" } else { "FAIL" }
        );
    }
    println!("closed action dependence: {}", if eqs.closed { "YES" } else { "NO" });

    options.insert("tol".into(), json!(verdicts.tol));
    if let Some(dir) = &args.out {
        let mut artifacts = Artifacts::create(dir)?;
        let mut text = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
        text.push('\n');
        artifacts.write("report.json", text.as_bytes())?;
        let names = artifacts.finish("verify", Some(&loaded.input), &options)?;
        println!("outputs: {} (in {})", names.join(" "), dir.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// demo

#[derive(Args)]
pub struct DemoArgs {
    /// Directory for all demo artifacts
    #[arg(long, default_value = "demo")]
    pub out: PathBuf,
    /// Seed for the random-Lagrangian property check
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

const STRING_LAG: &str = include_str!("../problems/string.lag");
const COUNTEREXAMPLE_LAG: &str = include_str!("../problems/counterexample.lag");
const KDV_LAG: &str = include_str!("../problems/kdv.lag");
const OSCILLATOR_LAG: &str = include_str!("../problems/oscillator.lag");

pub const BUNDLED_PROBLEMS: [(&str, &str); 4] = [
    ("string.lag", STRING_LAG),
    ("counterexample.lag", COUNTEREXAMPLE_LAG),
    ("kdv.lag", KDV_LAG),
    ("oscillator.lag", OSCILLATOR_LAG),
];

/// The commutator of deformed derivatives against the closedness residuals,
/// on seeded random polynomial Lagrangians. Returns the number of cases
/// where the identity held and where a closed family gave a zero commutator.
fn commutator_check(seed: u64, cases: usize) -> Result<(usize, usize)> {
    let mut identity_ok = 0;
    let mut closed_zero = 0;
    let mut closed_total = 0;
    for i in 0..cases {
        let closed = i % 2 == 0;
        let case_seed = seed.wrapping_mul(1000).wrapping_add(i as u64);
        let spec = random_field_spec(case_seed, closed);
        let mut rng = Rng64::new(!case_seed);
        let f = random_test_function(&mut rng);

        let lhs = spec.commutator_residual(&f, 0, 1)?;
        let c = spec.closed_action_residuals()?;
        let rhs = (c[0][1].clone() * f).simplify();
        if (lhs.clone() - rhs).simplify().is_zero() {
            identity_ok += 1;
        }
        if closed {
            closed_total += 1;
            if lhs.is_zero() {
                closed_zero += 1;
            }
        }
    }
    if closed_zero != closed_total {
        return fail(
            EXIT_FAILURE,
            format!("closed specs gave a nonzero commutator: {closed_zero}/{closed_total}"),
        );
    }
    Ok((identity_ok, cases))
}

pub fn cmd_demo(args: &DemoArgs) -> Result<()> {
    let problems = args.out.join("problems");
    fs::create_dir_all(&problems)?;
    for (name, text) in BUNDLED_PROBLEMS {
        fs::write(problems.join(name), text)?;
    }
    let path = |name: &str| problems.join(name);
    let sub = |name: &str| args.out.join(name);

    println!("== damped string: derive ==");
    cmd_derive(&DeriveArgs {
        file: path("string.lag"),
        order: OrderChoice::Auto,
        out: Some(sub("string/derive")),
    })?;

    println!();
    println!("== damped string: solve ==");
    cmd_solve(&SolveArgs {
        file: path("string.lag"),
        out: sub("string/solve"),
        dt: None,
        nt: None,
        nx: None,
        format: Format::Bin,
    })?;

    println!();
    println!("== damped string: verify the solved output ==");
    cmd_verify(&VerifyArgs {
        file: path("string.lag"),
        solution: Some(sub("string/solve").join("solution.bin")),
        out: Some(sub("string/verify")),
        tol: None,
        nt: None,
        nx: None,
    })?;

    println!();
    println!("== open action dependence: derive ==");
    cmd_derive(&DeriveArgs {
        file: path("counterexample.lag"),
        order: OrderChoice::Auto,
        out: Some(sub("counterexample/derive")),
    })?;

    println!();
    println!("== open action dependence: verify the section ==");
    cmd_verify(&VerifyArgs {
        file: path("counterexample.lag"),
        solution: None,
        out: Some(sub("counterexample/verify")),
        tol: None,
        nt: None,
        nx: None,
    })?;

    println!();
    println!("== kdv: derive ==");
    cmd_derive(&DeriveArgs {
        file: path("kdv.lag"),
        order: OrderChoice::Auto,
        out: Some(sub("kdv/derive")),
    })?;

    println!();
    println!("== kdv: solve (soliton) ==");
    cmd_solve(&SolveArgs {
        file: path("kdv.lag"),
        out: sub("kdv/solve"),
        dt: None,
        nt: None,
        nx: None,
        format: Format::Csv,
    })?;

    println!();
    println!("== oscillator: solve ==");
    cmd_solve(&SolveArgs {
        file: path("oscillator.lag"),
        out: sub("oscillator/solve"),
        dt: None,
        nt: None,
        nx: None,
        format: Format::Csv,
    })?;

    println!();
    println!("== commutator identity on random Lagrangians ==");
    let cases = 200;
    let (ok, total) = commutator_check(args.seed, cases)?;
    println!("seed: {}", args.seed);
    println!("identity held: {ok}/{total} (closed families commute exactly)");
    if ok != total {
        return fail(EXIT_FAILURE, format!("commutator identity failed on {} cases", total - ok));
    }

    println!();
    println!("demo artifacts in {}", args.out.display());
    Ok(())
}
