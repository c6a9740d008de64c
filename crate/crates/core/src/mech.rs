//! Mechanics with an action variable: trajectory integration, the contact
//! action, brute-force criticality checks, and the multiplier profile.
//!
//! The state is (q, qdot, z) and the motion solves `W qdd = R` coupled to
//! `zdot = L(t, q, qdot, z)`. Time stepping is the classic fixed-step
//! 4th-order scheme throughout; determinism matters more than adaptivity at
//! this scale.

use std::collections::BTreeMap;
use std::io;

use thiserror::Error;

use crate::compile::{CompileError, Program};
use crate::expr::{Atom, Expr};
use crate::jet::{JetError, LagrangianSpec};

#[derive(Debug, Error)]
pub enum MechError {
    #[error(transparent)]
    Setup(#[from] JetError),
    #[error("constant `{name}` has no numeric value; give it one to integrate")]
    MissingConstant { name: String },
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("{what}: expected {expected} values, got {got}")]
    BadInit { what: &'static str, expected: usize, got: usize },
    #[error("mass matrix numerically singular at step {step} (t = {time:.6}, pivot ratio {condition:.3e})")]
    SingularMass { step: usize, time: f64, condition: f64 },
    #[error("state became non-finite at step {step} (t = {time:.6})")]
    NonFinite { step: usize, time: f64 },
    #[error("time span must be positive and contain at least one step")]
    BadSpan,
}

/// A solved (or prescribed) motion on a uniform time grid.
///
/// Invariants: all arrays have `t.len()` entries, `z[0]` is the prescribed
/// initial action value, `dt > 0`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub spec: LagrangianSpec,
    pub t: Vec<f64>,
    /// `q[k][i]`: coordinate i at time node k.
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Total contact action: the increment of z over the trajectory.
    pub fn contact_action(&self) -> f64 {
        self.z[self.z.len() - 1] - self.z[0]
    }

    /// CSV with fixed column order `t, q..., qdot..., z` and optionally a
    /// trailing multiplier column.
    pub fn write_csv<W: io::Write>(&self, w: &mut W, lambda: Option<&[f64]>) -> io::Result<()> {
        let names = self.spec.fields();
        write!(w, "t")?;
        for f in names {
            write!(w, ",{f}")?;
        }
        for f in names {
            write!(w, ",{f}_t")?;
        }
        write!(w, ",z")?;
        if lambda.is_some() {
            write!(w, ",lambda")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{}", self.t[k])?;
            for i in 0..names.len() {
                write!(w, ",{}", self.q[k][i])?;
            }
            for i in 0..names.len() {
                write!(w, ",{}", self.v[k][i])?;
            }
            write!(w, ",{}", self.z[k])?;
            if let Some(l) = lambda {
                write!(w, ",{}", l[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// A point of a path in extended configuration space.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

/// Compiled mechanics problem. Slot layout: `t`, then the coordinates, then
/// their velocities, then `z`.
pub struct MechanicsSystem {
    spec: LagrangianSpec,
    n: usize,
    w: Vec<Vec<Program>>,
    r: Vec<Program>,
    lag: Program,
    theta: Program,
    dl_dq: Vec<Program>,
    dl_dv: Vec<Program>,
}

/// Substitute numeric values for every constant in the expression.
fn bind_constants(spec: &LagrangianSpec, e: &Expr) -> Result<Expr, MechError> {
    let mut map = BTreeMap::new();
    for a in e.atoms() {
        if let Atom::Const(name) = &a {
            match spec.constant_value(name) {
                Some(v) => {
                    map.insert(a.clone(), Expr::float(v));
                }
                None => return Err(MechError::MissingConstant { name: name.clone() }),
            }
        }
    }
    Ok(e.substitute(&map))
}

impl MechanicsSystem {
    pub fn new(spec: &LagrangianSpec) -> Result<Self, MechError> {
        let derived = spec.derive_mechanics_equations()?;
        let n = spec.fields().len();
        let tname = &spec.coords()[0];

        let mut slots = BTreeMap::new();
        slots.insert(Atom::Coord(tname.clone()), 0usize);
        for (i, f) in spec.fields().iter().enumerate() {
            slots.insert(spec.field_atom(f, ""), 1 + i);
            slots.insert(spec.field_atom(f, tname), 1 + n + i);
        }
        slots.insert(Atom::ActionJet { comp: tname.clone(), jet: String::new() }, 1 + 2 * n);

        let compile = |e: &Expr| -> Result<Program, MechError> {
            Ok(Program::compile(&bind_constants(spec, e)?, &slots)?)
        };

        let mut w = Vec::with_capacity(n);
        for row in &derived.mass_matrix {
            w.push(row.iter().map(&compile).collect::<Result<Vec<_>, _>>()?);
        }
        let r = derived.forcing.iter().map(&compile).collect::<Result<Vec<_>, _>>()?;

        let lag = compile(spec.lagrangian())?;
        let theta = compile(&spec.dissipation_form()[0])?;

        let mut dl_dq = Vec::with_capacity(n);
        let mut dl_dv = Vec::with_capacity(n);
        for f in spec.fields() {
            dl_dq.push(compile(&spec.lagrangian().partial_deriv(&spec.field_atom(f, "")))?);
            dl_dv.push(compile(&spec.lagrangian().partial_deriv(&spec.field_atom(f, tname)))?);
        }

        Ok(MechanicsSystem { spec: spec.clone(), n, w, r, lag, theta, dl_dq, dl_dv })
    }

    pub fn spec(&self) -> &LagrangianSpec {
        &self.spec
    }

    fn fill(&self, buf: &mut [f64], t: f64, q: &[f64], v: &[f64], z: f64) {
        buf[0] = t;
        buf[1..1 + self.n].copy_from_slice(q);
        buf[1 + self.n..1 + 2 * self.n].copy_from_slice(v);
        buf[1 + 2 * self.n] = z;
    }

    /// Lagrangian value at a state.
    pub fn lagrangian_at(&self, t: f64, q: &[f64], v: &[f64], z: f64) -> f64 {
        let mut buf = vec![0.0; 2 + 2 * self.n];
        self.fill(&mut buf, t, q, v, z);
        self.lag.eval(&buf)
    }

    /// dL/dz at a state.
    pub fn theta_at(&self, t: f64, q: &[f64], v: &[f64], z: f64) -> f64 {
        let mut buf = vec![0.0; 2 + 2 * self.n];
        self.fill(&mut buf, t, q, v, z);
        self.theta.eval(&buf)
    }

    /// Accelerations from `W qdd = R`, plus the pivot-ratio condition proxy.
    fn accel(
        &self,
        buf: &[f64],
        scratch: &mut Vec<f64>,
        a_out: &mut [f64],
    ) -> Result<f64, ()> {
        let n = self.n;
        let mut mat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                mat[i * n + j] = self.w[i][j].eval_with(buf, scratch);
            }
        }
        for i in 0..n {
            a_out[i] = self.r[i].eval_with(buf, scratch);
        }
        solve_in_place(&mut mat, a_out, n)
    }

    /// Integrate the Herglotz system from `(q0, v0, z0)` over `t_span`.
    ///
    /// The step count is `round(span/dt)`; the step actually used divides the
    /// span exactly.
    pub fn integrate(
        &self,
        q0: &[f64],
        v0: &[f64],
        z0: f64,
        t_span: (f64, f64),
        dt: f64,
    ) -> Result<Trajectory, MechError> {
        let n = self.n;
        if q0.len() != n {
            return Err(MechError::BadInit { what: "q0", expected: n, got: q0.len() });
        }
        if v0.len() != n {
            return Err(MechError::BadInit { what: "v0", expected: n, got: v0.len() });
        }
        let (t0, t1) = t_span;
        // Negated form so NaN spans and steps land in the error arm.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(t1 > t0) || !(dt > 0.0) {
            return Err(MechError::BadSpan);
        }
        let steps = ((t1 - t0) / dt).round().max(1.0) as usize;
        let dt = (t1 - t0) / steps as f64;

        let mut t = Vec::with_capacity(steps + 1);
        let mut qs = Vec::with_capacity(steps + 1);
        let mut vs = Vec::with_capacity(steps + 1);
        let mut zs = Vec::with_capacity(steps + 1);

        let mut q = q0.to_vec();
        let mut v = v0.to_vec();
        let mut z = z0;
        t.push(t0);
        qs.push(q.clone());
        vs.push(v.clone());
        zs.push(z);

        let mut buf = vec![0.0; 2 + 2 * n];
        let mut scratch = Vec::new();
        // Stage slopes: (dq, dv, dz) per stage.
        let mut kq = vec![vec![0.0; n]; 4];
        let mut kv = vec![vec![0.0; n]; 4];
        let mut kz = [0.0; 4];
        let mut qt = vec![0.0; n];
        let mut vt = vec![0.0; n];

        for step in 0..steps {
            let tk = t0 + step as f64 * dt;
            let stage_offsets = [0.0, 0.5, 0.5, 1.0];
            for s in 0..4 {
                let ts = tk + stage_offsets[s] * dt;
                if s == 0 {
                    qt.copy_from_slice(&q);
                    vt.copy_from_slice(&v);
                } else {
                    let c = stage_offsets[s] * dt;
                    for i in 0..n {
                        qt[i] = q[i] + c * kq[s - 1][i];
                        vt[i] = v[i] + c * kv[s - 1][i];
                    }
                }
                let zt = if s == 0 { z } else { z + stage_offsets[s] * dt * kz[s - 1] };
                self.fill(&mut buf, ts, &qt, &vt, zt);
                kq[s].copy_from_slice(&vt);
                let (left, right) = kv.split_at_mut(s);
                let _ = left;
                let cond = self.accel(&buf, &mut scratch, &mut right[0]);
                if let Err(()) = cond {
                    return Err(MechError::SingularMass {
                        step,
                        time: ts,
                        condition: f64::INFINITY,
                    });
                }
                kz[s] = self.lag.eval_with(&buf, &mut scratch);
            }
            for i in 0..n {
                q[i] += dt / 6.0 * (kq[0][i] + 2.0 * kq[1][i] + 2.0 * kq[2][i] + kq[3][i]);
                v[i] += dt / 6.0 * (kv[0][i] + 2.0 * kv[1][i] + 2.0 * kv[2][i] + kv[3][i]);
            }
            z += dt / 6.0 * (kz[0] + 2.0 * kz[1] + 2.0 * kz[2] + kz[3]);

            let finite =
                q.iter().chain(v.iter()).all(|x| x.is_finite()) && z.is_finite();
            if !finite {
                return Err(MechError::NonFinite { step, time: tk + dt });
            }
            t.push(t0 + (step + 1) as f64 * dt);
            qs.push(q.clone());
            vs.push(v.clone());
            zs.push(z);
        }

        Ok(Trajectory { spec: self.spec.clone(), t, q: qs, v: vs, z: zs, dt })
    }

    /// Integrate only the action equation `zdot = L` along a prescribed
    /// path, returning z at the end of the span.
    pub fn action_along_path<F>(
        &self,
        path: F,
        t_span: (f64, f64),
        steps: usize,
        z0: f64,
    ) -> Result<f64, MechError>
    where
        F: Fn(f64) -> PathPoint,
    {
        let (t0, t1) = t_span;
        // Negated form so NaN spans land in the error arm.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(t1 > t0) || steps == 0 {
            return Err(MechError::BadSpan);
        }
        let dt = (t1 - t0) / steps as f64;
        let mut buf = vec![0.0; 2 + 2 * self.n];
        let mut scratch = Vec::new();
        let mut z = z0;
        for step in 0..steps {
            let tk = t0 + step as f64 * dt;
            let mut eval = |ts: f64, zs: f64| -> f64 {
                let p = path(ts);
                self.fill(&mut buf, ts, &p.q, &p.v, zs);
                self.lag.eval_with(&buf, &mut scratch)
            };
            let k1 = eval(tk, z);
            let k2 = eval(tk + 0.5 * dt, z + 0.5 * dt * k1);
            let k3 = eval(tk + 0.5 * dt, z + 0.5 * dt * k2);
            let k4 = eval(tk + dt, z + dt * k3);
            z += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !z.is_finite() {
                return Err(MechError::NonFinite { step, time: tk + dt });
            }
        }
        Ok(z)
    }

    /// Max absolute directional derivative of the contact action over
    /// endpoint-vanishing sine bumps, taken at the trajectory.
    ///
    /// For each mode k = 1..=n_modes and each coordinate, the variation is
    /// `sin(k pi (t - t0)/T)`; the action is re-integrated along the bumped
    /// path and differenced at `±h`.
    pub fn action_gradient_check(
        &self,
        traj: &Trajectory,
        n_modes: usize,
        h: f64,
    ) -> Result<f64, MechError> {
        let base = HermitePath::new(traj);
        let t0 = traj.t[0];
        let t1 = traj.t[traj.t.len() - 1];
        let span = t1 - t0;
        let steps = traj.t.len() - 1;
        let mut worst: f64 = 0.0;
        for mode in 1..=n_modes {
            let om = mode as f64 * std::f64::consts::PI / span;
            for i in 0..self.n {
                let at = |sign: f64| -> Result<f64, MechError> {
                    let path = |t: f64| -> PathPoint {
                        let mut p = base.at(t);
                        let tau = t - t0;
                        p.q[i] += sign * h * (om * tau).sin();
                        p.v[i] += sign * h * om * (om * tau).cos();
                        p
                    };
                    self.action_along_path(path, (t0, t1), steps, traj.z[0])
                };
                let g = (at(1.0)? - at(-1.0)?) / (2.0 * h);
                worst = worst.max(g.abs());
            }
        }
        Ok(worst)
    }

    /// A copy of the trajectory with `amp·sin(mode·pi·tau)` added to every
    /// coordinate and z re-integrated from the same z0: an endpoint-fixed
    /// non-solution for negative controls.
    pub fn bumped_trajectory(
        &self,
        traj: &Trajectory,
        amp: f64,
        mode: u32,
    ) -> Result<Trajectory, MechError> {
        let t0 = traj.t[0];
        let t1 = traj.t[traj.t.len() - 1];
        let om = mode as f64 * std::f64::consts::PI / (t1 - t0);
        let mut out = traj.clone();
        for k in 0..traj.len() {
            let tau = traj.t[k] - t0;
            for i in 0..self.n {
                out.q[k][i] += amp * (om * tau).sin();
                out.v[k][i] += amp * om * (om * tau).cos();
            }
        }
        // Re-integrate z along the bumped path so the trajectory stays
        // admissible (zdot = L).
        let frozen = out.clone();
        let path = HermitePath::new(&frozen);
        let mut z = traj.z[0];
        out.z[0] = z;
        for k in 0..traj.len() - 1 {
            z = self.action_along_path(|t| path.at(t), (traj.t[k], traj.t[k + 1]), 1, z)?;
            out.z[k + 1] = z;
        }
        Ok(out)
    }

    /// Multiplier profile along a trajectory: integrates
    /// `lambda' = -lambda * dL/dz` backward from `lambda(t_N) = 1`.
    pub fn multiplier_profile(&self, traj: &Trajectory) -> Result<Vec<f64>, MechError> {
        let path = HermitePath::new(traj);
        let zline = ZHermite::new(self, traj);
        let npts = traj.len();
        let mut lambda = vec![0.0; npts];
        lambda[npts - 1] = 1.0;
        let mut buf = vec![0.0; 2 + 2 * self.n];
        let mut scratch = Vec::new();
        let mut theta_at = |t: f64| -> f64 {
            let p = path.at(t);
            self.fill(&mut buf, t, &p.q, &p.v, zline.at(t));
            self.theta.eval_with(&buf, &mut scratch)
        };
        for k in (0..npts - 1).rev() {
            // One backward step of size dt from node k+1 to node k.
            let tk = traj.t[k + 1];
            let h = -traj.dt;
            let l0 = lambda[k + 1];
            let f = |t: f64, l: f64, th: f64| -> f64 {
                let _ = t;
                -l * th
            };
            let th0 = theta_at(tk);
            let thh = theta_at(tk + 0.5 * h);
            let th1 = theta_at(tk + h);
            let k1 = f(tk, l0, th0);
            let k2 = f(tk + 0.5 * h, l0 + 0.5 * h * k1, thh);
            let k3 = f(tk + 0.5 * h, l0 + 0.5 * h * k2, thh);
            let k4 = f(tk + h, l0 + h * k3, th1);
            let l = l0 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !l.is_finite() {
                return Err(MechError::NonFinite { step: k, time: tk + h });
            }
            lambda[k] = l;
        }
        Ok(lambda)
    }

    /// Max over coordinates of |d/dt(lambda dL/dv_i) - lambda dL/dq_i| on
    /// the interior nodes, the multiplier-weighted equation-of-motion
    /// residual. Time differentiation is by central differences.
    pub fn lambda_weighted_residual(
        &self,
        traj: &Trajectory,
        lambda: &[f64],
    ) -> Vec<f64> {
        let npts = traj.len();
        let mut buf = vec![0.0; 2 + 2 * self.n];
        let mut scratch = Vec::new();
        let mut p = vec![vec![0.0; npts]; self.n];
        let mut dq = vec![vec![0.0; npts]; self.n];
        for k in 0..npts {
            self.fill(&mut buf, traj.t[k], &traj.q[k], &traj.v[k], traj.z[k]);
            for i in 0..self.n {
                p[i][k] = lambda[k] * self.dl_dv[i].eval_with(&buf, &mut scratch);
                dq[i][k] = lambda[k] * self.dl_dq[i].eval_with(&buf, &mut scratch);
            }
        }
        (0..self.n)
            .map(|i| {
                let mut worst: f64 = 0.0;
                for k in 1..npts - 1 {
                    let ddt = (p[i][k + 1] - p[i][k - 1]) / (2.0 * traj.dt);
                    worst = worst.max((ddt - dq[i][k]).abs());
                }
                worst
            })
            .collect()
    }

    /// Max deviation |(z_{k+1} - z_k)/dt - L(midpoint)| over the trajectory,
    /// a direct check that z integrates the Lagrangian.
    pub fn z_consistency(&self, traj: &Trajectory) -> f64 {
        let path = HermitePath::new(traj);
        let zline = ZHermite::new(self, traj);
        let mut buf = vec![0.0; 2 + 2 * self.n];
        let mut scratch = Vec::new();
        let mut worst: f64 = 0.0;
        for k in 0..traj.len() - 1 {
            let tm = 0.5 * (traj.t[k] + traj.t[k + 1]);
            let pm = path.at(tm);
            self.fill(&mut buf, tm, &pm.q, &pm.v, zline.at(tm));
            let lm = self.lag.eval_with(&buf, &mut scratch);
            let slope = (traj.z[k + 1] - traj.z[k]) / traj.dt;
            worst = worst.max((slope - lm).abs());
        }
        worst
    }
}

/// Cubic Hermite interpolation of a trajectory's (q, v) arrays. The
/// velocity returned is the interpolant's derivative, so the pair stays
/// consistent between nodes.
pub struct HermitePath<'a> {
    traj: &'a Trajectory,
}

impl<'a> HermitePath<'a> {
    pub fn new(traj: &'a Trajectory) -> Self {
        HermitePath { traj }
    }

    pub fn at(&self, t: f64) -> PathPoint {
        let tr = self.traj;
        let n = tr.q[0].len();
        let last = tr.len() - 1;
        let raw = (t - tr.t[0]) / tr.dt;
        let k = (raw.floor() as isize).clamp(0, last as isize - 1) as usize;
        let s = ((t - tr.t[k]) / tr.dt).clamp(-0.5, 1.5);
        let (h00, h10, h01, h11) = hermite_basis(s);
        let (d00, d10, d01, d11) = hermite_basis_deriv(s);
        let mut q = vec![0.0; n];
        let mut v = vec![0.0; n];
        for i in 0..n {
            let (qa, qb) = (tr.q[k][i], tr.q[k + 1][i]);
            let (va, vb) = (tr.v[k][i], tr.v[k + 1][i]);
            q[i] = h00 * qa + h10 * tr.dt * va + h01 * qb + h11 * tr.dt * vb;
            v[i] = (d00 * qa + d01 * qb) / tr.dt + d10 * va + d11 * vb;
        }
        PathPoint { q, v }
    }
}

/// Hermite interpolation of z using `zdot = L` at the nodes.
struct ZHermite {
    t0: f64,
    dt: f64,
    z: Vec<f64>,
    zdot: Vec<f64>,
}

impl ZHermite {
    fn new(sys: &MechanicsSystem, traj: &Trajectory) -> Self {
        let zdot = (0..traj.len())
            .map(|k| sys.lagrangian_at(traj.t[k], &traj.q[k], &traj.v[k], traj.z[k]))
            .collect();
        ZHermite { t0: traj.t[0], dt: traj.dt, z: traj.z.clone(), zdot }
    }

    fn at(&self, t: f64) -> f64 {
        let last = self.z.len() - 1;
        let raw = (t - self.t0) / self.dt;
        let k = (raw.floor() as isize).clamp(0, last as isize - 1) as usize;
        let s = ((t - (self.t0 + k as f64 * self.dt)) / self.dt).clamp(-0.5, 1.5);
        let (h00, h10, h01, h11) = hermite_basis(s);
        h00 * self.z[k] + h10 * self.dt * self.zdot[k] + h01 * self.z[k + 1]
            + h11 * self.dt * self.zdot[k + 1]
    }
}

fn hermite_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        1.0 - 3.0 * s2 + 2.0 * s3,
        s - 2.0 * s2 + s3,
        3.0 * s2 - 2.0 * s3,
        -s2 + s3,
    )
}

fn hermite_basis_deriv(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    (
        -6.0 * s + 6.0 * s2,
        1.0 - 4.0 * s + 3.0 * s2,
        6.0 * s - 6.0 * s2,
        -2.0 * s + 3.0 * s2,
    )
}

/// Gaussian elimination with partial pivoting, solving in place; `b` holds
/// the solution on success. Returns the max/min pivot magnitude ratio as a
/// cheap conditioning proxy; Err on a vanishing pivot.
fn solve_in_place(a: &mut [f64], b: &mut [f64], n: usize) -> Result<f64, ()> {
    let mut max_piv: f64 = 0.0;
    let mut min_piv = f64::INFINITY;
    for col in 0..n {
        let mut best = col;
        let mut best_abs = a[col * n + col].abs();
        for row in col + 1..n {
            let cand = a[row * n + col].abs();
            if cand > best_abs {
                best = row;
                best_abs = cand;
            }
        }
        if best_abs == 0.0 || !best_abs.is_finite() {
            return Err(());
        }
        if best != col {
            for j in 0..n {
                a.swap(col * n + j, best * n + j);
            }
            b.swap(col, best);
        }
        max_piv = max_piv.max(best_abs);
        min_piv = min_piv.min(best_abs);
        let piv = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / piv;
            if factor != 0.0 {
                for j in col..n {
                    a[row * n + j] -= factor * a[col * n + j];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for j in col + 1..n {
            acc -= a[col * n + j] * b[j];
        }
        b[col] = acc / a[col * n + col];
    }
    Ok(max_piv / min_piv)
}
