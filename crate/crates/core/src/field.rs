//! Field solutions on two-dimensional (t, x) grids.
//!
//! This module hosts the numeric side of the field theory: explicit solvers
//! for the damped wave and damped KdV problems, reconstruction of the action
//! density z^t from a solved field, stencil-based residual evaluation against
//! the derived equations, and a discrete critical-point check that bumps the
//! solution in both the field and action-density directions.
//!
//! Everything here is deterministic. Grid sweeps that run in parallel
//! accumulate per-row partial results and fold them in row order, so norms
//! are bit-identical for any thread count (set `HERGLOTZ_THREADS` to pin it).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::compile::{slot_layout, CompileError, Program};
use crate::expr::{Atom, Expr};
use crate::jet::{EquationSet, JetError, LagrangianSpec};
use crate::parse::{Bc, SectionSpec};
use crate::stencil::{antiderivative_periodic, differentiate_line, margin, quad_weights, LineKind};

/// Safety factor for the explicit KdV stage bound
/// dt <= safety * dx^3 / (6 max|v| dx^2 + 4).
pub const KDV_STABILITY_SAFETY: f64 = 0.4;

const RECON_TOL: f64 = 1e-12;
const RECON_MAX_ITERS: usize = 64;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Setup(#[from] JetError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("constant `{name}` has no numeric value")]
    MissingConstant { name: String },
    #[error("CFL violation: c*dt/dx = {ratio:.6} exceeds the stability limit {limit}")]
    Cfl { ratio: f64, limit: f64 },
    #[error("solution became non-finite at time step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },
    #[error(
        "action density reconstruction stalled at node ({k}, {j}): \
         update {residual:.3e} after {iters} iterations"
    )]
    FixedPoint { k: usize, j: usize, residual: f64, iters: usize },
    #[error(
        "constraint residual {max:.3e} exceeds {tol:.1e}; reconstruct the \
         action density before running the gradient check"
    )]
    ConstraintViolated { max: f64, tol: f64 },
    #[error("{0}")]
    Unsupported(String),
}

fn unsupported(msg: impl Into<String>) -> FieldError {
    FieldError::Unsupported(msg.into())
}

/// Uniform rectangular grid over [t0, t1] x [x0, x1].
///
/// The time axis always carries both endpoints (`nt` nodes, spacing
/// span/(nt-1)). The space axis does the same on bounded grids; periodic
/// grids store `nx` nodes with spacing span/nx and omit the duplicate
/// endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    t0: f64,
    t1: f64,
    x0: f64,
    x1: f64,
    nt: usize,
    nx: usize,
    bc: Bc,
}

impl Grid2D {
    pub fn new(
        t_range: (f64, f64),
        x_range: (f64, f64),
        nt: usize,
        nx: usize,
        bc: Bc,
    ) -> Result<Grid2D, FieldError> {
        if !(t_range.0.is_finite() && t_range.1.is_finite() && t_range.1 > t_range.0) {
            return Err(FieldError::Grid(format!(
                "time range [{}, {}] is not an increasing finite interval",
                t_range.0, t_range.1
            )));
        }
        if !(x_range.0.is_finite() && x_range.1.is_finite() && x_range.1 > x_range.0) {
            return Err(FieldError::Grid(format!(
                "space range [{}, {}] is not an increasing finite interval",
                x_range.0, x_range.1
            )));
        }
        if nt < 4 || nx < 4 {
            return Err(FieldError::Grid(format!(
                "grid needs at least 4 nodes per axis, got {nt} x {nx}"
            )));
        }
        Ok(Grid2D {
            t0: t_range.0,
            t1: t_range.1,
            x0: x_range.0,
            x1: x_range.1,
            nt,
            nx,
            bc,
        })
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn bc(&self) -> Bc {
        self.bc
    }

    pub fn periodic(&self) -> bool {
        self.bc == Bc::Periodic
    }

    pub fn t_span(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn x_span(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn dt(&self) -> f64 {
        self.t_span() / (self.nt - 1) as f64
    }

    pub fn dx(&self) -> f64 {
        if self.periodic() {
            self.x_span() / self.nx as f64
        } else {
            self.x_span() / (self.nx - 1) as f64
        }
    }

    pub fn t_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }

    pub fn x_at(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.dx()
    }

    pub fn t_range(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x0, self.x1)
    }
}

/// Where a solution's values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    Solved,
    AnalyticSection,
}

impl Provenance {
    pub fn name(&self) -> &'static str {
        match self {
            Provenance::Solved => "solved",
            Provenance::AnalyticSection => "analytic-section",
        }
    }
}

/// A field configuration together with its action densities.
///
/// Arrays are time-major: `fields[i][k][j]` is field i at (t_k, x_j), and the
/// field list lines up with the owning spec's field order. On periodic grids
/// a field may be quasi-periodic: `seam_jump[i][k]` is the additive increase
/// per trip around the circle (the KdV field u gains the mass of v per
/// period; everything else stores zero jumps).
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub grid: Grid2D,
    pub fields: Vec<Vec<Vec<f64>>>,
    pub zt: Vec<Vec<f64>>,
    pub zx: Vec<Vec<f64>>,
    pub seam_jump: Vec<Vec<f64>>,
    pub provenance: Provenance,
    /// Present when the values were sampled from closed-form expressions;
    /// residual evaluation then differentiates these exactly instead of
    /// using stencils.
    pub section: Option<SectionSpec>,
}

impl FieldSolution {
    fn blank(nfields: usize, grid: Grid2D, provenance: Provenance) -> FieldSolution {
        let zeros = vec![vec![0.0; grid.nx]; grid.nt];
        FieldSolution {
            grid,
            fields: vec![zeros.clone(); nfields],
            zt: zeros.clone(),
            zx: zeros,
            seam_jump: vec![vec![0.0; grid.nt]; nfields],
            provenance,
            section: None,
        }
    }

    /// Long-format CSV: one row per node, columns t, x, each field, z^t, z^x.
    pub fn write_csv<W: Write>(&self, spec: &LagrangianSpec, out: &mut W) -> io::Result<()> {
        write!(out, "t,x")?;
        for f in spec.fields() {
            write!(out, ",{f}")?;
        }
        writeln!(out, ",z^t,z^x")?;
        for k in 0..self.grid.nt {
            for j in 0..self.grid.nx {
                write!(out, "{},{}", self.grid.t_at(k), self.grid.x_at(j))?;
                for arr in &self.fields {
                    write!(out, ",{}", arr[k][j])?;
                }
                writeln!(out, ",{},{}", self.zt[k][j], self.zx[k][j])?;
            }
        }
        Ok(())
    }

    /// Binary dump, all little-endian:
    ///
    /// ```text
    /// magic   4 bytes  "HGLZ"
    /// version u32      1
    /// nfields u32
    /// nt, nx  u64 each
    /// t0, t1, x0, x1  f64 each
    /// bc      u8       0 bounded, 1 periodic
    /// prov    u8       0 solved, 1 analytic section
    /// arrays  nt*nx f64, row-major (time outer), one block per field,
    ///         then z^t, then z^x
    /// jumps   nt f64 per field (seam jumps, zero when not quasi-periodic)
    /// ```
    pub fn write_binary<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(b"HGLZ")?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&(self.fields.len() as u32).to_le_bytes())?;
        out.write_all(&(self.grid.nt as u64).to_le_bytes())?;
        out.write_all(&(self.grid.nx as u64).to_le_bytes())?;
        for v in [self.grid.t0, self.grid.t1, self.grid.x0, self.grid.x1] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&[self.grid.periodic() as u8])?;
        out.write_all(&[(self.provenance == Provenance::AnalyticSection) as u8])?;
        let arrays = self.fields.iter().chain([&self.zt, &self.zx]);
        for arr in arrays {
            for row in arr {
                for v in row {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        for jumps in &self.seam_jump {
            for v in jumps {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Inverse of [`write_binary`](Self::write_binary). Format violations
    /// come back as `InvalidData`; the section expressions are not part of
    /// the format, so a round-tripped analytic section verifies through the
    /// stencil path rather than the symbolic one.
    pub fn read_binary<R: Read>(input: &mut R) -> io::Result<FieldSolution> {
        fn bad(msg: impl Into<String>) -> io::Error {
            io::Error::new(io::ErrorKind::InvalidData, msg.into())
        }
        fn take<const N: usize, R: Read>(input: &mut R) -> io::Result<[u8; N]> {
            let mut buf = [0u8; N];
            input.read_exact(&mut buf)?;
            Ok(buf)
        }

        let magic = take::<4, _>(input)?;
        if &magic != b"HGLZ" {
            return Err(bad("not a field solution file (bad magic)"));
        }
        let version = u32::from_le_bytes(take(input)?);
        if version != 1 {
            return Err(bad(format!("unsupported solution format version {version}")));
        }
        let nfields = u32::from_le_bytes(take(input)?) as usize;
        if nfields == 0 || nfields > 64 {
            return Err(bad(format!("implausible field count {nfields}")));
        }
        let nt = u64::from_le_bytes(take(input)?) as usize;
        let nx = u64::from_le_bytes(take(input)?) as usize;
        if nt.saturating_mul(nx) > (1 << 28) {
            return Err(bad(format!("implausible grid size {nt} x {nx}")));
        }
        let t0 = f64::from_le_bytes(take(input)?);
        let t1 = f64::from_le_bytes(take(input)?);
        let x0 = f64::from_le_bytes(take(input)?);
        let x1 = f64::from_le_bytes(take(input)?);
        let bc = match take::<1, _>(input)?[0] {
            0 => Bc::Fixed,
            1 => Bc::Periodic,
            other => return Err(bad(format!("unknown boundary tag {other}"))),
        };
        let provenance = match take::<1, _>(input)?[0] {
            0 => Provenance::Solved,
            1 => Provenance::AnalyticSection,
            other => return Err(bad(format!("unknown provenance tag {other}"))),
        };
        let grid = Grid2D::new((t0, t1), (x0, x1), nt, nx, bc)
            .map_err(|e| bad(format!("stored grid is invalid: {e}")))?;

        let mut read_array = || -> io::Result<Vec<Vec<f64>>> {
            let mut arr = Vec::with_capacity(nt);
            for _ in 0..nt {
                let mut row = vec![0.0f64; nx];
                for v in &mut row {
                    *v = f64::from_le_bytes(take(input)?);
                }
                arr.push(row);
            }
            Ok(arr)
        };
        let mut fields = Vec::with_capacity(nfields);
        for _ in 0..nfields {
            fields.push(read_array()?);
        }
        let zt = read_array()?;
        let zx = read_array()?;
        let mut seam_jump = Vec::with_capacity(nfields);
        for _ in 0..nfields {
            let mut jumps = vec![0.0f64; nt];
            for v in &mut jumps {
                *v = f64::from_le_bytes(take(input)?);
            }
            seam_jump.push(jumps);
        }
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(bad("trailing bytes after the seam jump block"));
        }
        Ok(FieldSolution { grid, fields, zt, zx, seam_jump, provenance, section: None })
    }
}

fn bind_constants(spec: &LagrangianSpec, e: &Expr) -> Result<Expr, FieldError> {
    let mut map = BTreeMap::new();
    for a in e.atoms() {
        if let Atom::Const(name) = &a {
            match spec.constant_value(name) {
                Some(v) => {
                    map.insert(a.clone(), Expr::float(v));
                }
                None => return Err(FieldError::MissingConstant { name: name.clone() }),
            }
        }
    }
    Ok(e.substitute(&map))
}

/// Compiled expression of the coordinates alone (initial data, sections).
struct CoordFn {
    program: Program,
    t_slot: Option<usize>,
    x_slot: Option<usize>,
    nslots: usize,
}

impl CoordFn {
    fn new(spec: &LagrangianSpec, e: &Expr) -> Result<CoordFn, FieldError> {
        let bound = bind_constants(spec, e)?;
        let atoms = bound.atoms();
        for a in &atoms {
            if !matches!(a, Atom::Coord(_)) {
                return Err(unsupported(format!(
                    "`{a}` appears in data that must be an explicit function of the coordinates"
                )));
            }
        }
        let layout = slot_layout(atoms.iter());
        let program = Program::compile(&bound, &layout)?;
        let slot_of = |name: &str| layout.get(&Atom::Coord(name.to_string())).copied();
        Ok(CoordFn {
            program,
            t_slot: slot_of(&spec.coords()[0]),
            x_slot: spec.coords().get(1).and_then(|x| slot_of(x)),
            nslots: layout.len(),
        })
    }

    fn eval(&self, t: f64, x: f64, inputs: &mut Vec<f64>, stack: &mut Vec<f64>) -> f64 {
        inputs.clear();
        inputs.resize(self.nslots, 0.0);
        if let Some(s) = self.t_slot {
            inputs[s] = t;
        }
        if let Some(s) = self.x_slot {
            inputs[s] = x;
        }
        self.program.eval_with(inputs, stack)
    }
}

fn sample_row(f: &CoordFn, grid: &Grid2D, t: f64) -> Vec<f64> {
    let mut inputs = Vec::new();
    let mut stack = Vec::new();
    (0..grid.nx)
        .map(|j| f.eval(t, grid.x_at(j), &mut inputs, &mut stack))
        .collect()
}

/// Sample a section (explicit expressions for fields and action densities)
/// onto a grid. Residual evaluation will differentiate the expressions
/// symbolically rather than with stencils.
pub fn analytic_section(
    spec: &LagrangianSpec,
    section: &SectionSpec,
    grid: Grid2D,
) -> Result<FieldSolution, FieldError> {
    if spec.coords().len() != 2 {
        return Err(unsupported("field grids require exactly two coordinates"));
    }
    let mut sol = FieldSolution::blank(spec.fields().len(), grid, Provenance::AnalyticSection);
    let fill = |target: &mut Vec<Vec<f64>>, e: &Expr| -> Result<(), FieldError> {
        let f = CoordFn::new(spec, e)?;
        for k in 0..grid.nt() {
            target[k] = sample_row(&f, &grid, grid.t_at(k));
        }
        Ok(())
    };
    for (i, name) in spec.fields().iter().enumerate() {
        let e = section
            .fields
            .get(name)
            .ok_or_else(|| unsupported(format!("section does not prescribe field `{name}`")))?;
        let mut arr = std::mem::take(&mut sol.fields[i]);
        fill(&mut arr, e)?;
        sol.fields[i] = arr;
    }
    for (comp, target) in [(0usize, 0), (1, 1)] {
        if let Some(e) = section.z.get(&spec.coords()[comp]) {
            let mut arr = if target == 0 {
                std::mem::take(&mut sol.zt)
            } else {
                std::mem::take(&mut sol.zx)
            };
            fill(&mut arr, e)?;
            if target == 0 {
                sol.zt = arr;
            } else {
                sol.zx = arr;
            }
        }
    }
    sol.section = Some(section.clone());
    Ok(sol)
}

/// Count coordinate occurrences in a jet suffix (longest name first, so
/// overlapping coordinate names resolve deterministically).
fn jet_counts(jet: &str, coords: &[String]) -> (u32, u32) {
    let mut counts = [0u32; 2];
    let mut order: Vec<usize> = vec![0, 1];
    order.sort_by_key(|&i| std::cmp::Reverse(coords[i].len()));
    let mut rest = jet;
    'outer: while !rest.is_empty() {
        for &i in &order {
            if let Some(r) = rest.strip_prefix(coords[i].as_str()) {
                counts[i] += 1;
                rest = r;
                continue 'outer;
            }
        }
        break;
    }
    (counts[0], counts[1])
}

/// Slot value source during grid sweeps.
#[derive(Clone, Copy)]
enum Source {
    T,
    X,
    Table(usize),
}

/// Shared machinery: compiled expressions plus finite-difference tables for
/// every jet atom they mention.
struct GridEval {
    programs: Vec<Program>,
    sources: Vec<(usize, Source)>,
    tables: Vec<Vec<Vec<f64>>>,
    nslots: usize,
    margin_t: usize,
    margin_x: usize,
}

impl GridEval {
    /// `fourth` selects 4th-order stencils (periodic grids); bounded grids
    /// use 2nd-order ones.
    fn new(spec: &LagrangianSpec, sol: &FieldSolution, exprs: &[Expr]) -> Result<GridEval, FieldError> {
        let fourth = sol.grid.periodic();
        let mut bound = Vec::with_capacity(exprs.len());
        let mut atoms: BTreeSet<Atom> = BTreeSet::new();
        for e in exprs {
            let b = bind_constants(spec, e)?;
            atoms.extend(b.atoms());
            bound.push(b);
        }
        let layout = slot_layout(atoms.iter());
        let programs = bound
            .iter()
            .map(|e| Program::compile(e, &layout))
            .collect::<Result<Vec<_>, _>>()?;

        let coords = spec.coords();
        let mut sources = Vec::new();
        let mut tables: Vec<Vec<Vec<f64>>> = Vec::new();
        let (mut margin_t, mut margin_x) = (0usize, 0usize);
        for (atom, &slot) in &layout {
            let src = match atom {
                Atom::Coord(c) if *c == coords[0] => Source::T,
                Atom::Coord(c) if *c == coords[1] => Source::X,
                Atom::Coord(c) => {
                    return Err(unsupported(format!("coordinate `{c}` is not on the grid")))
                }
                Atom::Const(name) => {
                    return Err(FieldError::MissingConstant { name: name.clone() })
                }
                Atom::FieldJet { field, jet } => {
                    let i = spec
                        .fields()
                        .iter()
                        .position(|f| f == field)
                        .ok_or_else(|| unsupported(format!("unknown field `{field}`")))?;
                    let (ot, ox) = jet_counts(jet, coords);
                    let table =
                        jet_table(&sol.fields[i], &sol.seam_jump[i], &sol.grid, ot, ox, fourth);
                    margin_t = margin_t.max(margin(ot, fourth));
                    if !sol.grid.periodic() {
                        margin_x = margin_x.max(margin(ox, false));
                    }
                    tables.push(table);
                    Source::Table(tables.len() - 1)
                }
                Atom::ActionJet { comp, jet } => {
                    let arr = if *comp == coords[0] { &sol.zt } else { &sol.zx };
                    let zero_jumps = vec![0.0; sol.grid.nt()];
                    let (ot, ox) = jet_counts(jet, coords);
                    let table = jet_table(arr, &zero_jumps, &sol.grid, ot, ox, fourth);
                    margin_t = margin_t.max(margin(ot, fourth));
                    if !sol.grid.periodic() {
                        margin_x = margin_x.max(margin(ox, false));
                    }
                    tables.push(table);
                    Source::Table(tables.len() - 1)
                }
                Atom::Func(..) => unreachable!("atoms() does not yield function atoms"),
            };
            sources.push((slot, src));
        }
        Ok(GridEval {
            programs,
            sources,
            tables,
            nslots: layout.len(),
            margin_t,
            margin_x,
        })
    }

    fn fill_inputs(&self, grid: &Grid2D, k: usize, j: usize, inputs: &mut [f64]) {
        for &(slot, src) in &self.sources {
            inputs[slot] = match src {
                Source::T => grid.t_at(k),
                Source::X => grid.x_at(j),
                Source::Table(i) => self.tables[i][k][j],
            };
        }
    }

    /// Max and L2 norm per expression over the given node window, in
    /// parallel over rows with a fixed fold order.
    fn norms(&self, grid: &Grid2D, rows: Range<usize>, cols: Range<usize>) -> Vec<(f64, f64)> {
        let row_list: Vec<usize> = rows.collect();
        let nprog = self.programs.len();
        let mut per_row: Vec<Vec<(f64, f64)>> = vec![Vec::new(); row_list.len()];
        let nthreads = thread_count(row_list.len());
        let chunk = row_list.len().div_ceil(nthreads).max(1);
        std::thread::scope(|s| {
            for (rows_chunk, out_chunk) in row_list.chunks(chunk).zip(per_row.chunks_mut(chunk)) {
                let cols = cols.clone();
                s.spawn(move || {
                    let mut inputs = vec![0.0; self.nslots];
                    let mut stack = Vec::new();
                    for (&k, out) in rows_chunk.iter().zip(out_chunk.iter_mut()) {
                        let mut stats = vec![(0.0f64, 0.0f64); nprog];
                        for j in cols.clone() {
                            self.fill_inputs(grid, k, j, &mut inputs);
                            for (p, st) in self.programs.iter().zip(stats.iter_mut()) {
                                let v = p.eval_with(&inputs, &mut stack);
                                st.0 = st.0.max(v.abs());
                                st.1 += v * v;
                            }
                        }
                        *out = stats;
                    }
                });
            }
        });
        let cell = grid.dt() * grid.dx();
        let mut total = vec![(0.0f64, 0.0f64); nprog];
        for stats in &per_row {
            for (t, s) in total.iter_mut().zip(stats) {
                t.0 = t.0.max(s.0);
                t.1 += s.1;
            }
        }
        total.iter().map(|&(m, ss)| (m, (ss * cell).sqrt())).collect()
    }

    fn interior_rows(&self, grid: &Grid2D) -> Range<usize> {
        self.margin_t..grid.nt() - self.margin_t
    }

    fn interior_cols(&self, grid: &Grid2D) -> Range<usize> {
        if grid.periodic() {
            0..grid.nx()
        } else {
            self.margin_x..grid.nx() - self.margin_x
        }
    }
}

fn thread_count(rows: usize) -> usize {
    let n = std::env::var("HERGLOTZ_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    n.min(rows.max(1))
}

/// Finite-difference table of one jet over the whole grid. Derivatives are
/// taken in x first (seam jumps apply there), then in t column by column.
fn jet_table(
    base: &[Vec<f64>],
    jumps: &[f64],
    grid: &Grid2D,
    ot: u32,
    ox: u32,
    fourth: bool,
) -> Vec<Vec<f64>> {
    let (nt, nx) = (grid.nt(), grid.nx());
    let mut cur: Vec<Vec<f64>> = if ox > 0 {
        (0..nt)
            .map(|k| {
                let kind = if grid.periodic() {
                    LineKind::Periodic { jump: jumps[k] }
                } else {
                    LineKind::Bounded
                };
                differentiate_line(&base[k], grid.dx(), ox, fourth, kind)
            })
            .collect()
    } else {
        base.to_vec()
    };
    if ot > 0 {
        let mut col = vec![0.0; nt];
        for j in 0..nx {
            for k in 0..nt {
                col[k] = cur[k][j];
            }
            let d = differentiate_line(&col, grid.dt(), ot, fourth, LineKind::Bounded);
            for k in 0..nt {
                cur[k][j] = d[k];
            }
        }
    }
    cur
}

/// Residual norms of a solution against a derived equation set.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub fields: Vec<String>,
    pub field_equation_max: Vec<f64>,
    pub field_equation_l2: Vec<f64>,
    pub constraint_max: f64,
    pub constraint_l2: f64,
    pub closedness_max: f64,
    pub closedness_l2: f64,
    /// True when norms exclude a boundary margin (stencil path).
    pub interior_only: bool,
    /// 2 or 4 for the stencil path, 0 for exact symbolic evaluation.
    pub stencil_order: u32,
    pub margin_t: usize,
    pub margin_x: usize,
    pub method: &'static str,
}

impl ResidualReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("residual report serializes")
    }
}

/// Equation residuals with the section substituted symbolically.
#[derive(Debug, Clone)]
pub struct SectionResiduals {
    pub field_eqs: Vec<Expr>,
    pub constraint: Expr,
    pub closedness: Vec<Vec<Expr>>,
}

/// Substitute a section's closed-form expressions into derived equations.
/// Jets become exact symbolic derivatives, so a zero residual here is an
/// identity, not a numerical smallness statement.
pub fn section_residuals(
    spec: &LagrangianSpec,
    eqs: &EquationSet,
    section: &SectionSpec,
) -> Result<SectionResiduals, FieldError> {
    let coords = spec.coords();
    let zero = Expr::int(0);
    let mut cache: BTreeMap<Atom, Expr> = BTreeMap::new();
    let mut all_exprs: Vec<&Expr> = eqs.residuals.iter().collect();
    all_exprs.push(&eqs.constraint);
    for row in &eqs.closedness {
        all_exprs.extend(row.iter());
    }
    for e in &all_exprs {
        for atom in e.atoms() {
            if cache.contains_key(&atom) {
                continue;
            }
            let derived = match &atom {
                Atom::FieldJet { field, jet } => {
                    let base = section.fields.get(field).ok_or_else(|| {
                        unsupported(format!("section does not prescribe field `{field}`"))
                    })?;
                    section_jet(base, jet, coords)
                }
                Atom::ActionJet { comp, jet } => {
                    let base = section.z.get(comp).unwrap_or(&zero);
                    section_jet(base, jet, coords)
                }
                _ => continue,
            };
            cache.insert(atom, derived);
        }
    }
    let subst = |e: &Expr| e.substitute(&cache).simplify();
    Ok(SectionResiduals {
        field_eqs: eqs.residuals.iter().map(&subst).collect(),
        constraint: subst(&eqs.constraint),
        closedness: eqs
            .closedness
            .iter()
            .map(|row| row.iter().map(&subst).collect())
            .collect(),
    })
}

fn section_jet(base: &Expr, jet: &str, coords: &[String]) -> Expr {
    let (ot, ox) = jet_counts(jet, coords);
    let mut out = base.clone();
    for (count, name) in [(ot, &coords[0]), (ox, &coords[1])] {
        let atom = Atom::Coord(name.clone());
        for _ in 0..count {
            out = out.partial_deriv(&atom).simplify();
        }
    }
    out
}

/// Evaluate how well a solution satisfies a derived equation set.
///
/// Solutions carrying a section evaluate exactly: the section is substituted
/// symbolically and the resulting residual expressions are sampled on the
/// nodes. Everything else goes through finite-difference stencils, 2nd-order
/// on bounded grids and 4th-order on periodic ones, with norms restricted to
/// the interior window the stencils can reach.
pub fn evaluate_residuals(
    spec: &LagrangianSpec,
    eqs: &EquationSet,
    sol: &FieldSolution,
) -> Result<ResidualReport, FieldError> {
    if spec.coords().len() != 2 {
        return Err(unsupported("field grids require exactly two coordinates"));
    }
    let nf = eqs.residuals.len();
    let (exprs, stencil_order, method): (Vec<Expr>, u32, &'static str) =
        if let Some(section) = &sol.section {
            let sr = section_residuals(spec, eqs, section)?;
            let mut v = sr.field_eqs;
            v.push(sr.constraint);
            v.push(sr.closedness[0][1].clone());
            (v, 0, "symbolic")
        } else {
            let mut v = eqs.residuals.clone();
            v.push(eqs.constraint.clone());
            v.push(eqs.closedness[0][1].clone());
            (v, if sol.grid.periodic() { 4 } else { 2 }, "stencil")
        };
    let ev = GridEval::new(spec, sol, &exprs)?;
    let stats = ev.norms(&sol.grid, ev.interior_rows(&sol.grid), ev.interior_cols(&sol.grid));
    Ok(ResidualReport {
        fields: eqs.fields.clone(),
        field_equation_max: stats[..nf].iter().map(|s| s.0).collect(),
        field_equation_l2: stats[..nf].iter().map(|s| s.1).collect(),
        constraint_max: stats[nf].0,
        constraint_l2: stats[nf].1,
        closedness_max: stats[nf + 1].0,
        closedness_l2: stats[nf + 1].1,
        interior_only: ev.margin_t > 0 || ev.margin_x > 0,
        stencil_order,
        margin_t: ev.margin_t,
        margin_x: ev.margin_x,
        method,
    })
}

/// Fill `z^t` so that `z^t_t = L` holds pointwise in the `z^x = 0` gauge,
/// keeping the existing first row as initial data. Uses per-node trapezoidal
/// integration in t with a fixed-point solve for the implicit endpoint
/// (the Lagrangian may reference `z^t` itself). Field derivatives inside L
/// come from the same stencils the residual engine uses, so the constraint
/// residual of the result is O(dt^2 + dx^2); that residual's interior max is
/// returned.
pub fn reconstruct_action_density(
    spec: &LagrangianSpec,
    sol: &mut FieldSolution,
) -> Result<f64, FieldError> {
    if sol.zx.iter().flatten().any(|&v| v != 0.0) {
        return Err(unsupported(
            "action density reconstruction assumes the z^x = 0 gauge",
        ));
    }
    let lag = bind_constants(spec, spec.lagrangian())?;
    let coords = spec.coords();
    let zt_atom = Atom::ActionJet {
        comp: coords[0].clone(),
        jet: String::new(),
    };

    // Tables for everything in L except z^t, which varies inside the
    // fixed-point iteration and is patched into its slot directly.
    let atoms = lag.atoms();
    let layout = slot_layout(atoms.iter());
    let program = Program::compile(&lag, &layout)?;
    let zt_slot = layout.get(&zt_atom).copied();
    let fourth = sol.grid.periodic();
    let mut sources: Vec<(usize, Source)> = Vec::new();
    let mut tables: Vec<Vec<Vec<f64>>> = Vec::new();
    for (atom, &slot) in &layout {
        match atom {
            Atom::Coord(c) if *c == coords[0] => sources.push((slot, Source::T)),
            Atom::Coord(c) if *c == coords[1] => sources.push((slot, Source::X)),
            Atom::FieldJet { field, jet } => {
                let i = spec.fields().iter().position(|f| f == field).unwrap();
                let (ot, ox) = jet_counts(jet, coords);
                tables.push(jet_table(
                    &sol.fields[i],
                    &sol.seam_jump[i],
                    &sol.grid,
                    ot,
                    ox,
                    fourth,
                ));
                sources.push((slot, Source::Table(tables.len() - 1)));
            }
            // z^x is identically zero in this gauge; z^t is patched per node.
            Atom::ActionJet { .. } => {}
            Atom::Coord(c) => return Err(unsupported(format!("coordinate `{c}` is not on the grid"))),
            Atom::Const(name) => {
                return Err(FieldError::MissingConstant { name: name.clone() })
            }
            Atom::Func(..) => unreachable!("atoms() does not yield function atoms"),
        }
    }

    let grid = sol.grid;
    let dt = grid.dt();
    let mut inputs = vec![0.0; layout.len()];
    let mut stack = Vec::new();
    let eval_l = |tables: &[Vec<Vec<f64>>],
                      k: usize,
                      j: usize,
                      zt_val: f64,
                      inputs: &mut [f64],
                      stack: &mut Vec<f64>| {
        for &(slot, src) in &sources {
            inputs[slot] = match src {
                Source::T => grid.t_at(k),
                Source::X => grid.x_at(j),
                Source::Table(i) => tables[i][k][j],
            };
        }
        if let Some(s) = zt_slot {
            inputs[s] = zt_val;
        }
        program.eval_with(inputs, stack)
    };

    for k in 0..grid.nt() - 1 {
        for j in 0..grid.nx() {
            let here = sol.zt[k][j];
            let l_here = eval_l(&tables, k, j, here, &mut inputs, &mut stack);
            let mut y = here + dt * l_here;
            let mut converged = false;
            for iter in 0..RECON_MAX_ITERS {
                let l_next = eval_l(&tables, k + 1, j, y, &mut inputs, &mut stack);
                let y_new = here + 0.5 * dt * (l_here + l_next);
                let delta = (y_new - y).abs();
                y = y_new;
                if !y.is_finite() {
                    return Err(FieldError::FixedPoint {
                        k: k + 1,
                        j,
                        residual: f64::INFINITY,
                        iters: iter + 1,
                    });
                }
                if delta <= RECON_TOL * (1.0 + y.abs()) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                let l_next = eval_l(&tables, k + 1, j, y, &mut inputs, &mut stack);
                let residual = (here + 0.5 * dt * (l_here + l_next) - y).abs();
                return Err(FieldError::FixedPoint {
                    k: k + 1,
                    j,
                    residual,
                    iters: RECON_MAX_ITERS,
                });
            }
            sol.zt[k + 1][j] = y;
        }
    }

    let phi = spec.constraint_expression();
    let ev = GridEval::new(spec, sol, std::slice::from_ref(&phi))?;
    let stats = ev.norms(&grid, ev.interior_rows(&grid), ev.interior_cols(&grid));
    Ok(stats[0].0)
}

/// Solve the damped wave problem u_tt = c^2 u_xx - gamma u_t on a bounded
/// grid with time-independent boundary values taken from the initial data.
///
/// Explicit central differences in both t and x; the damping term is
/// discretized symmetrically as (u^{k+1} - u^{k-1}) / (2 dt), which keeps the
/// scheme second-order and explicit. The first step comes from a Taylor
/// expansion closed with the equation itself. Requires c dt/dx <= 0.9.
/// z^t is reconstructed afterward in the z^x = 0 gauge.
pub fn solve_damped_string(
    spec: &LagrangianSpec,
    c2: f64,
    gamma: f64,
    ic_u: &Expr,
    ic_ut: &Expr,
    grid: Grid2D,
) -> Result<FieldSolution, FieldError> {
    if spec.fields().len() != 1 || spec.coords().len() != 2 {
        return Err(unsupported(
            "the wave solver handles a single field over two coordinates",
        ));
    }
    if grid.periodic() {
        return Err(unsupported("the wave solver uses bounded grids"));
    }
    if !(c2.is_finite() && c2 > 0.0) {
        return Err(unsupported(format!("wave speed squared must be positive, got {c2}")));
    }
    let (dt, dx) = (grid.dt(), grid.dx());
    let ratio = c2.sqrt() * dt / dx;
    if ratio > 0.9 {
        return Err(FieldError::Cfl { ratio, limit: 0.9 });
    }

    let u0 = sample_row(&CoordFn::new(spec, ic_u)?, &grid, grid.t_at(0));
    let ut0 = sample_row(&CoordFn::new(spec, ic_ut)?, &grid, grid.t_at(0));
    let nx = grid.nx();
    let mut u = vec![vec![0.0; nx]; grid.nt()];

    let uxx0 = differentiate_line(&u0, dx, 2, false, LineKind::Bounded);
    u[1] = u0.clone();
    for j in 1..nx - 1 {
        let utt = c2 * uxx0[j] - gamma * ut0[j];
        u[1][j] = u0[j] + dt * ut0[j] + 0.5 * dt * dt * utt;
    }
    u[0] = u0.clone();

    let r2 = c2 * dt * dt / (dx * dx);
    let denom = 1.0 + 0.5 * gamma * dt;
    let back = 1.0 - 0.5 * gamma * dt;
    for k in 1..grid.nt() - 1 {
        let (past, rest) = u.split_at_mut(k);
        let (cur, future) = rest.split_first_mut().unwrap();
        let next = &mut future[0];
        next[0] = u0[0];
        next[nx - 1] = u0[nx - 1];
        for j in 1..nx - 1 {
            let lap = cur[j + 1] - 2.0 * cur[j] + cur[j - 1];
            next[j] = (2.0 * cur[j] - back * past[k - 1][j] + r2 * lap) / denom;
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(FieldError::NonFinite {
                step: k + 1,
                time: grid.t_at(k + 1),
            });
        }
    }

    let mut sol = FieldSolution::blank(1, grid, Provenance::Solved);
    sol.fields[0] = u;
    reconstruct_action_density(spec, &mut sol)?;
    Ok(sol)
}

/// Discrete energy sum_j w_j (rho/2 u_t^2 + tau/2 u_x^2) per time node,
/// with stencil time derivatives (one-sided at the ends).
pub fn string_energy_series(sol: &FieldSolution, rho: f64, tau: f64) -> Vec<(f64, f64)> {
    let grid = &sol.grid;
    let u = &sol.fields[0];
    let ut = jet_table(u, &sol.seam_jump[0], grid, 1, 0, grid.periodic());
    let ux = jet_table(u, &sol.seam_jump[0], grid, 0, 1, grid.periodic());
    let w = quad_weights(grid.nx(), grid.x_span(), grid.periodic());
    (0..grid.nt())
        .map(|k| {
            let e: f64 = (0..grid.nx())
                .map(|j| w[j] * (0.5 * rho * ut[k][j] * ut[k][j] + 0.5 * tau * ux[k][j] * ux[k][j]))
                .sum();
            (grid.t_at(k), e)
        })
        .collect()
}

/// Solve the damped KdV problem in the gradient variable v = u_x:
/// v_t + (gamma_t / 2) v + 6 v v_x + v_xxx = 0, periodic in x.
///
/// Method of lines: 4th-order central stencils for v_x and v_xxx, classical
/// RK4 in time. Each output interval is cut into enough equal substeps to
/// satisfy dt <= safety * dx^3 / (6 max|v| dx^2 + 4), the explicit stage
/// bound for this discretization (max|v| is taken at the interval start;
/// `safety` defaults to [`KDV_STABILITY_SAFETY`]). The field u is recovered
/// per row by a 4th-order antiderivative with zero spatial mean; its seam
/// jump per period equals the discrete mass of v. z^t is reconstructed
/// afterward in the z^x = 0 gauge.
pub fn solve_damped_kdv(
    spec: &LagrangianSpec,
    gamma_t: f64,
    ic_v: &Expr,
    grid: Grid2D,
    safety: f64,
) -> Result<FieldSolution, FieldError> {
    if spec.fields().len() != 1 || spec.coords().len() != 2 {
        return Err(unsupported(
            "the KdV solver handles a single field over two coordinates",
        ));
    }
    if !grid.periodic() {
        return Err(unsupported("the KdV solver requires a periodic grid"));
    }
    if !(safety.is_finite() && safety > 0.0 && safety <= 1.0) {
        return Err(unsupported(format!(
            "stability safety factor must lie in (0, 1], got {safety}"
        )));
    }
    let (dt, dx) = (grid.dt(), grid.dx());
    let nx = grid.nx();
    let rhs = |v: &[f64], out: &mut Vec<f64>| {
        let vx = differentiate_line(v, dx, 1, true, LineKind::Periodic { jump: 0.0 });
        let vxxx = differentiate_line(v, dx, 3, true, LineKind::Periodic { jump: 0.0 });
        out.clear();
        out.extend(
            (0..v.len()).map(|j| -(0.5 * gamma_t * v[j] + 6.0 * v[j] * vx[j] + vxxx[j])),
        );
    };

    let mut v = sample_row(&CoordFn::new(spec, ic_v)?, &grid, grid.t_at(0));
    let mut v_rows = vec![v.clone()];
    let (mut k1, mut k2, mut k3, mut k4) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut tmp = vec![0.0; nx];
    for step in 0..grid.nt() - 1 {
        let vmax = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if !vmax.is_finite() || vmax > 1e6 {
            return Err(FieldError::NonFinite {
                step: step + 1,
                time: grid.t_at(step + 1),
            });
        }
        let dt_max = safety * dx.powi(3) / (6.0 * vmax * dx * dx + 4.0);
        let nsub = (dt / dt_max).ceil().max(1.0) as usize;
        let h = dt / nsub as f64;
        for _ in 0..nsub {
            rhs(&v, &mut k1);
            for j in 0..nx {
                tmp[j] = v[j] + 0.5 * h * k1[j];
            }
            rhs(&tmp, &mut k2);
            for j in 0..nx {
                tmp[j] = v[j] + 0.5 * h * k2[j];
            }
            rhs(&tmp, &mut k3);
            for j in 0..nx {
                tmp[j] = v[j] + h * k3[j];
            }
            rhs(&tmp, &mut k4);
            for j in 0..nx {
                v[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(FieldError::NonFinite {
                step: step + 1,
                time: grid.t_at(step + 1),
            });
        }
        v_rows.push(v.clone());
    }

    let mut sol = FieldSolution::blank(1, grid, Provenance::Solved);
    for (k, row) in v_rows.iter().enumerate() {
        let (u_row, jump) = antiderivative_periodic(row, dx);
        sol.fields[0][k] = u_row;
        sol.seam_jump[0][k] = jump;
    }
    reconstruct_action_density(spec, &mut sol)?;
    Ok(sol)
}

/// Discrete action: quadrature of the Lagrangian over the whole grid, with
/// trapezoid weights on bounded axes.
pub fn action_value(spec: &LagrangianSpec, sol: &FieldSolution) -> Result<f64, FieldError> {
    let lag = bind_constants(spec, spec.lagrangian())?;
    let ev = GridEval::new(spec, sol, std::slice::from_ref(&lag))?;
    let grid = &sol.grid;
    let wt = quad_weights(grid.nt(), grid.t_span(), false);
    let wx = quad_weights(grid.nx(), grid.x_span(), grid.periodic());
    let mut inputs = vec![0.0; ev.nslots];
    let mut stack = Vec::new();
    let mut acc = 0.0;
    for k in 0..grid.nt() {
        let mut row = 0.0;
        for j in 0..grid.nx() {
            ev.fill_inputs(grid, k, j, &mut inputs);
            row += wx[j] * ev.programs[0].eval_with(&inputs, &mut stack);
        }
        acc += wt[k] * row;
    }
    Ok(acc)
}

/// Result of [`discrete_action_gradient_check`].
#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    /// Discrete action of the unperturbed solution.
    pub action: f64,
    /// Largest |dA/d eps| over field-direction sine bumps.
    pub u_direction: f64,
    /// Largest |dA/d eps| over action-density bumps.
    pub z_direction: f64,
    pub modes: usize,
}

fn mode_list(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut total = 2;
    while out.len() < n {
        for kt in 1..total {
            out.push((kt, total - kt));
            if out.len() == n {
                break;
            }
        }
        total += 1;
    }
    out
}

/// Central-difference directional derivatives of the discrete action.
///
/// Field directions use tensor sine bumps that vanish on the time boundary
/// (and the space boundary on bounded grids; full periods on periodic ones);
/// after each bump z^t is reconstructed again, so the measured number is the
/// gradient of the reduced functional u -> A(u, z^t[u]). Action-density
/// directions perturb (z^t, z^x) through a stream function psi,
/// delta z^t = d psi/dx, delta z^x = -d psi/dt, which preserves the
/// divergence structure of the constraint; a closed Lagrangian feels nothing
/// along them, while non-closed action dependence shows up at first order.
///
/// The base solution must be in the z^x = 0 gauge with its constraint
/// satisfied to `constraint_tol` (checked; run the reconstruction first).
/// Intended for small grids, 64 x 64 or so.
pub fn discrete_action_gradient_check(
    spec: &LagrangianSpec,
    sol: &FieldSolution,
    n_modes: usize,
    h: f64,
    constraint_tol: f64,
) -> Result<GradientCheck, FieldError> {
    if sol.zx.iter().flatten().any(|&v| v != 0.0) {
        return Err(unsupported("the gradient check expects the z^x = 0 gauge"));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(unsupported(format!("bump amplitude must be positive, got {h}")));
    }
    let phi = spec.constraint_expression();
    let ev = GridEval::new(spec, sol, std::slice::from_ref(&phi))?;
    let phi_max = ev.norms(&sol.grid, ev.interior_rows(&sol.grid), ev.interior_cols(&sol.grid))[0].0;
    if phi_max > constraint_tol {
        return Err(FieldError::ConstraintViolated {
            max: phi_max,
            tol: constraint_tol,
        });
    }

    let grid = sol.grid;
    let modes = mode_list(n_modes);
    let base_action = action_value(spec, sol)?;

    // Bump profile and its exact partial derivatives.
    let tau_t = |k: usize| (grid.t_at(k) - grid.t_range().0) / grid.t_span();
    let tau_x = |j: usize| (grid.x_at(j) - grid.x_range().0) / grid.x_span();
    let x_freq = |kx: usize| {
        if grid.periodic() {
            2.0 * std::f64::consts::PI * kx as f64 / grid.x_span()
        } else {
            std::f64::consts::PI * kx as f64 / grid.x_span()
        }
    };
    let t_freq = |kt: usize| std::f64::consts::PI * kt as f64 / grid.t_span();
    let psi = |kt: usize, kx: usize, k: usize, j: usize| {
        (t_freq(kt) * grid.t_span() * tau_t(k)).sin() * (x_freq(kx) * grid.x_span() * tau_x(j)).sin()
    };
    let psi_t = |kt: usize, kx: usize, k: usize, j: usize| {
        t_freq(kt)
            * (t_freq(kt) * grid.t_span() * tau_t(k)).cos()
            * (x_freq(kx) * grid.x_span() * tau_x(j)).sin()
    };
    let psi_x = |kt: usize, kx: usize, k: usize, j: usize| {
        x_freq(kx)
            * (t_freq(kt) * grid.t_span() * tau_t(k)).sin()
            * (x_freq(kx) * grid.x_span() * tau_x(j)).cos()
    };

    let mut u_direction = 0.0f64;
    for fi in 0..sol.fields.len() {
        for &(kt, kx) in &modes {
            let mut actions = [0.0; 2];
            for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
                let mut bumped = sol.clone();
                bumped.section = None;
                for k in 0..grid.nt() {
                    for j in 0..grid.nx() {
                        bumped.fields[fi][k][j] += sign * h * psi(kt, kx, k, j);
                    }
                }
                // Seam jumps are untouched: the bump itself is periodic.
                reconstruct_action_density(spec, &mut bumped)?;
                actions[side] = action_value(spec, &bumped)?;
            }
            u_direction = u_direction.max((actions[0] - actions[1]).abs() / (2.0 * h));
        }
    }

    let mut z_direction = 0.0f64;
    for &(kt, kx) in &modes {
        let mut actions = [0.0; 2];
        for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
            let mut bumped = sol.clone();
            bumped.section = None;
            for k in 0..grid.nt() {
                for j in 0..grid.nx() {
                    bumped.zt[k][j] += sign * h * psi_x(kt, kx, k, j);
                    bumped.zx[k][j] -= sign * h * psi_t(kt, kx, k, j);
                }
            }
            actions[side] = action_value(spec, &bumped)?;
        }
        z_direction = z_direction.max((actions[0] - actions[1]).abs() / (2.0 * h));
    }

    Ok(GradientCheck {
        action: base_action,
        u_direction,
        z_direction,
        modes: n_modes,
    })
}
