//! 1D finite-difference stencils for the field solvers and residual engine.
//!
//! Periodic lines wrap with an additive seam jump: a value J such that
//! f(x + period) = f(x) + J. This covers quantities like the KdV field u,
//! which is a spatial antiderivative of a periodic function with nonzero
//! mean, so it gains J per trip around the circle while every derivative of
//! it stays truly periodic.
//!
//! Non-periodic lines use central stencils in the interior. Derivative
//! orders 1 and 2 fall back to one-sided second-order formulas at the edges
//! (reconstruction integrates the Lagrangian over whole lines and needs
//! values there). Orders 3 and 4 leave the unreachable margin at zero;
//! residual norms exclude margins, so those cells are never read where
//! accuracy matters.

/// How a line's ends behave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineKind {
    /// Ends are genuine boundaries.
    Bounded,
    /// Wraps around; the stored value increases by `jump` per period.
    Periodic { jump: f64 },
}

fn wrap_at(f: &[f64], j: isize, jump: f64) -> f64 {
    let n = f.len() as isize;
    let m = j.div_euclid(n);
    f[j.rem_euclid(n) as usize] + m as f64 * jump
}

/// Differentiate a sampled line.
///
/// `order` is the derivative order (1..=4); `fourth` requests 4th-order
/// accuracy in the interior (2nd-order otherwise).
pub fn differentiate_line(f: &[f64], h: f64, order: u32, fourth: bool, kind: LineKind) -> Vec<f64> {
    assert!((1..=4).contains(&order), "derivative order {order} unsupported");
    let n = f.len();
    let mut out = vec![0.0; n];

    // (offsets, weights, denominator power) per (order, accuracy).
    let central: (&[isize], &[f64], u32) = match (order, fourth) {
        (1, false) => (&[-1, 1], &[-0.5, 0.5], 1),
        (2, false) => (&[-1, 0, 1], &[1.0, -2.0, 1.0], 2),
        (3, false) => (&[-2, -1, 1, 2], &[-0.5, 1.0, -1.0, 0.5], 3),
        (4, false) => (&[-2, -1, 0, 1, 2], &[1.0, -4.0, 6.0, -4.0, 1.0], 4),
        (1, true) => (
            &[-2, -1, 1, 2],
            &[1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0],
            1,
        ),
        (2, true) => (
            &[-2, -1, 0, 1, 2],
            &[
                -1.0 / 12.0,
                16.0 / 12.0,
                -30.0 / 12.0,
                16.0 / 12.0,
                -1.0 / 12.0,
            ],
            2,
        ),
        (3, true) => (
            &[-3, -2, -1, 1, 2, 3],
            &[
                1.0 / 8.0,
                -1.0,
                13.0 / 8.0,
                -13.0 / 8.0,
                1.0,
                -1.0 / 8.0,
            ],
            3,
        ),
        (4, true) => (
            &[-3, -2, -1, 0, 1, 2, 3],
            &[
                -1.0 / 6.0,
                2.0,
                -13.0 / 2.0,
                28.0 / 3.0,
                -13.0 / 2.0,
                2.0,
                -1.0 / 6.0,
            ],
            4,
        ),
        _ => unreachable!(),
    };
    let (offs, w, pow) = central;
    let scale = 1.0 / h.powi(pow as i32);
    let half = offs.iter().map(|o| o.unsigned_abs()).max().unwrap();

    match kind {
        LineKind::Periodic { jump } => {
            for j in 0..n {
                let mut acc = 0.0;
                for (o, wk) in offs.iter().zip(w) {
                    acc += wk * wrap_at(f, j as isize + o, jump);
                }
                out[j] = acc * scale;
            }
        }
        LineKind::Bounded => {
            for j in half..n - half {
                let mut acc = 0.0;
                for (o, wk) in offs.iter().zip(w) {
                    acc += wk * f[(j as isize + o) as usize];
                }
                out[j] = acc * scale;
            }
            // Fill toward the edges with narrower formulas where they exist.
            if fourth && n >= 3 {
                // Second-order central for cells the wide stencil missed.
                let (offs2, w2, _) = match order {
                    1 => (&[-1isize, 1][..], &[-0.5, 0.5][..], 1),
                    2 => (&[-1, 0, 1][..], &[1.0, -2.0, 1.0][..], 2),
                    3 => (&[-2, -1, 1, 2][..], &[-0.5, 1.0, -1.0, 0.5][..], 3),
                    _ => (&[-2, -1, 0, 1, 2][..], &[1.0, -4.0, 6.0, -4.0, 1.0][..], 4),
                };
                let half2 = offs2.iter().map(|o| o.unsigned_abs()).max().unwrap();
                for j in (half2..n - half2).filter(|j| *j < half || *j >= n - half) {
                    let mut acc = 0.0;
                    for (o, wk) in offs2.iter().zip(w2) {
                        acc += wk * f[(j as isize + o) as usize];
                    }
                    out[j] = acc * scale;
                }
            }
            match order {
                1 if n >= 3 => {
                    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
                    out[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
                }
                2 if n >= 4 => {
                    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / (h * h);
                    out[n - 1] =
                        (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / (h * h);
                }
                _ => {}
            }
        }
    }
    out
}

/// Margin of cells (per end) that a bounded line cannot fill at the stated
/// accuracy for the given derivative order. Residual norms exclude it.
pub fn margin(order: u32, fourth: bool) -> usize {
    match (order, fourth) {
        (0, _) => 0,
        (1, false) | (2, false) => 1,
        (3, false) | (4, false) => 2,
        (1, true) | (2, true) => 2,
        _ => 3,
    }
}

/// Fourth-order cumulative antiderivative on a periodic line with zero-mean
/// convention. Returns (values, seam jump), where the jump is the exact
/// discrete integral of `v` over the period.
///
/// The increment rule integrates the cubic through the four surrounding
/// samples: U_{j+1} = U_j + h/24 (-v_{j-1} + 13 v_j + 13 v_{j+1} - v_{j+2}).
pub fn antiderivative_periodic(v: &[f64], h: f64) -> (Vec<f64>, f64) {
    let n = v.len();
    let mut u = vec![0.0; n];
    let at = |j: isize| v[j.rem_euclid(n as isize) as usize];
    for j in 0..n - 1 {
        let ji = j as isize;
        let inc = h / 24.0 * (-at(ji - 1) + 13.0 * at(ji) + 13.0 * at(ji + 1) - at(ji + 2));
        u[j + 1] = u[j] + inc;
    }
    let jump: f64 = h * v.iter().sum::<f64>();
    let mean = u.iter().sum::<f64>() / n as f64;
    for x in &mut u {
        *x -= mean;
    }
    (u, jump)
}

/// Trapezoidal quadrature weights over n nodes spanning `len` (bounded
/// lines), or uniform weights h = len/n for periodic lines.
pub fn quad_weights(n: usize, len: f64, periodic: bool) -> Vec<f64> {
    if periodic {
        vec![len / n as f64; n]
    } else {
        let h = len / (n - 1) as f64;
        let mut w = vec![h; n];
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
        w
    }
}
