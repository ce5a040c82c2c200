//! Scalar root finding for the estimating equation: grid scan over a geometric bracket, then Brent.

use serde::{Deserialize, Serialize};

use super::{EeFunction, Mode, NuisanceEstimates};
use crate::covest::CovBundle;
use crate::error::{DeemError, Result};

/// How the root was found.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// Smallest symmetric bracket around the anchor containing the returned root.
    pub bracket: (f64, f64),
    /// Brent iterations after the scan.
    pub iterations: usize,
    /// `|f(root)|`.
    pub residual: f64,
    /// More than one sign change inside the maximal bracket.
    pub multiplicity_flag: bool,
    pub evaluations: usize,
}

const MAX_DOUBLINGS: i32 = 6;
const STEPS_PER_HALF_WIDTH: usize = 8;

/// Root of `f` nearest `anchor`.
///
/// The initial half-width is `0.5·max(1, |anchor|)` and doubles up to `2⁶` times. Sign changes are
/// located on a grid of spacing `h0/8` walking outward from the anchor; a domain error ends the walk
/// on that side. The nearest sign change is refined with Brent's method until `|f| ≤ f_tol`.
pub fn find_root_near<F>(mut f: F, anchor: f64, f_tol: f64) -> Result<(f64, SolverDiagnostics)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let h0 = 0.5 * anchor.abs().max(1.0);
    let step = h0 / STEPS_PER_HALF_WIDTH as f64;
    let n_steps = STEPS_PER_HALF_WIDTH << MAX_DOUBLINGS;
    let mut evaluations = 1;
    let f0 = f(anchor)?;
    if f0 == 0.0 {
        return Ok((
            anchor,
            SolverDiagnostics {
                bracket: (anchor - h0, anchor + h0),
                iterations: 0,
                residual: 0.0,
                multiplicity_flag: false,
                evaluations,
            },
        ));
    }

    // (distance index of inner point, inner x, inner f, outer x, outer f)
    let mut changes: Vec<(usize, f64, f64, f64, f64)> = Vec::new();
    let mut reach = [0usize; 2];
    for (side, sign) in [(0usize, 1.0f64), (1, -1.0)] {
        let (mut x_prev, mut f_prev) = (anchor, f0);
        for i in 1..=n_steps {
            let x = anchor + sign * step * i as f64;
            evaluations += 1;
            let fx = match f(x) {
                Ok(v) => v,
                Err(DeemError::Domain { .. }) => break,
                Err(e) => return Err(e),
            };
            reach[side] = i;
            if f_prev.signum() != fx.signum() || fx == 0.0 {
                changes.push((i - 1, x_prev, f_prev, x, fx));
            }
            x_prev = x;
            f_prev = fx;
            if fx == 0.0 {
                // continue scanning past an exact zero from the next point
                f_prev = f(x + sign * step * 0.5).unwrap_or(fx);
            }
        }
    }
    let lo = anchor - step * reach[1] as f64;
    let hi = anchor + step * reach[0] as f64;
    let Some(&(dist, xa, fa, xb, fb)) = changes.iter().min_by_key(|c| c.0) else {
        return Err(DeemError::NoRoot { lo, hi, evaluations });
    };
    let multiplicity_flag = changes.len() > 1;

    let (root, iterations, residual, evals) = if fb == 0.0 {
        (xb, 0, 0.0, 0)
    } else {
        brent(&mut f, xa, fa, xb, fb, f_tol)?
    };
    evaluations += evals;

    let outer = (dist + 1) as f64 * step;
    let mut k = 0;
    while h0 * f64::powi(2.0, k) < outer && k < MAX_DOUBLINGS {
        k += 1;
    }
    let h = h0 * f64::powi(2.0, k);
    Ok((
        root,
        SolverDiagnostics {
            bracket: (anchor - h, anchor + h),
            iterations,
            residual,
            multiplicity_flag,
            evaluations,
        },
    ))
}

/// Brent's method on a bracket with `fa·fb < 0`. Returns (root, iterations, |f(root)|, evaluations).
fn brent<F>(f: &mut F, a0: f64, fa0: f64, b0: f64, fb0: f64, f_tol: f64) -> Result<(f64, usize, f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut fa, mut b, mut fb) = (a0, fa0, b0, fb0);
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    let mut evals = 0;
    for iter in 1..=200 {
        if fb.signum() == fc.signum() && fb != 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * f64::MIN_POSITIVE;
        let m = 0.5 * (c - b);
        if fb.abs() <= f_tol || fb == 0.0 || m.abs() <= tol {
            return Ok((b, iter - 1, fb.abs(), evals));
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
        evals += 1;
    }
    Ok((b, 200, fb.abs(), evals))
}

/// Root of the estimating equation nearest the anchor (normally β̂₂), to `|ee| ≤ 1e-10·γ̂ᵀV⁻¹γ̂`.
pub fn solve_ee(
    mode: Mode,
    bundle: &CovBundle,
    gamma_hat: &[f64],
    big_gamma_hat: &[f64],
    nuisance: &NuisanceEstimates,
    anchor: f64,
) -> Result<(f64, SolverDiagnostics)> {
    let ee = EeFunction::new(mode, bundle, gamma_hat, big_gamma_hat, nuisance)?;
    let tol = 1e-10 * ee.scale().abs();
    find_root_near(|b| ee.eval(b), anchor, tol)
}
