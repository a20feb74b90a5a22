//! Scalar root finding and line search used by the device and array solvers.

use crate::error::{Error, Result};

pub(crate) const MAX_ITERATIONS: usize = 100;

/// Safeguarded Newton iteration on a bracket `[lo, hi]` of a monotone
/// function. `f` returns the residual and its derivative. The bracket must
/// satisfy `f(lo)` and `f(hi)` having opposite signs (or one being zero).
///
/// A Newton step that leaves the current bracket, or fails to halve the
/// residual, is replaced by bisection, so convergence is guaranteed for
/// continuous `f` even across kinks.
pub(crate) fn newton_bracketed<F>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    x0: f64,
    tol_x: f64,
    tol_f: f64,
    what: &'static str,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let (f_lo, _) = f(lo)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    let (f_hi, _) = f(hi)?;
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoConvergence {
            what,
            iterations: 0,
        });
    }
    // orient so that f(lo) < 0 < f(hi)
    let increasing = f_lo < 0.0;
    if !increasing {
        std::mem::swap(&mut lo, &mut hi);
    }

    let mut x = if x0.is_finite() && x0 > lo.min(hi) && x0 < lo.max(hi) {
        x0
    } else {
        0.5 * (lo + hi)
    };
    let mut last_abs = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let (fx, dfx) = f(x)?;
        if fx.abs() <= tol_f {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if (hi - lo).abs() <= tol_x {
            return Ok(0.5 * (lo + hi));
        }
        let newton = if dfx != 0.0 && dfx.is_finite() {
            x - fx / dfx
        } else {
            f64::NAN
        };
        let inside = newton.is_finite() && newton > lo.min(hi) && newton < lo.max(hi);
        if inside && (newton - x).abs() <= tol_x {
            return Ok(newton);
        }
        x = if inside && fx.abs() < 0.5 * last_abs {
            newton
        } else {
            0.5 * (lo + hi)
        };
        last_abs = fx.abs();
    }
    Err(Error::NoConvergence {
        what,
        iterations: MAX_ITERATIONS,
    })
}

/// Golden-section search for the maximum of a unimodal function on `[a, b]`,
/// refined until the bracket is narrower than `tol`. Returns `(x, f(x))`.
pub(crate) fn golden_section_max<F>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}
