//! One-dimensional minimization and root bracketing.

use crate::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    /// Final bracket around `x`.
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
///
/// Stops once the bracket shrinks below `x_tol` or the two interior values
/// agree to `rel_tol`; running out of `max_iter` is an error.
pub fn golden_section<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    x_tol: f64,
    rel_tol: f64,
    max_iter: usize,
) -> Result<Minimum> {
    if !(lo < hi) {
        return Err(Error::domain(format!("empty bracket [{lo}, {hi}]")));
    }
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for it in 0..max_iter {
        let width = hi - lo;
        let flat = (f1 - f2).abs() < rel_tol * f1.abs().max(f2.abs());
        if width <= x_tol || (flat && width <= 1e3 * x_tol) {
            let (x, value) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
            return Ok(Minimum {
                x,
                value,
                lo,
                hi,
                iterations: it,
            });
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    Err(Error::NoConvergence {
        what: "golden-section search",
        iterations: max_iter,
    })
}

/// Root of an increasing `f` on `[lo, hi]` with `f(lo) <= 0 <= f(hi)`.
pub fn bisect_increasing<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    max_iter: usize,
) -> Result<f64> {
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::domain(format!("root not bracketed by [{lo}, {hi}]")));
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        what: "bisection",
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_quadratic() {
        let m = golden_section(|x| (x - 1.3).powi(2) + 2.0, -5.0, 7.0, 1e-10, 0.0, 200).unwrap();
        // a quadratic minimum is only resolvable to ~sqrt(eps)
        assert!((m.x - 1.3).abs() < 1e-7);
        assert!(m.lo - 1e-7 <= 1.3 && 1.3 <= m.hi + 1e-7);
    }

    #[test]
    fn golden_reports_non_convergence() {
        let err = golden_section(|x| x * x, -1.0, 1.0, 1e-300, 0.0, 10).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }

    #[test]
    fn bisection_root() {
        let r = bisect_increasing(|x| x.powi(3) - 2.0, 0.0, 2.0, 200).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-15);
        assert!(bisect_increasing(|x| x - 5.0, 0.0, 1.0, 100).is_err());
    }
}
