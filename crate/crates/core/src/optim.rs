//! Small numerical building blocks: bracketing root finders, golden-section
//! search and Euclidean projection onto the simplex.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    /// Width of the final bracket.
    pub width: f64,
    pub iterations: usize,
}

/// Bisection on `[lo, hi]`, which must bracket a sign change of `f`.
///
/// Runs until the bracket is narrower than `tol` or stops shrinking in floating point.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> Result<Root>
where
    F: FnMut(f64) -> f64,
{
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(Root { x: lo, width: 0.0, iterations: 0 });
    }
    if f_hi == 0.0 {
        return Ok(Root { x: hi, width: 0.0, iterations: 0 });
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Domain(format!(
            "no sign change on [{lo}, {hi}]: f = {f_lo:e}, {f_hi:e}"
        )));
    }
    for it in 1..=max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= tol {
            return Ok(Root { x: mid, width: hi - lo, iterations: it - 1 });
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(Root { x: mid, width: 0.0, iterations: it });
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let width = hi - lo;
    if width <= tol {
        Ok(Root { x: 0.5 * (lo + hi), width, iterations: max_iter })
    } else {
        Err(Error::Convergence { iterations: max_iter, residual: width })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
pub fn golden_section_min<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> Minimum
where
    F: FnMut(f64) -> f64,
{
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    let mut iterations = 0;
    while hi - lo > tol && iterations < max_iter {
        iterations += 1;
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb {
        Minimum { x: a, value: fa, iterations }
    } else {
        Minimum { x: b, value: fb, iterations }
    }
}

/// Euclidean projection of `y` onto `{x : x_i >= floor, sum x = 1}` (sort-based).
///
/// Requires `floor * y.len() < 1`.
pub fn project_simplex(y: &[f64], floor: f64) -> Vec<f64> {
    let k = y.len();
    let mass = 1.0 - floor * k as f64;
    debug_assert!(mass > 0.0);
    let mut sorted: Vec<f64> = y.iter().map(|v| v - floor).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - mass) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    y.iter().map(|v| (v - floor - theta).max(0.0) + floor).collect()
}
