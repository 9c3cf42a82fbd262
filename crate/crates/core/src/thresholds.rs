//! Confidence thresholds `tau_oc < tau_uc` of the focal-risk minimizer.
//!
//! `tau_oc` is the maximizer of `phi` and `tau_uc` the point on the descending
//! branch where `phi` returns to 1. A top score at or below `tau_oc` means the
//! minimizer overstates the top posterior; at or above `tau_uc` it understates it.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focal::{psi_transform, varphi_unchecked, Gamma, SAFE_EPS};
use crate::optim::bisect;
use crate::simplex::ProbVector;

pub const DEFAULT_TOL: f64 = 1e-10;

/// Bisection iteration cap; the bracket reaches floating-point resolution well before this.
const MAX_ITER: usize = 200;

/// Margin used to decide that `max psi(p)` and `max p` differ.
pub const DIRECTION_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub gamma: Gamma,
    pub tau_oc: f64,
    pub tau_uc: f64,
    /// Widest final bisection bracket of the two solves.
    pub tol: f64,
}

impl ThresholdPair {
    pub fn compute(gamma: Gamma, tol: f64) -> Result<Self> {
        let (tau_oc, w_oc) = solve_tau_oc(gamma, tol)?;
        let (tau_uc, w_uc) = solve_tau_uc(gamma, tau_oc, tol)?;
        Ok(Self { gamma, tau_oc, tau_uc, tol: w_oc.max(w_uc) })
    }

    /// Memoized [`ThresholdPair::compute`] at [`DEFAULT_TOL`].
    pub fn cached(gamma: Gamma) -> Result<Self> {
        static CACHE: OnceLock<RwLock<HashMap<u64, ThresholdPair>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let key = gamma.value().to_bits();
        if let Some(pair) = cache.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(*pair);
        }
        let pair = Self::compute(gamma, DEFAULT_TOL)?;
        cache.write().unwrap_or_else(|e| e.into_inner()).insert(key, pair);
        Ok(pair)
    }

    pub fn region(&self, maxq: f64) -> ConfidenceRegion {
        if maxq <= self.tau_oc {
            ConfidenceRegion::Overconfident
        } else if maxq >= self.tau_uc {
            ConfidenceRegion::Underconfident
        } else {
            ConfidenceRegion::Ambiguous
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceRegion {
    Overconfident,
    Ambiguous,
    Underconfident,
}

/// Pointwise comparison of `max p` against `max psi(p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceDirection {
    /// The score understates the recovered top posterior.
    Under,
    /// The score overstates it.
    Over,
    Exact,
}

fn require_positive(gamma: Gamma) -> Result<()> {
    if gamma.is_zero() {
        Err(Error::Degenerate)
    } else {
        Ok(())
    }
}

/// Sign-carrying factor of `d phi / dv`:
/// `phi'(v) = gamma (1 - v)^(gamma - 2) * s(v)` with
/// `s(v) = -2 (1 - v) + (gamma - 1) v log v - (1 - v) log v`.
fn slope_factor(v: f64, g: f64) -> f64 {
    let lv = v.ln();
    -2.0 * (1.0 - v) + (g - 1.0) * v * lv - (1.0 - v) * lv
}

fn solve_tau_oc(gamma: Gamma, tol: f64) -> Result<(f64, f64)> {
    require_positive(gamma)?;
    let g = gamma.value();
    let root = bisect(|v| slope_factor(v, g), SAFE_EPS, 0.5, 0.0, MAX_ITER)?;
    if root.width > tol {
        return Err(Error::Convergence { iterations: root.iterations, residual: root.width });
    }
    Ok((root.x, root.width))
}

fn solve_tau_uc(gamma: Gamma, tau_oc: f64, tol: f64) -> Result<(f64, f64)> {
    let g = gamma.value();
    let root = bisect(|v| varphi_unchecked(v, g) - 1.0, tau_oc, 0.5, 0.0, MAX_ITER)?;
    if root.width > tol {
        return Err(Error::Convergence { iterations: root.iterations, residual: root.width });
    }
    Ok((root.x, root.width))
}

/// Maximizer of `phi` on `(0, 1)`, found by bisecting the sign of its derivative on `(0, 0.5]`.
pub fn tau_oc(gamma: Gamma, tol: f64) -> Result<f64> {
    solve_tau_oc(gamma, tol).map(|(x, _)| x)
}

/// The root of `phi(v) = 1` on `(tau_oc, 0.5)`.
pub fn tau_uc(gamma: Gamma, tol: f64) -> Result<f64> {
    let (oc, _) = solve_tau_oc(gamma, tol)?;
    solve_tau_uc(gamma, oc, tol).map(|(x, _)| x)
}

pub fn region_of(maxq: f64, gamma: Gamma) -> Result<ConfidenceRegion> {
    if !(maxq > 0.0 && maxq < 1.0) {
        return Err(Error::Domain(format!("max score must lie in (0, 1), got {maxq}")));
    }
    Ok(ThresholdPair::cached(gamma)?.region(maxq))
}

pub fn confidence_direction(p: &ProbVector, gamma: Gamma) -> ConfidenceDirection {
    let recovered = psi_transform(p, gamma).max();
    let score = p.max();
    if score < recovered - DIRECTION_MARGIN {
        ConfidenceDirection::Under
    } else if score > recovered + DIRECTION_MARGIN {
        ConfidenceDirection::Over
    } else {
        ConfidenceDirection::Exact
    }
}

/// `(v, phi(v))` on `n` evenly spaced points of `[0, 1]` (endpoints included).
pub fn varphi_curve(gamma: Gamma, n: usize) -> Vec<(f64, f64)> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let v = i as f64 / (n - 1) as f64;
            (v, varphi_unchecked(v, gamma.value()))
        })
        .collect()
}
