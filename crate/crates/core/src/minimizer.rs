//! Minimizers of the pointwise conditional focal risk
//! `W(q; eta) = -sum_y eta_y (1 - q_y)^gamma log q_y` over the simplex.
//!
//! [`minimize_risk_inverse`] solves the stationarity condition `h(q_i) = c * eta_i`
//! directly; [`minimize_risk_pg`] runs projected gradient descent and serves as an
//! independent check on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focal::{h_unchecked, Gamma, SAFE_EPS};
use crate::optim::{bisect, project_simplex};
use crate::simplex::ProbVector;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_PG_ITERS: usize = 100_000;
/// Base step of the projected-gradient schedule `s0 / sqrt(t)`.
pub const PG_BASE_STEP: f64 = 0.5;
pub const PG_MAX_STEP: f64 = 1e3;

const MAX_BISECT: usize = 2_000;
const MAX_BRACKET_STEPS: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMinimizerResult {
    pub q_star: ProbVector,
    /// `W(q_star; eta)`.
    pub risk: f64,
    pub iterations: usize,
    /// `|sum q - 1|` before normalization for the inverse solver; the
    /// projected-gradient fixed-point residual for the descent solver.
    pub residual: f64,
}

/// `W(q; eta)`. Classes with `eta_y = 0` contribute nothing.
pub fn pointwise_risk(q: &ProbVector, eta: &ProbVector, gamma: Gamma) -> Result<f64> {
    q.check_same_k(eta)?;
    Ok(risk_raw(q.values(), eta.values(), gamma.value()))
}

fn risk_raw(q: &[f64], eta: &[f64], g: f64) -> f64 {
    q.iter()
        .zip(eta)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&qi, &e)| -e * (1.0 - qi).powf(g) * qi.ln())
        .sum()
}

fn risk_gradient(q: &[f64], eta: &[f64], g: f64) -> Vec<f64> {
    q.iter()
        .zip(eta)
        .map(|(&qi, &e)| {
            if e == 0.0 {
                return 0.0;
            }
            let om = 1.0 - qi;
            let lq = qi.ln();
            let log_term = if g == 0.0 { 0.0 } else { g * om.powf(g - 1.0) * lq };
            e * (log_term - om.powf(g) / qi)
        })
        .collect()
}

/// `h^{-1}(target)` on `[0, 1 - SAFE_EPS]`.
fn h_inverse(target: f64, g: f64) -> f64 {
    let upper = 1.0 - SAFE_EPS;
    if target <= 0.0 {
        return 0.0;
    }
    if target >= h_unchecked(upper, g) {
        return upper;
    }
    match bisect(|v| h_unchecked(v, g) - target, 0.0, upper, 0.0, MAX_BISECT) {
        Ok(root) => root.x,
        Err(_) => unreachable!("h is continuous and the bracket straddles the target"),
    }
}

/// Solves `h(q_i) = c * eta_i` with the scalar `c` chosen so that `sum q = 1`.
///
/// Zero-probability classes get `q_i = 0`. Equal `eta` entries share one inversion.
pub fn minimize_risk_inverse(eta: &ProbVector, gamma: Gamma, tol: f64) -> Result<RiskMinimizerResult> {
    let g = gamma.value();
    let k = eta.k();
    let support: Vec<usize> = (0..k).filter(|&i| eta.get(i) > 0.0).collect();
    if support.len() == 1 || gamma.is_zero() {
        // One-hot targets and the cross-entropy case are their own minimizers.
        let q_star = if support.len() == 1 {
            ProbVector::one_hot(support[0], k)?
        } else {
            eta.clone()
        };
        let risk = risk_raw(q_star.values(), eta.values(), g);
        return Ok(RiskMinimizerResult { q_star, risk, iterations: 0, residual: 0.0 });
    }

    let mut levels: Vec<f64> = support.iter().map(|&i| eta.get(i)).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let weights: Vec<f64> = levels
        .iter()
        .map(|l| support.iter().filter(|&&i| eta.get(i) == *l).count() as f64)
        .collect();
    let mass = |c: f64| -> f64 {
        levels
            .iter()
            .zip(&weights)
            .map(|(l, w)| w * h_inverse(c * l, g))
            .sum::<f64>()
            - 1.0
    };

    let (mut lo, mut hi) = (1.0, 1.0);
    let mut steps = 0;
    while mass(lo) > 0.0 {
        lo *= 0.5;
        steps += 1;
        if steps > MAX_BRACKET_STEPS {
            return Err(Error::Convergence { iterations: steps, residual: mass(lo).abs() });
        }
    }
    while mass(hi) < 0.0 {
        hi *= 2.0;
        steps += 1;
        if steps > MAX_BRACKET_STEPS {
            return Err(Error::Convergence { iterations: steps, residual: mass(hi).abs() });
        }
    }
    let root = bisect(mass, lo, hi, 0.0, MAX_BISECT)?;
    let c = root.x;

    let mut q = vec![0.0; k];
    for &i in &support {
        q[i] = h_inverse(c * eta.get(i), g);
    }
    let total: f64 = q.iter().sum();
    let residual = (total - 1.0).abs();
    let iterations = steps + root.iterations;
    if residual > tol {
        return Err(Error::Convergence { iterations, residual });
    }
    q.iter_mut().for_each(|v| *v /= total);
    let risk = risk_raw(&q, eta.values(), g);
    Ok(RiskMinimizerResult { q_star: ProbVector::from_raw(q), risk, iterations, residual })
}

/// Accelerated projected gradient descent on `{q : q_i >= SAFE_EPS, sum q = 1}`
/// starting from the uniform vector.
///
/// Near the optimum the risk is flat to within rounding, so both the step
/// search and the momentum restart look at gradients rather than risk values:
/// the step is halved until it is below the inverse of the curvature seen along
/// the move, and momentum resets when the move turns against the previous one.
///
/// Stops when the fixed-point residual `|q - P(q - grad W(q))|_inf` drops to `tol`.
pub fn minimize_risk_pg(
    eta: &ProbVector,
    gamma: Gamma,
    tol: f64,
    max_iters: usize,
) -> Result<RiskMinimizerResult> {
    let g = gamma.value();
    let k = eta.k();
    let e = eta.values();
    let mut q = vec![1.0 / k as f64; k];
    let mut prev = q.clone();
    let mut theta = 1.0f64;
    let mut step = PG_BASE_STEP;
    let mut residual = f64::INFINITY;

    for t in 1..=max_iters {
        residual = fixed_point_residual(&q, &risk_gradient(&q, e, g));
        if residual <= tol {
            return finish(q, e, g, t - 1, residual);
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        let extrapolated: Vec<f64> = q.iter().zip(&prev).map(|(x, p)| x + beta * (x - p)).collect();
        let y = project_simplex(&extrapolated, SAFE_EPS);
        let grad = risk_gradient(&y, e, g);

        step = (step * 2.0).min(PG_MAX_STEP);
        let next = loop {
            let trial: Vec<f64> = y.iter().zip(&grad).map(|(x, d)| x - step * d).collect();
            let next = project_simplex(&trial, SAFE_EPS);
            let next_grad = risk_gradient(&next, e, g);
            let (curv, sq) = next.iter().zip(&y).zip(grad.iter().zip(&next_grad)).fold(
                (0.0, 0.0),
                |(c, s), ((n, x), (d0, d1))| {
                    let dx = n - x;
                    (c + (d1 - d0) * dx, s + dx * dx)
                },
            );
            if curv * step <= sq || step < 1e-300 {
                break next;
            }
            step *= 0.5;
        };

        let turned: f64 = y.iter().zip(&next).zip(&q).map(|((yi, ni), qi)| (yi - ni) * (ni - qi)).sum();
        theta = if turned > 0.0 { 1.0 } else { theta_next };
        prev = std::mem::replace(&mut q, next);
    }
    let grad = risk_gradient(&q, e, g);
    residual = residual.min(fixed_point_residual(&q, &grad));
    if residual <= tol {
        return finish(q, e, g, max_iters, residual);
    }
    Err(Error::Convergence { iterations: max_iters, residual })
}

fn fixed_point_residual(q: &[f64], grad: &[f64]) -> f64 {
    let moved: Vec<f64> = q.iter().zip(grad).map(|(x, d)| x - d).collect();
    project_simplex(&moved, SAFE_EPS)
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn finish(q: Vec<f64>, eta: &[f64], g: f64, iterations: usize, residual: f64) -> Result<RiskMinimizerResult> {
    let risk = risk_raw(&q, eta, g);
    let total: f64 = q.iter().sum();
    let q_star = ProbVector::new(q.into_iter().map(|v| v / total).collect())?;
    Ok(RiskMinimizerResult { q_star, risk, iterations, residual })
}

/// How the probability mass not on the top class is spread in [`confidence_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TailShape {
    /// `(1 - m) / (k - 1)` on every other class.
    #[default]
    UniformTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub max_eta: f64,
    pub max_qstar: f64,
}

/// Top minimizer score as a function of the top posterior `m`, for
/// `grid_size` evenly spaced `m` strictly inside `(1/k, 1)`.
pub fn confidence_curve(k: usize, gamma: Gamma, grid_size: usize, tail: TailShape) -> Result<Vec<CurvePoint>> {
    if k < 2 {
        return Err(Error::Domain(format!("need k >= 2, got {k}")));
    }
    let base = 1.0 / k as f64;
    (1..=grid_size)
        .map(|i| {
            let m = base + (1.0 - base) * i as f64 / (grid_size + 1) as f64;
            let eta = match tail {
                TailShape::UniformTail => {
                    let mut v = vec![(1.0 - m) / (k - 1) as f64; k];
                    v[0] = m;
                    ProbVector::renormalized(v)?
                }
            };
            let res = minimize_risk_inverse(&eta, gamma, DEFAULT_TOL)?;
            Ok(CurvePoint { max_eta: eta.max(), max_qstar: res.q_star.max() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::focal::psi_transform;

    fn g(x: f64) -> Gamma {
        Gamma::new(x).unwrap()
    }

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn risk_examples() {
        let e = ProbVector::one_hot(1, 3).unwrap();
        assert_eq!(pointwise_risk(&e, &e, g(2.0)).unwrap(), 0.0);
        let half = pv(&[0.5, 0.5]);
        let r = pointwise_risk(&half, &pv(&[1.0, 0.0]), Gamma::ZERO).unwrap();
        assert!((r - std::f64::consts::LN_2).abs() < 1e-15);
        let r = pointwise_risk(&half, &pv(&[0.7, 0.3]), g(2.0)).unwrap();
        assert!((r - 0.173_286_795_139_986_33).abs() < 1e-15);
        assert!(pointwise_risk(&half, &ProbVector::uniform(3).unwrap(), g(1.0)).is_err());
    }

    #[test]
    fn inverse_special_cases() {
        let e = ProbVector::one_hot(2, 4).unwrap();
        assert_eq!(minimize_risk_inverse(&e, g(2.0), DEFAULT_TOL).unwrap().q_star, e);
        let u = ProbVector::uniform(5).unwrap();
        let q = minimize_risk_inverse(&u, g(3.0), DEFAULT_TOL).unwrap().q_star;
        assert!(q.values().iter().all(|v| (v - 0.2).abs() < 1e-12));
        let eta = pv(&[0.2, 0.5, 0.3]);
        assert_eq!(minimize_risk_inverse(&eta, Gamma::ZERO, DEFAULT_TOL).unwrap().q_star, eta);
    }

    #[test]
    fn inverse_binary_is_underconfident() {
        let eta = pv(&[0.7, 0.3]);
        let res = minimize_risk_inverse(&eta, g(2.0), DEFAULT_TOL).unwrap();
        let top = res.q_star.max();
        assert!(top > 0.5 && top < 0.7, "{top}");
        assert!(res.residual <= DEFAULT_TOL);
        let back = psi_transform(&res.q_star, g(2.0));
        assert!((back.get(0) - 0.7).abs() < 1e-10);
    }

    #[test]
    fn zero_classes_stay_zero() {
        let eta = pv(&[0.6, 0.0, 0.4]);
        let res = minimize_risk_inverse(&eta, g(1.0), DEFAULT_TOL).unwrap();
        assert_eq!(res.q_star.get(1), 0.0);
        let back = psi_transform(&res.q_star, g(1.0));
        assert!((back.get(0) - 0.6).abs() < 1e-10);
    }

    #[test]
    fn pg_examples() {
        let e = ProbVector::one_hot(0, 3).unwrap();
        let res = minimize_risk_pg(&e, g(1.0), 1e-10, DEFAULT_PG_ITERS).unwrap();
        assert!((res.q_star.get(0) - 1.0).abs() < 1e-6);

        let eta = pv(&[0.5, 0.3, 0.2]);
        let res = minimize_risk_pg(&eta, Gamma::ZERO, 1e-10, DEFAULT_PG_ITERS).unwrap();
        for (a, b) in res.q_star.values().iter().zip(eta.values()) {
            assert!((a - b).abs() < 1e-6);
        }

        let eta = pv(&[0.15, 0.6, 0.25]);
        let pg = minimize_risk_pg(&eta, g(2.0), 1e-10, DEFAULT_PG_ITERS).unwrap();
        let inv = minimize_risk_inverse(&eta, g(2.0), DEFAULT_TOL).unwrap();
        for (a, b) in pg.q_star.values().iter().zip(inv.q_star.values()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert!((pg.risk - inv.risk).abs() < 1e-9);
    }

    #[test]
    fn pg_reports_non_convergence() {
        let eta = pv(&[0.15, 0.6, 0.25]);
        assert!(matches!(
            minimize_risk_pg(&eta, g(2.0), 1e-14, 3),
            Err(Error::Convergence { iterations: 3, .. })
        ));
    }

    #[test]
    fn binary_curve_below_diagonal_and_ordered_in_gamma() {
        let c1 = confidence_curve(2, g(1.0), 49, TailShape::UniformTail).unwrap();
        assert!(c1.iter().all(|p| p.max_qstar < p.max_eta));
        let c5 = confidence_curve(2, g(5.0), 49, TailShape::UniformTail).unwrap();
        // grid point 30 of 49 sits at m = 0.5 + 0.5 * 30 / 50 = 0.8
        assert!((c1[29].max_eta - 0.8).abs() < 1e-12);
        assert!(c5[29].max_qstar < c1[29].max_qstar);
    }

    #[test]
    fn many_class_curve_crosses_diagonal() {
        let c = confidence_curve(1000, g(0.5), 200, TailShape::UniformTail).unwrap();
        assert!(c.iter().any(|p| p.max_qstar > p.max_eta));
    }
}
