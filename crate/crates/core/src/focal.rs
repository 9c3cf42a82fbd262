//! Closed-form focal-loss mathematics: the loss itself, the characteristic
//! function `phi`, the score map `h = v / phi(v)`, the posterior-recovery
//! transform `psi` and membership in the fixed-point set `S^K`.
//!
//! Conventions shared across the crate:
//! - `v log v` is taken as 0 at `v = 0`.
//! - Strict mode leaves log singularities visible (`+inf`), safe mode clamps
//!   probabilities to at least [`SAFE_EPS`] before taking logs.
//! - Class indices are 0-based; ties in argmax go to the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::ProbVector;

/// Clamp used by [`LogMode::Safe`] and by solvers that need to stay off the boundary.
pub const SAFE_EPS: f64 = 1e-12;

/// Tolerance used by [`psi_transform`] to recognise one-hot inputs.
pub const ONE_HOT_TOL: f64 = 1e-9;

/// Focusing parameter of the focal loss. Always finite and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Gamma(f64);

impl Gamma {
    pub const ZERO: Gamma = Gamma(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Domain(format!("gamma must be finite and >= 0, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for Gamma {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Gamma> for f64 {
    fn from(g: Gamma) -> f64 {
        g.0
    }
}

impl std::fmt::Display for Gamma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Focal,
    CrossEntropy,
}

/// A training/evaluation loss. Focal with gamma 0 is the same loss as cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub gamma: Gamma,
}

impl LossSpec {
    pub fn focal(gamma: Gamma) -> Self {
        Self { kind: LossKind::Focal, gamma }
    }

    pub fn cross_entropy() -> Self {
        Self { kind: LossKind::CrossEntropy, gamma: Gamma::ZERO }
    }

    /// The gamma actually used in evaluation; 0 for cross-entropy.
    pub fn effective_gamma(&self) -> Gamma {
        match self.kind {
            LossKind::CrossEntropy => Gamma::ZERO,
            LossKind::Focal => self.gamma,
        }
    }

    pub fn is_cross_entropy(&self) -> bool {
        self.effective_gamma().is_zero()
    }

    pub fn eval(&self, u: &ProbVector, v: &ProbVector) -> Result<f64> {
        focal_loss(u, v, self.effective_gamma())
    }
}

impl std::fmt::Display for LossSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            LossKind::CrossEntropy => write!(f, "ce"),
            LossKind::Focal => write!(f, "focal(gamma={})", self.gamma),
        }
    }
}

/// How `log` treats zero probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogMode {
    /// `log 0 = -inf`; losses report `+inf`.
    #[default]
    Strict,
    /// Probabilities are clamped to `[SAFE_EPS, 1]` before the log.
    Safe,
}

impl LogMode {
    pub(crate) fn ln(self, x: f64) -> f64 {
        match self {
            LogMode::Strict => x.ln(),
            LogMode::Safe => x.max(SAFE_EPS).ln(),
        }
    }
}

/// `-sum_i v_i (1 - u_i)^gamma log u_i`, in strict mode.
///
/// Returns `+inf` when some `u_i == 0` has `v_i > 0`.
pub fn focal_loss(u: &ProbVector, v: &ProbVector, gamma: Gamma) -> Result<f64> {
    focal_loss_with(u, v, gamma, LogMode::Strict)
}

pub fn focal_loss_with(u: &ProbVector, v: &ProbVector, gamma: Gamma, mode: LogMode) -> Result<f64> {
    u.check_same_k(v)?;
    let g = gamma.value();
    let mut total = 0.0;
    for (&ui, &vi) in u.values().iter().zip(v.values()) {
        if vi == 0.0 {
            continue;
        }
        let log_u = mode.ln(ui);
        if log_u == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        total -= vi * (1.0 - ui).powf(g) * log_u;
    }
    Ok(total)
}

/// `-sum_i v_i log u_i`; identical to `focal_loss(u, v, 0)`.
pub fn cross_entropy(u: &ProbVector, v: &ProbVector) -> Result<f64> {
    focal_loss(u, v, Gamma::ZERO)
}

/// `phi(v) = (1 - v)^gamma - gamma (1 - v)^(gamma - 1) v log v` on `[0, 1]`,
/// with the endpoint limits `phi(0) = 1` and `phi(1) = 0` for `gamma > 0`.
pub fn varphi(v: f64, gamma: Gamma) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("phi is defined on [0, 1], got {v}")));
    }
    Ok(varphi_unchecked(v, gamma.value()))
}

pub(crate) fn varphi_unchecked(v: f64, g: f64) -> f64 {
    if g == 0.0 || v == 0.0 {
        return 1.0;
    }
    if v == 1.0 {
        return 0.0;
    }
    let om = 1.0 - v;
    om.powf(g) - g * om.powf(g - 1.0) * v * v.ln()
}

/// `h(v) = v / phi(v)` on `[0, 1)`. Strictly increasing for every gamma.
pub fn h_transform(v: f64, gamma: Gamma) -> Result<f64> {
    if v == 1.0 {
        return Err(Error::Singularity);
    }
    if !(0.0..1.0).contains(&v) {
        return Err(Error::Domain(format!("h is defined on [0, 1), got {v}")));
    }
    Ok(h_unchecked(v, gamma.value()))
}

pub(crate) fn h_unchecked(v: f64, g: f64) -> f64 {
    v / varphi_unchecked(v, g)
}

/// Maps a focal-risk minimizer back to the class posterior:
/// `psi_i(p) = h(p_i) / sum_l h(p_l)`.
///
/// Identity for `gamma = 0`; one-hot inputs (within [`ONE_HOT_TOL`]) are returned as is.
pub fn psi_transform(p: &ProbVector, gamma: Gamma) -> ProbVector {
    if gamma.is_zero() || is_one_hot(p, ONE_HOT_TOL) {
        return p.clone();
    }
    let g = gamma.value();
    let scores: Vec<f64> = p.values().iter().map(|&v| h_unchecked(v, g)).collect();
    let total: f64 = scores.iter().sum();
    ProbVector::from_raw(scores.into_iter().map(|s| s / total).collect())
}

/// Two-class closed form relating the larger minimizer score `q` to the true posterior `eta`.
pub fn recover_binary(q: f64, gamma: Gamma) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("binary recovery needs q in (0, 1), got {q}")));
    }
    let g = gamma.value();
    let p = 1.0 - q;
    let num = q.powf(g) / p - g * q.powf(g - 1.0) * p.ln();
    let other = p.powf(g) / q - g * p.powf(g - 1.0) * q.ln();
    Ok(num / (num + other))
}

/// True iff every entry is within `tol` of 0 or of the maximum entry.
pub fn in_sk(p: &ProbVector, tol: f64) -> bool {
    let max = p.max();
    p.values()
        .iter()
        .all(|&x| x.abs() <= tol || (x - max).abs() <= tol)
}

fn is_one_hot(p: &ProbVector, tol: f64) -> bool {
    let max = p.max();
    in_sk(p, tol) && p.values().iter().filter(|&&x| (x - max).abs() <= tol).count() == 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn g(x: f64) -> Gamma {
        Gamma::new(x).unwrap()
    }

    #[test]
    fn gamma_rejects_negative() {
        assert!(Gamma::new(-0.1).is_err());
        assert!(Gamma::new(f64::NAN).is_err());
    }

    #[test]
    fn focal_loss_examples() {
        let e1 = pv(&[1.0, 0.0]);
        assert_eq!(focal_loss(&e1, &e1, g(2.0)).unwrap(), 0.0);

        let half = pv(&[0.5, 0.5]);
        let ce = focal_loss(&half, &e1, g(0.0)).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);

        // 0.5^2 * ln 2
        let fl = focal_loss(&half, &e1, g(2.0)).unwrap();
        assert!((fl - 0.173_286_795_139_986_33).abs() < 1e-15);
    }

    #[test]
    fn focal_loss_singular_is_infinite() {
        let u = pv(&[1.0, 0.0]);
        let v = pv(&[0.0, 1.0]);
        assert_eq!(focal_loss(&u, &v, g(1.0)).unwrap(), f64::INFINITY);
        let safe = focal_loss_with(&u, &v, g(1.0), LogMode::Safe).unwrap();
        assert!((safe - (-SAFE_EPS.ln())).abs() < 1e-9);
    }

    #[test]
    fn focal_loss_dimension_mismatch() {
        let u = pv(&[0.5, 0.5]);
        let v = pv(&[0.2, 0.3, 0.5]);
        assert_eq!(
            focal_loss(&u, &v, g(1.0)),
            Err(Error::Dimension { expected: 2, got: 3 })
        );
    }

    #[test]
    fn cross_entropy_examples() {
        let e1 = pv(&[1.0, 0.0]);
        assert_eq!(cross_entropy(&e1, &e1).unwrap(), 0.0);
        let ce = cross_entropy(&pv(&[0.25, 0.75]), &pv(&[0.0, 1.0])).unwrap();
        assert!((ce - 0.287_682_072_451_780_9).abs() < 1e-15);
        let half = pv(&[0.5, 0.5]);
        assert!((cross_entropy(&half, &half).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_spec_focal_zero_is_cross_entropy() {
        let u = pv(&[0.3, 0.7]);
        let v = pv(&[0.6, 0.4]);
        assert_eq!(
            LossSpec::focal(Gamma::ZERO).eval(&u, &v).unwrap(),
            LossSpec::cross_entropy().eval(&u, &v).unwrap()
        );
        assert!(LossSpec::focal(Gamma::ZERO).is_cross_entropy());
    }

    #[test]
    fn varphi_endpoints_and_value() {
        for gamma in [0.01, 0.5, 1.0, 2.0, 7.0] {
            assert_eq!(varphi(0.0, g(gamma)).unwrap(), 1.0);
            assert_eq!(varphi(1.0, g(gamma)).unwrap(), 0.0);
        }
        // 0.25 + 0.5 ln 2
        let v = varphi(0.5, g(2.0)).unwrap();
        assert!((v - 0.596_573_590_279_972_6).abs() < 1e-15);
        assert!(varphi(1.5, g(1.0)).is_err());
        assert!(varphi(-0.1, g(1.0)).is_err());
    }

    #[test]
    fn h_examples() {
        assert_eq!(h_transform(0.0, g(3.0)).unwrap(), 0.0);
        assert_eq!(h_transform(0.37, Gamma::ZERO).unwrap(), 0.37);
        let h = h_transform(0.5, g(2.0)).unwrap();
        assert!((h - 0.5 / 0.596_573_590_279_972_6).abs() < 1e-15);
        assert!((h - 0.838_119).abs() < 1e-6);
        assert_eq!(h_transform(1.0, g(2.0)), Err(Error::Singularity));
        assert!(matches!(h_transform(1.2, g(2.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn psi_identity_cases() {
        let p = pv(&[0.6, 0.3, 0.1]);
        assert_eq!(psi_transform(&p, Gamma::ZERO), p);
        let u = ProbVector::uniform(4).unwrap();
        let out = psi_transform(&u, g(3.0));
        for x in out.values() {
            assert!((x - 0.25).abs() < 1e-15);
        }
        let e = ProbVector::one_hot(2, 3).unwrap();
        assert_eq!(psi_transform(&e, g(2.0)), e);
    }

    #[test]
    fn psi_matches_binary_closed_form() {
        let p = pv(&[0.8, 0.2]);
        let out = psi_transform(&p, g(2.0));
        let eta = recover_binary(0.8, g(2.0)).unwrap();
        assert!((out.get(0) - eta).abs() < 1e-12);
        assert!((out.get(1) - (1.0 - eta)).abs() < 1e-12);
        assert!(eta > 0.8 && eta < 1.0);
    }

    #[test]
    fn recover_binary_examples() {
        assert!((recover_binary(0.8, Gamma::ZERO).unwrap() - 0.8).abs() < 1e-15);
        for gamma in [0.3, 1.0, 4.0] {
            assert!((recover_binary(0.5, g(gamma)).unwrap() - 0.5).abs() < 1e-15);
        }
        assert!(recover_binary(0.0, g(1.0)).is_err());
        assert!(recover_binary(1.0, g(1.0)).is_err());
    }

    #[test]
    fn sk_membership() {
        assert!(in_sk(&ProbVector::one_hot(0, 3).unwrap(), 0.0));
        assert!(in_sk(&ProbVector::uniform(5).unwrap(), 1e-15));
        assert!(in_sk(&pv(&[0.5, 0.0, 0.5]), 0.0));
        assert!(!in_sk(&pv(&[0.7, 0.2, 0.1]), 1e-9));
    }
}
