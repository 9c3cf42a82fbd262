//! Post-hoc calibration operators: temperature scaling, the posterior-recovery
//! transform over whole datasets, and label smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focal::{psi_transform, Gamma, SAFE_EPS};
use crate::metrics::{PredictionSet, ScoreKind};
use crate::optim::golden_section_min;
use crate::simplex::ProbVector;

pub const T_MIN: f64 = 0.01;
pub const T_MAX: f64 = 100.0;
/// Golden-section tolerance on the temperature.
pub const T_TOL: f64 = 1e-6;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(logits: &[f64], t: f64, out: &mut Vec<f64>) {
    out.clear();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| ((z - max) / t).exp()).sum::<f64>().ln();
    out.extend(logits.iter().map(|z| (z - max) / t - lse));
}

/// `softmax(logits / t)`.
pub fn apply_temperature(logits: &[f64], t: f64) -> Result<ProbVector> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("temperature must be positive, got {t}")));
    }
    if logits.len() < 2 {
        return Err(Error::Domain("need at least 2 logits".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
    Ok(ProbVector::from_raw(softmax(&scaled)))
}

/// Logits equal to `log p` up to an additive constant; zeros are clamped to `SAFE_EPS`.
pub fn logits_from_probabilities(preds: &PredictionSet) -> Result<PredictionSet> {
    preds.require(ScoreKind::Probabilities)?;
    let rows = preds
        .rows()
        .iter()
        .map(|r| r.iter().map(|p| p.max(SAFE_EPS).ln()).collect())
        .collect();
    PredictionSet::new(ScoreKind::Logits, preds.k(), rows, preds.labels().to_vec(), 0.0)
}

/// Softmax with temperature applied to every row of a logit set.
pub fn apply_temperature_dataset(preds: &PredictionSet, t: f64) -> Result<PredictionSet> {
    preds.require(ScoreKind::Logits)?;
    let rows = preds
        .rows()
        .iter()
        .map(|r| apply_temperature(r, t).map(ProbVector::into_inner))
        .collect::<Result<Vec<_>>>()?;
    Ok(preds.with_probability_rows(rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsObjective {
    Nll,
    Focal(Gamma),
}

impl TsObjective {
    /// Mean objective over a logit set at temperature `t`.
    pub fn evaluate(&self, logits: &PredictionSet, t: f64) -> f64 {
        let mut buf = Vec::with_capacity(logits.k());
        let total: f64 = logits
            .iter()
            .map(|(row, y)| {
                log_softmax(row, t, &mut buf);
                let lp = buf[y];
                match self {
                    TsObjective::Nll => -lp,
                    TsObjective::Focal(g) => -(1.0 - lp.exp()).max(0.0).powf(g.value()) * lp,
                }
            })
            .sum();
        total / logits.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub objective: TsObjective,
    /// Objective at the fitted temperature.
    pub achieved: f64,
    /// Objective at `t = 1`.
    pub unscaled: f64,
}

/// Golden-section search over `log t` on `[T_MIN, T_MAX]`; `t = 1` is kept if it scores better.
pub fn fit_temperature(logits: &PredictionSet, objective: TsObjective) -> Result<TemperatureFit> {
    logits.require(ScoreKind::Logits)?;
    if logits.is_empty() {
        return Err(Error::EmptyData);
    }
    let unscaled = objective.evaluate(logits, 1.0);
    // A log-space tolerance of T_TOL / T_MAX keeps the temperature error below T_TOL everywhere.
    let best = golden_section_min(
        |s| objective.evaluate(logits, s.exp()),
        T_MIN.ln(),
        T_MAX.ln(),
        T_TOL / T_MAX,
        500,
    );
    let (temperature, achieved) = if best.value <= unscaled {
        (best.x.exp(), best.value)
    } else {
        (1.0, unscaled)
    };
    Ok(TemperatureFit { temperature, objective, achieved, unscaled })
}

/// `(1 - eps) e_class + eps / k`.
pub fn smooth_labels(class: usize, k: usize, eps: f64) -> Result<ProbVector> {
    if class >= k {
        return Err(Error::Domain(format!("class {class} out of range for k = {k}")));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!("smoothing must lie in [0, 1), got {eps}")));
    }
    let off = eps / k as f64;
    let mut v = vec![off; k];
    v[class] = 1.0 - eps + off;
    ProbVector::new(v)
}

/// Applies `psi` row by row; labels are untouched.
pub fn apply_psi_dataset(preds: &PredictionSet, gamma: Gamma) -> Result<PredictionSet> {
    preds.require(ScoreKind::Probabilities)?;
    if gamma.is_zero() {
        return Ok(preds.clone());
    }
    let rows = preds
        .rows()
        .iter()
        .map(|r| {
            let p = ProbVector::with_tolerance(r.clone(), f64::INFINITY)?;
            Ok(psi_transform(&p, gamma).into_inner())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(preds.with_probability_rows(rows))
}
