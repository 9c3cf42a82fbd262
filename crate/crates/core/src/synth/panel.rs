//! Evaluation of a predictor against the known posterior of a synthetic distribution.

use serde::{Deserialize, Serialize};

use crate::calibrate::{apply_temperature, TemperatureFit};
use crate::focal::{psi_transform, Gamma};
use crate::metrics::{ece, error_rate, kld, PredictionSet};
use crate::simplex::ProbVector;
use crate::synth::distribution::SyntheticDistribution;
use crate::synth::mlp::MlpModel;

pub const PANEL_BINS: usize = 10;

/// Anything that maps an input to class probabilities.
pub trait Predictor {
    fn predict(&self, x: f64) -> ProbVector;
}

impl Predictor for MlpModel {
    fn predict(&self, x: f64) -> ProbVector {
        MlpModel::predict(self, x)
    }
}

/// Predicts the true posterior; the ideal estimator.
pub struct PosteriorOracle<'a>(pub &'a SyntheticDistribution);

impl Predictor for PosteriorOracle<'_> {
    fn predict(&self, x: f64) -> ProbVector {
        self.0.posterior(x)
    }
}

/// A network whose logits are divided by a fitted temperature.
pub struct TemperatureScaled<'a> {
    pub model: &'a MlpModel,
    pub fit: TemperatureFit,
}

impl Predictor for TemperatureScaled<'_> {
    fn predict(&self, x: f64) -> ProbVector {
        apply_temperature(&self.model.logits(x), self.fit.temperature)
            .expect("fitted temperature is positive")
    }
}

/// Applies the posterior-recovery transform to another predictor's output.
pub struct PsiCorrected<P> {
    pub inner: P,
    pub gamma: Gamma,
}

impl<P: Predictor> Predictor for PsiCorrected<P> {
    fn predict(&self, x: f64) -> ProbVector {
        psi_transform(&self.inner.predict(x), self.gamma)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, x: f64) -> ProbVector {
        (**self).predict(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelReport {
    /// Classification error on the test sample.
    pub err: f64,
    /// Mean `KL(eta(x) || q(x))` over the grid.
    pub kld: f64,
    /// 10-bin ECE on the test sample.
    pub ece: f64,
}

/// Evenly spaced grid on `[lo, hi]` with `n >= 2` points.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// ERR and ECE on `test_n` fresh samples drawn with `seed`, KLD averaged over `grid`.
/// With `gamma_for_psi` set, predictions are passed through the recovery transform first.
pub fn evaluate_panel<P: Predictor>(
    model: &P,
    dist: &SyntheticDistribution,
    grid: &[f64],
    test_n: usize,
    gamma_for_psi: Option<Gamma>,
    seed: u64,
) -> PanelReport {
    let predict = |x: f64| {
        let q = model.predict(x);
        match gamma_for_psi {
            Some(g) => psi_transform(&q, g),
            None => q,
        }
    };
    let kld_sum: f64 = grid
        .iter()
        .map(|&x| kld(&dist.posterior(x), &predict(x)).expect("same class count"))
        .sum();
    let test = dist.sample(test_n, seed);
    let (rows, labels): (Vec<ProbVector>, Vec<usize>) = test.iter().map(|s| (predict(s.x), s.y)).unzip();
    let preds = PredictionSet::from_probabilities(rows, labels).expect("model outputs are simplex rows");
    PanelReport {
        err: error_rate(&preds).expect("nonempty test set"),
        kld: kld_sum / grid.len() as f64,
        ece: ece(&preds, PANEL_BINS).expect("nonempty test set"),
    }
}

/// `(x, eta(x), q(x))` rows for plotting score curves against the posterior.
pub fn score_curves<P: Predictor>(model: &P, dist: &SyntheticDistribution, grid: &[f64]) -> Vec<(f64, ProbVector, ProbVector)> {
    grid.iter().map(|&x| (x, dist.posterior(x), model.predict(x))).collect()
}
