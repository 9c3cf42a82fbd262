//! Synthetic-data experiment: sample a Gaussian mixture with a known posterior,
//! train small networks with cross-entropy and focal loss, and compare raw,
//! temperature-scaled and psi-corrected scores against the true posterior.

pub mod distribution;
pub mod mlp;
pub mod panel;

use serde::{Deserialize, Serialize};

use crate::calibrate::{fit_temperature, TemperatureFit, TsObjective};
use crate::error::Result;
use crate::focal::{Gamma, LossSpec};
use crate::metrics::PredictionSet;

pub use distribution::{Component, Sample, SyntheticDistribution};
pub use mlp::{grad_check, train_mlp, Activation, MlpModel, TrainConfig};
pub use panel::{evaluate_panel, linspace, PanelReport, PosteriorOracle, Predictor, PsiCorrected, TemperatureScaled};

/// Optimizer and architecture settings shared by every model in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        let c = TrainConfig::new(LossSpec::cross_entropy(), 0);
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            momentum: c.momentum,
            weight_decay: c.weight_decay,
            hidden: c.hidden,
        }
    }
}

impl TrainParams {
    pub fn config(&self, loss: LossSpec, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            hidden: self.hidden,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub mixture: SyntheticDistribution,
    pub train_n: usize,
    /// Held-out samples used to fit temperatures.
    pub valid_n: usize,
    pub test_n: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_n: usize,
    /// A cross-entropy model is always trained; one focal model per gamma here.
    pub focal_gammas: Vec<f64>,
    pub train: TrainParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mixture: SyntheticDistribution::default_mixture(),
            train_n: 10_000,
            valid_n: 5_000,
            test_n: 100_000,
            grid_lo: -4.0,
            grid_hi: 4.0,
            grid_n: 161,
            focal_gammas: vec![1.0, 5.0],
            train: TrainParams::default(),
        }
    }
}

impl SynthConfig {
    pub fn grid(&self) -> Vec<f64> {
        linspace(self.grid_lo, self.grid_hi, self.grid_n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub name: String,
    pub loss: LossSpec,
    pub model: MlpModel,
    pub raw: PanelReport,
    /// Temperature scaling fitted with the NLL objective (focal models only).
    pub ts: Option<(TemperatureFit, PanelReport)>,
    /// Scores after the recovery transform (focal models only).
    pub psi: Option<PanelReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub seed: u64,
    pub train: Vec<Sample>,
    pub runs: Vec<ModelRun>,
}

/// Seeds: training data `seed`, validation `seed + 1`, test `seed + 2`, weights `seed + 3`.
pub fn run_experiment(config: &SynthConfig, seed: u64) -> Result<Experiment> {
    let dist = &config.mixture;
    let k = dist.k();
    let train = dist.sample(config.train_n, seed);
    let valid = dist.sample(config.valid_n, seed.wrapping_add(1));
    let test_seed = seed.wrapping_add(2);
    let model_seed = seed.wrapping_add(3);
    let grid = config.grid();

    let mut losses = vec![("ce".to_string(), LossSpec::cross_entropy())];
    for &g in &config.focal_gammas {
        losses.push((format!("focal_{g}"), LossSpec::focal(Gamma::new(g)?)));
    }

    let mut runs = Vec::with_capacity(losses.len());
    for (name, loss) in losses {
        let model = train_mlp(&train, k, &config.train.config(loss, model_seed))?;
        let raw = evaluate_panel(&model, dist, &grid, config.test_n, None, test_seed);
        let (ts, psi) = if loss.is_cross_entropy() {
            (None, None)
        } else {
            let logits = PredictionSet::from_logits(
                valid.iter().map(|s| model.logits(s.x)).collect(),
                valid.iter().map(|s| s.y).collect(),
            )?;
            let fit = fit_temperature(&logits, TsObjective::Nll)?;
            let scaled = TemperatureScaled { model: &model, fit };
            let ts_report = evaluate_panel(&scaled, dist, &grid, config.test_n, None, test_seed);
            let psi_report =
                evaluate_panel(&model, dist, &grid, config.test_n, Some(loss.effective_gamma()), test_seed);
            (Some((fit, ts_report)), Some(psi_report))
        };
        runs.push(ModelRun { name, loss, model, raw, ts, psi });
    }
    Ok(Experiment { seed, train, runs })
}
