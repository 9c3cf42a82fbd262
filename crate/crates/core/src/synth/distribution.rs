use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::ProbVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub prior: f64,
    pub mean: f64,
    pub std: f64,
}

/// One-dimensional K-class Gaussian mixture with a closed-form class posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Component>", into = "Vec<Component>")]
pub struct SyntheticDistribution {
    components: Vec<Component>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: f64,
    /// 0-based class.
    pub y: usize,
}

impl SyntheticDistribution {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::Config("mixture needs at least 2 components".into()));
        }
        for c in &components {
            if !(c.prior > 0.0 && c.prior < 1.0) {
                return Err(Error::Config(format!("prior {} outside (0, 1)", c.prior)));
            }
            if !(c.std > 0.0 && c.std.is_finite()) || !c.mean.is_finite() {
                return Err(Error::Config(format!("bad component {c:?}")));
            }
        }
        let total: f64 = components.iter().map(|c| c.prior).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("priors sum to {total}")));
        }
        Ok(Self { components })
    }

    /// Three overlapping unit-variance classes at -2, 0, 2 with priors 0.35 / 0.35 / 0.30.
    pub fn default_mixture() -> Self {
        let c = |prior, mean| Component { prior, mean, std: 1.0 };
        Self { components: vec![c(0.35, -2.0), c(0.35, 0.0), c(0.30, 2.0)] }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    fn log_joint(&self, x: f64) -> Vec<f64> {
        const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
        self.components
            .iter()
            .map(|c| {
                let z = (x - c.mean) / c.std;
                c.prior.ln() - 0.5 * z * z - c.std.ln() - LN_SQRT_2PI
            })
            .collect()
    }

    /// `p(x, y)` for every class.
    pub fn joint(&self, x: f64) -> Vec<f64> {
        self.log_joint(x).into_iter().map(f64::exp).collect()
    }

    /// Marginal density `p(x)`.
    pub fn density(&self, x: f64) -> f64 {
        self.joint(x).iter().sum()
    }

    /// `p(y | x)` via Bayes' rule, computed in log space.
    pub fn posterior(&self, x: f64) -> ProbVector {
        let lj = self.log_joint(x);
        let max = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lj.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        ProbVector::from_raw(w.into_iter().map(|v| v / total).collect())
    }

    /// Draws `y` from the priors, then `x ~ N(mean_y, std_y)`. Deterministic per seed.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = WeightedIndex::new(self.components.iter().map(|c| c.prior))
            .expect("priors validated at construction");
        let normals: Vec<Normal<f64>> = self
            .components
            .iter()
            .map(|c| Normal::new(c.mean, c.std).expect("std validated at construction"))
            .collect();
        (0..n)
            .map(|_| {
                let y = classes.sample(&mut rng);
                Sample { x: normals[y].sample(&mut rng), y }
            })
            .collect()
    }
}

impl Default for SyntheticDistribution {
    fn default() -> Self {
        Self::default_mixture()
    }
}

impl TryFrom<Vec<Component>> for SyntheticDistribution {
    type Error = Error;

    fn try_from(c: Vec<Component>) -> Result<Self> {
        Self::new(c)
    }
}

impl From<SyntheticDistribution> for Vec<Component> {
    fn from(d: SyntheticDistribution) -> Self {
        d.components
    }
}
