//! Points on the probability simplex.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` accepted by [`ProbVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A K-class probability vector (K >= 2) with entries in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(values, SIMPLEX_TOL)
    }

    /// Validates against a caller-chosen tolerance on the sum; entries are stored verbatim.
    pub fn with_tolerance(values: Vec<f64>, tol: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidSimplex(format!(
                "need at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidSimplex(format!("entry {i} = {v} outside [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::InvalidSimplex(format!("entries sum to {sum}")));
        }
        Ok(Self(values))
    }

    /// Divides by the sum. Entries must be finite and nonnegative with a positive sum.
    pub fn renormalized(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidSimplex("negative or non-finite entry".into()));
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidSimplex("entries sum to zero".into()));
        }
        Self::new(values.into_iter().map(|v| (v / sum).min(1.0)).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    /// The vertex `e_class` of the K-simplex.
    pub fn one_hot(class: usize, k: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::Domain(format!("class {class} out of range for k = {k}")));
        }
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Self::new(v)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Wraps values already known to lie on the simplex.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        Self(values)
    }

    pub(crate) fn check_same_k(&self, other: &ProbVector) -> Result<()> {
        if self.k() != other.k() {
            return Err(Error::Dimension { expected: self.k(), got: other.k() });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Uniform draw from the simplex (flat Dirichlet) via normalized exponentials.
pub fn sample_simplex<R: Rng + ?Sized>(rng: &mut R, k: usize) -> ProbVector {
    loop {
        let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = e.iter().sum();
        if total > 0.0 {
            return ProbVector::from_raw(e.into_iter().map(|v| v / total).collect());
        }
    }
}

/// Random simplex point whose largest entry is exactly `max`, placed at a random
/// index; the remaining mass is spread as a flat Dirichlet. Returns `None` when no
/// tail below `max` is found within `attempts` draws (e.g. `max` barely above `1/k`).
pub fn sample_simplex_with_max<R: Rng + ?Sized>(rng: &mut R, k: usize, max: f64, attempts: usize) -> Option<ProbVector> {
    if k < 2 || !(max >= 1.0 / k as f64 && max < 1.0) {
        return None;
    }
    for _ in 0..attempts {
        let tail = sample_simplex(rng, k - 1);
        if tail.values().iter().all(|t| t * (1.0 - max) < max) {
            let top = rng.random_range(0..k);
            let mut v: Vec<f64> = tail.values().iter().map(|t| t * (1.0 - max)).collect();
            v.insert(top, max);
            return Some(ProbVector::from_raw(v));
        }
    }
    None
}
