//! Calibration and classification metrics over labelled prediction sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focal::LogMode;
use crate::simplex::{argmax, ProbVector, SIMPLEX_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Probabilities,
    Logits,
}

impl ScoreKind {
    fn name(self) -> &'static str {
        match self {
            ScoreKind::Probabilities => "probability",
            ScoreKind::Logits => "logit",
        }
    }
}

/// Per-sample score rows with 0-based integer labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    kind: ScoreKind,
    k: usize,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl PredictionSet {
    /// Rows are checked against `tol` on their sum and stored unchanged.
    pub fn new(kind: ScoreKind, k: usize, rows: Vec<Vec<f64>>, labels: Vec<usize>, tol: f64) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Dimension { expected: rows.len(), got: labels.len() });
        }
        if k < 2 {
            return Err(Error::Domain(format!("need at least 2 classes, got {k}")));
        }
        for (row, &label) in rows.iter().zip(&labels) {
            if row.len() != k {
                return Err(Error::Dimension { expected: k, got: row.len() });
            }
            if label >= k {
                return Err(Error::Domain(format!("label {label} out of range for k = {k}")));
            }
            match kind {
                ScoreKind::Probabilities => {
                    ProbVector::with_tolerance(row.clone(), tol)?;
                }
                ScoreKind::Logits => {
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Domain("non-finite logit".into()));
                    }
                }
            }
        }
        Ok(Self { kind, k, rows, labels })
    }

    /// Class count taken from the first row.
    pub fn from_probabilities(rows: Vec<ProbVector>, labels: Vec<usize>) -> Result<Self> {
        let k = rows.first().map_or(0, ProbVector::k);
        Self::new(
            ScoreKind::Probabilities,
            k,
            rows.into_iter().map(ProbVector::into_inner).collect(),
            labels,
            SIMPLEX_TOL,
        )
    }

    /// Class count taken from the first row.
    pub fn from_logits(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        Self::new(ScoreKind::Logits, k, rows, labels, 0.0)
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.rows.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    pub(crate) fn require(&self, kind: ScoreKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::ScoreKind { expected: kind.name(), found: self.kind.name() });
        }
        Ok(())
    }

    fn require_nonempty_probabilities(&self) -> Result<()> {
        self.require(ScoreKind::Probabilities)?;
        if self.is_empty() {
            return Err(Error::EmptyData);
        }
        Ok(())
    }

    /// Same labels, new probability rows. Used by row-wise transforms.
    pub(crate) fn with_probability_rows(&self, rows: Vec<Vec<f64>>) -> Self {
        Self { kind: ScoreKind::Probabilities, k: self.k, rows, labels: self.labels.clone() }
    }
}

/// Equal-width confidence bin. Confidence on an interior edge goes to the upper bin;
/// confidence 1 stays in the top bin.
pub fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let j = (confidence * n_bins as f64).floor();
    if j <= 0.0 {
        0
    } else {
        (j as usize).min(n_bins - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Fraction of correct predictions; 0 for an empty bin.
    pub accuracy: f64,
    /// Mean top confidence; 0 for an empty bin.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningReport {
    pub n_bins: usize,
    pub n: usize,
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
}

impl BinningReport {
    /// `(1/n) sum_j |B_j| |acc_j - conf_j|` from the stored bins.
    pub fn recompute_ece(&self) -> f64 {
        ece_from_bins(&self.bins, self.n)
    }
}

fn ece_from_bins(bins: &[ReliabilityBin], n: usize) -> f64 {
    let weighted: f64 = bins
        .iter()
        .map(|b| b.count as f64 * (b.accuracy - b.confidence).abs())
        .sum();
    weighted / n as f64
}

/// Bins samples by top-class confidence and computes the expected calibration error.
pub fn bin_reliability(preds: &PredictionSet, n_bins: usize) -> Result<BinningReport> {
    preds.require_nonempty_probabilities()?;
    if n_bins == 0 {
        return Err(Error::Domain("n_bins must be >= 1".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    for (row, label) in preds.iter() {
        let pred = argmax(row);
        let c = row[pred];
        let j = bin_index(c, n_bins);
        count[j] += 1;
        conf_sum[j] += c;
        if pred == label {
            correct[j] += 1;
        }
    }
    let bins: Vec<ReliabilityBin> = (0..n_bins)
        .map(|j| {
            let (accuracy, confidence) = if count[j] == 0 {
                (0.0, 0.0)
            } else {
                (correct[j] as f64 / count[j] as f64, conf_sum[j] / count[j] as f64)
            };
            ReliabilityBin {
                lower: j as f64 / n_bins as f64,
                upper: (j + 1) as f64 / n_bins as f64,
                count: count[j],
                accuracy,
                confidence,
            }
        })
        .collect();
    let ece = ece_from_bins(&bins, preds.len());
    Ok(BinningReport { n_bins, n: preds.len(), bins, ece })
}

pub fn ece(preds: &PredictionSet, n_bins: usize) -> Result<f64> {
    bin_reliability(preds, n_bins).map(|r| r.ece)
}

/// Classwise ECE: each class is binned on its own predicted probability and the
/// class frequency in the bin is compared with the mean predicted probability.
pub fn cw_ece(preds: &PredictionSet, n_bins: usize) -> Result<f64> {
    preds.require_nonempty_probabilities()?;
    if n_bins == 0 {
        return Err(Error::Domain("n_bins must be >= 1".into()));
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    for class in 0..preds.k() {
        let mut count = vec![0usize; n_bins];
        let mut hits = vec![0usize; n_bins];
        let mut conf_sum = vec![0.0; n_bins];
        for (row, label) in preds.iter() {
            let c = row[class];
            let j = bin_index(c, n_bins);
            count[j] += 1;
            conf_sum[j] += c;
            if label == class {
                hits[j] += 1;
            }
        }
        for j in 0..n_bins {
            if count[j] == 0 {
                continue;
            }
            let m = count[j] as f64;
            total += m / n * (hits[j] as f64 / m - conf_sum[j] / m).abs();
        }
    }
    Ok(total / preds.k() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// `-sum_i log q_{y_i}(x_i)` in strict mode.
pub fn nll(preds: &PredictionSet) -> Result<f64> {
    nll_with(preds, Reduction::Sum, LogMode::Strict)
}

pub fn nll_with(preds: &PredictionSet, reduction: Reduction, mode: LogMode) -> Result<f64> {
    preds.require_nonempty_probabilities()?;
    let sum: f64 = preds.iter().map(|(row, y)| -mode.ln(row[y])).sum();
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / preds.len() as f64,
    })
}

/// `sum_i p_i log(p_i / q_i)` with `0 log 0 = 0`; `+inf` when `q` misses mass of `p`.
pub fn kld(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    p.check_same_k(q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.values().iter().zip(q.values()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can leave a tiny negative value for p ~ q.
    Ok(total.max(0.0))
}

/// Fraction of rows whose argmax (lowest index on ties) differs from the label.
/// Works on probabilities and logits alike.
pub fn error_rate(preds: &PredictionSet) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyData);
    }
    let wrong = preds.iter().filter(|(row, y)| argmax(row) != *y).count();
    Ok(wrong as f64 / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[&[f64]], labels: &[usize]) -> PredictionSet {
        PredictionSet::new(
            ScoreKind::Probabilities,
            rows[0].len(),
            rows.iter().map(|r| r.to_vec()).collect(),
            labels.to_vec(),
            1e-9,
        )
        .unwrap()
    }

    #[test]
    fn construction_checks() {
        use ScoreKind::*;
        assert!(PredictionSet::new(Probabilities, 2, vec![vec![0.5, 0.4]], vec![0], 1e-9).is_err());
        assert!(PredictionSet::new(Probabilities, 2, vec![vec![0.5, 0.5]], vec![2], 1e-9).is_err());
        assert!(PredictionSet::new(Logits, 2, vec![vec![3.0, -1.0]], vec![], 1e-9).is_err());
        assert!(PredictionSet::new(Logits, 2, vec![vec![3.0, -1.0], vec![1.0]], vec![0, 0], 1e-9).is_err());
        assert!(PredictionSet::new(Logits, 3, vec![vec![3.0, -1.0]], vec![0], 1e-9).is_err());
        assert!(PredictionSet::new(Logits, 3, vec![], vec![], 1e-9).unwrap().is_empty());
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.5, 10), 5);
        assert_eq!(bin_index(0.49, 10), 4);
        assert_eq!(bin_index(0.75, 1), 0);
    }

    #[test]
    fn ece_examples() {
        let perfect = probs(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 1]);
        assert_eq!(bin_reliability(&perfect, 10).unwrap().ece, 0.0);

        let one = probs(&[&[0.75, 0.25]], &[0]);
        assert!((bin_reliability(&one, 10).unwrap().ece - 0.25).abs() < 1e-12);

        let two = probs(&[&[0.6, 0.4], &[0.8, 0.2]], &[0, 1]);
        let r = bin_reliability(&two, 1).unwrap();
        assert!((r.ece - 0.2).abs() < 1e-12);
        assert_eq!(r.bins[0].count, 2);
    }

    #[test]
    fn report_recomputes_exactly() {
        let p = probs(&[&[0.6, 0.4], &[0.3, 0.7], &[0.95, 0.05], &[0.5, 0.5]], &[0, 0, 0, 1]);
        for n_bins in [1, 10, 15] {
            let r = bin_reliability(&p, n_bins).unwrap();
            assert_eq!(r.ece.to_bits(), r.recompute_ece().to_bits());
            assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 4);
            assert!(r.bins.iter().all(|b| b.accuracy.is_finite() && b.confidence.is_finite()));
        }
    }

    #[test]
    fn empty_and_kind_errors() {
        let empty = PredictionSet::new(ScoreKind::Probabilities, 2, vec![], vec![], 1e-9).unwrap();
        assert_eq!(bin_reliability(&empty, 10), Err(Error::EmptyData));
        assert_eq!(cw_ece(&empty, 10), Err(Error::EmptyData));
        assert_eq!(nll(&empty), Err(Error::EmptyData));
        assert_eq!(error_rate(&empty), Err(Error::EmptyData));
        let logits = PredictionSet::from_logits(vec![vec![1.0, 2.0]], vec![0]).unwrap();
        assert!(matches!(bin_reliability(&logits, 10), Err(Error::ScoreKind { .. })));
        assert_eq!(error_rate(&logits).unwrap(), 1.0);
    }

    #[test]
    fn cw_ece_examples() {
        let one = probs(&[&[0.9, 0.1]], &[0]);
        assert!((cw_ece(&one, 1).unwrap() - 0.1).abs() < 1e-12);
        // constant predictor equal to the class frequencies
        let calibrated = probs(
            &[&[0.25, 0.75], &[0.25, 0.75], &[0.25, 0.75], &[0.25, 0.75]],
            &[0, 1, 1, 1],
        );
        assert!(cw_ece(&calibrated, 10).unwrap().abs() < 1e-15);
    }

    #[test]
    fn nll_examples() {
        let certain = probs(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 1]);
        assert_eq!(nll(&certain).unwrap(), 0.0);
        let one = probs(&[&[0.5, 0.5]], &[1]);
        assert!((nll(&one).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let two = probs(&[&[0.5, 0.5], &[0.5, 0.5]], &[1, 0]);
        assert!((nll(&two).unwrap() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let mean = nll_with(&two, Reduction::Mean, LogMode::Strict).unwrap();
        assert!((mean - std::f64::consts::LN_2).abs() < 1e-12);

        let wrong = probs(&[&[1.0, 0.0]], &[1]);
        assert_eq!(nll(&wrong).unwrap(), f64::INFINITY);
        let safe = nll_with(&wrong, Reduction::Sum, LogMode::Safe).unwrap();
        assert!((safe - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn kld_examples() {
        let p = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(kld(&p, &p).unwrap(), 0.0);
        let e = ProbVector::new(vec![1.0, 0.0]).unwrap();
        let h = ProbVector::new(vec![0.5, 0.5]).unwrap();
        assert!((kld(&e, &h).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(kld(&h, &e).unwrap(), f64::INFINITY);
        assert!(kld(&p, &h).is_err());
    }

    #[test]
    fn error_rate_examples() {
        let right = probs(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 1]);
        assert_eq!(error_rate(&right).unwrap(), 0.0);
        let wrong = probs(&[&[1.0, 0.0], &[0.0, 1.0]], &[1, 0]);
        assert_eq!(error_rate(&wrong).unwrap(), 1.0);
        let half = probs(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 0]);
        assert_eq!(error_rate(&half).unwrap(), 0.5);
        // ties resolve to class 0
        let tie = probs(&[&[0.5, 0.5]], &[0]);
        assert_eq!(error_rate(&tie).unwrap(), 0.0);
    }
}
