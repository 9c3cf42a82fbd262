//! Property suite over the focal-loss machinery: each check sweeps random
//! instances, records the worst residual and compares it with a fixed bound.

use std::fmt;

use focal_calib::focal::{h_transform, in_sk, recover_binary, varphi};
use focal_calib::minimizer::{minimize_risk_inverse, minimize_risk_pg, pointwise_risk, DEFAULT_PG_ITERS, DEFAULT_TOL};
use focal_calib::simplex::{sample_simplex, sample_simplex_with_max};
use focal_calib::thresholds::{confidence_direction, ThresholdPair};
use focal_calib::{argmax, psi_transform, ConfidenceDirection, ConfidenceRegion, Gamma, ProbVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub const ROUND_TRIP_TOL: f64 = 1e-7;
pub const SOLVER_AGREEMENT_TOL: f64 = 1e-5;
pub const FIXED_POINT_TOL: f64 = 1e-9;
pub const BINARY_TOL: f64 = 1e-10;
pub const THRESHOLD_TOL: f64 = 1e-10;
pub const PHI_UC_TOL: f64 = 1e-9;
pub const GRID_POINTS: usize = 100_000;

/// Signature of the transform under test; swapped out for negative controls.
pub type PsiFn = dyn Fn(&ProbVector, Gamma) -> ProbVector + Sync;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyConfig {
    pub gammas: Vec<f64>,
    pub ks: Vec<usize>,
    pub n_random: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { gammas: vec![0.5, 1.0, 2.0, 3.0, 5.0], ks: (2..=10).collect(), n_random: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub samples: usize,
    pub worst: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<4} {:<32} samples={:<8} worst={:<12.3e} bound={:.1e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.samples,
                c.worst,
                c.bound
            )?;
        }
        write!(f, "{}", if self.passed() { "all checks passed" } else { "verification FAILED" })
    }
}

/// Running maximum with a sample count.
#[derive(Clone, Copy)]
struct Worst {
    samples: usize,
    value: f64,
}

impl Default for Worst {
    fn default() -> Self {
        Self { samples: 0, value: f64::NEG_INFINITY }
    }
}

impl Worst {
    fn add(&mut self, v: f64) {
        self.samples += 1;
        // NaN counts as a failure
        self.value = if v.is_nan() { f64::INFINITY } else { self.value.max(v) };
    }

    fn merge(mut self, other: Worst) -> Worst {
        self.samples += other.samples;
        self.value = self.value.max(other.value);
        self
    }

    /// Passes when the worst value is within `bound`.
    fn within(self, name: &'static str, bound: f64) -> CheckResult {
        let worst = self.reported();
        CheckResult { name, samples: self.samples, worst, bound, passed: self.samples == 0 || worst <= bound }
    }

    fn reported(self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.value
        }
    }

    /// Passes when the worst value is strictly below `bound`.
    fn below(self, name: &'static str, bound: f64) -> CheckResult {
        let worst = self.reported();
        CheckResult { name, samples: self.samples, worst, bound, passed: self.samples == 0 || worst < bound }
    }
}

fn gamma(g: f64) -> Gamma {
    Gamma::new(g).expect("sweep gammas are validated")
}

fn rng_for(seed: u64, stream: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(i as u128 * 1024);
    rng
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run_verify(config: &VerifyConfig) -> VerifyReport {
    run_verify_with(config, &psi_transform)
}

pub fn run_verify_with(config: &VerifyConfig, psi: &PsiFn) -> VerifyReport {
    let gammas: Vec<f64> = config.gammas.iter().copied().filter(|g| g.is_finite() && *g >= 0.0).collect();
    let positive: Vec<f64> = gammas.iter().copied().filter(|g| *g > 0.0).collect();
    let ks: Vec<usize> = config.ks.iter().copied().filter(|k| *k >= 2).collect();
    let ks = if ks.is_empty() { vec![2] } else { ks };
    let mut checks = Vec::new();

    // characteristic function and score map
    let mut endpoints = Worst::default();
    let mut peaks = Worst::default();
    let mut monotone = Worst::default();
    let mut thresholds = Worst::default();
    for &g in &positive {
        let gm = gamma(g);
        endpoints.add((varphi(0.0, gm).unwrap() - 1.0).abs().max(varphi(1.0, gm).unwrap().abs()));
        peaks.add((sign_changes(g) as f64 - 1.0).abs());
        monotone.add(h_violations(g) as f64);
        thresholds.add(match ThresholdPair::compute(gm, THRESHOLD_TOL) {
            Ok(t) if 0.0 < t.tau_oc && t.tau_oc < t.tau_uc && t.tau_uc < 0.5 => {
                (varphi(t.tau_uc, gm).unwrap() - 1.0).abs()
            }
            _ => f64::INFINITY,
        });
    }
    checks.push(endpoints.within("phi endpoints", 0.0));
    checks.push(peaks.within("phi single peak", 0.0));
    checks.push(monotone.within("h strictly increasing", 0.0));
    checks.push(thresholds.within("threshold ordering", PHI_UC_TOL));

    // risk minimizer sweep
    let sweep: Vec<[Worst; 5]> = (0..config.n_random)
        .into_par_iter()
        .map(|i| minimizer_instance(config.seed, i, &positive, &ks, psi))
        .collect();
    let merged = sweep.into_iter().fold([Worst::default(); 5], |acc, w| {
        std::array::from_fn(|j| acc[j].merge(w[j]))
    });
    checks.push(merged[0].below("posterior round trip", ROUND_TRIP_TOL));
    checks.push(merged[1].below("solver agreement", SOLVER_AGREEMENT_TOL));
    checks.push(merged[2].within("order preservation", 0.0));
    checks.push(merged[3].within("minimizer underconfidence", 0.0));
    checks.push(merged[4].within("minimality spot check", 0.0));

    // transform properties
    let transform: Vec<[Worst; 5]> = (0..config.n_random * 10)
        .into_par_iter()
        .map(|i| transform_instance(config.seed, i, &positive, &ks, psi))
        .collect();
    let merged = transform.into_iter().fold([Worst::default(); 5], |acc, w| {
        std::array::from_fn(|j| acc[j].merge(w[j]))
    });
    checks.push(merged[0].within("fixed points", FIXED_POINT_TOL));
    checks.push(merged[1].within("argmax preserved", 0.0));
    checks.push(merged[2].within("top-class underconfidence", 0.0));
    checks.push(merged[3].within("binary closed form", BINARY_TOL));
    checks.push(merged[4].within("region consistency", 0.0));

    checks.push(strict_properness(config.seed, &ks));
    checks.push(small_gamma_overconfidence(psi));

    VerifyReport { checks }
}

/// Sign changes of the forward difference of phi on a uniform grid of `(0, 1)`.
fn sign_changes(g: f64) -> usize {
    let gm = gamma(g);
    let mut last = 0.0f64;
    let mut prev = varphi(0.0, gm).unwrap();
    let mut changes = 0;
    for i in 1..=GRID_POINTS {
        let v = i as f64 / GRID_POINTS as f64;
        let cur = varphi(v, gm).unwrap();
        let d = (cur - prev).signum();
        if cur != prev {
            if last != 0.0 && d != last {
                changes += 1;
            }
            last = d;
        }
        prev = cur;
    }
    changes
}

fn h_violations(g: f64) -> usize {
    let gm = gamma(g);
    let delta = 1e-4;
    (1..GRID_POINTS)
        .filter(|&i| {
            let v = i as f64 / GRID_POINTS as f64 * (1.0 - delta);
            let next = (i + 1) as f64 / GRID_POINTS as f64 * (1.0 - delta);
            let h = h_transform(v, gm).unwrap();
            !(h_transform(next, gm).unwrap() > h && h_transform(v + delta, gm).unwrap() > h)
        })
        .count()
}

fn minimizer_instance(seed: u64, i: usize, gammas: &[f64], ks: &[usize], psi: &PsiFn) -> [Worst; 5] {
    let mut out = [Worst::default(); 5];
    if gammas.is_empty() {
        return out;
    }
    let mut rng = rng_for(seed, 1, i);
    let k = ks[rng.random_range(0..ks.len())];
    let g = gamma(gammas[rng.random_range(0..gammas.len())]);
    let eta = sample_simplex(&mut rng, k);
    let Ok(inv) = minimize_risk_inverse(&eta, g, DEFAULT_TOL) else {
        out.iter_mut().for_each(|w| w.add(f64::INFINITY));
        return out;
    };
    let q = &inv.q_star;
    out[0].add(linf(psi(q, g).values(), eta.values()));
    out[1].add(match minimize_risk_pg(&eta, g, 1e-10, DEFAULT_PG_ITERS) {
        Ok(pg) => linf(pg.q_star.values(), q.values()),
        Err(_) => f64::INFINITY,
    });
    let mut disorder = 0.0;
    for a in 0..k {
        for b in 0..k {
            if q.get(a) < q.get(b) && eta.get(a) >= eta.get(b) {
                disorder += 1.0;
            }
        }
    }
    if q.argmax() != eta.argmax() {
        disorder += 1.0;
    }
    out[2].add(disorder);
    let top = q.max();
    if top > 0.5 && top < 1.0 && !in_sk(q, FIXED_POINT_TOL) {
        out[3].add(if top < eta.max() { 0.0 } else { 1.0 });
    }
    let beaten = (0..100)
        .filter(|_| {
            let other = sample_simplex(&mut rng, k);
            pointwise_risk(&other, &eta, g).unwrap() < inv.risk
        })
        .count();
    out[4].add(beaten as f64);
    out
}

fn random_sk<R: Rng>(rng: &mut R, k: usize) -> ProbVector {
    let support = rng.random_range(1..=k);
    let mut idx: Vec<usize> = (0..k).collect();
    for j in 0..support {
        let swap = rng.random_range(j..k);
        idx.swap(j, swap);
    }
    let mut v = vec![0.0; k];
    for &j in &idx[..support] {
        v[j] = 1.0 / support as f64;
    }
    ProbVector::renormalized(v).expect("nonempty support")
}

fn transform_instance(seed: u64, i: usize, gammas: &[f64], ks: &[usize], psi: &PsiFn) -> [Worst; 5] {
    let mut out = [Worst::default(); 5];
    if gammas.is_empty() {
        return out;
    }
    let mut rng = rng_for(seed, 2, i);
    let k = ks[rng.random_range(0..ks.len())];
    let gv = gammas[rng.random_range(0..gammas.len())];
    let g = gamma(gv);

    let sk = random_sk(&mut rng, k);
    out[0].add(linf(psi(&sk, g).values(), sk.values()));

    let p = sample_simplex(&mut rng, k);
    out[1].add(if argmax(psi(&p, g).values()) == p.argmax() { 0.0 } else { 1.0 });

    let m = rng.random_range(0.5..1.0);
    if let Some(p) = sample_simplex_with_max(&mut rng, k, m, 1000) {
        if m > 0.5 && !in_sk(&p, FIXED_POINT_TOL) {
            out[2].add(if psi(&p, g).max() > p.max() { 0.0 } else { 1.0 });
        }
    }

    let q: f64 = rng.random_range(1e-6..1.0 - 1e-6);
    let pair = ProbVector::new(vec![q, 1.0 - q]).unwrap();
    let closed = recover_binary(q, g).unwrap();
    let mut err = (closed - psi(&pair, g).get(0)).abs();
    if q > 0.5 && closed <= q {
        err = f64::INFINITY;
    }
    out[3].add(err);

    if let Ok(pair) = ThresholdPair::cached(g) {
        let lo = (1.0 / k as f64).max(pair.tau_uc);
        if lo < 1.0 {
            let m = rng.random_range(lo..1.0);
            if let Some(p) = sample_simplex_with_max(&mut rng, k, m, 1000) {
                if !in_sk(&p, FIXED_POINT_TOL) && pair.region(m) == ConfidenceRegion::Underconfident {
                    out[4].add(if confidence_direction(&p, g) == ConfidenceDirection::Under { 0.0 } else { 1.0 });
                }
            }
        }
        if 1.0 / (k as f64) < pair.tau_oc {
            let m = rng.random_range(1.0 / k as f64..=pair.tau_oc);
            if let Some(p) = sample_simplex_with_max(&mut rng, k, m, 1000) {
                if !in_sk(&p, FIXED_POINT_TOL) {
                    out[4].add(if confidence_direction(&p, g) == ConfidenceDirection::Over { 0.0 } else { 1.0 });
                }
            }
        }
    }
    out
}

/// At gamma = 0 both solvers must return the posterior itself.
fn strict_properness(seed: u64, ks: &[usize]) -> CheckResult {
    let mut worst = Worst::default();
    for i in 0..50 {
        let mut rng = rng_for(seed, 3, i);
        let k = ks[rng.random_range(0..ks.len())];
        let eta = sample_simplex(&mut rng, k);
        let inv = minimize_risk_inverse(&eta, Gamma::ZERO, DEFAULT_TOL).map(|r| linf(r.q_star.values(), eta.values()));
        let pg = minimize_risk_pg(&eta, Gamma::ZERO, 1e-10, DEFAULT_PG_ITERS).map(|r| linf(r.q_star.values(), eta.values()));
        match (inv, pg) {
            (Ok(a), Ok(b)) => worst.add(a.max(b)),
            _ => worst.add(f64::INFINITY),
        }
    }
    worst.within("strict properness at gamma 0", 1e-6)
}

/// Five classes, gamma 0.02, top score just above 1/5: the recovered top posterior is lower.
fn small_gamma_overconfidence(psi: &PsiFn) -> CheckResult {
    let top = 0.2 + 1e-4;
    let mut v = vec![(1.0 - top) / 4.0; 5];
    v[0] = top;
    let p = ProbVector::new(v).unwrap();
    let gap = psi(&p, gamma(0.02)).max() - p.max();
    let mut w = Worst::default();
    w.add(gap);
    w.below("small-gamma overconfidence", 0.0)
}
