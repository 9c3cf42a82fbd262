//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::time::{Duration, Instant};

use focal_calib::calibrate::{fit_temperature, TsObjective};
use focal_calib::focal::{h_transform, in_sk, psi_transform, recover_binary, varphi};
use focal_calib::metrics::{cw_ece, ece, nll, PredictionSet};
use focal_calib::minimizer::{minimize_risk_inverse, minimize_risk_pg, DEFAULT_PG_ITERS, DEFAULT_TOL};
use focal_calib::simplex::{sample_simplex, sample_simplex_with_max};
use focal_calib::synth::{
    evaluate_panel, grad_check, linspace, run_experiment, MlpModel, PosteriorOracle, Sample, SynthConfig,
    SyntheticDistribution,
};
use focal_calib::thresholds::ThresholdPair;
use focal_calib::{Gamma, LossSpec, ProbVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SWEEP_GAMMAS: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 5.0];
const SEED: u64 = 2024;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn gamma(g: f64) -> Gamma {
    Gamma::new(g).unwrap()
}

fn pv(v: &[f64]) -> ProbVector {
    ProbVector::new(v.to_vec()).unwrap()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sweep_instances(n: usize) -> Vec<(ProbVector, Gamma)> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    (0..n)
        .map(|_| {
            let k = rng.random_range(2..=10);
            let g = SWEEP_GAMMAS[rng.random_range(0..SWEEP_GAMMAS.len())];
            (sample_simplex(&mut rng, k), gamma(g))
        })
        .collect()
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (eta, g) in sweep_instances(1000) {
        let q = minimize_risk_inverse(&eta, g, DEFAULT_TOL).unwrap().q_star;
        worst = worst.max(linf(psi_transform(&q, g).values(), eta.values()));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-7 && elapsed < Duration::from_secs(30),
        format!("1000 instances, worst {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn solver_agreement() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for (eta, g) in sweep_instances(1000) {
        let inv = minimize_risk_inverse(&eta, g, DEFAULT_TOL).unwrap();
        match minimize_risk_pg(&eta, g, 1e-10, DEFAULT_PG_ITERS) {
            Ok(pg) => worst = worst.max(linf(pg.q_star.values(), inv.q_star.values())),
            Err(_) => failures += 1,
        }
    }
    outcome(worst < 1e-5 && failures == 0, format!("worst L-inf gap {worst:.2e}, {failures} unconverged"))
}

fn threshold_order() -> Outcome {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for g in [0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0] {
        let t = ThresholdPair::compute(gamma(g), 1e-10).unwrap();
        ok &= 0.0 < t.tau_oc && t.tau_oc < t.tau_uc && t.tau_uc < 0.5;
        worst = worst.max((varphi(t.tau_uc, gamma(g)).unwrap() - 1.0).abs());
    }
    outcome(ok && worst <= 1e-9, format!("ordering holds: {ok}, worst |phi(tau_uc) - 1| {worst:.2e}"))
}

fn underconfidence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut checked = 0;
    let mut violations = 0;
    let mut binary_gap: f64 = 0.0;
    while checked < 1000 {
        let k = rng.random_range(2..=10);
        let g = gamma(SWEEP_GAMMAS[rng.random_range(0..SWEEP_GAMMAS.len())]);
        let m = rng.random_range(0.5..1.0);
        let Some(p) = sample_simplex_with_max(&mut rng, k, m, 100) else { continue };
        if m <= 0.5 || in_sk(&p, 1e-9) {
            continue;
        }
        checked += 1;
        if psi_transform(&p, g).max() <= p.max() {
            violations += 1;
        }
        let q = rng.random_range(1e-6..1.0 - 1e-6);
        let closed = recover_binary(q, g).unwrap();
        binary_gap = binary_gap.max((closed - psi_transform(&pv(&[q, 1.0 - q]), g).get(0)).abs());
    }
    outcome(
        violations == 0 && binary_gap <= 1e-10,
        format!("{violations}/{checked} violations, binary closed-form gap {binary_gap:.2e}"),
    )
}

fn small_gamma_witness() -> Outcome {
    let top = 0.2 + 1e-4;
    let mut v = vec![(1.0 - top) / 4.0; 5];
    v[0] = top;
    let p = pv(&v);
    let out = psi_transform(&p, gamma(0.02)).max();
    outcome(out < p.max(), format!("max psi {out:.10} vs max p {:.10}", p.max()))
}

fn fixed_points_and_argmax() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut fixed_gap: f64 = 0.0;
    let mut flips = 0;
    for _ in 0..10_000 {
        let k = rng.random_range(2..=10);
        let g = gamma(SWEEP_GAMMAS[rng.random_range(0..SWEEP_GAMMAS.len())]);
        let mut sk = vec![0.0; k];
        for slot in sk.iter_mut() {
            if rng.random_bool(0.5) {
                *slot = 1.0;
            }
        }
        sk[rng.random_range(0..k)] = 1.0;
        let sk = ProbVector::renormalized(sk).unwrap();
        fixed_gap = fixed_gap.max(linf(psi_transform(&sk, g).values(), sk.values()));
        let p = sample_simplex(&mut rng, k);
        if psi_transform(&p, g).argmax() != p.argmax() {
            flips += 1;
        }
    }
    outcome(fixed_gap <= 1e-9 && flips == 0, format!("fixed-point gap {fixed_gap:.2e}, {flips}/10000 argmax flips"))
}

fn shape_of_phi_and_h() -> Outcome {
    const N: usize = 100_000;
    let mut bad = Vec::new();
    for g in SWEEP_GAMMAS {
        let gm = gamma(g);
        let h: Vec<f64> = (1..N).map(|i| h_transform(i as f64 / N as f64, gm).unwrap()).collect();
        if h.windows(2).any(|w| w[1] <= w[0]) {
            bad.push(format!("h not increasing at gamma {g}"));
        }
        let phi: Vec<f64> = (0..=N).map(|i| varphi(i as f64 / N as f64, gm).unwrap()).collect();
        let signs: Vec<f64> =
            phi.windows(2).map(|w| w[1] - w[0]).filter(|d| *d != 0.0).map(f64::signum).collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        if changes != 1 {
            bad.push(format!("{changes} sign changes at gamma {g}"));
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { "every gamma in the sweep".to_string() } else { bad.join("; ") })
}

fn metric_formulas() -> Outcome {
    let one = PredictionSet::from_probabilities(vec![pv(&[0.75, 0.25])], vec![0]).unwrap();
    let two = PredictionSet::from_probabilities(vec![pv(&[0.6, 0.4]), pv(&[0.8, 0.2])], vec![0, 1]).unwrap();
    let cw = PredictionSet::from_probabilities(vec![pv(&[0.9, 0.1])], vec![0]).unwrap();
    let half = PredictionSet::from_probabilities(vec![pv(&[0.5, 0.5]), pv(&[0.5, 0.5])], vec![0, 1]).unwrap();
    let gaps = [
        (ece(&one, 10).unwrap() - 0.25).abs(),
        (ece(&two, 1).unwrap() - 0.2).abs(),
        (cw_ece(&cw, 1).unwrap() - 0.1).abs(),
        (nll(&half).unwrap() - 2.0 * std::f64::consts::LN_2).abs(),
    ];
    let worst = gaps.iter().cloned().fold(0.0, f64::max);

    let dist = SyntheticDistribution::default_mixture();
    let grid = linspace(-4.0, 4.0, 81);
    let oracle = evaluate_panel(&PosteriorOracle(&dist), &dist, &grid, 100_000, None, SEED);
    outcome(
        worst <= 1e-12 && oracle.ece < 0.01,
        format!("worst formula gap {worst:.2e}, calibrated ECE {:.4}", oracle.ece),
    )
}

fn synthetic_reproduction() -> Outcome {
    let start = Instant::now();
    let config = SynthConfig::default();
    let exp = run_experiment(&config, SEED).unwrap();
    let ce = exp.runs.iter().find(|r| r.name == "ce").unwrap();
    let fl = exp.runs.iter().find(|r| r.name == "focal_5").unwrap();
    let psi = fl.psi.unwrap();

    let dist = &config.mixture;
    let (mut inside, mut under) = (0, 0);
    for x in config.grid() {
        let conf = fl.model.predict(x).max();
        if conf > 0.55 && conf < 0.95 {
            inside += 1;
            if conf < dist.posterior(x).max() {
                under += 1;
            }
        }
    }
    let under_frac = under as f64 / inside.max(1) as f64;
    let elapsed = start.elapsed();
    let checks = [
        ce.raw.kld < 0.02,
        fl.raw.kld > 5.0 * ce.raw.kld,
        inside > 0 && under_frac >= 0.9,
        psi.kld * 2.0 <= fl.raw.kld,
        psi.ece * 2.0 <= fl.raw.ece,
        psi.err.to_bits() == fl.raw.err.to_bits(),
        elapsed < Duration::from_secs(300),
    ];
    outcome(
        checks.iter().all(|c| *c),
        format!(
            "CE KLD {:.4}; focal-5 raw KLD {:.4} ECE {:.4}; corrected KLD {:.4} ECE {:.4}; ERR {} vs {}; under on {under}/{inside}; {:.1} s",
            ce.raw.kld,
            fl.raw.kld,
            fl.raw.ece,
            psi.kld,
            psi.ece,
            fl.raw.err,
            psi.err,
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 10);
    let mut worst: f64 = 0.0;
    for (i, g) in SWEEP_GAMMAS.iter().enumerate() {
        let model = MlpModel::new(64, 3, SEED + i as u64);
        let loss = LossSpec::focal(gamma(*g));
        for _ in 0..20 {
            let sample = Sample { x: rng.random_range(-4.0..4.0), y: rng.random_range(0..3) };
            worst = worst.max(grad_check(&model, &loss, &sample));
        }
    }
    outcome(worst < 1e-4, format!("worst relative error {worst:.2e}"))
}

/// Logits `2 ln eta(x)` with labels drawn from `eta(x)`.
fn scaled_posterior_logits(dist: &SyntheticDistribution, n: usize, seed: u64) -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, labels): (Vec<Vec<f64>>, Vec<usize>) = dist
        .sample(n, seed)
        .iter()
        .map(|s| {
            let eta = dist.posterior(s.x);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let y = eta.values().iter().position(|p| {
                acc += p;
                u < acc
            });
            (eta.values().iter().map(|p| 2.0 * p.ln()).collect(), y.unwrap_or(eta.k() - 1))
        })
        .unzip();
    PredictionSet::from_logits(rows, labels).unwrap()
}

fn temperature_sanity() -> Outcome {
    let dist = SyntheticDistribution::default_mixture();
    let mut fitted = Vec::new();
    let mut never_worse = true;
    for round in 0..3 {
        let logits = scaled_posterior_logits(&dist, 20_000, SEED + 100 + round);
        for objective in [TsObjective::Nll, TsObjective::Focal(gamma(2.0))] {
            let fit = fit_temperature(&logits, objective).unwrap();
            never_worse &= fit.achieved <= fit.unscaled;
            if objective == TsObjective::Nll {
                fitted.push(fit.temperature);
            }
        }
    }
    let in_range = fitted.iter().all(|t| (1.9..=2.1).contains(t));
    outcome(
        in_range && never_worse,
        format!("NLL temperatures {fitted:.3?}, objective never above t = 1: {never_worse}"),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("posterior round trip", round_trip),
        ("solver agreement", solver_agreement),
        ("threshold ordering", threshold_order),
        ("top-class underconfidence", underconfidence),
        ("small-gamma overconfidence", small_gamma_witness),
        ("fixed points and argmax", fixed_points_and_argmax),
        ("shape of phi and h", shape_of_phi_and_h),
        ("metric formulas", metric_formulas),
        ("synthetic reproduction", synthetic_reproduction),
        ("gradient check", gradient_check),
        ("temperature scaling", temperature_sanity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
