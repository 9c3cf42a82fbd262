//! Argument definitions and subcommand implementations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use focal_calib::calibrate::{apply_psi_dataset, apply_temperature_dataset, fit_temperature, TsObjective};
use focal_calib::metrics::{bin_reliability, cw_ece, error_rate, nll_with, Reduction};
use focal_calib::minimizer::{confidence_curve, TailShape};
use focal_calib::synth::panel::score_curves;
use focal_calib::synth::{run_experiment, PsiCorrected, SynthConfig, TemperatureScaled};
use focal_calib::thresholds::{varphi_curve, ThresholdPair};
use focal_calib::{Gamma, PredictionSet, ScoreKind};
use focal_calib::focal::LogMode;
use serde::Serialize;

use crate::io::{fmt_f64, load_predictions, render_table, save_predictions, write_atomic, FileFormat, LoadOptions, FILE_SIMPLEX_TOL};
use crate::svg::{emit_line_plot, emit_reliability_svg, LinePlot, Series};
use crate::verify::{run_verify, VerifyConfig};

/// Bad flag values that clap itself cannot catch. Exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

fn gamma_arg(g: f64) -> Result<Gamma> {
    Gamma::new(g).map_err(|e| UsageError(format!("--gamma: {e}")).into())
}

#[derive(Debug, Parser)]
#[command(name = "focal-calib", version, about = "Posterior recovery and calibration for focal-loss models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance on row sums of probability files.
    #[arg(long, global = true, default_value_t = FILE_SIMPLEX_TOL)]
    pub tolerance: f64,
    /// Rescale probability rows to sum to one instead of rejecting them.
    #[arg(long, global = true)]
    pub renormalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Probs,
    Logits,
}

impl From<KindArg> for ScoreKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Probs => ScoreKind::Probabilities,
            KindArg::Logits => ScoreKind::Logits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Nll,
    Focal,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// File format; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<FileFormat>,
    #[arg(long, value_enum, default_value_t = KindArg::Probs)]
    pub kind: KindArg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply temperature scaling and/or the recovery transform to a prediction file.
    Transform {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        output: PathBuf,
        /// Focal gamma the scores were trained with.
        #[arg(long)]
        psi: Option<f64>,
        /// Temperature for logit inputs (implies --kind logits).
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// ECE, classwise ECE, NLL and error rate, plus a reliability diagram.
    Metrics {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Apply the recovery transform with this gamma before scoring.
        #[arg(long)]
        psi: Option<f64>,
        /// Directory for reliability.csv and reliability.svg.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Over- and under-confidence thresholds and the phi curve.
    Thresholds {
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1001)]
        points: usize,
        /// CSV of (v, phi(v)).
        #[arg(long, default_value = "varphi.csv")]
        out: PathBuf,
    },
    /// Top risk-minimizer score against the top posterior.
    Curve {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 99)]
        grid: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write an SVG plot here.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Fit a temperature on a logit file.
    TsFit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        format: Option<FileFormat>,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Nll)]
        objective: ObjectiveArg,
        /// Gamma of the focal objective.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Train networks on a synthetic mixture and write the comparison panels.
    Synth {
        /// TOML file with experiment settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "synth_out")]
        out: PathBuf,
        /// Write SVG score curves next to the CSVs.
        #[arg(long)]
        plot: bool,
        #[arg(long)]
        train_n: Option<usize>,
        #[arg(long)]
        test_n: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
    },
    /// Check every property of the focal-loss machinery on random instances.
    Verify {
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,3,5")]
        gammas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,7,8,9,10")]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        n_random: usize,
        #[arg(long)]
        json: bool,
    },
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    if !(g.tolerance.is_finite() && g.tolerance >= 0.0) {
        return usage("--tolerance must be a nonnegative number");
    }
    match &cli.command {
        Command::Transform { input, output, psi, temperature } => {
            transform(g, input, output, *psi, *temperature)?;
        }
        Command::Metrics { input, bins, psi, out, json } => metrics(g, input, *bins, *psi, out, *json)?,
        Command::Thresholds { gamma, points, out } => thresholds(*gamma, *points, out)?,
        Command::Curve { k, gamma, grid, out, plot } => curve(*k, *gamma, *grid, out.as_deref(), plot.as_deref())?,
        Command::TsFit { input, format, objective, gamma, json } => {
            let args = InputArgs { input: input.clone(), format: *format, kind: KindArg::Logits };
            ts_fit(g, &args, *objective, *gamma, *json)?;
        }
        Command::Synth { config, out, plot, train_n, test_n, epochs, gammas } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
                    toml::from_str::<SynthConfig>(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?
                }
                None => SynthConfig::default(),
            };
            if let Some(n) = train_n {
                cfg.train_n = *n;
            }
            if let Some(n) = test_n {
                cfg.test_n = *n;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(gs) = gammas {
                cfg.focal_gammas = gs.clone();
            }
            synth(&cfg, g.seed, out, *plot)?;
        }
        Command::Verify { gammas, ks, n_random, json } => {
            if let Some(bad) = gammas.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return usage(format!("--gammas: {bad} is not a valid gamma"));
            }
            if let Some(bad) = ks.iter().find(|k| **k < 2) {
                return usage(format!("--ks: need at least two classes, got {bad}"));
            }
            let config = VerifyConfig { gammas: gammas.clone(), ks: ks.clone(), n_random: *n_random, seed: g.seed };
            let report = run_verify(&config);
            if *json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("{report}");
            }
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load(g: &GlobalArgs, input: &InputArgs) -> Result<PredictionSet> {
    let format = input.format.unwrap_or_else(|| FileFormat::from_path(&input.input));
    let opts = LoadOptions { kind: input.kind.into(), renormalize: g.renormalize, tolerance: g.tolerance };
    load_predictions(&input.input, format, opts).with_context(|| format!("reading {}", input.input.display()))
}

/// Probabilities from either kind of file; logits go through a softmax at `t`.
fn to_probabilities(set: PredictionSet, t: f64) -> Result<PredictionSet> {
    Ok(match set.kind() {
        ScoreKind::Probabilities => set,
        ScoreKind::Logits => apply_temperature_dataset(&set, t)?,
    })
}

fn transform(g: &GlobalArgs, input: &InputArgs, output: &Path, psi: Option<f64>, t: Option<f64>) -> Result<()> {
    let mut input = input.clone();
    if let Some(t) = t {
        if !(t.is_finite() && t > 0.0) {
            return usage("--temperature must be positive");
        }
        input.kind = KindArg::Logits;
    }
    let mut set = to_probabilities(load(g, &input)?, t.unwrap_or(1.0))?;
    if let Some(gamma) = psi {
        set = apply_psi_dataset(&set, gamma_arg(gamma)?)?;
    }
    let format = FileFormat::from_path(output);
    save_predictions(output, &set, format)?;
    eprintln!("wrote {} rows to {}", set.len(), output.display());
    Ok(())
}

#[derive(Serialize)]
struct MetricsSummary {
    n: usize,
    k: usize,
    ece: f64,
    cw_ece: f64,
    nll: f64,
    nll_mean: f64,
    error_rate: f64,
}

fn metrics(g: &GlobalArgs, input: &InputArgs, bins: usize, psi: Option<f64>, out: &Path, json: bool) -> Result<()> {
    if bins == 0 {
        return usage("--bins must be positive");
    }
    let mut set = to_probabilities(load(g, input)?, 1.0)?;
    if let Some(gamma) = psi {
        set = apply_psi_dataset(&set, gamma_arg(gamma)?)?;
    }
    let report = bin_reliability(&set, bins)?;
    let summary = MetricsSummary {
        n: set.len(),
        k: set.k(),
        ece: report.ece,
        cw_ece: cw_ece(&set, bins)?,
        nll: nll_with(&set, Reduction::Sum, LogMode::Safe)?,
        nll_mean: nll_with(&set, Reduction::Mean, LogMode::Safe)?,
        error_rate: error_rate(&set)?,
    };
    std::fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    let table = render_table(
        &["lower", "upper", "count", "accuracy", "confidence"],
        report.bins.iter().map(|b| vec![b.lower, b.upper, b.count as f64, b.accuracy, b.confidence]),
    );
    write_atomic(&out.join("reliability.csv"), table.as_bytes())?;
    emit_reliability_svg(&report, &out.join("reliability.svg"))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!("n           {}", summary.n);
        println!("k           {}", summary.k);
        println!("ece         {:.6}", summary.ece);
        println!("cw_ece      {:.6}", summary.cw_ece);
        println!("nll         {:.6}", summary.nll);
        println!("nll_mean    {:.6}", summary.nll_mean);
        println!("error_rate  {:.6}", summary.error_rate);
    }
    Ok(())
}

fn thresholds(gamma: f64, points: usize, out: &Path) -> Result<()> {
    let gm = gamma_arg(gamma)?;
    if gm.is_zero() {
        return usage("thresholds are undefined at gamma 0");
    }
    let pair = ThresholdPair::compute(gm, focal_calib::thresholds::DEFAULT_TOL)?;
    println!("gamma   {}", gm);
    println!("tau_oc  {}", fmt_f64(pair.tau_oc));
    println!("tau_uc  {}", fmt_f64(pair.tau_uc));
    let curve = varphi_curve(gm, points.max(2));
    write_atomic(out, render_table(&["v", "varphi"], curve.into_iter().map(|(v, p)| vec![v, p])).as_bytes())?;
    Ok(())
}

fn curve(k: usize, gamma: f64, grid: usize, out: Option<&Path>, plot: Option<&Path>) -> Result<()> {
    if k < 2 {
        return usage("--k must be at least 2");
    }
    if grid == 0 {
        return usage("--grid must be positive");
    }
    let gm = gamma_arg(gamma)?;
    let points = confidence_curve(k, gm, grid, TailShape::UniformTail)?;
    let table = render_table(&["max_eta", "max_qstar"], points.iter().map(|p| vec![p.max_eta, p.max_qstar]));
    match out {
        Some(path) => write_atomic(path, table.as_bytes())?,
        None => print!("{table}"),
    }
    if let Some(path) = plot {
        let plot = LinePlot {
            title: format!("K = {k}, gamma = {gm}"),
            x_label: "max eta".into(),
            y_label: "max q*".into(),
            series: vec![Series {
                label: "minimizer".into(),
                points: points.iter().map(|p| (p.max_eta, p.max_qstar)).collect(),
                dashed: false,
            }],
            y_range: Some((0.0, 1.0)),
            diagonal: true,
        };
        emit_line_plot(&plot, path)?;
    }
    Ok(())
}

fn ts_fit(g: &GlobalArgs, input: &InputArgs, objective: ObjectiveArg, gamma: Option<f64>, json: bool) -> Result<()> {
    let objective = match (objective, gamma) {
        (ObjectiveArg::Nll, _) => TsObjective::Nll,
        (ObjectiveArg::Focal, Some(gm)) => TsObjective::Focal(gamma_arg(gm)?),
        (ObjectiveArg::Focal, None) => return usage("--objective focal needs --gamma"),
    };
    let fit = fit_temperature(&load(g, input)?, objective)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&fit)?);
    } else {
        println!("temperature  {}", fmt_f64(fit.temperature));
        println!("objective    {}", fmt_f64(fit.achieved));
        println!("at_t_1       {}", fmt_f64(fit.unscaled));
    }
    Ok(())
}

fn synth(cfg: &SynthConfig, seed: u64, out: &Path, plot: bool) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    let exp = run_experiment(cfg, seed)?;
    let dist = &cfg.mixture;
    let k = dist.k();
    let grid = cfg.grid();

    write_atomic(&out.join("config.toml"), toml::to_string(cfg)?.as_bytes())?;
    let mut train = String::from("x,label\n");
    for s in &exp.train {
        train.push_str(&format!("{},{}\n", fmt_f64(s.x), s.y + 1));
    }
    write_atomic(&out.join("train.csv"), train.as_bytes())?;

    let mut panel = String::from("model,method,temperature,err,kld,ece\n");
    for run in &exp.runs {
        write_atomic(&out.join(format!("model_{}.json", run.name)), serde_json::to_string(&run.model)?.as_bytes())?;
        let mut rows = vec![("raw", 1.0, run.raw)];
        if let Some((fit, r)) = &run.ts {
            rows.push(("ts", fit.temperature, *r));
        }
        if let Some(r) = run.psi {
            rows.push(("psi", 1.0, r));
        }
        for (method, t, r) in &rows {
            panel.push_str(&format!(
                "{},{},{},{},{},{}\n",
                run.name,
                method,
                fmt_f64(*t),
                fmt_f64(r.err),
                fmt_f64(r.kld),
                fmt_f64(r.ece)
            ));
            println!("{:<10} {:<4} err={:.5} kld={:.5} ece={:.5}", run.name, method, r.err, r.kld, r.ece);
        }

        // score curves: the posterior, then each method's scores
        let raw = score_curves(&run.model, dist, &grid);
        let mut methods: Vec<(&str, Vec<_>)> = vec![("raw", raw.iter().map(|r| r.2.clone()).collect())];
        if let Some((fit, _)) = &run.ts {
            let scaled = TemperatureScaled { model: &run.model, fit: *fit };
            methods.push(("ts", score_curves(&scaled, dist, &grid).into_iter().map(|r| r.2).collect()));
        }
        if run.psi.is_some() {
            let corrected = PsiCorrected { inner: &run.model, gamma: run.loss.effective_gamma() };
            methods.push(("psi", score_curves(&corrected, dist, &grid).into_iter().map(|r| r.2).collect()));
        }
        let mut header = vec!["x".to_string()];
        header.extend((1..=k).map(|j| format!("eta_{j}")));
        for (m, _) in &methods {
            header.extend((1..=k).map(|j| format!("{m}_{j}")));
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let table = render_table(
            &header,
            raw.iter().enumerate().map(|(i, (x, eta, _))| {
                let mut row = vec![*x];
                row.extend_from_slice(eta.values());
                for (_, scores) in &methods {
                    row.extend_from_slice(scores[i].values());
                }
                row
            }),
        );
        write_atomic(&out.join(format!("curves_{}.csv", run.name)), table.as_bytes())?;

        if plot {
            for (m, scores) in &methods {
                let mut series: Vec<Series> = (0..k)
                    .map(|j| Series {
                        label: format!("eta_{}", j + 1),
                        points: raw.iter().map(|(x, eta, _)| (*x, eta.get(j))).collect(),
                        dashed: true,
                    })
                    .collect();
                series.extend((0..k).map(|j| Series {
                    label: format!("q_{}", j + 1),
                    points: raw.iter().zip(scores).map(|((x, _, _), q)| (*x, q.get(j))).collect(),
                    dashed: false,
                }));
                let plot = LinePlot {
                    title: format!("{} ({m})", run.name),
                    x_label: "x".into(),
                    y_label: "score".into(),
                    series,
                    y_range: Some((0.0, 1.0)),
                    diagonal: false,
                };
                emit_line_plot(&plot, &out.join(format!("curves_{}_{m}.svg", run.name)))?;
            }
        }
    }
    write_atomic(&out.join("panel.csv"), panel.as_bytes())?;
    Ok(())
}
