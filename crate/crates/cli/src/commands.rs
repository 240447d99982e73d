use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use exclusion::asymptotics::{
    eta_series, loglog_slope, omega_limit_check, predict, predict_finite, selfsimilar_check, Case, Clause,
    OmegaReport, Prediction,
};
use exclusion::disintegration::{coarea_density_1d, image_measure};
use exclusion::integrator::{simulate, simulate_direct, weights_at, Sampling, SolverConfig, Trajectory};
use exclusion::measures::{Bins, DiscreteMeasure, Point};
use exclusion::metric::{self, av_distance, concentration_bounds_with, d0, w1_1d, ConcentrationBounds, D0};
use exclusion::model::{alpha_star, argmax_set, Scenario, ARGMAX_TOL};

use crate::config::{resolve_scenario, AnalysisConfig, RunConfig, VerifyConfig};
use crate::output::{snapshot_name, write_json, write_text};

/// Shared state after merging the config file with the command line.
pub struct Ctx {
    pub cfg: RunConfig,
    pub base: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
}

impl Ctx {
    fn scenario(&self, flag: Option<&str>, grid: Option<usize>) -> Result<Scenario> {
        let spec = flag
            .map(str::to_owned)
            .or_else(|| self.cfg.scenario.clone())
            .context("no scenario given (use --scenario or the config file)")?;
        resolve_scenario(&spec, grid.or(self.cfg.grid), self.base.as_deref())
    }

    fn solver(&self, sc: &Scenario, t_end: Option<f64>, samples: Option<usize>) -> SolverConfig {
        let mut s = self.cfg.solver();
        if let Some(t) = t_end {
            s.t_end = t;
        } else if self.cfg.solver.is_none() {
            s.t_end = default_horizon(&sc.name);
        }
        if let Some(n) = samples {
            s.sampling = Sampling::Uniform { n };
        }
        s
    }
}

/// Horizon used when neither the flag nor the config sets one: the times at
/// which the figure checks are made.
pub fn default_horizon(name: &str) -> f64 {
    match name {
        n if n.starts_with("fig1") => 50.0,
        n if n.starts_with("fig7") || n.starts_with("fig8") => 1000.0,
        n if n.starts_with("finite") => 200.0,
        n if n.starts_with("countable") => 2000.0,
        _ => 100.0,
    }
}

fn sample_times(cfg: &SolverConfig) -> Vec<f64> {
    match &cfg.sampling {
        Sampling::Uniform { n } => (0..=*n).map(|k| cfg.t_end * k as f64 / *n as f64).collect(),
        Sampling::Times { times } => times.clone(),
        Sampling::Steps { .. } => Vec::new(),
    }
}

pub fn build(ctx: &Ctx, name: &str, grid: Option<usize>) -> Result<()> {
    let sc = resolve_scenario(name, grid.or(ctx.cfg.grid), ctx.base.as_deref())?;
    let path = if ctx.out.extension().is_some_and(|e| e == "json") {
        ctx.out.clone()
    } else {
        ctx.out.join(format!("{}.json", sc.name))
    };
    write_json(&path, &sc.to_config())?;
    println!("{}", path.display());
    Ok(())
}

pub struct SimulateArgs<'a> {
    pub scenario: Option<&'a str>,
    pub grid: Option<usize>,
    pub t_end: Option<f64>,
    pub samples: Option<usize>,
    pub snapshots: Vec<f64>,
    pub direct: bool,
}

pub fn simulate_cmd(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let sc = ctx.scenario(a.scenario, a.grid)?;
    let mut solver = ctx.solver(&sc, a.t_end, a.samples);
    let mut snaps = a.snapshots.clone();
    snaps.extend(&ctx.cfg.snapshots);
    snaps.sort_by(f64::total_cmp);
    snaps.dedup();
    if snaps.iter().any(|t| !(*t >= 0.0 && *t <= solver.t_end)) {
        bail!("snapshot times must lie in [0, {}]", solver.t_end);
    }
    if !snaps.is_empty() {
        let mut times = sample_times(&solver);
        if times.is_empty() {
            bail!("snapshots need uniform or explicit sampling");
        }
        times.extend(&snaps);
        times.sort_by(f64::total_cmp);
        times.dedup();
        solver.sampling = Sampling::Times { times };
    }
    let tr = if a.direct {
        simulate_direct(&sc, &solver)?
    } else {
        simulate(&sc, &solver)?
    };
    write_text(&ctx.out.join(&ctx.cfg.outputs.trajectory), &tr.to_csv())?;
    for &t in &snaps {
        let k = nearest_sample(&tr, t);
        let mu = match &tr.weights {
            Some(w) => sc.i0.with_weights(w[k].clone())?,
            None => weights_at(&sc, &tr.samples[k].state())?,
        };
        write_json(&ctx.out.join(snapshot_name(t)), &mu)?;
    }
    let last = tr.last();
    println!("t={} S={:.10} total_mass={:.10}", last.t, last.s, last.total_mass);
    Ok(())
}

fn nearest_sample(tr: &Trajectory, t: f64) -> usize {
    (0..tr.samples.len())
        .min_by(|&a, &b| (tr.samples[a].t - t).abs().total_cmp(&(tr.samples[b].t - t).abs()))
        .unwrap_or(0)
}

#[derive(Serialize)]
struct PredictOut {
    scenario: String,
    prediction: Prediction,
    /// Countable scenarios: the truncated system solved directly.
    #[serde(skip_serializing_if = "Option::is_none")]
    truncated: Option<Prediction>,
    /// Countable scenarios: the limiting mass of the untruncated system.
    #[serde(skip_serializing_if = "Option::is_none")]
    limit: Option<Prediction>,
}

fn predictions(sc: &Scenario) -> Result<PredictOut> {
    let prediction = predict(sc)?;
    let (mut truncated, mut limit) = (None, None);
    if let Some(l) = &sc.countable_limits {
        let (a, g, w) = (sc.alpha_values(), sc.gamma_values(), sc.i0.weights().to_vec());
        truncated = Some(predict_finite(&a, &g, &w, sc.params, None)?);
        limit = Some(predict_finite(&a, &g, &w, sc.params, Some(l))?);
    }
    Ok(PredictOut {
        scenario: sc.name.clone(),
        prediction,
        truncated,
        limit,
    })
}

pub fn predict_cmd(ctx: &Ctx, scenario: Option<&str>, grid: Option<usize>) -> Result<()> {
    let sc = ctx.scenario(scenario, grid)?;
    let p = predictions(&sc)?;
    write_json(&ctx.out.join(&ctx.cfg.outputs.prediction), &p)?;
    println!(
        "case={} alpha*={} S_inf={} mass_inf={}",
        serde_json::to_value(p.prediction.case)?.as_str().unwrap_or("?"),
        p.prediction.alpha_star,
        p.prediction.s_inf,
        p.prediction.mass_inf.map_or("-".into(), |m| m.to_string())
    );
    Ok(())
}

#[derive(Serialize)]
struct SlopeOut {
    maximum: usize,
    window: (f64, f64),
    slope: Option<f64>,
    predicted: Option<f64>,
}

#[derive(Serialize)]
struct AnalysisOut {
    scenario: String,
    t_end: f64,
    final_s: f64,
    final_mass: f64,
    prediction: Prediction,
    rho_window: (f64, f64),
    rho_mean: Option<f64>,
    slopes: Vec<SlopeOut>,
    selfsimilar: Vec<(usize, Option<f64>)>,
    omega: OmegaReport,
    alpha_image: DiscreteMeasure,
}

pub struct AnalyzeArgs<'a> {
    pub scenario: Option<&'a str>,
    pub grid: Option<usize>,
    pub trajectory: Option<&'a Path>,
    pub t_end: Option<f64>,
    pub samples: Option<usize>,
}

pub fn analyze_cmd(ctx: &Ctx, a: &AnalyzeArgs) -> Result<()> {
    let sc = ctx.scenario(a.scenario, a.grid)?;
    let solver = ctx.solver(&sc, a.t_end, a.samples);
    let tr = match a.trajectory {
        Some(p) => {
            let mut tr = Trajectory::read_csv(p).with_context(|| format!("reading {}", p.display()))?;
            tr.scenario = sc.name.clone();
            tr.window_radius = solver.window_radius;
            tr
        }
        None => simulate(&sc, &solver)?,
    };
    let an = &ctx.cfg.analysis;
    let pred = predict(&sc)?;
    let t_end = tr.last().t;
    let eta = eta_series(&tr, &sc)?;
    let mut eta_csv = String::from("t,eta,rho_estimate\n");
    for ((t, e), r) in eta.times.iter().zip(&eta.eta).zip(&eta.rho_estimate) {
        eta_csv.push_str(&format!("{t:.16e},{e:.16e},{r:.16e}\n"));
    }
    write_text(&ctx.out.join("eta.csv"), &eta_csv)?;

    let rho_window = an.rho_window(t_end);
    let sw = an.slope_window(t_end);
    let times = tr.times();
    let slopes = (0..sc.maxima.len())
        .map(|i| SlopeOut {
            maximum: i,
            window: sw,
            slope: loglog_slope(&times, &tr.window_series(i), sw).ok(),
            predicted: pred.exponents.get(i).copied().flatten(),
        })
        .collect();
    let ts = an.selfsimilar_time(t_end);
    let selfsimilar = pred.j.iter().map(|&i| (i, selfsimilar_check(&tr, &sc, i, ts).ok())).collect();

    let alphas = sc.alpha_values();
    let lo = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = alpha_star(&sc)?;
    let bins = if hi > lo {
        Bins::uniform(lo, hi, an.image_bins.max(1))?
    } else {
        Bins::new(vec![lo - 0.5, hi + 0.5])?
    };
    let alpha_image = image_measure(&sc, &bins)?;
    if sc.dim() == 1 && sc.i0.cell_volumes().is_some() && hi > lo {
        let n = 1000;
        let ys: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
        write_text(&ctx.out.join("coarea.csv"), &coarea_density_1d(&sc, &ys)?.to_csv())?;
    }
    let out = AnalysisOut {
        scenario: sc.name.clone(),
        t_end,
        final_s: tr.last().s,
        final_mass: tr.last().total_mass,
        rho_mean: eta.mean_rho(rho_window.0, rho_window.1),
        rho_window,
        slopes,
        selfsimilar,
        omega: omega_limit_check(&tr, &pred, &an.omega())?,
        prediction: pred,
        alpha_image,
    };
    write_json(&ctx.out.join(&ctx.cfg.outputs.analysis), &out)?;
    println!("analysis written to {}", ctx.out.display());
    Ok(())
}

#[derive(Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub case: Option<Case>,
    pub pass: bool,
    pub clauses: Vec<Clause>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub seed: u64,
    pub scenarios: Vec<ScenarioReport>,
}

/// Outcome of `verify`, mapped to the process exit code by the caller.
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

pub struct VerifyArgs {
    pub scenarios: Vec<String>,
    pub grid: Option<usize>,
    pub t_end: Option<f64>,
    pub samples: Option<usize>,
}

pub fn verify_cmd(ctx: &Ctx, a: &VerifyArgs) -> Result<Verdict> {
    let mut names = a.scenarios.clone();
    if names.is_empty() {
        names = ctx.cfg.scenarios.clone();
    }
    if names.is_empty() {
        names.extend(ctx.cfg.scenario.clone());
    }
    if names.is_empty() {
        bail!("no scenario given (use --scenario or the config file)");
    }
    let reports: Vec<ScenarioReport> = names
        .par_iter()
        .map(|n| match verify_one(ctx, n, a) {
            Ok(r) => r,
            Err(e) => ScenarioReport {
                scenario: n.clone(),
                case: None,
                pass: false,
                clauses: Vec::new(),
                error: Some(format!("{e:#}")),
            },
        })
        .collect();
    let errored = reports.iter().any(|r| r.error.is_some());
    let report = VerifyReport {
        pass: reports.iter().all(|r| r.pass),
        seed: ctx.seed,
        scenarios: reports,
    };
    write_json(&ctx.out.join(&ctx.cfg.outputs.report), &report)?;
    for r in &report.scenarios {
        for c in &r.clauses {
            println!(
                "{} {}: {} measured={:.6e} predicted={:.6e} tol={:.3e}",
                r.scenario,
                c.name,
                if c.pass { "PASS" } else { "FAIL" },
                c.measured,
                c.predicted,
                c.tolerance
            );
        }
        if let Some(e) = &r.error {
            println!("{}: ERROR {e}", r.scenario);
        }
    }
    Ok(if errored {
        Verdict::Error
    } else if report.pass {
        Verdict::Pass
    } else {
        Verdict::Fail
    })
}

fn verify_one(ctx: &Ctx, name: &str, a: &VerifyArgs) -> Result<ScenarioReport> {
    let sc = ctx.scenario(Some(name), a.grid)?;
    let solver = ctx.solver(&sc, a.t_end, a.samples);
    let pred = predict(&sc)?;
    let tr = simulate(&sc, &solver)?;
    let clauses = clauses(ctx, &sc, &pred, &tr)?;
    Ok(ScenarioReport {
        scenario: sc.name.clone(),
        case: Some(pred.case),
        pass: clauses.iter().all(|c| c.pass),
        clauses,
        error: None,
    })
}

fn clauses(ctx: &Ctx, sc: &Scenario, pred: &Prediction, tr: &Trajectory) -> Result<Vec<Clause>> {
    let v: &VerifyConfig = &ctx.cfg.verify;
    let an: &AnalysisConfig = &ctx.cfg.analysis;
    let last = tr.last();
    let t_end = last.t;
    let mut out = Vec::new();

    // S settles at 1/alpha* only up to O(ln t / t) when the argmax carries no mass
    if v.resource_limit && pred.case != Case::CaseIiFiniteMaxima {
        out.push(Clause::within("resource_limit", last.s, pred.s_inf, v.s_tol));
    }
    // truncated countable systems separate their top species only on time
    // scales far beyond any run; their check is the limiting mass
    if v.limit_distribution && sc.countable_limits.is_none() {
        if let (Case::CaseI, Some(inf)) = (&pred.case, &pred.i_inf) {
            let it = weights_at(sc, &last.state())?;
            out.push(Clause::below("limit_distribution", d0(&it, inf)?.upper, v.d0_tol));
        }
        if pred.case == Case::CaseIiRegular || sc.reg_bound_claimed {
            let set = argmax_set(sc, ARGMAX_TOL);
            let k: Vec<Point> = set.indices().iter().map(|&i| sc.i0.points()[i].clone()).collect();
            if !k.is_empty() {
                let it = weights_at(sc, &last.state())?;
                let b = concentration_bounds_with(&it, &k, &metric::D0Options::default(), false)?;
                out.push(Clause::below("concentration", b.upper, v.d0_tol));
            }
        }
    }
    if pred.case == Case::CaseIiFiniteMaxima {
        if let (true, Some(rho)) = (v.rho, pred.rho) {
            let (lo, hi) = an.rho_window(t_end);
            let m = eta_series(tr, sc)?.mean_rho(lo, hi).context("no samples in the rho window")?;
            out.push(Clause::within("rho", m, rho, v.rho_rel_tol * rho));
        }
        if v.exponents {
            let w = an.slope_window(t_end);
            let times = tr.times();
            for (i, e) in pred.exponents.iter().enumerate() {
                let Some(e) = e else { continue };
                let tol = if pred.j.contains(&i) { v.slope_tol_j } else { v.slope_tol };
                let s = loglog_slope(&times, &tr.window_series(i), w)?;
                out.push(Clause::within(format!("exponent_{i}"), s, *e, tol));
            }
        }
        if v.selfsimilar {
            let ts = an.selfsimilar_time(t_end);
            for &i in &pred.j {
                let c = selfsimilar_check(tr, sc, i, ts)?;
                out.push(Clause::above(format!("selfsimilar_{i}"), c, v.min_correlation));
            }
        }
    }
    if v.omega {
        let rep = omega_limit_check(tr, pred, &an.omega())?;
        out.extend(rep.clauses.into_iter().map(|mut c| {
            c.name = format!("omega.{}", c.name);
            c
        }));
    }
    if v.metric_oracle {
        let worst = metric_oracle(ctx.seed, v.oracle_pairs)?;
        out.push(Clause::below("metric_oracle", worst, v.oracle_tol));
    }
    Ok(out)
}

/// Largest `|d0 - w1|` over seeded random equal-mass pairs on `[-1, 1]`.
pub fn metric_oracle(seed: u64, pairs: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let (n, m) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let draw = |k: usize, rng: &mut ChaCha8Rng| -> Result<DiscreteMeasure> {
            let pts = (0..k).map(|_| Point::d1(rng.gen_range(-1.0..=1.0))).collect();
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            Ok(DiscreteMeasure::atomic(1, pts, w)?)
        };
        let mu = draw(n, &mut rng)?;
        let nu = draw(m, &mut rng)?;
        let scaled: Vec<f64> = nu.weights().iter().map(|w| w * mu.total_mass() / nu.total_mass()).collect();
        let nu = nu.with_weights(rescale_exact(&scaled, mu.total_mass()))?;
        worst = worst.max((d0(&mu, &nu)?.value - w1_1d(&mu, &nu)?).abs());
    }
    Ok(worst)
}

/// Puts any rounding residue of the total on the largest weight.
fn rescale_exact(w: &[f64], total: f64) -> Vec<f64> {
    let mut w = w.to_vec();
    let s: f64 = exclusion::measures::exact_sum(w.iter().copied());
    if let Some(k) = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])) {
        w[k] += total - s;
    }
    w
}

#[derive(Serialize)]
struct MetricOut {
    d0: f64,
    d0_bounds: D0,
    av: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    w1_1d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    concentration: Option<ConcentrationBounds>,
}

pub fn metric_cmd(ctx: &Ctx, mu: &Path, nu: &Path, set: Option<&Path>, exact: bool) -> Result<()> {
    let read = |p: &Path| DiscreteMeasure::read_json(p).with_context(|| format!("reading measure {}", p.display()));
    let (mu, nu) = (read(mu)?, read(nu)?);
    let d = d0(&mu, &nu)?;
    let w1 = (mu.dim() == 1 && (mu.total_mass() - nu.total_mass()).abs() <= metric::MATCH_TOL)
        .then(|| w1_1d(&mu, &nu))
        .transpose()?;
    let concentration = match set {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let coords: Vec<Vec<f64>> = serde_json::from_str(&text).context("set file must be a list of points")?;
            let k = coords.iter().map(|c| Point::new(c)).collect::<Result<Vec<_>, _>>()?;
            Some(concentration_bounds_with(&mu, &k, &metric::D0Options::default(), exact)?)
        }
        None => None,
    };
    let out = MetricOut {
        d0: d.value,
        av: av_distance(&mu, &nu)?,
        d0_bounds: d,
        w1_1d: w1,
        concentration,
    };
    let path = ctx.out.join(&ctx.cfg.outputs.metric);
    write_json(&path, &out)?;
    println!("{}", serde_json::to_string_pretty(&crate::output::versioned(&out)?)?);
    Ok(())
}
