//! Long-time predictions and the trajectory estimators that test them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{weights_at, Trajectory};
use crate::measures::{exact_sum, DiscreteMeasure, Point};
use crate::model::{alpha_star, argmax_set, gamma_star_on, r0, CountableLimits, ModelParams, Scenario, ARGMAX_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// Positive initial mass on the argmax set.
    CaseI,
    CaseIiRegular,
    CaseIiFiniteMaxima,
    Subcritical,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub case: Case,
    #[serde(rename = "S_inf")]
    pub s_inf: f64,
    pub alpha_star: f64,
    pub r0: f64,
    pub tau: Option<f64>,
    #[serde(rename = "I_inf")]
    pub i_inf: Option<DiscreteMeasure>,
    pub mass_inf: Option<f64>,
    pub rho: Option<f64>,
    /// Indices into the scenario maxima attaining `rho`.
    #[serde(rename = "J")]
    pub j: Vec<usize>,
    /// `gamma(x_i) rho - (N + kappa_i) / 2` for global maxima, `None` for local ones.
    pub exponents: Vec<Option<f64>>,
}

/// Smallest `tau` with `sum gamma_i exp(tau gamma_i) w_i = rhs`; the left side
/// is strictly increasing when some `w_i > 0`.
pub fn solve_tau_raw(gammas: &[f64], weights: &[f64], rhs: f64) -> Result<f64> {
    if gammas.len() != weights.len() {
        return Err(Error::Argument("gamma and weight lists differ in length".into()));
    }
    if !(rhs > 0.0 && rhs.is_finite()) {
        return Err(Error::Argument(format!("right-hand side must be positive, got {rhs}")));
    }
    let terms: Vec<(f64, f64)> = gammas.iter().copied().zip(weights.iter().copied()).filter(|t| t.1 > 0.0).collect();
    if terms.is_empty() {
        return Err(Error::ZeroArgmaxMass);
    }
    if terms.iter().any(|t| !(t.0 > 0.0)) {
        return Err(Error::Argument("gamma must be positive".into()));
    }
    let lhs = |tau: f64| exact_sum(terms.iter().map(|(g, w)| g * w * (tau * g).exp()));
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut expanded = 0;
    while !(lhs(lo) < rhs && lhs(hi) > rhs) {
        if lhs(lo) >= rhs {
            lo *= 2.0;
        }
        if lhs(hi) <= rhs {
            hi *= 2.0;
        }
        expanded += 1;
        if expanded > 200 {
            return Err(Error::Argument("could not bracket tau".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lhs(mid) < rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if (lhs(lo) - rhs).abs() <= (lhs(hi) - rhs).abs() { lo } else { hi })
}

fn supercritical(sc: &Scenario) -> Result<(f64, f64)> {
    let a = alpha_star(sc)?;
    let r = r0(sc)?;
    if r <= 1.0 {
        return Err(Error::Subcritical { r0: r });
    }
    Ok((a, r))
}

/// `tau` such that `I_inf = 1_argmax exp(tau gamma) I0` balances the resource.
pub fn solve_tau(sc: &Scenario) -> Result<f64> {
    let (a, r) = supercritical(sc)?;
    let top = argmax_set(sc, ARGMAX_TOL);
    let g = sc.gamma_values();
    let w = sc.i0.weights();
    let gs: Vec<f64> = top.indices().iter().map(|&i| g[i]).collect();
    let ws: Vec<f64> = top.indices().iter().map(|&i| w[i]).collect();
    solve_tau_raw(&gs, &ws, sc.params.theta / a * (r - 1.0))
}

/// `1_argmax exp(tau gamma) I0`.
pub fn limit_measure(sc: &Scenario, tau: f64) -> Result<DiscreteMeasure> {
    let top = argmax_set(sc, ARGMAX_TOL);
    let g = sc.gamma_values();
    let w: Vec<f64> = sc
        .i0
        .weights()
        .iter()
        .enumerate()
        .map(|(i, &w)| if top.contains(i) && w > 0.0 { w * (tau * g[i]).exp() } else { 0.0 })
        .collect();
    sc.i0.with_weights(w)
}

pub fn predict(sc: &Scenario) -> Result<Prediction> {
    sc.validate()?;
    let a = alpha_star(sc)?;
    let r = r0(sc)?;
    let mut p = Prediction {
        case: Case::Subcritical,
        s_inf: sc.params.lambda / sc.params.theta,
        alpha_star: a,
        r0: r,
        tau: None,
        i_inf: None,
        mass_inf: None,
        rho: None,
        j: Vec::new(),
        exponents: Vec::new(),
    };
    if r <= 1.0 {
        p.mass_inf = Some(0.0);
        return Ok(p);
    }
    p.s_inf = 1.0 / a;
    let theta = sc.params.theta;
    let top = argmax_set(sc, ARGMAX_TOL);
    if sc.reg_bound_claimed {
        p.mass_inf = Some(theta / (a * gamma_star_on(sc, &top)?) * (r - 1.0));
    }
    if !sc.maxima.is_empty() {
        let n = sc.dim() as f64;
        let ratio = |m: &crate::model::MaximumSpec| (n + m.kappa) / (2.0 * m.gamma_at);
        let rho = sc.global_maxima().map(ratio).fold(f64::INFINITY, f64::min);
        if rho.is_finite() {
            p.rho = Some(rho);
            p.j = (0..sc.maxima.len())
                .filter(|&i| sc.maxima[i].global && ratio(&sc.maxima[i]) <= rho * (1.0 + 1e-12))
                .collect();
            p.exponents = sc
                .maxima
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    m.global
                        .then(|| if p.j.contains(&i) { 0.0 } else { m.gamma_at * rho - (n + m.kappa) / 2.0 })
                })
                .collect();
            if p.j.len() == 1 {
                p.mass_inf = Some(theta / (a * sc.maxima[p.j[0]].gamma_at) * (r - 1.0));
            }
        }
    }
    let top_mass = exact_sum(top.indices().iter().map(|&i| sc.i0.weights()[i]));
    if top_mass > 0.0 {
        let tau = solve_tau(sc)?;
        let lim = limit_measure(sc, tau)?;
        p.case = Case::CaseI;
        p.tau = Some(tau);
        if !sc.reg_bound_claimed {
            p.mass_inf = Some(lim.total_mass());
        }
        p.i_inf = Some(lim);
    } else if p.rho.is_some() {
        p.case = Case::CaseIiFiniteMaxima;
    } else if sc.reg_bound_claimed {
        p.case = Case::CaseIiRegular;
    } else {
        return Err(Error::Validation(
            "no initial mass on the argmax set and no regularity or maxima metadata".into(),
        ));
    }
    Ok(p)
}

/// Finite system with per-species rates. With `limits` given and no species
/// reaching the limiting `alpha*`, only the limiting total mass is predicted.
pub fn predict_finite(
    alphas: &[f64],
    gammas: &[f64],
    w0s: &[f64],
    params: ModelParams,
    limits: Option<&CountableLimits>,
) -> Result<Prediction> {
    params.validate()?;
    let n = alphas.len();
    if n == 0 || gammas.len() != n || w0s.len() != n {
        return Err(Error::Argument("species lists must be nonempty and of equal length".into()));
    }
    if gammas.iter().any(|g| !(*g > 0.0)) || w0s.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Argument("gamma and w0 must be positive".into()));
    }
    let top = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<Point> = (0..n).map(|i| Point::d1(i as f64)).collect();
    if let Some(l) = limits.filter(|l| l.alpha_star > top + ARGMAX_TOL) {
        let r = params.lambda * l.alpha_star / params.theta;
        if r <= 1.0 {
            return Err(Error::Subcritical { r0: r });
        }
        return Ok(Prediction {
            case: Case::CaseIiRegular,
            s_inf: 1.0 / l.alpha_star,
            alpha_star: l.alpha_star,
            r0: r,
            tau: None,
            i_inf: None,
            mass_inf: Some(params.theta / (l.alpha_star * l.gamma_inf) * (r - 1.0)),
            rho: None,
            j: Vec::new(),
            exponents: Vec::new(),
        });
    }
    let r = params.lambda * top / params.theta;
    if r <= 1.0 {
        return Err(Error::Subcritical { r0: r });
    }
    let surv: Vec<usize> = (0..n).filter(|&i| alphas[i] >= top - ARGMAX_TOL).collect();
    let gs: Vec<f64> = surv.iter().map(|&i| gammas[i]).collect();
    let ws: Vec<f64> = surv.iter().map(|&i| w0s[i]).collect();
    let tau = solve_tau_raw(&gs, &ws, params.theta / top * (r - 1.0))?;
    let mut w = vec![0.0; n];
    for &i in &surv {
        w[i] = w0s[i] * (tau * gammas[i]).exp();
    }
    let i_inf = DiscreteMeasure::atomic(1, pts, w)?;
    Ok(Prediction {
        case: Case::CaseI,
        s_inf: 1.0 / top,
        alpha_star: top,
        r0: r,
        tau: Some(tau),
        mass_inf: Some(i_inf.total_mass()),
        i_inf: Some(i_inf),
        rho: None,
        j: Vec::new(),
        exponents: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EtaSeries {
    pub times: Vec<f64>,
    pub eta: Vec<f64>,
    /// `t eta(t) / ln t`.
    pub rho_estimate: Vec<f64>,
}

impl EtaSeries {
    /// Mean of the rho estimate over samples with `lo <= t <= hi`.
    pub fn mean_rho(&self, lo: f64, hi: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .times
            .iter()
            .zip(&self.rho_estimate)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .map(|(_, r)| *r)
            .collect();
        (!v.is_empty()).then(|| exact_sum(v.iter().copied()) / v.len() as f64)
    }
}

/// `eta(t) = alpha* B(t) / t - 1` at every sample with `t > 1`.
pub fn eta_series(tr: &Trajectory, sc: &Scenario) -> Result<EtaSeries> {
    let a = alpha_star(sc)?;
    let mut out = EtaSeries {
        times: Vec::new(),
        eta: Vec::new(),
        rho_estimate: Vec::new(),
    };
    for s in tr.samples.iter().filter(|s| s.t > 1.0) {
        let eta = a * s.b / s.t - 1.0;
        out.times.push(s.t);
        out.eta.push(eta);
        out.rho_estimate.push(s.t * eta / s.t.ln());
    }
    Ok(out)
}

/// Least-squares slope of `ln value` against `ln t` over `lo <= t <= hi`.
pub fn loglog_slope(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::Argument("times and values differ in length".into()));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < 10 {
        return Err(Error::Argument(format!("{} samples in the slope window, need 10", pts.len())));
    }
    if pts.iter().any(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return Err(Error::Argument("log-log fit needs positive times and values".into()));
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = exact_sum(xs.iter().copied()) / n;
    let my = exact_sum(ys.iter().copied()) / n;
    let sxy = exact_sum(xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)));
    let sxx = exact_sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    if sxx == 0.0 {
        return Err(Error::Argument("slope window spans a single time".into()));
    }
    Ok(sxy / sxx)
}

pub const SELFSIMILAR_MIN_POINTS: usize = 30;

/// `|z|^kappa exp(gamma / (2 alpha*) alpha'' z^2)` at maximum `i`.
pub fn selfsimilar_profile(sc: &Scenario, i: usize, z: f64) -> Result<f64> {
    let m = sc
        .maxima
        .get(i)
        .ok_or_else(|| Error::Argument(format!("no maximum with index {i}")))?;
    let a = alpha_star(sc)?;
    Ok(z.abs().powf(m.kappa) * (m.gamma_at / (2.0 * a) * m.alpha_second[0][0] * z * z).exp())
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = exact_sum(x.iter().copied()) / n;
    let my = exact_sum(y.iter().copied()) / n;
    let sxy = exact_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = exact_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let syy = exact_sum(y.iter().map(|b| (b - my) * (b - my)));
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Pearson correlation between the rescaled weight profile of `mu` near
/// maximum `i` at time `t` and the predicted profile, on `|x - x_i| <= radius`.
pub fn selfsimilar_correlation(sc: &Scenario, mu: &DiscreteMeasure, i: usize, t: f64, radius: f64) -> Result<f64> {
    if sc.dim() != 1 || mu.dim() != 1 {
        return Err(Error::Argument("self-similar check is one-dimensional".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Argument(format!("time must be positive, got {t}")));
    }
    let xi = sc
        .maxima
        .get(i)
        .ok_or_else(|| Error::Argument(format!("no maximum with index {i}")))?
        .x[0];
    let vols = mu.cell_volumes();
    let mut emp = Vec::new();
    let mut pred = Vec::new();
    for (k, (p, &w)) in mu.points().iter().zip(mu.weights()).enumerate() {
        if (p.x() - xi).abs() <= radius {
            let z = (p.x() - xi) * t.sqrt();
            emp.push(vols.map_or(w, |v| w / v[k]));
            pred.push(selfsimilar_profile(sc, i, z)?);
        }
    }
    let pmax = pred.iter().copied().fold(0.0, f64::max);
    let resolved = pred.iter().filter(|v| **v >= 1e-3 * pmax).count();
    if resolved < SELFSIMILAR_MIN_POINTS || pmax == 0.0 {
        return Err(Error::Resolution {
            points: resolved,
            required: SELFSIMILAR_MIN_POINTS,
        });
    }
    let emax = emp.iter().copied().fold(0.0, |m: f64, v: f64| m.max(v.abs()));
    if emax > 0.0 {
        emp.iter_mut().for_each(|v| *v /= emax);
    }
    pred.iter_mut().for_each(|v| *v /= pmax);
    Ok(pearson(&emp, &pred))
}

/// Self-similar correlation using the trajectory sample nearest to `t`.
pub fn selfsimilar_check(tr: &Trajectory, sc: &Scenario, i: usize, t: f64) -> Result<f64> {
    let s = tr.at(t);
    let mu = weights_at(sc, &s.state())?;
    selfsimilar_correlation(sc, &mu, i, s.t, tr.window_radius)
}

/// One named pass/fail check with its numbers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Clause {
    pub name: String,
    pub measured: f64,
    pub predicted: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Clause {
    pub fn within(name: impl Into<String>, measured: f64, predicted: f64, tolerance: f64) -> Self {
        Clause {
            name: name.into(),
            measured,
            predicted,
            tolerance,
            pass: (measured - predicted).abs() <= tolerance,
        }
    }

    pub fn below(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Clause {
            name: name.into(),
            measured,
            predicted: 0.0,
            tolerance: bound,
            pass: measured < bound,
        }
    }

    pub fn above(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Clause {
            name: name.into(),
            measured,
            predicted: bound,
            tolerance: 0.0,
            pass: measured > bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OmegaOptions {
    /// Fraction of the samples, counted from the end, forming the tail.
    pub tail_fraction: f64,
    /// Tail window masses at `J` must lie in `[lo, hi] * tail median`.
    pub band: (f64, f64),
    /// Bound for vanishing masses at the final time.
    pub threshold: f64,
    /// Lower bound for the tail minimum of the total mass.
    pub persistence_floor: f64,
    /// Relative tolerance for the limiting total mass, when predicted.
    pub mass_rel_tol: f64,
}

impl Default for OmegaOptions {
    fn default() -> Self {
        OmegaOptions {
            tail_fraction: 0.5,
            band: (0.5, 2.0),
            threshold: 0.02,
            persistence_floor: 1e-3,
            mass_rel_tol: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmegaReport {
    pub clauses: Vec<Clause>,
    pub pass: bool,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Checks that the tail of the trajectory looks like a point of the
/// predicted omega-limit set: sums of atoms at the maxima in `J`.
pub fn omega_limit_check(tr: &Trajectory, pred: &Prediction, opts: &OmegaOptions) -> Result<OmegaReport> {
    let n = tr.samples.len();
    if n == 0 {
        return Err(Error::Argument("empty trajectory".into()));
    }
    let start = ((1.0 - opts.tail_fraction) * n as f64).floor() as usize;
    let tail = &tr.samples[start.min(n - 1)..];
    let last = tr.last();
    let nw = last.window_mass.len();
    let mut clauses = Vec::new();
    if pred.case == Case::Subcritical {
        clauses.push(Clause::below("extinction", last.total_mass, opts.threshold));
        for i in 0..nw {
            clauses.push(Clause::below(format!("window_{i}_vanishes"), last.window_mass[i], opts.threshold));
        }
    } else {
        let floor = tail.iter().map(|s| s.total_mass).fold(f64::INFINITY, f64::min);
        clauses.push(Clause::above("persistence", floor, opts.persistence_floor));
        if pred.case == Case::CaseIiFiniteMaxima {
            for i in 0..nw {
                let series: Vec<f64> = tail.iter().map(|s| s.window_mass[i]).collect();
                if pred.j.contains(&i) {
                    let m = median(&series);
                    let lo = series.iter().copied().fold(f64::INFINITY, f64::min) / m;
                    let hi = series.iter().copied().fold(0.0, f64::max) / m;
                    clauses.push(Clause::above(format!("window_{i}_tail_median"), m, opts.persistence_floor));
                    clauses.push(Clause::above(format!("window_{i}_tail_min_ratio"), lo, opts.band.0));
                    clauses.push(Clause::below(format!("window_{i}_tail_max_ratio"), hi, opts.band.1));
                } else if pred.exponents.get(i).copied().flatten().is_some() {
                    clauses.push(Clause::below(format!("window_{i}_vanishes"), last.window_mass[i], opts.threshold));
                }
            }
            let inside = exact_sum(pred.j.iter().map(|&i| last.window_mass[i]));
            clauses.push(Clause::below("mass_outside_j_windows", last.total_mass - inside, opts.threshold));
        }
        if let Some(m) = pred.mass_inf {
            clauses.push(Clause::within("total_mass", last.total_mass, m, opts.mass_rel_tol * m));
        }
    }
    let pass = clauses.iter().all(|c| c.pass);
    Ok(OmegaReport { clauses, pass })
}
