//! Time integration.
//!
//! The population is never stored as a state vector: with `B(t) = int_0^t S`
//! every weight is `w_i(t) = w_i(0) exp(gamma_i (alpha_i B - t))`, so the
//! dynamics reduce to `S' = lambda - theta S - S Q(t, B)`, `B' = S`.
//! `simulate_direct` integrates every weight instead and serves as an oracle.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{exact_sum, pairwise_sum, DiscreteMeasure, Point};
use crate::model::{alpha_star, Scenario};

pub const DEFAULT_EXPONENT_CAP: f64 = 700.0;
pub const DEFAULT_DIRECT_CAP: usize = 20_000;
pub const DEFAULT_WINDOW_RADIUS: f64 = 0.1;

const CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

impl ReducedState {
    pub fn new(t: f64, s: f64, b: f64) -> Self {
        ReducedState { t, s, b }
    }

    pub fn initial(sc: &Scenario) -> Self {
        ReducedState { t: 0.0, s: sc.s0, b: 0.0 }
    }
}

/// When samples are recorded. Sample values come from dense output, so
/// they do not depend on the step sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    /// `n + 1` equally spaced times on `[0, t_end]`.
    Uniform { n: usize },
    /// Explicit increasing times within `[0, t_end]`.
    Times { times: Vec<f64> },
    /// Every `stride`-th accepted step, plus both ends.
    Steps { stride: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub t_end: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub initial_step: f64,
    pub sampling: Sampling,
    pub exponent_cap: f64,
    pub window_radius: f64,
    pub direct_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            t_end: 100.0,
            max_step: 5.0,
            min_step: 1e-12,
            initial_step: 1e-3,
            sampling: Sampling::Uniform { n: 1000 },
            exponent_cap: DEFAULT_EXPONENT_CAP,
            window_radius: DEFAULT_WINDOW_RADIUS,
            direct_cap: DEFAULT_DIRECT_CAP,
        }
    }
}

impl SolverConfig {
    pub fn with_t_end(t_end: f64) -> Self {
        SolverConfig {
            t_end,
            ..Default::default()
        }
    }

    pub fn sampling(mut self, s: Sampling) -> Self {
        self.sampling = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.rel_tol) && pos(self.abs_tol)) {
            return Err(Error::Argument("tolerances must be positive".into()));
        }
        if !pos(self.t_end) {
            return Err(Error::Argument(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(pos(self.min_step) && self.min_step <= self.max_step && pos(self.initial_step)) {
            return Err(Error::Argument("need 0 < min_step <= max_step and a positive initial step".into()));
        }
        if !(self.exponent_cap > 0.0) || !pos(self.window_radius) {
            return Err(Error::Argument("exponent cap and window radius must be positive".into()));
        }
        match &self.sampling {
            Sampling::Uniform { n } if *n == 0 => Err(Error::Argument("uniform sampling needs n >= 1".into())),
            Sampling::Steps { stride } if *stride == 0 => Err(Error::Argument("stride must be >= 1".into())),
            Sampling::Times { times } => {
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Argument("sample times must be strictly increasing".into()));
                }
                if times.iter().any(|&t| !(0.0..=self.t_end).contains(&t)) {
                    return Err(Error::Argument("sample times must lie in [0, t_end]".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn sample_times(&self) -> Option<Vec<f64>> {
        match &self.sampling {
            Sampling::Uniform { n } => Some(
                (0..=*n)
                    .map(|k| if k == *n { self.t_end } else { self.t_end * k as f64 / *n as f64 })
                    .collect(),
            ),
            Sampling::Times { times } => Some(times.clone()),
            Sampling::Steps { .. } => None,
        }
    }
}

/// Per-point data of a scenario laid out for the quadrature of `Q`.
#[derive(Clone, Debug)]
pub struct Kernel {
    alpha: Vec<f64>,
    gamma: Vec<f64>,
    w0: Vec<f64>,
    points: Vec<Point>,
    windows: Vec<Vec<usize>>,
    cap: f64,
}

/// Integrals of the current population.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    /// `int alpha gamma I`
    pub q: f64,
    /// `int I`
    pub mass: f64,
    /// `int gamma I`
    pub gamma_mass: f64,
}

impl Kernel {
    pub fn new(sc: &Scenario, cap: f64, window_radius: f64) -> Result<Self> {
        let points = sc.i0.points().to_vec();
        let alpha = sc.alpha_values();
        let gamma = sc.gamma_values();
        for (i, p) in points.iter().enumerate() {
            for v in [alpha[i], gamma[i]] {
                if !v.is_finite() {
                    return Err(Error::Evaluation {
                        point: p.coords().to_vec(),
                        value: v,
                    });
                }
            }
        }
        let windows = sc
            .maxima
            .iter()
            .map(|m| {
                let c = m.point()?;
                Ok((0..points.len()).filter(|&i| points[i].dist(&c) <= window_radius).collect())
            })
            .collect::<Result<Vec<Vec<usize>>>>()?;
        Ok(Kernel {
            alpha,
            gamma,
            w0: sc.i0.weights().to_vec(),
            points,
            windows,
            cap,
        })
    }

    pub fn len(&self) -> usize {
        self.w0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w0.is_empty()
    }

    #[inline]
    fn exponent(&self, i: usize, t: f64, b: f64) -> f64 {
        self.gamma[i] * (self.alpha[i] * b - t)
    }

    fn check(&self, i: usize, e: f64, t: f64) -> Result<()> {
        if e > self.cap || e.is_nan() {
            return Err(Error::Divergence {
                point: self.points[i].coords().to_vec(),
                exponent: e,
                cap: self.cap,
                t,
            });
        }
        Ok(())
    }

    #[inline]
    fn weight(&self, i: usize, t: f64, b: f64) -> Result<f64> {
        let e = self.exponent(i, t, b);
        self.check(i, e, t)?;
        Ok(if self.w0[i] == 0.0 { 0.0 } else { self.w0[i] * e.exp() })
    }

    pub fn weights(&self, t: f64, b: f64) -> Result<Vec<f64>> {
        (0..self.len()).map(|i| self.weight(i, t, b)).collect()
    }

    fn chunk_moments(&self, lo: usize, hi: usize, t: f64, b: f64) -> Result<[f64; 3]> {
        let mut acc = [0.0; 3];
        for i in lo..hi {
            if self.w0[i] == 0.0 {
                continue;
            }
            let w = self.weight(i, t, b)?;
            acc[0] += self.alpha[i] * self.gamma[i] * w;
            acc[1] += w;
            acc[2] += self.gamma[i] * w;
        }
        Ok(acc)
    }

    /// Moments of `I(t)`. Chunks are fixed in size and combined pairwise,
    /// so the result does not depend on the number of threads.
    pub fn moments(&self, t: f64, b: f64) -> Result<Moments> {
        let n = self.len();
        let bounds: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|lo| (lo, (lo + CHUNK).min(n))).collect();
        let parts: Vec<[f64; 3]> = if bounds.len() > 2 {
            bounds
                .par_iter()
                .map(|&(lo, hi)| self.chunk_moments(lo, hi, t, b))
                .collect::<Result<_>>()?
        } else {
            bounds
                .iter()
                .map(|&(lo, hi)| self.chunk_moments(lo, hi, t, b))
                .collect::<Result<_>>()?
        };
        let col = |k: usize| pairwise_sum(&parts.iter().map(|p| p[k]).collect::<Vec<_>>());
        Ok(Moments {
            q: col(0),
            mass: col(1),
            gamma_mass: col(2),
        })
    }

    pub fn window_masses(&self, t: f64, b: f64) -> Result<Vec<f64>> {
        self.windows
            .iter()
            .map(|idx| {
                let w = idx.iter().map(|&i| self.weight(i, t, b)).collect::<Result<Vec<_>>>()?;
                Ok(exact_sum(w))
            })
            .collect()
    }
}

fn check_state(st: &ReducedState) -> Result<()> {
    if !(st.t >= 0.0 && st.b >= 0.0) {
        return Err(Error::Argument(format!("need t >= 0 and B >= 0, got t = {}, B = {}", st.t, st.b)));
    }
    Ok(())
}

/// `I(t, dx) = exp(gamma (alpha B - t)) I0(dx)` on the support of `I0`.
pub fn weights_at(sc: &Scenario, st: &ReducedState) -> Result<DiscreteMeasure> {
    weights_at_capped(sc, st, DEFAULT_EXPONENT_CAP)
}

pub fn weights_at_capped(sc: &Scenario, st: &ReducedState, cap: f64) -> Result<DiscreteMeasure> {
    check_state(st)?;
    if st.t == 0.0 && st.b == 0.0 {
        return Ok(sc.i0.clone());
    }
    let k = Kernel::new(sc, cap, DEFAULT_WINDOW_RADIUS)?;
    Ok(sc.i0.with_weights_unchecked(k.weights(st.t, st.b)?))
}

/// `int alpha gamma I(t, dx)`.
pub fn q_interaction(sc: &Scenario, st: &ReducedState) -> Result<f64> {
    check_state(st)?;
    Ok(Kernel::new(sc, DEFAULT_EXPONENT_CAP, DEFAULT_WINDOW_RADIUS)?.moments(st.t, st.b)?.q)
}

/// One recorded time.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub s: f64,
    pub b: f64,
    pub total_mass: f64,
    pub eta: f64,
    pub window_mass: Vec<f64>,
}

impl Sample {
    pub fn state(&self) -> ReducedState {
        ReducedState::new(self.t, self.s, self.b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub scenario: String,
    pub window_radius: f64,
    pub samples: Vec<Sample>,
    /// Per-sample weights; only filled by `simulate_direct`.
    pub weights: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    /// Sample closest to `t`.
    pub fn at(&self, t: f64) -> &Sample {
        self.samples
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("trajectory has at least one sample")
    }

    pub fn window_series(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.window_mass[i]).collect()
    }

    pub fn to_csv(&self) -> String {
        let nw = self.samples.first().map_or(0, |s| s.window_mass.len());
        let mut out = String::from("t,S,B,total_mass,eta");
        for i in 1..=nw {
            let _ = write!(out, ",mass_w{i}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", s.t, s.s, s.b, s.total_mass, s.eta);
            for w in &s.window_mass {
                let _ = write!(out, ",{w:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Argument("empty trajectory file".into()))?
            .split(',')
            .collect();
        if header.len() < 5 || header[..5] != ["t", "S", "B", "total_mass", "eta"] {
            return Err(Error::Argument(format!("unexpected trajectory header {header:?}")));
        }
        let mut samples = Vec::new();
        for (ln, line) in lines.enumerate() {
            let v = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Argument(format!("row {}: {e}", ln + 2)))?;
            if v.len() != header.len() {
                return Err(Error::Argument(format!("row {} has {} fields", ln + 2, v.len())));
            }
            samples.push(Sample {
                t: v[0],
                s: v[1],
                b: v[2],
                total_mass: v[3],
                eta: v[4],
                window_mass: v[5..].to_vec(),
            });
        }
        Ok(Trajectory {
            scenario: String::new(),
            window_radius: f64::NAN,
            samples,
            weights: None,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// An ODE right-hand side `dy = f(t, y)`.
trait Rhs {
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

struct Reduced<'a> {
    kernel: &'a Kernel,
    lambda: f64,
    theta: f64,
}

impl Rhs for Reduced<'_> {
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let q = self.kernel.moments(t, y[1].max(0.0))?.q;
        dy[0] = self.lambda - self.theta * y[0] - y[0] * q;
        dy[1] = y[0];
        Ok(())
    }
}

/// State `(S, B, w_1, ..., w_n)`.
struct Direct {
    alpha: Vec<f64>,
    gamma: Vec<f64>,
    lambda: f64,
    theta: f64,
}

impl Rhs for Direct {
    fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let s = y[0];
        let w = &y[2..];
        let q = pairwise_sum(
            &w.iter()
                .enumerate()
                .map(|(i, wi)| self.alpha[i] * self.gamma[i] * wi)
                .collect::<Vec<_>>(),
        );
        dy[0] = self.lambda - self.theta * s - s * q;
        dy[1] = s;
        for (i, wi) in w.iter().enumerate() {
            dy[2 + i] = (self.alpha[i] * s - 1.0) * self.gamma[i] * wi;
        }
        Ok(())
    }
}

/// Accepted step data for dense output.
struct Step<'a> {
    t0: f64,
    h: f64,
    y0: &'a [f64],
    f0: &'a [f64],
    y1: &'a [f64],
    f1: &'a [f64],
}

impl Step<'_> {
    /// Cubic Hermite interpolant at `t` in `[t0, t0 + h]`.
    fn interp(&self, t: f64) -> Vec<f64> {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        (0..self.y0.len())
            .map(|k| {
                h00 * self.y0[k] + h10 * self.h * self.f0[k] + h01 * self.y1[k] + h11 * self.h * self.f1[k]
            })
            .collect()
    }
}

/// Adaptive Dormand-Prince integration with a PI controller. `record` is
/// called with `(t, y)` at every requested sample time; `nonneg` lists the
/// components that must stay nonnegative (a step violating this is
/// rejected and halved).
fn integrate<R: Rhs>(
    rhs: &R,
    y0: Vec<f64>,
    cfg: &SolverConfig,
    nonneg: std::ops::Range<usize>,
    mut record: impl FnMut(f64, &[f64]) -> Result<()>,
) -> Result<()> {
    let n = y0.len();
    let t_end = cfg.t_end;
    let targets = cfg.sample_times();
    let stride = match cfg.sampling {
        Sampling::Steps { stride } => stride,
        _ => 0,
    };
    let mut next = 0usize;

    let mut t = 0.0;
    let mut y = y0;
    let mut f = vec![0.0; n];
    rhs.eval(t, &y, &mut f)?;

    let emit_due = |upto: f64, step: Option<&Step>, y: &[f64], next: &mut usize, record: &mut dyn FnMut(f64, &[f64]) -> Result<()>| -> Result<()> {
        if let Some(ts) = &targets {
            while *next < ts.len() && ts[*next] <= upto {
                let tt = ts[*next];
                match step {
                    Some(st) if tt < upto => record(tt, &st.interp(tt))?,
                    _ => record(tt, y)?,
                }
                *next += 1;
            }
        }
        Ok(())
    };

    if targets.is_none() {
        record(0.0, &y)?;
    } else {
        emit_due(0.0, None, &y, &mut next, &mut record)?;
    }

    let mut h = cfg.initial_step.min(cfg.max_step).min(t_end);
    let mut err_prev: f64 = 1.0;
    let mut accepted = 0usize;
    let mut k = vec![vec![0.0; n]; 7];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    while t < t_end {
        let last = t + h >= t_end * (1.0 - 4.0 * f64::EPSILON);
        if last {
            h = t_end - t;
        }
        k[0].copy_from_slice(&f);
        let mut stage_err = None;
        for s in 1..7 {
            for j in 0..n {
                let mut acc = y[j];
                for (m, a) in A[s].iter().enumerate().take(s) {
                    acc += h * a * k[m][j];
                }
                ytmp[j] = acc;
            }
            let (done, rest) = k.split_at_mut(s);
            let _ = done;
            if let Err(e) = rhs.eval(t + C[s] * h, &ytmp, &mut rest[0]) {
                stage_err = Some(e);
                break;
            }
        }
        // A stage hitting the exponent cap mid-step may be an overshoot;
        // retry smaller before giving up.
        if let Some(e) = stage_err {
            h *= 0.5;
            if h < cfg.min_step {
                return Err(e);
            }
            continue;
        }
        // stage 7 was evaluated at y_new (FSAL)
        ynew.copy_from_slice(&ytmp);

        let mut err: f64 = 0.0;
        for j in 0..n {
            let mut e = 0.0;
            for (m, c) in E.iter().enumerate() {
                e += c * k[m][j];
            }
            let sc = cfg.abs_tol + cfg.rel_tol * y[j].abs().max(ynew[j].abs());
            err = err.max((h * e).abs() / sc);
        }
        let negative = ynew[nonneg.clone()].iter().any(|v| *v < 0.0);
        if negative || !err.is_finite() || err > 1.0 {
            let fac = if negative || !err.is_finite() {
                0.5
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 1.0)
            };
            h *= fac;
            if h < cfg.min_step {
                return Err(Error::Stiffness {
                    t,
                    s: y[0],
                    b: y.get(1).copied().unwrap_or(f64::NAN),
                    h,
                });
            }
            continue;
        }

        let t_new = if last { t_end } else { t + h };
        let step = Step {
            t0: t,
            h,
            y0: &y,
            f0: &f,
            y1: &ynew,
            f1: &k[6],
        };
        accepted += 1;
        if targets.is_some() {
            emit_due(t_new, Some(&step), &ynew, &mut next, &mut record)?;
        } else if last || accepted % stride == 0 {
            record(t_new, &ynew)?;
        }

        t = t_new;
        y.copy_from_slice(&ynew);
        f.copy_from_slice(&k[6]);

        let err_c = err.max(1e-10);
        let fac = 0.9 * err_c.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
        h = (h * fac.clamp(0.2, 5.0)).min(cfg.max_step);
        err_prev = err_c;
    }
    Ok(())
}

fn eta_of(astar: f64, t: f64, b: f64) -> f64 {
    if t > 0.0 {
        astar * b / t - 1.0
    } else {
        f64::NAN
    }
}

/// Integrates the reduced system `(S, B)`.
pub fn simulate(sc: &Scenario, cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let kernel = Kernel::new(sc, cfg.exponent_cap, cfg.window_radius)?;
    let astar = alpha_star(sc)?;
    let rhs = Reduced {
        kernel: &kernel,
        lambda: sc.params.lambda,
        theta: sc.params.theta,
    };
    let mut samples = Vec::new();
    integrate(&rhs, vec![sc.s0, 0.0], cfg, 0..1, |t, y| {
        let b = y[1].max(0.0);
        let m = kernel.moments(t, b)?;
        samples.push(Sample {
            t,
            s: y[0],
            b,
            total_mass: m.mass,
            eta: eta_of(astar, t, b),
            window_mass: kernel.window_masses(t, b)?,
        });
        Ok(())
    })?;
    Ok(Trajectory {
        scenario: sc.name.clone(),
        window_radius: cfg.window_radius,
        samples,
        weights: None,
    })
}

/// Integrates `S`, `B` and every weight as separate ODE components.
pub fn simulate_direct(sc: &Scenario, cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if sc.i0.len() > cfg.direct_cap {
        return Err(Error::Capacity {
            what: "support for the direct integrator",
            size: sc.i0.len(),
            cap: cfg.direct_cap,
        });
    }
    let kernel = Kernel::new(sc, cfg.exponent_cap, cfg.window_radius)?;
    let astar = alpha_star(sc)?;
    let rhs = Direct {
        alpha: sc.alpha_values(),
        gamma: sc.gamma_values(),
        lambda: sc.params.lambda,
        theta: sc.params.theta,
    };
    let mut y0 = vec![sc.s0, 0.0];
    y0.extend_from_slice(sc.i0.weights());
    let n = y0.len();
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    integrate(&rhs, y0, cfg, 0..n, |t, y| {
        let w: Vec<f64> = y[2..].iter().map(|v| v.max(0.0)).collect();
        samples.push(Sample {
            t,
            s: y[0],
            b: y[1],
            total_mass: exact_sum(w.iter().copied()),
            eta: eta_of(astar, t, y[1]),
            window_mass: kernel
                .windows
                .iter()
                .map(|idx| exact_sum(idx.iter().map(|&i| w[i])))
                .collect(),
        });
        weights.push(w);
        Ok(())
    })?;
    Ok(Trajectory {
        scenario: sc.name.clone(),
        window_radius: cfg.window_radius,
        samples,
        weights: Some(weights),
    })
}

/// Right-hand side of the budget identity `d/dt (S + mass) = lambda - theta S - int gamma I`.
pub fn budget_rhs(sc: &Scenario, st: &ReducedState) -> Result<f64> {
    check_state(st)?;
    let m = Kernel::new(sc, DEFAULT_EXPONENT_CAP, DEFAULT_WINDOW_RADIUS)?.moments(st.t, st.b)?;
    Ok(sc.params.lambda - sc.params.theta * st.s - m.gamma_mass)
}

fn g(s: f64) -> f64 {
    s - s.ln()
}

/// `V = S* g(S/S*) + sum_k I*_k g(I_k / I*_k)` with `g(s) = s - ln s`.
pub fn lyapunov_value(sc: &Scenario, st: &ReducedState, istar: &DiscreteMeasure, sstar: f64) -> Result<f64> {
    check_state(st)?;
    let a = sc.alpha_values();
    if a.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-12) {
        return Err(Error::Domain("the Lyapunov functional needs alpha constant on the support".into()));
    }
    if istar.len() != sc.i0.len() {
        return Err(Error::Dimension {
            expected: sc.i0.len(),
            got: istar.len(),
        });
    }
    if !(st.s > 0.0 && sstar > 0.0) {
        return Err(Error::Domain(format!("S = {} and S* = {sstar} must be positive", st.s)));
    }
    let gam = sc.gamma_values();
    let mut terms = vec![sstar * g(st.s / sstar)];
    for (k, (&w0, &ik)) in sc.i0.weights().iter().zip(istar.weights()).enumerate() {
        if w0 == 0.0 {
            continue;
        }
        if ik <= 0.0 {
            return Err(Error::Domain(format!("i* vanishes at support index {k}")));
        }
        // I_k / I*_k computed from the exponent to avoid underflow
        let ratio = (gam[k] * (a[k] * st.b - st.t) - (ik / w0).ln()).exp();
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::Domain(format!("weight ratio {ratio} at support index {k}")));
        }
        terms.push(ik * g(ratio));
    }
    Ok(exact_sum(terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, TraitFn};
    use crate::scenarios::{build, embed_finite, ScenarioName};

    fn single(s0: f64) -> Scenario {
        let mut sc = build(&ScenarioName::SingleAtom, None).unwrap();
        sc.s0 = s0;
        sc
    }

    #[test]
    fn weights_at_examples() {
        let sc = build(&ScenarioName::Fig7, Some(401)).unwrap();
        assert_eq!(weights_at(&sc, &ReducedState::new(0.0, 2.0, 0.0)).unwrap(), sc.i0);

        let one = single(1.0);
        let w = weights_at(&one, &ReducedState::new(7.0, 1.0, 7.0)).unwrap();
        assert_eq!(w.weights(), &[1.0]);

        // support retained when weights underflow
        let w = weights_at(&sc, &ReducedState::new(5000.0, 1.0, 0.0)).unwrap();
        assert_eq!(w.points(), sc.i0.points());
        assert!(w.weights().iter().all(|&x| x == 0.0));

        let err = weights_at(&one, &ReducedState::new(0.0, 1.0, 800.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn q_interaction_examples() {
        let mut z = single(1.0);
        z.i0 = z.i0.with_weights(vec![0.0]).unwrap();
        assert_eq!(q_interaction(&z, &ReducedState::new(3.0, 1.0, 1.0)).unwrap(), 0.0);
        assert_eq!(q_interaction(&single(1.0), &ReducedState::new(0.0, 1.0, 0.0)).unwrap(), 1.0);
    }

    #[test]
    fn moments_do_not_depend_on_thread_count() {
        let sc = build(&ScenarioName::Fig1, Some(121)).unwrap();
        let k = Kernel::new(&sc, 700.0, 0.1).unwrap();
        let a = k.moments(3.0, 2.5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| k.moments(3.0, 2.5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn single_atom_equilibrium() {
        let tr = simulate(&single(1.0), &SolverConfig::with_t_end(60.0)).unwrap();
        let last = tr.last();
        assert!((last.s - 1.0).abs() < 1e-6);
        assert!((last.total_mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_population_relaxes_to_lambda_over_theta() {
        let sc = build(&ScenarioName::ZeroI0, None).unwrap();
        let tr = simulate(&sc, &SolverConfig::with_t_end(40.0)).unwrap();
        assert!((tr.last().s - 2.0).abs() < 1e-8);
        assert!(tr.samples.iter().all(|s| s.total_mass == 0.0));
        let d = simulate_direct(&sc, &SolverConfig::with_t_end(40.0)).unwrap();
        for (a, b) in tr.samples.iter().zip(&d.samples) {
            assert!((a.s - b.s).abs() <= 1e-9 * a.s);
        }
    }

    #[test]
    fn direct_matches_reduced() {
        let cfg = SolverConfig::with_t_end(10.0).sampling(Sampling::Times { times: vec![10.0] });
        let sc = single(1.0);
        let (a, b) = (simulate(&sc, &cfg).unwrap(), simulate_direct(&sc, &cfg).unwrap());
        assert!((a.last().s - b.last().s).abs() <= 1e-8 * a.last().s);

        let sc = embed_finite(&[1.0, 0.9, 1.2], &[1.0, 2.0, 0.5], &[0.3, 1.0, 0.2], ModelParams::new(2.0, 1.0).unwrap())
            .unwrap();
        let cfg = SolverConfig::with_t_end(50.0).sampling(Sampling::Times { times: vec![50.0] });
        let oracle = SolverConfig {
            rel_tol: 1e-11,
            abs_tol: 1e-30,
            ..cfg.clone()
        };
        let (a, b) = (simulate(&sc, &cfg).unwrap(), simulate_direct(&sc, &oracle).unwrap());
        let wa = weights_at(&sc, &a.last().state()).unwrap();
        let wb = &b.weights.as_ref().unwrap()[0];
        assert!((a.last().s - b.last().s).abs() <= 1e-6 * a.last().s);
        for (x, y) in wa.weights().iter().zip(wb) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12), "{x} vs {y}");
        }
    }

    #[test]
    fn direct_capacity() {
        let sc = build(&ScenarioName::Fig1, Some(151)).unwrap();
        let err = simulate_direct(&sc, &SolverConfig::with_t_end(1.0)).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn lyapunov_examples() {
        let sc = single(2.0);
        let istar = sc.i0.with_weights(vec![1.0]).unwrap();
        let v = lyapunov_value(&sc, &ReducedState::new(0.0, 2.0, 0.0), &istar, 1.0).unwrap();
        assert!((v - ((2.0 - 2f64.ln()) + 1.0)).abs() < 1e-14);
        // at equilibrium (S = S*, I = I*) V = S* + sum I*
        let v = lyapunov_value(&sc, &ReducedState::new(4.0, 1.0, 4.0), &istar, 1.0).unwrap();
        assert!((v - 2.0).abs() < 1e-14);

        let bad = sc.i0.with_weights(vec![0.0]).unwrap();
        assert!(lyapunov_value(&sc, &ReducedState::new(0.0, 2.0, 0.0), &bad, 1.0).is_err());
    }

    #[test]
    fn negative_s_is_never_recorded() {
        // huge population drives S down hard at the start
        let mut sc = single(0.01);
        sc.i0 = sc.i0.with_weights(vec![200.0]).unwrap();
        sc.gamma = TraitFn::constant(1.0);
        let tr = simulate(&sc, &SolverConfig::with_t_end(20.0)).unwrap();
        assert!(tr.samples.iter().all(|s| s.s >= 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let sc = build(&ScenarioName::Fig7, Some(201)).unwrap();
        let cfg = SolverConfig::with_t_end(5.0).sampling(Sampling::Uniform { n: 10 });
        let tr = simulate(&sc, &cfg).unwrap();
        let csv = tr.to_csv();
        assert!(csv.starts_with("t,S,B,total_mass,eta,mass_w1,mass_w2\n"));
        let back = Trajectory::from_csv(&csv).unwrap();
        assert_eq!(back.samples.len(), tr.samples.len());
        for (a, b) in back.samples.iter().zip(&tr.samples) {
            assert_eq!(a.s, b.s);
            assert_eq!(a.b, b.b);
            assert_eq!(a.window_mass, b.window_mass);
            assert!(a.eta == b.eta || (a.eta.is_nan() && b.eta.is_nan()));
        }
    }
}
