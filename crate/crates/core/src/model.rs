//! Model constants, trait functions and scenario assembly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Point, SupportSet};

/// Default tolerance used to decide ties with the discrete maximum of alpha.
pub const ARGMAX_TOL: f64 = 1e-12;

/// Resource renewal rate `lambda` and disappearance rate `theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub theta: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, theta: f64) -> Result<Self> {
        let p = ModelParams { lambda, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite() && self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Validation(format!(
                "lambda and theta must be positive, got {} and {}",
                self.lambda, self.theta
            )));
        }
        Ok(())
    }
}

/// Trait function as an expression tree. Serialized with an `"op"` tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum TraitFn {
    Const { value: f64 },
    /// Projection on coordinate `axis`.
    Coord { axis: usize },
    /// Triangular bump of height one supported on `[a, b]`, in coordinate `axis`.
    Tri { axis: usize, a: f64, b: f64 },
    /// Downward parabola of height one supported on `[a, b]`, in coordinate `axis`.
    Par { axis: usize, a: f64, b: f64 },
    /// Indicator of the closed interval `[a, b]` in coordinate `axis`.
    Ind { axis: usize, a: f64, b: f64 },
    Add { terms: Vec<TraitFn> },
    Mul { factors: Vec<TraitFn> },
    Scale { c: f64, f: Box<TraitFn> },
    /// `1 / (1 + f)`.
    Recip1p { f: Box<TraitFn> },
    Min { c: f64, f: Box<TraitFn> },
    Max { c: f64, f: Box<TraitFn> },
}

impl TraitFn {
    pub fn constant(value: f64) -> Self {
        TraitFn::Const { value }
    }

    pub fn coord(axis: usize) -> Self {
        TraitFn::Coord { axis }
    }

    pub fn tri(axis: usize, a: f64, b: f64) -> Self {
        TraitFn::Tri { axis, a, b }
    }

    pub fn par(axis: usize, a: f64, b: f64) -> Self {
        TraitFn::Par { axis, a, b }
    }

    pub fn ind(axis: usize, a: f64, b: f64) -> Self {
        TraitFn::Ind { axis, a, b }
    }

    pub fn add(terms: Vec<TraitFn>) -> Self {
        TraitFn::Add { terms }
    }

    pub fn mul(factors: Vec<TraitFn>) -> Self {
        TraitFn::Mul { factors }
    }

    pub fn scale(c: f64, f: TraitFn) -> Self {
        TraitFn::Scale { c, f: Box::new(f) }
    }

    pub fn recip1p(f: TraitFn) -> Self {
        TraitFn::Recip1p { f: Box::new(f) }
    }

    pub fn min_c(c: f64, f: TraitFn) -> Self {
        TraitFn::Min { c, f: Box::new(f) }
    }

    pub fn max_c(c: f64, f: TraitFn) -> Self {
        TraitFn::Max { c, f: Box::new(f) }
    }

    /// `1 / (2 f)`, written as `recip1p(2 f - 1)`.
    pub fn half_reciprocal(f: TraitFn) -> Self {
        TraitFn::recip1p(TraitFn::add(vec![TraitFn::scale(2.0, f), TraitFn::constant(-1.0)]))
    }

    pub fn eval(&self, p: &Point) -> f64 {
        let coord = |axis: usize| p.coords().get(axis).copied().unwrap_or(f64::NAN);
        match self {
            TraitFn::Const { value } => *value,
            TraitFn::Coord { axis } => coord(*axis),
            TraitFn::Tri { axis, a, b } => triangular(coord(*axis), *a, *b),
            TraitFn::Par { axis, a, b } => parabolic(coord(*axis), *a, *b),
            TraitFn::Ind { axis, a, b } => {
                let x = coord(*axis);
                if x >= *a && x <= *b {
                    1.0
                } else {
                    0.0
                }
            }
            TraitFn::Add { terms } => terms.iter().map(|t| t.eval(p)).sum(),
            TraitFn::Mul { factors } => factors.iter().map(|t| t.eval(p)).product(),
            TraitFn::Scale { c, f } => c * f.eval(p),
            TraitFn::Recip1p { f } => 1.0 / (1.0 + f.eval(p)),
            TraitFn::Min { c, f } => f.eval(p).min(*c),
            TraitFn::Max { c, f } => f.eval(p).max(*c),
        }
    }

    /// Largest coordinate axis referenced by the expression.
    pub fn max_axis(&self) -> Option<usize> {
        match self {
            TraitFn::Const { .. } => None,
            TraitFn::Coord { axis }
            | TraitFn::Tri { axis, .. }
            | TraitFn::Par { axis, .. }
            | TraitFn::Ind { axis, .. } => Some(*axis),
            TraitFn::Add { terms } => terms.iter().filter_map(TraitFn::max_axis).max(),
            TraitFn::Mul { factors } => factors.iter().filter_map(TraitFn::max_axis).max(),
            TraitFn::Scale { f, .. }
            | TraitFn::Recip1p { f }
            | TraitFn::Min { f, .. }
            | TraitFn::Max { f, .. } => f.max_axis(),
        }
    }
}

/// Triangular function of height one and support `[a, b]`.
pub fn triangular(x: f64, a: f64, b: f64) -> f64 {
    (1.0 - (2.0 * x - (a + b)).abs() / (b - a)).max(0.0)
}

/// Downward parabolic function of height one and support `[a, b]`.
pub fn parabolic(x: f64, a: f64, b: f64) -> f64 {
    let u = a + b - 2.0 * x;
    (1.0 - u * u / ((a - b) * (a - b))).max(0.0)
}

/// A declared maximum of alpha: location, vanishing order of the initial
/// density there, gamma at the point and the Hessian of alpha.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximumSpec {
    pub x: Vec<f64>,
    pub kappa: f64,
    pub gamma_at: f64,
    pub alpha_second: Vec<Vec<f64>>,
    /// Local (non-global) maxima are tracked for window masses only.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub global: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

impl MaximumSpec {
    pub fn new_1d(x: f64, kappa: f64, gamma_at: f64, alpha_second: f64) -> Self {
        MaximumSpec {
            x: vec![x],
            kappa,
            gamma_at,
            alpha_second: vec![vec![alpha_second]],
            global: true,
        }
    }

    pub fn local(mut self) -> Self {
        self.global = false;
        self
    }

    pub fn point(&self) -> Result<Point> {
        Point::new(&self.x)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.x.len() != dim {
            return Err(Error::Validation(format!("maximum {:?} is not {dim}-dimensional", self.x)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Validation(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.gamma_at > 0.0 && self.gamma_at.is_finite()) {
            return Err(Error::Validation(format!("gamma_at must be > 0, got {}", self.gamma_at)));
        }
        let h = &self.alpha_second;
        if h.len() != dim || h.iter().any(|r| r.len() != dim) {
            return Err(Error::Validation("alpha_second must be N x N".into()));
        }
        let negdef = match dim {
            1 => h[0][0] < 0.0,
            2 => {
                (h[0][1] - h[1][0]).abs() <= 1e-12 * (1.0 + h[0][1].abs())
                    && h[0][0] < 0.0
                    && h[0][0] * h[1][1] - h[0][1] * h[1][0] > 0.0
            }
            _ => false,
        };
        if !negdef {
            return Err(Error::Validation(format!(
                "alpha_second at {:?} is not symmetric negative definite",
                self.x
            )));
        }
        Ok(())
    }
}

/// Declared limits of a truncated countable system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountableLimits {
    pub alpha_star: f64,
    pub gamma_inf: f64,
}

/// Everything needed to run the model: constants, trait functions,
/// initial data and optional structural metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub params: ModelParams,
    pub alpha: TraitFn,
    pub gamma: TraitFn,
    pub s0: f64,
    pub i0: DiscreteMeasure,
    pub maxima: Vec<MaximumSpec>,
    /// Declared lower bound of gamma; checked on the support.
    pub gamma_floor: f64,
    pub reg_bound_claimed: bool,
    pub alpha_constant: bool,
    pub countable_limits: Option<CountableLimits>,
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.i0.dim()
    }

    pub fn alpha_values(&self) -> Vec<f64> {
        self.i0.points().iter().map(|p| self.alpha.eval(p)).collect()
    }

    pub fn gamma_values(&self) -> Vec<f64> {
        self.i0.points().iter().map(|p| self.gamma.eval(p)).collect()
    }

    pub fn global_maxima(&self) -> impl Iterator<Item = &MaximumSpec> {
        self.maxima.iter().filter(|m| m.global)
    }

    /// Structural checks: parameters, trait functions finite on the
    /// support, gamma above its floor, maxima well formed and on support.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.s0 >= 0.0 && self.s0.is_finite()) {
            return Err(Error::Validation(format!("S0 must be >= 0, got {}", self.s0)));
        }
        let dim = self.dim();
        for (name, f) in [("alpha", &self.alpha), ("gamma", &self.gamma)] {
            if let Some(axis) = f.max_axis() {
                if axis >= dim {
                    return Err(Error::Validation(format!("{name} uses axis {axis} in dimension {dim}")));
                }
            }
        }
        if !(self.gamma_floor > 0.0) {
            return Err(Error::Validation("gamma floor must be positive".into()));
        }
        for p in self.i0.points() {
            let (a, g) = (self.alpha.eval(p), self.gamma.eval(p));
            if !a.is_finite() || !g.is_finite() {
                return Err(Error::Validation(format!("alpha/gamma not finite at {:?}", p.coords())));
            }
            if g < self.gamma_floor * (1.0 - 1e-12) {
                return Err(Error::Validation(format!(
                    "gamma = {g} below declared floor {} at {:?}",
                    self.gamma_floor,
                    p.coords()
                )));
            }
        }
        if !self.maxima.is_empty() {
            let spacing = self.support_spacing();
            for m in &self.maxima {
                m.validate(dim)?;
                let x = m.point()?;
                let hit = self.i0.points().iter().position(|p| p.matches(&x, 1e-12));
                let Some(i) = hit else {
                    return Err(Error::Validation(format!("maximum {:?} is not a support point", m.x)));
                };
                let g = self.gamma.eval(&self.i0.points()[i]);
                if (g - m.gamma_at).abs() > 1e-9 * g {
                    return Err(Error::Validation(format!(
                        "declared gamma_at {} differs from gamma({:?}) = {g}",
                        m.gamma_at, m.x
                    )));
                }
                // interior: support points on both sides of every axis
                for axis in 0..dim {
                    for dir in [-1.0, 1.0] {
                        let mut c = m.x.clone();
                        c[axis] += dir * spacing;
                        let q = Point::new(&c)?;
                        if !self.i0.points().iter().any(|p| p.matches(&q, 1e-9 * spacing.max(1.0))) {
                            return Err(Error::Validation(format!(
                                "maximum {:?} is not interior to the support",
                                m.x
                            )));
                        }
                    }
                }
            }
        }
        if self.alpha_constant {
            let a = self.alpha_values();
            if a.windows(2).any(|w| (w[0] - w[1]).abs() > ARGMAX_TOL) {
                return Err(Error::Validation("alpha_constant flag set but alpha varies".into()));
            }
        }
        Ok(())
    }

    /// Grid spacing along the first axis (1.0 for atomic measures).
    fn support_spacing(&self) -> f64 {
        match self.i0.cell_volumes() {
            Some(v) if !v.is_empty() => v[0].powf(1.0 / self.dim() as f64),
            _ => 1.0,
        }
    }

    pub fn to_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            name: Some(self.name.clone()),
            lambda: self.params.lambda,
            theta: self.params.theta,
            s0: self.s0,
            dim: self.dim(),
            alpha: self.alpha.clone(),
            gamma: self.gamma.clone(),
            i0: MeasureSource::Inline(self.i0.clone()),
            maxima: self.maxima.clone(),
            gamma_floor: Some(self.gamma_floor),
            reg_bound_claimed: self.reg_bound_claimed,
            alpha_constant: self.alpha_constant,
            countable_limits: self.countable_limits,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_config())?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cfg: ScenarioConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.into_scenario(path.parent())
    }
}

/// Initial measure given inline or as a path to a measure file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureSource {
    Path { path: String },
    Inline(DiscreteMeasure),
}

/// On-disk scenario description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub lambda: f64,
    pub theta: f64,
    #[serde(rename = "S0")]
    pub s0: f64,
    pub dim: usize,
    pub alpha: TraitFn,
    pub gamma: TraitFn,
    #[serde(rename = "I0")]
    pub i0: MeasureSource,
    #[serde(default)]
    pub maxima: Vec<MaximumSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_floor: Option<f64>,
    #[serde(default)]
    pub reg_bound_claimed: bool,
    #[serde(default)]
    pub alpha_constant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub countable_limits: Option<CountableLimits>,
}

impl ScenarioConfig {
    /// Resolves the initial measure (relative paths against `base`) and
    /// validates the result.
    pub fn into_scenario(self, base: Option<&Path>) -> Result<Scenario> {
        let i0 = match self.i0 {
            MeasureSource::Inline(m) => m,
            MeasureSource::Path { path } => {
                let p = Path::new(&path);
                let full = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.to_path_buf(),
                };
                DiscreteMeasure::read_json(full)?
            }
        };
        if i0.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: i0.dim(),
            });
        }
        let gamma_floor = match self.gamma_floor {
            Some(g) => g,
            None => i0
                .points()
                .iter()
                .map(|p| self.gamma.eval(p))
                .fold(f64::INFINITY, f64::min)
                .min(1.0),
        };
        let sc = Scenario {
            name: self.name.unwrap_or_else(|| "custom".into()),
            params: ModelParams {
                lambda: self.lambda,
                theta: self.theta,
            },
            alpha: self.alpha,
            gamma: self.gamma,
            s0: self.s0,
            i0,
            maxima: self.maxima,
            gamma_floor,
            reg_bound_claimed: self.reg_bound_claimed,
            alpha_constant: self.alpha_constant,
            countable_limits: self.countable_limits,
        };
        sc.validate()?;
        Ok(sc)
    }
}

/// Discrete maximum of alpha over the support points of I0.
pub fn alpha_star(sc: &Scenario) -> Result<f64> {
    if sc.i0.is_empty() {
        return Err(Error::Argument("alpha* of an empty initial measure".into()));
    }
    Ok(sc
        .i0
        .points()
        .iter()
        .map(|p| sc.alpha.eval(p))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Basic reproduction number `lambda * alpha* / theta`.
pub fn r0(sc: &Scenario) -> Result<f64> {
    Ok(sc.params.lambda * alpha_star(sc)? / sc.params.theta)
}

/// Support indices with `alpha >= alpha* - tol`. An empty I0 gives the empty set.
pub fn argmax_set(sc: &Scenario, tol: f64) -> SupportSet {
    let Ok(top) = alpha_star(sc) else {
        return SupportSet::empty();
    };
    let a = sc.alpha_values();
    SupportSet::from_predicate(a.len(), |i| a[i] >= top - tol)
}

/// Superlevel set `L_eps = { alpha >= alpha* - eps }` on the support.
pub fn level_set(sc: &Scenario, eps: f64) -> SupportSet {
    argmax_set(sc, eps)
}

/// Maximum of gamma over the selected support points.
pub fn gamma_star_on(sc: &Scenario, s: &SupportSet) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Argument("gamma* over an empty set".into()));
    }
    let pts = sc.i0.points();
    Ok(s.indices()
        .iter()
        .map(|&i| sc.gamma.eval(&pts[i]))
        .fold(f64::NEG_INFINITY, f64::max))
}
