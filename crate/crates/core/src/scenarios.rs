//! Built-in scenarios: the two-dimensional and one-dimensional figure
//! set-ups, finite and truncated countable systems, and a few small cases.
//!
//! Figure builders use node-aligned grids on `[-1, 1]^N` so that the
//! declared maxima and the argmax columns fall exactly on grid points.
//! The resource starts at `S0 = lambda / theta`.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, GridAxis, Point};
use crate::model::{CountableLimits, MaximumSpec, ModelParams, Scenario, TraitFn};

pub const DEFAULT_GRID_2D: usize = 201;
pub const DEFAULT_GRID_1D: usize = 4001;
pub const DEFAULT_COUNTABLE_K: usize = 200;

/// Half-width of the parabolic bumps of the one-dimensional figures.
pub const DELTA: f64 = 0.2;
pub const X1: f64 = -0.5;
pub const X2: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioName {
    Fig1,
    Fig4,
    Fig7,
    Fig8,
    Finite {
        alphas: Vec<f64>,
        gammas: Vec<f64>,
        w0s: Vec<f64>,
        params: ModelParams,
    },
    Countable { k: usize },
    SingleAtom,
    ConstantAlphaLyapunov,
    /// `fig7_1d` traits with `lambda = 0.5`, so `R0 = 0.5`.
    Subcritical,
    /// `fig7_1d` traits with the zero initial population.
    ZeroI0,
    Custom(PathBuf),
}

impl ScenarioName {
    /// Two species with equal alpha, `gamma = (1, 2)`.
    pub fn finite_pair() -> Self {
        ScenarioName::Finite {
            alphas: vec![1.0, 1.0],
            gammas: vec![1.0, 2.0],
            w0s: vec![1.0, 1.0],
            params: ModelParams { lambda: 2.0, theta: 1.0 },
        }
    }

    /// Three species, the last one strictly less fit.
    pub fn finite_triple() -> Self {
        ScenarioName::Finite {
            alphas: vec![1.0, 1.0, 0.8],
            gammas: vec![1.0, 2.0, 1.5],
            w0s: vec![1.0, 1.0, 1.0],
            params: ModelParams { lambda: 2.0, theta: 1.0 },
        }
    }

    /// Every built-in name that needs no external input.
    pub fn builtins() -> Vec<ScenarioName> {
        vec![
            ScenarioName::Fig1,
            ScenarioName::Fig4,
            ScenarioName::Fig7,
            ScenarioName::Fig8,
            ScenarioName::finite_pair(),
            ScenarioName::finite_triple(),
            ScenarioName::Countable { k: DEFAULT_COUNTABLE_K },
            ScenarioName::SingleAtom,
            ScenarioName::ConstantAlphaLyapunov,
            ScenarioName::Subcritical,
            ScenarioName::ZeroI0,
        ]
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioName::Fig1 => write!(f, "fig1_2d"),
            ScenarioName::Fig4 => write!(f, "fig4_2d"),
            ScenarioName::Fig7 => write!(f, "fig7_1d"),
            ScenarioName::Fig8 => write!(f, "fig8_transient_1d"),
            ScenarioName::Finite { alphas, .. } => write!(f, "finite{}", alphas.len()),
            ScenarioName::Countable { k } => write!(f, "countable_truncated{k}"),
            ScenarioName::SingleAtom => write!(f, "single_atom"),
            ScenarioName::ConstantAlphaLyapunov => write!(f, "constant_alpha_lyapunov"),
            ScenarioName::Subcritical => write!(f, "subcritical_1d"),
            ScenarioName::ZeroI0 => write!(f, "zero_i0"),
            ScenarioName::Custom(p) => write!(f, "custom:{}", p.display()),
        }
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fig1_2d" | "fig1" => ScenarioName::Fig1,
            "fig4_2d" | "fig4" => ScenarioName::Fig4,
            "fig7_1d" | "fig7" => ScenarioName::Fig7,
            "fig8_transient_1d" | "fig8" => ScenarioName::Fig8,
            "finite" | "finite2" => ScenarioName::finite_pair(),
            "finite3" => ScenarioName::finite_triple(),
            "single_atom" => ScenarioName::SingleAtom,
            "constant_alpha_lyapunov" => ScenarioName::ConstantAlphaLyapunov,
            "subcritical_1d" | "subcritical" => ScenarioName::Subcritical,
            "zero_i0" => ScenarioName::ZeroI0,
            _ => {
                if let Some(k) = s.strip_prefix("countable_truncated") {
                    let k = if k.is_empty() {
                        DEFAULT_COUNTABLE_K
                    } else {
                        k.trim_start_matches(['_', ':'])
                            .parse()
                            .map_err(|_| Error::Argument(format!("bad truncation level in {s:?}")))?
                    };
                    ScenarioName::Countable { k }
                } else if let Some(p) = s.strip_prefix("custom:") {
                    ScenarioName::Custom(PathBuf::from(p))
                } else if s.ends_with(".json") {
                    ScenarioName::Custom(PathBuf::from(s))
                } else {
                    return Err(Error::Argument(format!("unknown scenario {s:?}")));
                }
            }
        })
    }
}

/// Builds a scenario. `resolution` is the number of grid nodes per axis
/// (figures) or the truncation level (countable); `None` picks the default.
pub fn build(name: &ScenarioName, resolution: Option<usize>) -> Result<Scenario> {
    if resolution == Some(0) {
        return Err(Error::Argument("resolution must be positive".into()));
    }
    let sc = match name {
        ScenarioName::Fig1 => fig1(resolution.unwrap_or(DEFAULT_GRID_2D))?,
        ScenarioName::Fig4 => fig4(resolution.unwrap_or(DEFAULT_GRID_2D))?,
        ScenarioName::Fig7 => fig7(resolution.unwrap_or(DEFAULT_GRID_1D))?,
        ScenarioName::Fig8 => fig8(resolution.unwrap_or(DEFAULT_GRID_1D))?,
        ScenarioName::Finite {
            alphas,
            gammas,
            w0s,
            params,
        } => {
            let mut sc = embed_finite(alphas, gammas, w0s, *params)?;
            sc.name = name.to_string();
            sc
        }
        ScenarioName::Countable { k } => countable(resolution.unwrap_or(*k))?,
        ScenarioName::SingleAtom => {
            let mut sc = embed_finite(&[1.0], &[1.0], &[1.0], ModelParams::new(2.0, 1.0)?)?;
            sc.name = name.to_string();
            sc
        }
        ScenarioName::ConstantAlphaLyapunov => constant_alpha_lyapunov()?,
        ScenarioName::Subcritical => {
            let mut sc = fig7(resolution.unwrap_or(DEFAULT_GRID_1D))?;
            sc.params = ModelParams::new(0.5, 1.0)?;
            sc.s0 = 0.5;
            sc.name = name.to_string();
            sc
        }
        ScenarioName::ZeroI0 => {
            let mut sc = fig7(resolution.unwrap_or(401))?;
            sc.i0 = sc.i0.with_weights(vec![0.0; sc.i0.len()])?;
            sc.name = name.to_string();
            sc
        }
        ScenarioName::Custom(path) => Scenario::read_json(path)?,
    };
    sc.validate()?;
    Ok(sc)
}

fn grid_axis(n: usize) -> Result<GridAxis> {
    if n < 3 {
        return Err(Error::Argument(format!("grid needs at least 3 nodes, got {n}")));
    }
    Ok(GridAxis::nodes(-1.0, 1.0, n))
}

fn cos_bump(x: f64) -> f64 {
    if (-0.5..=0.5).contains(&x) {
        (PI * x).cos()
    } else {
        0.0
    }
}

fn fig_2d(name: &str, n: usize, alpha: TraitFn) -> Result<Scenario> {
    let ax = grid_axis(n)?;
    let i0 = DiscreteMeasure::from_density(&[ax, ax], |p| cos_bump(p.coords()[0]) * cos_bump(p.coords()[1]))?;
    let params = ModelParams::new(2.0, 1.0)?;
    Ok(Scenario {
        name: name.into(),
        params,
        gamma: TraitFn::half_reciprocal(alpha.clone()),
        alpha,
        s0: params.lambda / params.theta,
        i0,
        maxima: vec![],
        gamma_floor: 1.0 / 3.0,
        reg_bound_claimed: false,
        alpha_constant: false,
        countable_limits: None,
    })
}

/// alpha = 0.5 + (T[-0.4,-0.2](x1) + 1[0.2,0.8](x1)) 1[-0.6,0.6](x2), gamma = 1/(2 alpha).
fn fig1(n: usize) -> Result<Scenario> {
    let alpha = TraitFn::add(vec![
        TraitFn::constant(0.5),
        TraitFn::mul(vec![
            TraitFn::add(vec![TraitFn::tri(0, -0.4, -0.2), TraitFn::ind(0, 0.2, 0.8)]),
            TraitFn::ind(1, -0.6, 0.6),
        ]),
    ]);
    fig_2d("fig1_2d", n, alpha)
}

/// alpha = 0.5 + T[-0.1,0.8](x1) 1[-0.6,0.6](x2), gamma = 1/(2 alpha).
///
/// Uses the triangular bump. A parabolic bump on the same interval would
/// peak at the same x1 = 0.35 over the same argmax column.
fn fig4(n: usize) -> Result<Scenario> {
    let alpha = TraitFn::add(vec![
        TraitFn::constant(0.5),
        TraitFn::mul(vec![TraitFn::tri(0, -0.1, 0.8), TraitFn::ind(1, -0.6, 0.6)]),
    ]);
    let mut sc = fig_2d("fig4_2d", n, alpha)?;
    sc.reg_bound_claimed = true;
    Ok(sc)
}

fn bump(x: f64) -> TraitFn {
    TraitFn::par(0, x - DELTA, x + DELTA)
}

fn fig_1d_gamma() -> TraitFn {
    TraitFn::recip1p(TraitFn::add(vec![bump(X1), TraitFn::scale(3.0, bump(X2))]))
}

fn fig_1d(name: &str, n: usize, alpha: TraitFn, (c1, k1): (f64, i32), maxima: Vec<MaximumSpec>) -> Result<Scenario> {
    let ax = grid_axis(n)?;
    let i0 = DiscreteMeasure::from_density(&[ax], |p| {
        let x = p.x();
        if !(-1.0..=1.0).contains(&x) {
            return 0.0;
        }
        (c1 * (x - X1).powi(k1)).min(1.0) * (4.0 * (x - X2).powi(2)).min(1.0)
    })?;
    let params = ModelParams::new(2.0, 1.0)?;
    Ok(Scenario {
        name: name.into(),
        params,
        alpha,
        gamma: fig_1d_gamma(),
        s0: params.lambda / params.theta,
        i0,
        maxima,
        gamma_floor: 0.2,
        reg_bound_claimed: false,
        alpha_constant: false,
        countable_limits: None,
    })
}

/// Two equal parabolic maxima at -0.5 and 0.5; I0 vanishes to order 8 and 2.
fn fig7(n: usize) -> Result<Scenario> {
    let a2 = -2.0 / (DELTA * DELTA);
    fig_1d(
        "fig7_1d",
        n,
        TraitFn::add(vec![bump(X1), bump(X2)]),
        (1024.0, 8),
        vec![
            MaximumSpec::new_1d(X1, 8.0, 0.5, a2),
            MaximumSpec::new_1d(X2, 2.0, 0.25, a2),
        ],
    )
}

/// As fig7 but the bump at -0.5 is lowered to 0.95 and both orders are 2.
/// The maximum at -0.5 is only local.
fn fig8(n: usize) -> Result<Scenario> {
    let a2 = -2.0 / (DELTA * DELTA);
    fig_1d(
        "fig8_transient_1d",
        n,
        TraitFn::add(vec![TraitFn::scale(0.95, bump(X1)), bump(X2)]),
        (4.0, 2),
        vec![
            MaximumSpec::new_1d(X1, 2.0, 0.5, 0.95 * a2).local(),
            MaximumSpec::new_1d(X2, 2.0, 0.25, a2),
        ],
    )
}

/// Piecewise-constant trait taking `vals[i]` near the integer `i`.
fn atom_trait(vals: &[f64]) -> TraitFn {
    TraitFn::add(
        vals.iter()
            .enumerate()
            .map(|(i, &v)| TraitFn::scale(v, TraitFn::ind(0, i as f64 - 0.25, i as f64 + 0.25)))
            .collect(),
    )
}

/// Finite system as an atomic measure: species `i` sits at `x = i`.
pub fn embed_finite(alphas: &[f64], gammas: &[f64], w0s: &[f64], params: ModelParams) -> Result<Scenario> {
    let n = alphas.len();
    if n == 0 || gammas.len() != n || w0s.len() != n {
        return Err(Error::Argument(format!(
            "species lists must have equal positive length, got {}, {}, {}",
            n,
            gammas.len(),
            w0s.len()
        )));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::Argument(format!("gamma must be positive, got {g}")));
    }
    params.validate()?;
    let gmin = gammas.iter().copied().fold(f64::INFINITY, f64::min);
    let i0 = DiscreteMeasure::atomic(1, (0..n).map(|i| Point::d1(i as f64)).collect(), w0s.to_vec())?;
    Ok(Scenario {
        name: format!("finite{n}"),
        params,
        alpha: atom_trait(alphas),
        gamma: TraitFn::max_c(gmin, atom_trait(gammas)),
        s0: params.lambda / params.theta,
        i0,
        maxima: vec![],
        gamma_floor: gmin,
        reg_bound_claimed: false,
        alpha_constant: false,
        countable_limits: None,
    })
}

/// Truncated countable system with `alpha_n = 1 - 1/(n+2)`,
/// `gamma_n = 1 + 1/(n+1)`, `w0_n = 1/(n+1)^2`; limits (1, 1).
fn countable(k: usize) -> Result<Scenario> {
    let alphas: Vec<f64> = (0..k).map(|n| 1.0 - 1.0 / (n as f64 + 2.0)).collect();
    let gammas: Vec<f64> = (0..k).map(|n| 1.0 + 1.0 / (n as f64 + 1.0)).collect();
    let w0s: Vec<f64> = (0..k).map(|n| 1.0 / ((n as f64 + 1.0) * (n as f64 + 1.0))).collect();
    let mut sc = embed_finite(&alphas, &gammas, &w0s, ModelParams::new(2.0, 1.0)?)?;
    sc.name = format!("countable_truncated{k}");
    sc.countable_limits = Some(CountableLimits {
        alpha_star: 1.0,
        gamma_inf: 1.0,
    });
    Ok(sc)
}

/// Three atoms with alpha = 1 and distinct gammas, started off equilibrium.
fn constant_alpha_lyapunov() -> Result<Scenario> {
    let mut sc = embed_finite(&[1.0, 1.0, 1.0], &[1.0, 0.5, 2.0], &[1.0, 0.5, 0.25], ModelParams::new(2.0, 1.0)?)?;
    sc.name = "constant_alpha_lyapunov".into();
    sc.alpha = TraitFn::constant(1.0);
    sc.s0 = 3.0;
    sc.alpha_constant = true;
    Ok(sc)
}

/// Zero measure with the same dimension and kind as `m`.
pub fn zero_like(m: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    DiscreteMeasure::zero(m.dim(), m.kind())
}

/// Convenience used by tests: an atomic unit mass.
pub fn dirac(x: &[f64], mass: f64) -> Result<DiscreteMeasure> {
    let p = Point::new(x)?;
    DiscreteMeasure::atomic(p.dim(), vec![p], vec![mass])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{alpha_star, argmax_set, ARGMAX_TOL};

    #[test]
    fn every_builtin_validates() {
        for name in ScenarioName::builtins() {
            let res = match name {
                ScenarioName::Fig1 | ScenarioName::Fig4 => Some(41),
                ScenarioName::Fig7 | ScenarioName::Fig8 | ScenarioName::Subcritical => Some(401),
                _ => None,
            };
            let sc = build(&name, res).unwrap_or_else(|e| panic!("{name}: {e}"));
            sc.validate().unwrap();
        }
    }

    #[test]
    fn fig1_argmax_set() {
        let sc = build(&ScenarioName::Fig1, Some(201)).unwrap();
        assert!((alpha_star(&sc).unwrap() - 1.5).abs() < 1e-12);
        let s = argmax_set(&sc, ARGMAX_TOL);
        for (i, p) in sc.i0.points().iter().enumerate() {
            let (x1, x2) = (p.coords()[0], p.coords()[1]);
            let expect = ((x1 - -0.3).abs() < 1e-12 || (0.2..=0.8).contains(&x1)) && (-0.6..=0.6).contains(&x2);
            assert_eq!(s.contains(i), expect, "point {x1}, {x2}");
        }
    }

    #[test]
    fn fig4_argmax_column() {
        let sc = build(&ScenarioName::Fig4, Some(201)).unwrap();
        let s = argmax_set(&sc, ARGMAX_TOL);
        assert_eq!(s.len(), 121);
        assert!(s.indices().iter().all(|&i| sc.i0.points()[i].coords()[0] == 0.35));
    }

    #[test]
    fn fig7_traits() {
        let sc = build(&ScenarioName::Fig7, Some(4001)).unwrap();
        let at = |x: f64| Point::d1(x);
        assert_eq!(sc.alpha.eval(&at(X1)), 1.0);
        assert_eq!(sc.alpha.eval(&at(X2)), 1.0);
        assert_eq!(sc.gamma.eval(&at(X1)), 0.5);
        assert_eq!(sc.gamma.eval(&at(X2)), 0.25);
        assert_eq!(sc.gamma.eval(&at(0.0)), 1.0);
        // second difference of alpha at the maxima
        let h = 1e-3;
        let d2 = (sc.alpha.eval(&at(X2 + h)) - 2.0 + sc.alpha.eval(&at(X2 - h))) / (h * h);
        assert!((d2 + 50.0).abs() < 1e-6);
        let s = argmax_set(&sc, 0.0);
        assert_eq!(s.len(), 2);
        // I0 vanishes on both maxima
        assert!(s.indices().iter().all(|&i| sc.i0.weights()[i] == 0.0));
    }

    #[test]
    fn fig8_traits() {
        let sc = build(&ScenarioName::Fig8, Some(401)).unwrap();
        assert_eq!(sc.alpha.eval(&Point::d1(X1)), 0.95);
        assert_eq!(alpha_star(&sc).unwrap(), 1.0);
        assert_eq!(argmax_set(&sc, ARGMAX_TOL).len(), 1);
        assert!(!sc.maxima[0].global && sc.maxima[1].global);
    }

    #[test]
    fn builders_are_deterministic() {
        for name in [ScenarioName::Fig1, ScenarioName::Fig7] {
            assert_eq!(build(&name, Some(101)).unwrap(), build(&name, Some(101)).unwrap());
        }
    }

    #[test]
    fn embed_finite_examples() {
        let one = embed_finite(&[1.0], &[1.0], &[1.0], ModelParams::new(2.0, 1.0).unwrap()).unwrap();
        let atom = build(&ScenarioName::SingleAtom, None).unwrap();
        assert_eq!(one.i0, atom.i0);
        assert_eq!((one.alpha.clone(), one.gamma.clone()), (atom.alpha.clone(), atom.gamma.clone()));
        assert!(embed_finite(&[1.0, 1.0], &[1.0], &[1.0, 1.0], ModelParams::new(2.0, 1.0).unwrap()).is_err());

        let sc = build(&ScenarioName::finite_triple(), None).unwrap();
        assert_eq!(sc.alpha_values(), vec![1.0, 1.0, 0.8]);
        assert_eq!(sc.gamma_values(), vec![1.0, 2.0, 1.5]);
    }

    #[test]
    fn names_parse() {
        assert_eq!("fig7_1d".parse::<ScenarioName>().unwrap(), ScenarioName::Fig7);
        assert_eq!(
            "countable_truncated50".parse::<ScenarioName>().unwrap(),
            ScenarioName::Countable { k: 50 }
        );
        assert!("nope".parse::<ScenarioName>().is_err());
        for n in ScenarioName::builtins() {
            if !matches!(n, ScenarioName::Finite { .. }) {
                assert_eq!(n.to_string().parse::<ScenarioName>().unwrap(), n);
            }
        }
    }
}
