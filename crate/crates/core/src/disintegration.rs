//! Distribution of alpha-values under the initial measure: the image
//! measure and, in one dimension, its density from the coarea formula.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{Bins, DiscreteMeasure};
use crate::model::Scenario;

pub const DEFAULT_CRITICAL_THRESHOLD: f64 = 1e-6;

/// Image of `I0` under `alpha`, one cell per bin.
pub fn image_measure(sc: &Scenario, bins: &Bins) -> Result<DiscreteMeasure> {
    if !(1..=2).contains(&sc.dim()) {
        return Err(Error::Dimension {
            expected: 2,
            got: sc.dim(),
        });
    }
    sc.i0.pushforward_1d(|p| sc.alpha.eval(p), bins)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoareaDensity {
    pub y: Vec<f64>,
    pub density: Vec<f64>,
    /// Set where some preimage has `|alpha'|` below the threshold.
    pub critical: Vec<bool>,
}

impl CoareaDensity {
    /// Trapezoidal integral over the unflagged stretches of the y-grid.
    pub fn regular_mass(&self) -> f64 {
        self.y
            .windows(2)
            .zip(self.density.windows(2))
            .zip(self.critical.windows(2))
            .filter(|(_, c)| !c[0] && !c[1])
            .map(|((y, d), _)| 0.5 * (d[0] + d[1]) * (y[1] - y[0]))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("y,density,flag\n");
        for ((y, d), c) in self.y.iter().zip(&self.density).zip(&self.critical) {
            let _ = writeln!(s, "{:.16e},{:.16e},{}", y, d, u8::from(*c));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `sum over alpha(x) = y of I0(x) / |alpha'(x)|` on a 1D grid scenario.
///
/// Between consecutive grid points alpha is taken linear, with slope given
/// by the central difference at the cell midpoint; the density of `I0` is
/// the grid weight over the cell width, interpolated linearly.
pub fn coarea_density_1d(sc: &Scenario, y_grid: &[f64]) -> Result<CoareaDensity> {
    coarea_density_1d_with(sc, y_grid, DEFAULT_CRITICAL_THRESHOLD)
}

pub fn coarea_density_1d_with(sc: &Scenario, y_grid: &[f64], threshold: f64) -> Result<CoareaDensity> {
    if sc.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: sc.dim(),
        });
    }
    let vols = sc
        .i0
        .cell_volumes()
        .ok_or_else(|| Error::Argument("coarea density needs a grid initial measure".into()))?;
    if y_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Argument("y-grid must be strictly increasing".into()));
    }
    let mut order: Vec<usize> = (0..sc.i0.len()).collect();
    let pts = sc.i0.points();
    order.sort_by(|&a, &b| pts[a].x().total_cmp(&pts[b].x()));
    let x: Vec<f64> = order.iter().map(|&i| pts[i].x()).collect();
    let a: Vec<f64> = order.iter().map(|&i| sc.alpha.eval(&pts[i])).collect();
    let rho: Vec<f64> = order.iter().map(|&i| sc.i0.weights()[i] / vols[i]).collect();

    let rows: Vec<(f64, bool)> = y_grid
        .par_iter()
        .map(|&y| {
            let mut d = 0.0;
            let mut critical = false;
            for k in 0..x.len().saturating_sub(1) {
                let (a0, a1) = (a[k], a[k + 1]);
                let (lo, hi) = (a0.min(a1), a0.max(a1));
                if !(y >= lo && y <= hi) {
                    continue;
                }
                let h = x[k + 1] - x[k];
                let slope = (a1 - a0) / h;
                if slope.abs() < threshold {
                    critical = true;
                    continue;
                }
                // each node belongs to the cell on its right
                let s = (y - a0) / (a1 - a0);
                if s >= 1.0 {
                    continue;
                }
                let r = rho[k] + s * (rho[k + 1] - rho[k]);
                d += r / slope.abs();
            }
            (d, critical)
        })
        .collect();
    Ok(CoareaDensity {
        y: y_grid.to_vec(),
        density: rows.iter().map(|r| r.0).collect(),
        critical: rows.iter().map(|r| r.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::GridAxis;
    use crate::model::{ModelParams, TraitFn};
    use crate::scenarios::{build, ScenarioName, DELTA, X1, X2};
    use crate::measures::Point;

    fn benchmark(alpha: TraitFn, n: usize) -> Scenario {
        let i0 = DiscreteMeasure::from_density(&[GridAxis::cells(0.0, 1.0, n)], |_| 1.0).unwrap();
        Scenario {
            name: "coarea".into(),
            params: ModelParams::new(2.0, 1.0).unwrap(),
            alpha,
            gamma: TraitFn::constant(1.0),
            s0: 2.0,
            i0,
            maxima: Vec::new(),
            gamma_floor: 1.0,
            reg_bound_claimed: false,
            alpha_constant: false,
            countable_limits: None,
        }
    }

    fn one_minus_square() -> TraitFn {
        TraitFn::add(vec![
            TraitFn::constant(1.0),
            TraitFn::scale(-1.0, TraitFn::mul(vec![TraitFn::coord(0), TraitFn::coord(0)])),
        ])
    }

    #[test]
    fn identity_map() {
        let sc = benchmark(TraitFn::coord(0), 1000);
        let ys: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
        let c = coarea_density_1d(&sc, &ys).unwrap();
        for d in &c.density {
            assert!((d - 1.0).abs() < 1e-9, "{d}");
        }
        let img = image_measure(&sc, &Bins::uniform(0.0, 1.0, 10).unwrap()).unwrap();
        for w in img.weights() {
            assert!((w - 0.1).abs() < 1e-12);
        }
        assert!(coarea_density_1d(&sc, &[2.0]).unwrap().density[0] == 0.0);
    }

    #[test]
    fn constant_alpha_single_bin() {
        let sc = benchmark(TraitFn::constant(0.7), 50);
        let img = image_measure(&sc, &Bins::uniform(0.0, 1.0, 10).unwrap()).unwrap();
        assert!((img.weights()[7] - 1.0).abs() < 1e-14);
        assert_eq!(img.weights().iter().filter(|w| **w > 0.0).count(), 1);
        assert!(coarea_density_1d(&sc, &[0.7]).unwrap().critical[0]);
    }

    #[test]
    fn parabola_matches_change_of_variables() {
        let sc = benchmark(one_minus_square(), 20000);
        let ys: Vec<f64> = (1..90).map(|k| k as f64 / 100.0).collect();
        let c = coarea_density_1d(&sc, &ys).unwrap();
        for (y, d) in ys.iter().zip(&c.density) {
            let exact = 1.0 / (2.0 * (1.0 - y).sqrt());
            assert!((d / exact - 1.0).abs() < 1e-4, "{y}: {d} vs {exact}");
        }
    }

    #[test]
    fn histogram_agrees_with_density() {
        let sc = benchmark(one_minus_square(), 200_000);
        let bins = Bins::uniform(0.0, 1.0, 50).unwrap();
        let img = image_measure(&sc, &bins).unwrap();
        assert!((img.total_mass() - 1.0).abs() < 1e-12);
        let centers: Vec<f64> = (0..50).map(|k| bins.center(k)).collect();
        let c = coarea_density_1d(&sc, &centers).unwrap();
        for k in 0..45 {
            let hist = img.weights()[k] / bins.width(k);
            assert!((hist / c.density[k] - 1.0).abs() < 0.02, "bin {k}: {hist} vs {}", c.density[k]);
        }
    }

    #[test]
    fn mass_conservation() {
        let sc = benchmark(one_minus_square(), 20000);
        let ys: Vec<f64> = (0..=10000).map(|k| k as f64 / 10000.0).collect();
        let c = coarea_density_1d(&sc, &ys).unwrap();
        // the integrable singularity at y = 1 carries the mass of [0, 0.01]
        let near_top = 0.01;
        let rm = c.regular_mass();
        let cut: f64 = c
            .y
            .windows(2)
            .zip(c.density.windows(2))
            .filter(|(y, _)| y[1] <= 1.0 - 1e-4)
            .map(|(y, d)| 0.5 * (d[0] + d[1]) * (y[1] - y[0]))
            .sum();
        assert!((cut + near_top - 1.0).abs() < 0.01, "{cut}");
        assert!(rm > 0.9);
    }

    #[test]
    fn fig7_top_bins_match_balls() {
        let sc = build(&ScenarioName::Fig7, Some(4001)).unwrap();
        let eps = 0.0123;
        let bins = Bins::new(vec![-0.5, 1.0 - eps, 1.0]).unwrap();
        let img = image_measure(&sc, &bins).unwrap();
        let r = DELTA * eps.sqrt();
        let balls = sc.i0.ball_mass(&Point::d1(X1), r) + sc.i0.ball_mass(&Point::d1(X2), r);
        assert!((img.weights()[1] - balls).abs() <= 1e-12 * balls.max(1e-300) + 1e-15);
    }

    #[test]
    fn csv_layout() {
        let sc = benchmark(TraitFn::coord(0), 10);
        let s = coarea_density_1d(&sc, &[0.5, 3.0]).unwrap().to_csv();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("y,density,flag"));
        assert_eq!(lines.count(), 2);
    }
}
