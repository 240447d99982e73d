//! Distances between finite nonnegative measures: the Kantorovich-Rubinstein
//! (bounded Lipschitz) distance `d0`, absolute variation, and the 1D
//! Wasserstein distance as an independent check.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::{transshipment, Transshipment};
use crate::measures::{exact_sum, DiscreteMeasure, Point};

pub const MATCH_TOL: f64 = 1e-12;
pub const DEFAULT_CAP: usize = 500;
pub const EXACT_SET_CAP: usize = 120;
const GAP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct D0Options {
    /// Largest union support handed to the LP.
    pub cap: usize,
    /// Aggregate into grid cells when the support exceeds `cap`.
    pub coarsen: bool,
    /// Weights below `prune_rel * total` may be dropped before coarsening
    /// (the dropped mass is added to the error bound).
    pub prune_rel: f64,
}

impl Default for D0Options {
    fn default() -> Self {
        D0Options {
            cap: DEFAULT_CAP,
            coarsen: true,
            prune_rel: 1e-14,
        }
    }
}

/// Result of a `d0` evaluation. Without coarsening `lower == value == upper`
/// up to the duality gap.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct D0 {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub coarsened: bool,
    pub support: usize,
    pub gap: f64,
}

/// Union support of two measures with coordinates matched within `tol`.
pub fn union_support(mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> Result<(Vec<Point>, Vec<f64>, Vec<f64>)> {
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    let mut entries: Vec<(Point, f64, f64)> = mu
        .points()
        .iter()
        .zip(mu.weights())
        .map(|(p, &w)| (*p, w, 0.0))
        .chain(nu.points().iter().zip(nu.weights()).map(|(p, &w)| (*p, 0.0, w)))
        .collect();
    entries.sort_by(|a, b| {
        let (x, y) = (a.0.coords(), b.0.coords());
        x[0].total_cmp(&y[0]).then_with(|| x.get(1).unwrap_or(&0.0).total_cmp(y.get(1).unwrap_or(&0.0)))
    });
    let mut pts: Vec<Point> = Vec::new();
    let mut a: Vec<f64> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut run_start = 0usize;
    for (p, wa, wb) in entries {
        while run_start < pts.len() && p.coords()[0] - pts[run_start].coords()[0] > tol {
            run_start += 1;
        }
        if let Some(k) = (run_start..pts.len()).find(|&k| pts[k].matches(&p, tol)) {
            a[k] += wa;
            b[k] += wb;
        } else {
            pts.push(p);
            a.push(wa);
            b.push(wb);
        }
    }
    Ok((pts, a, b))
}

/// `sum |mu_i - nu_i|` over the union support.
pub fn av_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let (_, a, b) = union_support(mu, nu, MATCH_TOL)?;
    Ok(exact_sum(a.iter().zip(&b).map(|(x, y)| (x - y).abs())))
}

struct Reduced {
    pts: Vec<Point>,
    /// Signed mass `mu - nu`; `d0` only sees the difference.
    s: Vec<f64>,
    /// Certified bound on `|d0(original) - d0(reduced)|`.
    err: f64,
    coarsened: bool,
}

fn prune(pts: &[Point], s: &[f64], thresh: f64) -> Reduced {
    let mut r = Reduced {
        pts: Vec::new(),
        s: Vec::new(),
        err: 0.0,
        coarsened: false,
    };
    for (p, &v) in pts.iter().zip(s) {
        if v == 0.0 {
            continue;
        }
        if v.abs() < thresh {
            r.err += v.abs();
            continue;
        }
        r.pts.push(*p);
        r.s.push(v);
    }
    r
}

fn cell_key(p: &Point, lo: &[f64; 2], h: f64) -> (i64, i64) {
    let c = p.coords();
    let kx = ((c[0] - lo[0]) / h).floor() as i64;
    let ky = if c.len() > 1 { ((c[1] - lo[1]) / h).floor() as i64 } else { 0 };
    (kx, ky)
}

fn count_cells(pts: &[Point], lo: &[f64; 2], h: f64) -> usize {
    let mut keys: Vec<(i64, i64)> = pts.iter().map(|p| cell_key(p, lo, h)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Aggregates the signed mass into square cells of side `h`, the smallest
/// found with at most `cap` occupied cells. Each cell is represented by
/// the `|s|`-weighted centroid; moving mass there changes `d0` by at most
/// `sum |s| |x - c|`.
fn coarsen(r: Reduced, cap: usize) -> Reduced {
    let dim = r.pts[0].dim();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in &r.pts {
        for (k, c) in p.coords().iter().enumerate() {
            lo[k] = lo[k].min(*c);
            hi[k] = hi[k].max(*c);
        }
    }
    let span = (0..dim).map(|k| hi[k] - lo[k]).fold(0.0, f64::max).max(1e-300);
    let (mut h_lo, mut h_hi) = (span * 1e-9, span * 1.000001);
    for _ in 0..60 {
        let h = (h_lo * h_hi).sqrt();
        if count_cells(&r.pts, &lo, h) <= cap {
            h_hi = h;
        } else {
            h_lo = h;
        }
    }
    let h = h_hi;
    let mut order: Vec<usize> = (0..r.pts.len()).collect();
    let keys: Vec<(i64, i64)> = r.pts.iter().map(|p| cell_key(p, &lo, h)).collect();
    order.sort_by_key(|&i| keys[i]);

    let mut out = Reduced {
        pts: Vec::new(),
        s: Vec::new(),
        err: r.err,
        coarsened: true,
    };
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && keys[order[end]] == keys[order[start]] {
            end += 1;
        }
        let members = &order[start..end];
        let (mut net, mut tot, mut cx, mut cy) = (0.0, 0.0, 0.0, 0.0);
        for &i in members {
            let w = r.s[i].abs();
            net += r.s[i];
            tot += w;
            cx += w * r.pts[i].coords()[0];
            cy += w * r.pts[i].coords().get(1).unwrap_or(&0.0);
        }
        let c = if dim == 1 {
            Point::d1(cx / tot)
        } else {
            Point::d2(cx / tot, cy / tot)
        };
        for &i in members {
            out.err += r.s[i].abs() * r.pts[i].dist(&c);
        }
        if net != 0.0 {
            out.pts.push(c);
            out.s.push(net);
        }
        start = end;
    }
    out
}

/// Kantorovich-Rubinstein distance
/// `sup { int f d(mu - nu) : |f| <= 1, Lip(f) <= 1 }`.
pub fn d0(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<D0> {
    d0_with(mu, nu, &D0Options::default())
}

pub fn d0_with(mu: &DiscreteMeasure, nu: &DiscreteMeasure, opts: &D0Options) -> Result<D0> {
    let (pts, a, b) = union_support(mu, nu, MATCH_TOL)?;
    let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let mut r = prune(&pts, &s, 0.0);
    if r.pts.len() > opts.cap {
        if !opts.coarsen {
            return Err(Error::Capacity {
                what: "union support for d0",
                size: r.pts.len(),
                cap: opts.cap,
            });
        }
        let total = exact_sum(s.iter().map(|v| v.abs()));
        r = prune(&pts, &s, opts.prune_rel * total);
        if r.pts.len() > opts.cap {
            r = coarsen(r, opts.cap);
        }
    }
    let av = exact_sum(s.iter().map(|v| v.abs()));
    if r.pts.is_empty() {
        return Ok(D0 {
            value: 0.0,
            lower: 0.0,
            upper: r.err.min(av),
            coarsened: r.coarsened,
            support: 0,
            gap: 0.0,
        });
    }
    let n = r.pts.len();
    let ones = vec![1.0; n];
    let (value, pot, gap) = solve(&r.pts, &r.s, &ones, &ones)?;
    if r.err == 0.0 && !r.coarsened {
        return Ok(D0 {
            value,
            lower: value,
            upper: value,
            coarsened: false,
            support: n,
            gap,
        });
    }
    // certified lower bound: extend the coarse potential to the original
    // support as a 1-Lipschitz function bounded by one
    let lower = extended_lower_bound(&r.pts, &pot, &pts, &s);
    Ok(D0 {
        value,
        lower: lower.min(value + r.err).max(0.0),
        upper: (value + r.err).min(av),
        coarsened: r.coarsened,
        support: n,
        gap,
    })
}

/// Returns (cost, potentials, gap).
fn solve(pts: &[Point], supply: &[f64], destroy: &[f64], create: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
    let cost = |i: usize, j: usize| pts[i].dist(&pts[j]);
    let sol = transshipment(&Transshipment {
        supply,
        cost: &cost,
        destroy,
        create,
    })?;
    let scale = 1.0f64.max(sol.cost.abs());
    if sol.gap() > GAP_TOL * scale || sol.dual_violation > GAP_TOL {
        return Err(Error::Lp(format!(
            "duality certificate failed: gap {:e}, dual violation {:e}",
            sol.gap(),
            sol.dual_violation
        )));
    }
    let gap = sol.gap();
    Ok((sol.cost, sol.potential, gap))
}

fn extended_lower_bound(cpts: &[Point], f: &[f64], pts: &[Point], s: &[f64]) -> f64 {
    let terms: Vec<(f64, f64)> = pts
        .iter()
        .zip(s)
        .filter(|(_, w)| **w != 0.0)
        .map(|(p, &w)| {
            let (mut up, mut down) = (f64::INFINITY, f64::NEG_INFINITY);
            for (c, fc) in cpts.iter().zip(f) {
                let d = p.dist(c);
                up = up.min(fc + d);
                down = down.max(fc - d);
            }
            (w * up.clamp(-1.0, 1.0), w * down.clamp(-1.0, 1.0))
        })
        .collect();
    let hi = exact_sum(terms.iter().map(|t| t.0));
    let lo = exact_sum(terms.iter().map(|t| t.1));
    hi.max(lo)
}

/// `int |F_mu - F_nu| dx` for one-dimensional measures of equal mass.
pub fn w1_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let (ma, mb) = (mu.total_mass(), nu.total_mass());
    if (ma - mb).abs() > 1e-12 {
        return Err(Error::Argument(format!("masses differ: {ma} vs {mb}")));
    }
    let (f, g) = (mu.cdf_1d()?, nu.cdf_1d()?);
    let mut knots: Vec<f64> = f.knots().iter().chain(g.knots()).copied().collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut parts = Vec::with_capacity(knots.len());
    for w in knots.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let h0 = f.eval(x0) - g.eval(x0);
        let h1 = f.left_limit(x1) - g.left_limit(x1);
        let len = x1 - x0;
        parts.push(if h0 * h1 >= 0.0 {
            0.5 * (h0.abs() + h1.abs()) * len
        } else {
            0.5 * (h0 * h0 + h1 * h1) / (h0.abs() + h1.abs()) * len
        });
    }
    Ok(exact_sum(parts))
}

/// Bounds on `d0(mu, M+(K))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationBounds {
    pub lower: f64,
    pub upper: f64,
    /// Exact set distance, when requested and within its support cap.
    pub exact: Option<f64>,
}

/// Index of the nearest point of `k`; ties go to the lowest index.
fn nearest(p: &Point, k: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in k.iter().enumerate() {
        let d = p.dist(q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Pushes each support point's mass to its nearest point of `k`.
pub fn project_onto(mu: &DiscreteMeasure, k: &[Point]) -> Result<DiscreteMeasure> {
    if k.is_empty() {
        return Err(Error::Argument("projection onto an empty set".into()));
    }
    let mut w = vec![0.0; k.len()];
    for (p, &m) in mu.points().iter().zip(mu.weights()) {
        w[nearest(p, k).0] += m;
    }
    DiscreteMeasure::atomic(mu.dim(), k.to_vec(), w)
}

/// `lower = int min(1, d(x, K)) dmu`, `upper` bounds `d0(mu, P_K # mu)`.
pub fn concentration_bounds(mu: &DiscreteMeasure, k: &[Point]) -> Result<ConcentrationBounds> {
    concentration_bounds_with(mu, k, &D0Options::default(), false)
}

pub fn concentration_bounds_with(
    mu: &DiscreteMeasure,
    k: &[Point],
    opts: &D0Options,
    exact: bool,
) -> Result<ConcentrationBounds> {
    if k.is_empty() {
        return Err(Error::Argument("concentration bounds need a nonempty set".into()));
    }
    let d: Vec<f64> = mu.points().iter().map(|p| nearest(p, k).1).collect();
    let w = mu.weights();
    let lower = exact_sum(w.iter().zip(&d).map(|(m, d)| m * d.min(1.0)));
    let plan = exact_sum(w.iter().zip(&d).map(|(m, d)| m * d.min(2.0)));
    let upper = if plan <= lower {
        // every point is within distance one: the transport plan is optimal
        lower
    } else {
        let proj = project_onto(mu, k)?;
        d0_with(mu, &proj, opts)?.upper.min(plan)
    };
    let exact = if exact { Some(set_distance_exact(mu, k)?) } else { None };
    Ok(ConcentrationBounds {
        lower,
        upper: upper.max(lower),
        exact,
    })
}

/// `min over nu in M+(K)` of `d0(mu, nu)`: points of `K` absorb mass for free.
pub fn set_distance_exact(mu: &DiscreteMeasure, k: &[Point]) -> Result<f64> {
    let empty = DiscreteMeasure::atomic(mu.dim(), k.to_vec(), vec![0.0; k.len()])?;
    let (pts, a, _) = union_support(mu, &empty, MATCH_TOL)?;
    let mut keep: Vec<usize> = Vec::new();
    let mut in_k: Vec<bool> = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        let is_k = k.iter().any(|q| q.matches(p, MATCH_TOL));
        if a[i] > 0.0 || is_k {
            keep.push(i);
            in_k.push(is_k);
        }
    }
    if keep.len() > EXACT_SET_CAP {
        return Err(Error::Capacity {
            what: "support for the exact set distance",
            size: keep.len(),
            cap: EXACT_SET_CAP,
        });
    }
    let sp: Vec<Point> = keep.iter().map(|&i| pts[i]).collect();
    let supply: Vec<f64> = keep.iter().map(|&i| a[i]).collect();
    let destroy: Vec<f64> = in_k.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
    let create = vec![1.0; sp.len()];
    Ok(solve(&sp, &supply, &destroy, &create)?.0)
}
