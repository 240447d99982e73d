//! Linear programming kernels.
//!
//! * [`simplex_max`]: dense tableau simplex with Bland's rule for
//!   `max c.x  s.t.  A x <= b, x >= 0` with `b >= 0`.
//! * [`transshipment`]: uncapacitated min-cost flow on a complete graph with
//!   a root node (successive shortest paths with Dijkstra potentials). It
//!   returns both the optimal cost and node potentials that certify it.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

const PIVOT_EPS: f64 = 1e-12;

/// Dense tableau simplex, Bland's anti-cycling rule.
pub fn simplex_max(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let n = c.len();
    let m = b.len();
    if a.len() != m || a.iter().any(|r| r.len() != n) {
        return Err(Error::Lp("constraint matrix shape mismatch".into()));
    }
    if b.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Lp("right-hand side must be nonnegative".into()));
    }
    let w = n + m + 1;
    // rows 0..m constraints, row m objective (reduced costs, negated)
    let mut t = vec![vec![0.0; w]; m + 1];
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][w - 1] = b[i];
    }
    for j in 0..n {
        t[m][j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let max_iter = 50 * (n + m).max(10) * (n + m).max(10);
    for _ in 0..max_iter {
        // entering: lowest index with negative reduced cost
        let Some(e) = (0..n + m).find(|&j| t[m][j] < -PIVOT_EPS) else {
            let mut x = vec![0.0; n + m];
            for (i, &bi) in basis.iter().enumerate() {
                x[bi] = t[i][w - 1];
            }
            x.truncate(n);
            let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
            return Ok(LpSolution { x, value });
        };
        // leaving: min ratio, ties by lowest basis index
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][e] > PIVOT_EPS {
                let r = t[i][w - 1] / t[i][e];
                leave = match leave {
                    None => Some((i, r)),
                    Some((li, lr)) => {
                        if r < lr - 1e-15 || (r <= lr + 1e-15 && basis[i] < basis[li]) {
                            Some((i, r))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((l, _)) = leave else {
            return Err(Error::Lp("unbounded objective".into()));
        };
        let p = t[l][e];
        for v in t[l].iter_mut() {
            *v /= p;
        }
        let pivot_row = t[l].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != l && row[e] != 0.0 {
                let f = row[e];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        basis[l] = e;
    }
    Err(Error::Lp("simplex iteration limit reached".into()))
}

/// Input of [`transshipment`]: `n` nodes plus an implicit root.
///
/// Node `i` has supply `supply[i]` (negative for demand); the root absorbs
/// the imbalance. Arc `i -> j` costs `cost(i, j)`; arcs that cost at least
/// `destroy[i] + create[j]` are skipped because the route through the root
/// is never worse. Arc `i -> root` costs `destroy[i]` and `root -> i`
/// costs `create[i]`.
pub struct Transshipment<'a> {
    pub supply: &'a [f64],
    pub cost: &'a dyn Fn(usize, usize) -> f64,
    pub destroy: &'a [f64],
    pub create: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct FlowSolution {
    /// Primal cost of the flow found.
    pub cost: f64,
    /// Dual objective `sum supply_i * potential_i`.
    pub dual: f64,
    /// Dual potentials normalised to zero at the root; they satisfy
    /// `p_i - p_j <= cost(i, j)`, `p_i <= destroy_i`, `-p_i <= create_i`.
    pub potential: Vec<f64>,
    /// Largest violation of those dual constraints (rounding only).
    pub dual_violation: f64,
    pub augmentations: usize,
}

impl FlowSolution {
    pub fn gap(&self) -> f64 {
        (self.cost - self.dual).abs()
    }
}

pub fn transshipment(p: &Transshipment) -> Result<FlowSolution> {
    let n = p.supply.len();
    if p.destroy.len() != n || p.create.len() != n {
        return Err(Error::Lp("destroy/create cost length mismatch".into()));
    }
    if p.destroy.iter().chain(p.create).any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(Error::Lp("root arc costs must be finite and nonnegative".into()));
    }
    let r = n;
    let v = n + 1;
    let mut cmat = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let c = (p.cost)(i, j);
                if !(c >= 0.0) {
                    return Err(Error::Lp(format!("arc cost {c} between {i} and {j}")));
                }
                if c < p.destroy[i] + p.create[j] {
                    cmat[i * n + j] = c;
                }
            }
        }
    }
    let cost = |u: usize, w: usize| -> f64 {
        if u == r {
            p.create[w]
        } else if w == r {
            p.destroy[u]
        } else {
            cmat[u * n + w]
        }
    };

    // flows on the (n+1)^2 arc set, root included
    let mut flow = vec![0.0; v * v];
    let mut excess: Vec<f64> = p.supply.to_vec();
    let total: f64 = p.supply.iter().sum();
    excess.push(-total);
    let scale: f64 = p.supply.iter().map(|s| s.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;

    let mut pot = vec![0.0; v];
    let mut dist = vec![f64::INFINITY; v];
    let mut done = vec![false; v];
    // predecessor: (node, reverse?) where reverse means cancelling flow w -> u
    let mut pred: Vec<Option<(usize, bool)>> = vec![None; v];
    let mut augmentations = 0usize;
    let limit = 50 * v * v + 1000;

    loop {
        if !excess.iter().any(|&e| e > tol) {
            break;
        }
        augmentations += 1;
        if augmentations > limit {
            return Err(Error::Lp("augmentation limit reached".into()));
        }
        for k in 0..v {
            dist[k] = if excess[k] > tol { 0.0 } else { f64::INFINITY };
            done[k] = false;
            pred[k] = None;
        }
        let mut target = None;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for k in 0..v {
                if !done[k] && dist[k] < best {
                    best = dist[k];
                    u = k;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if excess[u] < -tol {
                target = Some(u);
                break;
            }
            for w in 0..v {
                if done[w] || w == u {
                    continue;
                }
                let c = cost(u, w);
                if c.is_finite() {
                    let rc = (c + pot[u] - pot[w]).max(0.0);
                    if dist[u] + rc < dist[w] {
                        dist[w] = dist[u] + rc;
                        pred[w] = Some((u, false));
                    }
                }
                if flow[w * v + u] > 0.0 {
                    let rc = (-cost(w, u) + pot[u] - pot[w]).max(0.0);
                    if dist[u] + rc < dist[w] {
                        dist[w] = dist[u] + rc;
                        pred[w] = Some((u, true));
                    }
                }
            }
        }
        let Some(t) = target else {
            return Err(Error::Lp("no path from an excess node to a deficit node".into()));
        };
        let dt = dist[t];
        for k in 0..v {
            pot[k] += dist[k].min(dt);
        }
        // bottleneck
        let mut delta = -excess[t];
        let mut w = t;
        while let Some((u, rev)) = pred[w] {
            if rev {
                delta = delta.min(flow[w * v + u]);
            }
            w = u;
        }
        let s = w;
        delta = delta.min(excess[s]);
        let mut w = t;
        while let Some((u, rev)) = pred[w] {
            if rev {
                let f = &mut flow[w * v + u];
                *f -= delta;
                if *f <= tol * 1e-3 {
                    *f = 0.0;
                }
            } else {
                flow[u * v + w] += delta;
            }
            w = u;
        }
        excess[s] -= delta;
        excess[t] += delta;
    }

    let mut primal = 0.0;
    for u in 0..v {
        for w in 0..v {
            let f = flow[u * v + w];
            if f > 0.0 {
                primal += f * cost(u, w);
            }
        }
    }
    // with reduced costs c + p_u - p_w >= 0 the dual variables are -p,
    // shifted so the root sits at zero
    let potential: Vec<f64> = (0..n).map(|i| pot[r] - pot[i]).collect();
    let dual: f64 = p.supply.iter().zip(&potential).map(|(s, f)| s * f).sum();
    let mut viol: f64 = 0.0;
    for i in 0..n {
        viol = viol.max(potential[i] - p.destroy[i]).max(-potential[i] - p.create[i]);
        for j in 0..n {
            let c = cmat[i * n + j];
            if c.is_finite() {
                viol = viol.max(potential[i] - potential[j] - c);
            }
        }
    }
    Ok(FlowSolution {
        cost: primal,
        dual,
        potential,
        dual_violation: viol.max(0.0),
        augmentations,
    })
}
