//! Finite nonnegative measures on R^N (N = 1 or 2) stored as weighted
//! supports: atoms, or grid cells whose density has been multiplied by
//! the cell volume.
//!
//! Measures are immutable once built. Zero weights are kept so that the
//! support structure survives the dynamics; use [`DiscreteMeasure::pruned`]
//! when a computation only cares about the positive part.

use std::fs;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

/// A point of R^N, N in {1, 2}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    c: [f64; MAX_DIM],
    dim: u8,
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::Dimension {
                expected: MAX_DIM,
                got: coords.len(),
            });
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument(format!("non-finite coordinate in {coords:?}")));
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Point {
            c,
            dim: coords.len() as u8,
        })
    }

    pub fn d1(x: f64) -> Self {
        Point { c: [x, 0.0], dim: 1 }
    }

    pub fn d2(x: f64, y: f64) -> Self {
        Point { c: [x, y], dim: 2 }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[f64] {
        &self.c[..self.dim as usize]
    }

    pub fn x(&self) -> f64 {
        self.c[0]
    }

    /// Euclidean distance. Both points must share a dimension.
    pub fn dist(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let dx = self.c[0] - other.c[0];
        let dy = self.c[1] - other.c[1];
        dx.hypot(dy)
    }

    /// Coordinate-wise match with absolute tolerance.
    pub fn matches(&self, other: &Point, tol: f64) -> bool {
        self.dim == other.dim
            && self
                .coords()
                .iter()
                .zip(other.coords())
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Atomic,
    Grid,
}

/// Indices into the support of a measure, sorted and duplicate-free.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SupportSet {
    indices: Vec<usize>,
}

impl SupportSet {
    pub fn new(mut indices: Vec<usize>, support_len: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("duplicate index in support set".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= support_len {
                return Err(Error::Argument(format!(
                    "index {last} out of range for support of size {support_len}"
                )));
            }
        }
        Ok(SupportSet { indices })
    }

    pub fn all(support_len: usize) -> Self {
        SupportSet {
            indices: (0..support_len).collect(),
        }
    }

    pub fn empty() -> Self {
        SupportSet::default()
    }

    pub fn from_predicate(support_len: usize, mut pred: impl FnMut(usize) -> bool) -> Self {
        SupportSet {
            indices: (0..support_len).filter(|&i| pred(i)).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &SupportSet) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }

    pub fn complement(&self, support_len: usize) -> SupportSet {
        SupportSet::from_predicate(support_len, |i| !self.contains(i))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridLayout {
    /// `n` points from `lo` to `hi` inclusive, each owning a cell of width
    /// `(hi - lo) / (n - 1)` centred on it.
    Nodes,
    /// `n` cells partitioning `[lo, hi]`, one point at each cell centre.
    Cells,
}

/// One axis of a tensor grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub layout: GridLayout,
}

impl GridAxis {
    pub fn nodes(lo: f64, hi: f64, n: usize) -> Self {
        GridAxis {
            lo,
            hi,
            n,
            layout: GridLayout::Nodes,
        }
    }

    pub fn cells(lo: f64, hi: f64, n: usize) -> Self {
        GridAxis {
            lo,
            hi,
            n,
            layout: GridLayout::Cells,
        }
    }

    fn validate(&self) -> Result<()> {
        let min_n = match self.layout {
            GridLayout::Nodes => 2,
            GridLayout::Cells => 1,
        };
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) || self.n < min_n {
            return Err(Error::Argument(format!("invalid grid axis {self:?}")));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        match self.layout {
            GridLayout::Nodes => (self.hi - self.lo) / (self.n - 1) as f64,
            GridLayout::Cells => (self.hi - self.lo) / self.n as f64,
        }
    }

    /// Coordinate of the k-th point. Written as a weighted mean of the end
    /// points so that grid points such as 0.35 on [-1, 1] come out as the
    /// correctly rounded literal.
    pub fn coord(&self, k: usize) -> f64 {
        let (lo, hi) = (self.lo, self.hi);
        match self.layout {
            GridLayout::Nodes => {
                let m = (self.n - 1) as f64;
                let k = k as f64;
                (lo * (m - k) + hi * k) / m
            }
            GridLayout::Cells => {
                let m = 2.0 * self.n as f64;
                let k = 2.0 * k as f64 + 1.0;
                (lo * (m - k) + hi * k) / m
            }
        }
    }
}

/// Partition of an interval of the real line into consecutive bins
/// `[e_k, e_{k+1})`; the last bin is closed on the right.
#[derive(Clone, Debug, PartialEq)]
pub struct Bins {
    edges: Vec<f64>,
}

impl Bins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2
            || edges.iter().any(|e| !e.is_finite())
            || edges.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Argument(
                "bin edges must be finite, strictly increasing, at least two".into(),
            ));
        }
        Ok(Bins { edges })
    }

    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("need at least one bin".into()));
        }
        let axis = GridAxis::nodes(lo, hi, n + 1);
        axis.validate()?;
        Bins::new((0..=n).map(|k| axis.coord(k)).collect())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, k: usize) -> f64 {
        0.5 * (self.edges[k] + self.edges[k + 1])
    }

    pub fn width(&self, k: usize) -> f64 {
        self.edges[k + 1] - self.edges[k]
    }

    pub fn locate(&self, y: f64) -> Option<usize> {
        let n = self.edges.len();
        if !(y >= self.edges[0] && y <= self.edges[n - 1]) {
            return None;
        }
        // first edge strictly greater than y
        let k = self.edges.partition_point(|&e| e <= y);
        Some(if k == n { n - 2 } else { k - 1 })
    }
}

/// A finite nonnegative measure on R^N as a weighted list of support points.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    kind: MeasureKind,
    points: Vec<Point>,
    weights: Vec<f64>,
    cell_volumes: Option<Vec<f64>>,
}

impl DiscreteMeasure {
    pub fn zero(dim: usize, kind: MeasureKind) -> Result<Self> {
        check_dim(dim)?;
        Ok(DiscreteMeasure {
            dim,
            kind,
            points: Vec::new(),
            weights: Vec::new(),
            cell_volumes: match kind {
                MeasureKind::Atomic => None,
                MeasureKind::Grid => Some(Vec::new()),
            },
        })
    }

    pub fn atomic(dim: usize, points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let m = DiscreteMeasure {
            dim,
            kind: MeasureKind::Atomic,
            points,
            weights,
            cell_volumes: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// Grid measure; `weights` already hold density times cell volume.
    pub fn grid(
        dim: usize,
        points: Vec<Point>,
        weights: Vec<f64>,
        cell_volumes: Vec<f64>,
    ) -> Result<Self> {
        let m = DiscreteMeasure {
            dim,
            kind: MeasureKind::Grid,
            points,
            weights,
            cell_volumes: Some(cell_volumes),
        };
        m.validate()?;
        Ok(m)
    }

    /// Midpoint-rule discretisation of `density` on a tensor grid.
    /// The first axis varies slowest.
    pub fn from_density(axes: &[GridAxis], density: impl Fn(&Point) -> f64) -> Result<Self> {
        check_dim(axes.len())?;
        for a in axes {
            a.validate()?;
        }
        let vol: f64 = axes.iter().map(GridAxis::spacing).product();
        let n: usize = axes.iter().map(|a| a.n).product();
        let mut points = Vec::with_capacity(n);
        match axes {
            [a] => points.extend((0..a.n).map(|i| Point::d1(a.coord(i)))),
            [a, b] => {
                for i in 0..a.n {
                    let x = a.coord(i);
                    points.extend((0..b.n).map(|j| Point::d2(x, b.coord(j))));
                }
            }
            _ => unreachable!(),
        }
        let mut weights = Vec::with_capacity(n);
        for p in &points {
            let d = density(p);
            if !d.is_finite() {
                return Err(Error::Evaluation {
                    point: p.coords().to_vec(),
                    value: d,
                });
            }
            if d < 0.0 {
                return Err(Error::Domain(format!(
                    "negative density {d} at {:?}",
                    p.coords()
                )));
            }
            weights.push(d * vol);
        }
        DiscreteMeasure::grid(axes.len(), points, weights, vec![vol; n])
    }

    fn validate(&self) -> Result<()> {
        check_dim(self.dim)?;
        if self.points.len() != self.weights.len() {
            return Err(Error::Argument(format!(
                "{} points but {} weights",
                self.points.len(),
                self.weights.len()
            )));
        }
        if let Some(p) = self.points.iter().find(|p| p.dim() != self.dim) {
            return Err(Error::Dimension {
                expected: self.dim,
                got: p.dim(),
            });
        }
        if let Some((i, w)) = self
            .weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(Error::Argument(format!(
                "weight {w} at index {i} is not a finite nonnegative number"
            )));
        }
        if !exact_sum(self.weights.iter().copied()).is_finite() {
            return Err(Error::Argument("total mass overflows".into()));
        }
        match (self.kind, &self.cell_volumes) {
            (MeasureKind::Atomic, None) => {}
            (MeasureKind::Grid, Some(v)) => {
                if v.len() != self.points.len() {
                    return Err(Error::Argument("cell_volumes length mismatch".into()));
                }
                if v.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                    return Err(Error::Argument("cell volumes must be positive".into()));
                }
                if self.dim == 1 {
                    let mut cells: Vec<(f64, f64)> = self.cell_intervals_1d().collect();
                    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
                    // neighbouring cells may touch; allow rounding slack
                    let overlap = cells.windows(2).any(|w| {
                        let slack = 1e-9 * (w[0].1 - w[0].0).max(w[1].1 - w[1].0);
                        w[0].1 > w[1].0 + slack
                    });
                    if overlap {
                        return Err(Error::Argument("grid cells overlap".into()));
                    }
                }
            }
            _ => {
                return Err(Error::Argument(
                    "cell_volumes must be present exactly for grid measures".into(),
                ))
            }
        }
        Ok(())
    }

    /// Same support (and cell volumes), new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        let m = DiscreteMeasure {
            weights,
            ..self.clone()
        };
        m.validate()?;
        Ok(m)
    }

    /// Caller guarantees the weights are finite and nonnegative.
    pub(crate) fn with_weights_unchecked(&self, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), self.points.len());
        debug_assert!(weights.iter().all(|w| w.is_finite() && *w >= 0.0));
        DiscreteMeasure {
            weights,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cell_volumes(&self) -> Option<&[f64]> {
        self.cell_volumes.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sum of the weights, correctly rounded.
    pub fn total_mass(&self) -> f64 {
        exact_sum(self.weights.iter().copied())
    }

    /// `sum_i f(x_i) w_i`.
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.len());
        for (p, w) in self.points.iter().zip(&self.weights) {
            let v = f(p);
            if !v.is_finite() {
                return Err(Error::Evaluation {
                    point: p.coords().to_vec(),
                    value: v,
                });
            }
            terms.push(v * w);
        }
        Ok(exact_sum(terms))
    }

    /// Keeps exactly the selected support elements.
    pub fn restrict(&self, s: &SupportSet) -> Result<Self> {
        if let Some(&last) = s.indices().last() {
            if last >= self.len() {
                return Err(Error::Argument(format!(
                    "index {last} out of range for support of size {}",
                    self.len()
                )));
            }
        }
        let idx = s.indices();
        Ok(DiscreteMeasure {
            dim: self.dim,
            kind: self.kind,
            points: idx.iter().map(|&i| self.points[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            cell_volumes: self
                .cell_volumes
                .as_ref()
                .map(|v| idx.iter().map(|&i| v[i]).collect()),
        })
    }

    /// Drops zero-weight support points.
    pub fn pruned(&self) -> Self {
        let s = SupportSet::from_predicate(self.len(), |i| self.weights[i] > 0.0);
        self.restrict(&s).expect("indices in range")
    }

    /// Image measure under `g`, bucketed into `bins`. The result is a 1D
    /// grid measure with one cell per bin; empty bins carry zero weight.
    pub fn pushforward_1d(&self, g: impl Fn(&Point) -> f64, bins: &Bins) -> Result<Self> {
        let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); bins.len()];
        for (p, &w) in self.points.iter().zip(&self.weights) {
            let y = g(p);
            let k = bins.locate(y).ok_or_else(|| Error::Coverage {
                point: p.coords().to_vec(),
                value: y,
            })?;
            buckets[k].push(w);
        }
        let weights = buckets.into_iter().map(exact_sum).collect();
        DiscreteMeasure::grid(
            1,
            (0..bins.len()).map(|k| Point::d1(bins.center(k))).collect(),
            weights,
            (0..bins.len()).map(|k| bins.width(k)).collect(),
        )
    }

    /// Mass of the support points within Euclidean distance `radius` of
    /// `center`.
    pub fn ball_mass(&self, center: &Point, radius: f64) -> f64 {
        assert!(radius > 0.0, "ball radius must be positive");
        exact_sum(
            self.points
                .iter()
                .zip(&self.weights)
                .filter(|(p, _)| p.dist(center) <= radius)
                .map(|(_, w)| *w),
        )
    }

    /// Cumulative mass function. Atoms are jumps; grid cells spread their
    /// mass uniformly over `[x - v/2, x + v/2]`.
    pub fn cdf_1d(&self) -> Result<Cdf1d> {
        if self.dim != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: self.dim,
            });
        }
        Ok(Cdf1d::build(self))
    }

    fn cell_intervals_1d(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let vols = self.cell_volumes.as_deref().unwrap_or(&[]);
        self.points
            .iter()
            .zip(vols)
            .map(|(p, v)| (p.x() - 0.5 * v, p.x() + 0.5 * v))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Dimension {
            expected: MAX_DIM,
            got: dim,
        });
    }
    Ok(())
}

/// Right-continuous cumulative mass function of a 1D measure, piecewise
/// linear between knots with possible jumps at knots.
#[derive(Clone, Debug, PartialEq)]
pub struct Cdf1d {
    xs: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl Cdf1d {
    fn build(mu: &DiscreteMeasure) -> Self {
        // events: (x, kind) with kind 0 = cell start, 1 = atom, 2 = cell end
        let mut knots: Vec<f64> = Vec::new();
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut cells: Vec<(f64, f64, f64)> = Vec::new();
        match mu.kind {
            MeasureKind::Atomic => {
                for (p, &w) in mu.points.iter().zip(&mu.weights) {
                    atoms.push((p.x(), w));
                    knots.push(p.x());
                }
            }
            MeasureKind::Grid => {
                for ((a, b), &w) in mu.cell_intervals_1d().zip(&mu.weights) {
                    cells.push((a, b, w));
                    knots.push(a);
                    knots.push(b);
                }
            }
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut left = Vec::with_capacity(knots.len());
        let mut right = Vec::with_capacity(knots.len());
        let mut completed = 0.0;
        let mut active: Vec<(f64, f64, f64)> = Vec::new();
        let (mut ai, mut ci) = (0, 0);
        for &x in &knots {
            while ci < cells.len() && cells[ci].0 <= x {
                active.push(cells[ci]);
                ci += 1;
            }
            let mut partial = 0.0;
            active.retain(|&(a, b, w)| {
                if b <= x {
                    completed += w;
                    false
                } else {
                    partial += w * (x - a) / (b - a);
                    true
                }
            });
            let l = completed + partial;
            while ai < atoms.len() && atoms[ai].0 <= x {
                completed += atoms[ai].1;
                ai += 1;
            }
            left.push(l);
            right.push(completed + partial);
        }
        Cdf1d {
            xs: knots,
            left,
            right,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn total(&self) -> f64 {
        self.right.last().copied().unwrap_or(0.0)
    }

    /// F(x) = mass of (-inf, x].
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.xs.partition_point(|&k| k <= x);
        if k == 0 {
            0.0
        } else if self.xs[k - 1] == x {
            self.right[k - 1]
        } else {
            self.between(k - 1, x)
        }
    }

    /// F(x-) = mass of (-inf, x).
    pub fn left_limit(&self, x: f64) -> f64 {
        let k = self.xs.partition_point(|&k| k < x);
        if k == 0 {
            0.0
        } else if k < self.xs.len() && self.xs[k] == x {
            self.left[k]
        } else {
            self.between(k - 1, x)
        }
    }

    fn between(&self, k: usize, x: f64) -> f64 {
        if k + 1 >= self.xs.len() {
            return self.right[k];
        }
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let (f0, f1) = (self.right[k], self.left[k + 1]);
        f0 + (f1 - f0) * (x - x0) / (x1 - x0)
    }
}

/// Correctly rounded floating-point sum (Shewchuk partials).
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Pairwise (tree) summation: fixed association order, O(log n) error growth.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

// ---- JSON file format -------------------------------------------------

/// Float written with 17 significant digits.
struct Sci(f64);

impl Serialize for Sci {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

#[derive(Serialize)]
struct MeasureFileOut {
    dim: usize,
    kind: MeasureKind,
    points: Vec<Vec<Sci>>,
    weights: Vec<Sci>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cell_volumes: Option<Vec<Sci>>,
}

#[derive(Deserialize)]
struct MeasureFileIn {
    dim: usize,
    kind: MeasureKind,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    #[serde(default)]
    cell_volumes: Option<Vec<f64>>,
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureFileOut {
            dim: self.dim,
            kind: self.kind,
            points: self
                .points
                .iter()
                .map(|p| p.coords().iter().map(|&c| Sci(c)).collect())
                .collect(),
            weights: self.weights.iter().map(|&w| Sci(w)).collect(),
            cell_volumes: self
                .cell_volumes
                .as_ref()
                .map(|v| v.iter().map(|&c| Sci(c)).collect()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = MeasureFileIn::deserialize(d)?;
        let points = f
            .points
            .iter()
            .map(|c| Point::new(c))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let m = match f.kind {
            MeasureKind::Atomic => {
                if f.cell_volumes.is_some() {
                    return Err(D::Error::custom("atomic measures carry no cell_volumes"));
                }
                DiscreteMeasure::atomic(f.dim, points, f.weights)
            }
            MeasureKind::Grid => DiscreteMeasure::grid(
                f.dim,
                points,
                f.weights,
                f.cell_volumes
                    .ok_or_else(|| D::Error::custom("grid measure needs cell_volumes"))?,
            ),
        };
        m.map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn atoms(xs: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::atomic(
            1,
            xs.iter().map(|&(x, _)| Point::d1(x)).collect(),
            xs.iter().map(|&(_, w)| w).collect(),
        )
        .unwrap()
    }

    fn unit_density(n: usize) -> DiscreteMeasure {
        DiscreteMeasure::from_density(&[GridAxis::cells(0.0, 1.0, n)], |_| 1.0).unwrap()
    }

    #[test]
    fn total_mass_examples() {
        assert_eq!(DiscreteMeasure::zero(1, MeasureKind::Atomic).unwrap().total_mass(), 0.0);
        assert_eq!(atoms(&[(0.0, 2.5), (1.0, 0.5)]).total_mass(), 3.0);
        assert_abs_diff_eq!(unit_density(100).total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn integrate_examples() {
        let mu = atoms(&[(0.0, 1.0), (2.0, 1.0)]);
        assert_eq!(mu.integrate(|_| 1.0).unwrap(), mu.total_mass());
        assert_eq!(mu.integrate(|p| p.x()).unwrap(), 2.0);
        let grid = unit_density(1000);
        assert_abs_diff_eq!(grid.integrate(|p| p.x() * p.x()).unwrap(), 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn integrate_rejects_non_finite() {
        let mu = atoms(&[(0.0, 1.0), (2.0, 1.0)]);
        let err = mu.integrate(|p| 1.0 / p.x()).unwrap_err();
        match err {
            Error::Evaluation { point, .. } => assert_eq!(point, vec![0.0]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn restrict_examples() {
        let mu = atoms(&[(0.0, 1.0), (1.0, 2.0)]);
        assert_eq!(mu.restrict(&SupportSet::all(2)).unwrap(), mu);
        assert_eq!(mu.restrict(&SupportSet::empty()).unwrap().total_mass(), 0.0);
        let one = mu.restrict(&SupportSet::new(vec![1], 2).unwrap()).unwrap();
        assert_eq!(one, atoms(&[(1.0, 2.0)]));
        assert!(SupportSet::new(vec![2], 2).is_err());
        assert!(SupportSet::new(vec![1, 1], 2).is_err());
    }

    #[test]
    fn pushforward_examples() {
        let mu = unit_density(50);
        let bins = Bins::uniform(-1.0, 1.0, 4).unwrap();
        let img = mu.pushforward_1d(|_| 0.3, &bins).unwrap();
        let k = bins.locate(0.3).unwrap();
        assert_eq!(img.weights()[k], mu.total_mass());

        // identity map onto the grid cells themselves
        let edges: Vec<f64> = (0..=50).map(|k| k as f64 / 50.0).collect();
        let img = mu.pushforward_1d(|p| p.x(), &Bins::new(edges).unwrap()).unwrap();
        assert_eq!(img.weights(), mu.weights());

        let err = mu.pushforward_1d(|p| p.x() + 5.0, &bins).unwrap_err();
        assert!(matches!(err, Error::Coverage { .. }));
    }

    #[test]
    fn pushforward_matches_change_of_variables() {
        // g(x) = 1 - x^2 on U[0,1]: density of g is 1 / (2 sqrt(1 - y)).
        let mu = unit_density(200_000);
        let bins = Bins::uniform(0.0, 1.0, 50).unwrap();
        let img = mu.pushforward_1d(|p| 1.0 - p.x() * p.x(), &bins).unwrap();
        for k in 0..40 {
            let (a, b) = (bins.edges()[k], bins.edges()[k + 1]);
            // exact bin mass: sqrt(1-a) - sqrt(1-b)
            let exact = (1.0 - a).sqrt() - (1.0 - b).sqrt();
            assert!((img.weights()[k] - exact).abs() <= 1e-3 * exact, "bin {k}");
        }
    }

    #[test]
    fn ball_mass_examples() {
        let mu = atoms(&[(0.0, 1.0), (1.0, 2.0)]);
        assert_eq!(mu.ball_mass(&Point::d1(0.5), 10.0), 3.0);
        let delta = atoms(&[(0.3 + 1e-9, 1.0)]);
        assert_eq!(delta.ball_mass(&Point::d1(0.0), 0.3), 0.0);
        assert_eq!(delta.ball_mass(&Point::d1(0.0), 0.31), 1.0);
    }

    #[test]
    fn cdf_examples() {
        let d = atoms(&[(0.0, 1.0)]).cdf_1d().unwrap();
        assert_eq!(d.eval(-1e-12), 0.0);
        assert_eq!(d.eval(0.0), 1.0);
        assert_eq!(d.left_limit(0.0), 0.0);

        let two = atoms(&[(0.0, 1.0), (1.0, 1.0)]).cdf_1d().unwrap();
        assert_eq!(two.eval(0.5), 1.0);
        assert_eq!(two.eval(1.0), 2.0);
        assert_eq!(two.total(), 2.0);

        let u = unit_density(10).cdf_1d().unwrap();
        for x in [0.0, 0.05, 0.37, 0.5, 0.99, 1.0] {
            assert_abs_diff_eq!(u.eval(x), x, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(u.total(), 1.0, epsilon = 1e-12);

        let plane = DiscreteMeasure::atomic(2, vec![Point::d2(0.0, 0.0)], vec![1.0]).unwrap();
        assert!(matches!(plane.cdf_1d(), Err(Error::Dimension { .. })));
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(DiscreteMeasure::atomic(1, vec![Point::d1(0.0)], vec![-1.0]).is_err());
        assert!(DiscreteMeasure::atomic(1, vec![Point::d1(0.0)], vec![]).is_err());
        assert!(DiscreteMeasure::atomic(3, vec![], vec![]).is_err());
        assert!(Point::new(&[0.0, 1.0, 2.0]).is_err());
        assert!(DiscreteMeasure::grid(1, vec![Point::d1(0.0), Point::d1(0.1)], vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn grid_nodes_hit_decimal_literals() {
        let a = GridAxis::nodes(-1.0, 1.0, 201);
        assert_eq!(a.coord(135), 0.35);
        assert_eq!(a.coord(70), -0.3);
        assert_eq!(a.coord(160), 0.6);
        let b = GridAxis::nodes(-1.0, 1.0, 4001);
        assert_eq!(b.coord(1000), -0.5);
        assert_eq!(b.coord(3000), 0.5);
    }

    #[test]
    fn json_round_trip_and_digits() {
        let mu = atoms(&[(0.1, 1.0 / 3.0), (0.7, 0.5)]);
        let s = mu.to_json_string().unwrap();
        assert!(s.contains("3.3333333333333331e-1"));
        assert!(s.contains("\"kind\": \"atomic\""));
        assert_eq!(DiscreteMeasure::from_json_str(&s).unwrap(), mu);

        let g = unit_density(3);
        let back = DiscreteMeasure::from_json_str(&g.to_json_string().unwrap()).unwrap();
        assert_eq!(back, g);
        assert!(DiscreteMeasure::from_json_str(r#"{"dim":1,"kind":"grid","points":[[0]],"weights":[1]}"#).is_err());
    }

    fn arb_measure() -> impl Strategy<Value = DiscreteMeasure> {
        prop::collection::vec((-2.0f64..2.0, 0.0f64..10.0), 0..40).prop_map(|v| {
            DiscreteMeasure::atomic(
                1,
                v.iter().map(|&(x, _)| Point::d1(x)).collect(),
                v.iter().map(|&(_, w)| w).collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn restriction_splits_mass(mu in arb_measure(), mask in prop::collection::vec(any::<bool>(), 40)) {
            let s = SupportSet::from_predicate(mu.len(), |i| mask[i]);
            let a = mu.restrict(&s).unwrap().total_mass();
            let b = mu.restrict(&s.complement(mu.len())).unwrap().total_mass();
            let total = mu.total_mass();
            // each side is correctly rounded, so the recombination is within two ulps
            prop_assert!((a + b - total).abs() <= 4.0 * f64::EPSILON * total);
        }

        #[test]
        fn pushforward_preserves_mass(mu in arb_measure(), n in 1usize..30) {
            let bins = Bins::uniform(-1.0, 5.0, n).unwrap();
            let img = mu.pushforward_1d(|p| p.x() * p.x(), &bins).unwrap();
            let total = mu.total_mass();
            prop_assert!((img.total_mass() - total).abs() <= 4.0 * f64::EPSILON * total);
            prop_assert!(img.weights().iter().all(|w| *w >= 0.0));
        }

        #[test]
        fn integrate_is_linear(mu in arb_measure(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let f = |p: &Point| p.x().sin();
            let g = |p: &Point| p.x() * p.x();
            let lhs = mu.integrate(|p| a * f(p) + b * g(p)).unwrap();
            let rhs = a * mu.integrate(f).unwrap() + b * mu.integrate(g).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + mu.total_mass()) * 8.0);
        }

        #[test]
        fn cdf_ends_at_total_mass(mu in arb_measure()) {
            let c = mu.cdf_1d().unwrap();
            prop_assert!((c.eval(10.0) - mu.total_mass()).abs() <= 1e-12 * (1.0 + mu.total_mass()));
            prop_assert_eq!(c.eval(-10.0), 0.0);
        }
    }

    #[test]
    fn exact_sum_is_correctly_rounded() {
        assert_eq!(exact_sum([1e16, 1.0, -1e16]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(pairwise_sum(&[0.5; 1000]), 500.0);
    }
}
