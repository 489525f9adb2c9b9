//! Point-cloud queries on flat spaces with optional circle coordinates.

use crate::dynamics::Coord;
use crate::linalg::Vector;
use rustc_hash::FxHashMap;

const MAX_DIM: usize = 6;
type Key = [i64; MAX_DIM];

/// Uniform-grid spatial hash over a point cloud (ambient dimension at most 6).
#[derive(Clone, Debug)]
pub struct PointIndex {
    points: Vec<Vector>,
    topology: Vec<Coord>,
    cell: f64,
    dim: usize,
    /// Cell count along each circle coordinate, 0 for lines.
    wrap_cells: Vec<i64>,
    widths: Vec<f64>,
    periods: Vec<f64>,
    cells: FxHashMap<Key, Vec<usize>>,
}

impl PointIndex {
    pub fn new(points: Vec<Vector>, topology: Vec<Coord>, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite());
        let dim = points.first().map_or(topology.len(), |p| p.len());
        assert!(dim <= MAX_DIM, "PointIndex supports dimension <= {MAX_DIM}");
        let mut wrap_cells = vec![0; dim];
        let mut widths = vec![cell; dim];
        let mut periods = vec![0.0; dim];
        for i in 0..dim {
            if let Some(Coord::Circle(p)) = topology.get(i) {
                let n = ((p / cell).ceil() as i64).max(1);
                wrap_cells[i] = n;
                widths[i] = p / n as f64;
                periods[i] = *p;
            }
        }
        let mut idx = PointIndex { points, topology, cell, dim, wrap_cells, widths, periods, cells: FxHashMap::default() };
        for i in 0..idx.points.len() {
            let k = idx.key(&idx.points[i]);
            idx.cells.entry(k).or_default().push(i);
        }
        idx
    }

    /// Cell size chosen from the bounding box and point count, then refined until
    /// occupied cells hold a handful of points.
    pub fn auto(points: Vec<Vector>, topology: Vec<Coord>) -> Self {
        let mut cell = auto_cell(&points);
        let mut idx = PointIndex::new(points, topology, cell);
        for _ in 0..12 {
            if idx.cells.is_empty() || idx.points.len() <= 8 * idx.cells.len() {
                break;
            }
            cell *= 0.5;
            idx = PointIndex::new(std::mem::take(&mut idx.points), std::mem::take(&mut idx.topology), cell);
        }
        idx
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    fn key(&self, x: &Vector) -> Key {
        let mut k = [0i64; MAX_DIM];
        for i in 0..self.dim {
            let mut c = (x[i] / self.widths[i]).floor() as i64;
            if self.wrap_cells[i] > 0 {
                c = c.rem_euclid(self.wrap_cells[i]);
            }
            k[i] = c;
        }
        k
    }

    fn dist2(&self, a: &Vector, b: &Vector) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            let mut d = a[i] - b[i];
            let p = self.periods[i];
            if p > 0.0 {
                d -= p * (d / p).round();
            }
            s += d * d;
        }
        s
    }

    fn dist(&self, a: &Vector, b: &Vector) -> f64 {
        self.dist2(a, b).sqrt()
    }

    /// Indices of points within distance r of x, in increasing index order.
    pub fn within(&self, x: &Vector, r: f64) -> Vec<usize> {
        let n = self.dim;
        let mut out = Vec::new();
        if !r.is_finite() || x.iter().any(|c| !c.is_finite()) {
            return out;
        }
        let r2 = r * r;
        // per-axis cell ranges; a circle axis whose window covers it is scanned once
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        let mut ncell = 1.0f64;
        for i in 0..n {
            let span = (r / self.widths[i]).ceil().min(1e12) as i64;
            let c = (x[i] / self.widths[i]).floor() as i64;
            let w = self.wrap_cells[i];
            if w > 0 && 2 * span + 1 >= w {
                lo[i] = 0;
                hi[i] = w - 1;
            } else {
                lo[i] = c.saturating_sub(span);
                hi[i] = c.saturating_add(span);
            }
            ncell *= (hi[i] - lo[i] + 1) as f64;
        }
        if ncell > (self.points.len() as f64).max(64.0) {
            for (i, p) in self.points.iter().enumerate() {
                if self.dist2(p, x) <= r2 {
                    out.push(i);
                }
            }
            return out;
        }
        let mut cur = lo;
        loop {
            let mut key = [0i64; MAX_DIM];
            for i in 0..n {
                key[i] = if self.wrap_cells[i] > 0 { cur[i].rem_euclid(self.wrap_cells[i]) } else { cur[i] };
            }
            if let Some(list) = self.cells.get(&key) {
                for &i in list {
                    if self.dist2(&self.points[i], x) <= r2 {
                        out.push(i);
                    }
                }
            }
            let mut d = 0;
            while d < n {
                if cur[d] < hi[d] {
                    cur[d] += 1;
                    break;
                }
                cur[d] = lo[d];
                d += 1;
            }
            if d == n {
                break;
            }
        }
        out.sort_unstable();
        out
    }

    /// Nearest point (index, distance); None when empty.
    pub fn nearest(&self, x: &Vector) -> Option<(usize, f64)> {
        if self.points.is_empty() || x.iter().any(|c| !c.is_finite()) {
            return None;
        }
        let mut r = self.cell;
        for _ in 0..64 {
            let cand = self.within(x, r);
            if !cand.is_empty() {
                return Some(self.closest(x, cand.into_iter()));
            }
            r *= 2.0;
        }
        Some(self.closest(x, 0..self.points.len()))
    }

    fn closest(&self, x: &Vector, cand: impl Iterator<Item = usize>) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for i in cand {
            let d = self.dist(&self.points[i], x);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

/// Bounding-box extent divided by the per-axis point count.
pub fn auto_cell(points: &[Vector]) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    let n = points[0].len();
    let mut ext: f64 = 0.0;
    for i in 0..n {
        let lo = points.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
        ext = ext.max(hi - lo);
    }
    let c = ext / (points.len() as f64).powf(1.0 / n as f64);
    if c > 1e-9 {
        c
    } else {
        1e-3
    }
}

/// Euclidean distance from `x` to the polyline through `poly`.
pub fn polyline_distance(x: &Vector, poly: &[Vector]) -> f64 {
    if poly.len() == 1 {
        return (x - &poly[0]).norm();
    }
    poly.windows(2)
        .map(|w| {
            let d = &w[1] - &w[0];
            let l2 = d.norm_squared();
            let t = if l2 > 0.0 { ((x - &w[0]).dot(&d) / l2).clamp(0.0, 1.0) } else { 0.0 };
            (x - (&w[0] + d * t)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}
