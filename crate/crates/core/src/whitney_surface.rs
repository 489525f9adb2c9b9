//! Initial C¹ surface through K tangent to E^c: adapted charts, Hermite moving
//! least squares graphs with a Whitney residual check, and bump gluing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cones::SplittingFrame;
use crate::dynamics::{diff_with, wrap_with, Coord};
use crate::error::{Error, Result};
use crate::geometry::PointIndex;
use crate::linalg::{complement, orthonormalize, spectral_norm, subspace_angle, Matrix, Vector};
use crate::mesh::{Grid, HermiteField};
use crate::smoothing::smoothstep;

/// Coordinate-aligned splitting of ambient axes into base and vertical axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseFrame {
    pub base_axes: Vec<usize>,
    pub vert_axes: Vec<usize>,
    pub topology: Vec<Coord>,
}

fn subsets(n: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == d {
            out.push((0..n).filter(|i| mask >> i & 1 == 1).collect());
        }
    }
    out
}

impl BaseFrame {
    /// Base axes maximizing the smallest |det| of the E^c rows over the sample.
    pub fn choose(e_frames: &[Matrix], topology: &[Coord]) -> Result<Self> {
        let first = e_frames.first().ok_or_else(|| Error::TooFewPoints("no tangent frames".into()))?;
        let (n, d) = (first.nrows(), first.ncols());
        let mut best: Option<(f64, Vec<usize>)> = None;
        for axes in subsets(n, d) {
            let score = e_frames
                .iter()
                .map(|e| Matrix::from_fn(d, d, |i, j| e[(axes[i], j)]).determinant().abs())
                .fold(f64::INFINITY, f64::min);
            if best.as_ref().map_or(true, |(b, _)| score > *b + 1e-12) {
                best = Some((score, axes));
            }
        }
        let (score, base_axes) = best.expect("nonempty");
        if score < 1e-6 {
            return Err(Error::GraphObstruction("E^c is not a graph over any coordinate plane".into()));
        }
        let vert_axes = (0..n).filter(|i| !base_axes.contains(i)).collect();
        Ok(BaseFrame { base_axes, vert_axes, topology: topology.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.base_axes.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.base_axes.len() + self.vert_axes.len()
    }

    pub fn base(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.dim(), self.base_axes.iter().map(|&i| x[i]))
    }

    pub fn vert(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.vert_axes.len(), self.vert_axes.iter().map(|&i| x[i]))
    }

    pub fn join(&self, u: &Vector, w: &Vector) -> Vector {
        let mut x = Vector::zeros(self.ambient_dim());
        for (k, &i) in self.base_axes.iter().enumerate() {
            x[i] = u[k];
        }
        for (k, &i) in self.vert_axes.iter().enumerate() {
            x[i] = w[k];
        }
        x
    }

    pub fn base_period(&self, k: usize) -> Option<f64> {
        match self.topology.get(self.base_axes[k]) {
            Some(Coord::Circle(p)) => Some(*p),
            _ => None,
        }
    }

    pub fn vert_period(&self, k: usize) -> Option<f64> {
        match self.topology.get(self.vert_axes[k]) {
            Some(Coord::Circle(p)) => Some(*p),
            _ => None,
        }
    }

    /// Base difference a − b, nearest representative on circle axes.
    pub fn base_diff(&self, a: &Vector, b: &Vector) -> Vector {
        let mut d = a - b;
        for k in 0..self.dim() {
            if let Some(p) = self.base_period(k) {
                d[k] -= p * (d[k] / p).round();
            }
        }
        d
    }

    /// Vertical value moved by whole periods to lie nearest `reference`.
    pub fn unwrap_vert(&self, w: &Vector, reference: &Vector) -> Vector {
        let mut out = w.clone();
        for k in 0..out.len() {
            if let Some(p) = self.vert_period(k) {
                out[k] -= p * ((out[k] - reference[k]) / p).round();
            }
        }
        out
    }

    /// Selection matrices (base rows, vertical rows) of size d×n and (n−d)×n.
    pub fn selectors(&self) -> (Matrix, Matrix) {
        let n = self.ambient_dim();
        let b = Matrix::from_fn(self.dim(), n, |r, c| if self.base_axes[r] == c { 1.0 } else { 0.0 });
        let v = Matrix::from_fn(self.vert_axes.len(), n, |r, c| if self.vert_axes[r] == c { 1.0 } else { 0.0 });
        (b, v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartOptions {
    pub target_radius: f64,
    pub min_radius: f64,
    /// Whitney quotient tolerance.
    pub tolerance: f64,
    /// Fraction of the radius counted as covered by a chart.
    pub cover_fraction: f64,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions { target_radius: 0.25, min_radius: 1e-4, tolerance: 0.05, cover_fraction: 0.6 }
    }
}

/// Chart centred on a K sample with E^c(center) rotated to the horizontal plane.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptedChart {
    pub center: Vec<f64>,
    #[serde(skip)]
    pub rotation: Matrix,
    pub radius: f64,
    pub captured: Vec<usize>,
    #[serde(skip)]
    pub horizontal: Vec<Vector>,
    #[serde(skip)]
    pub heights: Vec<Vector>,
    #[serde(skip)]
    pub slopes: Vec<Matrix>,
    /// Number of halvings forced by the injectivity or slope tests.
    pub shrinks: u32,
}

impl AdaptedChart {
    pub fn dim(&self) -> usize {
        self.slopes.first().map_or(0, |s| s.ncols())
    }

    pub fn center_vec(&self) -> Vector {
        Vector::from_column_slice(&self.center)
    }

    /// Chart coordinates (horizontal, vertical) of an ambient point.
    pub fn to_local(&self, x: &Vector, topology: &[Coord]) -> (Vector, Vector) {
        let d = self.rotation.ncols() - self.heights.first().map_or(0, |h| h.len());
        let rel = self.rotation.transpose() * diff_with(topology, x, &self.center_vec());
        (rel.rows(0, d).into_owned(), rel.rows(d, rel.len() - d).into_owned())
    }
}

fn slope_of(rotation: &Matrix, e: &Matrix) -> Option<Matrix> {
    let d = e.ncols();
    let n = e.nrows();
    let m = rotation.transpose() * e;
    let a = m.rows(0, d).into_owned();
    let b = m.rows(d, n - d).into_owned();
    a.try_inverse().map(|ai| b * ai)
}

fn chart_at(
    points: &[Vector],
    tangents: &[Matrix],
    index: &PointIndex,
    topology: &[Coord],
    c: usize,
    radius: f64,
) -> std::result::Result<AdaptedChart, String> {
    let n = points[c].len();
    let d = tangents[c].ncols();
    let e = orthonormalize(&tangents[c]);
    let comp = complement(&e);
    let mut cols: Vec<Vector> = (0..d).map(|j| e.column(j).into_owned()).collect();
    cols.extend((0..n - d).map(|j| comp.column(j).into_owned()));
    let rotation = Matrix::from_columns(&cols);
    let mut captured = index.within(&points[c], radius);
    captured.sort_unstable();
    let mut horizontal = Vec::with_capacity(captured.len());
    let mut heights = Vec::with_capacity(captured.len());
    let mut slopes = Vec::with_capacity(captured.len());
    for &i in &captured {
        let rel = rotation.transpose() * diff_with(topology, &points[i], &points[c]);
        horizontal.push(rel.rows(0, d).into_owned());
        heights.push(rel.rows(d, n - d).into_owned());
        let s = slope_of(&rotation, &tangents[i]).ok_or_else(|| format!("tangent at {i} is vertical"))?;
        if spectral_norm(&s) > 1.0 {
            return Err(format!("slope {:.3} > 1 at sample {i}", spectral_norm(&s)));
        }
        slopes.push(s);
    }
    for a in 0..captured.len() {
        for b in a + 1..captured.len() {
            let dh = (&horizontal[a] - &horizontal[b]).norm();
            let dv = (&heights[a] - &heights[b]).norm();
            if dv > 2.0 * dh + 1e-12 {
                return Err(format!("samples {} and {} share a vertical fibre", captured[a], captured[b]));
            }
        }
    }
    Ok(AdaptedChart {
        center: points[c].as_slice().to_vec(),
        rotation,
        radius,
        captured,
        horizontal,
        heights,
        slopes,
        shrinks: 0,
    })
}

/// Greedy cover of sampled points with prescribed tangent planes by adapted charts.
pub fn charts_from_data(points: &[Vector], tangents: &[Matrix], topology: &[Coord], opts: &ChartOptions) -> Result<Vec<AdaptedChart>> {
    if points.is_empty() || points.len() != tangents.len() {
        return Err(Error::TooFewPoints("charts need one tangent plane per sample".into()));
    }
    let index = PointIndex::new(points.to_vec(), topology.to_vec(), opts.target_radius * 0.5);
    let mut covered = vec![false; points.len()];
    let mut charts = Vec::new();
    while let Some(c) = covered.iter().position(|&v| !v) {
        let mut radius = opts.target_radius;
        let mut shrinks = 0;
        let chart = loop {
            match chart_at(points, tangents, &index, topology, c, radius) {
                Ok(mut ch) => {
                    ch.shrinks = shrinks;
                    break ch;
                }
                Err(reason) => {
                    radius *= 0.5;
                    shrinks += 1;
                    if radius < opts.min_radius {
                        return Err(Error::ChartFailure { index: c, reason });
                    }
                }
            }
        };
        for i in index.within(&points[c], opts.cover_fraction * chart.radius) {
            covered[i] = true;
        }
        covered[c] = true;
        charts.push(chart);
    }
    Ok(charts)
}

/// Adapted charts on the samples of a splitting, tangent planes E^c(x).
pub fn build_adapted_charts(split: &SplittingFrame, topology: &[Coord], opts: &ChartOptions) -> Result<Vec<AdaptedChart>> {
    if split.e_frames.len() != split.len() {
        return Err(Error::SplittingMissing("E frames absent".into()));
    }
    let points: Vec<Vector> = (0..split.len()).map(|i| split.point(i)).collect();
    charts_from_data(&points, &split.e_frames, topology, opts)
}

/// Hermite moving-least-squares graph over a chart's horizontal plane.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalGraph {
    #[serde(skip)]
    pub horizontal: Vec<Vector>,
    #[serde(skip)]
    pub heights: Vec<Vector>,
    #[serde(skip)]
    pub slopes: Vec<Matrix>,
    pub bandwidth: f64,
    /// Largest Whitney quotient over captured pairs.
    pub quotient: f64,
}

fn basis(t: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    if t.len() == 1 {
        (vec![1.0, t[0], 0.5 * t[0] * t[0]], vec![vec![0.0, 1.0, t[0]]])
    } else {
        let (a, b) = (t[0], t[1]);
        (
            vec![1.0, a, b, 0.5 * a * a, a * b, 0.5 * b * b],
            vec![vec![0.0, 1.0, 0.0, a, b, 0.0], vec![0.0, 0.0, 1.0, 0.0, a, b]],
        )
    }
}

impl LocalGraph {
    pub fn dim(&self) -> usize {
        self.horizontal.first().map_or(0, |s| s.len())
    }

    /// Height and derivative (q×d) at horizontal coordinates `s`.
    pub fn eval(&self, s: &Vector) -> (Vector, Matrix) {
        let d = self.dim();
        let q = self.heights[0].len();
        let b = self.bandwidth;
        let mut logw = Vec::with_capacity(self.horizontal.len());
        for (i, si) in self.horizontal.iter().enumerate() {
            let r = (s - si).norm() / b;
            if r < 1e-9 {
                return (self.heights[i].clone(), self.slopes[i].clone());
            }
            logw.push(-r * r - 2.0 * r.ln());
        }
        let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let used: Vec<(usize, f64)> =
            logw.iter().enumerate().map(|(i, &l)| (i, (l - top).exp())).filter(|&(_, w)| w > 1e-30).collect();
        let p = if d == 1 { 3 } else { 6 };
        let rows = used.len() * (1 + d);
        let mut a = Matrix::zeros(rows, p);
        let mut rhs = Matrix::zeros(rows, q);
        let mut r = 0;
        for &(i, w) in &used {
            let sw = w.sqrt();
            let t: Vec<f64> = (0..d).map(|k| (self.horizontal[i][k] - s[k]) / b).collect();
            let (m, dm) = basis(&t);
            for c in 0..p {
                a[(r, c)] = sw * m[c];
            }
            for j in 0..q {
                rhs[(r, j)] = sw * self.heights[i][j];
            }
            r += 1;
            for k in 0..d {
                for c in 0..p {
                    a[(r, c)] = sw * dm[k][c];
                }
                for j in 0..q {
                    rhs[(r, j)] = sw * b * self.slopes[i][(j, k)];
                }
                r += 1;
            }
        }
        let coef = a.svd(true, true).solve(&rhs, 1e-13).unwrap_or_else(|_| Matrix::zeros(p, q));
        let v = Vector::from_iterator(q, (0..q).map(|j| coef[(0, j)]));
        let g = Matrix::from_fn(q, d, |j, k| coef[(1 + k, j)] / b);
        (v, g)
    }
}

/// Symmetrized Whitney quotient ‖(v_y − v_x) − ½(D_x + D_y)(s_y − s_x)‖ / ‖s_y − s_x‖.
pub fn whitney_quotient(horizontal: &[Vector], heights: &[Vector], slopes: &[Matrix]) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..horizontal.len() {
        for b in a + 1..horizontal.len() {
            let ds = &horizontal[b] - &horizontal[a];
            let n = ds.norm();
            if n < 1e-14 {
                continue;
            }
            let r = (&heights[b] - &heights[a]) - (&slopes[a] + &slopes[b]) * &ds * 0.5;
            worst = worst.max(r.norm() / n);
        }
    }
    worst
}

/// Fit the chart's Hermite data; fails when the data violate the Whitney condition.
pub fn fit_local_graph(chart: &AdaptedChart, tolerance: f64) -> Result<LocalGraph> {
    if chart.horizontal.is_empty() {
        return Err(Error::TooFewPoints("chart captured no samples".into()));
    }
    let quotient = whitney_quotient(&chart.horizontal, &chart.heights, &chart.slopes);
    if quotient > tolerance {
        return Err(Error::ResidualTooLarge { quotient, tol: tolerance });
    }
    let k = chart.horizontal.len();
    let bandwidth = if k < 2 {
        chart.radius
    } else {
        let mean_nn: f64 = (0..k)
            .map(|i| {
                (0..k)
                    .filter(|&j| j != i)
                    .map(|j| (&chart.horizontal[i] - &chart.horizontal[j]).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / k as f64;
        (2.0 * mean_nn).max(1e-12)
    };
    Ok(LocalGraph {
        horizontal: chart.horizontal.clone(),
        heights: chart.heights.clone(),
        slopes: chart.slopes.clone(),
        bandwidth,
        quotient,
    })
}

/// Glued surface: a graph over coordinate-aligned base axes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedSurface {
    pub frame: BaseFrame,
    pub charts: Vec<AdaptedChart>,
    pub graphs: Vec<LocalGraph>,
    /// Gluing order (chart indices).
    pub order: Vec<usize>,
    pub reference: Vec<f64>,
}

/// Partition-of-unity weight of a chart at chart-radial coordinate ρ.
pub fn blend_weight(rho: f64) -> f64 {
    1.0 - smoothstep((rho - 0.6) / 0.3)
}

impl FittedSurface {
    pub fn dim(&self) -> usize {
        self.frame.dim()
    }

    /// Chart k's graph expressed over the global base: (vertical value, ρ).
    fn chart_value(&self, k: usize, u: &Vector) -> Option<(Vector, f64)> {
        let ch = &self.charts[k];
        let g = &self.graphs[k];
        let d = self.dim();
        let c = ch.center_vec();
        let du = self.frame.base_diff(u, &self.frame.base(&c));
        let (sb, sv) = self.frame.selectors();
        let rh = ch.rotation.columns(0, d).into_owned();
        let rv = ch.rotation.columns(d, ch.rotation.ncols() - d).into_owned();
        let mut s = Vector::zeros(d);
        let mut converged = false;
        let mut p = Vector::zeros(c.len());
        for _ in 0..40 {
            let (v, gd) = g.eval(&s);
            p = &rh * &s + &rv * &v;
            let r = &sb * &p - &du;
            let j = &sb * (&rh + &rv * &gd);
            let step = j.lu().solve(&r)?;
            s -= &step;
            if step.norm() <= 1e-14 * (1.0 + s.norm()) {
                let (v, _) = g.eval(&s);
                p = &rh * &s + &rv * &v;
                converged = true;
                break;
            }
        }
        if !converged || !p.iter().all(|x| x.is_finite()) {
            return None;
        }
        let w = self.frame.vert(&c) + &sv * &p;
        Some((w, s.norm() / ch.radius))
    }

    /// Vertical coordinates of the surface above base point `u`.
    pub fn height(&self, u: &Vector) -> Result<Vector> {
        let mut near: Vec<(usize, Vector, f64)> = Vec::new();
        for &k in &self.order {
            let c = self.charts[k].center_vec();
            let du = self.frame.base_diff(u, &self.frame.base(&c)).norm();
            if du > 3.0 * self.charts[k].radius {
                continue;
            }
            match self.chart_value(k, u) {
                Some((w, rho)) => near.push((k, w, rho)),
                None if du <= self.charts[k].radius => {
                    return Err(Error::GraphObstruction(format!("chart {k} is not a graph over base point {:?}", u.as_slice())));
                }
                None => {}
            }
        }
        let reference = Vector::from_column_slice(&self.reference);
        if near.is_empty() {
            let k = self
                .order
                .iter()
                .cloned()
                .min_by(|&a, &b| {
                    let da = self.frame.base_diff(u, &self.frame.base(&self.charts[a].center_vec())).norm();
                    let db = self.frame.base_diff(u, &self.frame.base(&self.charts[b].center_vec())).norm();
                    da.total_cmp(&db)
                })
                .expect("at least one chart");
            let (w, _) = self
                .chart_value(k, u)
                .ok_or_else(|| Error::GraphObstruction(format!("no chart reaches base point {:?}", u.as_slice())))?;
            return Ok(self.frame.unwrap_vert(&w, &reference));
        }
        let top = near.iter().map(|(_, _, r)| -r * r).fold(f64::NEG_INFINITY, f64::max);
        let anchor = self.frame.unwrap_vert(&near[0].1, &reference);
        let mut acc = Vector::zeros(anchor.len());
        let mut total = 0.0;
        for (_, w, rho) in &near {
            let wt = (-rho * rho - top).exp();
            acc += self.frame.unwrap_vert(w, &anchor) * wt;
            total += wt;
        }
        let mut v = acc / total;
        for (_, w, rho) in &near {
            let t = blend_weight(*rho);
            if t > 0.0 {
                let g = self.frame.unwrap_vert(w, &v);
                v = &v * (1.0 - t) + g * t;
            }
        }
        Ok(self.frame.unwrap_vert(&v, &reference))
    }

    /// Ambient point above `u` (circle coordinates wrapped).
    pub fn point(&self, u: &Vector) -> Result<Vector> {
        Ok(wrap_with(&self.frame.topology, &self.frame.join(u, &self.height(u)?)))
    }

    /// Tangent d-plane at `u` (n×d, columns ∂σ/∂u_i) by central differences.
    pub fn tangent(&self, u: &Vector, step: f64) -> Result<Matrix> {
        let n = self.frame.ambient_dim();
        let d = self.dim();
        let mut cols = Vec::with_capacity(d);
        for i in 0..d {
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += step;
            um[i] -= step;
            let dh = (self.height(&up)? - self.height(&um)?) / (2.0 * step);
            let mut e = Vector::zeros(d);
            e[i] = 1.0;
            let col = self.frame.join(&e, &dh);
            debug_assert_eq!(col.len(), n);
            cols.push(col);
        }
        Ok(Matrix::from_columns(&cols))
    }

    /// Largest distance from a sample to the surface point above its base coordinates.
    pub fn max_sample_distance(&self, points: &[Vector]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for x in points {
            let p = self.point(&self.frame.base(x))?;
            worst = worst.max(diff_with(&self.frame.topology, &p, x).norm());
        }
        Ok(worst)
    }

    /// Largest angle between the surface tangent and the prescribed planes.
    pub fn max_tangent_angle(&self, points: &[Vector], planes: &[Matrix], step: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (x, e) in points.iter().zip(planes) {
            let t = orthonormalize(&self.tangent(&self.frame.base(x), step)?);
            worst = worst.max(subspace_angle(&t, &orthonormalize(e)));
        }
        Ok(worst)
    }

    /// Tabulate values and derivatives on a grid for C¹ Hermite evaluation.
    pub fn tabulate(&self, grid: &Grid) -> Result<SurfaceMesh> {
        let d = self.dim();
        let q = self.frame.vert_axes.len();
        let eta = 1e-3 * grid.max_spacing();
        let stride = HermiteField::stride(d);
        let rows: Vec<Result<Vec<f64>>> = (0..grid.len())
            .into_par_iter()
            .map(|f| {
                let u = grid.node_flat(f);
                let h0 = self.height(&u)?;
                let at = |du: &[f64]| -> Result<Vector> {
                    let mut v = u.clone();
                    for i in 0..d {
                        v[i] += du[i] * eta;
                    }
                    Ok(self.frame.unwrap_vert(&self.height(&v)?, &h0))
                };
                let mut out = vec![0.0; q * stride];
                if d == 1 {
                    let (p, m) = (at(&[1.0])?, at(&[-1.0])?);
                    for j in 0..q {
                        out[j * stride] = h0[j];
                        out[j * stride + 1] = (p[j] - m[j]) / (2.0 * eta);
                    }
                } else {
                    let (px, mx, py, my) = (at(&[1.0, 0.0])?, at(&[-1.0, 0.0])?, at(&[0.0, 1.0])?, at(&[0.0, -1.0])?);
                    let (pp, pm, mp, mm) = (at(&[1.0, 1.0])?, at(&[1.0, -1.0])?, at(&[-1.0, 1.0])?, at(&[-1.0, -1.0])?);
                    for j in 0..q {
                        out[j * stride] = h0[j];
                        out[j * stride + 1] = (px[j] - mx[j]) / (2.0 * eta);
                        out[j * stride + 2] = (py[j] - my[j]) / (2.0 * eta);
                        out[j * stride + 3] = (pp[j] - pm[j] - mp[j] + mm[j]) / (4.0 * eta * eta);
                    }
                }
                Ok(out)
            })
            .collect();
        let mut fields: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.len() * stride); q];
        for row in rows {
            let row = row?;
            for j in 0..q {
                fields[j].extend_from_slice(&row[j * stride..(j + 1) * stride]);
            }
        }
        Ok(SurfaceMesh {
            frame: self.frame.clone(),
            fields: fields.into_iter().map(|data| HermiteField { grid: grid.clone(), data }).collect(),
        })
    }
}

/// Glue local graphs into one surface over the coordinate-aligned base.
pub fn glue_charts(charts: Vec<AdaptedChart>, graphs: Vec<LocalGraph>, frame: BaseFrame, order: Option<Vec<usize>>) -> Result<FittedSurface> {
    if charts.is_empty() || charts.len() != graphs.len() {
        return Err(Error::TooFewPoints("gluing needs one graph per chart".into()));
    }
    let order = order.unwrap_or_else(|| (0..charts.len()).collect());
    let reference = frame.vert(&charts[order[0]].center_vec()).as_slice().to_vec();
    let surface = FittedSurface { frame, charts, graphs, order, reference };
    for (k, ch) in surface.charts.iter().enumerate() {
        let u = surface.frame.base(&ch.center_vec());
        if surface.chart_value(k, &u).is_none() {
            return Err(Error::GraphObstruction(format!("chart {k} is not a graph over its own base point")));
        }
    }
    Ok(surface)
}

/// Charts, local fits and gluing from sampled points with tangent planes.
pub fn fit_surface(points: &[Vector], tangents: &[Matrix], topology: &[Coord], opts: &ChartOptions) -> Result<FittedSurface> {
    let charts = charts_from_data(points, tangents, topology, opts)?;
    let graphs: Vec<LocalGraph> =
        charts.par_iter().map(|c| fit_local_graph(c, opts.tolerance)).collect::<Result<Vec<_>>>()?;
    let frame = BaseFrame::choose(tangents, topology)?;
    glue_charts(charts, graphs, frame, None)
}

/// Whitney surface through the splitting's samples tangent to E.
pub fn build_surface(split: &SplittingFrame, topology: &[Coord], opts: &ChartOptions) -> Result<FittedSurface> {
    let points: Vec<Vector> = (0..split.len()).map(|i| split.point(i)).collect();
    fit_surface(&points, &split.e_frames, topology, opts)
}

/// Tabulated surface: Hermite fields per vertical coordinate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub frame: BaseFrame,
    pub fields: Vec<HermiteField>,
}

impl SurfaceMesh {
    pub fn grid(&self) -> &Grid {
        &self.fields[0].grid
    }

    /// Height and its derivative (q×d) at base point `u`; `None` off the grid.
    pub fn height(&self, u: &Vector) -> Option<(Vector, Matrix)> {
        let q = self.fields.len();
        let d = self.frame.dim();
        let mut v = Vector::zeros(q);
        let mut g = Matrix::zeros(q, d);
        for (j, f) in self.fields.iter().enumerate() {
            let (val, grad) = f.eval(u)?;
            v[j] = val;
            for i in 0..d {
                g[(j, i)] = grad[i];
            }
        }
        Some((v, g))
    }

    /// Unwrapped ambient point above `u`.
    pub fn point_raw(&self, u: &Vector) -> Option<Vector> {
        self.height(u).map(|(v, _)| self.frame.join(u, &v))
    }

    /// Tangent frame (n×d) above `u`.
    pub fn tangent(&self, u: &Vector) -> Option<Matrix> {
        let (_, g) = self.height(u)?;
        let d = self.frame.dim();
        let cols: Vec<Vector> = (0..d)
            .map(|i| {
                let mut e = Vector::zeros(d);
                e[i] = 1.0;
                self.frame.join(&e, &g.column(i).into_owned())
            })
            .collect();
        Some(Matrix::from_columns(&cols))
    }
}
