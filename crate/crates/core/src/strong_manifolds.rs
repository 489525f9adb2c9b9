//! Local strong unstable leaves and the strong-connection test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cones::{ConeField, SplittingFrame};
use crate::dynamics::SmoothMap;
use crate::geometry::PointIndex;
use crate::invariant_set::SampledInvariantSet;
use crate::linalg::Vector;
use crate::{Error, Result};

pub const MAX_DEPTH: usize = 60;
/// Smallest admissible seed half-length; below it the seed is lost in rounding.
const MIN_SEED: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct LeafOptions {
    /// Backward-orbit points within this distance of a K sample are snapped to it.
    pub snap_tol: f64,
    /// Output samples on each side of the base point.
    pub samples: usize,
    pub max_depth: usize,
}

impl Default for LeafOptions {
    fn default() -> Self {
        LeafOptions { snap_tol: 1e-6, samples: 200, max_depth: MAX_DEPTH }
    }
}

/// Arclength-parameterized local leaf through a point of K.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrongLeafPatch {
    pub base: Vec<f64>,
    pub radius: f64,
    /// Arclength parameters, increasing, containing 0.
    pub params: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub depth: usize,
    /// ‖Df^N v‖ for the unit seed direction v at f^{-N}(x).
    pub stretch: f64,
    /// Predicted seed-direction error factor (λ_E/λ_F)^N.
    pub error_factor: f64,
    /// Distance between the pushed seed centre and the base point.
    pub base_offset: f64,
    /// Measured backward contraction rate on the patch.
    pub mu: f64,
    pub lambda_e: f64,
    pub certified: bool,
}

impl StrongLeafPatch {
    pub fn vectors(&self) -> Vec<Vector> {
        self.points.iter().map(|p| Vector::from_column_slice(p)).collect()
    }

    /// Unit tangent at the base point, by central differences of neighbouring samples.
    pub fn tangent_at_base(&self, map: &SmoothMap) -> Vector {
        let c = self.params.iter().position(|&s| s == 0.0).unwrap_or(self.params.len() / 2);
        let a = Vector::from_column_slice(&self.points[c.saturating_sub(1)]);
        let b = Vector::from_column_slice(&self.points[(c + 1).min(self.points.len() - 1)]);
        map.diff(&b, &a).normalize()
    }
}

struct Orbit<'a> {
    map: &'a SmoothMap,
    index: Option<PointIndex>,
    tol: f64,
}

impl Orbit<'_> {
    fn back(&self, x: &Vector) -> Result<Vector> {
        let y = self.map.apply_inverse(x).map_err(|e| Error::OrbitEscape(e.to_string()))?;
        if let Some(idx) = &self.index {
            if let Some((j, d)) = idx.nearest(&y) {
                if d <= self.tol {
                    return Ok(idx.points()[j].clone());
                }
            }
        }
        Ok(y)
    }
}

fn frames_index(split: &SplittingFrame, map: &SmoothMap) -> PointIndex {
    PointIndex::auto((0..split.len()).map(|i| split.point(i)).collect(), map.topology.clone())
}

pub fn grow_unstable_leaf(
    map: &SmoothMap,
    k: &SampledInvariantSet,
    split: &SplittingFrame,
    x: &Vector,
    radius: f64,
) -> Result<StrongLeafPatch> {
    let orbit = Orbit { map, index: Some(PointIndex::auto(k.vectors(), map.topology.clone())), tol: 1e-6 };
    grow_with(&orbit, &frames_index(split, map), split, x, radius, &LeafOptions::default())
}

pub fn grow_unstable_leaf_with(
    map: &SmoothMap,
    k: &SampledInvariantSet,
    split: &SplittingFrame,
    x: &Vector,
    radius: f64,
    opts: &LeafOptions,
) -> Result<StrongLeafPatch> {
    let orbit = Orbit { map, index: Some(PointIndex::auto(k.vectors(), map.topology.clone())), tol: opts.snap_tol };
    grow_with(&orbit, &frames_index(split, map), split, x, radius, opts)
}

fn grow_with(
    orbit: &Orbit,
    frames: &PointIndex,
    split: &SplittingFrame,
    x: &Vector,
    radius: f64,
    opts: &LeafOptions,
) -> Result<StrongLeafPatch> {
    let map = orbit.map;
    if split.is_empty() || split.f_frames.is_empty() {
        return Err(Error::SplittingMissing("no F frames".into()));
    }
    if split.d_f != 1 {
        return Err(Error::DimensionUnsupported(format!("leaf growth supports dim F = 1, got {}", split.d_f)));
    }
    let ratio = (split.lambda_e / split.lambda_f).min(1.0 - 1e-12);
    let wanted = ((1e-8f64).ln() / ratio.ln()).ceil().max(1.0) as usize;
    let x = map.wrap(x);
    // walk back while the seed stays resolvable
    let mut back = vec![x.clone()];
    let mut stretch = 1.0;
    let mut dir = Vector::zeros(map.dim);
    for depth in 1..=wanted.min(opts.max_depth) {
        let y = orbit.back(back.last().unwrap())?;
        let (fi, _) = frames.nearest(&y).ok_or_else(|| Error::SplittingMissing("empty frame index".into()))?;
        let v = split.f_frames[fi].column(0).into_owned();
        let mut w = v.clone();
        let mut p = y.clone();
        for _ in 0..depth {
            w = map.jacobian_at(&p)? * w;
            p = map.apply(&p)?;
        }
        let s = w.norm();
        if !s.is_finite() || 1.5 * radius / s < MIN_SEED * (1.0 + y.norm()) {
            break;
        }
        back.push(y);
        stretch = s;
        dir = v;
    }
    let depth = back.len() - 1;
    let seed = back[depth].clone();
    if depth == 0 {
        let (fi, _) = frames.nearest(&x).unwrap();
        dir = split.f_frames[fi].column(0).into_owned();
    }
    dir = refine_direction(orbit, frames, split, &seed, dir, 12);
    let push = |t: f64| -> Result<Vector> { map.evaluate(&map.wrap(&(&seed + &dir * t)), depth as i64) };
    let half = 1.5 * radius / stretch;
    let target = radius / (8 * opts.samples) as f64;
    let mut ts: Vec<f64> = (0..=64).map(|i| -half + 2.0 * half * i as f64 / 64.0).collect();
    let mut pts: Vec<Vector> = ts.iter().map(|&t| push(t)).collect::<Result<_>>()?;
    for _ in 0..30 {
        let mut nt = Vec::with_capacity(ts.len() * 2);
        let mut np = Vec::with_capacity(ts.len() * 2);
        let mut refined = false;
        for i in 0..ts.len() {
            nt.push(ts[i]);
            np.push(pts[i].clone());
            if i + 1 < ts.len() && map.dist(&pts[i], &pts[i + 1]) > target {
                let tm = 0.5 * (ts[i] + ts[i + 1]);
                nt.push(tm);
                np.push(push(tm)?);
                refined = true;
            }
        }
        ts = nt;
        pts = np;
        if !refined || ts.len() > 400_000 {
            break;
        }
    }
    // unwrap around the pushed seed centre and measure arclength
    let c = ts.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
    let mut unwrapped = vec![Vector::zeros(map.dim); pts.len()];
    unwrapped[c] = pts[c].clone();
    let mut arc = vec![0.0; pts.len()];
    for i in (c + 1)..pts.len() {
        let d = map.diff(&pts[i], &pts[i - 1]);
        arc[i] = arc[i - 1] + d.norm();
        unwrapped[i] = &unwrapped[i - 1] + d;
    }
    for i in (0..c).rev() {
        let d = map.diff(&pts[i], &pts[i + 1]);
        arc[i] = arc[i + 1] - d.norm();
        unwrapped[i] = &unwrapped[i + 1] + d;
    }
    let base_offset = map.dist(&pts[c], &x);
    let reach = radius.min(arc[pts.len() - 1]).min(-arc[0]);
    let m = opts.samples;
    let mut params = Vec::with_capacity(2 * m + 1);
    let mut out = Vec::with_capacity(2 * m + 1);
    for j in 0..=(2 * m) {
        let s = reach * (j as f64 - m as f64) / m as f64;
        let i = arc.partition_point(|&a| a < s).clamp(1, arc.len() - 1);
        let span = arc[i] - arc[i - 1];
        let w = if span > 0.0 { ((s - arc[i - 1]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let p = &unwrapped[i - 1] * (1.0 - w) + &unwrapped[i] * w;
        params.push(if j == m { 0.0 } else { s });
        out.push(map.wrap(&p).as_slice().to_vec());
    }
    // exact pushed points (not interpolated ones) certify the rate
    let probe: Vec<(Vec<f64>, f64)> = (0..pts.len())
        .filter(|&i| i != c && arc[i].abs() <= reach)
        .step_by((pts.len() / 20).max(1))
        .map(|i| (pts[i].as_slice().to_vec(), arc[i]))
        .collect();
    let (ppts, pparams): (Vec<Vec<f64>>, Vec<f64>) = probe.into_iter().unzip();
    let mu = backward_rate(map, &pts[c], &ppts, &pparams, depth.max(1))?;
    Ok(StrongLeafPatch {
        base: x.as_slice().to_vec(),
        radius: reach,
        params,
        points: out,
        depth,
        stretch,
        error_factor: ratio.powi(depth as i32),
        base_offset,
        mu,
        lambda_e: split.lambda_e,
        certified: mu > split.lambda_e,
    })
}

/// F direction at `y` carried forward from `steps` backward iterates, which
/// damps the error of the nearest-sample frame by the domination gap.
fn refine_direction(orbit: &Orbit, frames: &PointIndex, split: &SplittingFrame, y: &Vector, fallback: Vector, steps: usize) -> Vector {
    let mut chain = vec![y.clone()];
    for _ in 0..steps {
        match orbit.back(chain.last().unwrap()) {
            Ok(z) => chain.push(z),
            Err(_) => break,
        }
    }
    let start = chain.last().unwrap();
    let Some((fi, _)) = frames.nearest(start) else { return fallback };
    let mut w = split.f_frames[fi].column(0).into_owned();
    for z in chain.iter().skip(1).rev() {
        match orbit.map.jacobian_at(z) {
            Ok(j) => w = (j * w).normalize(),
            Err(_) => return fallback,
        }
    }
    if w.iter().all(|c| c.is_finite()) {
        w
    } else {
        fallback
    }
}

/// Smallest rate (d(x,y)/d(f^{-n}x, f^{-n}y))^{1/n} over the given leaf points.
fn backward_rate(map: &SmoothMap, x: &Vector, pts: &[Vec<f64>], params: &[f64], n: usize) -> Result<f64> {
    let mut xs = vec![x.clone()];
    for _ in 0..n {
        xs.push(map.apply_inverse(xs.last().unwrap())?);
    }
    let mut mu = f64::INFINITY;
    for (p, &s) in pts.iter().zip(params) {
        if s == 0.0 {
            continue;
        }
        let mut y = Vector::from_column_slice(p);
        let d0 = map.dist(&y, x);
        if d0 == 0.0 {
            continue;
        }
        for _ in 0..n {
            y = map.apply_inverse(&y)?;
        }
        let dn = map.dist(&y, &xs[n]);
        if dn > 0.0 {
            mu = mu.min((d0 / dn).powf(1.0 / n as f64));
        }
    }
    Ok(mu)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConnectionPair {
    pub x: usize,
    pub y: usize,
    pub distance: f64,
    pub param: f64,
    /// Verdict of the pair criterion on this pair.
    pub pair_criterion: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaseVerdict {
    pub index: usize,
    pub connected: bool,
    pub leaf_radius: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConnectionReport {
    pub radius: f64,
    /// Distance below which a K point counts as lying on a leaf.
    pub delta: f64,
    /// K resolution the verdict is qualified by.
    pub resolution: f64,
    pub bases: Vec<BaseVerdict>,
    pub pairs: Vec<ConnectionPair>,
    /// Fraction of reported pairs confirmed by the pair criterion.
    pub agreement: f64,
}

impl ConnectionReport {
    pub fn connected(&self) -> bool {
        !self.pairs.is_empty()
    }

    /// Number of distinct unordered pairs.
    pub fn distinct_pairs(&self) -> usize {
        let mut set: Vec<(usize, usize)> = self.pairs.iter().map(|p| (p.x.min(p.y), p.x.max(p.y))).collect();
        set.sort();
        set.dedup();
        set.len()
    }
}

#[derive(Clone, Debug)]
pub struct ConnectionOptions {
    pub leaf: LeafOptions,
    /// At most this many base points, taken at a fixed stride.
    pub max_bases: usize,
    pub cone_opening: f64,
}

impl Default for ConnectionOptions {
    fn default() -> Self {
        ConnectionOptions { leaf: LeafOptions::default(), max_bases: 64, cone_opening: 1.0 }
    }
}

pub fn detect_connection(
    map: &SmoothMap,
    k: &SampledInvariantSet,
    split: &SplittingFrame,
    radius: f64,
    delta: f64,
) -> Result<ConnectionReport> {
    detect_connection_with(map, k, split, radius, delta, &ConnectionOptions::default())
}

pub fn detect_connection_with(
    map: &SmoothMap,
    k: &SampledInvariantSet,
    split: &SplittingFrame,
    radius: f64,
    delta: f64,
    opts: &ConnectionOptions,
) -> Result<ConnectionReport> {
    let pts = k.vectors();
    let kindex = PointIndex::auto(pts.clone(), map.topology.clone());
    let orbit = Orbit { map, index: Some(kindex.clone()), tol: opts.leaf.snap_tol };
    let frames = frames_index(split, map);
    let cone = ConeField::from_splitting(split, opts.cone_opening, map);
    let stride = pts.len().div_ceil(opts.max_bases.max(1)).max(1);
    let bases: Vec<usize> = (0..pts.len()).step_by(stride).collect();
    let per_base: Vec<(BaseVerdict, Vec<ConnectionPair>)> = bases
        .par_iter()
        .map(|&i| {
            let x = &pts[i];
            let leaf = match grow_with(&orbit, &frames, split, x, radius, &opts.leaf) {
                Ok(l) => l,
                Err(e) => {
                    return (BaseVerdict { index: i, connected: false, leaf_radius: 0.0, error: Some(e.to_string()) }, vec![])
                }
            };
            let mut found: Vec<ConnectionPair> = Vec::new();
            for (p, &s) in leaf.points.iter().zip(&leaf.params) {
                if s.abs() <= 2.0 * delta {
                    continue;
                }
                let p = Vector::from_column_slice(p);
                for j in kindex.within(&p, delta) {
                    if j == i || map.dist(&pts[j], x) <= 2.0 * delta {
                        continue;
                    }
                    let d = map.dist(&pts[j], &p);
                    match found.iter_mut().find(|c| c.y == j) {
                        Some(c) if c.distance > d => {
                            c.distance = d;
                            c.param = s;
                        }
                        Some(_) => {}
                        None => found.push(ConnectionPair { x: i, y: j, distance: d, param: s, pair_criterion: false }),
                    }
                }
            }
            for c in &mut found {
                // backward steps over which a δ-offset transverse to the leaf stays within the cone
                let eps = 2.0 * c.param.abs() + delta;
                c.pair_criterion = check_pair_criterion(map, x, &pts[c.y], &cone, eps, 0, 1).unwrap_or(false);
            }
            let verdict =
                BaseVerdict { index: i, connected: !found.is_empty(), leaf_radius: leaf.radius, error: None };
            (verdict, found)
        })
        .collect();
    let mut report_bases = Vec::new();
    let mut pairs = Vec::new();
    for (b, p) in per_base {
        report_bases.push(b);
        pairs.extend(p);
    }
    let agreement = if pairs.is_empty() {
        1.0
    } else {
        pairs.iter().filter(|p| p.pair_criterion).count() as f64 / pairs.len() as f64
    };
    Ok(ConnectionReport { radius, delta, resolution: k.resolution(), bases: report_bases, pairs, agreement })
}

/// True when, for every n in [m, big_n], f^{-n}x and f^{-n}y are ε-close and the
/// straight segment between them lies in the cone field at its sampled points.
pub fn check_pair_criterion(
    map: &SmoothMap,
    x: &Vector,
    y: &Vector,
    cone: &ConeField,
    eps: f64,
    m: usize,
    big_n: usize,
) -> Result<bool> {
    let mut a = map.wrap(x);
    let mut b = map.wrap(y);
    for n in 0..=big_n {
        if n > 0 {
            a = map.apply_inverse(&a).map_err(|e| Error::OrbitEscape(e.to_string()))?;
            b = map.apply_inverse(&b).map_err(|e| Error::OrbitEscape(e.to_string()))?;
        }
        if n < m {
            continue;
        }
        let d = map.diff(&b, &a);
        if d.norm() > eps {
            return Ok(false);
        }
        if d.norm() == 0.0 {
            continue;
        }
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let p = map.wrap(&(&a + &d * t));
            if !cone.contains(&p, &d) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::estimate_splitting;
    use crate::dynamics::lookup;
    use crate::linalg::Matrix;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn origin_setup(name: &str, dim: usize) -> (SmoothMap, SampledInvariantSet, SplittingFrame) {
        let e = lookup(name).unwrap();
        let k = SampledInvariantSet::from_points(&e.map, vec![Vector::zeros(dim)]).unwrap();
        let split = estimate_splitting(&e.map, &k.vectors(), 1, 30).unwrap();
        (e.map, k, split)
    }

    #[test]
    fn linear3_leaf_is_z_segment() {
        let (map, k, split) = origin_setup("linear3", 3);
        let leaf = grow_unstable_leaf(&map, &k, &split, &v(&[0.0; 3]), 0.5).unwrap();
        assert!((leaf.radius - 0.5).abs() < 1e-12);
        for (p, &s) in leaf.points.iter().zip(&leaf.params) {
            assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12, "{p:?}");
            assert!((p[2].abs() - s.abs()).abs() < 1e-9);
        }
        assert!(leaf.certified && (leaf.mu - 3.0).abs() < 1e-6);
    }

    #[test]
    fn doubling_radius_extends_leaf() {
        let (map, k, split) = origin_setup("curved2", 2);
        let small = grow_unstable_leaf(&map, &k, &split, &v(&[0.0, 0.0]), 0.05).unwrap();
        let big = grow_unstable_leaf(&map, &k, &split, &v(&[0.0, 0.0]), 0.1).unwrap();
        let bigpts = big.vectors();
        for p in small.vectors() {
            let d = bigpts
                .windows(2)
                .map(|w| {
                    let seg = &w[1] - &w[0];
                    let t = ((&p - &w[0]).dot(&seg) / seg.norm_squared()).clamp(0.0, 1.0);
                    (&p - (&w[0] + seg * t)).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 1e-6 * 0.05, "{d}");
        }
    }

    #[test]
    fn pair_criterion_on_linear3() {
        let (map, _, _) = origin_setup("linear3", 3);
        let z = Matrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let xy = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let cone = ConeField::constant(z, xy, 0.5);
        let o = v(&[0.0; 3]);
        assert!(check_pair_criterion(&map, &o, &v(&[0.0, 0.0, 0.1]), &cone, 0.2, 0, 20).unwrap());
        assert!(!check_pair_criterion(&map, &o, &v(&[0.1, 0.0, 0.0]), &cone, 0.2, 0, 20).unwrap());
    }

    #[test]
    fn single_fixed_points_have_no_connection() {
        for (name, dim) in [("linear3", 3), ("curved2", 2)] {
            let (map, k, split) = origin_setup(name, dim);
            let rep = detect_connection(&map, &k, &split, 0.2, 0.01).unwrap();
            assert!(!rep.connected(), "{name}");
        }
    }
}
