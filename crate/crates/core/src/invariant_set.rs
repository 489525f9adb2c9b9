//! Sampled compact invariant sets: box subdivision, periodic orbits, tangent sets.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Coord, SmoothMap};
use crate::geometry::PointIndex;
use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

const BITS: u32 = 21;
const MAX_AABB_CELLS: usize = 4096;

/// Axis-aligned boxes of a uniform grid over `[lo, hi]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoxCover {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<u32>,
    pub cells: Vec<Vec<u32>>,
    #[serde(skip)]
    topology: Vec<Coord>,
    #[serde(skip)]
    set: HashSet<u64>,
}

fn pack(idx: &[u32]) -> u64 {
    idx.iter().fold(0u64, |acc, &i| (acc << BITS) | i as u64)
}

impl BoxCover {
    fn from_set(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<u32>, topology: Vec<Coord>, set: HashSet<u64>) -> Self {
        let n = counts.len();
        let mask = (1u64 << BITS) - 1;
        let mut cells: Vec<Vec<u32>> = set
            .iter()
            .map(|&k| (0..n).map(|i| ((k >> (BITS * (n - 1 - i) as u32)) & mask) as u32).collect())
            .collect();
        cells.sort();
        BoxCover { lo, hi, counts, cells, topology, set }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self, topology: Vec<Coord>) {
        self.set = self.cells.iter().map(|c| pack(c)).collect();
        self.topology = topology;
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn sides(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| (self.hi[i] - self.lo[i]) / self.counts[i] as f64).collect()
    }

    /// Largest box side.
    pub fn resolution(&self) -> f64 {
        self.sides().into_iter().fold(0.0, f64::max)
    }

    pub fn center(&self, cell: &[u32]) -> Vector {
        let s = self.sides();
        Vector::from_iterator(self.dim(), (0..self.dim()).map(|i| self.lo[i] + (cell[i] as f64 + 0.5) * s[i]))
    }

    pub fn centers(&self) -> Vec<Vector> {
        self.cells.iter().map(|c| self.center(c)).collect()
    }

    /// Whether `x` lies in the union of boxes (closed boxes, up to rounding).
    pub fn contains(&self, x: &Vector) -> bool {
        let s = self.sides();
        let lo = Vector::from_iterator(self.dim(), (0..self.dim()).map(|i| x[i] - 1e-12 * s[i]));
        let hi = Vector::from_iterator(self.dim(), (0..self.dim()).map(|i| x[i] + 1e-12 * s[i]));
        self.meets_aabb(&lo, &hi) == Some(true)
    }

    /// Whether any box meets `[lo, hi]`; `None` when the range is too large to scan.
    fn meets_aabb(&self, lo: &Vector, hi: &Vector) -> Option<bool> {
        meets(&self.set, &self.lo, &self.counts, &self.sides(), &self.topology, lo, hi)
    }
}

fn meets(
    set: &HashSet<u64>,
    origin: &[f64],
    counts: &[u32],
    sides: &[f64],
    topology: &[Coord],
    lo: &Vector,
    hi: &Vector,
) -> Option<bool> {
    let n = counts.len();
    let mut ranges = Vec::with_capacity(n);
    let mut total = 1usize;
    for i in 0..n {
        let c = counts[i] as i64;
        let mut a = ((lo[i] - origin[i]) / sides[i]).floor() as i64;
        let mut b = ((hi[i] - origin[i]) / sides[i]).floor() as i64;
        let periodic = matches!(topology.get(i), Some(Coord::Circle(_)));
        if periodic {
            if b - a + 1 >= c {
                a = 0;
                b = c - 1;
            }
        } else {
            a = a.max(0);
            b = b.min(c - 1);
            if a > b {
                return Some(false);
            }
        }
        total = total.saturating_mul((b - a + 1) as usize);
        ranges.push((a, b, periodic, c));
    }
    if total > MAX_AABB_CELLS {
        return None;
    }
    let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    let mut idx = vec![0u32; n];
    loop {
        for i in 0..n {
            idx[i] = if ranges[i].2 { cur[i].rem_euclid(ranges[i].3) as u32 } else { cur[i] as u32 };
        }
        if set.contains(&pack(&idx)) {
            return Some(true);
        }
        let mut axis = n;
        loop {
            if axis == 0 {
                return Some(false);
            }
            axis -= 1;
            if cur[axis] < ranges[axis].1 {
                cur[axis] += 1;
                break;
            }
            cur[axis] = ranges[axis].0;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampledInvariantSet {
    pub points: Vec<Vec<f64>>,
    pub box_cover: Option<BoxCover>,
    pub invariance_residual: f64,
    /// Number of selection sweeps performed over all refinement levels.
    pub sweeps: usize,
}

impl SampledInvariantSet {
    /// A set given by explicit points; the residual is measured against the cloud.
    pub fn from_points(map: &SmoothMap, points: Vec<Vector>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyResult("no points".into()));
        }
        let residual = residual(map, &points)?;
        Ok(SampledInvariantSet {
            points: points.iter().map(|p| p.as_slice().to_vec()).collect(),
            box_cover: None,
            invariance_residual: residual,
            sweeps: 0,
        })
    }

    pub fn vectors(&self) -> Vec<Vector> {
        self.points.iter().map(|p| Vector::from_column_slice(p)).collect()
    }

    /// Moves the points onto an attractor: each point gets a seeded jitter of size
    /// `1e-3·resolution` and is replaced by its image under f^steps. The jitter keeps
    /// dyadic box centres from collapsing under expanding circle coordinates.
    pub fn settle_on_attractor(&self, map: &SmoothMap, steps: usize, seed: u64) -> Result<Self> {
        let amp = 1e-3 * self.resolution();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jittered: Vec<Vector> = self
            .vectors()
            .into_iter()
            .map(|p| p.map(|c| c + amp * rng.gen_range(-1.0..1.0)))
            .collect();
        let pts: Vec<Vector> = jittered.par_iter().map(|p| map.evaluate(p, steps as i64)).collect::<Result<_>>()?;
        let res = residual(map, &pts)?;
        Ok(SampledInvariantSet {
            points: pts.iter().map(|p| p.as_slice().to_vec()).collect(),
            box_cover: self.box_cover.clone(),
            invariance_residual: res,
            sweeps: self.sweeps,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cover resolution, or the mean nearest-neighbour spacing of the cloud.
    pub fn resolution(&self) -> f64 {
        match &self.box_cover {
            Some(c) => c.resolution(),
            None => crate::geometry::auto_cell(&self.vectors()),
        }
    }
}

fn residual(map: &SmoothMap, points: &[Vector]) -> Result<f64> {
    let index = PointIndex::auto(points.to_vec(), map.topology.clone());
    let d: Result<Vec<f64>> = points
        .par_iter()
        .map(|p| {
            let y = map.apply(p)?;
            Ok(index.nearest(&y).map(|(_, d)| d).unwrap_or(f64::INFINITY))
        })
        .collect();
    Ok(d?.into_iter().fold(0.0, f64::max))
}

/// Outer approximation of the image of one box: sub-cell centres mapped by `g`,
/// each with the Jacobian-linear enclosure of its sub-cell inflated by 1.5.
fn image_meets(
    g: &dyn Fn(&Vector) -> Result<Vector>,
    jac: &Matrix,
    center: &Vector,
    half: &[f64],
    target: &HashSet<u64>,
    origin: &[f64],
    counts: &[u32],
    sides: &[f64],
    topology: &[Coord],
) -> bool {
    let n = center.len();
    let min_side = sides.iter().cloned().fold(f64::INFINITY, f64::min);
    let k: Vec<usize> = (0..n)
        .map(|i| {
            let stretch = jac.column(i).norm() * 2.0 * half[i];
            ((stretch / min_side).ceil() as usize).clamp(1, 24)
        })
        .collect();
    let delta: Vec<f64> = (0..n).map(|i| half[i] / k[i] as f64).collect();
    let w: Vec<f64> = (0..n).map(|j| 1.5 * (0..n).map(|i| jac[(j, i)].abs() * delta[i]).sum::<f64>()).collect();
    let total: usize = k.iter().product();
    for flat in 0..total {
        let mut rem = flat;
        let mut p = center.clone();
        for i in 0..n {
            let t = rem % k[i];
            rem /= k[i];
            p[i] = center[i] - half[i] + (2 * t + 1) as f64 * delta[i];
        }
        let y = match g(&p) {
            Ok(y) => y,
            Err(_) => continue,
        };
        let lo = Vector::from_iterator(n, (0..n).map(|j| y[j] - w[j]));
        let hi = Vector::from_iterator(n, (0..n).map(|j| y[j] + w[j]));
        match meets(target, origin, counts, sides, topology, &lo, &hi) {
            Some(false) => {}
            _ => return true,
        }
    }
    false
}

/// Maximal invariant set of `f` in the box `[lo, hi]` by subdivision down to side ≤ `h`,
/// with at most `steps` selection sweeps per refinement level.
pub fn maximal_invariant(map: &SmoothMap, lo: &[f64], hi: &[f64], h: f64, steps: usize) -> Result<SampledInvariantSet> {
    let n = map.dim;
    if !map.has_inverse() {
        return Err(Error::MissingInverse);
    }
    if n > 3 {
        return Err(Error::DimensionUnsupported(format!("box subdivision supports dim <= 3, got {n}")));
    }
    let levels: Vec<u32> = (0..n)
        .map(|i| ((hi[i] - lo[i]) / h).log2().ceil().max(0.0) as u32)
        .collect();
    let top = *levels.iter().max().unwrap_or(&0);
    if top >= BITS {
        return Err(Error::LevelOverflow(top));
    }
    let topology = map.topology.clone();
    let fwd = |x: &Vector| map.apply(x);
    let bwd = |x: &Vector| map.apply_inverse(x);
    let mut set: HashSet<u64> = HashSet::from([0u64]);
    let mut counts = vec![1u32; n];
    let mut sweeps = 0usize;
    for level in 0..=top {
        let new_counts: Vec<u32> = (0..n).map(|i| 1u32 << level.saturating_sub(top - levels[i])).collect();
        if level > 0 {
            let split: Vec<bool> = (0..n).map(|i| new_counts[i] > counts[i]).collect();
            let mask = (1u64 << BITS) - 1;
            let mut next = HashSet::with_capacity(set.len() << n);
            for &key in &set {
                let idx: Vec<u32> = (0..n).map(|i| ((key >> (BITS * (n - 1 - i) as u32)) & mask) as u32).collect();
                for child in 0..(1usize << n) {
                    if (0..n).any(|i| !split[i] && (child >> i) & 1 == 1) {
                        continue;
                    }
                    let c: Vec<u32> =
                        (0..n).map(|i| if split[i] { 2 * idx[i] + ((child >> i) & 1) as u32 } else { idx[i] }).collect();
                    next.insert(pack(&c));
                }
            }
            set = next;
        }
        counts = new_counts;
        let sides: Vec<f64> = (0..n).map(|i| (hi[i] - lo[i]) / counts[i] as f64).collect();
        let half: Vec<f64> = sides.iter().map(|s| 0.5 * s).collect();
        for _ in 0..steps {
            sweeps += 1;
            let keys: Vec<u64> = set.iter().copied().collect();
            let mask = (1u64 << BITS) - 1;
            let keep: Vec<u64> = keys
                .par_iter()
                .filter(|&&key| {
                    let c = Vector::from_iterator(
                        n,
                        (0..n).map(|i| lo[i] + (((key >> (BITS * (n - 1 - i) as u32)) & mask) as f64 + 0.5) * sides[i]),
                    );
                    let jf = match map.jacobian_at(&c) {
                        Ok(j) => j,
                        Err(_) => return false,
                    };
                    if !image_meets(&fwd, &jf, &c, &half, &set, lo, &counts, &sides, &topology) {
                        return false;
                    }
                    let jb = match map.inverse_jacobian_at(&c) {
                        Ok(j) => j,
                        Err(_) => return false,
                    };
                    image_meets(&bwd, &jb, &c, &half, &set, lo, &counts, &sides, &topology)
                })
                .copied()
                .collect();
            let changed = keep.len() != set.len();
            set = keep.into_iter().collect();
            if set.is_empty() {
                return Err(Error::EmptyResult(format!("all boxes discarded at level {level}")));
            }
            if !changed {
                break;
            }
        }
    }
    let cover = BoxCover::from_set(lo.to_vec(), hi.to_vec(), counts, topology, set);
    let centers = cover.centers();
    let res = residual(map, &centers)?;
    Ok(SampledInvariantSet {
        points: centers.iter().map(|p| p.as_slice().to_vec()).collect(),
        box_cover: Some(cover),
        invariance_residual: res,
        sweeps,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub period: usize,
    pub points: Vec<Vec<f64>>,
    /// Moduli of the eigenvalues of Df^p at the first point, sorted ascending.
    pub multipliers: Vec<f64>,
    pub n_stable: usize,
    pub n_unstable: usize,
    pub hyperbolic: bool,
}

fn newton_periodic(map: &SmoothMap, p: usize, seed: &Vector) -> Option<Vector> {
    let n = map.dim;
    let mut x = map.wrap(seed);
    for _ in 0..60 {
        let y = map.evaluate(&x, p as i64).ok()?;
        let g = map.diff(&y, &x);
        if g.norm() <= 1e-13 * (1.0 + x.norm()) {
            return Some(x);
        }
        let j = map.jacobian_power(&x, p as i64).ok()? - Matrix::identity(n, n);
        let mut step = j.svd(true, true).solve(&(-&g), 1e-12).ok()?;
        let cap = 0.5 * (1.0 + x.norm());
        if step.norm() > cap {
            step *= cap / step.norm();
        }
        x = map.wrap(&(x + step));
        if !x.iter().all(|v| v.is_finite()) || x.norm() > 1e6 {
            return None;
        }
    }
    let y = map.evaluate(&x, p as i64).ok()?;
    (map.diff(&y, &x).norm() <= 1e-10 * (1.0 + x.norm())).then_some(x)
}

/// Period-`p` points of `f` reached by Newton's method from `seeds`, one entry per orbit.
pub fn find_periodic(map: &SmoothMap, p: usize, seeds: &[Vector]) -> Result<Vec<PeriodicOrbit>> {
    if p == 0 {
        return Err(Error::Config("period must be at least 1".into()));
    }
    let roots: Vec<Option<Vector>> = seeds.par_iter().map(|s| newton_periodic(map, p, s)).collect();
    let mut orbits: Vec<Vec<Vector>> = Vec::new();
    for x in roots.into_iter().flatten() {
        if orbits.iter().any(|o| o.iter().any(|q| map.dist(q, &x) < 1e-6)) {
            continue;
        }
        let mut orbit = vec![x.clone()];
        let mut y = x;
        for _ in 1..p {
            y = map.apply(&y)?;
            orbit.push(y.clone());
        }
        orbits.push(orbit);
    }
    orbits
        .into_iter()
        .map(|orbit| {
            let j = map.jacobian_power(&orbit[0], p as i64)?;
            let mut moduli: Vec<f64> = j.complex_eigenvalues().iter().map(|z| z.norm()).collect();
            moduli.sort_by(|a, b| a.total_cmp(b));
            let n_stable = moduli.iter().filter(|&&m| m < 1.0 - 1e-9).count();
            let n_unstable = moduli.iter().filter(|&&m| m > 1.0 + 1e-9).count();
            Ok(PeriodicOrbit {
                period: p,
                points: orbit.iter().map(|q| q.as_slice().to_vec()).collect(),
                hyperbolic: n_stable + n_unstable == moduli.len(),
                multipliers: moduli,
                n_stable,
                n_unstable,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TangentSetEstimate {
    pub z: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    pub ladder: Vec<f64>,
}

impl TangentSetEstimate {
    pub fn vectors(&self) -> Vec<Vector> {
        self.directions.iter().map(|d| Vector::from_column_slice(d)).collect()
    }

    /// Largest angle between an estimated direction and the span of `frame` (orthonormal columns).
    pub fn max_angle_to(&self, frame: &Matrix) -> f64 {
        self.vectors()
            .iter()
            .map(|d| {
                let proj = frame * (frame.transpose() * d);
                proj.norm().clamp(0.0, 1.0).acos()
            })
            .fold(0.0, f64::max)
    }
}

const MAX_BALL: usize = 200;

fn ball_directions(map: &SmoothMap, index: &PointIndex, z: &Vector, eps: f64) -> Vec<Vector> {
    let mut ball: Vec<(f64, usize)> =
        index.within(z, eps).into_iter().map(|i| (map.dist(&index.points()[i], z), i)).collect();
    ball.sort_by(|a, b| a.0.total_cmp(&b.0));
    ball.truncate(MAX_BALL);
    let pts: Vec<&Vector> = ball.iter().map(|&(_, i)| &index.points()[i]).collect();
    let mut dirs = Vec::new();
    for a in 0..pts.len() {
        for b in (a + 1)..pts.len() {
            let d = map.diff(pts[a], pts[b]);
            let norm = d.norm();
            if norm > 0.0 {
                let u = d / norm;
                dirs.push(-&u);
                dirs.push(u);
            }
        }
    }
    dirs
}

/// Directions of the tangent set of `K` at `z` that persist, within `tol` radians,
/// across the two smallest scales of `ladder`.
pub fn estimate_tangent_set_with(
    map: &SmoothMap,
    k: &SampledInvariantSet,
    z: &Vector,
    ladder: &[f64],
    tol: f64,
) -> Result<TangentSetEstimate> {
    let mut eps: Vec<f64> = ladder.to_vec();
    eps.sort_by(|a, b| a.total_cmp(b));
    if eps.is_empty() {
        return Err(Error::Config("empty scale ladder".into()));
    }
    let index = PointIndex::auto(k.vectors(), map.topology.clone());
    let small = ball_directions(map, &index, z, eps[0]);
    if small.is_empty() {
        return Err(Error::TooFewPoints(format!("fewer than 2 points within {} of z", eps[0])));
    }
    let directions: Vec<Vector> = if eps.len() == 1 {
        small
    } else {
        let next = ball_directions(map, &index, z, eps[1]);
        let cos_tol = tol.cos();
        small.into_iter().filter(|u| next.iter().any(|w| u.dot(w) >= cos_tol)).collect()
    };
    Ok(TangentSetEstimate {
        z: z.as_slice().to_vec(),
        directions: directions.iter().map(|d| d.as_slice().to_vec()).collect(),
        ladder: eps,
    })
}

pub fn estimate_tangent_set(map: &SmoothMap, k: &SampledInvariantSet, z: &Vector, ladder: &[f64]) -> Result<TangentSetEstimate> {
    estimate_tangent_set_with(map, k, z, ladder, 5f64.to_radians())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{henon_fixed_point, lookup};

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn linear3_survivors_hug_center_axis() {
        let e = lookup("linear3").unwrap();
        let s = maximal_invariant(&e.map, &[-1.0; 3], &[1.0; 3], 1.0 / 64.0, 8).unwrap();
        let h = s.box_cover.as_ref().unwrap().resolution();
        for p in &s.points {
            assert!(p[0].abs() <= 2.0 * h && p[2].abs() <= 2.0 * h, "{p:?}");
        }
        assert!(s.invariance_residual <= 2.0 * h);
    }

    #[test]
    fn cat_map_keeps_whole_torus() {
        let e = lookup("cat_linear").unwrap();
        let s = maximal_invariant(&e.map, &[0.0; 2], &[1.0; 2], 1.0 / 32.0, 4).unwrap();
        assert_eq!(s.len(), 32 * 32);
    }

    #[test]
    fn every_point_inside_cover() {
        let e = lookup("saddle3").unwrap();
        let (lo, hi): (Vec<f64>, Vec<f64>) = e.working_box.iter().cloned().unzip();
        let s = maximal_invariant(&e.map, &lo, &hi, 1.0 / 32.0, 6).unwrap();
        let cover = s.box_cover.as_ref().unwrap();
        for p in s.vectors() {
            assert!(cover.contains(&p));
        }
    }

    #[test]
    fn subdivision_is_monotone() {
        let e = lookup("henon_x_expand").unwrap();
        let coarse = maximal_invariant(&e.map, &[-2.0, -2.0, -1.0], &[2.0, 2.0, 1.0], 1.0 / 16.0, 6).unwrap();
        let fine = maximal_invariant(&e.map, &[-2.0, -2.0, -1.0], &[2.0, 2.0, 1.0], 1.0 / 32.0, 6).unwrap();
        let cover = coarse.box_cover.unwrap();
        for p in fine.vectors() {
            assert!(cover.contains(&p), "{p:?}");
        }
    }

    #[test]
    fn periodic_orbits_lie_in_horseshoe_cover() {
        let e = lookup("henon_x_expand").unwrap();
        let s = maximal_invariant(&e.map, &[-2.0, -2.0, -1.0], &[2.0, 2.0, 1.0], 1.0 / 64.0, 6).unwrap();
        let cover = s.box_cover.as_ref().unwrap();
        let seeds: Vec<Vector> = (0..21)
            .flat_map(|i| (0..21).map(move |j| v(&[-1.0 + 0.1 * i as f64, -0.4 + 0.04 * j as f64, 0.0])))
            .collect();
        let mut found = 0;
        for p in 1..=4 {
            for orbit in find_periodic(&e.map, p, &seeds).unwrap() {
                for q in &orbit.points {
                    if q.iter().zip([2.0, 2.0, 1.0]).all(|(c, b)| c.abs() < b) {
                        found += 1;
                        assert!(cover.contains(&v(q)), "{q:?}");
                    }
                }
            }
        }
        assert!(found >= 6);
    }

    #[test]
    fn fixed_points() {
        let e = lookup("linear3").unwrap();
        let orbits = find_periodic(&e.map, 1, &[v(&[0.3, 0.0, -0.2])]).unwrap();
        assert_eq!(orbits.len(), 1);
        assert!(v(&orbits[0].points[0]).norm() < 1e-12);

        let e = lookup("henon_saddle").unwrap();
        let seeds: Vec<Vector> = (0..11).map(|i| v(&[-1.5 + 0.3 * i as f64, 0.0])).collect();
        let orbits = find_periodic(&e.map, 1, &seeds).unwrap();
        assert_eq!(orbits.len(), 2);
        let (xs, ys) = henon_fixed_point(1.4, 0.3);
        assert!(orbits.iter().any(|o| (o.points[0][0] - xs).abs() < 1e-10 && (o.points[0][1] - ys).abs() < 1e-10));
        assert!(orbits.iter().all(|o| o.hyperbolic && o.n_unstable == 1));
    }

    #[test]
    fn curved2_has_no_period_two_orbit_besides_origin() {
        let e = lookup("curved2").unwrap();
        let seeds: Vec<Vector> =
            (0..11).flat_map(|i| (0..11).map(move |j| v(&[-0.25 + 0.05 * i as f64, -0.25 + 0.05 * j as f64]))).collect();
        for orbit in find_periodic(&e.map, 2, &seeds).unwrap() {
            let inside = orbit.points.iter().all(|q| q.iter().all(|c| c.abs() <= 0.5));
            if inside {
                // the origin is a degenerate root, so Newton stalls at roughly cube-root precision
                assert!(v(&orbit.points[0]).norm() < 1e-4, "{:?}", orbit.points);
            }
        }
    }

    #[test]
    fn parabola_tangent_is_horizontal() {
        let map = SmoothMap::linear("id", Matrix::identity(2, 2)).unwrap();
        let pts: Vec<Vector> = (-200..=200).map(|i| i as f64 * 1e-3).map(|t| v(&[t, t * t])).collect();
        let k = SampledInvariantSet::from_points(&map, pts).unwrap();
        let est = estimate_tangent_set(&map, &k, &v(&[0.0, 0.0]), &[0.1, 0.02, 0.01]).unwrap();
        assert!(!est.directions.is_empty());
        let x_axis = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(est.max_angle_to(&x_axis) <= 5f64.to_radians());
        for d in est.vectors() {
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert!(est.vectors().iter().any(|w| (w + &d).norm() < 1e-12));
        }
    }

    #[test]
    fn single_point_has_no_tangent_set() {
        let map = SmoothMap::linear("id", Matrix::identity(2, 2)).unwrap();
        let k = SampledInvariantSet::from_points(&map, vec![v(&[0.0, 0.0])]).unwrap();
        let err = estimate_tangent_set(&map, &k, &v(&[0.0, 0.0]), &[0.1, 0.05]).unwrap_err();
        assert_eq!(err.kind(), "TooFewPoints");
    }
}
