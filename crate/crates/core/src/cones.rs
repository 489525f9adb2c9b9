//! Cone fields, contraction and bunching certificates, and dominated splittings.

use crate::dynamics::SmoothMap;
use crate::error::{Error, Result};
use crate::geometry::PointIndex;
use crate::linalg::{decompose, min_principal_angle, orthonormalize, subspace_angle, Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Per-point invariant splitting E ⊕ F with measured rates.
#[derive(Clone, Debug, Serialize)]
pub struct SplittingFrame {
    pub points: Vec<Vec<f64>>,
    #[serde(skip)]
    pub e_frames: Vec<Matrix>,
    #[serde(skip)]
    pub f_frames: Vec<Matrix>,
    pub d_f: usize,
    pub iters: usize,
    /// Weakest per-step expansion inside F.
    pub lambda_f: f64,
    /// Strongest per-step expansion inside E.
    pub lambda_e: f64,
    /// Smallest per-step singular-value gap over the sample.
    pub gap: f64,
    pub c: f64,
    /// Largest angle between Df·F(x) and F(f(x)).
    pub invariance_residual: f64,
    /// Smallest principal angle between E(x) and F(x).
    pub transversality: f64,
}

impl SplittingFrame {
    pub fn point(&self, i: usize) -> Vector {
        Vector::from_column_slice(&self.points[i])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.e_frames.first().map_or(0, |m| m.nrows())
    }
}

fn random_frame(n: usize, k: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Matrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
    orthonormalize(&m)
}

fn inside(bounds: Option<&[(f64, f64)]>, x: &Vector) -> bool {
    match bounds {
        None => true,
        Some(b) => b.iter().enumerate().all(|(i, &(lo, hi))| {
            let pad = 1e-9 * (hi - lo).abs().max(1.0);
            x[i] >= lo - pad && x[i] <= hi + pad
        }),
    }
}

/// Pushes a full frame along the orbit; returns the final frame and the per-step singular rates.
fn push_frame(jacs: &[Matrix], seed: u64) -> (Matrix, Vec<f64>) {
    let n = jacs[0].nrows();
    let mut q = random_frame(n, n, seed);
    let mut t = Matrix::identity(n, n);
    let mut log_scale = 0.0;
    for j in jacs {
        let (qn, r) = (j * &q).qr().unpack();
        q = qn;
        t = &r * t;
        let s = t.amax();
        if s > 0.0 {
            t /= s;
            log_scale += s.ln();
        }
    }
    let steps = jacs.len() as f64;
    let mut sv: Vec<f64> = t.singular_values().iter().map(|s| (s.ln() + log_scale) / steps).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let rates = sv.into_iter().map(f64::exp).collect();
    (q, rates)
}

struct LocalSplit {
    e: Matrix,
    f: Matrix,
    rates: Vec<f64>,
}

/// Options for [`estimate_splitting_with`].
#[derive(Clone, Debug)]
pub struct SplittingOptions {
    pub iters: usize,
    pub bounds: Option<Vec<(f64, f64)>>,
    pub gap_threshold: f64,
    /// Orbit points within this distance of a sample of K are replaced by that sample.
    pub snap_tol: f64,
}

impl Default for SplittingOptions {
    fn default() -> Self {
        SplittingOptions { iters: 30, bounds: None, gap_threshold: 1.05, snap_tol: 1e-6 }
    }
}

struct Snapper<'a> {
    index: Option<PointIndex>,
    tol: f64,
    map: &'a SmoothMap,
}

impl Snapper<'_> {
    fn snap(&self, y: Vector) -> Vector {
        if let Some(idx) = &self.index {
            if let Some((j, d)) = idx.nearest(&y) {
                if d <= self.tol {
                    return idx.points()[j].clone();
                }
            }
        }
        y
    }

    fn step(&self, x: &Vector, forward: bool) -> Result<Vector> {
        let y = if forward { self.map.apply(x) } else { self.map.apply_inverse(x) };
        Ok(self.snap(y.map_err(|e| Error::OrbitEscape(e.to_string()))?))
    }
}

fn local_split(snap: &Snapper, x: &Vector, d_f: usize, iters: usize, bounds: Option<&[(f64, f64)]>, seed: u64) -> Result<LocalSplit> {
    let map = snap.map;
    let n = map.dim;
    // backward orbit, Jacobians in forward order
    let mut back = vec![x.clone()];
    for _ in 0..iters {
        let y = snap.step(back.last().unwrap(), false)?;
        if !inside(bounds, &y) {
            return Err(Error::OrbitEscape(format!("backward orbit of {:?} left the working box", x.as_slice())));
        }
        back.push(y);
    }
    let jf: Vec<Matrix> = (1..=iters).rev().map(|j| map.jacobian_at(&back[j])).collect::<Result<_>>()?;
    let (qf, rates) = push_frame(&jf, seed);
    let f = orthonormalize(&qf.columns(0, d_f).into_owned());
    // forward orbit, inverse Jacobians in backward order
    let mut fwd = vec![x.clone()];
    for _ in 0..iters {
        let y = snap.step(fwd.last().unwrap(), true)?;
        if !inside(bounds, &y) {
            return Err(Error::OrbitEscape(format!("forward orbit of {:?} left the working box", x.as_slice())));
        }
        fwd.push(y);
    }
    let jb: Vec<Matrix> = (1..=iters).rev().map(|j| map.inverse_jacobian_at(&fwd[j])).collect::<Result<_>>()?;
    let (qb, _) = push_frame(&jb, seed ^ 0x9e37_79b9);
    let e = orthonormalize(&qb.columns(0, n - d_f).into_owned());
    Ok(LocalSplit { e, f, rates })
}

/// Dominated splitting estimated by iterated orthonormalization along orbits.
pub fn estimate_splitting(map: &SmoothMap, k: &[Vector], d_f: usize, iters: usize) -> Result<SplittingFrame> {
    estimate_splitting_with(map, k, d_f, &SplittingOptions { iters, ..Default::default() })
}

pub fn estimate_splitting_with(map: &SmoothMap, k: &[Vector], d_f: usize, opts: &SplittingOptions) -> Result<SplittingFrame> {
    let n = map.dim;
    let iters = opts.iters;
    let bounds = opts.bounds.as_deref();
    let gap_threshold = opts.gap_threshold;
    if d_f == 0 || d_f >= n {
        return Err(Error::Config(format!("d_F = {d_f} must lie in 1..{n}")));
    }
    if k.is_empty() {
        return Err(Error::TooFewPoints("empty invariant set".into()));
    }
    if !map.has_inverse() {
        return Err(Error::MissingInverse);
    }
    let iters = iters.max(1);
    let snap = Snapper { index: Some(PointIndex::auto(k.to_vec(), map.topology.clone())), tol: opts.snap_tol, map };
    let locals: Vec<LocalSplit> = k
        .par_iter()
        .enumerate()
        .map(|(i, x)| local_split(&snap, x, d_f, iters, bounds, 1000 + i as u64))
        .collect::<Result<_>>()?;
    let mut lambda_f = f64::INFINITY;
    let mut lambda_e: f64 = 0.0;
    let mut gap = f64::INFINITY;
    let mut transversality = f64::INFINITY;
    for (i, l) in locals.iter().enumerate() {
        let g = l.rates[d_f - 1] / l.rates[d_f];
        if g < gap_threshold {
            return Err(Error::NoDomination { gap: g, threshold: gap_threshold, index: i });
        }
        gap = gap.min(g);
        lambda_f = lambda_f.min(l.rates[d_f - 1]);
        lambda_e = lambda_e.max(l.rates[d_f]);
        transversality = transversality.min(min_principal_angle(&l.e, &l.f));
    }
    if transversality < 1e-3 {
        return Err(Error::NoDomination { gap, threshold: gap_threshold, index: 0 });
    }
    // invariance residual and transient constant along one step / the window
    let extra: Vec<(f64, f64)> = k
        .par_iter()
        .zip(locals.par_iter())
        .enumerate()
        .map(|(i, (x, l))| -> Result<(f64, f64)> {
            let fx = snap.step(x, true)?;
            let there = local_split(&snap, &fx, d_f, iters, None, 1000 + i as u64)?;
            let img = orthonormalize(&(map.jacobian_at(x)? * &l.f));
            let resid = subspace_angle(&img, &there.f);
            let mut c = f64::INFINITY;
            let mut m = l.f.clone();
            let mut y = x.clone();
            for step in 1..=iters.min(20) {
                m = map.jacobian_at(&y)? * m;
                y = snap.step(&y, true)?;
                let s = crate::linalg::min_singular(&m);
                c = c.min(s / lambda_f.powi(step as i32));
            }
            Ok((resid, c))
        })
        .collect::<Result<_>>()?;
    let invariance_residual = extra.iter().map(|e| e.0).fold(0.0, f64::max);
    let c = extra.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    Ok(SplittingFrame {
        points: k.iter().map(|p| p.as_slice().to_vec()).collect(),
        e_frames: locals.iter().map(|l| l.e.clone()).collect(),
        f_frames: locals.iter().map(|l| l.f.clone()).collect(),
        d_f,
        iters,
        lambda_f,
        lambda_e,
        gap,
        c,
        invariance_residual,
        transversality,
    })
}

/// Cones {u_E + u_F : ‖u_E‖ ≤ β‖u_F‖} about axis frames, nearest-point interpolated.
#[derive(Clone, Debug)]
pub struct ConeField {
    pub base_points: Vec<Vector>,
    pub axis: Vec<Matrix>,
    pub complement: Vec<Matrix>,
    pub opening: f64,
    index: Option<PointIndex>,
}

impl ConeField {
    pub fn new(base_points: Vec<Vector>, axis: Vec<Matrix>, complement: Vec<Matrix>, opening: f64, map: &SmoothMap) -> Self {
        let axis: Vec<Matrix> = axis.iter().map(orthonormalize).collect();
        let complement: Vec<Matrix> = complement.iter().map(orthonormalize).collect();
        let index = if base_points.len() > 1 {
            Some(PointIndex::auto(base_points.clone(), map.topology.clone()))
        } else {
            None
        };
        ConeField { base_points, axis, complement, opening, index }
    }

    /// Same cone at every point.
    pub fn constant(axis: Matrix, complement: Matrix, opening: f64) -> Self {
        let n = axis.nrows();
        ConeField {
            base_points: vec![Vector::zeros(n)],
            axis: vec![orthonormalize(&axis)],
            complement: vec![orthonormalize(&complement)],
            opening,
            index: None,
        }
    }

    /// Cone about F (the strong bundle) with E as complement.
    pub fn from_splitting(split: &SplittingFrame, opening: f64, map: &SmoothMap) -> Self {
        let pts = (0..split.len()).map(|i| split.point(i)).collect();
        ConeField::new(pts, split.f_frames.clone(), split.e_frames.clone(), opening, map)
    }

    /// Cone about E with F as complement.
    pub fn dual_from_splitting(split: &SplittingFrame, opening: f64, map: &SmoothMap) -> Self {
        let pts = (0..split.len()).map(|i| split.point(i)).collect();
        ConeField::new(pts, split.e_frames.clone(), split.f_frames.clone(), opening, map)
    }

    pub fn dim(&self) -> usize {
        self.axis[0].ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.axis[0].nrows()
    }

    fn slot(&self, x: &Vector) -> usize {
        match &self.index {
            None => 0,
            Some(idx) => idx.nearest(x).map_or(0, |(i, _)| i),
        }
    }

    /// (axis, complement) frames at x.
    pub fn frames_at(&self, x: &Vector) -> (&Matrix, &Matrix) {
        let i = self.slot(x);
        (&self.axis[i], &self.complement[i])
    }

    /// ‖u_E‖/‖u_F‖ at x (infinite when u_F = 0).
    pub fn aperture_ratio(&self, x: &Vector, u: &Vector) -> f64 {
        let (f, e) = self.frames_at(x);
        let (a, b) = decompose(u, e, f);
        let nf = b.norm();
        if nf == 0.0 {
            f64::INFINITY
        } else {
            a.norm() / nf
        }
    }

    pub fn contains(&self, x: &Vector, u: &Vector) -> bool {
        self.aperture_ratio(x, u) <= self.opening * (1.0 + 1e-12)
    }

    /// Axis vectors, extremal boundary generators F e_a ± β E e_b, and 32 seeded random unit cone vectors.
    pub fn generators(&self, x: &Vector) -> Vec<Vector> {
        let (f, e) = self.frames_at(x);
        let (d, c) = (f.ncols(), e.ncols());
        let mut out = Vec::new();
        for a in 0..d {
            out.push(f.column(a).into_owned());
            for b in 0..c {
                for s in [1.0, -1.0] {
                    out.push((f.column(a) + e.column(b) * (s * self.opening)).normalize());
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0e5);
        for _ in 0..32 {
            let av = Vector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)).normalize();
            let mut u = f * av;
            if c > 0 {
                let bv = Vector::from_fn(c, |_, _| rng.gen_range(-1.0..1.0)).normalize();
                u += e * bv * (self.opening * rng.gen::<f64>());
            }
            out.push(u.normalize());
        }
        out
    }

    /// Unit vectors outside the cone: pure complement directions, near-boundary ones, and seeded randoms.
    pub fn outside_generators(&self, x: &Vector) -> Vec<Vector> {
        let (f, e) = self.frames_at(x);
        let (d, c) = (f.ncols(), e.ncols());
        let mut out = Vec::new();
        if c == 0 {
            return out;
        }
        let beta = self.opening.max(1e-300);
        for b in 0..c {
            out.push(e.column(b).into_owned());
            for a in 0..d {
                for t in [0.5, 0.99] {
                    for s in [1.0, -1.0] {
                        out.push((e.column(b) + f.column(a) * (s * t / beta)).normalize());
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xd0a1);
        for _ in 0..32 {
            let bv = Vector::from_fn(c, |_, _| rng.gen_range(-1.0..1.0)).normalize();
            let av = Vector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)).normalize();
            let t = rng.gen::<f64>() * 0.99 / beta;
            out.push((e * bv + f * av * t).normalize());
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentContraction {
    pub start: Vec<f64>,
    pub invariant: bool,
    pub nondegenerate: bool,
    /// (n, ratio) pairs for n in [n0, 2n0].
    pub ratios: Vec<(usize, f64)>,
    pub worst_aperture: f64,
    pub windowed_rate: f64,
    pub raw_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionCertificate {
    pub r: f64,
    pub n0: usize,
    pub opening: f64,
    pub lambda: f64,
    pub raw_lambda: f64,
    pub pass: bool,
    pub segments: Vec<SegmentContraction>,
}

/// Forward orbits of the given length from each start point.
pub fn orbit_segments(map: &SmoothMap, starts: &[Vector], len: usize) -> Result<Vec<Vec<Vector>>> {
    starts
        .iter()
        .map(|x| {
            let mut seg = vec![map.wrap(x)];
            for _ in 0..len {
                let y = map.apply(seg.last().unwrap())?;
                seg.push(y);
            }
            Ok(seg)
        })
        .collect()
}

fn windowed(ratios: &[(usize, f64)]) -> f64 {
    let (n1, r1) = ratios[0];
    let (n2, r2) = *ratios.last().unwrap();
    if n2 == n1 {
        return r1.powf(1.0 / n1 as f64);
    }
    ((r2.ln() - r1.ln()) / (n2 - n1) as f64).exp()
}

/// Tests invariance, non-degeneracy and the ratio bound of r-contraction along segments.
pub fn check_contraction(map: &SmoothMap, cone: &ConeField, segments: &[Vec<Vector>], r: f64, n0: usize) -> Result<ContractionCertificate> {
    let n0 = n0.max(1);
    let results: Vec<SegmentContraction> = segments
        .par_iter()
        .map(|seg| -> Result<SegmentContraction> {
            if seg.len() < 2 * n0 + 1 {
                return Err(Error::TooFewPoints(format!("segment of length {} shorter than 2n0+1", seg.len())));
            }
            let x0 = &seg[0];
            let gens = cone.generators(x0);
            let mut m = Matrix::identity(map.dim, map.dim);
            let mut minv = Matrix::identity(map.dim, map.dim);
            let mut invariant = true;
            let mut nondegenerate = true;
            let mut worst: f64 = 0.0;
            let mut ratios = Vec::new();
            for n in 1..=2 * n0 {
                let j = map.jacobian_at(&seg[n - 1])?;
                // inverse cocycle accumulated stepwise
                minv *= j.clone().try_inverse().ok_or_else(|| Error::NonFinite("singular Jacobian".into()))?;
                m = j * m;
                if n < n0 {
                    continue;
                }
                let y = &seg[n];
                let mut umin = f64::INFINITY;
                for u in &gens {
                    let w = &m * u;
                    let nw = w.norm();
                    if !(nw > 1e-300) {
                        nondegenerate = false;
                    }
                    let ap = cone.aperture_ratio(y, &w);
                    worst = worst.max(ap / cone.opening.max(1e-300));
                    if !cone.contains(y, &w) {
                        invariant = false;
                    }
                    umin = umin.min(nw.min(nw.powf(r)));
                }
                let mut vmax: f64 = 0.0;
                for w in cone.outside_generators(y) {
                    let pre = &minv * &w;
                    vmax = vmax.max(1.0 / pre.norm());
                }
                let ratio = if vmax > 0.0 { umin / vmax } else { f64::INFINITY };
                ratios.push((n, ratio));
            }
            let windowed_rate = windowed(&ratios);
            let raw_rate = ratios.iter().map(|&(n, q)| q.powf(1.0 / n as f64)).fold(f64::INFINITY, f64::min);
            Ok(SegmentContraction {
                start: x0.as_slice().to_vec(),
                invariant,
                nondegenerate,
                ratios,
                worst_aperture: worst,
                windowed_rate,
                raw_rate,
            })
        })
        .collect::<Result<_>>()?;
    let lambda = results.iter().map(|s| s.windowed_rate).fold(f64::INFINITY, f64::min);
    let raw_lambda = results.iter().map(|s| s.raw_rate).fold(f64::INFINITY, f64::min);
    let pass = !results.is_empty()
        && lambda > 1.0
        && results.iter().all(|s| s.invariant && s.nondegenerate && s.ratios.iter().all(|&(_, q)| q > 1.0));
    Ok(ContractionCertificate { r, n0, opening: cone.opening, lambda, raw_lambda, pass, segments: results })
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentBunching {
    pub start: Vec<f64>,
    pub ratios: Vec<(usize, f64)>,
    pub windowed_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BunchingCertificate {
    pub n0: usize,
    pub lambda: f64,
    pub pass: bool,
    pub segments: Vec<SegmentBunching>,
}

/// Tests ‖DΨⁿw‖ < λ⁻ⁿ‖DΨⁿu‖/‖DΨⁿv‖ for u, v in the cone and w outside its n-step pull-back.
pub fn check_bunched(map: &SmoothMap, cone: &ConeField, segments: &[Vec<Vector>], n0: usize) -> Result<BunchingCertificate> {
    let n0 = n0.max(1);
    let results: Vec<SegmentBunching> = segments
        .par_iter()
        .map(|seg| -> Result<SegmentBunching> {
            if seg.len() < 2 * n0 + 1 {
                return Err(Error::TooFewPoints(format!("segment of length {} shorter than 2n0+1", seg.len())));
            }
            let gens = cone.generators(&seg[0]);
            let mut m = Matrix::identity(map.dim, map.dim);
            let mut minv = Matrix::identity(map.dim, map.dim);
            let mut ratios = Vec::new();
            for n in 1..=2 * n0 {
                let j = map.jacobian_at(&seg[n - 1])?;
                minv *= j.clone().try_inverse().ok_or_else(|| Error::NonFinite("singular Jacobian".into()))?;
                m = j * m;
                if n < n0 {
                    continue;
                }
                let norms: Vec<f64> = gens.iter().map(|u| (&m * u).norm()).collect();
                let umin = norms.iter().cloned().fold(f64::INFINITY, f64::min);
                let vmax = norms.iter().cloned().fold(0.0, f64::max);
                let mut wmax: f64 = 0.0;
                for w in cone.outside_generators(&seg[n]) {
                    wmax = wmax.max(1.0 / (&minv * &w).norm());
                }
                let ratio = if wmax > 0.0 { umin / vmax / wmax } else { f64::INFINITY };
                ratios.push((n, ratio));
            }
            Ok(SegmentBunching { start: seg[0].as_slice().to_vec(), windowed_rate: windowed(&ratios), ratios })
        })
        .collect::<Result<_>>()?;
    let lambda = results.iter().map(|s| s.windowed_rate).fold(f64::INFINITY, f64::min);
    let pass = !results.is_empty() && lambda > 1.0 && results.iter().all(|s| s.ratios.iter().all(|&(_, q)| q > 1.0));
    Ok(BunchingCertificate { n0, lambda, pass, segments: results })
}

/// Largest tangent of the angle between unit vectors of DΨⁿ·C(Ψ⁻ⁿx) and the image of the axis.
pub fn cone_thinness(map: &SmoothMap, cone: &ConeField, x: &Vector, n: usize) -> Result<f64> {
    let start = map.evaluate(x, -(n as i64)).map_err(|e| Error::OrbitEscape(e.to_string()))?;
    let m = map.jacobian_power(&start, n as i64).map_err(|e| Error::OrbitEscape(e.to_string()))?;
    let (f, _) = cone.frames_at(&start);
    let fn_ = orthonormalize(&(&m * f));
    let mut worst: f64 = 0.0;
    for u in cone.generators(&start) {
        let w = &m * u;
        let par = &fn_ * (fn_.transpose() * &w);
        let perp = &w - &par;
        worst = worst.max(perp.norm() / par.norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lookup;
    use approx::assert_relative_eq;

    fn col(s: &[f64]) -> Matrix {
        Matrix::from_column_slice(s.len(), 1, s)
    }

    fn z_cone(beta: f64) -> ConeField {
        ConeField::constant(col(&[0.0, 0.0, 1.0]), Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), beta)
    }

    #[test]
    fn linear3_splitting_is_exact() {
        let e = lookup("linear3").unwrap();
        let s = estimate_splitting(&e.map, &[Vector::zeros(3)], 1, 30).unwrap();
        let z = col(&[0.0, 0.0, 1.0]);
        assert!(subspace_angle(&s.f_frames[0], &z) <= 1e-10);
        let xy = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(subspace_angle(&s.e_frames[0], &xy) <= 1e-10);
        assert_relative_eq!(s.lambda_f, 3.0, epsilon = 1e-10);
        assert_relative_eq!(s.lambda_e, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn henon_saddle_unstable_direction_matches_eigenvector() {
        let e = lookup("henon_saddle").unwrap();
        let p = e.known_set.clone().unwrap()[0].clone();
        let s = estimate_splitting(&e.map, &[p.clone()], 1, 40).unwrap();
        let j = e.map.jacobian_at(&p).unwrap();
        // oracle: eigenvector of the 2x2 Jacobian for the eigenvalue of larger modulus
        let (a, b, c, d) = (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]);
        let tr = a + d;
        let det = a * d - b * c;
        let disc = (tr * tr / 4.0 - det).sqrt();
        let l1 = tr / 2.0 - disc; // negative, larger modulus here
        let l = if l1.abs() > (tr / 2.0 + disc).abs() { l1 } else { tr / 2.0 + disc };
        let v = orthonormalize(&col(&[b, l - a]));
        assert!(subspace_angle(&s.f_frames[0], &v) <= 1e-10);
    }

    #[test]
    fn no_domination_for_isometry() {
        let e = lookup("rotation90").unwrap();
        let r = estimate_splitting(&e.map, &[Vector::zeros(2)], 1, 20);
        assert!(matches!(r, Err(Error::NoDomination { .. })));
    }

    #[test]
    fn forward_and_inverse_splittings_are_complementary() {
        let e = lookup("curved2").unwrap();
        let s = estimate_splitting(&e.map, &[Vector::zeros(2)], 1, 45).unwrap();
        let inv = e.map.inverse_map().unwrap();
        let t = estimate_splitting(&inv, &[Vector::zeros(2)], 1, 45).unwrap();
        assert!(subspace_angle(&s.e_frames[0], &t.f_frames[0]) < 1e-10);
        assert!(min_principal_angle(&s.e_frames[0], &s.f_frames[0]) > 1e-3);
    }

    #[test]
    fn linear3_unstable_cone_contracts() {
        let e = lookup("linear3").unwrap();
        let segs = orbit_segments(&e.map, &[Vector::zeros(3)], 40).unwrap();
        let c = check_contraction(&e.map, &z_cone(1.0), &segs, 1.0, 10).unwrap();
        assert!(c.pass);
        assert!(c.lambda >= 2.9 && c.lambda <= 3.0 + 1e-9, "{}", c.lambda);
    }

    #[test]
    fn linear3_center_cone_fails_forward() {
        let e = lookup("linear3").unwrap();
        let segs = orbit_segments(&e.map, &[Vector::zeros(3)], 40).unwrap();
        let y = ConeField::constant(col(&[0.0, 1.0, 0.0]), Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]), 1.0);
        let c = check_contraction(&e.map, &y, &segs, 1.0, 10).unwrap();
        assert!(!c.pass);
        assert!(!c.segments[0].invariant);
    }

    #[test]
    fn linear3_thinness_is_three_to_minus_n() {
        let e = lookup("linear3").unwrap();
        let x = Vector::zeros(3);
        assert_relative_eq!(cone_thinness(&e.map, &z_cone(1.0), &x, 0).unwrap(), 1.0, epsilon = 1e-15);
        for n in 1..=20 {
            let t = cone_thinness(&e.map, &z_cone(1.0), &x, n).unwrap();
            let expect = 3f64.powi(-(n as i32));
            assert!((t / expect - 1.0).abs() <= 1e-10, "n={n}: {t} vs {expect}");
        }
    }

    #[test]
    fn bunched_diagonal_cases() {
        let m = SmoothMap::linear("d2", Matrix::from_diagonal(&Vector::from_column_slice(&[0.5, 0.9]))).unwrap();
        let cone = ConeField::constant(col(&[0.0, 1.0]), col(&[1.0, 0.0]), 0.5);
        let segs = orbit_segments(&m, &[Vector::zeros(2)], 40).unwrap();
        let b = check_bunched(&m, &cone, &segs, 10).unwrap();
        assert!(b.pass);
        // closed form: the ratio grows like (0.9/0.9)/0.5 = 2 per step
        assert!((b.lambda - 2.0).abs() < 1e-4, "{}", b.lambda);

        let axis = Matrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let comp = col(&[1.0, 0.0, 0.0]);
        let cone3 = ConeField::constant(axis, comp, 0.5);
        // closed form: slowest cone growth 0.9, fastest max(0.95, a) (the cone's E-part grows like a), outside a
        for (a, expect_pass) in [(0.5, true), (0.93, true), (0.97, false)] {
            let rate = 0.9 / f64::max(0.95, a) / a;
            let m = SmoothMap::linear("d3", Matrix::from_diagonal(&Vector::from_column_slice(&[a, 0.9, 0.95]))).unwrap();
            let segs = orbit_segments(&m, &[Vector::zeros(3)], 160).unwrap();
            let b = check_bunched(&m, &cone3, &segs, 80).unwrap();
            assert!((b.lambda - rate).abs() < 2e-3, "a={a}: {} vs {rate}", b.lambda);
            if expect_pass {
                assert!(b.lambda > 1.0);
            } else {
                assert!(!b.pass);
            }
        }
    }

    #[test]
    fn cat_unstable_cone_is_bunched() {
        let e = lookup("cat_linear").unwrap();
        let s5 = 5f64.sqrt();
        let u = orthonormalize(&col(&[1.0, (s5 - 1.0) / 2.0]));
        let st = orthonormalize(&col(&[1.0, -(s5 + 1.0) / 2.0]));
        let cone = ConeField::constant(u, st, 0.3);
        let segs = orbit_segments(&e.map, &[Vector::from_column_slice(&[0.1, 0.2])], 40).unwrap();
        let b = check_bunched(&e.map, &cone, &segs, 10).unwrap();
        assert!(b.pass);
    }
}
