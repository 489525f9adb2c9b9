//! Post-hoc checks of a computed center manifold: local invariance, tangency,
//! containment of the maximal invariant set, the saddle intersection, robustness
//! under perturbation and C¹ evidence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{diff_with, wrap_with, SmoothMap};
use crate::error::{Error, Result};
use crate::geometry::polyline_distance;
use crate::graph_transform::{iterate_to_fixed_point, LipschitzGraph, TubularNeighborhood};
use crate::invariant_set::{maximal_invariant, SampledInvariantSet};
use crate::linalg::{complement, orthonormalize, subspace_angle, Matrix, Vector};
use crate::pipeline::{center_manifold, splitting, CenterManifold, ManifoldOptions};
use crate::strong_manifolds::detect_connection;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub band: f64,
    pub samples: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Fibre distance between f(s) and S for graph points s = Ψ(u, h(u)) at nodes with d(s, K) ≤ band.
pub fn check_local_invariance(map: &SmoothMap, tube: &TubularNeighborhood, h: &LipschitzGraph, band: f64, fixed_point_residual: f64) -> Result<InvarianceReport> {
    let g = tube.grid();
    let mut max_residual: f64 = 0.0;
    let mut samples = 0;
    for f in 0..g.len() {
        let u = g.node_flat(f);
        let s = tube.psi(&u, &h.node(f)).expect("node");
        if tube.distance_to_k(&s) > band {
            continue;
        }
        let fs = map.apply(&wrap_with(&tube.topology, &s))?;
        let (u2, t2) = tube.project(&fs)?;
        if !g.inside(&u2) {
            return Err(Error::ProjectionFailure(format!("f(s) at node {f} leaves the tube mesh")));
        }
        max_residual = max_residual.max((t2 - h.eval(&u2)).norm());
        samples += 1;
    }
    let tolerance = 5.0 * fixed_point_residual.max(1e-13);
    Ok(InvarianceReport { band, samples, max_residual, tolerance, pass: samples > 0 && max_residual <= tolerance })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TangencyReport {
    pub samples: usize,
    pub max_angle: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Angle between the finite-difference tangent plane of S and E^c at each K sample.
pub fn check_tangency(cm: &CenterManifold, tolerance: f64) -> Result<TangencyReport> {
    let step = cm.tube.grid().max_spacing();
    let mut max_angle: f64 = 0.0;
    for i in 0..cm.split.len() {
        let x = cm.split.point(i);
        let (u, _) = cm.tube.project(&x)?;
        let t = cm.tangent(&u, step).ok_or_else(|| Error::ProjectionFailure("tangent stencil leaves the mesh".into()))?;
        max_angle = max_angle.max(subspace_angle(&orthonormalize(&t), &cm.split.e_frames[i]));
    }
    Ok(TangencyReport { samples: cm.split.len(), max_angle, tolerance, pass: max_angle <= tolerance })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub boxes: usize,
    pub outside_tube: usize,
    pub max_fiber_distance: f64,
    pub tolerance: f64,
    /// Largest ratio d(f⁻¹x, S)/d(x, S) over box centres off S.
    pub backward_ratio: f64,
    pub pass: bool,
}

fn fiber_distance(tube: &TubularNeighborhood, h: &LipschitzGraph, x: &Vector) -> Option<f64> {
    let (u, t) = tube.project(x).ok()?;
    if !tube.grid().inside(&u) {
        return None;
    }
    Some((t - h.eval(&u)).norm())
}

/// Box centres of the maximal invariant set in [lo, hi] lie within 2·resolution of S.
pub fn check_containment(map: &SmoothMap, cm: &CenterManifold, lo: &[f64], hi: &[f64], resolution: f64, steps: usize) -> Result<ContainmentReport> {
    let cover = maximal_invariant(map, lo, hi, resolution, steps)?;
    let (tube, h) = (&cm.tube, &cm.solution.graph);
    let mut rep = ContainmentReport { boxes: 0, outside_tube: 0, max_fiber_distance: 0.0, tolerance: 2.0 * resolution, backward_ratio: 0.0, pass: false };
    for x in cover.vectors() {
        rep.boxes += 1;
        match fiber_distance(tube, h, &x) {
            None => rep.outside_tube += 1,
            Some(d) => {
                rep.max_fiber_distance = rep.max_fiber_distance.max(d);
                if d > 1e-12 && map.has_inverse() {
                    if let Some(d1) = fiber_distance(tube, h, &map.apply_inverse(&x)?) {
                        rep.backward_ratio = rep.backward_ratio.max(d1 / d);
                    }
                }
            }
        }
    }
    rep.pass = rep.boxes > 0 && rep.outside_tube == 0 && rep.max_fiber_distance <= rep.tolerance;
    Ok(rep)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaddleOptions {
    pub manifold: ManifoldOptions,
    pub connection_radius: f64,
    pub connection_delta: f64,
    /// Seed points per K sample along E^c.
    pub seeds: usize,
    /// Seed curve half-length as a fraction of the smaller ε(m).
    pub length_fraction: f64,
    pub min_angle_deg: f64,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        SaddleOptions { manifold: ManifoldOptions::default(), connection_radius: 0.2, connection_delta: 0.01, seeds: 41, length_fraction: 0.25, min_angle_deg: 5.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaddleIntersection {
    /// One polyline per K sample, ordered along E^c.
    pub curves: Vec<Vec<Vec<f64>>>,
    pub center_directions: Vec<Vec<f64>>,
    pub min_surface_angle_deg: f64,
    pub rounds: usize,
    pub last_motion: f64,
    /// Largest angle between the curve tangent at K and E^c.
    pub tangent_angle: f64,
    /// Largest distance from f(c) to the curve over the inner half of each polyline.
    pub invariance_residual: f64,
}

fn normal_space(t: &Matrix) -> Matrix {
    complement(&orthonormalize(t))
}

fn onto(cm: &CenterManifold, z: &Vector) -> Result<Vector> {
    let (u, _) = cm.tube.project(z)?;
    cm.point_raw(&u).ok_or_else(|| Error::ProjectionFailure("projection left the mesh".into()))
}

/// Curve S^cs ∩ S^cu through K for a saddle-type splitting E^ss ⊕ E^c ⊕ E^uu.
pub fn saddle_intersection(map: &SmoothMap, k: &SampledInvariantSet, opts: &SaddleOptions) -> Result<SaddleIntersection> {
    let pts = k.vectors();
    let inverse = map.inverse_map()?;
    for (m, label) in [(map, "f"), (&inverse, "f⁻¹")] {
        let split = splitting(m, &pts, 1, &opts.manifold)?;
        let rep = detect_connection(m, k, &split, opts.connection_radius, opts.connection_delta)?;
        if rep.connected() {
            return Err(Error::ConnectionFound(format!("strong connection under {label}: {} pairs", rep.distinct_pairs())));
        }
    }
    let cs = center_manifold(map, &pts, 1, &opts.manifold)?;
    let cu = center_manifold(&inverse, &pts, 1, &opts.manifold)?;
    let mut min_angle = f64::INFINITY;
    let mut centers = Vec::new();
    for (i, x) in pts.iter().enumerate() {
        let ecs = &cs.split.e_frames[i];
        let ecu = &cu.split.e_frames[i];
        let step = cs.tube.grid().max_spacing().min(cu.tube.grid().max_spacing());
        let tcs = cs.tangent(&cs.tube.project(x)?.0, step).ok_or_else(|| Error::ProjectionFailure("S^cs tangent".into()))?;
        let tcu = cu.tangent(&cu.tube.project(x)?.0, step).ok_or_else(|| Error::ProjectionFailure("S^cu tangent".into()))?;
        let angle = subspace_angle(&normal_space(&tcs), &normal_space(&tcu)).to_degrees();
        min_angle = min_angle.min(angle);
        if angle < opts.min_angle_deg {
            return Err(Error::IntersectionDegenerate { angle });
        }
        // E^c = E^cs ∩ E^cu is orthogonal to both normal spaces
        let ncs = normal_space(ecs);
        let ncu = normal_space(ecu);
        let mut cols: Vec<Vector> = ncs.column_iter().map(|c| c.into_owned()).collect();
        cols.extend(ncu.column_iter().map(|c| c.into_owned()));
        let c = complement(&orthonormalize(&Matrix::from_columns(&cols))).column(0).into_owned();
        centers.push(c.normalize());
    }
    let half = opts.length_fraction * cs.epsilon().min(cu.epsilon());
    let n = opts.seeds.max(3) | 1;
    let mut curves: Vec<Vec<Vector>> = pts
        .iter()
        .zip(&centers)
        .map(|(x, c)| (0..n).map(|j| x + c * (half * (2.0 * j as f64 / (n - 1) as f64 - 1.0))).collect())
        .collect();
    let mut rounds = 0;
    let mut last_motion = f64::INFINITY;
    while rounds < 50 && last_motion > 1e-10 {
        last_motion = 0.0;
        for curve in curves.iter_mut() {
            for z in curve.iter_mut() {
                let next = onto(&cu, &onto(&cs, z)?)?;
                last_motion = last_motion.max((&next - &*z).norm());
                *z = next;
            }
        }
        rounds += 1;
    }
    let mut tangent_angle: f64 = 0.0;
    let mut invariance: f64 = 0.0;
    let mid = n / 2;
    for (curve, c) in curves.iter().zip(&centers) {
        let t = (&curve[mid + 1] - &curve[mid - 1]).normalize();
        tangent_angle = tangent_angle.max(subspace_angle(&Matrix::from_columns(&[t]), &Matrix::from_columns(&[c.clone()])));
        for z in &curve[n / 4..=3 * n / 4] {
            let fz = map.apply(z)?;
            let fz = z + diff_with(&map.topology, &fz, &wrap_with(&map.topology, z));
            invariance = invariance.max(polyline_distance(&fz, curve));
        }
    }
    Ok(SaddleIntersection {
        curves: curves.iter().map(|c| c.iter().map(|p| p.as_slice().to_vec()).collect()).collect(),
        center_directions: centers.iter().map(|c| c.as_slice().to_vec()).collect(),
        min_surface_angle_deg: min_angle,
        rounds,
        last_motion,
        tangent_angle,
        invariance_residual: invariance,
    })
}

/// g = f + a·exp(−|x−x₀|²/r²)·v with C¹ size max(|a|, |a|·√2·e^{−1/2}/r) equal to `size`.
pub fn bump_perturbation(map: &SmoothMap, center: &Vector, radius: f64, size: f64, seed: u64) -> SmoothMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = map.dim;
    let v = Vector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0))).normalize();
    let offset = Vector::from_iterator(n, (0..n).map(|_| rng.gen_range(-0.1..0.1) * radius));
    let x0 = center + offset;
    let grad_peak = 2f64.sqrt() * (-0.5f64).exp() / radius;
    let a = size / grad_peak.max(1.0);
    let (f1, f2) = (map.clone(), map.clone());
    let (x1, v1) = (x0.clone(), v.clone());
    let topo = map.topology.clone();
    let topo2 = map.topology.clone();
    SmoothMap::new(&format!("{}+bump", map.name), n, move |x| {
        let d = diff_with(&topo, x, &x1);
        (f1.forward_fn())(x) + &v1 * (a * (-d.norm_squared() / (radius * radius)).exp())
    })
    .with_jacobian(move |x| {
        let d = diff_with(&topo2, x, &x0);
        let e = (-d.norm_squared() / (radius * radius)).exp();
        let j = f2.jacobian_at(x).unwrap_or_else(|_| Matrix::from_element(n, n, f64::NAN));
        j + &v * d.transpose() * (-2.0 * a * e / (radius * radius))
    })
    .with_topology(map.topology.clone())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessRung {
    pub size: f64,
    pub c0_distance: f64,
    pub slope_distance: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub rungs: Vec<RobustnessRung>,
    /// Least-squares slope of log C⁰ distance against log size.
    pub loglog_slope: f64,
    pub slope_range: (f64, f64),
    pub pass: bool,
}

fn graph_slope_distance(tube: &TubularNeighborhood, a: &LipschitzGraph, b: &LipschitzGraph) -> f64 {
    let mut diff = a.clone();
    for (o, p) in diff.offsets.iter_mut().zip(&b.offsets) {
        *o -= p;
    }
    diff.max_slope(tube).0
}

/// Fixed graph of a bump-perturbed map, warm-started from S with the same tube and truncation.
pub fn robustness_probe(map: &SmoothMap, cm: &CenterManifold, size: f64, trials: usize, seed: u64) -> Result<RobustnessRung> {
    let setup = &cm.solution.setup;
    let radius = setup.ledger.epsilon;
    let mut rung = RobustnessRung { size, c0_distance: 0.0, slope_distance: 0.0, iterations: 0 };
    for trial in 0..trials.max(1) {
        let center = &cm.tube.k[trial % cm.tube.k.len()];
        let g = bump_perturbation(map, center, radius, size, seed.wrapping_add(trial as u64));
        let (hg, trace) = iterate_to_fixed_point(&cm.tube, &g, setup, &cm.solution.graph, 1e-13, 400)?;
        rung.c0_distance = rung.c0_distance.max(hg.sup_dist(&cm.solution.graph));
        rung.slope_distance = rung.slope_distance.max(graph_slope_distance(&cm.tube, &hg, &cm.solution.graph));
        rung.iterations = rung.iterations.max(trace.iterations);
    }
    Ok(rung)
}

fn loglog_fit(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Robustness probe over a ladder of perturbation sizes; passes when distances scale linearly.
pub fn robustness_ladder(map: &SmoothMap, cm: &CenterManifold, sizes: &[f64], trials: usize, seed: u64) -> Result<RobustnessReport> {
    let rungs = sizes.iter().map(|&s| robustness_probe(map, cm, s, trials, seed)).collect::<Result<Vec<_>>>()?;
    let loglog_slope = loglog_fit(sizes, &rungs.iter().map(|r| r.c0_distance).collect::<Vec<_>>());
    let slope_range = (0.8, 1.2);
    let pass = loglog_slope >= slope_range.0 && loglog_slope <= slope_range.1;
    Ok(RobustnessReport { rungs, loglog_slope, slope_range, pass })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub spacing: f64,
    pub modulus_fine: f64,
    pub modulus_coarse: f64,
    pub ratio: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Largest angle between finite-difference tangent planes at base points δ apart near K.
fn tangent_modulus(cm: &CenterManifold, delta: f64, band: f64) -> (f64, usize) {
    let g = cm.tube.grid();
    let d = g.dim();
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for f in 0..g.len() {
        let u = g.node_flat(f);
        let inside = cm.point_raw(&u).map_or(false, |p| cm.tube.distance_to_k(&p) <= band);
        if !inside {
            continue;
        }
        let Some(t0) = cm.tangent(&u, delta) else { continue };
        for i in 0..d {
            let mut v = u.clone();
            v[i] += delta;
            if let Some(t1) = cm.tangent(&v, delta) {
                worst = worst.max(subspace_angle(&orthonormalize(&t0), &orthonormalize(&t1)));
                samples += 1;
            }
        }
    }
    (worst, samples)
}

/// Tangent-plane modulus of continuity at spacing δ and 2δ; C¹ evidence when it halves.
pub fn c1_evidence(cm: &CenterManifold) -> SmoothnessReport {
    let delta = cm.tube.grid().max_spacing();
    let band = 0.5 * cm.epsilon();
    let (fine, samples) = tangent_modulus(cm, delta, band);
    let (coarse, _) = tangent_modulus(cm, 2.0 * delta, band);
    let ratio = if coarse > 1e-12 { fine / coarse } else { 0.0 };
    SmoothnessReport { spacing: delta, modulus_fine: fine, modulus_coarse: coarse, ratio, samples, pass: samples > 0 && ratio <= 0.75 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lookup;

    fn curved2() -> (SmoothMap, CenterManifold) {
        let e = lookup("curved2").unwrap();
        let mut opts = ManifoldOptions::default();
        opts.tube.radius = 0.1;
        opts.tube.spacing = 1e-3;
        let k = e.known_set.clone().unwrap();
        let cm = center_manifold(&e.map, &k, 1, &opts).unwrap();
        (e.map, cm)
    }

    #[test]
    fn curved2_invariance_tangency_and_smoothness() {
        let (map, cm) = curved2();
        let res = *cm.solution.trace.distances.last().unwrap();
        let inv = check_local_invariance(&map, &cm.tube, &cm.solution.graph, cm.epsilon() / 4.0, res).unwrap();
        assert!(inv.pass, "{inv:?}");
        assert!(inv.max_residual <= 1e-9);
        let tan = check_tangency(&cm, 1e-3).unwrap();
        assert!(tan.max_angle <= 1e-6, "{tan:?}");
        let c1 = c1_evidence(&cm);
        assert!(c1.pass, "{c1:?}");
    }

    #[test]
    fn perturbed_graph_fails_invariance() {
        let (map, cm) = curved2();
        let mut h = cm.solution.graph.clone();
        let g = cm.tube.grid();
        for f in 0..g.len() {
            let x = g.node_flat(f)[0];
            h.offsets[f] += 1e-3 * (-(x / (0.25 * cm.epsilon())).powi(2)).exp();
        }
        let inv = check_local_invariance(&map, &cm.tube, &h, cm.epsilon() / 4.0, 1e-11).unwrap();
        assert!(!inv.pass);
    }

    #[test]
    fn zero_perturbation_keeps_the_graph() {
        let (map, cm) = curved2();
        let rung = robustness_probe(&map, &cm, 0.0, 1, 3).unwrap();
        assert!(rung.c0_distance <= 1e-11, "{rung:?}");
    }

    #[test]
    fn bump_perturbation_has_the_requested_c1_size() {
        let e = lookup("curved2").unwrap();
        let x0 = Vector::zeros(2);
        let g = bump_perturbation(&e.map, &x0, 0.01, 1e-3, 5);
        let mut worst: f64 = 0.0;
        for i in -40..=40 {
            for j in -40..=40 {
                let x = Vector::from_column_slice(&[i as f64 * 1e-3, j as f64 * 1e-3]);
                let dj = g.jacobian_at(&x).unwrap() - e.map.jacobian_at(&x).unwrap();
                worst = worst.max(dj.norm());
            }
        }
        assert!(worst <= 1e-3 * (1.0 + 1e-9) && worst >= 0.9e-3, "{worst}");
    }

    #[test]
    fn loglog_fit_recovers_powers() {
        let xs = [1e-2, 1e-3, 1e-4];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        assert!((loglog_fit(&xs, &ys) - 2.0).abs() < 1e-12);
    }
}
