//! Projectivized tangent dynamics of surface maps and stable foliations obtained
//! from a center manifold of the lifted map.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cones::{check_bunched, orbit_segments, BunchingCertificate, ConeField, SplittingFrame};
use crate::dynamics::{diff_with, Coord, SmoothMap};
use crate::error::{Error, Result};
use crate::geometry::polyline_distance;
use crate::linalg::{line_angle, line_angle_distance, Matrix, Vector};
use crate::pipeline::{center_manifold_from_split, splitting, CenterManifold, ManifoldOptions};

fn direction(phi: f64) -> Vector {
    Vector::from_column_slice(&[phi.cos(), phi.sin()])
}

fn push_angle(j: &Matrix, phi: f64) -> f64 {
    let w = j * direction(phi);
    line_angle(w[0], w[1])
}

/// Angle φ' ≡ φ mod π closest to `reference`.
fn unwrap_angle(phi: f64, reference: f64) -> f64 {
    phi - PI * ((phi - reference) / PI).round()
}

/// f̂(x, φ) = (f(x), angle of Df(x)·(cos φ, sin φ)) on the projectivized tangent bundle.
#[derive(Clone, Debug)]
pub struct ProjectiveLiftedMap {
    pub base: SmoothMap,
    pub lifted: SmoothMap,
}

fn lifted_jacobian(base: &SmoothMap, p: &Vector, forward: bool) -> Matrix {
    let x = Vector::from_column_slice(&[p[0], p[1]]);
    let phi = p[2];
    let jac = |y: &Vector| -> Matrix {
        let r = if forward { base.jacobian_at(y) } else { base.inverse_jacobian_at(y) };
        r.unwrap_or_else(|_| Matrix::from_element(2, 2, f64::NAN))
    };
    let j = jac(&x);
    let mut out = Matrix::zeros(3, 3);
    for r in 0..2 {
        for c in 0..2 {
            out[(r, c)] = j[(r, c)];
        }
    }
    let w = &j * direction(phi);
    out[(2, 2)] = j.determinant() / w.norm_squared();
    let base_phi = push_angle(&j, phi);
    let h = 1e-6 * x.norm().max(1.0);
    for c in 0..2 {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        let ap = unwrap_angle(push_angle(&jac(&xp), phi), base_phi);
        let am = unwrap_angle(push_angle(&jac(&xm), phi), base_phi);
        out[(2, c)] = (ap - am) / (2.0 * h);
    }
    out
}

/// Lift a 2-dimensional map with inverse to the bundle of tangent lines.
pub fn lift_map(map: &SmoothMap) -> Result<ProjectiveLiftedMap> {
    if map.dim != 2 {
        return Err(Error::DimensionUnsupported(format!("projective lift needs a surface map, got dimension {}", map.dim)));
    }
    if !map.has_inverse() {
        return Err(Error::MissingInverse);
    }
    let (b1, b2, b3, b4) = (map.clone(), map.clone(), map.clone(), map.clone());
    let mut topology = map.topology.clone();
    topology.push(Coord::Circle(PI));
    let lifted = SmoothMap::new(&format!("{}^", map.name), 3, move |p| {
        let x = Vector::from_column_slice(&[p[0], p[1]]);
        let y = (b1.forward_fn())(&x);
        let j = b1.jacobian_at(&x).unwrap_or_else(|_| Matrix::from_element(2, 2, f64::NAN));
        Vector::from_column_slice(&[y[0], y[1], push_angle(&j, p[2])])
    })
    .with_inverse(move |q| {
        let y = Vector::from_column_slice(&[q[0], q[1]]);
        let x = (b2.inverse_fn().expect("checked"))(&y);
        let j = b2.inverse_jacobian_at(&y).unwrap_or_else(|_| Matrix::from_element(2, 2, f64::NAN));
        Vector::from_column_slice(&[x[0], x[1], push_angle(&j, q[2])])
    })
    .with_jacobian(move |p| lifted_jacobian(&b3, p, true))
    .with_inverse_jacobian(move |q| lifted_jacobian(&b4, q, false))
    .with_topology(topology);
    Ok(ProjectiveLiftedMap { base: map.clone(), lifted })
}

impl ProjectiveLiftedMap {
    /// Largest |base(f̂(x,φ)) − f(x)| over seeded samples of the given box.
    pub fn equivariance_error(&self, lo: &[f64], hi: &[f64], samples: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let x = Vector::from_iterator(2, (0..2).map(|i| rng.gen_range(lo[i]..hi[i])));
            let phi = rng.gen_range(0.0..PI);
            let up = self.lifted.apply(&Vector::from_column_slice(&[x[0], x[1], phi]))?;
            let down = self.base.apply(&x)?;
            worst = worst.max(self.base.dist(&Vector::from_column_slice(&[up[0], up[1]]), &down));
        }
        Ok(worst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bundle {
    Stable,
    Unstable,
}

/// Points (x, φ(x)) with φ the angle of the chosen bundle of a hyperbolic splitting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiftedSet {
    pub points: Vec<Vec<f64>>,
    pub which: Bundle,
}

impl LiftedSet {
    pub fn vectors(&self) -> Vec<Vector> {
        self.points.iter().map(|p| Vector::from_column_slice(p)).collect()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[2]).collect()
    }
}

/// Attach the stable (E) or unstable (F) line of a splitting with d_F = 1 to each sample.
pub fn lift_set(split: &SplittingFrame, which: Bundle) -> Result<LiftedSet> {
    if split.dim() != 2 || split.d_f != 1 || split.e_frames.len() != split.len() {
        return Err(Error::SplittingMissing("a 1+1 splitting of a surface map is required".into()));
    }
    let points = (0..split.len())
        .map(|i| {
            let m = match which {
                Bundle::Stable => &split.e_frames[i],
                Bundle::Unstable => &split.f_frames[i],
            };
            let p = split.point(i);
            vec![p[0], p[1], line_angle(m[(0, 0)], m[(1, 0)])]
        })
        .collect();
    Ok(LiftedSet { points, which })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoliationOptions {
    pub manifold: ManifoldOptions,
    pub bunching_n0: usize,
    pub cone_opening: f64,
    /// Leaf half-length as a fraction of the invariance radius.
    pub leaf_fraction: f64,
    /// RK4 step as a fraction of the leaf half-length.
    pub step_fraction: f64,
}

impl Default for FoliationOptions {
    fn default() -> Self {
        FoliationOptions { manifold: ManifoldOptions::default(), bunching_n0: 4, cone_opening: 0.2, leaf_fraction: 0.5, step_fraction: 0.04 }
    }
}

/// Line field x ↦ p⁻¹(x) ∩ S read off the lifted center manifold.
pub struct FoliationChart {
    pub lift: ProjectiveLiftedMap,
    pub lifted_set: LiftedSet,
    pub manifold: CenterManifold,
    pub bunching: BunchingCertificate,
    /// Fibre (strong) and base rates of the lifted splitting.
    pub fiber_rate: f64,
    pub base_rate: f64,
}

impl FoliationChart {
    /// Angle of the leaf direction at base point x.
    pub fn angle_at(&self, x: &Vector) -> Result<f64> {
        let tube = &self.manifold.tube;
        let frame = &tube.mesh.frame;
        if frame.vert_axes != vec![2] {
            return Err(Error::GraphObstruction("lifted center manifold is not a graph over the base surface".into()));
        }
        let mut u = x.clone();
        for _ in 0..40 {
            let p = self.manifold.point_raw(&u).ok_or_else(|| Error::ProjectionFailure(format!("{:?} outside the foliation chart", x.as_slice())))?;
            let r = diff_with(&self.lift.base.topology, &Vector::from_column_slice(&[p[0], p[1]]), x);
            if r.norm() <= 1e-14 {
                return Ok(p[2].rem_euclid(PI));
            }
            let t = self.manifold.tangent(&u, 1e-4 * tube.grid().max_spacing()).ok_or_else(|| Error::ProjectionFailure("chart boundary".into()))?;
            let j = t.rows(0, 2).into_owned();
            let step = j.lu().solve(&r).ok_or_else(|| Error::ProjectionFailure("singular base projection".into()))?;
            u -= &step;
            if step.norm() <= 1e-15 {
                return Ok(p[2].rem_euclid(PI));
            }
        }
        Err(Error::ProjectionFailure("line field evaluation did not converge".into()))
    }

    /// Radius of the neighbourhood of K on which the lifted graph is invariant.
    pub fn invariant_radius(&self) -> f64 {
        0.5 * self.manifold.epsilon()
    }

    /// Leaf half-length and RK4 step for the given options.
    pub fn leaf_scale(&self, opts: &FoliationOptions) -> (f64, f64) {
        let half = opts.leaf_fraction * self.invariant_radius();
        (half, opts.step_fraction * half)
    }

    /// Seeds on a circle of radius `radius` around each K point, plus the K points.
    pub fn seed_points(&self, count: usize, radius: f64) -> Vec<Vector> {
        let mut out = Vec::new();
        for p in self.lifted_set.points.iter() {
            let x = Vector::from_column_slice(&p[..2]);
            out.push(x.clone());
            for i in 0..count {
                let a = i as f64 * 2.0 * PI / count as f64;
                out.push(&x + Vector::from_column_slice(&[a.cos(), a.sin()]) * radius);
            }
        }
        out
    }

    /// Leaf through `seed` integrated with fourth-order Runge–Kutta, `half_len` each way.
    pub fn leaf(&self, seed: &Vector, half_len: f64, step: f64) -> Result<Vec<Vector>> {
        let n = (half_len / step).ceil().max(1.0) as usize;
        let mut sides: Vec<Vec<Vector>> = Vec::new();
        let phi0 = self.angle_at(seed)?;
        for sign in [1.0, -1.0] {
            let mut pts = vec![seed.clone()];
            let mut dir = direction(phi0) * sign;
            let mut x = seed.clone();
            for _ in 0..n {
                let field = |p: &Vector, prev: &Vector| -> Result<Vector> {
                    let d = direction(self.angle_at(p)?);
                    Ok(if d.dot(prev) < 0.0 { -d } else { d })
                };
                let k1 = field(&x, &dir)?;
                let k2 = field(&(&x + &k1 * (0.5 * step)), &k1)?;
                let k3 = field(&(&x + &k2 * (0.5 * step)), &k2)?;
                let k4 = field(&(&x + &k3 * step), &k3)?;
                let dx = (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (step / 6.0);
                x += &dx;
                dir = dx.normalize();
                pts.push(x.clone());
            }
            sides.push(pts);
        }
        let mut leaf: Vec<Vector> = sides[1].iter().rev().cloned().collect();
        leaf.extend(sides[0].iter().skip(1).cloned());
        Ok(leaf)
    }

    /// Largest distance from f(leaf through x) to the leaf through f(x), over the seeds.
    pub fn leaf_invariance(&self, seeds: &[Vector], half_len: f64, step: f64) -> Result<f64> {
        let map = &self.lift.base;
        let mut worst: f64 = 0.0;
        for x in seeds {
            let leaf = self.leaf(x, half_len, step)?;
            let y = map.apply(x)?;
            let image_leaf = self.leaf(&y, half_len, step)?;
            for z in &leaf {
                let fz = map.apply(z)?;
                let fz = &y + diff_with(&map.topology, &fz, &y);
                worst = worst.max(polyline_distance(&fz, &image_leaf));
            }
        }
        Ok(worst)
    }
}

/// Stable foliation near K: center manifold of the lifted map through the stable lift.
pub fn foliate(map: &SmoothMap, k: &[Vector], opts: &FoliationOptions) -> Result<FoliationChart> {
    let lift = lift_map(map)?;
    let split = splitting(map, k, 1, &opts.manifold)?;
    let cone = ConeField::from_splitting(&split, opts.cone_opening, map);
    let segments = orbit_segments(map, k, 2 * opts.bunching_n0 + 1)?;
    let bunching = check_bunched(map, &cone, &segments, opts.bunching_n0)?;
    if !bunching.pass {
        return Err(Error::BunchingFailure { rate: bunching.lambda });
    }
    let lifted_set = lift_set(&split, Bundle::Stable)?;
    let khat = lifted_set.vectors();
    let lsplit = splitting(&lift.lifted, &khat, 1, &opts.manifold)?;
    let fiber_rate = lsplit.lambda_f;
    let base_rate = lsplit.lambda_e;
    let manifold = center_manifold_from_split(&lift.lifted, lsplit, &opts.manifold)?;
    Ok(FoliationChart { lift, lifted_set, manifold, bunching, fiber_rate, base_rate })
}

/// Angular distance between two line angles (mod π).
pub fn angle_error(a: f64, b: f64) -> f64 {
    line_angle_distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lookup;

    #[test]
    fn cat_lift_fixes_the_unstable_angle() {
        let e = lookup("cat_linear").unwrap();
        let lift = lift_map(&e.map).unwrap();
        let s5 = 5f64.sqrt();
        let phi_u = ((s5 - 1.0) / 2.0).atan();
        let y = lift.lifted.apply(&Vector::from_column_slice(&[0.3, 0.7, phi_u])).unwrap();
        assert!(line_angle_distance(y[2], phi_u) < 1e-14);
        assert!(lift.equivariance_error(&[0.0, 0.0], &[1.0, 1.0], 10_000, 1).unwrap() == 0.0);
    }

    #[test]
    fn rotation_adds_a_right_angle() {
        let e = lookup("rotation90").unwrap();
        let lift = lift_map(&e.map).unwrap();
        for phi in [0.1, 1.0, 2.0, 3.0] {
            let y = lift.lifted.apply(&Vector::from_column_slice(&[0.2, -0.1, phi])).unwrap();
            assert!(line_angle_distance(y[2], (phi + PI / 2.0).rem_euclid(PI)) < 1e-14);
        }
    }

    #[test]
    fn lifted_jacobian_matches_differences() {
        let e = lookup("henon_saddle").unwrap();
        let lift = lift_map(&e.map).unwrap();
        let p = Vector::from_column_slice(&[0.4, 0.1, 0.8]);
        let j = lift.lifted.jacobian_at(&p).unwrap();
        let fd = lift.lifted.fd_jacobian(&lift.lifted.forward_fn(), &p).unwrap();
        assert!((j - fd).norm() < 1e-6);
    }

    #[test]
    fn rejects_three_dimensional_maps() {
        let e = lookup("linear3").unwrap();
        assert!(matches!(lift_map(&e.map), Err(Error::DimensionUnsupported(_))));
    }
}
