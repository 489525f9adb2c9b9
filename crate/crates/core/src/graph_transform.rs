//! Tubular neighbourhood of the initial surface, the constants ledger, the
//! truncated graph transform G_m on Lipschitz graphs and its fixed point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cones::SplittingFrame;
use crate::dynamics::{diff_with, wrap_with, Coord, SmoothMap};
use crate::error::{Error, Result};
use crate::geometry::PointIndex;
use crate::linalg::{decompose, min_principal_angle, min_singular, orthonormalize, spectral_norm, Matrix, Vector};
use crate::mesh::Grid;
use crate::smoothing::bump_from_distance;
use crate::whitney_surface::{FittedSurface, SurfaceMesh};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeOptions {
    /// Initial neighbourhood radius around K (base distance and fibre length).
    pub radius: f64,
    pub min_radius: f64,
    /// Mesh spacing in base coordinates.
    pub spacing: f64,
    /// Gaussian bandwidth for averaging F frames; defaults to the radius.
    pub fiber_bandwidth: Option<f64>,
    /// Target cone slope β.
    pub beta: f64,
    /// Largest number of base nodes used to verify the tube properties.
    pub samples: usize,
    pub min_transversality_deg: f64,
}

impl Default for TubeOptions {
    fn default() -> Self {
        TubeOptions {
            radius: 0.2,
            min_radius: 1e-4,
            spacing: 1e-2,
            fiber_bandwidth: None,
            beta: 0.05,
            samples: 400,
            min_transversality_deg: 30.0,
        }
    }
}

/// Measured tube constants.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TubeProperties {
    pub lambda0: f64,
    pub eta: f64,
    pub delta: f64,
    pub cone_factor: f64,
    pub transversality_deg: f64,
    pub c_f: f64,
    pub samples: usize,
    pub radius: f64,
    pub shrinks: u32,
}

pub struct TubularNeighborhood {
    pub mesh: SurfaceMesh,
    /// Fibre frames (n×q) per mesh node.
    pub fibers: Vec<Matrix>,
    pub radius: f64,
    pub k: Vec<Vector>,
    k_index: PointIndex,
    pub topology: Vec<Coord>,
    pub properties: TubeProperties,
    pub ledger: ConstantsLedger,
}

impl std::fmt::Debug for TubularNeighborhood {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TubularNeighborhood").field("radius", &self.radius).field("properties", &self.properties).finish()
    }
}

/// Constants of the graph-transform argument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub lambda0: f64,
    pub eta: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub beta_bar: f64,
    pub m: f64,
    pub epsilon: f64,
    pub c_f: f64,
    /// Smallness threshold for m/ε.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerCheck {
    pub ok: bool,
    pub violated: Vec<String>,
}

/// Upper bound (λ₀−2η)/(6η) on β; +∞ when η = 0.
pub fn beta_bound(lambda0: f64, eta: f64) -> f64 {
    if eta == 0.0 {
        f64::INFINITY
    } else {
        (lambda0 - 2.0 * eta) / (6.0 * eta)
    }
}

pub fn validate_ledger(l: &ConstantsLedger) -> LedgerCheck {
    let mut violated = Vec::new();
    let kappa = l.lambda0 - 4.0 * l.eta * (1.0 + l.beta);
    let checks: [(&str, bool); 8] = [
        ("β<(λ₀−2η)/(6η)", l.beta < beta_bound(l.lambda0, l.eta)),
        ("λ₀−4η(1+β)>1", kappa > 1.0),
        ("β+δ<1/10", l.beta + l.delta < 0.1),
        ("(λ₀−4η(1+β))⁻¹<γ", kappa > 0.0 && 1.0 / kappa < l.gamma),
        ("γ<1", l.gamma < 1.0),
        ("γρ<1", l.gamma * l.rho < 1.0),
        ("β/λ₀<β̄", l.beta / l.lambda0 < l.beta_bar),
        ("β̄<β", l.beta_bar < l.beta),
    ];
    for (name, ok) in checks {
        if !ok {
            violated.push(name.to_string());
        }
    }
    LedgerCheck { ok: violated.is_empty(), violated }
}

impl ConstantsLedger {
    /// Ledger from measured λ₀, η, δ: β is the target unless a bound forces it
    /// lower, γ and β̄ are midpoints of their admissible intervals, ρ = 1+1e-6.
    pub fn from_measurements(lambda0: f64, eta: f64, delta: f64, beta_target: f64, c_f: f64, threshold: f64) -> Self {
        let mut beta = beta_target.min(0.9 * beta_bound(lambda0, eta));
        if 0.1 - delta > 0.0 {
            beta = beta.min(0.9 * (0.1 - delta));
        }
        if !(beta > 0.0) {
            beta = beta_target;
        }
        let kappa = lambda0 - 4.0 * eta * (1.0 + beta);
        let gamma = if kappa > 1.0 { 0.5 * (1.0 / kappa + 1.0) } else { 1.0 };
        ConstantsLedger {
            lambda0,
            eta,
            beta,
            delta,
            gamma,
            rho: 1.0 + 1e-6,
            beta_bar: 0.5 * (beta / lambda0 + beta),
            m: 0.0,
            epsilon: 0.0,
            c_f,
            threshold,
        }
    }
}

fn vertical_selector(mesh: &SurfaceMesh) -> Matrix {
    let n = mesh.frame.ambient_dim();
    let q = mesh.frame.vert_axes.len();
    Matrix::from_fn(n, q, |r, c| if mesh.frame.vert_axes[c] == r { 1.0 } else { 0.0 })
}

fn average_fiber(point: &Vector, k: &[Vector], f_frames: &[Matrix], topology: &[Coord], bw: f64, vsel: &Matrix) -> Matrix {
    let n = point.len();
    let q = vsel.ncols();
    let logs: Vec<f64> = k.iter().map(|x| -(diff_with(topology, point, x).norm() / bw).powi(2)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = Matrix::zeros(n, n);
    for (i, l) in logs.iter().enumerate() {
        let w = (l - top).exp();
        if w > 1e-30 {
            let f = orthonormalize(&f_frames[i]);
            p += &f * f.transpose() * w;
        }
    }
    let eig = p.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top_vecs = Matrix::from_columns(&idx[..q].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    let proj = &top_vecs * (top_vecs.transpose() * vsel);
    if min_singular(&proj) > 1e-8 {
        orthonormalize(&proj)
    } else {
        top_vecs
    }
}

impl TubularNeighborhood {
    pub fn grid(&self) -> &Grid {
        self.mesh.grid()
    }

    pub fn base_dim(&self) -> usize {
        self.mesh.frame.dim()
    }

    pub fn fiber_dim(&self) -> usize {
        self.mesh.frame.vert_axes.len()
    }

    pub fn fiber(&self, u: &Vector) -> Option<Matrix> {
        let g = self.grid();
        let loc = g.locate(u)?;
        let mut m = Matrix::zeros(self.fibers[0].nrows(), self.fibers[0].ncols());
        for (f, w) in g.weights(&loc) {
            if w != 0.0 {
                m += &self.fibers[f] * w;
            }
        }
        Some(orthonormalize(&m))
    }

    /// Unwrapped base-surface point σ(u).
    pub fn sigma(&self, u: &Vector) -> Option<Vector> {
        self.mesh.point_raw(u)
    }

    /// Unwrapped Ψ(u,t) = σ(u) + F̃(u)·t.
    pub fn psi(&self, u: &Vector, t: &Vector) -> Option<Vector> {
        Some(self.sigma(u)? + self.fiber(u)? * t)
    }

    /// ∂Ψ/∂u at (u,t) by central differences.
    pub fn horizontal_frame(&self, u: &Vector, t: &Vector) -> Option<Matrix> {
        let d = self.base_dim();
        let s = 1e-4 * self.grid().max_spacing();
        let mut cols = Vec::with_capacity(d);
        for i in 0..d {
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += s;
            um[i] -= s;
            cols.push((self.psi(&up, t)? - self.psi(&um, t)?) / (2.0 * s));
        }
        Some(Matrix::from_columns(&cols))
    }

    pub fn distance_to_k(&self, x: &Vector) -> f64 {
        self.k_index.nearest(&wrap_with(&self.topology, x)).map_or(f64::INFINITY, |(_, d)| d)
    }

    /// Tube coordinates (u, t) of an ambient point by Newton on Ψ(u,t) = z.
    pub fn project(&self, z: &Vector) -> Result<(Vector, Vector)> {
        let frame = &self.mesh.frame;
        let (d, q) = (self.base_dim(), self.fiber_dim());
        let mut u = frame.base(z);
        let mut t = Vector::zeros(q);
        for _ in 0..40 {
            let p = self.psi(&u, &t).ok_or_else(|| Error::ProjectionFailure(format!("base point {:?} left the mesh", u.as_slice())))?;
            let r = diff_with(&self.topology, &p, z);
            let h = self.horizontal_frame(&u, &t).ok_or_else(|| Error::ProjectionFailure("mesh boundary".into()))?;
            let f = self.fiber(&u).expect("inside");
            let mut cols: Vec<Vector> = (0..d).map(|i| h.column(i).into_owned()).collect();
            cols.extend((0..q).map(|j| f.column(j).into_owned()));
            let step = Matrix::from_columns(&cols)
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::ProjectionFailure("singular tube frame".into()))?;
            u -= step.rows(0, d);
            t -= step.rows(d, q);
            if step.norm() <= 1e-13 * (1.0 + u.norm() + t.norm()) || r.norm() <= 1e-15 {
                return Ok((u, t));
            }
        }
        Err(Error::ProjectionFailure(format!("no convergence near {:?}", z.as_slice())))
    }

    fn sample_nodes(&self, radius: f64, cap: usize) -> Vec<usize> {
        let g = self.grid();
        let mut near: Vec<usize> = (0..g.len())
            .filter(|&f| self.sigma(&g.node_flat(f)).map_or(false, |p| self.distance_to_k(&p) <= radius))
            .collect();
        if near.len() > cap {
            let stride = near.len() as f64 / cap as f64;
            near = (0..cap).map(|i| near[(i as f64 * stride) as usize]).collect();
        }
        near
    }

    /// Measure the tube constants on nodes within `radius` of K and fibre offsets |t| ≤ radius.
    pub fn measure(&self, map: &SmoothMap, radius: f64, beta: f64, cap: usize) -> Result<TubeProperties> {
        let q = self.fiber_dim();
        let d = self.base_dim();
        let nodes = self.sample_nodes(radius, cap);
        let mut props = TubeProperties { lambda0: f64::INFINITY, transversality_deg: 90.0, radius, ..Default::default() };
        let directions: Vec<Vector> = if d == 1 {
            vec![Vector::from_element(1, 1.0), Vector::from_element(1, -1.0)]
        } else {
            (0..8)
                .map(|k| {
                    let a = std::f64::consts::PI * k as f64 / 4.0;
                    Vector::from_column_slice(&[a.cos(), a.sin()])
                })
                .collect()
        };
        for &f in &nodes {
            let u = self.grid().node_flat(f);
            let tan = orthonormalize(&self.mesh.tangent(&u).expect("node on mesh"));
            let fib = self.fiber(&u).expect("node on mesh");
            props.transversality_deg = props.transversality_deg.min(min_principal_angle(&tan, &fib).to_degrees());
            let h0 = self.horizontal_frame(&u, &Vector::zeros(q)).expect("node on mesh");
            let r0 = h0.clone().qr().r();
            let r0_inv = r0.try_inverse().ok_or_else(|| Error::PropertiesUnachievable("degenerate base tangent".into()))?;
            for ts in [-1.0, 0.0, 1.0] {
                let t = Vector::from_element(q, ts * radius);
                let z = match self.psi(&u, &t) {
                    Some(z) => z,
                    None => continue,
                };
                let h = self.horizontal_frame(&u, &t).expect("inside");
                let sv = (&h * &r0_inv).singular_values();
                for s in sv.iter() {
                    props.delta = props.delta.max((s - 1.0).abs());
                }
                let zw = wrap_with(&self.topology, &z);
                let df = map.jacobian_at(&zw)?;
                let dfi = df.clone().try_inverse().ok_or_else(|| Error::NonFinite("singular jacobian".into()))?;
                props.c_f = props.c_f.max(spectral_norm(&df)).max(spectral_norm(&dfi));
                let y = map.apply(&zw)?;
                let (u1, t1) = match self.project(&y) {
                    Ok(p) => p,
                    Err(_) => continue,
                };
                let (h1, f1) = match (self.horizontal_frame(&u1, &t1), self.fiber(&u1)) {
                    (Some(h1), Some(f1)) => (h1, f1),
                    _ => continue,
                };
                let dv = &df * &fib;
                props.lambda0 = props.lambda0.min(min_singular(&dv));
                for j in 0..q {
                    let (a, _) = decompose(&dv.column(j).into_owned(), &h1, &f1);
                    props.eta = props.eta.max((&h1 * a).norm());
                }
                for dir in &directions {
                    let hv = &h1 * dir;
                    let hv = &hv / hv.norm();
                    for sign in [-1.0, 1.0] {
                        for j in 0..q {
                            let g = &hv + f1.column(j) * (sign * beta);
                            let w = &dfi * g;
                            let (a, b) = decompose(&w, &h, &fib);
                            let ratio = (&fib * b).norm() / (&h * a).norm();
                            props.cone_factor = props.cone_factor.max(ratio / beta);
                        }
                    }
                }
                props.samples += 1;
            }
        }
        if props.samples == 0 {
            return Err(Error::PropertiesUnachievable(format!("no verification samples within radius {radius:.3e}")));
        }
        Ok(props)
    }
}

fn failing_property(props: &TubeProperties, ledger: &ConstantsLedger, min_transversality: f64) -> Option<String> {
    let check = validate_ledger(ledger);
    if !check.ok {
        return Some(format!("ledger inequality {}", check.violated.join(", ")));
    }
    if props.transversality_deg < min_transversality {
        return Some(format!("fibre transversality {:.2}° below {min_transversality}°", props.transversality_deg));
    }
    if props.cone_factor > ledger.beta_bar / ledger.beta {
        return Some(format!("cone pull-back factor {:.4} exceeds β̄/β = {:.4}", props.cone_factor, ledger.beta_bar / ledger.beta));
    }
    None
}

/// Base-coordinate bounding box of K enlarged by `margin` (full period on circle axes).
pub fn base_box(surface: &FittedSurface, k: &[Vector], margin: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let frame = &surface.frame;
    let d = frame.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut periodic = vec![false; d];
    for x in k {
        let u = frame.base(x);
        for i in 0..d {
            lo[i] = lo[i].min(u[i]);
            hi[i] = hi[i].max(u[i]);
        }
    }
    for i in 0..d {
        if let Some(p) = frame.base_period(i) {
            lo[i] = 0.0;
            hi[i] = p;
            periodic[i] = true;
        } else {
            lo[i] -= margin;
            hi[i] += margin;
        }
    }
    (lo, hi, periodic)
}

/// Tube over the Whitney surface with fibres averaged from the F frames; the
/// neighbourhood shrinks until the measured constants satisfy the ledger.
pub fn build_tubular(surface: &FittedSurface, split: &SplittingFrame, map: &SmoothMap, opts: &TubeOptions) -> Result<TubularNeighborhood> {
    let k: Vec<Vector> = (0..split.len()).map(|i| split.point(i)).collect();
    if k.is_empty() || split.f_frames.len() != k.len() {
        return Err(Error::SplittingMissing("F frames absent".into()));
    }
    let (lo, hi, periodic) = base_box(surface, &k, opts.radius * 1.25);
    let grid = Grid::new(lo, hi, opts.spacing, periodic);
    let mesh = surface.tabulate(&grid)?;
    let bw = opts.fiber_bandwidth.unwrap_or(opts.radius);
    let vsel = vertical_selector(&mesh);
    let topology = map.topology.clone();
    let fibers: Vec<Matrix> = (0..grid.len())
        .into_par_iter()
        .map(|f| {
            let p = wrap_with(&topology, &mesh.point_raw(&grid.node_flat(f)).expect("node"));
            average_fiber(&p, &k, &split.f_frames, &topology, bw, &vsel)
        })
        .collect();
    let k_index = PointIndex::new(k.clone(), topology.clone(), opts.radius.max(1e-6));
    let mut tube = TubularNeighborhood {
        mesh,
        fibers,
        radius: opts.radius,
        k,
        k_index,
        topology,
        properties: TubeProperties::default(),
        ledger: ConstantsLedger::from_measurements(1.0, 0.0, 0.0, opts.beta, 1.0, 0.05),
    };
    let mut radius = opts.radius;
    let mut shrinks = 0;
    loop {
        let outcome = tube.measure(map, radius, opts.beta, opts.samples).and_then(|props| {
            let ledger = ConstantsLedger::from_measurements(props.lambda0, props.eta, props.delta, opts.beta, props.c_f, 0.05);
            match failing_property(&props, &ledger, opts.min_transversality_deg) {
                None => Ok((props, ledger)),
                Some(reason) => Err(Error::PropertiesUnachievable(reason)),
            }
        });
        match outcome {
            Ok((mut props, ledger)) => {
                props.shrinks = shrinks;
                tube.radius = radius;
                tube.properties = props;
                tube.ledger = ledger;
                return Ok(tube);
            }
            Err(e) => {
                radius *= 0.5;
                shrinks += 1;
                if radius < opts.min_radius {
                    let reason = match e {
                        Error::PropertiesUnachievable(r) => r,
                        other => other.to_string(),
                    };
                    return Err(Error::PropertiesUnachievable(format!("{reason} (radius shrunk below {:.0e})", opts.min_radius)));
                }
            }
        }
    }
}

/// ε(m): ε₁ = m/threshold, checked against f⁻¹ of the ε₁-neighbourhood of K in
/// Σ₀ staying in the fibre radius m, then divided by 2c_f.
pub fn epsilon_of_m(tube: &TubularNeighborhood, map: &SmoothMap, m: f64, threshold: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::NoValidEpsilon { m, reason: "m must be positive".into() });
    }
    let eps1 = m / threshold;
    let nodes = tube.sample_nodes(eps1, 2000);
    for &f in &nodes {
        let u = tube.grid().node_flat(f);
        let z = wrap_with(&tube.topology, &tube.sigma(&u).expect("node"));
        let y = map.apply_inverse(&z)?;
        // images beyond the tabulated mesh cannot be tested and are skipped
        let (u1, t1) = match tube.project(&y) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if !tube.grid().inside(&u1) {
            continue;
        }
        if t1.norm() > m {
            return Err(Error::NoValidEpsilon {
                m,
                reason: format!("f⁻¹ of the {eps1:.3e}-neighbourhood leaves T_m (fibre offset {:.3e})", t1.norm()),
            });
        }
    }
    Ok(eps1 / (2.0 * tube.ledger.c_f.max(1.0)))
}

/// Piecewise-bilinear graph over the tube mesh, offsets in fibre coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzGraph {
    pub grid: Grid,
    pub q: usize,
    pub offsets: Vec<f64>,
    pub beta: f64,
    pub m: f64,
}

impl LipschitzGraph {
    pub fn zero(grid: &Grid, q: usize, beta: f64, m: f64) -> Self {
        LipschitzGraph { grid: grid.clone(), q, offsets: vec![0.0; grid.len() * q], beta, m }
    }

    pub fn node(&self, f: usize) -> Vector {
        Vector::from_column_slice(&self.offsets[f * self.q..(f + 1) * self.q])
    }

    /// Offset at base point u; zero off the mesh.
    pub fn eval(&self, u: &Vector) -> Vector {
        self.grid.interp(&self.offsets, self.q, u).unwrap_or_else(|| Vector::zeros(self.q))
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.len()).map(|f| self.node(f).norm()).fold(0.0, f64::max)
    }

    pub fn sup_dist(&self, other: &LipschitzGraph) -> f64 {
        (0..self.grid.len()).map(|f| (self.node(f) - other.node(f)).norm()).fold(0.0, f64::max)
    }

    /// Largest finite-difference slope between adjacent nodes, measured against
    /// the ambient distance of the base-surface nodes: (slope, node).
    pub fn max_slope(&self, tube: &TubularNeighborhood) -> (f64, usize) {
        let mut worst = (0.0, 0);
        for (a, b, _) in self.grid.edges() {
            let dv = (self.node(a) - self.node(b)).norm();
            if dv == 0.0 {
                continue;
            }
            let (ua, ub) = (self.grid.node_flat(a), self.grid.node_flat(b));
            let ub = &ua + tube.mesh.frame.base_diff(&ub, &ua);
            let dh = match (tube.sigma(&ua), tube.sigma(&ub)) {
                (Some(pa), Some(pb)) => (pb - pa).norm(),
                _ => continue,
            };
            let s = dv / dh;
            if s > worst.0 {
                worst = (s, a);
            }
        }
        worst
    }
}

/// Per-m data for G_m: ledger with m and ε(m), bump values per node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformSetup {
    pub ledger: ConstantsLedger,
    pub bump: Vec<f64>,
    pub active: Vec<usize>,
}

pub fn prepare_transform(tube: &TubularNeighborhood, map: &SmoothMap, m: f64, threshold: f64) -> Result<TransformSetup> {
    let eps = epsilon_of_m(tube, map, m, threshold)?;
    let phi = bump_from_distance(&tube.k, 0.5 * eps, eps, &tube.topology)?;
    let g = tube.grid();
    let bump: Vec<f64> = (0..g.len())
        .map(|f| wrap_with(&tube.topology, &tube.sigma(&g.node_flat(f)).expect("node")))
        .map(|p| phi.eval(&p))
        .collect();
    let active = (0..g.len()).filter(|&f| bump[f] > 0.0).collect();
    let mut ledger = tube.ledger.clone();
    ledger.m = m;
    ledger.epsilon = eps;
    ledger.threshold = threshold;
    Ok(TransformSetup { ledger, bump, active })
}

/// Graph point Ψ(v, h(v)).
fn graph_point(tube: &TubularNeighborhood, h: &LipschitzGraph, v: &Vector) -> Option<Vector> {
    tube.psi(v, &h.eval(v))
}

/// Fibre offset t at node x with f(Ψ(x,t)) ∈ graph(h), i.e. Ψ(x,t) = f⁻¹(z) for z on graph(h).
pub fn node_offset(tube: &TubularNeighborhood, map: &SmoothMap, h: &LipschitzGraph, node: usize) -> Result<Vector> {
    let (d, q) = (tube.base_dim(), tube.fiber_dim());
    let x = tube.grid().node_flat(node);
    let fib = tube.fiber(&x).expect("node");
    let sig = tube.sigma(&x).expect("node");
    let mut t = Vector::zeros(q);
    let mut v = tube.mesh.frame.base(&map.apply(&wrap_with(&tube.topology, &sig))?);
    let fd = 1e-4 * tube.grid().max_spacing();
    let diverge = |reason: String| Error::NewtonDivergence { node, reason };
    for _ in 0..30 {
        let z = wrap_with(&tube.topology, &(&sig + &fib * &t));
        let fz = map.apply(&z)?;
        let g = graph_point(tube, h, &v).ok_or_else(|| diverge(format!("image base point {:?} left the mesh", v.as_slice())))?;
        let r = diff_with(&tube.topology, &fz, &g);
        let df = map.jacobian_at(&z)?;
        let mut cols: Vec<Vector> = (0..q).map(|j| (&df * fib.column(j)).into_owned()).collect();
        for i in 0..d {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[i] += fd;
            vm[i] -= fd;
            let gp = graph_point(tube, h, &vp).ok_or_else(|| diverge("mesh boundary".into()))?;
            let gm = graph_point(tube, h, &vm).ok_or_else(|| diverge("mesh boundary".into()))?;
            cols.push(-(gp - gm) / (2.0 * fd));
        }
        let step = Matrix::from_columns(&cols).lu().solve(&r).ok_or_else(|| diverge("singular Newton matrix".into()))?;
        t -= step.rows(0, q);
        v -= step.rows(q, d);
        if !t.iter().chain(v.iter()).all(|c| c.is_finite()) {
            return Err(diverge("non-finite iterate".into()));
        }
        if step.norm() <= 1e-12 * (1.0 + v.norm()) || r.norm() <= 1e-15 {
            return Ok(t);
        }
    }
    Err(diverge("30 iterations without convergence".into()))
}

/// One application of G_m: bump-truncated pull-back of graph(h) by f.
pub fn apply_g(tube: &TubularNeighborhood, map: &SmoothMap, setup: &TransformSetup, h: &LipschitzGraph) -> Result<LipschitzGraph> {
    let q = tube.fiber_dim();
    let solved: Vec<Result<(usize, Vector)>> =
        setup.active.par_iter().map(|&f| node_offset(tube, map, h, f).map(|t| (f, t))).collect();
    let mut out = LipschitzGraph::zero(tube.grid(), q, setup.ledger.beta, setup.ledger.m);
    for r in solved {
        let (f, t) = r?;
        for j in 0..q {
            out.offsets[f * q + j] = setup.bump[f] * t[j];
        }
    }
    let (slope, node) = out.max_slope(tube);
    if slope > setup.ledger.beta {
        return Err(Error::LipschitzViolation { slope, beta: setup.ledger.beta, node });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub contraction_factor: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn geometric_mean(r: &[f64]) -> f64 {
    let v: Vec<f64> = r.iter().cloned().filter(|x| *x > 0.0 && x.is_finite()).collect();
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp()
}

pub fn iterate_to_fixed_point(
    tube: &TubularNeighborhood,
    map: &SmoothMap,
    setup: &TransformSetup,
    h0: &LipschitzGraph,
    tol: f64,
    max_iters: usize,
) -> Result<(LipschitzGraph, ConvergenceTrace)> {
    let mut h = h0.clone();
    let mut trace = ConvergenceTrace::default();
    let mut stalled = 0;
    for it in 0..max_iters {
        let next = apply_g(tube, map, setup, &h)?;
        let dist = next.sup_dist(&h);
        if let Some(&prev) = trace.distances.last() {
            if prev > 0.0 {
                let r = dist / prev;
                trace.ratios.push(r);
                stalled = if r > 0.98 { stalled + 1 } else { 0 };
            }
        }
        trace.distances.push(dist);
        trace.iterations = it + 1;
        h = next;
        if dist <= tol {
            trace.converged = true;
            trace.contraction_factor = geometric_mean(&trace.ratios);
            return Ok((h, trace));
        }
        if stalled >= 10 {
            return Err(Error::NoContraction { ratio: *trace.ratios.last().unwrap_or(&1.0), iterations: it + 1 });
        }
    }
    Err(Error::NoContraction { ratio: trace.ratios.last().cloned().unwrap_or(1.0), iterations: max_iters })
}

/// Seeded admissible starting graph: a bump-shaped offset with slope β/2 and size ≤ m/2.
pub fn random_admissible(tube: &TubularNeighborhood, setup: &TransformSetup, seed: u64) -> LipschitzGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = tube.fiber_dim();
    let g = tube.grid();
    let phases: Vec<f64> = (0..q).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let freq = 1.0 / setup.ledger.epsilon.max(1e-12);
    let mut h = LipschitzGraph::zero(g, q, setup.ledger.beta, setup.ledger.m);
    for f in 0..g.len() {
        let u = g.node_flat(f);
        for j in 0..q {
            let wave = 1.0 + 0.3 * (freq * u.iter().sum::<f64>() + phases[j]).sin();
            h.offsets[f * q + j] = setup.bump[f] * wave;
        }
    }
    let (slope, _) = h.max_slope(tube);
    let sup = h.sup_norm();
    let scale = if slope > 0.0 { (0.5 * setup.ledger.beta / slope).min(0.5 * setup.ledger.m / sup.max(1e-300)) } else { 0.0 };
    for o in h.offsets.iter_mut() {
        *o *= scale;
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformOptions {
    /// Fixed m; `None` starts at tube radius/4 and halves on failure.
    pub m: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub threshold: f64,
    pub max_halvings: usize,
    pub seed: u64,
    /// Also run a contraction probe from a seeded admissible graph.
    pub probe: bool,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions { m: None, tol: 1e-11, max_iters: 200, threshold: 0.05, max_halvings: 12, seed: 7, probe: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MAttempt {
    pub m: f64,
    pub outcome: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphSolution {
    pub graph: LipschitzGraph,
    pub trace: ConvergenceTrace,
    pub probe: Option<ConvergenceTrace>,
    pub setup: TransformSetup,
    pub attempts: Vec<MAttempt>,
}

/// Fixed graph of G_m with m auto-tuned by halving.
pub fn solve_invariant_graph(tube: &TubularNeighborhood, map: &SmoothMap, opts: &TransformOptions) -> Result<GraphSolution> {
    let mut m = opts.m.unwrap_or(tube.radius / 4.0);
    let halvings = if opts.m.is_some() { 0 } else { opts.max_halvings };
    let mut attempts = Vec::new();
    let mut last_err = None;
    for _ in 0..=halvings {
        let attempt = prepare_transform(tube, map, m, opts.threshold).and_then(|setup| {
            let h0 = LipschitzGraph::zero(tube.grid(), tube.fiber_dim(), setup.ledger.beta, m);
            let (graph, trace) = iterate_to_fixed_point(tube, map, &setup, &h0, opts.tol, opts.max_iters)?;
            let probe = if opts.probe {
                let hp = random_admissible(tube, &setup, opts.seed);
                Some(iterate_to_fixed_point(tube, map, &setup, &hp, opts.tol, opts.max_iters)?.1)
            } else {
                None
            };
            Ok((setup, graph, trace, probe))
        });
        match attempt {
            Ok((setup, graph, trace, probe)) => {
                attempts.push(MAttempt { m, outcome: "converged".into() });
                return Ok(GraphSolution { graph, trace, probe, setup, attempts });
            }
            Err(e) => {
                let retry = matches!(
                    e,
                    Error::LipschitzViolation { .. } | Error::NoContraction { .. } | Error::NoValidEpsilon { .. } | Error::NewtonDivergence { .. }
                );
                attempts.push(MAttempt { m, outcome: e.to_string() });
                if !retry {
                    return Err(e);
                }
                last_err = Some(e);
                m *= 0.5;
            }
        }
    }
    Err(last_err.expect("at least one attempt"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConeReport {
    pub max_slope: f64,
    pub worst_node: usize,
    pub slope_ok: bool,
    pub max_length_ratio: f64,
    pub length_ok: bool,
    pub gamma_measured: f64,
    pub gamma_ok: bool,
    pub passes: bool,
}

/// (a) finite-difference tangents in C^h_β, (b) polyline length ≤ 2(1+β)·base
/// length, (c) fibre contraction of f⁻¹ by at most γ on sampled triples.
pub fn check_graph_cone(tube: &TubularNeighborhood, map: &SmoothMap, h: &LipschitzGraph, setup: &TransformSetup) -> Result<ConeReport> {
    let beta = setup.ledger.beta;
    let (max_slope, worst_node) = h.max_slope(tube);
    let g = tube.grid();
    let mut max_length_ratio: f64 = 0.0;
    for axis in 0..g.dim() {
        let mut start = vec![0usize; g.dim()];
        loop {
            let mut base_len = 0.0;
            let mut graph_len = 0.0;
            let cells = if g.periodic[axis] { g.counts[axis] } else { g.counts[axis] - 1 };
            for s in 0..cells {
                let mut a = start.clone();
                a[axis] = s;
                let mut b = start.clone();
                b[axis] = (s + 1) % g.counts[axis];
                let (fa, fb) = (g.flat(&a), g.flat(&b));
                let (ua, ub) = (g.node(&a), g.node(&a) + tube.mesh.frame.base_diff(&g.node(&b), &g.node(&a)));
                let (pa, pb) = (tube.sigma(&ua).expect("node"), tube.sigma(&ub).expect("node"));
                base_len += (&pb - &pa).norm();
                let (qa, qb) = (tube.psi(&ua, &h.node(fa)).expect("node"), tube.psi(&ub, &h.node(fb)).expect("node"));
                graph_len += (qb - qa).norm();
            }
            if base_len > 0.0 {
                max_length_ratio = max_length_ratio.max(graph_len / base_len);
            }
            let mut carry = true;
            for i in 0..g.dim() {
                if i == axis || !carry {
                    continue;
                }
                start[i] += 1;
                if start[i] < g.counts[i] {
                    carry = false;
                } else {
                    start[i] = 0;
                }
            }
            if carry {
                break;
            }
        }
    }
    let q = tube.fiber_dim();
    let mut gamma_measured: f64 = 0.0;
    let stride = (setup.active.len() / 200).max(1);
    for &f in setup.active.iter().step_by(stride) {
        if setup.bump[f] < 1.0 {
            continue;
        }
        let u = g.node_flat(f);
        let t1 = h.node(f);
        let mut t2 = t1.clone();
        t2[0] += 0.25 * setup.ledger.m;
        for j in 0..q {
            t2[j] = t2[j].min(setup.ledger.m);
        }
        if (&t2 - &t1).norm() == 0.0 {
            continue;
        }
        let z1 = wrap_with(&tube.topology, &tube.psi(&u, &t1).expect("node"));
        let z2 = wrap_with(&tube.topology, &tube.psi(&u, &t2).expect("node"));
        let (p1, p2) = match (tube.project(&map.apply_inverse(&z1)?), tube.project(&map.apply_inverse(&z2)?)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => continue,
        };
        gamma_measured = gamma_measured.max((&p2.1 - &p1.1).norm() / (&t2 - &t1).norm());
    }
    let slope_ok = max_slope <= beta;
    let length_ok = max_length_ratio <= 2.0 * (1.0 + beta);
    let gamma_ok = gamma_measured <= setup.ledger.gamma;
    Ok(ConeReport {
        max_slope,
        worst_node,
        slope_ok,
        max_length_ratio,
        length_ok,
        gamma_measured,
        gamma_ok,
        passes: slope_ok && length_ok && gamma_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lookup;
    use crate::whitney_surface::{fit_surface, ChartOptions};

    fn worked() -> ConstantsLedger {
        ConstantsLedger {
            lambda0: 3.0,
            eta: 0.05,
            beta: 0.05,
            delta: 0.04,
            gamma: 0.4,
            rho: 1.1,
            beta_bar: 0.03,
            m: 0.0,
            epsilon: 0.0,
            c_f: 3.0,
            threshold: 0.05,
        }
    }

    #[test]
    fn worked_ledger_passes() {
        assert!(validate_ledger(&worked()).ok);
        let mut l = worked();
        l.eta = 0.0;
        assert!(validate_ledger(&l).ok);
        assert_eq!(beta_bound(3.0, 0.0), f64::INFINITY);
        let mut l = worked();
        l.gamma = 0.4;
        l.rho = 3.0;
        let c = validate_ledger(&l);
        assert!(!c.ok);
        assert_eq!(c.violated, vec!["γρ<1".to_string()]);
    }

    fn frame_for(k: Vector, e: Matrix, f: Matrix) -> SplittingFrame {
        SplittingFrame {
            points: vec![k.as_slice().to_vec()],
            e_frames: vec![e],
            f_frames: vec![f],
            d_f: 1,
            iters: 0,
            lambda_f: 0.0,
            lambda_e: 0.0,
            gap: 0.0,
            c: 0.0,
            invariance_residual: 0.0,
            transversality: 0.0,
        }
    }

    fn linear3_tube() -> (SmoothMap, TubularNeighborhood) {
        let map = lookup("linear3").unwrap().map;
        let e = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let f = Matrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let k = Vector::zeros(3);
        let surf = fit_surface(&[k.clone()], &[e.clone()], &map.topology, &ChartOptions::default()).unwrap();
        let split = frame_for(k, e, f);
        let tube = build_tubular(&surf, &split, &map, &TubeOptions { spacing: 0.02, ..Default::default() }).unwrap();
        (map, tube)
    }

    #[test]
    fn linear3_tube_constants_are_exact() {
        let (_, tube) = linear3_tube();
        let p = &tube.properties;
        assert!((p.lambda0 - 3.0).abs() < 1e-9, "{p:?}");
        assert!(p.eta < 1e-9 && p.delta < 1e-9, "{p:?}");
        assert!((p.cone_factor - 1.0 / 3.0).abs() < 1e-6, "{p:?}");
        assert!((p.transversality_deg - 90.0).abs() < 1e-9);
        let (u, t) = tube.project(&Vector::from_column_slice(&[0.05, -0.02, 0.03])).unwrap();
        assert!((u[0] - 0.05).abs() < 1e-12 && (u[1] + 0.02).abs() < 1e-12 && (t[0] - 0.03).abs() < 1e-12);
    }

    #[test]
    fn linear3_epsilon_closed_form_and_monotone() {
        let (map, tube) = linear3_tube();
        let m = 0.01;
        let e = epsilon_of_m(&tube, &map, m, 0.05).unwrap();
        assert!((e - m * 20.0 / 6.0).abs() < 1e-12);
        assert!(epsilon_of_m(&tube, &map, m / 2.0, 0.05).unwrap() <= e);
    }

    #[test]
    fn linear3_transform_oracles() {
        let (map, tube) = linear3_tube();
        let setup = prepare_transform(&tube, &map, 0.01, 0.05).unwrap();
        let zero = LipschitzGraph::zero(tube.grid(), 1, setup.ledger.beta, 0.01);
        let g0 = apply_g(&tube, &map, &setup, &zero).unwrap();
        assert_eq!(g0.sup_norm(), 0.0);
        let mut c = zero.clone();
        for o in c.offsets.iter_mut() {
            *o = 0.003;
        }
        let x0 = tube.grid().locate(&Vector::zeros(2)).unwrap();
        let f0 = tube.grid().flat(&x0.base);
        let raw = node_offset(&tube, &map, &c, f0).unwrap();
        assert!((raw[0] - 0.001).abs() < 1e-14);
        let hr = random_admissible(&tube, &setup, 3);
        let (fixed, trace) = iterate_to_fixed_point(&tube, &map, &setup, &hr, 1e-13, 100).unwrap();
        assert!(fixed.sup_norm() <= 1e-12);
        assert!((0.30..=0.37).contains(&trace.contraction_factor), "{trace:?}");
        let rep = check_graph_cone(&tube, &map, &fixed, &setup).unwrap();
        assert!(rep.passes, "{rep:?}");
    }

    #[test]
    fn corrupted_graph_fails_slope_check() {
        let (map, tube) = linear3_tube();
        let setup = prepare_transform(&tube, &map, 0.01, 0.05).unwrap();
        let mut h = LipschitzGraph::zero(tube.grid(), 1, setup.ledger.beta, 0.01);
        let f = setup.active[setup.active.len() / 2];
        h.offsets[f] = 2.0 * setup.ledger.beta * tube.grid().spacing(0);
        let rep = check_graph_cone(&tube, &map, &h, &setup).unwrap();
        assert!(!rep.slope_ok);
    }

    #[test]
    fn curved2_single_pull_back_is_half_parabola() {
        let map = lookup("curved2").unwrap().map;
        let e = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let f = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let k = Vector::zeros(2);
        let surf = fit_surface(&[k.clone()], &[e.clone()], &map.topology, &ChartOptions::default()).unwrap();
        let tube = build_tubular(&surf, &frame_for(k, e, f), &map, &TubeOptions { spacing: 1e-3, radius: 0.1, ..Default::default() }).unwrap();
        assert!((tube.properties.lambda0 - 2.0).abs() < 0.25);
        let m = 1e-3;
        let eps = epsilon_of_m(&tube, &map, m, 0.05).unwrap();
        assert!(eps > 0.0);
        let setup = prepare_transform(&tube, &map, m, 0.05).unwrap();
        let zero = LipschitzGraph::zero(tube.grid(), 1, setup.ledger.beta, m);
        for x in [0.001, 0.002, -0.003] {
            let loc = tube.grid().locate(&Vector::from_element(1, x)).unwrap();
            let f = tube.grid().flat(&loc.base) + if loc.frac[0] > 0.5 { 1 } else { 0 };
            let xn = tube.grid().node_flat(f)[0];
            let t = node_offset(&tube, &map, &zero, f).unwrap()[0];
            assert!((t + xn * xn / 2.0).abs() < 1e-3 * xn * xn + 1e-15, "x={xn} t={t}");
        }
    }
}
