//! End-to-end construction: splitting on K, Whitney surface, tube, fixed graph.

use serde::{Deserialize, Serialize};

use crate::cones::{estimate_splitting_with, SplittingFrame, SplittingOptions};
use crate::dynamics::{wrap_with, SmoothMap, SystemEntry};
use crate::error::{Error, Result};
use crate::graph_transform::{build_tubular, solve_invariant_graph, GraphSolution, TransformOptions, TubeOptions, TubularNeighborhood};
use crate::invariant_set::{find_periodic, maximal_invariant, SampledInvariantSet};
use crate::linalg::{Matrix, Vector};
use crate::whitney_surface::{build_surface, ChartOptions, FittedSurface};

/// How the sample of K is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSource {
    /// The registry's known invariant set.
    Known,
    /// Periodic orbits up to `max_period` seeded from the box cover.
    Periodic { max_period: usize },
    /// Box centres settled onto the attractor by forward iteration.
    Attractor { settle: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KOptions {
    pub source: KSource,
    /// Box-cover resolution.
    pub resolution: f64,
    pub cover_steps: usize,
    pub seed: u64,
}

impl Default for KOptions {
    fn default() -> Self {
        KOptions { source: KSource::Known, resolution: 1.0 / 64.0, cover_steps: 6, seed: 7 }
    }
}

/// Sample of the invariant set of a registry system.
pub fn sample_k(entry: &SystemEntry, opts: &KOptions) -> Result<SampledInvariantSet> {
    let map = &entry.map;
    let (lo, hi): (Vec<f64>, Vec<f64>) = entry.working_box.iter().cloned().unzip();
    match &opts.source {
        KSource::Known => {
            let pts = entry.known_set.clone().ok_or_else(|| Error::Config(format!("{} has no known invariant set", entry.name)))?;
            SampledInvariantSet::from_points(map, pts)
        }
        KSource::Periodic { max_period } => {
            let cover = maximal_invariant(map, &lo, &hi, opts.resolution, opts.cover_steps)?;
            let seeds = cover.vectors();
            let mut pts: Vec<Vector> = Vec::new();
            for p in 1..=*max_period {
                for o in find_periodic(map, p, &seeds)? {
                    for q in o.points {
                        let q = Vector::from_vec(q);
                        if !pts.iter().any(|r| map.dist(r, &q) < 1e-9) {
                            pts.push(q);
                        }
                    }
                }
            }
            let mut k = SampledInvariantSet::from_points(map, pts)?;
            k.box_cover = cover.box_cover;
            Ok(k)
        }
        KSource::Attractor { settle } => maximal_invariant(map, &lo, &hi, opts.resolution, opts.cover_steps)?.settle_on_attractor(map, *settle, opts.seed),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifoldOptions {
    pub splitting_iters: usize,
    pub gap_threshold: f64,
    pub chart: ChartOptions,
    pub tube: TubeOptions,
    pub transform: TransformOptions,
}

impl Default for ManifoldOptions {
    fn default() -> Self {
        ManifoldOptions {
            splitting_iters: 30,
            gap_threshold: 1.05,
            chart: ChartOptions::default(),
            tube: TubeOptions::default(),
            transform: TransformOptions::default(),
        }
    }
}

pub struct CenterManifold {
    pub split: SplittingFrame,
    pub surface: FittedSurface,
    pub tube: TubularNeighborhood,
    pub solution: GraphSolution,
}

impl CenterManifold {
    /// Point of the invariant graph above base point `u` (unwrapped).
    pub fn point_raw(&self, u: &Vector) -> Option<Vector> {
        self.tube.psi(u, &self.solution.graph.eval(u))
    }

    pub fn point(&self, u: &Vector) -> Option<Vector> {
        self.point_raw(u).map(|p| wrap_with(&self.tube.topology, &p))
    }

    /// Tangent d-plane of the invariant graph at `u` by central differences with step `s`.
    pub fn tangent(&self, u: &Vector, s: f64) -> Option<Matrix> {
        let d = self.tube.base_dim();
        let mut cols = Vec::with_capacity(d);
        for i in 0..d {
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += s;
            um[i] -= s;
            cols.push((self.point_raw(&up)? - self.point_raw(&um)?) / (2.0 * s));
        }
        Some(Matrix::from_columns(&cols))
    }

    pub fn epsilon(&self) -> f64 {
        self.solution.setup.ledger.epsilon
    }
}

pub fn splitting(map: &SmoothMap, k: &[Vector], d_f: usize, opts: &ManifoldOptions) -> Result<SplittingFrame> {
    estimate_splitting_with(
        map,
        k,
        d_f,
        &SplittingOptions { iters: opts.splitting_iters, gap_threshold: opts.gap_threshold, ..Default::default() },
    )
}

/// Locally invariant manifold through K tangent to E, with F (dimension d_f) the strong bundle.
pub fn center_manifold(map: &SmoothMap, k: &[Vector], d_f: usize, opts: &ManifoldOptions) -> Result<CenterManifold> {
    let split = splitting(map, k, d_f, opts)?;
    center_manifold_from_split(map, split, opts)
}

pub fn center_manifold_from_split(map: &SmoothMap, split: SplittingFrame, opts: &ManifoldOptions) -> Result<CenterManifold> {
    let surface = build_surface(&split, &map.topology, &opts.chart)?;
    let tube = build_tubular(&surface, &split, map, &opts.tube)?;
    let solution = solve_invariant_graph(&tube, map, &opts.transform)?;
    Ok(CenterManifold { split, surface, tube, solution })
}
