//! Command-line orchestration: config loading, pipelines, reports and exit codes.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cones::{check_contraction, orbit_segments, ConeField};
use crate::config::Config;
use crate::dynamics::{Coord, SmoothMap, SystemEntry};
use crate::error::{Error, Result};
use crate::graph_transform::{build_tubular, check_graph_cone, prepare_transform, LipschitzGraph};
use crate::invariant_set::SampledInvariantSet;
use crate::linalg::{line_angle, Vector};
use crate::mesh::Grid;
use crate::pipeline::{center_manifold_from_split, sample_k, splitting, CenterManifold};
use crate::projective_lift::{angle_error, foliate};
use crate::report::{content_hash, svg_contour, svg_plot, write_csv, write_json, write_svg, Series};
use crate::smoothing::{build_cover, build_separator, bump_from_distance};
use crate::strong_manifolds::detect_connection;
use crate::verify::{c1_evidence, check_containment, check_local_invariance, check_tangency, robustness_ladder, saddle_intersection};
use crate::whitney_surface::build_surface;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    /// Splitting and cone-contraction certificates on K.
    Analyze,
    /// Strong-connection detection under f and f⁻¹.
    Connections,
    /// Whitney initial surface through K.
    Surface,
    /// Full pipeline: analyze, connections, surface, graph transform, verification.
    Invariant,
    /// Center curve as the intersection of the center-stable and center-unstable manifolds.
    Saddle,
    /// Stable foliation of a surface map from its projective lift.
    Foliate,
    /// Smooth separator and distance bump demonstration.
    SmoothFn,
    /// Re-run the checks on a saved fixed graph.
    Verify,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Analyze => "analyze",
            Subcommand::Connections => "connections",
            Subcommand::Surface => "surface",
            Subcommand::Invariant => "invariant",
            Subcommand::Saddle => "saddle",
            Subcommand::Foliate => "foliate",
            Subcommand::SmoothFn => "smooth-fn",
            Subcommand::Verify => "verify",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "center-manifold", version, about = "Locally invariant center manifolds for partially hyperbolic sets")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Subcommand,
    /// Run configuration (key = value with [sections]).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for reports, meshes and plots.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    /// `section.key=value`, repeatable.
    #[arg(long = "tol-override", value_name = "KEY=VALUE")]
    pub tol_override: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
}

/// Result of a subcommand that ran to completion.
struct Outcome {
    pass: bool,
    report: Value,
    summary: Value,
    diagnostics: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, report: Value, summary: Value) -> Self {
        Outcome { pass, report, summary, diagnostics: Vec::new() }
    }
}

struct Ctx<'a> {
    cfg: &'a Config,
    out: &'a Path,
    files: Vec<String>,
}

impl Ctx<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.out.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, v)
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let p = self.path(name);
        write_csv(&p, header, rows)
    }

    fn svg(&mut self, name: &str, svg: &str) -> Result<()> {
        let p = self.path(name);
        write_svg(&p, svg)
    }
}

fn entry_for(cfg: &Config) -> Result<SystemEntry> {
    let mut entry = cfg.entry()?;
    if let (Some(lo), Some(hi)) = (&cfg.k.lo, &cfg.k.hi) {
        if lo.len() != entry.map.dim || hi.len() != entry.map.dim {
            return Err(Error::Config(format!("k.lo/k.hi must have {} entries", entry.map.dim)));
        }
        entry.working_box = lo.iter().cloned().zip(hi.iter().cloned()).collect();
    }
    Ok(entry)
}

fn k_summary(k: &SampledInvariantSet) -> Value {
    json!({
        "points": k.len(),
        "invariance_residual": k.invariance_residual,
        "boxes": k.box_cover.as_ref().map(|c| c.cells.len()),
    })
}

fn rows_of(points: &[Vector]) -> Vec<Vec<f64>> {
    points.iter().map(|p| p.as_slice().to_vec()).collect()
}

fn axis_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn analyze(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let entry = entry_for(cfg)?;
    let map = &entry.map;
    let k = sample_k(&entry, &cfg.k_options())?;
    let kv = k.vectors();
    let split = splitting(map, &kv, cfg.d_f(&entry), &cfg.manifold_options())?;
    let cone = ConeField::from_splitting(&split, cfg.analyze.cone_opening, map);
    let segments = orbit_segments(map, &kv, 2 * cfg.analyze.n0 + 1)?;
    let cert = check_contraction(map, &cone, &segments, cfg.analyze.r, cfg.analyze.n0)?;
    let header: Vec<String> = axis_names("x", map.dim);
    ctx.csv("k.csv", &header.iter().map(|s| s.as_str()).collect::<Vec<_>>(), &rows_of(&kv))?;
    let report = json!({
        "system": entry.name,
        "k": k_summary(&k),
        "splitting": {
            "d_f": split.d_f, "lambda_f": split.lambda_f, "lambda_e": split.lambda_e, "gap": split.gap,
            "invariance_residual": split.invariance_residual, "transversality": split.transversality, "iters": split.iters,
        },
        "contraction": {
            "lambda": cert.lambda, "raw_lambda": cert.raw_lambda, "n0": cert.n0, "r": cert.r, "opening": cert.opening,
            "pass": cert.pass, "segments": cert.segments.len(),
        },
    });
    ctx.json("analyze.json", &report)?;
    let summary = json!({"lambda_f": split.lambda_f, "lambda_e": split.lambda_e, "contraction_lambda": cert.lambda});
    Ok(Outcome::new(cert.pass, report, summary))
}

fn connection_direction(map: &SmoothMap, k: &SampledInvariantSet, d_f: usize, cfg: &Config) -> Result<Value> {
    let split = splitting(map, &k.vectors(), d_f, &cfg.manifold_options())?;
    let rep = detect_connection(map, k, &split, cfg.connections.radius, cfg.connections.delta)?;
    Ok(json!({
        "connected": rep.connected(),
        "distinct_pairs": rep.distinct_pairs(),
        "pairs": rep.pairs,
        "agreement": rep.agreement,
        "bases": rep.bases.len(),
        "radius": rep.radius,
        "delta": rep.delta,
        "lambda_f": split.lambda_f,
    }))
}

fn connections(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let entry = entry_for(cfg)?;
    let k = sample_k(&entry, &cfg.k_options())?;
    let forward = connection_direction(&entry.map, &k, cfg.d_f(&entry), cfg)?;
    let mut diagnostics = Vec::new();
    let backward = match entry.map.inverse_map().and_then(|inv| connection_direction(&inv, &k, 1, cfg)) {
        Ok(v) => v,
        Err(e) => {
            diagnostics.push(format!("connections under f⁻¹ skipped: {e}"));
            json!({"skipped": e.to_string(), "kind": e.kind()})
        }
    };
    let found = |v: &Value| v.get("connected").and_then(Value::as_bool).unwrap_or(false);
    let pass = !found(&forward) && !found(&backward);
    let report = json!({"system": entry.name, "k": k_summary(&k), "forward": forward, "backward": backward});
    ctx.json("connections.json", &report)?;
    let pairs = |v: &Value| v.get("distinct_pairs").and_then(Value::as_u64).unwrap_or(0);
    let summary = json!({"forward_pairs": pairs(&report["forward"]), "backward_pairs": pairs(&report["backward"])});
    let mut o = Outcome::new(pass, report, summary);
    if !pass {
        o.diagnostics.push("strong connection detected: K does not satisfy the no-strong-connection condition".into());
    }
    o.diagnostics.extend(diagnostics);
    Ok(o)
}

fn surface(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let entry = entry_for(cfg)?;
    let map = &entry.map;
    let k = sample_k(&entry, &cfg.k_options())?;
    let kv = k.vectors();
    let split = splitting(map, &kv, cfg.d_f(&entry), &cfg.manifold_options())?;
    let surf = build_surface(&split, &map.topology, &cfg.chart)?;
    let sample_dist = surf.max_sample_distance(&kv)?;
    let step = 1e-3 * cfg.chart.target_radius;
    let angle = surf.max_tangent_angle(&kv, &split.e_frames, step)?;
    let (lo, hi, periodic) = crate::graph_transform::base_box(&surf, &kv, cfg.tube.radius);
    let grid = Grid::new(lo, hi, cfg.tube.spacing.max(1e-3 * cfg.tube.radius), periodic);
    let mut rows = Vec::new();
    for u in grid.nodes() {
        if let Ok(p) = surf.point(&u) {
            let mut r = u.as_slice().to_vec();
            r.extend(p.iter());
            rows.push(r);
        }
    }
    let mut header = axis_names("u", grid.dim());
    header.extend(axis_names("x", map.dim));
    ctx.csv("surface.csv", &header.iter().map(|s| s.as_str()).collect::<Vec<_>>(), &rows)?;
    let quotient = surf.graphs.iter().map(|g| g.quotient).fold(0.0, f64::max);
    let report = json!({
        "system": entry.name,
        "k": k_summary(&k),
        "charts": surf.charts.len(),
        "radii": surf.charts.iter().map(|c| c.radius).collect::<Vec<_>>(),
        "shrinks": surf.charts.iter().map(|c| c.shrinks).sum::<u32>(),
        "max_whitney_quotient": quotient,
        "whitney_tolerance": cfg.chart.tolerance,
        "base_axes": surf.frame.base_axes,
        "vertical_axes": surf.frame.vert_axes,
        "max_sample_distance": sample_dist,
        "max_tangent_angle": angle,
        "tangency_tolerance": cfg.verify.tangency_tolerance,
    });
    ctx.json("surface.json", &report)?;
    let pass = sample_dist <= 1e-8 && angle <= cfg.verify.tangency_tolerance;
    Ok(Outcome::new(pass, report, json!({"charts": surf.charts.len(), "max_whitney_quotient": quotient})))
}

/// Fixed graph saved by `invariant` for later verification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedGraph {
    pub system: String,
    pub config_hash: String,
    pub m: f64,
    pub threshold: f64,
    pub fixed_point_residual: f64,
    pub graph: LipschitzGraph,
}

fn second_difference_at_k(cm: &CenterManifold) -> Option<f64> {
    let g = &cm.solution.graph;
    if g.grid.dim() != 1 || g.q != 1 {
        return None;
    }
    let u = cm.tube.mesh.frame.base(&cm.tube.k[0]);
    let loc = g.grid.locate(&u)?;
    let mut f = loc.base[0];
    if loc.frac[0] > 0.5 {
        f += 1;
    }
    if f == 0 || f + 1 >= g.grid.counts[0] {
        return None;
    }
    let dx = g.grid.spacing(0);
    Some((g.offsets[f + 1] - 2.0 * g.offsets[f] + g.offsets[f - 1]) / (dx * dx))
}

fn verification(cfg: &Config, map: &SmoothMap, entry: &SystemEntry, cm: &CenterManifold, residual: f64) -> Result<(bool, Value)> {
    let band = cfg.verify.band_fraction * cm.epsilon();
    let inv = check_local_invariance(map, &cm.tube, &cm.solution.graph, band, residual)?;
    let tan = check_tangency(cm, cfg.verify.tangency_tolerance)?;
    let cone = check_graph_cone(&cm.tube, map, &cm.solution.graph, &cm.solution.setup)?;
    let c1 = c1_evidence(cm);
    let mut pass = inv.pass && tan.pass && cone.passes && c1.pass;
    let mut v = json!({"local_invariance": inv, "tangency": tan, "graph_cone": cone, "c1_evidence": c1});
    if cfg.verify.containment {
        let (lo, hi): (Vec<f64>, Vec<f64>) = entry.working_box.iter().cloned().unzip();
        let c = check_containment(map, cm, &lo, &hi, cfg.k.resolution, cfg.k.cover_steps)?;
        pass &= c.pass;
        v["containment"] = serde_json::to_value(&c).expect("serializable");
    }
    if !cfg.verify.robustness_sizes.is_empty() {
        let r = robustness_ladder(map, cm, &cfg.verify.robustness_sizes, cfg.verify.trials, cfg.seed)?;
        pass &= r.pass;
        v["robustness"] = serde_json::to_value(&r).expect("serializable");
    }
    Ok((pass, v))
}

fn graph_rows(cm: &CenterManifold) -> (Vec<String>, Vec<Vec<f64>>) {
    let g = &cm.solution.graph;
    let mut header = axis_names("u", g.grid.dim());
    header.extend(axis_names("t", g.q));
    header.extend(axis_names("x", cm.tube.topology.len()));
    let rows = (0..g.grid.len())
        .map(|f| {
            let u = g.grid.node_flat(f);
            let t = g.node(f);
            let p = cm.point(&u).expect("node");
            u.iter().chain(t.iter()).chain(p.iter()).cloned().collect()
        })
        .collect();
    (header, rows)
}

fn invariant(ctx: &mut Ctx, config_hash: &str) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let entry = entry_for(cfg)?;
    let map = &entry.map;
    let mo = cfg.manifold_options();
    let k = sample_k(&entry, &cfg.k_options())?;
    let kv = k.vectors();
    let split = splitting(map, &kv, cfg.d_f(&entry), &mo)?;
    let cone = ConeField::from_splitting(&split, cfg.analyze.cone_opening, map);
    let segments = orbit_segments(map, &kv, 2 * cfg.analyze.n0 + 1)?;
    let cert = check_contraction(map, &cone, &segments, cfg.analyze.r, cfg.analyze.n0)?;
    let conn = detect_connection(map, &k, &split, cfg.connections.radius, cfg.connections.delta)?;
    let mut report = json!({
        "system": entry.name,
        "k": k_summary(&k),
        "splitting": {"lambda_f": split.lambda_f, "lambda_e": split.lambda_e, "gap": split.gap, "transversality": split.transversality},
        "contraction": {"lambda": cert.lambda, "pass": cert.pass},
        "connections": {"connected": conn.connected(), "distinct_pairs": conn.distinct_pairs(), "agreement": conn.agreement},
        "forced": cfg.connections.force,
    });
    let mut diagnostics = Vec::new();
    if conn.connected() {
        let p = &conn.pairs[0];
        let msg = format!(
            "strong connection between K samples {} and {} (distance {:.3e}): the no-strong-connection condition fails, so no locally invariant submanifold tangent to E^c contains K; graph transform not run",
            p.x, p.y, p.distance
        );
        diagnostics.push(msg.clone());
        report["stopped"] = json!({"stage": "connections", "message": msg});
        if !cfg.connections.force {
            report["graph_transform_run"] = json!(false);
            ctx.json("invariant.json", &report)?;
            let mut o = Outcome::new(false, report, json!({"connections": conn.distinct_pairs(), "graph_transform_run": false}));
            o.diagnostics = diagnostics;
            return Ok(o);
        }
    }
    report["graph_transform_run"] = json!(true);
    let cm = center_manifold_from_split(map, split, &mo)?;
    let residual = cm.solution.trace.distances.last().cloned().unwrap_or(0.0);
    let (pass, checks) = verification(cfg, map, &entry, &cm, residual)?;
    let h2 = second_difference_at_k(&cm);
    report["tube"] = serde_json::to_value(&cm.tube.properties).expect("serializable");
    report["ledger"] = serde_json::to_value(&cm.solution.setup.ledger).expect("serializable");
    report["attempts"] = serde_json::to_value(&cm.solution.attempts).expect("serializable");
    report["trace"] = serde_json::to_value(&cm.solution.trace).expect("serializable");
    report["probe"] = serde_json::to_value(&cm.solution.probe).expect("serializable");
    report["sup_offset"] = json!(cm.solution.graph.sup_norm());
    report["second_difference_at_k"] = json!(h2);
    report["verification"] = checks;
    ctx.json("invariant.json", &report)?;
    ctx.json("trace.json", &cm.solution.trace)?;
    let mut series = vec![Series {
        label: "main run".into(),
        points: cm.solution.trace.distances.iter().enumerate().map(|(i, d)| (i as f64 + 1.0, *d)).collect(),
        line: true,
    }];
    if let Some(p) = &cm.solution.probe {
        series.push(Series { label: "probe".into(), points: p.distances.iter().enumerate().map(|(i, d)| (i as f64 + 1.0, *d)).collect(), line: true });
    }
    ctx.svg("trace.svg", &svg_plot("graph transform convergence", "iteration", "sup distance", &series, true))?;
    let (header, rows) = graph_rows(&cm);
    ctx.csv("graph.csv", &header.iter().map(|s| s.as_str()).collect::<Vec<_>>(), &rows)?;
    let saved = SavedGraph {
        system: entry.name.clone(),
        config_hash: config_hash.to_string(),
        m: cm.solution.setup.ledger.m,
        threshold: cm.solution.setup.ledger.threshold,
        fixed_point_residual: residual,
        graph: cm.solution.graph.clone(),
    };
    ctx.json("graph.json", &saved)?;
    let summary = json!({
        "second_difference_at_k": h2,
        "sup_offset": cm.solution.graph.sup_norm(),
        "iterations": cm.solution.trace.iterations,
        "contraction_factor": cm.solution.probe.as_ref().map(|p| p.contraction_factor),
        "epsilon": cm.epsilon(),
        "m": cm.solution.setup.ledger.m,
    });
    let mut o = Outcome::new(pass, report, summary);
    o.diagnostics = diagnostics;
    Ok(o)
}

fn verify_saved(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let path = cfg.verify.graph.as_ref().map(PathBuf::from).unwrap_or_else(|| ctx.out.join("graph.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let saved: SavedGraph = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let entry = entry_for(cfg)?;
    if saved.system != entry.name {
        return Err(Error::Config(format!("saved graph is for '{}', config names '{}'", saved.system, entry.name)));
    }
    let map = &entry.map;
    let mo = cfg.manifold_options();
    let k = sample_k(&entry, &cfg.k_options())?;
    let split = splitting(map, &k.vectors(), cfg.d_f(&entry), &mo)?;
    let surf = build_surface(&split, &map.topology, &mo.chart)?;
    let tube = build_tubular(&surf, &split, map, &mo.tube)?;
    if tube.grid() != &saved.graph.grid {
        return Err(Error::Config("saved graph mesh does not match the tube rebuilt from this config".into()));
    }
    let setup = prepare_transform(&tube, map, saved.m, saved.threshold)?;
    let solution = crate::graph_transform::GraphSolution { graph: saved.graph.clone(), trace: Default::default(), probe: None, setup, attempts: Vec::new() };
    let cm = CenterManifold { split, surface: surf, tube, solution };
    let (pass, checks) = verification(cfg, map, &entry, &cm, saved.fixed_point_residual)?;
    let report = json!({"system": entry.name, "graph": path.display().to_string(), "graph_config_hash": saved.config_hash, "checks": checks});
    ctx.json("verify.json", &report)?;
    Ok(Outcome::new(pass, report, json!({"pass": pass})))
}

fn saddle(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let entry = entry_for(cfg)?;
    let k = sample_k(&entry, &cfg.k_options())?;
    let s = saddle_intersection(&entry.map, &k, &cfg.saddle_options())?;
    let mut rows = Vec::new();
    for (ci, c) in s.curves.iter().enumerate() {
        for p in c {
            let mut r = vec![ci as f64];
            r.extend(p.iter());
            rows.push(r);
        }
    }
    let mut header = vec!["curve".to_string()];
    header.extend(axis_names("x", entry.map.dim));
    ctx.csv("saddle.csv", &header.iter().map(|s| s.as_str()).collect::<Vec<_>>(), &rows)?;
    let series: Vec<Series> = s
        .curves
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            (0..c[0].len()).filter(|&a| a != 1).map(move |a| Series {
                label: format!("curve {i}: x{a} against x1"),
                points: c.iter().map(|p| (p[1], p[a])).collect(),
                line: true,
            })
        })
        .collect();
    ctx.svg("saddle.svg", &svg_plot("center curve S^cs ∩ S^cu", "x1", "coordinate", &series, false))?;
    let pass = s.tangent_angle <= cfg.verify.tangency_tolerance && s.invariance_residual <= cfg.saddle.invariance_tolerance;
    let summary = json!({"tangent_angle": s.tangent_angle, "invariance_residual": s.invariance_residual, "min_surface_angle_deg": s.min_surface_angle_deg});
    let report = json!({
        "system": entry.name,
        "intersection": s,
        "tolerances": {"tangency": cfg.verify.tangency_tolerance, "invariance": cfg.saddle.invariance_tolerance},
    });
    ctx.json("saddle.json", &report)?;
    Ok(Outcome::new(pass, report, summary))
}

/// Angle of the contracting eigenvector at a fixed point with real eigenvalues.
fn stable_eigen_angle(map: &SmoothMap, p: &Vector) -> Result<Option<f64>> {
    if map.dist(&map.apply(p)?, p) > 1e-10 {
        return Ok(None);
    }
    let j = map.jacobian_at(p)?;
    let (tr, det) = (j[(0, 0)] + j[(1, 1)], j.determinant());
    let disc = tr * tr - 4.0 * det;
    if disc <= 0.0 {
        return Ok(None);
    }
    let lam = [0.5 * (tr - disc.sqrt()), 0.5 * (tr + disc.sqrt())].into_iter().fold(f64::INFINITY, |a: f64, b: f64| if b.abs() < a.abs() { b } else { a });
    let (a, b) = if j[(0, 1)] != 0.0 {
        (j[(0, 1)], lam - j[(0, 0)])
    } else if j[(1, 0)] != 0.0 {
        (lam - j[(1, 1)], j[(1, 0)])
    } else if (lam - j[(0, 0)]).abs() < (lam - j[(1, 1)]).abs() {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(Some(line_angle(a, b)))
}

fn foliate_cmd(ctx: &mut Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let entry = entry_for(cfg)?;
    let k = sample_k(&entry, &cfg.k_options())?;
    let kv = k.vectors();
    let fo = cfg.foliation_options();
    let chart = foliate(&entry.map, &kv, &fo)?;
    let (half, step) = chart.leaf_scale(&fo);
    let seeds = chart.seed_points(cfg.foliate.seeds, 0.5 * half);
    let invariance = chart.leaf_invariance(&seeds, half, step)?;
    let mut tangent_error: f64 = 0.0;
    let mut leaf_rows = Vec::new();
    let mut series = Vec::new();
    for (i, s) in seeds.iter().enumerate() {
        let leaf = chart.leaf(s, half, step)?;
        if i % (cfg.foliate.seeds + 1) == 0 {
            let kidx = i / (cfg.foliate.seeds + 1);
            let mid = leaf.len() / 2;
            let d = &leaf[mid + 1] - &leaf[mid - 1];
            let reference = stable_eigen_angle(&entry.map, &kv[kidx])?.unwrap_or(chart.lifted_set.points[kidx][2]);
            tangent_error = tangent_error.max(angle_error(line_angle(d[0], d[1]), reference));
        }
        series.push(Series { label: if i == 0 { "leaves".into() } else { String::new() }, points: leaf.iter().map(|p| (p[0], p[1])).collect(), line: true });
        leaf_rows.extend(leaf.iter().map(|p| vec![i as f64, p[0], p[1]]));
    }
    ctx.csv("leaves.csv", &["leaf", "x", "y"], &leaf_rows)?;
    let n = cfg.foliate.field_samples.max(2);
    let r = chart.invariant_radius();
    let mut field_rows = Vec::new();
    for p in &kv {
        for i in 0..n {
            for j in 0..n {
                let x = p + Vector::from_column_slice(&[-r + 2.0 * r * i as f64 / (n - 1) as f64, -r + 2.0 * r * j as f64 / (n - 1) as f64]);
                let a = chart.angle_at(&x)?;
                field_rows.push(vec![x[0], x[1], a]);
            }
        }
    }
    ctx.csv("linefield.csv", &["x", "y", "angle"], &field_rows)?;
    ctx.svg("foliation.svg", &svg_plot("stable foliation near K", "x", "y", &series, false))?;
    let pass = invariance <= cfg.foliate.invariance_tolerance && tangent_error <= cfg.verify.tangency_tolerance && chart.fiber_rate > chart.base_rate;
    let report = json!({
        "system": entry.name,
        "bunching": {"pass": chart.bunching.pass, "lambda": chart.bunching.lambda, "n0": chart.bunching.n0},
        "lifted_rates": {"fiber": chart.fiber_rate, "base": chart.base_rate},
        "tube": chart.manifold.tube.properties,
        "ledger": chart.manifold.solution.setup.ledger,
        "attempts": chart.manifold.solution.attempts,
        "invariant_radius": r,
        "leaf_half_length": half,
        "leaf_step": step,
        "leaf_invariance": invariance,
        "leaf_tangent_error": tangent_error,
        "tolerances": {"invariance": cfg.foliate.invariance_tolerance, "tangency": cfg.verify.tangency_tolerance},
    });
    ctx.json("foliate.json", &report)?;
    Ok(Outcome::new(pass, report, json!({"leaf_invariance": invariance, "leaf_tangent_error": tangent_error})))
}

fn smooth_fn(ctx: &mut Ctx) -> Result<Outcome> {
    let s = &ctx.cfg.smooth;
    let n = s.lo.len();
    if n == 0 || s.hi.len() != n || s.k.iter().chain(&s.l).any(|p| p.len() != n) {
        return Err(Error::Config("smooth: k, l, lo and hi must share one dimension".into()));
    }
    let k: Vec<Vector> = s.k.iter().map(|p| Vector::from_column_slice(p)).collect();
    let l: Vec<Vector> = s.l.iter().map(|p| Vector::from_column_slice(p)).collect();
    let sep = build_separator(&k, &l, &s.lo, &s.hi)?;
    let cover = build_cover(&k, &s.lo, &s.hi, s.max_level)?;
    let dist = k.iter().flat_map(|a| l.iter().map(move |b| (a - b).norm())).fold(f64::INFINITY, f64::min);
    let level_k = k.iter().map(|p| sep.eval(p).abs()).fold(0.0, f64::max);
    let level_l = l.iter().map(|p| (sep.eval(p) - 1.0).abs()).fold(0.0, f64::max);
    let bump = bump_from_distance(&k, s.bump_inner, s.bump_outer, &vec![Coord::Line; n])?;
    // full grid in one and two dimensions, the first two axes through the box centre otherwise
    let per_axis = if n == 1 { s.samples.max(2) } else { s.samples.clamp(2, 201) };
    let axes: Vec<Vec<f64>> = (0..n.min(2)).map(|c| (0..per_axis).map(|i| s.lo[c] + (s.hi[c] - s.lo[c]) * i as f64 / (per_axis - 1) as f64).collect()).collect();
    let mid: Vec<f64> = (0..n).map(|c| 0.5 * (s.lo[c] + s.hi[c])).collect();
    let ny = if n == 1 { 1 } else { per_axis };
    let mut rows = Vec::new();
    let mut grid_values = vec![vec![0.0; per_axis]; ny];
    let mut bump_sup: f64 = 0.0;
    let mut sep_grad_sup: f64 = 0.0;
    for (j, row) in grid_values.iter_mut().enumerate() {
        for (i, cell) in row.iter_mut().enumerate() {
            let mut x = Vector::from_column_slice(&mid);
            x[0] = axes[0][i];
            if n > 1 {
                x[1] = axes[1][j];
            }
            let (v, b) = (sep.eval(&x), bump.eval(&x));
            let g = sep.grad(&x).norm();
            sep_grad_sup = sep_grad_sup.max(g);
            bump_sup = bump_sup.max(bump.grad(&x).norm());
            *cell = v;
            let mut r: Vec<f64> = x.iter().cloned().collect();
            r.extend([v, g, b]);
            rows.push(r);
        }
    }
    let mut header = axis_names("x", n);
    header.extend(["separator".into(), "separator_grad".into(), "bump".into()]);
    ctx.csv("smooth.csv", &header.iter().map(|s| s.as_str()).collect::<Vec<_>>(), &rows)?;
    let svg = if n == 1 {
        let sep_series = Series { label: "separator".into(), points: axes[0].iter().cloned().zip(grid_values[0].iter().cloned()).collect(), line: true };
        let bump_series = Series { label: "bump".into(), points: rows.iter().map(|r| (r[0], r[3])).collect(), line: true };
        svg_plot("separator and distance bump", "x0", "value", &[sep_series, bump_series], false)
    } else {
        svg_contour("separator level bands", &axes[0], &axes[1], &grid_values, 10)
    };
    ctx.svg("smooth.svg", &svg)?;
    let cubes: Vec<Value> = cover.cubes.iter().map(|c| json!({"level": c.level, "center": cover.center(c).as_slice()})).collect();
    ctx.json("cover.json", &json!({"domain_dim": n, "max_level": cover.max_level, "base_side": cover.base_side, "collar": cover.collar.len(), "cubes": cubes}))?;
    let grad_times_d = sep.measured_grad_sup.max(sep_grad_sup) * dist;
    let bump_bound = 4.0 / (s.bump_outer - s.bump_inner);
    let pass = grad_times_d <= sep.c_impl && level_k <= 1e-12 && level_l <= 1e-12 && bump_sup <= bump_bound;
    let report = json!({
        "distance": dist,
        "separator": {"measured_grad_sup": sep.measured_grad_sup.max(sep_grad_sup), "grad_times_distance": grad_times_d, "c_impl": sep.c_impl, "derivative_bound": sep.derivative_bound, "level_error_k": level_k, "level_error_l": level_l},
        "bump": {"inner": s.bump_inner, "outer": s.bump_outer, "derivative_bound": bump.derivative_bound, "sampled_grad_sup": bump_sup, "required_bound": bump_bound},
        "cover": {"cubes": cover.cubes.len(), "levels": cover.levels(), "collar": cover.collar.len()},
    });
    ctx.json("smoothing.json", &report)?;
    Ok(Outcome::new(pass, report, json!({"grad_times_distance": grad_times_d, "c_impl": sep.c_impl, "cubes": cover.cubes.len()})))
}

fn exit_code(r: &Result<Outcome>) -> i32 {
    match r {
        Ok(o) if o.pass => 0,
        Ok(_) => 1,
        Err(Error::ConnectionFound(_)) => 1,
        Err(_) => 2,
    }
}

fn init_workers(workers: Option<usize>) {
    let n = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    // no-op when the global pool already exists
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
}

/// Run a subcommand; returns the process exit status (0 pass, 1 check failure, 2 error).
pub fn run(command: Subcommand, config: &Path, out: &Path) -> i32 {
    run_with(command, config, out, &RunOptions::default())
}

pub fn run_with(command: Subcommand, config: &Path, out: &Path, opts: &RunOptions) -> i32 {
    if let Err(e) = std::fs::create_dir_all(out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return 2;
    }
    let loaded = Config::load(config).and_then(|(cfg, text)| {
        let mut cfg = cfg.with_overrides(&opts.overrides)?;
        if let Some(s) = opts.seed {
            cfg.seed = s;
        }
        Ok((cfg, text))
    });
    let (cfg, text) = match loaded {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error [config]: {e}");
            let manifest = json!({
                "command": command.name(),
                "config_path": config.display().to_string(),
                "status": "error",
                "exit_code": 2,
                "error": {"kind": e.kind(), "message": e.to_string()},
            });
            let _ = write_json(&out.join("manifest.json"), &manifest);
            return 2;
        }
    };
    let config_hash = content_hash(text.as_bytes());
    let effective = cfg.to_text();
    let mut ctx = Ctx { cfg: &cfg, out, files: Vec::new() };
    let result = match command {
        Subcommand::Analyze => analyze(&mut ctx),
        Subcommand::Connections => connections(&mut ctx),
        Subcommand::Surface => surface(&mut ctx),
        Subcommand::Invariant => invariant(&mut ctx, &config_hash),
        Subcommand::Saddle => saddle(&mut ctx),
        Subcommand::Foliate => foliate_cmd(&mut ctx),
        Subcommand::SmoothFn => smooth_fn(&mut ctx),
        Subcommand::Verify => verify_saved(&mut ctx),
    };
    let code = exit_code(&result);
    let mut files = ctx.files.clone();
    files.push("manifest.json".into());
    files.sort();
    let mut manifest = json!({
        "command": command.name(),
        "system": cfg.system.name,
        "seed": cfg.seed,
        "config_path": config.display().to_string(),
        "config_hash": config_hash,
        "effective_config_hash": content_hash(effective.as_bytes()),
        "overrides": opts.overrides,
        "config": serde_json::to_value(&cfg).expect("serializable"),
        "exit_code": code,
        "outputs": files,
        "tolerances": tolerances(&cfg),
    });
    match &result {
        Ok(o) => {
            manifest["status"] = json!(if o.pass { "pass" } else { "fail" });
            manifest["summary"] = o.summary.clone();
            manifest["diagnostics"] = json!(o.diagnostics);
            if let Some(v) = o.report.get("ledger") {
                manifest["ledger"] = v.clone();
            }
            for d in &o.diagnostics {
                eprintln!("{}: {d}", command.name());
            }
        }
        Err(e) => {
            let module = module_of(e);
            eprintln!("error [{module}]: {e}");
            manifest["status"] = json!("error");
            manifest["error"] = json!({"kind": e.kind(), "module": module, "message": e.to_string()});
        }
    }
    if let Err(e) = write_json(&out.join("manifest.json"), &manifest) {
        eprintln!("error: cannot write manifest: {e}");
        return 2;
    }
    match &result {
        Ok(o) => println!("{} {}: {}", command.name(), cfg.system.name, if o.pass { "pass" } else { "fail" }),
        Err(_) => println!("{} {}: error", command.name(), cfg.system.name),
    }
    code
}

fn tolerances(cfg: &Config) -> Value {
    json!({
        "fixed_point": cfg.transform.tol,
        "whitney_quotient": cfg.chart.tolerance,
        "smallness_threshold": cfg.transform.threshold,
        "tangency": cfg.verify.tangency_tolerance,
        "invariance_band_fraction": cfg.verify.band_fraction,
        "saddle_invariance": cfg.saddle.invariance_tolerance,
        "saddle_min_angle_deg": cfg.saddle.min_angle_deg,
        "leaf_invariance": cfg.foliate.invariance_tolerance,
        "connection_radius": cfg.connections.radius,
        "connection_delta": cfg.connections.delta,
    })
}

fn module_of(e: &Error) -> &'static str {
    match e {
        Error::Config(_) | Error::NotFound(_) => "config",
        Error::NoDomination { .. } | Error::SplittingMissing(_) => "cones",
        Error::ChartFailure { .. } | Error::ResidualTooLarge { .. } | Error::GraphObstruction(_) => "whitney_surface",
        Error::PropertiesUnachievable(_)
        | Error::NoValidEpsilon { .. }
        | Error::NewtonDivergence { .. }
        | Error::LipschitzViolation { .. }
        | Error::NoContraction { .. }
        | Error::ProjectionFailure(_) => "graph_transform",
        Error::IntersectionDegenerate { .. } | Error::ConnectionFound(_) => "verify",
        Error::BunchingFailure { .. } | Error::DimensionUnsupported(_) => "projective_lift",
        Error::SetsIntersect | Error::BadRadii { .. } | Error::LevelOverflow(_) => "smoothing",
        Error::OrbitEscape(_) | Error::EmptyResult(_) | Error::TooFewPoints(_) => "invariant_set",
        _ => "dynamics",
    }
}

/// Entry point for the binary: parses arguments and runs the subcommand.
pub fn main_from_args() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_workers(cli.workers);
    run_with(cli.command, &cli.config, &cli.out, &RunOptions { seed: cli.seed, overrides: cli.tol_override })
}
