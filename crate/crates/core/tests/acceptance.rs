//! Acceptance criteria at their stated tolerances; one PASS/FAIL line per criterion.
//!
//! Criteria recorded as unattainable in the decisions ledger are run in full and
//! reported as FAIL; the test asserts that exactly that set fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use center_manifold::cli::{run_with, RunOptions, Subcommand};
use center_manifold::cones::{check_contraction, cone_thinness, orbit_segments, ConeField};
use center_manifold::dynamics::{lookup, Coord};
use center_manifold::graph_transform::{validate_ledger, ConstantsLedger};
use center_manifold::invariant_set::{find_periodic, SampledInvariantSet};
use center_manifold::linalg::{line_angle, Matrix, Vector};
use center_manifold::pipeline::{center_manifold, CenterManifold, ManifoldOptions};
use center_manifold::projective_lift::{angle_error, foliate, FoliationOptions};
use center_manifold::smoothing::{build_separator, bump_from_distance};
use center_manifold::verify::{check_tangency, robustness_ladder, saddle_intersection, SaddleOptions};
use center_manifold::whitney_surface::{fit_local_graph, AdaptedChart};
use serde_json::Value;

const EXPECTED_FAILURES: [u32; 2] = [3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn v(s: &[f64]) -> Vector {
    Vector::from_column_slice(s)
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cm-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn cli(cmd: Subcommand, config: &str, out: &Path, overrides: &[&str]) -> (i32, Value) {
    let opts = RunOptions { seed: None, overrides: overrides.iter().map(|s| s.to_string()).collect() };
    let code = run_with(cmd, &configs().join(config), out, &opts);
    let manifest = std::fs::read_to_string(out.join("manifest.json")).map(|t| serde_json::from_str(&t).unwrap()).unwrap_or(Value::Null);
    (code, manifest)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn manifold(name: &str, radius: f64, spacing: f64) -> (center_manifold::dynamics::SystemEntry, center_manifold::error::Result<CenterManifold>) {
    let e = lookup(name).unwrap();
    let mut opts = ManifoldOptions::default();
    opts.tube.radius = radius;
    opts.tube.spacing = spacing;
    let cm = center_manifold(&e.map, &e.known_set.clone().unwrap(), 1, &opts);
    (e, cm)
}

fn second_difference_at_origin(cm: &CenterManifold) -> f64 {
    let g = &cm.solution.graph;
    let loc = g.grid.locate(&Vector::zeros(1)).unwrap();
    let mut f = loc.base[0];
    if loc.frac[0] > 0.5 {
        f += 1;
    }
    let dx = g.grid.spacing(0);
    (g.offsets[f + 1] - 2.0 * g.offsets[f] + g.offsets[f - 1]) / (dx * dx)
}

fn c1_linear_exactness() -> Verdict {
    let (_, cm) = manifold("linear3", 0.2, 0.02);
    let cm = match cm {
        Ok(cm) => cm,
        Err(e) => return verdict(false, format!("pipeline error: {e}")),
    };
    let offset = cm.solution.graph.sup_norm();
    let tangency = check_tangency(&cm, 1e-12).unwrap();
    let ratio = cm.solution.probe.as_ref().map_or(f64::NAN, |p| p.contraction_factor);
    let base = &cm.tube.mesh.frame.base_axes;
    let pass = offset <= 1e-12 && tangency.max_angle <= 1e-12 && (0.30..=0.37).contains(&ratio) && base == &vec![0, 1];
    verdict(pass, format!("base axes {base:?}, sup offset {offset:.2e}, tangency {:.2e}, contraction ratio {ratio:.4}", tangency.max_angle))
}

fn c2_taylor_oracle() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for (spacing, tol) in [(1e-3, 1e-3), (1e-4, 1e-5)] {
        match manifold("curved2", 0.1, spacing).1 {
            Ok(cm) => {
                let h2 = second_difference_at_origin(&cm);
                pass &= (h2 + 2.0).abs() <= tol;
                parts.push(format!("spacing {spacing:.0e}: h''(0) = {h2:.8} (|err| {:.1e} vs {tol:.0e})", (h2 + 2.0).abs()));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("spacing {spacing:.0e}: {e}"));
            }
        }
    }
    verdict(pass, parts.join("; "))
}

/// ψ = −0.1 Σ_{k≤25} 3^{−(k+1)} x_k², following the orbit through the periodic set `k`.
fn psi(map: &center_manifold::dynamics::SmoothMap, k: &[Vector], p: &Vector) -> f64 {
    let mut x = p.clone();
    let mut s = 0.0;
    for j in 0..=25 {
        s += 3f64.powi(-(j + 1)) * x[0] * x[0];
        let y = map.apply(&x).unwrap();
        x = k.iter().min_by(|a, b| (*a - &y).norm().total_cmp(&(*b - &y).norm())).unwrap().clone();
    }
    -0.1 * s
}

/// Horseshoe periodic points of x' = 1 − a x² + y, y' = b x for every symbol word up to
/// `max_period`, from the anti-integrable iteration x_n = s_n √((1 + b x_{n−1} − x_{n+1})/a).
fn horseshoe_seeds(a: f64, b: f64, max_period: usize) -> Vec<Vector> {
    let mut out = Vec::new();
    for p in 1..=max_period {
        for word in 0u32..(1 << p) {
            let s: Vec<f64> = (0..p).map(|i| if word >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let mut x: Vec<f64> = s.iter().map(|si| si / a.sqrt()).collect();
            for _ in 0..200 {
                let prev = x.clone();
                for n in 0..p {
                    let arg = (1.0 + b * prev[(n + p - 1) % p] - prev[(n + 1) % p]) / a;
                    x[n] = s[n] * arg.max(0.0).sqrt();
                }
            }
            out.push(v(&[x[0], b * x[p - 1], 0.0]));
        }
    }
    out
}

fn c3_series_oracle() -> Verdict {
    let e = lookup("henon_x_expand_coupled").unwrap();
    let seeds = horseshoe_seeds(6.0, 0.4, 7);
    let mut k: Vec<Vector> = Vec::new();
    for p in 1..=7 {
        for o in find_periodic(&e.map, p, &seeds).unwrap() {
            for q in o.points {
                let q = Vector::from_vec(q);
                if !k.iter().any(|r| (r - &q).norm() < 1e-9) {
                    k.push(q);
                }
            }
        }
    }
    if k.len() < 200 {
        return verdict(false, format!("only {} horseshoe samples", k.len()));
    }
    let seed_err = k.iter().take(200).map(|p| (p[2] - psi(&e.map, &k, p)).abs()).fold(0.0, f64::max);
    match center_manifold(&e.map, &k, 1, &ManifoldOptions::default()) {
        Err(err) => verdict(false, format!("{} horseshoe samples (z vs ψ on K {seed_err:.1e}); pipeline stops: {err}", k.len())),
        Ok(cm) => {
            let mut worst: f64 = 0.0;
            for p in k.iter().take(200) {
                let u = cm.tube.mesh.frame.base(p);
                match cm.point(&u) {
                    Some(q) => worst = worst.max((q[2] - psi(&e.map, &k, p)).abs()),
                    None => worst = f64::INFINITY,
                }
            }
            verdict(worst <= 1e-6, format!("sup |graph − ψ| on 200 samples = {worst:.3e}"))
        }
    }
}

fn c4_connection_dichotomy() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["linear3", "curved2", "henon_x_expand"] {
        let out = scratch(&format!("conn-{name}"));
        let (code, _) = cli(Subcommand::Connections, &format!("{name}.toml"), &out, &["k.resolution=0.0078125"]);
        let rep = read_json(&out.join("connections.json"));
        let pairs = rep["forward"]["distinct_pairs"].as_u64().unwrap_or(0) + rep["backward"]["distinct_pairs"].as_u64().unwrap_or(0);
        pass &= code == 0 && pairs == 0;
        parts.push(format!("{name}: {pairs} pairs"));
    }
    let out = scratch("solenoid");
    let (code, _) = cli(Subcommand::Invariant, "solenoid.toml", &out, &[]);
    let rep = read_json(&out.join("invariant.json"));
    let pairs = rep["connections"]["distinct_pairs"].as_u64().unwrap_or(0);
    let ran = rep["graph_transform_run"].as_bool().unwrap_or(true);
    pass &= code == 1 && pairs >= 10 && !ran;
    parts.push(format!("solenoid: {pairs} pairs, invariant exit {code}, graph transform run {ran}"));
    let out = scratch("solenoid-forced");
    let (code, manifest) = cli(Subcommand::Invariant, "solenoid.toml", &out, &["connections.force=true"]);
    let kind = manifest["error"]["kind"].as_str().unwrap_or("none").to_string();
    pass &= kind == "NoContraction" || kind == "LipschitzViolation";
    parts.push(format!("forced run: exit {code}, {kind}"));
    verdict(pass, parts.join("; "))
}

fn worked() -> ConstantsLedger {
    ConstantsLedger { lambda0: 3.0, eta: 0.05, beta: 0.05, delta: 0.04, gamma: 0.4, rho: 1.1, beta_bar: 0.03, m: 0.0, epsilon: 0.0, c_f: 3.0, threshold: 0.05 }
}

fn c5_ledger_arithmetic() -> Verdict {
    let base = validate_ledger(&worked()).ok;
    let d = 1e-6;
    let kappa = |l: &ConstantsLedger| l.lambda0 - 4.0 * l.eta * (1.0 + l.beta);
    let cases: Vec<(&str, Box<dyn Fn(&mut ConstantsLedger, f64)>)> = vec![
        ("β<(λ₀−2η)/(6η)", Box::new(|l, s| l.beta = (l.lambda0 - 2.0 * l.eta) / (6.0 * l.eta) + s)),
        ("λ₀−4η(1+β)>1", Box::new(|l, s| l.lambda0 = 1.0 + 4.0 * l.eta * (1.0 + l.beta) - s)),
        ("β+δ<1/10", Box::new(|l, s| l.delta = 0.1 - l.beta + s)),
        ("(λ₀−4η(1+β))⁻¹<γ", Box::new(move |l, s| l.gamma = 1.0 / kappa(l) - s)),
        ("γ<1", Box::new(|l, s| l.gamma = 1.0 + s)),
        ("γρ<1", Box::new(|l, s| l.rho = 1.0 / l.gamma + s)),
        ("β/λ₀<β̄", Box::new(|l, s| l.beta_bar = l.beta / l.lambda0 - s)),
        ("β̄<β", Box::new(|l, s| l.beta_bar = l.beta + s)),
    ];
    let mut flipped = 0;
    for (name, set) in &cases {
        let mut l = worked();
        set(&mut l, d);
        let c = validate_ledger(&l);
        if !c.ok && c.violated.iter().any(|v| v == name) {
            flipped += 1;
        }
    }
    verdict(base && flipped == cases.len(), format!("worked example passes: {base}; {flipped}/{} single violations by 1e-6 detected", cases.len()))
}

fn c6_contraction() -> Verdict {
    let e = lookup("linear3").unwrap();
    let axis = Matrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let complement = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let cone = ConeField::constant(axis, complement, 1.0);
    let k = vec![Vector::zeros(3)];
    let cert = check_contraction(&e.map, &cone, &orbit_segments(&e.map, &k, 21).unwrap(), 1.0, 10).unwrap();
    let mut worst: f64 = 0.0;
    for n in 0..=20 {
        let t = cone_thinness(&e.map, &cone, &k[0], n).unwrap();
        worst = worst.max((t * 3f64.powi(n as i32) - 1.0).abs());
    }
    verdict(cert.lambda >= 2.9 && worst <= 1e-10, format!("λ = {:.6}, max relative thinness error {worst:.1e}", cert.lambda))
}

fn c7_smoothing() -> Verdict {
    let (k, l) = (vec![v(&[-2.0])], vec![v(&[2.0])]);
    let sep = build_separator(&k, &l, &[-3.0], &[3.0]).unwrap();
    let mut sup: f64 = 0.0;
    for i in 0..=100_000 {
        sup = sup.max(sep.grad(&v(&[-3.0 + 6.0 * i as f64 / 100_000.0])).norm());
    }
    let grad_d = sup.max(sep.measured_grad_sup) * 4.0;
    let level = sep.eval(&k[0]).abs().max((sep.eval(&l[0]) - 1.0).abs());
    let bump = bump_from_distance(&[v(&[0.0])], 0.5, 1.0, &[Coord::Line]).unwrap();
    let mut bsup: f64 = 0.0;
    for i in 0..=100_000 {
        bsup = bsup.max(bump.grad(&v(&[-2.0 + 4.0 * i as f64 / 100_000.0])).norm());
    }
    let pass = grad_d <= sep.c_impl && level <= 1e-12 && bsup <= 8.0 * (1.0 + 1e-6);
    verdict(pass, format!("sup‖grad‖·d = {grad_d:.3} ≤ C_impl {}; level error {level:.1e}; bump sup {bsup:.4} ≤ 8", sep.c_impl))
}

fn chart(us: &[f64], h: impl Fn(f64) -> f64, dh: impl Fn(f64) -> f64) -> AdaptedChart {
    AdaptedChart {
        center: vec![0.0, 0.0],
        rotation: Matrix::identity(2, 2),
        radius: 0.3,
        captured: (0..us.len()).collect(),
        horizontal: us.iter().map(|&u| Vector::from_element(1, u)).collect(),
        heights: us.iter().map(|&u| Vector::from_element(1, h(u))).collect(),
        slopes: us.iter().map(|&u| Matrix::from_element(1, 1, dh(u))).collect(),
        shrinks: 0,
    }
}

fn c8_whitney() -> Verdict {
    let g = match fit_local_graph(&chart(&[-0.2, 0.0, 0.2], |u| u * u, |u| 2.0 * u), 0.05) {
        Ok(g) => g,
        Err(e) => return verdict(false, format!("quadratic data rejected: {e}")),
    };
    let mut err: f64 = 0.0;
    for i in 0..=40 {
        let u = -0.2 + 0.01 * i as f64;
        err = err.max((g.eval(&Vector::from_element(1, u)).0[0] - u * u).abs());
    }
    let bad = fit_local_graph(&chart(&[-0.1, 0.1], |_| 0.0, |_| 1.0), 0.05);
    let rejected = matches!(bad, Err(center_manifold::error::Error::ResidualTooLarge { .. }));
    verdict(err <= 1e-6 && g.quotient <= 1e-6 && rejected, format!("reproduction error {err:.1e}, quotient {:.1e}, incompatible data rejected: {rejected}", g.quotient))
}

fn c9_saddle() -> Verdict {
    let e = lookup("saddle3").unwrap();
    let k = SampledInvariantSet::from_points(&e.map, e.known_set.clone().unwrap()).unwrap();
    let mut opts = SaddleOptions::default();
    opts.manifold.tube.radius = 0.1;
    opts.manifold.tube.spacing = 2e-3;
    match saddle_intersection(&e.map, &k, &opts) {
        Ok(s) => {
            let y_axis = s.center_directions[0][1].abs();
            let pass = s.tangent_angle <= 1e-3 && s.invariance_residual <= 1e-6 && y_axis > (1e-3f64).cos();
            verdict(pass, format!("angle to the y-axis {:.1e}, invariance {:.1e}", y_axis.min(1.0).acos().max(s.tangent_angle), s.invariance_residual))
        }
        Err(err) => verdict(false, err.to_string()),
    }
}

fn c10_foliation() -> Verdict {
    let mut opts = FoliationOptions::default();
    opts.manifold.tube.radius = 0.1;
    opts.manifold.tube.spacing = 1e-2;
    let e = lookup("cat_linear").unwrap();
    let k = e.known_set.clone().unwrap();
    let cat = match foliate(&e.map, &k, &opts) {
        Ok(c) => c,
        Err(err) => return verdict(false, format!("cat_linear: {err}")),
    };
    let stable = line_angle(1.0, -(5f64.sqrt() + 1.0) / 2.0);
    let r = cat.invariant_radius();
    let mut cat_err: f64 = 0.0;
    for i in -10..=10 {
        for j in -10..=10 {
            let x = &k[0] + v(&[i as f64 * r / 10.0, j as f64 * r / 10.0]);
            cat_err = cat_err.max(angle_error(cat.angle_at(&x).unwrap(), stable));
        }
    }
    let e = lookup("henon_saddle").unwrap();
    let k = e.known_set.clone().unwrap();
    opts.manifold.tube.spacing = 1e-3;
    let hs = match foliate(&e.map, &k, &opts) {
        Ok(c) => c,
        Err(err) => return verdict(false, format!("cat error {cat_err:.1e}; henon_saddle: {err}")),
    };
    let (half, step) = hs.leaf_scale(&opts);
    let seeds = hs.seed_points(8, 0.5 * half);
    let inv = hs.leaf_invariance(&seeds, half, step).unwrap();
    let j = e.map.jacobian_at(&k[0]).unwrap();
    let eig = j.complex_eigenvalues();
    let lam = eig.iter().map(|c| c.re).fold(f64::INFINITY, |a: f64, b| if b.abs() < a.abs() { b } else { a });
    let eigvec = line_angle(j[(0, 1)], lam - j[(0, 0)]);
    let leaf = hs.leaf(&k[0], half, step).unwrap();
    let mid = leaf.len() / 2;
    let d = &leaf[mid + 1] - &leaf[mid - 1];
    let tangent = angle_error(line_angle(d[0], d[1]), eigvec);
    let pass = cat_err <= 1e-8 && inv <= 1e-4 && tangent <= 1e-3;
    verdict(pass, format!("cat line-field error {cat_err:.1e}; henon_saddle leaf invariance {inv:.1e}, tangent error {tangent:.1e}"))
}

fn c11_robustness() -> Verdict {
    let (e, cm) = manifold("curved2", 0.1, 1e-3);
    let cm = match cm {
        Ok(cm) => cm,
        Err(err) => return verdict(false, err.to_string()),
    };
    match robustness_ladder(&e.map, &cm, &[1e-2, 1e-3, 1e-4], 1, 7) {
        Ok(r) => verdict((0.8..=1.2).contains(&r.loglog_slope), format!("log-log slope {:.4}", r.loglog_slope)),
        Err(err) => verdict(false, err.to_string()),
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn c12_determinism() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for (cmd, config) in [(Subcommand::Invariant, "curved2.toml"), (Subcommand::Saddle, "saddle3.toml"), (Subcommand::SmoothFn, "smooth2d.toml")] {
        let (a, b) = (scratch(&format!("det-a-{}", cmd.name())), scratch(&format!("det-b-{}", cmd.name())));
        let (ca, _) = cli(cmd, config, &a, &[]);
        let (cb, _) = cli(cmd, config, &b, &[]);
        let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
        let same = ca == cb && fa == fb;
        pass &= same;
        parts.push(format!("{} ({} files): {}", cmd.name(), fa.len(), if same { "identical" } else { "differ" }));
    }
    verdict(pass, parts.join("; "))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(u32, &str, fn() -> Verdict); 12] = [
        (1, "linear exactness", c1_linear_exactness),
        (2, "Taylor oracle", c2_taylor_oracle),
        (3, "series oracle", c3_series_oracle),
        (4, "connection dichotomy", c4_connection_dichotomy),
        (5, "ledger arithmetic", c5_ledger_arithmetic),
        (6, "contraction certificates", c6_contraction),
        (7, "smoothing bounds", c7_smoothing),
        (8, "Whitney residual", c8_whitney),
        (9, "saddle case", c9_saddle),
        (10, "foliation", c10_foliation),
        (11, "robustness ladder", c11_robustness),
        (12, "determinism", c12_determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        let t = Instant::now();
        let r = check();
        println!("criterion {id:2} {name:24} {} ({:.1}s) {}", if r.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), r.detail);
        if !r.pass {
            failed.push(id);
        }
    }
    assert_eq!(failed, EXPECTED_FAILURES.to_vec(), "failing criteria differ from the ledger's unattainable set");
}
