//! Built-in test systems with analytic facts.

use super::{Coord, SmoothMap};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct SystemEntry {
    pub name: String,
    pub map: SmoothMap,
    /// Region where round trips and Jacobians are checked.
    pub working_box: Vec<(f64, f64)>,
    /// Default dimension of the strong (expanding) bundle.
    pub strong_dim: usize,
    pub known_set: Option<Vec<Vector>>,
    pub known_answers: BTreeMap<String, Value>,
}

fn v(s: &[f64]) -> Vector {
    Vector::from_column_slice(s)
}

fn answers(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn henon3(name: &str, a: f64, b: f64, rate: f64, coupling: f64) -> SmoothMap {
    SmoothMap::new(name, 3, move |p| v(&[1.0 - a * p[0] * p[0] + p[1], b * p[0], rate * p[2] + coupling * p[0] * p[0]]))
        .with_inverse(move |q| {
            let x = q[1] / b;
            v(&[x, q[0] - 1.0 + a * x * x, (q[2] - coupling * x * x) / rate])
        })
        .with_jacobian(move |p| {
            Matrix::from_row_slice(3, 3, &[-2.0 * a * p[0], 1.0, 0.0, b, 0.0, 0.0, 2.0 * coupling * p[0], 0.0, rate])
        })
}

/// Right fixed point of (x,y) ↦ (1 − a x² + y, b x).
pub fn henon_fixed_point(a: f64, b: f64) -> (f64, f64) {
    let x = (b - 1.0 + ((1.0 - b) * (1.0 - b) + 4.0 * a).sqrt()) / (2.0 * a);
    (x, b * x)
}

fn curved2_inverse(q: &Vector) -> Vector {
    // x (1 + (Y − x²)/2) = X, y = (Y − x²)/2
    let (xx, yy) = (q[0], q[1]);
    let g = |x: f64| x * (1.0 + 0.5 * (yy - x * x)) - xx;
    let dg = |x: f64| 1.0 + 0.5 * yy - 1.5 * x * x;
    let mut x = xx;
    for _ in 0..60 {
        let d = dg(x);
        if d.abs() < 1e-14 {
            break;
        }
        let step = g(x) / d;
        x -= step;
        if step.abs() <= 1e-17 * x.abs().max(1e-300) {
            break;
        }
    }
    v(&[x, 0.5 * (yy - x * x)])
}

fn solenoid_forward(p: &Vector) -> Vector {
    let t = 2.0 * PI * p[0];
    v(&[2.0 * p[0], 0.25 * p[1] + 0.4 * t.cos(), 0.25 * p[2] + 0.4 * t.sin()])
}

fn solenoid_inverse(q: &Vector) -> Vector {
    let th = q[0].rem_euclid(1.0);
    let mut best: Option<(f64, Vector)> = None;
    for branch in [0.5 * th, 0.5 * th + 0.5] {
        let t = 2.0 * PI * branch;
        let u = (q[1] - 0.4 * t.cos()) / 0.25;
        let w = (q[2] - 0.4 * t.sin()) / 0.25;
        let r = u * u + w * w;
        if best.as_ref().map_or(true, |(br, _)| r < *br) {
            best = Some((r, v(&[branch, u, w])));
        }
    }
    best.unwrap().1
}

pub fn builtin_registry() -> Vec<SystemEntry> {
    let mut out = Vec::new();

    let linear3 = SmoothMap::linear("linear3", Matrix::from_diagonal(&v(&[0.5, 1.0, 3.0]))).unwrap();
    out.push(SystemEntry {
        name: "linear3".into(),
        map: linear3,
        working_box: vec![(-1.0, 1.0); 3],
        strong_dim: 1,
        known_set: Some(vec![v(&[0.0, 0.0, 0.0])]),
        known_answers: answers(&[
            ("center_manifold", json!("y-axis")),
            ("center_unstable_plane", json!("z=0 is the center manifold for strong bundle z")),
            ("strong_rate", json!(3.0)),
            ("center_rate", json!(1.0)),
            ("graph_transform_ratio", json!(1.0 / 3.0)),
        ]),
    });

    let curved2 = SmoothMap::new("curved2", 2, |p| v(&[p[0] + p[0] * p[1], 2.0 * p[1] + p[0] * p[0]]))
        .with_inverse(curved2_inverse)
        .with_jacobian(|p| Matrix::from_row_slice(2, 2, &[1.0 + p[1], p[0], 2.0 * p[0], 2.0]));
    out.push(SystemEntry {
        name: "curved2".into(),
        map: curved2,
        working_box: vec![(-0.3, 0.3); 2],
        strong_dim: 1,
        known_set: Some(vec![v(&[0.0, 0.0])]),
        known_answers: answers(&[("h_second_derivative_at_0", json!(-2.0)), ("h_first_derivative_at_0", json!(0.0))]),
    });

    let saddle3 = SmoothMap::new("saddle3", 3, |p| {
        v(&[0.2 * p[0] + 0.1 * p[1] * p[1], p[1], 5.0 * p[2] + 0.1 * p[0] * p[1]])
    })
    .with_inverse(|q| {
        let y = q[1];
        let x = (q[0] - 0.1 * y * y) / 0.2;
        v(&[x, y, (q[2] - 0.1 * x * y) / 5.0])
    })
    .with_jacobian(|p| {
        Matrix::from_row_slice(3, 3, &[0.2, 0.2 * p[1], 0.0, 0.0, 1.0, 0.0, 0.1 * p[1], 0.1 * p[0], 5.0])
    });
    out.push(SystemEntry {
        name: "saddle3".into(),
        map: saddle3,
        working_box: vec![(-0.5, 0.5); 3],
        strong_dim: 1,
        known_set: Some(vec![v(&[0.0, 0.0, 0.0])]),
        known_answers: answers(&[
            ("center_curve", json!("x = y^2/8, z = -y^3/320 (a curve of fixed points)")),
            ("center_tangent", json!([0.0, 1.0, 0.0])),
        ]),
    });

    out.push(SystemEntry {
        name: "henon_x_expand".into(),
        map: henon3("henon_x_expand", 6.0, 0.4, 3.0, 0.0),
        working_box: vec![(-2.0, 2.0), (-2.0, 2.0), (-1.0, 1.0)],
        strong_dim: 1,
        known_set: None,
        known_answers: answers(&[("invariant_plane", json!("z=0")), ("z_rate", json!(3.0))]),
    });

    out.push(SystemEntry {
        name: "henon_x_expand_coupled".into(),
        map: henon3("henon_x_expand_coupled", 6.0, 0.4, 3.0, 0.1),
        working_box: vec![(-2.0, 2.0), (-2.0, 2.0), (-1.0, 1.0)],
        strong_dim: 1,
        known_set: None,
        known_answers: answers(&[
            ("graph_series", json!("psi = -0.1 * sum_k 3^-(k+1) x_k^2")),
            ("z_rate", json!(3.0)),
            ("coupling", json!(0.1)),
        ]),
    });

    out.push(SystemEntry {
        name: "henon_x_strong".into(),
        map: henon3("henon_x_strong", 6.0, 0.4, 10.0, 0.1),
        working_box: vec![(-2.0, 2.0), (-2.0, 2.0), (-1.0, 1.0)],
        strong_dim: 1,
        known_set: None,
        known_answers: answers(&[
            ("graph_series", json!("psi = -0.1 * sum_k 10^-(k+1) x_k^2")),
            ("z_rate", json!(10.0)),
            ("coupling", json!(0.1)),
        ]),
    });

    let solenoid = SmoothMap::new("solenoid", 3, solenoid_forward)
        .with_inverse(solenoid_inverse)
        .with_jacobian(|p| {
            let t = 2.0 * PI * p[0];
            Matrix::from_row_slice(
                3,
                3,
                &[2.0, 0.0, 0.0, -0.8 * PI * t.sin(), 0.25, 0.0, 0.8 * PI * t.cos(), 0.0, 0.25],
            )
        })
        .with_topology(vec![Coord::Circle(1.0), Coord::Line, Coord::Line]);
    out.push(SystemEntry {
        name: "solenoid".into(),
        map: solenoid,
        working_box: vec![(0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
        strong_dim: 1,
        known_set: None,
        known_answers: answers(&[("strong_connections", json!(true))]),
    });

    let cat = SmoothMap::linear("cat_linear", Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]))
        .unwrap()
        .with_topology(vec![Coord::Circle(1.0), Coord::Circle(1.0)]);
    let s5 = 5f64.sqrt();
    out.push(SystemEntry {
        name: "cat_linear".into(),
        map: cat,
        working_box: vec![(0.0, 1.0); 2],
        strong_dim: 1,
        known_set: Some(vec![v(&[0.0, 0.0])]),
        known_answers: answers(&[
            ("unstable_slope", json!((s5 - 1.0) / 2.0)),
            ("stable_slope", json!(-(s5 + 1.0) / 2.0)),
            ("unstable_eigenvalue", json!((3.0 + s5) / 2.0)),
        ]),
    });

    let (a, b) = (1.4, 0.3);
    let henon_saddle = SmoothMap::new("henon_saddle", 2, move |p| v(&[1.0 - a * p[0] * p[0] + p[1], b * p[0]]))
        .with_inverse(move |q| {
            let x = q[1] / b;
            v(&[x, q[0] - 1.0 + a * x * x])
        })
        .with_jacobian(move |p| Matrix::from_row_slice(2, 2, &[-2.0 * a * p[0], 1.0, b, 0.0]));
    let (xs, ys) = henon_fixed_point(a, b);
    out.push(SystemEntry {
        name: "henon_saddle".into(),
        map: henon_saddle,
        working_box: vec![(-1.5, 1.5), (-0.5, 0.5)],
        strong_dim: 1,
        known_set: Some(vec![v(&[xs, ys])]),
        known_answers: answers(&[("fixed_point", json!([xs, ys]))]),
    });

    out.push(SystemEntry {
        name: "diag_saddle2".into(),
        map: SmoothMap::linear("diag_saddle2", Matrix::from_diagonal(&v(&[0.5, 2.0]))).unwrap(),
        working_box: vec![(-1.0, 1.0); 2],
        strong_dim: 1,
        known_set: Some(vec![v(&[0.0, 0.0])]),
        known_answers: answers(&[("stable_leaves", json!("horizontal lines y = const"))]),
    });

    out.push(SystemEntry {
        name: "rotation90".into(),
        map: SmoothMap::linear("rotation90", Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap(),
        working_box: vec![(-1.0, 1.0); 2],
        strong_dim: 1,
        known_set: Some(vec![v(&[0.0, 0.0])]),
        known_answers: answers(&[("angle_action", json!("phi + pi/2 mod pi"))]),
    });

    out
}

pub fn lookup(name: &str) -> Result<SystemEntry> {
    builtin_registry()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::NotFound(format!("system {name}")))
}
