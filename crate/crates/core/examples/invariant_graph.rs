//! Center manifold of curved2 by the graph transform, against the Taylor oracle h(x) = −x² + O(x⁴).

use center_manifold::dynamics::lookup;
use center_manifold::graph_transform::{validate_ledger, ConstantsLedger};
use center_manifold::linalg::Vector;
use center_manifold::pipeline::{center_manifold, ManifoldOptions};

fn main() {
    let e = lookup("curved2").unwrap();
    let mut opts = ManifoldOptions::default();
    opts.tube.radius = 0.1;
    opts.tube.spacing = 1e-3;
    let cm = center_manifold(&e.map, &e.known_set.clone().unwrap(), 1, &opts).unwrap();
    let s = &cm.solution;
    println!("m = {:.3e}, ε(m) = {:.3e}, {} iterations", s.setup.ledger.m, cm.epsilon(), s.trace.iterations);
    println!("sup distance per iteration: {:?}", s.trace.distances.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>());
    if let Some(p) = &s.probe {
        println!("contraction factor from a random admissible graph: {:.4}", p.contraction_factor);
    }
    let g = &s.graph;
    let f = g.grid.flat(&g.grid.locate(&Vector::zeros(1)).unwrap().base);
    let dx = g.grid.spacing(0);
    let h2 = (g.offsets[f + 1] - 2.0 * g.offsets[f] + g.offsets[f - 1]) / (dx * dx);
    println!("second difference of h at 0: {h2:.6} (oracle −2)");
    for x in [-0.004, 0.0, 0.004] {
        let p = cm.point(&Vector::from_column_slice(&[x])).unwrap();
        println!("  x = {x:+.3}: manifold point {:?}, −x² = {:+.3e}", p.as_slice(), -x * x);
    }

    let worked = ConstantsLedger { lambda0: 3.0, eta: 0.05, beta: 0.05, delta: 0.04, gamma: 0.4, rho: 1.1, beta_bar: 0.03, ..cm.solution.setup.ledger.clone() };
    println!("worked ledger: {:?}", validate_ledger(&worked));
    println!("pipeline ledger: {:?}", validate_ledger(&cm.solution.setup.ledger));
}
