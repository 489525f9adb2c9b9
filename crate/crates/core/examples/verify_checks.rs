//! Post-hoc checks on a computed center manifold: invariance, tangency, C¹ evidence, robustness.

use center_manifold::dynamics::lookup;
use center_manifold::pipeline::{center_manifold, ManifoldOptions};
use center_manifold::verify::{c1_evidence, check_local_invariance, check_tangency, robustness_ladder};

fn main() {
    let e = lookup("curved2").unwrap();
    let mut opts = ManifoldOptions::default();
    opts.tube.radius = 0.1;
    opts.tube.spacing = 1e-3;
    let cm = center_manifold(&e.map, &e.known_set.clone().unwrap(), 1, &opts).unwrap();
    let residual = cm.solution.trace.distances.last().cloned().unwrap_or(0.0);
    let inv = check_local_invariance(&e.map, &cm.tube, &cm.solution.graph, 0.25 * cm.epsilon(), residual).unwrap();
    println!("local invariance: residual {:.3e} ≤ {:.3e}: {}", inv.max_residual, inv.tolerance, inv.pass);
    let tan = check_tangency(&cm, 1e-3).unwrap();
    println!("tangency to E^c on K: {:.3e} rad: {}", tan.max_angle, tan.pass);
    let c1 = c1_evidence(&cm);
    println!("tangent modulus {:.3e} at δ, {:.3e} at 2δ, ratio {:.3}: {}", c1.modulus_fine, c1.modulus_coarse, c1.ratio, c1.pass);
    let ladder = robustness_ladder(&e.map, &cm, &[1e-2, 1e-3, 1e-4], 1, 7).unwrap();
    for r in &ladder.rungs {
        println!("bump of C¹ size {:.0e}: C⁰ distance {:.3e}", r.size, r.c0_distance);
    }
    println!("log-log slope {:.4}: {}", ladder.loglog_slope, ladder.pass);
}
