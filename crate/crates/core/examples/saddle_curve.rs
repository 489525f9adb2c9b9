//! Center curve of saddle3 as the intersection of the center-stable and center-unstable manifolds.

use center_manifold::dynamics::lookup;
use center_manifold::invariant_set::SampledInvariantSet;
use center_manifold::verify::{saddle_intersection, SaddleOptions};

fn main() {
    let e = lookup("saddle3").unwrap();
    let k = SampledInvariantSet::from_points(&e.map, e.known_set.clone().unwrap()).unwrap();
    let mut opts = SaddleOptions::default();
    opts.manifold.tube.radius = 0.1;
    opts.manifold.tube.spacing = 2e-3;
    let s = saddle_intersection(&e.map, &k, &opts).unwrap();
    println!("surfaces meet at {:.2}°, {} projection rounds, last motion {:.1e}", s.min_surface_angle_deg, s.rounds, s.last_motion);
    println!("center direction {:?}", s.center_directions[0]);
    println!("angle to E^c at K {:.3e} rad, invariance residual {:.3e}", s.tangent_angle, s.invariance_residual);
    let c = &s.curves[0];
    for p in [&c[0], &c[c.len() / 2], &c[c.len() - 1]] {
        println!("  {:?}", p);
    }
}
