//! Box-cover outer approximation of a horseshoe and its periodic orbits.

use center_manifold::dynamics::lookup;
use center_manifold::invariant_set::{find_periodic, maximal_invariant};

fn main() {
    let e = lookup("henon_x_strong").unwrap();
    for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let cover = maximal_invariant(&e.map, &[-2.0, -2.0, -1.0], &[2.0, 2.0, 1.0], h, 6).unwrap();
        println!("h = {h:.4}: {} boxes, {} sweeps, centre residual {:.3e}", cover.len(), cover.sweeps, cover.invariance_residual);
    }
    let cover = maximal_invariant(&e.map, &[-2.0, -2.0, -1.0], &[2.0, 2.0, 1.0], 1.0 / 64.0, 6).unwrap();
    let seeds = cover.vectors();
    for p in 1..=5 {
        let orbits = find_periodic(&e.map, p, &seeds).unwrap();
        let saddles = orbits.iter().filter(|o| o.n_stable > 0 && o.n_unstable > 0).count();
        println!("period {p}: {} orbits, {saddles} of saddle type", orbits.len());
        if let Some(o) = orbits.first() {
            println!("  first orbit starts at {:?}, multipliers {:?}", o.points[0], o.multipliers);
        }
    }
}
