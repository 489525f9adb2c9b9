//! Stable foliation of surface maps from a center manifold of the projective lift.

use center_manifold::dynamics::lookup;
use center_manifold::linalg::{line_angle, Vector};
use center_manifold::projective_lift::{angle_error, foliate, lift_map, FoliationOptions};

fn main() {
    let e = lookup("cat_linear").unwrap();
    let lift = lift_map(&e.map).unwrap();
    println!("cat lift equivariance error {:.1e}", lift.equivariance_error(&[0.0, 0.0], &[1.0, 1.0], 1000, 7).unwrap());
    let mut opts = FoliationOptions::default();
    opts.manifold.tube.radius = 0.1;
    opts.manifold.tube.spacing = 1e-2;
    let k = e.known_set.clone().unwrap();
    let chart = foliate(&e.map, &k, &opts).unwrap();
    let stable = line_angle(1.0, -(5f64.sqrt() + 1.0) / 2.0);
    let r = chart.invariant_radius();
    let mut worst: f64 = 0.0;
    for i in -5..=5 {
        for j in -5..=5 {
            let x = &k[0] + Vector::from_column_slice(&[i as f64 * r / 5.0, j as f64 * r / 5.0]);
            worst = worst.max(angle_error(chart.angle_at(&x).unwrap(), stable));
        }
    }
    println!("cat: bunching λ {:.3}, line field error against the stable eigendirection {worst:.1e}", chart.bunching.lambda);

    let e = lookup("henon_saddle").unwrap();
    opts.manifold.tube.spacing = 1e-3;
    let k = e.known_set.clone().unwrap();
    let chart = foliate(&e.map, &k, &opts).unwrap();
    let (half, step) = chart.leaf_scale(&opts);
    let seeds = chart.seed_points(8, 0.5 * half);
    println!("henon_saddle: fibre rate {:.3} over base rate {:.3}", chart.fiber_rate, chart.base_rate);
    println!("henon_saddle: leaf invariance residual {:.2e} over half-length {half:.2e}", chart.leaf_invariance(&seeds, half, step).unwrap());
    let leaf = chart.leaf(&k[0], half, step).unwrap();
    println!("leaf through the fixed point: {} points from {:?} to {:?}", leaf.len(), leaf[0].as_slice(), leaf[leaf.len() - 1].as_slice());
}
