//! Whitney initial surface through K tangent to the center bundle.

use center_manifold::dynamics::lookup;
use center_manifold::pipeline::{sample_k, splitting, KOptions, KSource, ManifoldOptions};
use center_manifold::whitney_surface::{build_surface, ChartOptions};

fn main() {
    let e = lookup("henon_x_strong").unwrap();
    let k = sample_k(&e, &KOptions { source: KSource::Periodic { max_period: 4 }, resolution: 1.0 / 64.0, cover_steps: 6, seed: 7 }).unwrap();
    let kv = k.vectors();
    let split = splitting(&e.map, &kv, 1, &ManifoldOptions::default()).unwrap();
    let opts = ChartOptions { target_radius: 0.05, ..Default::default() };
    let surf = build_surface(&split, &e.map.topology, &opts).unwrap();
    let quotient = surf.graphs.iter().map(|g| g.quotient).fold(0.0, f64::max);
    println!("{} charts over base axes {:?}, largest Whitney quotient {quotient:.3e}", surf.charts.len(), surf.frame.base_axes);
    println!("max distance from K to the surface {:.3e}", surf.max_sample_distance(&kv).unwrap());
    println!("max angle between tangent plane and E^c on K {:.3e} rad", surf.max_tangent_angle(&kv, &split.e_frames, 1e-5).unwrap());
    for u in [[0.0, 0.0], [0.5, 0.2]] {
        let u = center_manifold::linalg::Vector::from_column_slice(&u);
        match surf.point(&u) {
            Ok(p) => println!("surface over {:?}: {:?}", u.as_slice(), p.as_slice()),
            Err(err) => println!("surface over {:?}: {err}", u.as_slice()),
        }
    }
}
