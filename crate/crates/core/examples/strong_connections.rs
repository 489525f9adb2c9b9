//! Strong unstable leaves and connection detection: solenoid against a dominated horseshoe.

use center_manifold::dynamics::lookup;
use center_manifold::pipeline::{sample_k, splitting, KOptions, KSource, ManifoldOptions};
use center_manifold::strong_manifolds::{detect_connection, grow_unstable_leaf};

fn main() {
    let mut e = lookup("solenoid").unwrap();
    e.working_box = vec![(0.0, 1.0), (-0.6, 0.6), (-0.6, 0.6)];
    let k = sample_k(&e, &KOptions { source: KSource::Attractor { settle: 30 }, resolution: 1.0 / 32.0, cover_steps: 6, seed: 7 }).unwrap();
    let split = splitting(&e.map, &k.vectors(), 1, &ManifoldOptions::default()).unwrap();
    let leaf = grow_unstable_leaf(&e.map, &k, &split, &k.vectors()[0], 0.3).unwrap();
    println!("solenoid: {} K samples, leaf through the first has {} points (depth {})", k.len(), leaf.points.len(), leaf.depth);
    let rep = detect_connection(&e.map, &k, &split, 0.3, 3.0 / 32.0).unwrap();
    println!("solenoid: {} distinct connection pairs, criterion agreement {:.2}", rep.distinct_pairs(), rep.agreement);

    let e = lookup("henon_x_strong").unwrap();
    let k = sample_k(&e, &KOptions { source: KSource::Periodic { max_period: 5 }, resolution: 1.0 / 64.0, cover_steps: 6, seed: 7 }).unwrap();
    let split = splitting(&e.map, &k.vectors(), 1, &ManifoldOptions::default()).unwrap();
    let rep = detect_connection(&e.map, &k, &split, 0.2, 0.01).unwrap();
    println!("henon_x_strong: {} K samples, connected = {}", k.len(), rep.connected());
}
