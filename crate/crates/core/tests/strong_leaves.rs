use center_manifold::cones::{estimate_splitting, ConeField};
use center_manifold::dynamics::lookup;
use center_manifold::invariant_set::{find_periodic, maximal_invariant, SampledInvariantSet};
use center_manifold::linalg::Vector;
use center_manifold::strong_manifolds::{check_pair_criterion, detect_connection, grow_unstable_leaf};

fn solenoid_k(h: f64) -> SampledInvariantSet {
    let e = lookup("solenoid").unwrap();
    maximal_invariant(&e.map, &[0.0, -0.6, -0.6], &[1.0, 0.6, 0.6], h, 6)
        .unwrap()
        .settle_on_attractor(&e.map, 30, 7)
        .unwrap()
}

#[test]
fn solenoid_leaves_meet_the_attractor_again() {
    let e = lookup("solenoid").unwrap();
    let h = 1.0 / 32.0;
    let k = solenoid_k(h);
    let split = estimate_splitting(&e.map, &k.vectors(), 1, 20).unwrap();
    let rep = detect_connection(&e.map, &k, &split, 0.3, 3.0 * h).unwrap();
    assert!(rep.distinct_pairs() >= 10, "{}", rep.distinct_pairs());
    assert!(rep.agreement > 0.0);

    let x = k.vectors()[10].clone();
    let leaf = grow_unstable_leaf(&e.map, &k, &split, &x, 0.3).unwrap();
    let f = split.f_frames[10].column(0).into_owned();
    let angle = leaf.tangent_at_base(&e.map).dot(&f).abs().min(1.0).acos();
    assert!(angle <= 2f64.to_radians(), "{angle}");
    assert!(leaf.certified && leaf.mu > 1.9);
}

#[test]
fn solenoid_pair_criterion_separates_leaves() {
    let e = lookup("solenoid").unwrap();
    let k = solenoid_k(1.0 / 16.0);
    let split = estimate_splitting(&e.map, &k.vectors(), 1, 20).unwrap();
    let x = k.vectors()[3].clone();
    let leaf = grow_unstable_leaf(&e.map, &k, &split, &x, 0.1).unwrap();
    let cone = ConeField::from_splitting(&split, 1.0, &e.map);
    let same = Vector::from_column_slice(&leaf.points[leaf.points.len() * 3 / 4]);
    assert!(check_pair_criterion(&e.map, &x, &same, &cone, 0.2, 0, 6).unwrap());
    // same θ, displaced across leaves inside the contracting disk
    let mut other = x.clone();
    other[1] += 0.02;
    assert!(!check_pair_criterion(&e.map, &x, &other, &cone, 0.2, 0, 6).unwrap());
}

#[test]
fn dominated_horseshoe_has_vertical_leaves_and_no_connection() {
    let e = lookup("henon_x_strong").unwrap();
    let cover = maximal_invariant(&e.map, &[-2.0, -2.0, -1.0], &[2.0, 2.0, 1.0], 1.0 / 64.0, 6).unwrap();
    let mut pts = Vec::new();
    for p in 1..=5 {
        for o in find_periodic(&e.map, p, &cover.vectors()).unwrap() {
            pts.extend(o.points.into_iter().map(Vector::from_vec));
        }
    }
    let k = SampledInvariantSet::from_points(&e.map, pts).unwrap();
    let split = estimate_splitting(&e.map, &k.vectors(), 1, 30).unwrap();
    let x = k.vectors()[0].clone();
    let leaf = grow_unstable_leaf(&e.map, &k, &split, &x, 0.2).unwrap();
    for p in &leaf.points {
        assert!((p[0] - x[0]).abs() < 1e-9 && (p[1] - x[1]).abs() < 1e-9, "{p:?}");
    }
    let rep = detect_connection(&e.map, &k, &split, 0.2, 0.01).unwrap();
    assert!(!rep.connected());
}
