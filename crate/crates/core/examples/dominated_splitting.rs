//! Dominated splitting, cone contraction certificates and cone thinning.

use center_manifold::cones::{check_contraction, cone_thinness, estimate_splitting, orbit_segments, ConeField};
use center_manifold::dynamics::lookup;
use center_manifold::invariant_set::{find_periodic, maximal_invariant};
use center_manifold::linalg::{Matrix, Vector};

fn main() {
    let e = lookup("linear3").unwrap();
    let k = vec![Vector::zeros(3)];
    let split = estimate_splitting(&e.map, &k, 1, 30).unwrap();
    println!("linear3: λ_F = {:.6}, λ_E = {:.6}", split.lambda_f, split.lambda_e);
    let axis = Matrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    let complement = Matrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let cone = ConeField::constant(axis, complement, 1.0);
    let segments = orbit_segments(&e.map, &k, 21).unwrap();
    let cert = check_contraction(&e.map, &cone, &segments, 1.0, 10).unwrap();
    println!("linear3: contraction λ = {:.6} (pass {})", cert.lambda, cert.pass);
    for n in [0, 1, 5, 10, 20] {
        let t = cone_thinness(&e.map, &cone, &k[0], n).unwrap();
        println!("  thinness after {n:2} steps: {t:.6e}  (3^-n = {:.6e})", 3f64.powi(-(n as i32)));
    }

    let e = lookup("henon_x_strong").unwrap();
    let cover = maximal_invariant(&e.map, &[-2.0, -2.0, -1.0], &[2.0, 2.0, 1.0], 1.0 / 64.0, 6).unwrap();
    let mut k = Vec::new();
    for p in 1..=4 {
        for o in find_periodic(&e.map, p, &cover.vectors()).unwrap() {
            k.extend(o.points.iter().map(|q| Vector::from_column_slice(q)));
        }
    }
    let split = estimate_splitting(&e.map, &k, 1, 30).unwrap();
    println!("henon_x_strong on {} periodic points: λ_F = {:.4}, λ_E = {:.4}, gap {:.4}", k.len(), split.lambda_f, split.lambda_e, split.gap);
    let cone = ConeField::from_splitting(&split, 0.5, &e.map);
    let segments = orbit_segments(&e.map, &k, 11).unwrap();
    let cert = check_contraction(&e.map, &cone, &segments, 1.0, 5).unwrap();
    println!("henon_x_strong: contraction λ = {:.4} (pass {})", cert.lambda, cert.pass);
}
