//! Dyadic-cube separator between two point clouds and the distance bump.

use center_manifold::dynamics::Coord;
use center_manifold::linalg::Vector;
use center_manifold::smoothing::{build_cover, build_separator, bump_from_distance};

fn v(s: &[f64]) -> Vector {
    Vector::from_column_slice(s)
}

fn main() {
    let k = vec![v(&[-2.0])];
    let l = vec![v(&[2.0])];
    let sep = build_separator(&k, &l, &[-3.0], &[3.0]).unwrap();
    println!("φ(−2) = {}, φ(2) = {}, φ(0) = {:.6}", sep.eval(&k[0]), sep.eval(&l[0]), sep.eval(&v(&[0.0])));
    println!("sup |φ'|·d(K,L) = {:.3} ≤ C_impl = {}", sep.measured_grad_sup * 4.0, sep.c_impl);

    let cover = build_cover(&[v(&[0.0])], &[-2.0], &[2.0], 6).unwrap();
    println!("dyadic cover of [−2,2] \\ {{0}}: {} cubes at levels {:?}", cover.cubes.len(), cover.levels());
    for c in cover.cubes.iter().take(6) {
        println!("  level {} centre {:+.5}", c.level, cover.center(c)[0]);
    }

    let bump = bump_from_distance(&[v(&[0.0])], 0.5, 1.0, &[Coord::Line]).unwrap();
    let sup = (0..=4000).map(|i| bump.grad(&v(&[-2.0 + i as f64 * 1e-3])).norm()).fold(0.0, f64::max);
    println!("bump: value at 0.25 = {}, at 2 = {}, sampled sup |d/dx| = {sup:.4} ≤ 8", bump.eval(&v(&[0.25])), bump.eval(&v(&[2.0])));
}
