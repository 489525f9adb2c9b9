//! Registry systems, round trips through the inverse, and a user polynomial map.

use center_manifold::dynamics::{builtin_registry, PolyMap};
use center_manifold::linalg::Vector;

fn main() {
    for e in builtin_registry() {
        let mid: Vec<f64> = e.working_box.iter().map(|(a, b)| a + 0.3 * (b - a)).collect();
        let x = Vector::from_column_slice(&mid);
        let y = e.map.apply(&x).expect("forward image");
        let back = e.map.apply_inverse(&y).map(|z| e.map.dist(&z, &x));
        println!(
            "{:24} dim {} strong {} inverse {:5} round trip {:?}",
            e.name,
            e.map.dim,
            e.strong_dim,
            e.map.has_inverse(),
            back.ok()
        );
    }

    // f(x, y) = (x, 2y + x²) and its inverse (x, (y − x²)/2)
    let f = PolyMap::from_rows(2, &[vec![vec![1.0, 1.0, 0.0]], vec![vec![2.0, 0.0, 1.0], vec![1.0, 2.0, 0.0]]]).unwrap();
    let g = PolyMap::from_rows(2, &[vec![vec![1.0, 1.0, 0.0]], vec![vec![0.5, 0.0, 1.0], vec![-0.5, 2.0, 0.0]]]).unwrap();
    let map = f.into_map("shear2", Some(g));
    let x = Vector::from_column_slice(&[0.3, -0.1]);
    let y = map.apply(&x).unwrap();
    println!("shear2: f(x) = {:?}, f⁻¹(f(x)) − x = {:.1e}", y.as_slice(), (map.apply_inverse(&y).unwrap() - x).norm());
    println!("shear2 Jacobian at x:\n{}", map.jacobian_at(&Vector::from_column_slice(&[0.3, -0.1])).unwrap());
}
