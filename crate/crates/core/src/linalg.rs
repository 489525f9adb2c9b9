//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Orthonormal basis of the column span, via thin QR with a positive R diagonal.
pub fn orthonormalize(m: &Matrix) -> Matrix {
    let (q, r) = m.clone().qr().unpack();
    let mut q = q.columns(0, m.ncols()).into_owned();
    for j in 0..m.ncols() {
        if r[(j, j)] < 0.0 {
            let mut c = q.column_mut(j);
            c.neg_mut();
        }
    }
    q
}

/// Orthonormal basis of the orthogonal complement of an orthonormal frame.
pub fn complement(frame: &Matrix) -> Matrix {
    let n = frame.nrows();
    let k = frame.ncols();
    let mut basis: Vec<Vector> = (0..k).map(|j| frame.column(j).into_owned()).collect();
    let mut out = Vec::with_capacity(n - k);
    while out.len() < n - k {
        let mut best: Option<(f64, Vector)> = None;
        for i in 0..n {
            let mut v = Vector::zeros(n);
            v[i] = 1.0;
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
            let nv = v.norm();
            if best.as_ref().map_or(true, |(bn, _)| nv > *bn + 1e-12) {
                best = Some((nv, v));
            }
        }
        let (nv, mut v) = best.expect("nonempty");
        v /= nv;
        // second pass for numerical orthogonality
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        v.normalize_mut();
        basis.push(v.clone());
        out.push(v);
    }
    if out.is_empty() {
        Matrix::zeros(n, 0)
    } else {
        Matrix::from_columns(&out)
    }
}

/// Sine of the largest principal angle between two equal-dimension orthonormal frames.
pub fn subspace_sin_angle(a: &Matrix, b: &Matrix) -> f64 {
    if a.ncols() == 0 {
        return 0.0;
    }
    let resid = a - b * (b.transpose() * a);
    spectral_norm(&resid).min(1.0)
}

/// Largest principal angle (radians) between two equal-dimension orthonormal frames.
pub fn subspace_angle(a: &Matrix, b: &Matrix) -> f64 {
    subspace_sin_angle(a, b).asin()
}

/// Smallest principal angle (radians) between two orthonormal frames.
pub fn min_principal_angle(a: &Matrix, b: &Matrix) -> f64 {
    let m = a.transpose() * b;
    let s = m.singular_values();
    let c = s.iter().cloned().fold(0.0, f64::max).min(1.0);
    c.acos()
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn min_singular(m: &Matrix) -> f64 {
    m.singular_values().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Coefficients (a, b) with v = E a + F b.
pub fn decompose(v: &Vector, e: &Matrix, f: &Matrix) -> (Vector, Vector) {
    let mut cols: Vec<Vector> = (0..e.ncols()).map(|j| e.column(j).into_owned()).collect();
    cols.extend((0..f.ncols()).map(|j| f.column(j).into_owned()));
    let m = Matrix::from_columns(&cols);
    let c = m.lu().solve(v).unwrap_or_else(|| Vector::zeros(v.len()));
    (c.rows(0, e.ncols()).into_owned(), c.rows(e.ncols(), f.ncols()).into_owned())
}

/// Angle of a planar direction folded into [0, pi).
pub fn line_angle(dx: f64, dy: f64) -> f64 {
    let mut a = dy.atan2(dx);
    if a < 0.0 {
        a += std::f64::consts::PI;
    }
    if a >= std::f64::consts::PI {
        a -= std::f64::consts::PI;
    }
    a
}

/// Distance between two line angles modulo pi.
pub fn line_angle_distance(a: f64, b: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let d = (a - b).rem_euclid(pi);
    d.min(pi - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let f = orthonormalize(&Matrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]));
        let c = complement(&f);
        assert_eq!(c.ncols(), 2);
        let g = c.transpose() * &c;
        assert_relative_eq!(g, Matrix::identity(2, 2), epsilon = 1e-14);
        assert!((f.transpose() * &c).norm() < 1e-14);
    }

    #[test]
    fn angle_between_axis_lines() {
        let a = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let b = orthonormalize(&Matrix::from_column_slice(2, 1, &[1.0, 1.0]));
        assert_relative_eq!(subspace_angle(&a, &b), std::f64::consts::FRAC_PI_4, epsilon = 1e-14);
        assert_relative_eq!(min_principal_angle(&a, &b), std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
    }

    #[test]
    fn decompose_recovers_coefficients() {
        let e = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let f = orthonormalize(&Matrix::from_column_slice(2, 1, &[1.0, 1.0]));
        let v = &e * 2.0 + &f * 3.0;
        let (a, b) = decompose(&v.column(0).into_owned(), &e, &f);
        assert_relative_eq!(a[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(b[0], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn line_angles_fold() {
        assert_relative_eq!(line_angle(-1.0, 0.0), 0.0, epsilon = 1e-15);
        assert_relative_eq!(line_angle(0.0, -1.0), std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
        assert!(line_angle_distance(0.01, std::f64::consts::PI - 0.01) < 0.0201);
    }
}
