//! Polynomial maps given by coefficient lists, loadable from config files.

use super::SmoothMap;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    fn eval(&self, x: &Vector) -> f64 {
        self.powers
            .iter()
            .enumerate()
            .fold(self.coef, |acc, (i, &p)| acc * x[i].powi(p as i32))
    }

    fn partial(&self, x: &Vector, k: usize) -> f64 {
        let pk = self.powers[k];
        if pk == 0 {
            return 0.0;
        }
        self.powers.iter().enumerate().fold(self.coef * pk as f64, |acc, (i, &p)| {
            let e = if i == k { p - 1 } else { p };
            acc * x[i].powi(e as i32)
        })
    }
}

/// One list of monomials per output coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyMap {
    pub dim: usize,
    pub coords: Vec<Vec<Monomial>>,
}

impl PolyMap {
    /// Builds from rows `[coef, p_0, …, p_{n−1}]` per output coordinate.
    pub fn from_rows(dim: usize, rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        if rows.len() != dim {
            return Err(Error::Config(format!("expected {dim} output coordinates, got {}", rows.len())));
        }
        let mut coords = Vec::with_capacity(dim);
        for terms in rows {
            let mut out = Vec::with_capacity(terms.len());
            for t in terms {
                if t.len() != dim + 1 {
                    return Err(Error::Config(format!("term {t:?} needs {} entries", dim + 1)));
                }
                let mut powers = Vec::with_capacity(dim);
                for &p in &t[1..] {
                    if p < 0.0 || p.fract() != 0.0 {
                        return Err(Error::Config(format!("bad exponent {p} in term {t:?}")));
                    }
                    powers.push(p as u32);
                }
                out.push(Monomial { coef: t[0], powers });
            }
            coords.push(out);
        }
        Ok(PolyMap { dim, coords })
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.dim, self.coords.iter().map(|ms| ms.iter().map(|m| m.eval(x)).sum()))
    }

    pub fn jacobian(&self, x: &Vector) -> Matrix {
        Matrix::from_fn(self.dim, self.dim, |i, k| self.coords[i].iter().map(|m| m.partial(x, k)).sum())
    }

    /// SmoothMap with exact polynomial Jacobian and optional polynomial inverse.
    pub fn into_map(self, name: &str, inverse: Option<PolyMap>) -> SmoothMap {
        let f = self.clone();
        let g = self;
        let mut map = SmoothMap::new(name, f.dim, move |x| f.eval(x)).with_jacobian(move |x| g.jacobian(x));
        if let Some(inv) = inverse {
            let a = inv.clone();
            map = map.with_inverse(move |x| a.eval(x)).with_inverse_jacobian(move |x| inv.jacobian(x));
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn curved2_as_polynomial() {
        let p = PolyMap::from_rows(
            2,
            &[vec![vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 1.0]], vec![vec![2.0, 0.0, 1.0], vec![1.0, 2.0, 0.0]]],
        )
        .unwrap();
        let x = Vector::from_column_slice(&[0.3, -0.2]);
        let y = p.eval(&x);
        assert_relative_eq!(y[0], 0.3 + 0.3 * -0.2, epsilon = 1e-15);
        assert_relative_eq!(y[1], -0.4 + 0.09, epsilon = 1e-15);
        let j = p.jacobian(&x);
        assert_relative_eq!(j, Matrix::from_row_slice(2, 2, &[0.8, 0.3, 0.6, 2.0]), epsilon = 1e-15);
    }

    #[test]
    fn bad_rows_rejected() {
        assert!(PolyMap::from_rows(1, &[vec![vec![1.0, 0.5]]]).is_err());
        assert!(PolyMap::from_rows(2, &[vec![vec![1.0, 1.0, 0.0]]]).is_err());
    }
}
