//! Uniform grids over base parameter boxes (dimension 1 or 2) with bilinear and
//! cubic Hermite interpolation; circle axes wrap.

use serde::{Deserialize, Serialize};

use crate::linalg::Vector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Nodes per axis; on a periodic axis node `counts[i]` coincides with node 0.
    pub counts: Vec<usize>,
    pub periodic: Vec<bool>,
}

/// Cell containing a point: lower node per axis and fractional offsets in [0,1].
#[derive(Clone, Debug)]
pub struct Locate {
    pub base: Vec<usize>,
    pub frac: Vec<f64>,
}

impl Grid {
    /// Grid with spacing at most `h`; periodic axes span exactly one period.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, h: f64, periodic: Vec<bool>) -> Self {
        let counts = (0..lo.len())
            .map(|i| {
                let cells = ((hi[i] - lo[i]) / h).ceil().max(1.0) as usize;
                if periodic[i] {
                    cells.max(3)
                } else {
                    cells + 1
                }
            })
            .collect();
        Grid { lo, hi, counts, periodic }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn spacing(&self, i: usize) -> f64 {
        let cells = if self.periodic[i] { self.counts[i] } else { self.counts[i] - 1 };
        (self.hi[i] - self.lo[i]) / cells as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|i| self.spacing(i)).fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for i in (0..self.dim()).rev() {
            f = f * self.counts[i] + idx[i];
        }
        f
    }

    pub fn unflat(&self, mut f: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for i in 0..self.dim() {
            idx[i] = f % self.counts[i];
            f /= self.counts[i];
        }
        idx
    }

    pub fn node(&self, idx: &[usize]) -> Vector {
        Vector::from_iterator(self.dim(), (0..self.dim()).map(|i| self.lo[i] + idx[i] as f64 * self.spacing(i)))
    }

    pub fn node_flat(&self, f: usize) -> Vector {
        self.node(&self.unflat(f))
    }

    pub fn nodes(&self) -> Vec<Vector> {
        (0..self.len()).map(|f| self.node_flat(f)).collect()
    }

    /// Whether the point lies in the closed box (periodic axes always do).
    pub fn inside(&self, u: &Vector) -> bool {
        (0..self.dim()).all(|i| self.periodic[i] || (u[i] >= self.lo[i] - 1e-12 && u[i] <= self.hi[i] + 1e-12))
    }

    pub fn locate(&self, u: &Vector) -> Option<Locate> {
        let mut base = Vec::with_capacity(self.dim());
        let mut frac = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let h = self.spacing(i);
            let mut t = (u[i] - self.lo[i]) / h;
            if self.periodic[i] {
                t = t.rem_euclid(self.counts[i] as f64);
                let k = (t.floor() as usize).min(self.counts[i] - 1);
                base.push(k);
                frac.push(t - k as f64);
            } else {
                let cells = (self.counts[i] - 1) as f64;
                if !(-1e-9..=cells + 1e-9).contains(&t) {
                    return None;
                }
                let t = t.clamp(0.0, cells);
                let k = (t.floor() as usize).min(self.counts[i].saturating_sub(2));
                base.push(k);
                frac.push(t - k as f64);
            }
        }
        Some(Locate { base, frac })
    }

    fn corner(&self, loc: &Locate, bits: usize) -> usize {
        let idx: Vec<usize> = (0..self.dim())
            .map(|i| {
                let k = loc.base[i] + ((bits >> i) & 1);
                if self.periodic[i] {
                    k % self.counts[i]
                } else {
                    k.min(self.counts[i] - 1)
                }
            })
            .collect();
        self.flat(&idx)
    }

    /// Bilinear (multilinear) weights over the cell corners.
    pub fn weights(&self, loc: &Locate) -> Vec<(usize, f64)> {
        (0..(1usize << self.dim()))
            .map(|bits| {
                let w: f64 = (0..self.dim())
                    .map(|i| if (bits >> i) & 1 == 1 { loc.frac[i] } else { 1.0 - loc.frac[i] })
                    .product();
                (self.corner(loc, bits), w)
            })
            .collect()
    }

    /// Multilinear interpolation of a node field with `comps` components per node.
    pub fn interp(&self, values: &[f64], comps: usize, u: &Vector) -> Option<Vector> {
        let loc = self.locate(u)?;
        let mut out = Vector::zeros(comps);
        for (f, w) in self.weights(&loc) {
            if w != 0.0 {
                for c in 0..comps {
                    out[c] += w * values[f * comps + c];
                }
            }
        }
        Some(out)
    }

    /// Neighbouring node pairs along each axis (flat indices, axis).
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for f in 0..self.len() {
            let idx = self.unflat(f);
            for i in 0..self.dim() {
                let mut j = idx.clone();
                if idx[i] + 1 < self.counts[i] {
                    j[i] += 1;
                } else if self.periodic[i] {
                    j[i] = 0;
                } else {
                    continue;
                }
                out.push((f, self.flat(&j), i));
            }
        }
        out
    }
}

fn hermite(t: f64) -> ([f64; 4], [f64; 4]) {
    let (t2, t3) = (t * t, t * t * t);
    (
        [2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2],
        [6.0 * t2 - 6.0 * t, 3.0 * t2 - 4.0 * t + 1.0, -6.0 * t2 + 6.0 * t, 3.0 * t2 - 2.0 * t],
    )
}

/// Node data for C¹ cubic Hermite interpolation of a scalar field: value, first
/// partials and (in 2D) the mixed partial, `stride` numbers per node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HermiteField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl HermiteField {
    pub fn stride(d: usize) -> usize {
        if d == 1 {
            2
        } else {
            4
        }
    }

    /// Value and gradient at `u`; `None` outside the grid.
    pub fn eval(&self, u: &Vector) -> Option<(f64, Vector)> {
        let g = &self.grid;
        let d = g.dim();
        let loc = g.locate(u)?;
        let s = Self::stride(d);
        if d == 1 {
            let h = g.spacing(0);
            let (b, db) = hermite(loc.frac[0]);
            let f0 = g.corner(&loc, 0) * s;
            let f1 = g.corner(&loc, 1) * s;
            let c = [self.data[f0], h * self.data[f0 + 1], self.data[f1], h * self.data[f1 + 1]];
            let v: f64 = (0..4).map(|i| b[i] * c[i]).sum();
            let dv: f64 = (0..4).map(|i| db[i] * c[i]).sum::<f64>() / h;
            return Some((v, Vector::from_element(1, dv)));
        }
        let (hx, hy) = (g.spacing(0), g.spacing(1));
        let (bx, dbx) = hermite(loc.frac[0]);
        let (by, dby) = hermite(loc.frac[1]);
        let mut v = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        // corner (a,b): a along x, b along y; Hermite slots 0/1 belong to the left node, 2/3 to the right
        for a in 0..2 {
            for bb in 0..2 {
                let f = g.corner(&loc, a | (bb << 1)) * s;
                let (val, fx, fy, fxy) = (self.data[f], self.data[f + 1] * hx, self.data[f + 2] * hy, self.data[f + 3] * hx * hy);
                let (ix0, ix1) = (2 * a, 2 * a + 1);
                let (iy0, iy1) = (2 * bb, 2 * bb + 1);
                let terms = [(ix0, iy0, val), (ix1, iy0, fx), (ix0, iy1, fy), (ix1, iy1, fxy)];
                for (ix, iy, c) in terms {
                    v += bx[ix] * by[iy] * c;
                    gx += dbx[ix] * by[iy] * c;
                    gy += bx[ix] * dby[iy] * c;
                }
            }
        }
        Some((v, Vector::from_column_slice(&[gx / hx, gy / hy])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_roundtrip_and_nodes() {
        let g = Grid::new(vec![-1.0, 0.0], vec![1.0, 1.0], 0.25, vec![false, true]);
        assert_eq!(g.counts, vec![9, 4]);
        for f in 0..g.len() {
            assert_eq!(g.flat(&g.unflat(f)), f);
        }
        assert!((g.spacing(1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bilinear_reproduces_affine() {
        let g = Grid::new(vec![0.0, 0.0], vec![1.0, 2.0], 0.1, vec![false, false]);
        let vals: Vec<f64> = g.nodes().iter().map(|u| 1.0 + 2.0 * u[0] - 3.0 * u[1]).collect();
        let u = Vector::from_column_slice(&[0.537, 1.234]);
        let v = g.interp(&vals, 1, &u).unwrap()[0];
        assert!((v - (1.0 + 2.0 * 0.537 - 3.0 * 1.234)).abs() < 1e-12);
        assert!(g.interp(&vals, 1, &Vector::from_column_slice(&[1.5, 0.0])).is_none());
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let g = Grid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.2, vec![false, false]);
        let f = |x: f64, y: f64| x * x * x - 2.0 * x * y * y + y;
        let fx = |x: f64, y: f64| 3.0 * x * x - 2.0 * y * y;
        let fy = |x: f64, y: f64| -4.0 * x * y + 1.0;
        let fxy = |_x: f64, y: f64| -4.0 * y;
        let mut data = Vec::new();
        for u in g.nodes() {
            data.extend([f(u[0], u[1]), fx(u[0], u[1]), fy(u[0], u[1]), fxy(u[0], u[1])]);
        }
        let field = HermiteField { grid: g, data };
        let (v, gr) = field.eval(&Vector::from_column_slice(&[0.33, -0.71])).unwrap();
        assert!((v - f(0.33, -0.71)).abs() < 1e-12);
        assert!((gr[0] - fx(0.33, -0.71)).abs() < 1e-10);
        assert!((gr[1] - fy(0.33, -0.71)).abs() < 1e-10);

        let g1 = Grid::new(vec![0.0], vec![1.0], 0.1, vec![true]);
        let mut d1 = Vec::new();
        for u in g1.nodes() {
            let t = std::f64::consts::TAU * u[0];
            d1.extend([t.sin(), std::f64::consts::TAU * t.cos()]);
        }
        let f1 = HermiteField { grid: g1, data: d1 };
        let (v, _) = f1.eval(&Vector::from_element(1, 0.97)).unwrap();
        assert!((v - (std::f64::consts::TAU * 0.97).sin()).abs() < 1e-3);
    }
}
