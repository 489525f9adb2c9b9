//! Smooth maps on flat ambient spaces (products of lines and circles).

mod poly;
mod registry;

pub use poly::{PolyMap, Monomial};
pub use registry::{builtin_registry, henon_fixed_point, lookup, SystemEntry};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub type VecFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type MatFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

/// Per-coordinate topology.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Coord {
    Line,
    Circle(f64),
}

/// Wrap coordinates into their fundamental domains.
pub fn wrap_with(topology: &[Coord], x: &Vector) -> Vector {
    let mut y = x.clone();
    for (i, c) in topology.iter().enumerate() {
        if let Coord::Circle(p) = c {
            y[i] = y[i].rem_euclid(*p);
            if y[i] >= *p {
                y[i] -= *p;
            }
        }
    }
    y
}

/// Difference a − b with circle coordinates taken to the nearest representative.
pub fn diff_with(topology: &[Coord], a: &Vector, b: &Vector) -> Vector {
    let mut d = a - b;
    for (i, c) in topology.iter().enumerate() {
        if let Coord::Circle(p) = c {
            d[i] -= p * (d[i] / p).round();
        }
    }
    d
}

#[derive(Clone)]
pub struct SmoothMap {
    pub name: String,
    pub dim: usize,
    pub topology: Vec<Coord>,
    forward: VecFn,
    inverse: Option<VecFn>,
    jacobian: Option<MatFn>,
    inverse_jacobian: Option<MatFn>,
}

impl std::fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothMap")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("topology", &self.topology)
            .field("inverse", &self.inverse.is_some())
            .field("jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl SmoothMap {
    pub fn new(name: &str, dim: usize, forward: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        SmoothMap {
            name: name.to_string(),
            dim,
            topology: vec![Coord::Line; dim],
            forward: Arc::new(forward),
            inverse: None,
            jacobian: None,
            inverse_jacobian: None,
        }
    }

    pub fn with_inverse(mut self, inv: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.inverse = Some(Arc::new(inv));
        self
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_inverse_jacobian(mut self, jac: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.inverse_jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_topology(mut self, topology: Vec<Coord>) -> Self {
        assert_eq!(topology.len(), self.dim);
        self.topology = topology;
        self
    }

    /// Linear map x ↦ A x with exact inverse and Jacobians.
    pub fn linear(name: &str, a: Matrix) -> Result<Self> {
        let n = a.nrows();
        let ainv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Config(format!("linear map {name} is singular")))?;
        let (a1, a2, b1, b2) = (a.clone(), a.clone(), ainv.clone(), ainv.clone());
        Ok(SmoothMap::new(name, n, move |x| &a1 * x)
            .with_inverse(move |x| &b1 * x)
            .with_jacobian(move |_| a2.clone())
            .with_inverse_jacobian(move |_| b2.clone()))
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn wrap(&self, x: &Vector) -> Vector {
        wrap_with(&self.topology, x)
    }

    pub fn diff(&self, a: &Vector, b: &Vector) -> Vector {
        diff_with(&self.topology, a, b)
    }

    pub fn dist(&self, a: &Vector, b: &Vector) -> f64 {
        self.diff(a, b).norm()
    }

    pub fn is_periodic(&self) -> bool {
        self.topology.iter().any(|c| matches!(c, Coord::Circle(_)))
    }

    fn check(x: Vector) -> Result<Vector> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::NonFinite(format!("{:?}", x.as_slice())))
        }
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        Self::check(self.wrap(&(self.forward)(x)))
    }

    pub fn apply_inverse(&self, x: &Vector) -> Result<Vector> {
        let inv = self.inverse.as_ref().ok_or(Error::MissingInverse)?;
        Self::check(self.wrap(&inv(x)))
    }

    /// f^steps(x); negative steps use the inverse.
    pub fn evaluate(&self, x: &Vector, steps: i64) -> Result<Vector> {
        if steps < 0 && self.inverse.is_none() {
            return Err(Error::MissingInverse);
        }
        let mut y = self.wrap(x);
        for _ in 0..steps.unsigned_abs() {
            y = if steps > 0 { self.apply(&y)? } else { self.apply_inverse(&y)? };
        }
        Ok(y)
    }

    /// Central finite differences with step 1e-5·max(1,‖x‖).
    pub fn fd_jacobian(&self, f: &VecFn, x: &Vector) -> Result<Matrix> {
        let n = self.dim;
        let h = 1e-5 * x.norm().max(1.0);
        let mut j = Matrix::zeros(n, n);
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let d = self.diff(&f(&xp), &f(&xm)) / (2.0 * h);
            j.set_column(i, &d);
        }
        if j.iter().all(|v| v.is_finite()) {
            Ok(j)
        } else {
            Err(Error::NonFinite("jacobian".into()))
        }
    }

    pub fn jacobian_at(&self, x: &Vector) -> Result<Matrix> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("jacobian argument".into()));
        }
        match &self.jacobian {
            Some(j) => {
                let m = j(x);
                if m.iter().all(|v| v.is_finite()) {
                    Ok(m)
                } else {
                    Err(Error::NonFinite("jacobian".into()))
                }
            }
            None => self.fd_jacobian(&self.forward, x),
        }
    }

    /// Jacobian of the inverse at y: analytic if provided, else Df(f⁻¹(y))⁻¹.
    pub fn inverse_jacobian_at(&self, y: &Vector) -> Result<Matrix> {
        if let Some(j) = &self.inverse_jacobian {
            return Ok(j(y));
        }
        let x = self.apply_inverse(y)?;
        self.jacobian_at(&x)?
            .try_inverse()
            .ok_or_else(|| Error::NonFinite("singular jacobian".into()))
    }

    /// Product of Jacobians along the orbit x, f(x), …: D f^n(x).
    pub fn jacobian_power(&self, x: &Vector, n: i64) -> Result<Matrix> {
        let mut m = Matrix::identity(self.dim, self.dim);
        let mut y = self.wrap(x);
        for _ in 0..n.unsigned_abs() {
            if n > 0 {
                m = self.jacobian_at(&y)? * m;
                y = self.apply(&y)?;
            } else {
                m = self.inverse_jacobian_at(&y)? * m;
                y = self.apply_inverse(&y)?;
            }
        }
        Ok(m)
    }

    /// The map with forward and inverse exchanged.
    pub fn inverse_map(&self) -> Result<SmoothMap> {
        let inv = self.inverse.clone().ok_or(Error::MissingInverse)?;
        let me = self.clone();
        let ij: MatFn = match &self.inverse_jacobian {
            Some(j) => j.clone(),
            None => Arc::new(move |y: &Vector| {
                me.inverse_jacobian_at(y).unwrap_or_else(|_| Matrix::from_element(me.dim, me.dim, f64::NAN))
            }),
        };
        let me2 = self.clone();
        let fj: MatFn = match &self.jacobian {
            Some(j) => j.clone(),
            None => Arc::new(move |x: &Vector| {
                me2.jacobian_at(x).unwrap_or_else(|_| Matrix::from_element(me2.dim, me2.dim, f64::NAN))
            }),
        };
        Ok(SmoothMap {
            name: format!("{}^-1", self.name),
            dim: self.dim,
            topology: self.topology.clone(),
            forward: inv,
            inverse: Some(self.forward.clone()),
            jacobian: Some(ij),
            inverse_jacobian: Some(fj),
        })
    }

    /// Raw forward closure (no wrapping), for composition.
    pub fn forward_fn(&self) -> VecFn {
        self.forward.clone()
    }

    pub fn inverse_fn(&self) -> Option<VecFn> {
        self.inverse.clone()
    }
}
