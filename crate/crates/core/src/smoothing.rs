//! Smooth separating functions: dyadic-cube separators and distance bumps.

use crate::dynamics::{diff_with, Coord};
use crate::error::{Error, Result};
use crate::geometry::PointIndex;
use crate::linalg::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

/// Quintic smoothstep 6t⁵ − 15t⁴ + 10t³ clamped to [0, 1].
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

pub fn smoothstep_deriv(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (t - 1.0) * (t - 1.0)
}

/// Largest slope of the quintic smoothstep.
pub const SMOOTHSTEP_MAX_SLOPE: f64 = 1.875;

/// Margin of the per-cube bump beyond the unit cube.
pub const CUBE_MARGIN: f64 = 0.1;

/// 1 on |t| ≤ 1, 0 on |t| ≥ 1 + margin, quintic in between.
fn profile(t: f64) -> (f64, f64) {
    let a = t.abs();
    if a <= 1.0 {
        return (1.0, 0.0);
    }
    if a >= 1.0 + CUBE_MARGIN {
        return (0.0, 0.0);
    }
    let s = (a - 1.0) / CUBE_MARGIN;
    (1.0 - smoothstep(s), -smoothstep_deriv(s) / CUBE_MARGIN * t.signum())
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Cube {
    pub level: u32,
    pub index: Vec<i64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DyadicCubeCover {
    pub domain_dim: usize,
    pub origin: Vec<f64>,
    pub base_side: f64,
    pub max_level: u32,
    pub cubes: Vec<Cube>,
    /// Finest-level cubes whose tripling still meets K (omitted from the cover).
    pub collar: Vec<Cube>,
}

impl DyadicCubeCover {
    pub fn side(&self, level: u32) -> f64 {
        self.base_side * 0.5f64.powi(level as i32)
    }

    pub fn center(&self, c: &Cube) -> Vector {
        let s = self.side(c.level);
        Vector::from_iterator(self.domain_dim, (0..self.domain_dim).map(|i| self.origin[i] + (c.index[i] as f64 + 0.5) * s))
    }

    /// Whether x lies in the closed cube.
    pub fn contains(&self, c: &Cube, x: &Vector) -> bool {
        let s = self.side(c.level);
        let ctr = self.center(c);
        (0..self.domain_dim).all(|i| (x[i] - ctr[i]).abs() <= 0.5 * s * (1.0 + 1e-12))
    }

    pub fn levels(&self) -> BTreeSet<u32> {
        self.cubes.iter().map(|c| c.level).collect()
    }
}

fn tripled_meets(index: &PointIndex, center: &Vector, side: f64) -> bool {
    let half = 1.5 * side;
    let r = half * (center.len() as f64).sqrt();
    index
        .within(center, r * (1.0 + 1e-12))
        .into_iter()
        .any(|i| (0..center.len()).all(|k| (index.points()[i][k] - center[k]).abs() <= half))
}

fn cover_with(k: &[Vector], lo: &[f64], hi: &[f64], base_side: f64, max_level: u32) -> Result<DyadicCubeCover> {
    if max_level > 40 {
        return Err(Error::LevelOverflow(max_level));
    }
    if k.is_empty() {
        return Err(Error::TooFewPoints("K is empty".into()));
    }
    let n = lo.len();
    let index = PointIndex::new(k.to_vec(), vec![Coord::Line; n], base_side.max(1e-12));
    let mut cover = DyadicCubeCover {
        domain_dim: n,
        origin: lo.to_vec(),
        base_side,
        max_level,
        cubes: Vec::new(),
        collar: Vec::new(),
    };
    let counts: Vec<i64> = (0..n).map(|i| (((hi[i] - lo[i]) / base_side).ceil() as i64).max(1)).collect();
    let mut frontier: Vec<Cube> = Vec::new();
    let mut idx = vec![0i64; n];
    'outer: loop {
        frontier.push(Cube { level: 0, index: idx.clone() });
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < counts[d] {
                continue 'outer;
            }
            idx[d] = 0;
            d += 1;
        }
        break;
    }
    while let Some(c) = frontier.pop() {
        let ctr = cover.center(&c);
        let s = cover.side(c.level);
        if (0..n).any(|i| ctr[i] - 0.5 * s >= hi[i] || ctr[i] + 0.5 * s <= lo[i]) {
            continue;
        }
        if !tripled_meets(&index, &ctr, s) {
            cover.cubes.push(c);
        } else if c.level == max_level {
            cover.collar.push(c);
        } else {
            for mask in 0..(1u32 << n) {
                let child: Vec<i64> = (0..n).map(|i| 2 * c.index[i] + ((mask >> i) & 1) as i64).collect();
                frontier.push(Cube { level: c.level + 1, index: child });
            }
        }
    }
    cover.cubes.sort();
    cover.collar.sort();
    Ok(cover)
}

/// Dyadic cubes of the box whose tripling avoids K while their parent's tripling meets K.
pub fn build_cover(k: &[Vector], lo: &[f64], hi: &[f64], max_level: u32) -> Result<DyadicCubeCover> {
    let base = (0..lo.len()).map(|i| hi[i] - lo[i]).fold(0.0, f64::max);
    cover_with(k, lo, hi, base, max_level)
}

/// A scalar field with gradient.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &Vector) -> f64;
    fn grad(&self, x: &Vector) -> Vector;
}

/// Σ_C a_k h_C over a cover, with a_k = 4^{-k}.
struct CubeSum {
    cover: DyadicCubeCover,
    lookup: HashMap<Cube, ()>,
    levels: Vec<u32>,
}

impl CubeSum {
    fn new(cover: DyadicCubeCover) -> Self {
        let lookup = cover.cubes.iter().map(|c| (c.clone(), ())).collect();
        let levels = cover.levels().into_iter().collect();
        CubeSum { cover, lookup, levels }
    }

    fn eval(&self, x: &Vector) -> (f64, Vector) {
        let n = self.cover.domain_dim;
        let mut val = 0.0;
        let mut grad = Vector::zeros(n);
        for &lv in &self.levels {
            let s = self.cover.side(lv);
            let a = 0.25f64.powi(lv as i32);
            let base: Vec<i64> = (0..n).map(|i| ((x[i] - self.cover.origin[i]) / s).floor() as i64).collect();
            for mask in 0..3usize.pow(n as u32) {
                let mut m = mask;
                let mut index = Vec::with_capacity(n);
                for i in 0..n {
                    index.push(base[i] + (m % 3) as i64 - 1);
                    m /= 3;
                }
                let cube = Cube { level: lv, index };
                if !self.lookup.contains_key(&cube) {
                    continue;
                }
                let c = self.cover.center(&cube);
                let mut vals = Vec::with_capacity(n);
                let mut ders = Vec::with_capacity(n);
                for i in 0..n {
                    let (p, dp) = profile((x[i] - c[i]) * 2.0 / s);
                    vals.push(p);
                    ders.push(dp * 2.0 / s);
                }
                let prod: f64 = vals.iter().product();
                if prod == 0.0 && ders.iter().all(|d| *d == 0.0) {
                    continue;
                }
                val += a * prod;
                for i in 0..n {
                    let mut g = a * ders[i];
                    for j in 0..n {
                        if j != i {
                            g *= vals[j];
                        }
                    }
                    grad[i] += g;
                }
            }
        }
        (val, grad)
    }
}

/// φ = φ_K/(φ_K + φ_L).
struct DyadicSeparator {
    k_sum: CubeSum,
    l_sum: CubeSum,
}

impl ScalarField for DyadicSeparator {
    fn value(&self, x: &Vector) -> f64 {
        let (a, _) = self.k_sum.eval(x);
        let (b, _) = self.l_sum.eval(x);
        if a + b == 0.0 {
            return 0.0;
        }
        a / (a + b)
    }

    fn grad(&self, x: &Vector) -> Vector {
        let (a, ga) = self.k_sum.eval(x);
        let (b, gb) = self.l_sum.eval(x);
        let s = a + b;
        if s == 0.0 {
            return Vector::zeros(x.len());
        }
        (ga * b - gb * a) / (s * s)
    }
}

/// 1 − smoothstep((d(x,K) − inner)/(outer − inner)).
struct DistanceBump {
    index: PointIndex,
    topology: Vec<Coord>,
    inner: f64,
    outer: f64,
}

impl DistanceBump {
    fn nearest(&self, x: &Vector) -> Option<(usize, f64)> {
        let cand = self.index.within(x, self.outer);
        let mut best: Option<(usize, f64)> = None;
        for i in cand {
            let d = diff_with(&self.topology, x, &self.index.points()[i]).norm();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }
}

impl ScalarField for DistanceBump {
    fn value(&self, x: &Vector) -> f64 {
        match self.nearest(x) {
            None => 0.0,
            Some((_, d)) => 1.0 - smoothstep((d - self.inner) / (self.outer - self.inner)),
        }
    }

    fn grad(&self, x: &Vector) -> Vector {
        match self.nearest(x) {
            Some((i, d)) if d > 0.0 => {
                let w = self.outer - self.inner;
                let g = -smoothstep_deriv((d - self.inner) / w) / w;
                diff_with(&self.topology, x, &self.index.points()[i]) * (g / d)
            }
            _ => Vector::zeros(x.len()),
        }
    }
}

#[derive(Clone)]
pub struct SmoothSeparator {
    field: Arc<dyn ScalarField>,
    pub derivative_bound: f64,
    /// Largest gradient norm found on the verification sample.
    pub measured_grad_sup: f64,
    /// Implementation constant of the bound C_impl/d(K,L); zero for distance bumps.
    pub c_impl: f64,
    pub k_ref: Vec<Vector>,
    pub l_ref: Vec<Vector>,
}

impl std::fmt::Debug for SmoothSeparator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothSeparator")
            .field("derivative_bound", &self.derivative_bound)
            .field("measured_grad_sup", &self.measured_grad_sup)
            .field("c_impl", &self.c_impl)
            .finish()
    }
}

impl SmoothSeparator {
    pub fn eval(&self, x: &Vector) -> f64 {
        self.field.value(x)
    }

    pub fn grad(&self, x: &Vector) -> Vector {
        self.field.grad(x)
    }
}

/// Per-dimension constant C_impl with ‖∇φ‖·d(K,L) ≤ C_impl.
/// Measured on the reference pair K={−2e₁}, L={2e₁} in [−3,3]^n with a 1.5 margin;
/// beyond dimension 3 the closed-form estimate 2·(15/8)/margin·2^n·4 is used.
pub fn c_impl(dim: usize) -> f64 {
    match dim {
        1 => 85.0,
        2 => 95.0,
        3 => 110.0,
        n => 2.0 * SMOOTHSTEP_MAX_SLOPE / CUBE_MARGIN * 2f64.powi(n as i32) * 4.0,
    }
}

fn set_distance(k: &[Vector], l: &[Vector]) -> f64 {
    let mut d = f64::INFINITY;
    for a in k {
        for b in l {
            d = d.min((a - b).norm());
        }
    }
    d
}

/// Smooth φ with φ⁻¹(0) ⊇ K, φ⁻¹(1) ⊇ L and ‖∇φ‖ ≤ C_impl/d(K,L).
pub fn build_separator(k: &[Vector], l: &[Vector], lo: &[f64], hi: &[f64]) -> Result<SmoothSeparator> {
    let d = set_distance(k, l);
    if !(d > 0.0) {
        return Err(Error::SetsIntersect);
    }
    let n = lo.len();
    let base = 0.5 * d;
    let max_level = 14u32;
    let kc = cover_with(k, lo, hi, base, max_level)?;
    let lc = cover_with(l, lo, hi, base, max_level)?;
    let field = DyadicSeparator { k_sum: CubeSum::new(kc), l_sum: CubeSum::new(lc) };
    let c = c_impl(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut sup: f64 = 0.0;
    let samples = if n == 1 { 20_000 } else { 20_000 / n };
    for _ in 0..samples {
        let x = Vector::from_iterator(n, (0..n).map(|i| rng.gen_range(lo[i]..hi[i])));
        sup = sup.max(field.grad(&x).norm());
    }
    for p in k.iter().chain(l.iter()) {
        for _ in 0..16 {
            let r = d * 0.5 * rng.gen::<f64>().powi(3);
            let dir = Vector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0)));
            let x = p + dir.normalize() * r;
            if (0..n).all(|i| x[i] >= lo[i] && x[i] <= hi[i]) {
                sup = sup.max(field.grad(&x).norm());
            }
        }
    }
    Ok(SmoothSeparator {
        field: Arc::new(field),
        derivative_bound: c / d,
        measured_grad_sup: sup,
        c_impl: c,
        k_ref: k.to_vec(),
        l_ref: l.to_vec(),
    })
}

/// 1 on {d(·,K) ≤ inner}, 0 on {d(·,K) ≥ outer}, quintic in the distance between.
pub fn bump_from_distance(k: &[Vector], inner: f64, outer: f64, topology: &[Coord]) -> Result<SmoothSeparator> {
    if !(inner >= 0.0 && inner < outer) {
        return Err(Error::BadRadii { inner, outer });
    }
    if k.is_empty() {
        return Err(Error::TooFewPoints("K is empty".into()));
    }
    let index = PointIndex::new(k.to_vec(), topology.to_vec(), outer);
    let field = DistanceBump { index, topology: topology.to_vec(), inner, outer };
    Ok(SmoothSeparator {
        field: Arc::new(field),
        derivative_bound: SMOOTHSTEP_MAX_SLOPE / (outer - inner),
        measured_grad_sup: f64::NAN,
        c_impl: 0.0,
        k_ref: k.to_vec(),
        l_ref: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn p1(x: f64) -> Vector {
        Vector::from_column_slice(&[x])
    }

    /// Independent enumeration of the selection rule: every dyadic cube of
    /// every level is tested directly, without recursion.
    fn brute_cover_1d(k: f64, lo: f64, hi: f64, max_level: u32) -> Vec<(u32, i64)> {
        let base = hi - lo;
        let meets = |lv: u32, i: i64| {
            let s = base / 2f64.powi(lv as i32);
            let c = lo + (i as f64 + 0.5) * s;
            (k - c).abs() <= 1.5 * s
        };
        let mut out = Vec::new();
        for lv in 0..=max_level {
            let count = 1i64 << lv;
            for i in 0..count {
                let parent_ok = lv == 0 || meets(lv - 1, i / 2);
                if !meets(lv, i) && parent_ok {
                    out.push((lv, i));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn cover_of_origin_matches_brute_force() {
        let cov = build_cover(&[p1(0.0)], &[-2.0], &[2.0], 6).unwrap();
        let got: Vec<(u32, i64)> = cov.cubes.iter().map(|c| (c.level, c.index[0])).collect();
        assert_eq!(got, brute_cover_1d(0.0, -2.0, 2.0, 6));
        // level of the cube containing ±2^{-j} grows linearly in j
        let mut prev = None;
        for j in 0..4 {
            let x = 2f64.powi(-j);
            let lv = cov.cubes.iter().find(|c| cov.contains(c, &p1(x)) && cov.center(c)[0] < x + 1e-12 + cov.side(c.level) / 2.0).map(|c| c.level).unwrap();
            if let Some(p) = prev {
                assert_eq!(lv, p + 1);
            }
            prev = Some(lv);
        }
    }

    #[test]
    fn cover_of_full_box_is_empty() {
        let k: Vec<Vector> = (0..=64).map(|i| p1(-2.0 + 4.0 * i as f64 / 64.0)).collect();
        let cov = build_cover(&k, &[-2.0], &[2.0], 3).unwrap();
        assert!(cov.cubes.is_empty());
    }

    #[test]
    fn cover_symmetric_under_reflection() {
        let k = vec![Vector::from_column_slice(&[-1.0, 0.0]), Vector::from_column_slice(&[1.0, 0.0])];
        let cov = build_cover(&k, &[-2.0, -2.0], &[2.0, 2.0], 5).unwrap();
        let mut cells: Vec<(u32, Vec<i64>)> = cov.cubes.iter().map(|c| (c.level, c.index.clone())).collect();
        let mut mirrored: Vec<(u32, Vec<i64>)> = cov
            .cubes
            .iter()
            .map(|c| {
                let count = 1i64 << c.level;
                (c.level, vec![count - 1 - c.index[0], c.index[1]])
            })
            .collect();
        cells.sort();
        mirrored.sort();
        assert_eq!(cells, mirrored);
    }

    #[test]
    fn adjacent_cubes_differ_by_at_most_one_level() {
        for n in 1..=3usize {
            let mut k = vec![Vector::zeros(n)];
            k[0][0] = -0.3;
            let cov = build_cover(&k, &vec![-3.0; n], &vec![3.0; n], 6).unwrap();
            for a in &cov.cubes {
                for b in &cov.cubes {
                    let (ca, cb) = (cov.center(a), cov.center(b));
                    let reach = (cov.side(a.level) + cov.side(b.level)) / 2.0 + 1e-12;
                    if (0..n).all(|i| (ca[i] - cb[i]).abs() <= reach) {
                        assert!((a.level as i64 - b.level as i64).abs() <= 1);
                    }
                }
            }
        }
    }

    #[test]
    fn level_overflow() {
        assert!(matches!(build_cover(&[p1(0.0)], &[-1.0], &[1.0], 41), Err(Error::LevelOverflow(41))));
    }

    #[test]
    fn separator_defining_values() {
        let s = build_separator(&[p1(0.0)], &[p1(-1.0), p1(1.0)], &[-1.5], &[1.5]).unwrap();
        assert_eq!(s.eval(&p1(0.0)), 0.0);
        assert_eq!(s.eval(&p1(1.0)), 1.0);
        assert_eq!(s.eval(&p1(-1.0)), 1.0);
        for x in [-0.5, 0.5] {
            let v = s.eval(&p1(x));
            assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }

    #[test]
    fn separator_rejects_intersecting_sets() {
        assert!(matches!(build_separator(&[p1(0.0)], &[p1(0.0)], &[-1.0], &[1.0]), Err(Error::SetsIntersect)));
    }

    #[test]
    fn separator_gradient_within_bound_on_dense_grid() {
        let s = build_separator(&[p1(-2.0)], &[p1(2.0)], &[-3.0], &[3.0]).unwrap();
        let mut sup: f64 = 0.0;
        for i in 0..=200_000 {
            let x = -3.0 + 6.0 * i as f64 / 200_000.0;
            sup = sup.max(s.grad(&p1(x)).norm());
        }
        assert!(sup * 4.0 <= s.c_impl, "measured {} vs C_impl {}", sup * 4.0, s.c_impl);
    }

    #[test]
    fn bump_values_and_slope() {
        let b = bump_from_distance(&[p1(0.0)], 0.5, 1.0, &[Coord::Line]).unwrap();
        assert_eq!(b.eval(&p1(0.25)), 1.0);
        assert_eq!(b.eval(&p1(-0.25)), 1.0);
        assert_eq!(b.eval(&p1(2.0)), 0.0);
        let mut sup: f64 = 0.0;
        for i in 0..=100_000 {
            let x = -1.5 + 3.0 * i as f64 / 100_000.0;
            sup = sup.max(b.grad(&p1(x)).norm());
        }
        assert!(sup <= 8.0 * (1.0 + 1e-6));
        assert!(matches!(bump_from_distance(&[p1(0.0)], 1.0, 1.0, &[Coord::Line]), Err(Error::BadRadii { .. })));
    }

    #[test]
    fn separator_gradient_matches_finite_differences_2d() {
        let k = vec![Vector::from_column_slice(&[-0.7, 0.1])];
        let l = vec![Vector::from_column_slice(&[0.8, -0.2])];
        let s = build_separator(&k, &l, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = Vector::from_column_slice(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let g = s.grad(&x);
            for i in 0..2 {
                let h = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (s.eval(&xp) - s.eval(&xm)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-4 * (1.0 + g[i].abs()), "{fd} vs {}", g[i]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn separator_values_in_unit_interval(a in -2.5f64..-0.5, b in 0.5f64..2.5, x in -3.0f64..3.0) {
            let s = build_separator(&[p1(a)], &[p1(b)], &[-3.0], &[3.0]).unwrap();
            let v = s.eval(&p1(x));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(s.eval(&p1(a)), 0.0);
            prop_assert_eq!(s.eval(&p1(b)), 1.0);
            prop_assert!(s.grad(&p1(x)).norm() * (b - a) <= s.c_impl);
        }

        #[test]
        fn cover_points_lie_in_a_cube_or_collar(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let k = vec![Vector::from_column_slice(&[0.3, -0.4])];
            let cov = build_cover(&k, &[-2.0, -2.0], &[2.0, 2.0], 6).unwrap();
            let p = Vector::from_column_slice(&[x, y]);
            let hits = cov.cubes.iter().chain(cov.collar.iter()).filter(|c| cov.contains(c, &p)).count();
            prop_assert!(hits >= 1);
        }
    }
}
