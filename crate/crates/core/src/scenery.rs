//! Heavy-tailed i.i.d. scenery fields on `Z^d`, evaluated lazily per site.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::lattice::{LatticeBox, Point};
use crate::rng::{key_to_open_unit, site_key};

/// Marginal law of the scenery.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum Law {
    /// `P(z > r) = r^{-alpha}` for `r >= 1`.
    ParetoUnit,
    /// `min(z, cap)` with `z` from `ParetoUnit`.
    CappedPareto { cap: f64 },
    Constant { value: f64 },
    /// `1{z >= 1}`. With `shifted`, `z` follows `P(z > r) = (1 + r)^{-alpha}`
    /// on `[0, inf)`, otherwise `ParetoUnit` (which makes the indicator identically 1).
    BernoulliIndicator { shifted: bool },
}

/// Deterministic scenery: `z(x)` is a pure function of `(seed, law, alpha, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneryField {
    pub seed: u64,
    pub alpha: f64,
    pub dimension: usize,
    #[serde(flatten)]
    pub law: Law,
}

impl SceneryField {
    pub fn new(seed: u64, alpha: f64, dimension: usize, law: Law) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return arg_err(format!("alpha must be positive, got {alpha}"));
        }
        if dimension == 0 || dimension > crate::lattice::MAX_DIM {
            return arg_err(format!("scenery dimension {dimension} unsupported"));
        }
        match law {
            Law::CappedPareto { cap } if !(cap >= 1.0) => {
                return arg_err(format!("cap must be >= 1, got {cap}"))
            }
            Law::Constant { value } if !(value >= 0.0 && value.is_finite()) => {
                return arg_err(format!("constant scenery must be finite and >= 0, got {value}"))
            }
            _ => {}
        }
        Ok(SceneryField { seed, alpha, dimension, law })
    }

    pub fn pareto(seed: u64, alpha: f64, dimension: usize) -> Result<Self> {
        Self::new(seed, alpha, dimension, Law::ParetoUnit)
    }

    pub fn capped(seed: u64, alpha: f64, dimension: usize, cap: f64) -> Result<Self> {
        Self::new(seed, alpha, dimension, Law::CappedPareto { cap })
    }

    pub fn constant(value: f64, dimension: usize) -> Result<Self> {
        Self::new(0, 1.0, dimension, Law::Constant { value })
    }

    /// Uniform variate in `(0, 1)` driving site `coords`.
    #[inline]
    pub fn site_uniform(&self, coords: &[i64]) -> f64 {
        key_to_open_unit(site_key(self.seed, coords))
    }

    /// Inverse-CDF Pareto value `u^{-1/alpha}`.
    #[inline]
    pub fn pareto_from_uniform(&self, u: f64) -> f64 {
        if self.alpha == 1.0 {
            1.0 / u
        } else {
            u.powf(-1.0 / self.alpha)
        }
    }

    /// `z(x)` without the dimension check.
    #[inline]
    pub fn z(&self, coords: &[i64]) -> f64 {
        debug_assert_eq!(coords.len(), self.dimension);
        match self.law {
            Law::Constant { value } => value,
            Law::ParetoUnit => self.pareto_from_uniform(self.site_uniform(coords)),
            Law::CappedPareto { cap } => self.pareto_from_uniform(self.site_uniform(coords)).min(cap),
            Law::BernoulliIndicator { shifted } => {
                let raw = self.pareto_from_uniform(self.site_uniform(coords));
                let raw = if shifted { raw - 1.0 } else { raw };
                if raw >= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    pub fn z_point(&self, p: &Point) -> f64 {
        self.z(p.coords())
    }

    /// `z(x)` with argument validation.
    pub fn z_at(&self, coords: &[i64]) -> Result<f64> {
        if coords.len() != self.dimension {
            return Err(Error::Dimension { expected: self.dimension, got: coords.len() });
        }
        Ok(self.z(coords))
    }

    /// `E[z(0)]` under the field's law (infinite for Pareto tails with `alpha <= 1`).
    pub fn mean(&self) -> f64 {
        let a = self.alpha;
        match self.law {
            Law::Constant { value } => value,
            Law::ParetoUnit => {
                if a > 1.0 {
                    a / (a - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            Law::CappedPareto { cap } => {
                // 1 + int_1^cap r^{-a} dr
                if a == 1.0 {
                    1.0 + cap.ln()
                } else {
                    1.0 + (cap.powf(1.0 - a) - 1.0) / (1.0 - a)
                }
            }
            Law::BernoulliIndicator { shifted } => {
                if shifted {
                    2f64.powf(-a)
                } else {
                    1.0
                }
            }
        }
    }

    /// Exact tail `P(z(0) > r)` of the law.
    pub fn tail(&self, r: f64) -> f64 {
        let a = self.alpha;
        let pareto = |r: f64| if r < 1.0 { 1.0 } else { r.powf(-a) };
        match self.law {
            Law::Constant { value } => (value > r) as u8 as f64,
            Law::ParetoUnit => pareto(r),
            Law::CappedPareto { cap } => {
                if r >= cap {
                    0.0
                } else {
                    pareto(r)
                }
            }
            Law::BernoulliIndicator { shifted } => {
                let p_one = if shifted { 2f64.powf(-a) } else { 1.0 };
                if r < 0.0 {
                    1.0
                } else if r < 1.0 {
                    p_one
                } else {
                    0.0
                }
            }
        }
    }

    fn check_box(&self, b: &LatticeBox) -> Result<()> {
        if b.dim() != self.dimension {
            return Err(Error::Dimension { expected: self.dimension, got: b.dim() });
        }
        if b.is_empty() {
            return arg_err("box is empty");
        }
        Ok(())
    }

    /// Fraction of sites in `b` with `z(x) > r`.
    pub fn empirical_tail(&self, b: &LatticeBox, r: f64) -> Result<f64> {
        self.check_box(b)?;
        if !(r > 0.0) {
            return arg_err(format!("tail level must be positive, got {r}"));
        }
        let count = self.count_where(b, |z| z > r);
        Ok(count as f64 / b.len() as f64)
    }

    fn count_where(&self, b: &LatticeBox, pred: impl Fn(f64) -> bool + Sync) -> u64 {
        (0..b.side(0))
            .into_par_iter()
            .map(|i| {
                let slab = slab(b, i);
                slab.iter().filter(|p| pred(self.z_point(p))).count() as u64
            })
            .sum()
    }

    /// Points of `b` with `z(x) >= threshold`, in lexicographic order.
    pub fn level_set_points(&self, threshold: f64, b: &LatticeBox) -> Result<Vec<Point>> {
        self.check_box(b)?;
        let chunks: Vec<Vec<Point>> = (0..b.side(0))
            .into_par_iter()
            .map(|i| slab(b, i).iter().filter(|p| self.z_point(p) >= threshold).collect())
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Count of `level_set_points` without materialising them.
    pub fn level_set_count(&self, threshold: f64, b: &LatticeBox) -> Result<u64> {
        self.check_box(b)?;
        Ok(self.count_where(b, |z| z >= threshold))
    }

    /// Values on a whole box, lexicographic order.
    pub fn values(&self, b: &LatticeBox) -> Result<Vec<f64>> {
        self.check_box(b)?;
        let chunks: Vec<Vec<f64>> = (0..b.side(0))
            .into_par_iter()
            .map(|i| slab(b, i).iter().map(|p| self.z_point(&p)).collect())
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Site of the largest `z` in `b` (first in lexicographic order on ties).
    pub fn argmax(&self, b: &LatticeBox) -> Result<(Point, f64)> {
        self.check_box(b)?;
        let mut best = (b.point_at(0), f64::NEG_INFINITY);
        for p in b.iter() {
            let z = self.z_point(&p);
            if z > best.1 {
                best = (p, z);
            }
        }
        Ok(best)
    }
}

/// The sub-box of `b` with first coordinate `lo_0 + i`.
fn slab(b: &LatticeBox, i: u64) -> LatticeBox {
    let mut s = b.clone();
    s.lo[0] = b.lo[0] + i as i64;
    s.hi[0] = s.lo[0];
    s
}

/// The level set `{x : z(x) >= threshold}`, optionally restricted to a box.
#[derive(Clone, Debug)]
pub struct LevelSet<'a> {
    pub field: &'a SceneryField,
    pub threshold: f64,
    pub restrict: Option<LatticeBox>,
}

impl<'a> LevelSet<'a> {
    pub fn new(field: &'a SceneryField, threshold: f64) -> Self {
        LevelSet { field, threshold, restrict: None }
    }

    pub fn within(mut self, b: LatticeBox) -> Self {
        self.restrict = Some(b);
        self
    }

    #[inline]
    pub fn contains(&self, p: &Point) -> bool {
        if let Some(b) = &self.restrict {
            if !b.contains(p) {
                return false;
            }
        }
        self.field.z_point(p) >= self.threshold
    }

    pub fn points(&self) -> Result<Vec<Point>> {
        match &self.restrict {
            Some(b) => self.field.level_set_points(self.threshold, b),
            None => arg_err("enumerating an unrestricted level set requires a box"),
        }
    }
}

/// Precomputed scenery values on a box, with lazy fallback outside it.
///
/// Hot loops call [`ScenerySource::z`]; the dense window is used when the site
/// lies inside it.
#[derive(Clone, Debug)]
pub struct DenseScenery {
    field: SceneryField,
    radius: i64,
    side: i64,
    values: Vec<f64>,
}

impl DenseScenery {
    /// Cache `[-radius, radius]^d`. Fails if the cube exceeds `max_entries`.
    pub fn new(field: &SceneryField, radius: i64, max_entries: u64) -> Result<Self> {
        let b = LatticeBox::cube(field.dimension, radius);
        if b.len() > max_entries {
            return Err(Error::Resource(format!(
                "dense scenery window of {} sites exceeds {max_entries}",
                b.len()
            )));
        }
        let values = field.values(&b)?;
        Ok(DenseScenery { field: field.clone(), radius, side: 2 * radius + 1, values })
    }

    pub fn field(&self) -> &SceneryField {
        &self.field
    }
}

/// Anything that can answer `z(x)` for a point of the right dimension.
pub trait ScenerySource: Sync {
    fn z(&self, p: &Point) -> f64;
    fn field(&self) -> &SceneryField;
}

impl ScenerySource for SceneryField {
    #[inline]
    fn z(&self, p: &Point) -> f64 {
        self.z_point(p)
    }
    fn field(&self) -> &SceneryField {
        self
    }
}

impl ScenerySource for DenseScenery {
    #[inline]
    fn z(&self, p: &Point) -> f64 {
        let mut idx = 0i64;
        for &c in p.coords() {
            if c < -self.radius || c > self.radius {
                return self.field.z_point(p);
            }
            idx = idx * self.side + (c + self.radius);
        }
        self.values[idx as usize]
    }
    fn field(&self) -> &SceneryField {
        &self.field
    }
}

/// Either the lazy field or a dense cache of it, chosen by a size budget.
pub enum SceneryView<'a> {
    Lazy(&'a SceneryField),
    Dense(DenseScenery),
}

impl<'a> SceneryView<'a> {
    /// Use a dense cube of the given radius if it fits in `max_entries`, or the lazy field.
    /// Constant fields are always lazy.
    pub fn build(field: &'a SceneryField, radius: i64, max_entries: u64) -> Self {
        if matches!(field.law, Law::Constant { .. }) || radius <= 0 {
            return SceneryView::Lazy(field);
        }
        match DenseScenery::new(field, radius, max_entries) {
            Ok(d) => SceneryView::Dense(d),
            Err(_) => SceneryView::Lazy(field),
        }
    }
}

impl ScenerySource for SceneryView<'_> {
    #[inline]
    fn z(&self, p: &Point) -> f64 {
        match self {
            SceneryView::Lazy(f) => f.z_point(p),
            SceneryView::Dense(d) => d.z(p),
        }
    }
    fn field(&self) -> &SceneryField {
        match self {
            SceneryView::Lazy(f) => f,
            SceneryView::Dense(d) => d.field(),
        }
    }
}

/// Entry budget for dense scenery caches (8 bytes each).
pub const DENSE_BUDGET: u64 = 1 << 22;

/// Write `x1,...,xd,z` CSV rows for every site of `b`.
pub fn dump_csv<W: std::io::Write>(field: &SceneryField, b: &LatticeBox, mut out: W) -> Result<()> {
    field.check_box(b)?;
    let header: Vec<String> = (1..=b.dim()).map(|i| format!("x{i}")).collect();
    writeln!(out, "{},z", header.join(","))?;
    for p in b.iter() {
        let coords: Vec<String> = p.coords().iter().map(|c| c.to_string()).collect();
        writeln!(out, "{},{}", coords.join(","), field.z_point(&p))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_law() {
        let f = SceneryField::constant(2.0, 3).unwrap();
        assert_eq!(f.z_at(&[4, -1, 9]).unwrap(), 2.0);
        let one = SceneryField::constant(1.0, 2).unwrap();
        assert_eq!(one.empirical_tail(&LatticeBox::cube(2, 3), 2.0).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let f = SceneryField::pareto(1, 2.0, 2).unwrap();
        assert!(matches!(f.z_at(&[1]), Err(Error::Dimension { expected: 2, got: 1 })));
        assert!(f.empirical_tail(&LatticeBox::cube(3, 1), 1.0).is_err());
    }

    #[test]
    fn empty_box_is_an_error() {
        let f = SceneryField::pareto(1, 2.0, 1).unwrap();
        let empty = LatticeBox::new(vec![1], vec![0]).unwrap();
        assert!(f.empirical_tail(&empty, 1.0).is_err());
    }

    #[test]
    fn pareto_is_inverse_cdf_of_site_uniform() {
        let f = SceneryField::pareto(99, 2.0, 2).unwrap();
        for x in -3..3 {
            let u = f.site_uniform(&[x, 1]);
            assert_eq!(f.z(&[x, 1]), u.powf(-0.5));
        }
        // the identity itself: u = 1/4 maps to 2
        assert_eq!(f.pareto_from_uniform(0.25), 2.0);
    }

    #[test]
    fn pareto_support_and_unit_tail() {
        let f = SceneryField::pareto(3, 1.0, 2).unwrap();
        assert_eq!(f.empirical_tail(&LatticeBox::cube(2, 10), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn cap_dominance() {
        let p = SceneryField::pareto(5, 0.7, 2).unwrap();
        let c = SceneryField::capped(5, 0.7, 2, 10.0).unwrap();
        for pt in LatticeBox::cube(2, 15).iter() {
            assert_eq!(c.z_point(&pt), p.z_point(&pt).min(10.0));
        }
    }

    #[test]
    fn capped_site_above_cap_is_clamped() {
        let p = SceneryField::pareto(8, 0.5, 1).unwrap();
        let c = SceneryField::capped(8, 0.5, 1, 10.0).unwrap();
        let big = (-500..500).find(|&x| p.z(&[x]) > 30.0).expect("some large site");
        assert_eq!(c.z(&[big]), 10.0);
    }

    #[test]
    fn level_sets_of_constant_field() {
        let f = SceneryField::constant(5.0, 2).unwrap();
        let b = LatticeBox::cube(2, 1);
        assert_eq!(f.level_set_points(4.0, &b).unwrap().len(), 9);
        assert!(f.level_set_points(6.0, &b).unwrap().is_empty());
    }

    #[test]
    fn level_set_membership_matches_enumeration() {
        let f = SceneryField::pareto(17, 1.0, 2).unwrap();
        let b = LatticeBox::cube(2, 20);
        let pts = f.level_set_points(5.0, &b).unwrap();
        let ls = LevelSet::new(&f, 5.0).within(b.clone());
        let brute: Vec<Point> = b.iter().filter(|p| ls.contains(p)).collect();
        assert_eq!(pts, brute);
        assert_eq!(f.level_set_count(5.0, &b).unwrap(), pts.len() as u64);
    }

    #[test]
    fn shifted_bernoulli_has_the_documented_mean() {
        let f = SceneryField::new(4, 1.0, 2, Law::BernoulliIndicator { shifted: true }).unwrap();
        let b = LatticeBox::cube(2, 200);
        let frac = f.values(&b).unwrap().iter().sum::<f64>() / b.len() as f64;
        let se = (0.25f64 / b.len() as f64).sqrt();
        assert!((frac - 0.5).abs() < 4.0 * se);
        let g = SceneryField::new(4, 1.0, 2, Law::BernoulliIndicator { shifted: false }).unwrap();
        assert_eq!(g.z(&[3, 3]), 1.0);
    }

    #[test]
    fn dense_cache_agrees_with_lazy_values() {
        let f = SceneryField::pareto(21, 0.5, 2).unwrap();
        let d = DenseScenery::new(&f, 6, 1000).unwrap();
        for p in LatticeBox::cube(2, 9).iter() {
            assert_eq!(ScenerySource::z(&d, &p), f.z_point(&p));
        }
        assert!(DenseScenery::new(&f, 100, 1000).is_err());
    }

    #[test]
    fn capped_mean_matches_quadrature() {
        let f = SceneryField::capped(1, 0.5, 1, 10.0).unwrap();
        // E[min(z, M)] = int_0^M P(z > r) dr, midpoint rule
        let m = 200_000;
        let h = 10.0 / m as f64;
        let q: f64 = (0..m).map(|i| f.tail((i as f64 + 0.5) * h) * h).sum();
        assert!((q - f.mean()).abs() < 1e-4, "{q} vs {}", f.mean());
    }
}
