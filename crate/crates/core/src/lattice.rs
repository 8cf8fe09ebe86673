//! Lattice points and axis-aligned boxes of `Z^d`.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Largest supported lattice dimension (for a single point, i.e. `d1 + d2`).
pub const MAX_DIM: usize = 8;

/// A point of `Z^d`, `d <= MAX_DIM`, stored inline.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    dim: u8,
    coords: [i64; MAX_DIM],
}

impl Point {
    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Point { dim: dim as u8, coords: [0; MAX_DIM] }
    }

    pub fn from_slice(coords: &[i64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::Argument(format!(
                "point dimension must be in 1..={MAX_DIM}, got {}",
                coords.len()
            )));
        }
        let mut p = Point::origin(coords.len());
        p.coords[..coords.len()].copy_from_slice(coords);
        Ok(p)
    }

    /// Point of dimension `dim` with `value` in coordinate `axis` and zeros elsewhere.
    pub fn axis(dim: usize, axis: usize, value: i64) -> Self {
        let mut p = Point::origin(dim);
        p.coords[axis] = value;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i64] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn get(&self, axis: usize) -> i64 {
        self.coords[axis]
    }

    #[inline]
    pub fn set(&mut self, axis: usize, value: i64) {
        debug_assert!(axis < self.dim());
        self.coords[axis] = value;
    }

    /// Move one unit along `axis`; `positive` selects the direction.
    #[inline]
    pub fn step(&mut self, axis: usize, positive: bool) {
        debug_assert!(axis < self.dim());
        self.coords[axis] += if positive { 1 } else { -1 };
    }

    pub fn is_origin(&self) -> bool {
        self.coords().iter().all(|&c| c == 0)
    }

    pub fn l1_norm(&self) -> i64 {
        self.coords().iter().map(|c| c.abs()).sum()
    }

    pub fn sup_norm(&self) -> i64 {
        self.coords().iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn euclidean_sq(&self) -> i64 {
        self.coords().iter().map(|c| c * c).sum()
    }

    /// Concatenate two points into a point of dimension `a.dim() + b.dim()`.
    pub fn concat(a: &Point, b: &Point) -> Result<Point> {
        let d = a.dim() + b.dim();
        if d > MAX_DIM {
            return Err(Error::Argument(format!("combined dimension {d} exceeds {MAX_DIM}")));
        }
        let mut p = Point::origin(d);
        p.coords[..a.dim()].copy_from_slice(a.coords());
        p.coords[a.dim()..d].copy_from_slice(b.coords());
        Ok(p)
    }

    /// Split into the first `head` coordinates and the rest.
    pub fn split(&self, head: usize) -> (Point, Point) {
        let d = self.dim();
        assert!(head >= 1 && head < d);
        let a = Point::from_slice(&self.coords[..head]).expect("valid head");
        let b = Point::from_slice(&self.coords[head..d]).expect("valid tail");
        (a, b)
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::Dimension { expected, got: self.dim() });
        }
        Ok(())
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<i64>::deserialize(d)?;
        Point::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_d, hi_d]` of lattice points.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl LatticeBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > MAX_DIM {
            return Err(Error::Argument("box corners must share a dimension in 1..=8".into()));
        }
        Ok(LatticeBox { lo, hi })
    }

    /// The cube `[-radius, radius]^dim`.
    pub fn cube(dim: usize, radius: i64) -> Self {
        LatticeBox { lo: vec![-radius; dim], hi: vec![radius; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, axis: usize) -> u64 {
        if self.hi[axis] < self.lo[axis] {
            0
        } else {
            (self.hi[axis] - self.lo[axis] + 1) as u64
        }
    }

    pub fn len(&self) -> u64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.dim() == self.dim()
            && p.coords().iter().zip(self.lo.iter().zip(&self.hi)).all(|(&c, (&l, &h))| c >= l && c <= h)
    }

    /// Row-major index of `p` (last coordinate fastest), matching lexicographic order.
    pub fn index_of(&self, p: &Point) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        let mut idx = 0u64;
        for axis in 0..self.dim() {
            idx = idx * self.side(axis) + (p.get(axis) - self.lo[axis]) as u64;
        }
        Some(idx as usize)
    }

    pub fn point_at(&self, mut index: u64) -> Point {
        let mut p = Point::origin(self.dim());
        for axis in (0..self.dim()).rev() {
            let side = self.side(axis);
            p.set(axis, self.lo[axis] + (index % side) as i64);
            index /= side;
        }
        p
    }

    /// Points in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.point_at(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_iteration_is_lexicographic_and_indexed() {
        let b = LatticeBox::new(vec![-1, 0], vec![1, 2]).unwrap();
        let pts: Vec<Point> = b.iter().collect();
        assert_eq!(pts.len(), 9);
        let mut sorted = pts.clone();
        sorted.sort();
        assert_eq!(pts, sorted);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(b.index_of(p), Some(i));
        }
        assert_eq!(b.index_of(&Point::from_slice(&[2, 0]).unwrap()), None);
    }

    #[test]
    fn concat_and_split_round_trip() {
        let a = Point::from_slice(&[3]).unwrap();
        let b = Point::from_slice(&[-1, 4]).unwrap();
        let c = Point::concat(&a, &b).unwrap();
        assert_eq!(c.coords(), &[3, -1, 4]);
        assert_eq!(c.split(1), (a, b));
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Point::from_slice(&[]).is_err());
        assert!(Point::from_slice(&[0; 9]).is_err());
    }
}
