//! Geometry of the discrete torus `(Z/NZ)^d` and of finite regions of `Z^d`.
//!
//! Torus sites are flat indices in row-major coordinate order (the last
//! coordinate varies fastest). Coordinates are converted on demand.

use crate::bits::BitSet;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Immutable descriptor of the torus `(Z/NZ)^d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GeomSpec", into = "GeomSpec")]
pub struct TorusGeom {
    d: usize,
    n: usize,
    total: usize,
    strides: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GeomSpec {
    d: usize,
    n: usize,
}

impl TryFrom<GeomSpec> for TorusGeom {
    type Error = Error;
    fn try_from(s: GeomSpec) -> Result<Self> {
        TorusGeom::new(s.d, s.n)
    }
}

impl From<TorusGeom> for GeomSpec {
    fn from(g: TorusGeom) -> Self {
        GeomSpec { d: g.d, n: g.n }
    }
}

impl TorusGeom {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d < 3 {
            return Err(Error::Geometry(format!("dimension must be at least 3, got {d}")));
        }
        if n < 4 {
            return Err(Error::Geometry(format!("side must be at least 4, got {n}")));
        }
        let total = u32::try_from(d)
            .ok()
            .and_then(|e| n.checked_pow(e))
            .ok_or_else(|| Error::Geometry(format!("{n}^{d} sites overflow the index width")))?;
        let mut strides = vec![1usize; d];
        for i in (0..d - 1).rev() {
            strides[i] = strides[i + 1] * n;
        }
        Ok(Self { d, n, total, strides })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.n
    }

    /// Number of sites, `N^d`.
    #[inline]
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    #[inline]
    pub fn coord(&self, site: usize, axis: usize) -> usize {
        (site / self.strides[axis]) % self.n
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        self.coords_into(site, &mut c);
        c
    }

    pub fn coords_into(&self, mut site: usize, out: &mut [usize]) {
        for i in (0..self.d).rev() {
            out[i] = site % self.n;
            site /= self.n;
        }
    }

    /// Site index of in-range coordinates.
    #[inline]
    pub fn site(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.d);
        coords
            .iter()
            .zip(&self.strides)
            .map(|(c, s)| {
                debug_assert!(*c < self.n);
                c * s
            })
            .sum()
    }

    /// Neighbor of `site` in direction `dir` (axis `dir >> 1`, positive when even).
    #[inline]
    pub fn step(&self, site: usize, dir: usize) -> usize {
        let axis = dir >> 1;
        let s = self.strides[axis];
        let c = (site / s) % self.n;
        if dir & 1 == 0 {
            if c + 1 == self.n {
                site + s - self.n * s
            } else {
                site + s
            }
        } else if c == 0 {
            site + (self.n - 1) * s
        } else {
            site - s
        }
    }

    /// The `2d` nearest neighbors of `site`, ordered by direction index.
    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        (0..2 * self.d).map(|dir| self.step(site, dir)).collect()
    }

    /// Canonical projection `Z^d -> T`.
    pub fn project(&self, p: &ZdPoint) -> Result<usize> {
        self.check_dim(p.dim())?;
        let n = self.n as i64;
        Ok(p.0
            .iter()
            .zip(&self.strides)
            .map(|(x, s)| x.rem_euclid(n) as usize * s)
            .sum())
    }

    /// Site reached from `center` by the lattice offset `p`.
    pub fn offset(&self, center: usize, p: &ZdPoint) -> Result<usize> {
        self.check_dim(p.dim())?;
        let n = self.n as i64;
        let mut site = 0;
        for axis in 0..self.d {
            let c = self.coord(center, axis) as i64;
            site += (c + p.0[axis]).rem_euclid(n) as usize * self.strides[axis];
        }
        Ok(site)
    }

    /// Signed per-axis offset of `q` from `center`, each in `(-N/2, N/2]`.
    pub fn signed_offset(&self, center: usize, q: usize) -> ZdPoint {
        let n = self.n as i64;
        ZdPoint(
            (0..self.d)
                .map(|axis| {
                    let delta = (self.coord(q, axis) as i64 - self.coord(center, axis) as i64).rem_euclid(n);
                    if 2 * delta > n {
                        delta - n
                    } else {
                        delta
                    }
                })
                .collect(),
        )
    }

    /// Radius of the chart domain, `floor(N/4)`.
    pub fn chart_radius(&self) -> usize {
        self.n / 4
    }

    /// Local chart around `center`: the unique `p` with `|p|_inf <= N/4` and
    /// `project(center + p) = q`.
    pub fn chart(&self, center: usize, q: usize) -> Result<ZdPoint> {
        let p = self.signed_offset(center, q);
        let dist = p.linf() as usize;
        if dist > self.chart_radius() {
            return Err(Error::OutsideChart {
                distance: dist,
                limit: self.chart_radius(),
            });
        }
        Ok(p)
    }

    /// `l_inf` distance on the torus.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        (0..self.d)
            .map(|axis| circular_distance(self.coord(a, axis), self.coord(b, axis), self.n))
            .max()
            .unwrap_or(0)
    }

    /// Closed `l_inf` ball; rejected when `2r + 1 > N`.
    pub fn linf_ball(&self, center: usize, r: usize) -> Result<SiteSet> {
        if 2 * r + 1 > self.n {
            return Err(Error::BallWraps {
                radius: r,
                side: self.n,
            });
        }
        let region = ZdBox::new(self.d, r);
        let mut sites: Vec<usize> = region
            .points()
            .map(|p| self.offset(center, &p).expect("dimension checked"))
            .collect();
        sites.sort_unstable();
        Ok(SiteSet { sites })
    }

    /// Image of a set of lattice points placed at `center`.
    pub fn place(&self, center: usize, points: &ZdSet) -> Result<SiteSet> {
        let mut sites = points
            .iter()
            .map(|p| self.offset(center, p))
            .collect::<Result<Vec<_>>>()?;
        sites.sort_unstable();
        sites.dedup();
        Ok(SiteSet { sites })
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got });
        }
        Ok(())
    }
}

/// Distance between residues `a` and `b` on the cycle `Z/nZ`.
#[inline]
pub fn circular_distance(a: usize, b: usize, n: usize) -> usize {
    let x = a.abs_diff(b);
    x.min(n - x)
}

/// A point of `Z^d`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ZdPoint(pub Vec<i64>);

impl ZdPoint {
    pub fn origin(d: usize) -> Self {
        ZdPoint(vec![0; d])
    }

    /// Unit vector along `axis`, scaled by `k`.
    pub fn axis(d: usize, axis: usize, k: i64) -> Self {
        let mut v = vec![0; d];
        v[axis] = k;
        ZdPoint(v)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn linf(&self) -> i64 {
        self.0.iter().map(|x| x.abs()).max().unwrap_or(0)
    }

    pub fn euclid(&self) -> f64 {
        self.0.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &ZdPoint) -> ZdPoint {
        ZdPoint(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &ZdPoint) -> ZdPoint {
        ZdPoint(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

impl From<Vec<i64>> for ZdPoint {
    fn from(v: Vec<i64>) -> Self {
        ZdPoint(v)
    }
}

/// Sorted, duplicate-free set of torus sites.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SiteSet {
    sites: Vec<usize>,
}

impl SiteSet {
    pub fn new(geom: &TorusGeom, mut sites: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = sites.iter().find(|&&s| s >= geom.total()) {
            return Err(Error::InvalidArgument(format!(
                "site {bad} out of range for {} sites",
                geom.total()
            )));
        }
        sites.sort_unstable();
        sites.dedup();
        Ok(Self { sites })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all(geom: &TorusGeom) -> Self {
        Self {
            sites: (0..geom.total()).collect(),
        }
    }

    pub fn from_bits(bits: &BitSet) -> Self {
        Self {
            sites: bits.ones().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, site: usize) -> bool {
        self.sites.binary_search(&site).is_ok()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.sites
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.sites.iter().copied()
    }

    pub fn is_subset(&self, other: &SiteSet) -> bool {
        self.sites.iter().all(|s| other.contains(*s))
    }

    pub fn to_bits(&self, total: usize) -> BitSet {
        let mut b = BitSet::new(total);
        for &s in &self.sites {
            b.set(s);
        }
        b
    }
}

/// Axis-aligned box `[-r, r]^d` of `Z^d` with a dense row-major index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZdBox {
    pub d: usize,
    pub r: usize,
}

impl ZdBox {
    pub fn new(d: usize, r: usize) -> Self {
        Self { d, r }
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.r + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn contains(&self, p: &[i64]) -> bool {
        p.iter().all(|x| x.unsigned_abs() as usize <= self.r)
    }

    /// Row-major index of `p`, or `None` outside the box.
    #[inline]
    pub fn index(&self, p: &[i64]) -> Option<usize> {
        let side = self.side() as i64;
        let r = self.r as i64;
        let mut idx = 0i64;
        for &x in p {
            if x < -r || x > r {
                return None;
            }
            idx = idx * side + (x + r);
        }
        Some(idx as usize)
    }

    pub fn point(&self, mut idx: usize) -> ZdPoint {
        let side = self.side();
        let mut v = vec![0i64; self.d];
        for i in (0..self.d).rev() {
            v[i] = (idx % side) as i64 - self.r as i64;
            idx /= side;
        }
        ZdPoint(v)
    }

    pub fn points(&self) -> impl Iterator<Item = ZdPoint> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }
}

/// Finite subset of `Z^d`, stored sorted and duplicate free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZdSet {
    d: usize,
    points: Vec<ZdPoint>,
}

impl ZdSet {
    pub fn new(d: usize, mut points: Vec<ZdPoint>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.dim(),
            });
        }
        points.sort();
        points.dedup();
        Ok(Self { d, points })
    }

    pub fn empty(d: usize) -> Self {
        Self { d, points: Vec::new() }
    }

    pub fn singleton(d: usize) -> Self {
        Self {
            d,
            points: vec![ZdPoint::origin(d)],
        }
    }

    /// `B(0, r)` in `Z^d`.
    pub fn ball(d: usize, r: usize) -> Self {
        Self {
            d,
            points: ZdBox::new(d, r).points().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ZdPoint> {
        self.points.iter()
    }

    pub fn points(&self) -> &[ZdPoint] {
        &self.points
    }

    pub fn contains(&self, p: &ZdPoint) -> bool {
        self.points.binary_search(p).is_ok()
    }

    /// Smallest `r` with the set inside `B(0, r)`.
    pub fn radius(&self) -> usize {
        self.points.iter().map(|p| p.linf() as usize).max().unwrap_or(0)
    }

    /// `l_inf` diameter.
    pub fn diameter(&self) -> usize {
        (0..self.d)
            .map(|axis| {
                let lo = self.points.iter().map(|p| p.0[axis]).min().unwrap_or(0);
                let hi = self.points.iter().map(|p| p.0[axis]).max().unwrap_or(0);
                (hi - lo) as usize
            })
            .max()
            .unwrap_or(0)
    }

    /// Inner boundary: points with at least one neighbor outside the set.
    pub fn inner_boundary(&self) -> Vec<ZdPoint> {
        self.points
            .iter()
            .filter(|p| {
                (0..2 * self.d).any(|dir| {
                    let mut q = (*p).clone();
                    q.0[dir >> 1] += if dir & 1 == 0 { 1 } else { -1 };
                    !self.contains(&q)
                })
            })
            .cloned()
            .collect()
    }

    /// Invariance under every reflection `x_i -> -x_i`.
    pub fn is_reflection_symmetric(&self) -> bool {
        self.points.iter().all(|p| {
            (0..self.d).all(|axis| {
                let mut q = p.clone();
                q.0[axis] = -q.0[axis];
                self.contains(&q)
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn g(d: usize, n: usize) -> TorusGeom {
        TorusGeom::new(d, n).unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(TorusGeom::new(2, 10).is_err());
        assert!(TorusGeom::new(3, 3).is_err());
        assert!(TorusGeom::new(40, 1 << 20).is_err());
    }

    #[test]
    fn project_examples() {
        let geom = g(3, 5);
        let s = geom.project(&ZdPoint(vec![7, 0, 0])).unwrap();
        assert_eq!(geom.coords(s), vec![2, 0, 0]);
        let geom4 = g(3, 4);
        let s = geom4.project(&ZdPoint(vec![-1, -1, -1])).unwrap();
        assert_eq!(geom4.coords(s), vec![3, 3, 3]);
        for n in [4, 9, 17] {
            assert_eq!(g(3, n).project(&ZdPoint::origin(3)).unwrap(), 0);
        }
        assert!(matches!(
            geom.project(&ZdPoint(vec![1, 2])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn chart_examples() {
        let n = 8;
        let geom = g(3, n);
        let q = geom.site(&[n - 1, 0, 0]);
        assert_eq!(geom.chart(0, q).unwrap(), ZdPoint(vec![-1, 0, 0]));
        let c = geom.site(&[3, 5, 1]);
        assert_eq!(geom.chart(c, c).unwrap(), ZdPoint::origin(3));
        let far = geom.site(&[4, 0, 0]);
        assert!(matches!(geom.chart(0, far), Err(Error::OutsideChart { .. })));
    }

    #[test]
    fn chart_then_project_is_identity_on_random_pairs() {
        let geom = g(3, 8);
        let mut r = rng::stream(5, &[]);
        let ball = ZdBox::new(3, geom.chart_radius());
        for _ in 0..1000 {
            let c = r.random_range(0..geom.total());
            let off = ball.point(r.random_range(0..ball.len()));
            let q = geom.offset(c, &off).unwrap();
            let p = geom.chart(c, q).unwrap();
            assert_eq!(p, off);
            assert_eq!(geom.offset(c, &p).unwrap(), q);
        }
    }

    #[test]
    fn balls_have_expected_cardinality() {
        let geom = g(3, 8);
        assert_eq!(geom.linf_ball(17, 0).unwrap().as_slice(), &[17]);
        assert_eq!(geom.linf_ball(0, 1).unwrap().len(), 27);
        let center = geom.site(&[7, 0, 3]);
        let ball = geom.linf_ball(center, 2).unwrap();
        assert_eq!(ball.len(), 125);
        let scan: Vec<usize> = (0..geom.total()).filter(|&s| geom.distance(center, s) <= 2).collect();
        assert_eq!(ball.as_slice(), scan.as_slice());
        assert!(matches!(geom.linf_ball(0, 4), Err(Error::BallWraps { .. })));
        assert_eq!(ZdSet::ball(3, 2).len(), 125);
    }

    #[test]
    fn neighbors_are_symmetric_and_regular() {
        let geom = g(3, 6);
        for s in 0..geom.total() {
            let nb = geom.neighbors(s);
            assert_eq!(nb.len(), 6);
            for &t in &nb {
                assert_eq!(geom.distance(s, t), 1);
                assert!(geom.neighbors(t).contains(&s));
            }
        }
        let geom4 = g(3, 4);
        assert!(geom4.neighbors(0).contains(&geom4.site(&[3, 0, 0])));
    }

    #[test]
    fn zd_set_boundary_and_symmetry() {
        let b1 = ZdSet::ball(3, 1);
        assert_eq!(b1.inner_boundary().len(), 26);
        assert!(b1.is_reflection_symmetric());
        let pair = ZdSet::new(3, vec![ZdPoint::origin(3), ZdPoint::axis(3, 0, 1)]).unwrap();
        assert!(!pair.is_reflection_symmetric());
        assert_eq!(pair.diameter(), 1);
        assert_eq!(ZdSet::ball(3, 4).inner_boundary().len(), 729 - 343);
    }

    #[test]
    fn box_index_roundtrip() {
        let b = ZdBox::new(3, 2);
        for i in 0..b.len() {
            assert_eq!(b.index(&b.point(i).0), Some(i));
        }
        assert_eq!(b.index(&[3, 0, 0]), None);
    }
}
