//! The walk killed on entering a set `B`: the restricted transition operator
//! `P^B`, its top eigenpair (the quasistationary distribution), the spectral
//! gap and the conditional law of the killed continuous-time walk.

use crate::bits::BitSet;
use crate::components::{label_components, Adjacency, Grid};
use crate::error::{Error, Result};
use crate::lattice::{SiteSet, TorusGeom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const NONE: u32 = u32::MAX;
/// Vectors at least this long are multiplied in parallel.
const PAR_MIN: usize = 1 << 15;
const MAX_ITERATIONS: usize = 2_000_000;

/// `P^B` on `T \ B`, stored as a neighbor table over the complement.
#[derive(Debug, Clone)]
pub struct RestrictedOperator {
    pub geom: TorusGeom,
    /// Sites of `T \ B` in increasing order; vectors are indexed alike.
    pub sites: Vec<usize>,
    /// `2d` neighbor indices per complement site, `NONE` for neighbors in `B`.
    neighbors: Vec<u32>,
}

impl RestrictedOperator {
    pub fn new(geom: &TorusGeom, b: &SiteSet) -> Result<Self> {
        let total = geom.total();
        let excluded = b.to_bits(total);
        let mut index = vec![NONE; total];
        let sites: Vec<usize> = (0..total).filter(|&s| !excluded.get(s)).collect();
        if sites.is_empty() {
            return Err(Error::InvalidArgument("the excluded set covers the torus".into()));
        }
        for (i, &s) in sites.iter().enumerate() {
            index[s] = i as u32;
        }
        let two_d = 2 * geom.dim();
        let mut neighbors = Vec::with_capacity(sites.len() * two_d);
        for &s in &sites {
            for dir in 0..two_d {
                neighbors.push(index[geom.step(s, dir)]);
            }
        }
        Ok(Self {
            geom: geom.clone(),
            sites,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// `y = P^B x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let two_d = 2 * self.geom.dim();
        let w = 1.0 / two_d as f64;
        let row = |(i, out): (usize, &mut f64)| {
            let mut s = 0.0;
            for &j in &self.neighbors[i * two_d..(i + 1) * two_d] {
                if j != NONE {
                    s += x[j as usize];
                }
            }
            *out = w * s;
        };
        if x.len() >= PAR_MIN {
            y.par_iter_mut().enumerate().for_each(row);
        } else {
            y.iter_mut().enumerate().for_each(row);
        }
    }

    /// Row sums of `P^B`.
    pub fn row_sums(&self) -> Vec<f64> {
        let two_d = 2 * self.geom.dim();
        (0..self.len())
            .map(|i| {
                self.neighbors[i * two_d..(i + 1) * two_d]
                    .iter()
                    .filter(|&&j| j != NONE)
                    .count() as f64
                    / two_d as f64
            })
            .collect()
    }

    /// Dense row-major matrix, only for complements of at most 5000 sites.
    pub fn dense(&self) -> Result<Vec<f64>> {
        let n = self.len();
        if n > 5000 {
            return Err(Error::ResourceGuard(format!("dense operator needs n <= 5000, got {n}")));
        }
        let two_d = 2 * self.geom.dim();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for &j in &self.neighbors[i * two_d..(i + 1) * two_d] {
                if j != NONE {
                    m[i * n + j as usize] += 1.0 / two_d as f64;
                }
            }
        }
        Ok(m)
    }

    pub fn index_of(&self, site: usize) -> Option<usize> {
        self.sites.binary_search(&site).ok()
    }

    fn check_connected(&self) -> Result<()> {
        let grid = Grid::torus(&self.geom);
        let mut excluded = BitSet::full(self.geom.total());
        for &s in &self.sites {
            excluded.clear(s);
        }
        let stats = label_components(&grid, &excluded, Adjacency::Nearest);
        if stats.components.len() > 1 {
            return Err(Error::Disconnected {
                components: stats.components.len(),
            });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasiDist {
    /// Sites of `T \ B`, matching the entries of `sigma`.
    pub sites: Vec<usize>,
    pub sigma: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `||P^B v1 - lambda1 v1||_inf` for the unit eigenvector `v1`.
    pub residual: f64,
    pub residual2: f64,
    pub iterations: usize,
}

impl QuasiDist {
    pub fn gap(&self) -> f64 {
        self.lambda1 - self.lambda2
    }

    pub fn sigma_at(&self, site: usize) -> Option<f64> {
        self.sites.binary_search(&site).ok().map(|i| self.sigma[i])
    }
}

/// Power iteration with the lazy operator `(I + P^B) / 2`, whose spectrum
/// is in `[0, 1]`, so bipartite tori do not oscillate. `deflate` holds unit
/// vectors projected out after every step.
fn power(
    op: &RestrictedOperator,
    mut v: Vec<f64>,
    deflate: &[&[f64]],
    tol: f64,
) -> Result<(Vec<f64>, f64, f64, usize)> {
    let n = op.len();
    let mut pv = vec![0.0; n];
    let project = |v: &mut Vec<f64>| {
        for q in deflate {
            let c = dot(v, q);
            v.iter_mut().zip(q.iter()).for_each(|(x, y)| *x -= c * y);
        }
    };
    project(&mut v);
    normalize(&mut v);
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        op.apply(&v, &mut pv);
        if it % 16 == 0 || it == 1 {
            let lambda = dot(&v, &pv);
            residual = v
                .iter()
                .zip(&pv)
                .map(|(x, y)| (y - lambda * x).abs())
                .fold(0.0, f64::max);
            if residual <= tol {
                return Ok((v, lambda, residual, it));
            }
        }
        for (x, y) in v.iter_mut().zip(&pv) {
            *x = 0.5 * (*x + y);
        }
        project(&mut v);
        normalize(&mut v);
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual,
        tolerance: tol,
    })
}

/// Quasistationary distribution `sigma = v1 / sum v1` of the walk killed on `B`,
/// with `lambda1` and the second eigenvalue `lambda2` of `P^B`.
pub fn quasistationary(geom: &TorusGeom, b: &SiteSet, tol: f64) -> Result<QuasiDist> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let op = RestrictedOperator::new(geom, b)?;
    op.check_connected()?;
    let n = op.len();
    let (v1, lambda1, residual, it1) = power(&op, vec![1.0; n], &[], tol)?;
    // A fixed start with no special symmetry for the second eigenvector.
    let start: Vec<f64> = (0..n)
        .map(|i| ((crate::rng::mix64(i as u64) >> 11) as f64 / (1u64 << 53) as f64) - 0.5)
        .collect();
    let (lambda2, residual2, it2) = if n > 1 {
        let (_, l2, r2, it) = power(&op, start, &[&v1], tol)?;
        (l2, r2, it)
    } else {
        (f64::NEG_INFINITY, 0.0, 0)
    };
    let mass: f64 = v1.iter().sum();
    let sigma = v1.iter().map(|x| (x / mass).max(0.0)).collect();
    Ok(QuasiDist {
        sites: op.sites,
        sigma,
        lambda1,
        lambda2,
        residual,
        residual2,
        iterations: it1 + it2,
    })
}

/// Quasistationary law and principal eigenvalue only, skipping the second
/// eigenpair; returns `(sites, sigma, lambda1)`.
pub fn quasistationary_sigma(geom: &TorusGeom, b: &SiteSet, tol: f64) -> Result<(Vec<usize>, Vec<f64>, f64)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let op = RestrictedOperator::new(geom, b)?;
    op.check_connected()?;
    let (v1, lambda1, _, _) = power(&op, vec![1.0; op.len()], &[], tol)?;
    let mass: f64 = v1.iter().sum();
    Ok((op.sites, v1.iter().map(|x| (x / mass).max(0.0)).collect(), lambda1))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub n: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gap: f64,
    /// `gap * N^2`.
    pub scaled_gap: f64,
}

pub fn gap_check(geom: &TorusGeom, b: &SiteSet) -> Result<GapReport> {
    let q = quasistationary(geom, b, 1e-11)?;
    let n = geom.side();
    Ok(GapReport {
        n,
        lambda1: q.lambda1,
        lambda2: q.lambda2,
        gap: q.gap(),
        scaled_gap: q.gap() * (n * n) as f64,
    })
}

/// `delta_x^T exp(-t (I - P^B))` by uniformization, as a normalized direction
/// and the natural log of its total mass `P_x[H_B > t]`.
pub fn killed_semigroup(op: &RestrictedOperator, x: usize, t: f64) -> Result<(Vec<f64>, f64)> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time must be finite and non-negative, got {t}"
        )));
    }
    let start = op
        .index_of(x)
        .ok_or_else(|| Error::InvalidArgument(format!("start site {x} lies in the excluded set")))?;
    let n = op.len();
    let mut v = vec![0.0; n];
    v[start] = 1.0;
    if t == 0.0 {
        return Ok((v, 0.0));
    }
    // P^B is symmetric, so row vectors evolve by the same product.
    let mut next = vec![0.0; n];
    let mut acc = vec![0.0; n];
    let mut acc_log = f64::NEG_INFINITY;
    let mut log_norm = 0.0; // log of the mass of P^k delta_x
    let ln_t = t.ln();
    let mut log_fact = 0.0;
    let mut k = 0usize;
    loop {
        let log_w = -t + k as f64 * ln_t - log_fact + log_norm;
        if log_w.is_finite() {
            if log_w > acc_log {
                let scale = (acc_log - log_w).exp();
                acc.iter_mut().for_each(|a| *a *= scale);
                acc_log = log_w;
            }
            let c = (log_w - acc_log).exp();
            acc.iter_mut().zip(&v).for_each(|(a, x)| *a += c * x);
        }
        // Poisson tail beyond k is below 1e-16 of the total.
        let log_pmf = -t + k as f64 * ln_t - log_fact;
        if k as f64 > t && log_pmf < (1e-16f64).ln() {
            break;
        }
        op.apply(&v, &mut next);
        let mass: f64 = next.iter().sum();
        if mass <= 0.0 {
            break;
        }
        log_norm += mass.ln();
        for (a, b) in v.iter_mut().zip(&next) {
            *a = b / mass;
        }
        k += 1;
        log_fact += (k as f64).ln();
    }
    let total: f64 = acc.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Precision(format!("conditional mass vanished at t = {t}")));
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok((acc, acc_log + total.ln()))
}

/// `P_x[Y_t = . | H_B > t]` for the continuous-time walk, over `T \ B` in site order.
pub fn conditional_distribution(geom: &TorusGeom, b: &SiteSet, x: usize, t: f64) -> Result<Vec<f64>> {
    let op = RestrictedOperator::new(geom, b)?;
    Ok(killed_semigroup(&op, x, t)?.0)
}

/// `sup_y |p(y) - q(y)|`.
pub fn sup_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(g: &TorusGeom, r: usize) -> SiteSet {
        g.linf_ball(0, r).unwrap()
    }

    #[test]
    fn empty_set_gives_uniform_and_cosine_gap() {
        let g = TorusGeom::new(3, 6).unwrap();
        let q = quasistationary(&g, &SiteSet::new(&g, vec![]).unwrap(), 1e-12).unwrap();
        assert!((q.lambda1 - 1.0).abs() < 1e-12);
        assert!(q.sigma.iter().all(|s| (s - 1.0 / 216.0).abs() < 1e-12));
        let expect = (2.0 + (2.0 * std::f64::consts::PI / 6.0).cos()) / 3.0;
        assert!((q.lambda2 - expect).abs() < 1e-9, "{}", q.lambda2);
    }

    #[test]
    fn killed_walk_is_substochastic() {
        let g = TorusGeom::new(3, 8).unwrap();
        let op = RestrictedOperator::new(&g, &ball(&g, 2)).unwrap();
        assert_eq!(op.len(), 512 - 125);
        let sums = op.row_sums();
        assert!(sums.iter().all(|&s| s <= 1.0));
        assert!(sums.iter().any(|&s| s < 1.0));
        let q = quasistationary(&g, &ball(&g, 2), 1e-12).unwrap();
        assert!(q.lambda1 < 1.0 && q.lambda1 > 0.0);
        assert!(q.gap() > 0.0);
        assert!(q.sigma.iter().all(|&s| s > 0.0));
        assert!((q.sigma.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_complement_is_rejected() {
        let g = TorusGeom::new(3, 6).unwrap();
        let slabs: Vec<usize> = (0..g.total()).filter(|&s| matches!(g.coord(s, 0), 0 | 3)).collect();
        let b = SiteSet::new(&g, slabs).unwrap();
        assert!(matches!(
            quasistationary(&g, &b, 1e-10),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn semigroup_at_zero_is_point_mass() {
        let g = TorusGeom::new(3, 6).unwrap();
        let b = ball(&g, 1);
        let x = g.site(&[3, 3, 3]);
        let p = conditional_distribution(&g, &b, x, 0.0).unwrap();
        let op = RestrictedOperator::new(&g, &b).unwrap();
        assert_eq!(p[op.index_of(x).unwrap()], 1.0);
        assert!(conditional_distribution(&g, &b, 0, 1.0).is_err());
    }

    #[test]
    fn survival_mass_matches_eigenvalue_decay() {
        let g = TorusGeom::new(3, 6).unwrap();
        let b = ball(&g, 1);
        let op = RestrictedOperator::new(&g, &b).unwrap();
        let q = quasistationary(&g, &b, 1e-12).unwrap();
        let x = g.site(&[3, 2, 1]);
        let (_, l1) = killed_semigroup(&op, x, 400.0).unwrap();
        let (_, l2) = killed_semigroup(&op, x, 500.0).unwrap();
        assert!(((l2 - l1) / 100.0 + (1.0 - q.lambda1)).abs() < 1e-8);
    }
}
