//! Random interlacements restricted to a box `B(0, r)` of `Z^d`.
//!
//! Inside a finite set `K` the interlacement at level `u` is the trace of
//! `Poisson(u cap K)` independent walks started from the normalized
//! equilibrium measure of `K`. Two samplers realize this for `K = B(0, r)`:
//!
//! * [`SamplerKind::Equilibrium`] draws starts from the solved equilibrium
//!   measure. A walk reaching `l_inf` radius `R_kill` comes back with the
//!   far-field probability of ever hitting `K` again and re-enters at a point
//!   drawn from `e_K / cap K`, the limit of the harmonic measure seen from
//!   far away.
//! * [`SamplerKind::Thinning`] needs no solve: every boundary point carries
//!   `Poisson(u)` candidates, each kept when an independent test walk
//!   escapes to `R_kill` without returning to `K`, which thins the intensity
//!   to `u e_K(x)`. Each kept candidate then runs an independent walk from
//!   its point. The escape test truncated at `R_kill` overestimates `e_K`
//!   by `O((r / R_kill)^{d-2})`.
//!
//! Every walk carries a uniform level in `[0, u)`; the walks below `u' <= u`
//! form the interlacement at level `u'`, so one sample serves every lower
//! level.

use crate::bits::BitSet;
use crate::components::{label_components, Adjacency, ComponentStats, Grid};
use crate::error::{Error, Result};
use crate::lattice::{ZdBox, ZdSet};
use crate::potential::{equilibrium_cached, EquilibriumMeasure};
use crate::rng::{self, unit_f64, AliasTable, StepSource, StreamRng};
use crate::rw::{poisson_count, ZdWalk};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const TAG_INTERLACE: u64 = 0x494e_544c;
const TAG_VACANCY: u64 = 0x5641_4341;
const CHUNK: u64 = 256;

/// Largest `d = 3` box radius served by the equilibrium sampler by default.
pub const EQUILIBRIUM_MAX_RADIUS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Equilibrium,
    Thinning,
}

impl SamplerKind {
    /// Equilibrium sampling where the solve is affordable, thinning otherwise.
    pub fn auto(d: usize, r: usize) -> Self {
        if d == 3 && r <= EQUILIBRIUM_MAX_RADIUS {
            SamplerKind::Equilibrium
        } else {
            SamplerKind::Thinning
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub d: usize,
    pub r: usize,
    pub r_kill: usize,
    pub kind: SamplerKind,
    /// Far-field returns at `R_kill` (equilibrium sampler only).
    pub far_field: bool,
    /// Keep the in-box segments of every walk.
    pub record_paths: bool,
}

impl SamplerConfig {
    /// Box `B(0, r)` with `R_kill = max(8r, 64)` and the automatic sampler.
    pub fn new(d: usize, r: usize) -> Self {
        Self {
            d,
            r,
            r_kill: (8 * r).max(64),
            kind: SamplerKind::auto(d, r),
            far_field: true,
            record_paths: false,
        }
    }

    pub fn with_kill(mut self, r_kill: usize) -> Self {
        self.r_kill = r_kill;
        self
    }

    pub fn with_kind(mut self, kind: SamplerKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 3 {
            return Err(Error::InvalidArgument(format!(
                "dimension must be at least 3, got {}",
                self.d
            )));
        }
        if self.r == 0 {
            return Err(Error::InvalidArgument("box radius must be at least 1".into()));
        }
        if self.r_kill < 4 * self.r {
            return Err(Error::InvalidArgument(format!(
                "R_kill = {} is below 4r = {}",
                self.r_kill,
                4 * self.r
            )));
        }
        Ok(())
    }

    pub fn bx(&self) -> ZdBox {
        ZdBox::new(self.d, self.r)
    }

    /// Bound on the vacancy bias from stopping walks at `R_kill`:
    /// `(r / R_kill)^{d-2}`, one power smaller with far-field returns.
    pub fn bias_bound(&self) -> f64 {
        let ratio = self.r as f64 / self.r_kill as f64;
        let far = self.far_field && self.kind == SamplerKind::Equilibrium;
        ratio.powi(self.d as i32 - 2 + far as i32)
    }
}

/// Starts and levels of the walks of one sample.
struct Plan {
    starts: Vec<Vec<i64>>,
    levels: Vec<f64>,
    candidates: u64,
}

/// Precomputed state for one box.
pub struct Sampler {
    pub cfg: SamplerConfig,
    measure: Option<(Arc<EquilibriumMeasure>, AliasTable)>,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let measure = match cfg.kind {
            SamplerKind::Equilibrium => {
                let m = equilibrium_cached(&ZdSet::ball(cfg.d, cfg.r))?;
                let alias = m.sampler();
                Some((m, alias))
            }
            SamplerKind::Thinning => None,
        };
        Ok(Self { cfg, measure })
    }

    /// `cap B(0, r)` when the equilibrium measure is available.
    pub fn capacity(&self) -> Option<f64> {
        self.measure.as_ref().map(|(m, _)| m.capacity)
    }

    fn plan(&self, u: f64, rng: &mut StreamRng) -> Plan {
        let d = self.cfg.d;
        let r = self.cfg.r as i64;
        let (mut starts, candidates) = match &self.measure {
            Some((m, alias)) => {
                let j = poisson_count(u * m.capacity, rng);
                let starts = (0..j).map(|_| m.boundary[alias.sample(rng)].0.clone()).collect();
                (starts, j)
            }
            None => {
                let bx = self.cfg.bx();
                let side = bx.side() as f64;
                let boundary_size = bx.len() - (2 * r as usize - 1).pow(d as u32);
                let m = poisson_count(u * boundary_size as f64, rng);
                let mut src = StepSource::new(rng::stream(rng_seed(rng), &[]));
                let mut starts = Vec::new();
                for _ in 0..m {
                    // Uniform point of the inner boundary by rejection.
                    let x = loop {
                        let p: Vec<i64> = (0..d).map(|_| (unit_f64(rng) * side) as i64 - r).collect();
                        if p.iter().any(|c| c.abs() == r) {
                            break p;
                        }
                    };
                    if escapes_box(&x, r, self.cfg.r_kill as i64, &mut src) {
                        starts.push(x);
                    }
                }
                (starts, m)
            }
        };
        let mut levels: Vec<f64> = (0..starts.len()).map(|_| unit_f64(rng) * u).collect();
        let mut order: Vec<usize> = (0..starts.len()).collect();
        order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
        starts = order.iter().map(|&i| std::mem::take(&mut starts[i])).collect();
        levels = order.iter().map(|&i| levels[i]).collect();
        Plan {
            starts,
            levels,
            candidates,
        }
    }

    /// Runs one walk from `start`; `visit(p, entering)` sees every in-box
    /// position, with `entering` set on the first point of each in-box
    /// segment, and stops the walk by returning true. Returns the number of
    /// far-field returns.
    fn walk(&self, start: &[i64], src: &mut StepSource<StreamRng>, mut visit: impl FnMut(&[i64], bool) -> bool) -> u64 {
        let r = self.cfg.r as i64;
        let r_kill = self.cfg.r_kill as i64;
        let mut w = ZdWalk::new(start.to_vec());
        let mut returns = 0;
        if visit(&w.pos, true) {
            return 0;
        }
        let mut inside = true;
        loop {
            w.step(src);
            let m = w.linf();
            if m <= r {
                if visit(&w.pos, !inside) {
                    return returns;
                }
                inside = true;
                continue;
            }
            inside = false;
            if m > r_kill {
                let Some((measure, alias)) = self.measure.as_ref().filter(|_| self.cfg.far_field) else {
                    return returns;
                };
                if unit_f64(src.rng_mut()) >= measure.far_field_hit(&w.pos) {
                    return returns;
                }
                returns += 1;
                w = ZdWalk::new(measure.boundary[alias.sample(src.rng_mut())].0.clone());
                if visit(&w.pos, true) {
                    return returns;
                }
                inside = true;
            }
        }
    }
}

fn rng_seed(rng: &mut StreamRng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}

/// Walk from `x` on the boundary of `B(0, r)`: true when it passes `l_inf`
/// radius `r_kill` before coming back to the box.
fn escapes_box(x: &[i64], r: i64, r_kill: i64, src: &mut StepSource<StreamRng>) -> bool {
    let mut w = ZdWalk::new(x.to_vec());
    loop {
        w.step(src);
        let m = w.linf();
        if m <= r {
            return false;
        }
        if m > r_kill {
            return true;
        }
    }
}

fn walk_stream(seed: u64, tag: u64, sample: u64, walk: u64) -> StepSource<StreamRng> {
    StepSource::new(rng::stream(seed, &[tag, sample, 1, walk]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterlacementSample {
    pub d: usize,
    pub r: usize,
    pub u: f64,
    pub r_kill: usize,
    pub kind: SamplerKind,
    /// Number of walks.
    pub j: u64,
    /// Candidates drawn before thinning, equal to `j` for the equilibrium sampler.
    pub candidates: u64,
    /// Box points hit, indexed as in [`ZdBox::index`].
    pub trace: BitSet,
    /// Level of each walk in `[0, u)`, sorted.
    pub levels: Vec<f64>,
    /// First in-box point of each walk, in level order.
    pub starts: Vec<Vec<i64>>,
    /// In-box segments of each walk as box indices, when recorded.
    pub paths: Option<Vec<Vec<Vec<usize>>>>,
    pub returns: u64,
    pub seed: u64,
}

impl InterlacementSample {
    pub fn bx(&self) -> ZdBox {
        ZdBox::new(self.d, self.r)
    }

    pub fn is_occupied(&self, p: &[i64]) -> bool {
        self.bx().index(p).is_some_and(|i| self.trace.get(i))
    }

    pub fn occupied_count(&self) -> usize {
        self.trace.count_ones()
    }
}

/// One interlacement sample in `B(0, r)` at level `u`.
pub fn sample_interlacement(d: usize, r: usize, u: f64, r_kill: usize, seed: u64) -> Result<InterlacementSample> {
    let sampler = Sampler::new(SamplerConfig::new(d, r).with_kill(r_kill))?;
    sample_with(&sampler, u, seed)
}

pub fn sample_with(sampler: &Sampler, u: f64, seed: u64) -> Result<InterlacementSample> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "level must be finite and non-negative, got {u}"
        )));
    }
    let cfg = &sampler.cfg;
    let bx = cfg.bx();
    let mut rng = rng::stream(seed, &[TAG_INTERLACE, 0, 0]);
    let plan = sampler.plan(u, &mut rng);
    let mut trace = BitSet::new(bx.len());
    let mut paths = cfg.record_paths.then(Vec::new);
    let mut returns = 0;
    for (k, start) in plan.starts.iter().enumerate() {
        let mut src = walk_stream(seed, TAG_INTERLACE, 0, k as u64);
        let mut segments: Vec<Vec<usize>> = Vec::new();
        let record = paths.is_some();
        returns += sampler.walk(start, &mut src, |p, entering| {
            let i = bx.index(p).expect("in box");
            trace.set(i);
            if record {
                if entering {
                    segments.push(Vec::new());
                }
                segments.last_mut().expect("segment").push(i);
            }
            false
        });
        if let Some(ps) = paths.as_mut() {
            ps.push(segments);
        }
    }
    Ok(InterlacementSample {
        d: cfg.d,
        r: cfg.r,
        u,
        r_kill: cfg.r_kill,
        kind: cfg.kind,
        j: plan.starts.len() as u64,
        candidates: plan.candidates,
        trace,
        levels: plan.levels,
        starts: plan.starts,
        paths,
        returns,
        seed,
    })
}

/// Smallest level of a walk visiting each box site, `INFINITY` for sites no
/// walk visits. The interlacement at any level `u' <= u` is `{x: level(x) < u'}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelField {
    pub d: usize,
    pub r: usize,
    pub u_max: f64,
    pub levels: Vec<f64>,
}

impl LevelField {
    pub fn bx(&self) -> ZdBox {
        ZdBox::new(self.d, self.r)
    }

    /// Trace of `I^u`, `u <= u_max`, in the box.
    pub fn trace_at(&self, u: f64) -> BitSet {
        assert!(u <= self.u_max, "level {u} above the sampled {}", self.u_max);
        let mut b = BitSet::new(self.levels.len());
        for (i, &l) in self.levels.iter().enumerate() {
            if l < u {
                b.set(i);
            }
        }
        b
    }
}

/// One sample at level `u_max`, kept as a [`LevelField`].
pub fn level_field(sampler: &Sampler, u_max: f64, seed: u64) -> Result<LevelField> {
    if !(u_max >= 0.0 && u_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "level must be finite and non-negative, got {u_max}"
        )));
    }
    let bx = sampler.cfg.bx();
    // Same streams as `sample_with`, so the field matches that sample.
    let plan = sampler.plan(u_max, &mut rng::stream(seed, &[TAG_INTERLACE, 0, 0]));
    let mut levels = vec![f64::INFINITY; bx.len()];
    // Walks run in level order, so the first visit holds the minimum.
    for (k, (start, &level)) in plan.starts.iter().zip(&plan.levels).enumerate() {
        let mut src = walk_stream(seed, TAG_INTERLACE, 0, k as u64);
        sampler.walk(start, &mut src, |p, _| {
            let i = bx.index(p).expect("in box");
            if levels[i] == f64::INFINITY {
                levels[i] = level;
            }
            false
        });
    }
    Ok(LevelField {
        d: sampler.cfg.d,
        r: sampler.cfg.r,
        u_max,
        levels,
    })
}

/// Vacant components of `B(0, r) \ I^u` with free boundary.
pub fn vacant_component_stats(sampler: &Sampler, u: f64, seed: u64) -> Result<(InterlacementSample, ComponentStats)> {
    let s = sample_with(sampler, u, seed)?;
    let grid = Grid::free_box(s.d, 2 * s.r + 1);
    let stats = label_components(&grid, &s.trace, Adjacency::Nearest);
    Ok((s, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VacancyEstimate {
    pub u: f64,
    pub p_hat: f64,
    pub stderr: f64,
    /// `exp(-u cap V)`.
    pub p_theory: f64,
    pub capacity: f64,
    pub vacant: u64,
    pub samples: u64,
    pub bias_bound: f64,
    /// The truncation bias bound exceeds a tenth of the standard error.
    pub truncation_flag: bool,
}

/// Estimates `P[I^u does not meet V]` from `n` samples.
pub fn vacancy_prob(v: &ZdSet, cfg: &SamplerConfig, u: f64, n: u64, seed: u64) -> Result<VacancyEstimate> {
    let table = vacancy_table(std::slice::from_ref(v), cfg, &[u], n, seed)?;
    Ok(table[0][0].clone())
}

/// Vacancy estimates for several windows and levels from one coupled set of
/// `n` samples at the largest level; entry `[i][k]` is for `vs[i]` at `us[k]`.
pub fn vacancy_table(
    vs: &[ZdSet],
    cfg: &SamplerConfig,
    us: &[f64],
    n: u64,
    seed: u64,
) -> Result<Vec<Vec<VacancyEstimate>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("vacancy_prob needs n >= 1".into()));
    }
    if us.iter().any(|u| !(*u >= 0.0 && u.is_finite())) {
        return Err(Error::InvalidArgument("levels must be finite and non-negative".into()));
    }
    let bx = cfg.bx();
    let mut windows = Vec::with_capacity(vs.len());
    for v in vs {
        if v.dim() != cfg.d {
            return Err(Error::DimensionMismatch {
                expected: cfg.d,
                got: v.dim(),
            });
        }
        let mut bits = BitSet::new(bx.len());
        for p in v.iter() {
            let i = bx.index(&p.0).ok_or_else(|| {
                Error::InvalidArgument(format!("window point {:?} lies outside B(0, {})", p.0, cfg.r))
            })?;
            bits.set(i);
        }
        windows.push(bits);
    }
    let u_max = us.iter().copied().fold(0.0, f64::max);
    let sampler = Sampler::new(cfg.clone())?;

    // Smallest level of a walk meeting each window, per sample.
    let chunks = n.div_ceil(CHUNK);
    let first_hits: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let sampler = &sampler;
            let windows = &windows;
            let bx = &bx;
            (lo..hi).map(move |s| {
                let mut hit = vec![f64::INFINITY; windows.len()];
                if u_max == 0.0 || windows.iter().all(|w| w.count_ones() == 0) {
                    return hit;
                }
                let mut rng = rng::stream(seed, &[TAG_VACANCY, s, 0]);
                let plan = sampler.plan(u_max, &mut rng);
                let mut open: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].count_ones() > 0).collect();
                for (k, (start, &level)) in plan.starts.iter().zip(&plan.levels).enumerate() {
                    if open.is_empty() {
                        break;
                    }
                    let mut src = walk_stream(seed, TAG_VACANCY, s, k as u64);
                    sampler.walk(start, &mut src, |p, _| {
                        let i = bx.index(p).expect("in box");
                        open.retain(|&w| {
                            if windows[w].get(i) {
                                hit[w] = level;
                                false
                            } else {
                                true
                            }
                        });
                        open.is_empty()
                    });
                }
                hit
            })
        })
        .collect();

    let bias_bound = cfg.bias_bound();
    vs.iter()
        .enumerate()
        .map(|(i, v)| {
            let capacity = if v.is_empty() {
                0.0
            } else {
                equilibrium_cached(v)?.capacity
            };
            Ok(us
                .iter()
                .map(|&u| {
                    let vacant = first_hits.iter().filter(|h| h[i] >= u).count() as u64;
                    let p_hat = vacant as f64 / n as f64;
                    let stderr = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
                    VacancyEstimate {
                        u,
                        p_hat,
                        stderr,
                        p_theory: (-u * capacity).exp(),
                        capacity,
                        vacant,
                        samples: n,
                        bias_bound,
                        truncation_flag: bias_bound > 0.1 * stderr,
                    }
                })
                .collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_level_is_empty() {
        let s = sample_interlacement(3, 2, 0.0, 64, 1).unwrap();
        assert_eq!(s.j, 0);
        assert_eq!(s.occupied_count(), 0);
        let thin = Sampler::new(SamplerConfig::new(3, 2).with_kind(SamplerKind::Thinning)).unwrap();
        assert_eq!(sample_with(&thin, 0.0, 1).unwrap().candidates, 0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_interlacement(3, 2, 1.5, 64, 9).unwrap();
        let b = sample_interlacement(3, 2, 1.5, 64, 9).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.levels, b.levels);
        let c = sample_interlacement(3, 2, 1.5, 64, 10).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(sample_interlacement(3, 2, 1.0, 7, 0).is_err());
        assert!(sample_interlacement(3, 0, 1.0, 64, 0).is_err());
        assert!(sample_interlacement(3, 1, -1.0, 64, 0).is_err());
        let far = ZdSet::new(3, vec![crate::lattice::ZdPoint::axis(3, 0, 5)]).unwrap();
        assert!(vacancy_prob(&far, &SamplerConfig::new(3, 1), 1.0, 10, 0).is_err());
        assert!(vacancy_prob(&ZdSet::singleton(3), &SamplerConfig::new(3, 1), 1.0, 0, 0).is_err());
    }

    #[test]
    fn zero_level_vacancy_is_certain() {
        let e = vacancy_prob(&ZdSet::ball(3, 1), &SamplerConfig::new(3, 1), 0.0, 50, 3).unwrap();
        assert_eq!(e.p_hat, 1.0);
        assert_eq!(e.p_theory, 1.0);
    }

    #[test]
    fn bias_bound_powers() {
        let cfg = SamplerConfig::new(3, 8);
        assert_eq!(cfg.r_kill, 64);
        assert!((cfg.bias_bound() - 1.0 / 64.0).abs() < 1e-15);
        let mut plain = cfg.clone();
        plain.far_field = false;
        assert!((plain.bias_bound() - 0.125).abs() < 1e-15);
        assert_eq!(SamplerConfig::new(3, 16).r_kill, 128);
        assert_eq!(SamplerKind::auto(5, 2), SamplerKind::Thinning);
    }
}
