//! Simple random walk on the torus and on `Z^d`: traces, the continuous-time
//! walk, and the excursion decomposition between a small ball `A` and a
//! larger concentric ball `B`.

use crate::bits::BitSet;
use crate::error::{Error, Result};
use crate::lattice::{SiteSet, TorusGeom};
use crate::rng::{self, StepSource, StreamRng};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Stream tags, so different operations never share random numbers.
pub(crate) const TAG_WALK: u64 = 0x5741_4c4b;
pub(crate) const TAG_CT_CLOCK: u64 = 0x4354_434c;
pub(crate) const TAG_EXCURSION: u64 = 0x4558_4355;

/// Default cap on the number of steps a single walk may take.
pub const DEFAULT_STEP_CAP: u64 = 1 << 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Uniform,
    Site(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalkConfig {
    pub geom: TorusGeom,
    pub steps: u64,
    pub start: Start,
    pub seed: u64,
    /// Interpret `steps` as a real time horizon of the rate-one continuous-time walk.
    #[serde(default)]
    pub continuous_time: bool,
    #[serde(default = "default_step_cap")]
    pub step_cap: u64,
}

fn default_step_cap() -> u64 {
    DEFAULT_STEP_CAP
}

impl WalkConfig {
    pub fn new(geom: TorusGeom, steps: u64, seed: u64) -> Self {
        Self {
            geom,
            steps,
            start: Start::Uniform,
            seed,
            continuous_time: false,
            step_cap: DEFAULT_STEP_CAP,
        }
    }

    /// Walk of `floor(u N^d)` steps from a uniform start.
    pub fn for_level(geom: TorusGeom, u: f64, seed: u64) -> Self {
        let steps = (u * geom.total() as f64).floor() as u64;
        Self::new(geom, steps, seed)
    }

    pub fn with_start(mut self, start: Start) -> Self {
        self.start = start;
        self
    }
}

/// Sites visited by a walk (or any occupied set of the torus).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitedMask {
    pub geom: TorusGeom,
    pub bits: BitSet,
    /// Number of steps taken by the walk that produced the mask.
    pub steps: u64,
}

impl VisitedMask {
    pub fn empty(geom: TorusGeom) -> Self {
        let bits = BitSet::new(geom.total());
        Self { geom, bits, steps: 0 }
    }

    pub fn from_bits(geom: TorusGeom, bits: BitSet) -> Self {
        assert_eq!(bits.len(), geom.total());
        Self { geom, bits, steps: 0 }
    }

    #[inline]
    pub fn is_occupied(&self, site: usize) -> bool {
        self.bits.get(site)
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn vacant_count(&self) -> usize {
        self.geom.total() - self.occupied_count()
    }
}

/// Discrete-time simple random walk on the torus.
pub struct TorusWalk<'g> {
    geom: &'g TorusGeom,
    pos: usize,
    time: u64,
    steps: StepSource<StreamRng>,
}

impl<'g> TorusWalk<'g> {
    /// Walk driven by the stream `(seed, [TAG_WALK])`; a uniform start is the
    /// first draw of that stream.
    pub fn new(geom: &'g TorusGeom, start: Start, seed: u64) -> Result<Self> {
        Self::from_rng(geom, start, rng::stream(seed, &[TAG_WALK]))
    }

    pub fn from_rng(geom: &'g TorusGeom, start: Start, mut rng: StreamRng) -> Result<Self> {
        let pos = match start {
            Start::Uniform => rng.random_range(0..geom.total()),
            Start::Site(s) if s < geom.total() => s,
            Start::Site(s) => {
                return Err(Error::InvalidArgument(format!("start site {s} out of range")));
            }
        };
        Ok(Self {
            geom,
            pos,
            time: 0,
            steps: StepSource::new(rng),
        })
    }

    #[inline]
    pub fn position(&self) -> usize {
        self.pos
    }

    #[inline]
    pub fn time(&self) -> u64 {
        self.time
    }

    #[inline]
    pub fn step(&mut self) -> usize {
        let dir = self.steps.direction(self.geom.dim());
        self.pos = self.geom.step(self.pos, dir);
        self.time += 1;
        self.pos
    }

    pub fn into_rng(self) -> StreamRng {
        self.steps.into_inner()
    }
}

/// Trace `{X_0, ..., X_steps}` of the walk described by `cfg`.
pub fn walk_trace(cfg: &WalkConfig) -> Result<VisitedMask> {
    if cfg.continuous_time {
        let (mask, _) = ct_walk(&cfg.geom, cfg.steps as f64, cfg.start, cfg.seed, cfg.step_cap)?;
        return Ok(mask);
    }
    if cfg.steps > cfg.step_cap {
        return Err(Error::ResourceGuard(format!(
            "{} steps exceed the step cap {}",
            cfg.steps, cfg.step_cap
        )));
    }
    let mut walk = TorusWalk::new(&cfg.geom, cfg.start, cfg.seed)?;
    Ok(run_trace(&mut walk, cfg.steps))
}

fn run_trace(walk: &mut TorusWalk<'_>, steps: u64) -> VisitedMask {
    let mut bits = BitSet::new(walk.geom.total());
    bits.set(walk.position());
    for _ in 0..steps {
        bits.set(walk.step());
    }
    VisitedMask {
        geom: walk.geom.clone(),
        bits,
        steps,
    }
}

/// Rate-one continuous-time walk up to time `t_end`: returns the trace and
/// the number of jumps, which is Poisson(`t_end`).
pub fn ct_walk(geom: &TorusGeom, t_end: f64, start: Start, seed: u64, step_cap: u64) -> Result<(VisitedMask, u64)> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "t_end must be finite and >= 0, got {t_end}"
        )));
    }
    let jumps = poisson_count(t_end, &mut rng::stream(seed, &[TAG_CT_CLOCK]));
    if jumps > step_cap {
        return Err(Error::ResourceGuard(format!(
            "{jumps} jumps exceed the step cap {step_cap}"
        )));
    }
    let mut walk = TorusWalk::new(geom, start, seed)?;
    Ok((run_trace(&mut walk, jumps), jumps))
}

/// Poisson(mean) draw; zero for a zero mean.
pub fn poisson_count<R: rand::RngCore>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// `ceil((N ln N)^2)`.
pub fn regeneration_time(n: usize) -> u64 {
    let x = n as f64 * (n as f64).ln();
    (x * x).ceil() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excursion {
    /// Entrance time into `A`.
    pub start: u64,
    /// End time, `None` when the walk was stopped before the excursion ended.
    pub end: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcursionRecord {
    pub excursions: Vec<Excursion>,
    /// Number of excursions started at or before the horizon.
    pub count: usize,
    pub t_star: u64,
    pub horizon: u64,
    pub start_site: usize,
}

/// Splits the walk `X_0, ..., X_horizon` into excursions: `R_1` is the first
/// hit of `a`, `U_k` the first time `t >= R_k + t_star` such that the walk
/// avoided `b` during `[t - t_star, t]`, and `R_{k+1}` the next hit of `a`.
pub fn excursions(
    geom: &TorusGeom,
    a: &SiteSet,
    b: &SiteSet,
    t_star: u64,
    horizon: u64,
    start: Start,
    seed: u64,
) -> Result<ExcursionRecord> {
    if t_star == 0 {
        return Err(Error::InvalidArgument("t_star must be positive".into()));
    }
    if !a.is_subset(b) {
        return Err(Error::InvalidArgument("A must be contained in B".into()));
    }
    let in_a = a.to_bits(geom.total());
    let in_b = b.to_bits(geom.total());
    let mut walk = TorusWalk::new(geom, start, seed ^ TAG_EXCURSION)?;
    let start_site = walk.position();

    let mut out = Vec::new();
    // Some(last time in B) while an excursion is running.
    let mut open: Option<u64> = None;
    let mut pos = start_site;
    let mut t = 0u64;
    loop {
        match open {
            None => {
                if in_a.get(pos) {
                    out.push(Excursion { start: t, end: None });
                    open = Some(t);
                }
            }
            Some(last_b) => {
                if in_b.get(pos) {
                    open = Some(t);
                } else if t - last_b > t_star {
                    out.last_mut().expect("open excursion").end = Some(t);
                    open = None;
                    // X_t lies outside B, hence outside A: no new entrance at t.
                }
            }
        }
        if t == horizon {
            break;
        }
        pos = walk.step();
        t += 1;
    }
    let count = out.len();
    Ok(ExcursionRecord {
        excursions: out,
        count,
        t_star,
        horizon,
        start_site,
    })
}

/// Simple random walk on `Z^d` that tracks its `l_inf` norm.
#[derive(Debug, Clone)]
pub struct ZdWalk {
    pub pos: Vec<i64>,
    linf: i64,
}

impl ZdWalk {
    pub fn new(pos: Vec<i64>) -> Self {
        let linf = pos.iter().map(|x| x.abs()).max().unwrap_or(0);
        Self { pos, linf }
    }

    #[inline]
    pub fn linf(&self) -> i64 {
        self.linf
    }

    #[inline]
    pub fn step_dir(&mut self, dir: usize) {
        let axis = dir >> 1;
        let old = self.pos[axis].abs();
        self.pos[axis] += if dir & 1 == 0 { 1 } else { -1 };
        let new = self.pos[axis].abs();
        if new > self.linf {
            self.linf = new;
        } else if old == self.linf && new < old {
            self.linf = self.pos.iter().map(|x| x.abs()).max().unwrap_or(0);
        }
    }

    #[inline]
    pub fn step<R: rand::RngCore>(&mut self, src: &mut StepSource<R>) {
        let dir = src.direction(self.pos.len());
        self.step_dir(dir);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ZdPoint;
    use std::collections::HashSet;

    fn geom(n: usize) -> TorusGeom {
        TorusGeom::new(3, n).unwrap()
    }

    #[test]
    fn zero_steps_marks_one_site() {
        let m = walk_trace(&WalkConfig::new(geom(8), 0, 3)).unwrap();
        assert_eq!(m.occupied_count(), 1);
    }

    #[test]
    fn traces_are_deterministic() {
        let cfg = WalkConfig::new(geom(16), 5000, 99);
        assert_eq!(walk_trace(&cfg).unwrap(), walk_trace(&cfg).unwrap());
        let other = WalkConfig::new(geom(16), 5000, 100);
        assert_ne!(walk_trace(&cfg).unwrap().bits, walk_trace(&other).unwrap().bits);
    }

    /// Coordinate-vector walk with a hash set, consuming the same stream.
    fn reference_trace(n: usize, steps: u64, seed: u64) -> HashSet<Vec<usize>> {
        let total = n * n * n;
        let mut rng = rng::stream(seed, &[TAG_WALK]);
        let start = rng.random_range(0..total);
        let mut x = vec![start / (n * n), (start / n) % n, start % n];
        let mut src = StepSource::new(rng);
        let mut seen = HashSet::new();
        seen.insert(x.clone());
        for _ in 0..steps {
            let dir = src.direction(3);
            let axis = dir / 2;
            x[axis] = if dir.is_multiple_of(2) {
                (x[axis] + 1) % n
            } else {
                (x[axis] + n - 1) % n
            };
            seen.insert(x.clone());
        }
        seen
    }

    #[test]
    fn trace_matches_reference_walk() {
        let g = geom(16);
        let cfg = WalkConfig::new(g.clone(), 100_000, 2024);
        let mask = walk_trace(&cfg).unwrap();
        let reference = reference_trace(16, 100_000, 2024);
        assert_eq!(mask.occupied_count(), reference.len());
        for c in &reference {
            assert!(mask.is_occupied(g.site(c)));
        }
        assert!(mask.occupied_count() as u64 <= cfg.steps + 1);
    }

    #[test]
    fn step_cap_is_enforced() {
        let mut cfg = WalkConfig::new(geom(8), 1000, 1);
        cfg.step_cap = 10;
        assert!(matches!(walk_trace(&cfg), Err(Error::ResourceGuard(_))));
    }

    #[test]
    fn continuous_time_zero_horizon() {
        let (m, jumps) = ct_walk(&geom(8), 0.0, Start::Uniform, 5, DEFAULT_STEP_CAP).unwrap();
        assert_eq!(jumps, 0);
        assert_eq!(m.occupied_count(), 1);
        assert!(ct_walk(&geom(8), -1.0, Start::Uniform, 5, DEFAULT_STEP_CAP).is_err());
    }

    #[test]
    fn continuous_time_jump_count_is_poisson() {
        let g = geom(8);
        let reps = 10_000;
        let counts: Vec<f64> = (0..reps)
            .map(|i| ct_walk(&g, 100.0, Start::Site(0), i, DEFAULT_STEP_CAP).unwrap().1 as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / reps as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        // sd of the sample mean is 0.1; sd of the sample variance is about
        // sqrt((mu4 - sigma^4) / n) = sqrt((3*100^2 + 100 - 100^2) / 1e4) ~ 1.42.
        assert!((mean - 100.0).abs() < 3.0 * 0.1, "mean {mean}");
        assert!((var - 100.0).abs() < 3.0 * 1.42, "var {var}");
    }

    #[test]
    fn ct_trace_equals_embedded_discrete_trace() {
        let g = geom(10);
        let (m, jumps) = ct_walk(&g, 500.0, Start::Uniform, 77, DEFAULT_STEP_CAP).unwrap();
        let d = walk_trace(&WalkConfig::new(g, jumps, 77)).unwrap();
        assert_eq!(m.bits, d.bits);
    }

    #[test]
    fn excursions_never_hitting_a() {
        let g = geom(16);
        let a = g.linf_ball(g.site(&[8, 8, 8]), 1).unwrap();
        let b = g.linf_ball(g.site(&[8, 8, 8]), 2).unwrap();
        let rec = excursions(&g, &a, &b, 10, 0, Start::Site(0), 1).unwrap();
        assert_eq!(rec.count, 0);
        assert!(rec.excursions.is_empty());
    }

    #[test]
    fn excursions_degenerate_whole_torus() {
        let g = geom(6);
        let all = SiteSet::all(&g);
        let rec = excursions(&g, &all, &all, 5, 2000, Start::Uniform, 3).unwrap();
        assert_eq!(rec.count, 1);
        assert_eq!(rec.excursions[0], Excursion { start: 0, end: None });
    }

    #[test]
    fn excursions_validate_arguments() {
        let g = geom(8);
        let a = g.linf_ball(0, 2).unwrap();
        let b = g.linf_ball(0, 1).unwrap();
        assert!(excursions(&g, &a, &b, 5, 10, Start::Uniform, 1).is_err());
        assert!(excursions(&g, &b, &a, 0, 10, Start::Uniform, 1).is_err());
    }

    #[test]
    fn excursion_record_replays_against_trajectory() {
        let g = geom(32);
        let a = g.linf_ball(0, 4).unwrap();
        let b = g.linf_ball(0, 11).unwrap();
        let t_star = 2_000;
        let horizon = g.total() as u64;
        for seed in 0..3 {
            let rec = excursions(&g, &a, &b, t_star, horizon, Start::Uniform, seed).unwrap();
            // Replay the same trajectory and check every condition by brute force.
            let mut walk = TorusWalk::new(&g, Start::Uniform, seed ^ TAG_EXCURSION).unwrap();
            let mut traj = vec![walk.position()];
            for _ in 0..horizon {
                traj.push(walk.step());
            }
            assert_eq!(traj[0], rec.start_site);
            let in_a = |t: usize| a.contains(traj[t]);
            let in_b = |t: usize| b.contains(traj[t]);
            let mut prev_end: Option<u64> = None;
            for (k, e) in rec.excursions.iter().enumerate() {
                let r = e.start as usize;
                assert!(in_a(r));
                let from = prev_end.map_or(0, |u| u as usize);
                assert!((from..r).all(|t| !in_a(t)), "R_{k} is not the first hit");
                if let Some(p) = prev_end {
                    assert!(p < e.start);
                }
                match e.end {
                    Some(u) => {
                        let u = u as usize;
                        assert!(u >= r + t_star as usize);
                        assert!((u - t_star as usize..=u).all(|t| !in_b(t)));
                        // No earlier time satisfies the window condition.
                        for t in r + t_star as usize..u {
                            assert!((t - t_star as usize..=t).any(in_b));
                        }
                        prev_end = Some(u as u64);
                    }
                    None => {
                        assert_eq!(k + 1, rec.excursions.len());
                        prev_end = None;
                    }
                }
            }
            // Every visit to A lies inside some [R_k, U_k].
            for (t, &s) in traj.iter().enumerate() {
                if a.contains(s) {
                    let t = t as u64;
                    assert!(rec
                        .excursions
                        .iter()
                        .any(|e| e.start <= t && e.end.is_none_or(|u| t <= u)));
                }
            }
        }
    }

    #[test]
    fn regeneration_time_uses_natural_log() {
        assert_eq!(regeneration_time(8), 277);
        assert_eq!(regeneration_time(64), 70_846);
    }

    #[test]
    fn zd_walk_tracks_norm() {
        let mut w = ZdWalk::new(vec![0, 0, 0]);
        let mut src = StepSource::new(rng::stream(1, &[]));
        for _ in 0..10_000 {
            w.step(&mut src);
            assert_eq!(w.linf(), ZdPoint(w.pos.clone()).linf());
        }
    }
}
