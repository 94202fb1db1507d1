//! Discrete potential theory on `Z^d`: harmonic solves in boxes, equilibrium
//! measures and capacities, Monte Carlo escape estimates and mean hitting
//! times on the torus.

use crate::bits::BitSet;
use crate::error::{Error, Result};
use crate::lattice::{SiteSet, TorusGeom, ZdBox, ZdPoint, ZdSet};
use crate::rng::{self, AliasTable, StepSource};
use crate::rw::{Start, TorusWalk, ZdWalk};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

pub const DEFAULT_TOL: f64 = 1e-10;

const TAG_CAP_MC: u64 = 0x4341_504d;
const TAG_HITTING: u64 = 0x4849_5454;
const MC_CHUNK: u64 = 4096;

/// Value imposed outside the box `B(0, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Zero,
    Constant(f64),
}

impl Boundary {
    fn value(self) -> f64 {
        match self {
            Boundary::Zero => 0.0,
            Boundary::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveOptions {
    /// Solve on one orthant when the set is invariant under all reflections.
    pub exploit_symmetry: bool,
    /// Sweeps between residual checks.
    pub check_every: usize,
    /// Overrides the default cap of `100 R^2` sweeps.
    pub max_sweeps: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            exploit_symmetry: true,
            check_every: 10,
            max_sweeps: None,
        }
    }
}

/// Symmetry reduction applied by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fold {
    /// Whole box.
    None,
    /// One orthant, for sets invariant under every reflection `x_i -> -x_i`.
    Reflect,
    /// The wedge `0 <= x_0 <= ... <= x_{d-1}`, for sets also invariant under
    /// coordinate permutations.
    Full,
}

impl Fold {
    fn canonical(self, p: &mut [i64]) {
        match self {
            Fold::None => {}
            Fold::Reflect => p.iter_mut().for_each(|x| *x = x.abs()),
            Fold::Full => {
                p.iter_mut().for_each(|x| *x = x.abs());
                p.sort_unstable();
            }
        }
    }
}

/// Solution of the Dirichlet problem `h = 1` on `A`, `h = boundary` outside
/// `B(0, R)`, `h` harmonic on `B(0, R) \ A`.
#[derive(Debug, Clone)]
pub struct HarmonicField {
    pub d: usize,
    pub r: usize,
    pub fold: Fold,
    lo: i64,
    side: usize,
    values: Vec<f64>,
    /// Largest `|h(y) - mean of h over neighbors|` on the unknowns.
    pub residual: f64,
    pub iterations: usize,
}

impl HarmonicField {
    /// `h(p)` for `||p||_inf <= R + 1`.
    pub fn value(&self, p: &[i64]) -> Option<f64> {
        if p.len() != self.d || p.iter().any(|x| x.unsigned_abs() as usize > self.r + 1) {
            return None;
        }
        let mut c = p.to_vec();
        self.fold.canonical(&mut c);
        let idx = c
            .iter()
            .fold(0usize, |acc, &x| acc * self.side + (x - self.lo) as usize);
        Some(self.values[idx])
    }

    /// `1 - (1/2d) sum_{y ~ x} h(y)`, the probability that the walk from `x`
    /// leaves `B(0, R)` before returning to `A`.
    pub fn escape(&self, x: &ZdPoint) -> f64 {
        let mut s = 0.0;
        let mut q = x.clone();
        for axis in 0..self.d {
            for delta in [1, -1] {
                q.0[axis] += delta;
                s += self.value(&q.0).expect("neighbor inside the solve domain");
                q.0[axis] -= delta;
            }
        }
        1.0 - s / (2 * self.d) as f64
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Cell {
    Unknown,
    Fixed,
    Mirror,
}

fn is_permutation_symmetric(a: &ZdSet) -> bool {
    a.iter().all(|p| {
        let mut q = p.clone();
        q.0.swap(0, 1);
        let mut c = p.clone();
        c.0.rotate_left(1);
        a.contains(&q) && a.contains(&c)
    })
}

/// Red-black successive over-relaxation for the escape problem.
pub fn harmonic_solve(a: &ZdSet, r: usize, boundary: Boundary, tol: f64) -> Result<HarmonicField> {
    harmonic_solve_with(a, r, boundary, tol, SolveOptions::default())
}

pub fn harmonic_solve_with(
    a: &ZdSet,
    r: usize,
    boundary: Boundary,
    tol: f64,
    opts: SolveOptions,
) -> Result<HarmonicField> {
    let d = a.dim();
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if r == 0 || a.radius() >= r {
        return Err(Error::InvalidArgument(format!(
            "set of radius {} does not fit strictly inside B(0, {r})",
            a.radius()
        )));
    }
    let fold = if !opts.exploit_symmetry || !a.is_reflection_symmetric() {
        Fold::None
    } else if is_permutation_symmetric(a) {
        Fold::Full
    } else {
        Fold::Reflect
    };
    let hi = r as i64 + 1;
    let lo = if fold == Fold::None { -hi } else { -1 };
    let side = (hi - lo + 1) as usize;
    let total = side
        .checked_pow(d as u32)
        .filter(|&t| t <= u32::MAX as usize)
        .ok_or_else(|| Error::ResourceGuard(format!("solve box of radius {r} in dimension {d} is too large")))?;

    let mut strides = vec![1usize; d];
    for i in (0..d.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * side;
    }
    let index_of = |p: &[i64]| -> usize { p.iter().zip(&strides).map(|(&x, &s)| (x - lo) as usize * s).sum() };
    let bval = boundary.value();
    let mut values = vec![0.0f64; total];
    let mut cells = vec![Cell::Unknown; total];
    let mut source = vec![0u32; total];
    let mut unknowns: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
    let mut in_a = BitSet::new(total);
    for p in a.iter() {
        if p.0.iter().all(|&x| x >= lo) {
            in_a.set(index_of(&p.0));
        }
    }
    let mut c = vec![0i64; d];
    for idx in 0..total {
        let mut rem = idx;
        for i in 0..d {
            c[i] = (rem / strides[i]) as i64 + lo;
            rem %= strides[i];
        }
        if c.iter().any(|&x| x.abs() == hi) {
            cells[idx] = Cell::Fixed;
            values[idx] = bval;
        } else if in_a.get(idx) {
            cells[idx] = Cell::Fixed;
            values[idx] = 1.0;
        } else {
            fold.canonical(&mut c);
            let canon = index_of(&c);
            if canon == idx {
                let color = c.iter().sum::<i64>().rem_euclid(2) as usize;
                unknowns[color].push(idx as u32);
            } else {
                cells[idx] = Cell::Mirror;
                source[idx] = canon as u32;
            }
        }
    }
    // Mirrored copies that some unknown reads; signed permutations preserve
    // the parity of the coordinate sum, so a copy has its source's color.
    let mut mirrors: [Vec<(u32, u32)>; 2] = [Vec::new(), Vec::new()];
    let mut seen = BitSet::new(total);
    for color in 0..2 {
        for &i in &unknowns[color] {
            for &st in &strides {
                for j in [i as usize + st, i as usize - st] {
                    if cells[j] == Cell::Mirror && seen.insert(j) {
                        mirrors[1 - color].push((j as u32, source[j]));
                    }
                }
            }
        }
    }
    drop(source);
    drop(cells);

    // Optimal relaxation for the Laplacian on a box of side 2R + 1.
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / (2 * r + 2) as f64).sin());
    let inv = 1.0 / (2 * d) as f64;
    let cap = opts.max_sweeps.unwrap_or(100 * r * r).max(1);
    let check_every = opts.check_every.max(1);
    let neighbor_sum = |values: &[f64], i: usize| -> f64 {
        let mut s = 0.0;
        for &st in &strides {
            s += values[i + st] + values[i - st];
        }
        s
    };
    let mut iterations = 0;
    loop {
        for color in 0..2 {
            for &i in &unknowns[color] {
                let i = i as usize;
                let avg = neighbor_sum(&values, i) * inv;
                values[i] += omega * (avg - values[i]);
            }
            for &(m, s) in &mirrors[color] {
                values[m as usize] = values[s as usize];
            }
        }
        iterations += 1;
        if iterations % check_every == 0 || iterations >= cap {
            let residual = unknowns
                .iter()
                .flatten()
                .map(|&i| {
                    let i = i as usize;
                    (neighbor_sum(&values, i) * inv - values[i]).abs()
                })
                .fold(0.0, f64::max);
            if residual <= tol {
                return Ok(HarmonicField {
                    d,
                    r,
                    fold,
                    lo,
                    side,
                    values,
                    residual,
                    iterations,
                });
            }
            if iterations >= cap {
                return Err(Error::NoConvergence {
                    iterations,
                    residual,
                    tolerance: tol,
                });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactExtrapolated,
    MonteCarlo,
}

/// Equilibrium measure of a finite set: escape probabilities on its inner
/// boundary and their sum, the capacity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumMeasure {
    pub set: ZdSet,
    pub boundary: Vec<ZdPoint>,
    pub weights: Vec<f64>,
    pub capacity: f64,
    pub method: Method,
    /// Estimated absolute error of `capacity`.
    pub error: f64,
    #[serde(default)]
    pub radii: Option<(usize, usize)>,
}

impl EquilibriumMeasure {
    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    /// `e_A(x)`, zero off the inner boundary.
    pub fn weight(&self, x: &ZdPoint) -> f64 {
        self.boundary.binary_search(x).map(|i| self.weights[i]).unwrap_or(0.0)
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.capacity).collect()
    }

    pub fn sampler(&self) -> AliasTable {
        AliasTable::new(&self.weights).expect("positive capacity")
    }

    /// Far-field hitting probability `sum_z e_A(z) G(y - z)` from a distant `y`.
    pub fn far_field_hit(&self, y: &[i64]) -> f64 {
        let d = self.dim();
        let mut buf = vec![0.0; d];
        self.boundary
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| {
                for i in 0..d {
                    buf[i] = (y[i] - z.0[i]) as f64;
                }
                w * green_asymptotic(d, &buf)
            })
            .sum()
    }
}

/// Solver radii used when none are given: `R1 = max(32, 4 rad A)`, `R2 = 2 R1`.
pub fn default_radii(a: &ZdSet) -> (usize, usize) {
    let r1 = 32.max(4 * a.radius());
    (r1, 2 * r1)
}

/// Equilibrium measure by extrapolation to `R = infinity` of the escape
/// probabilities `q_R(x)` computed at radii `r1 < r2`.
///
/// The walk from `x` makes a geometric number of returns to `A` before it
/// escapes, so `1 / q_R(x)` behaves like an expected visit count. Its
/// dependence on the killing radius is `1/q_inf(x) - beta(x) R^{2-d}` to
/// leading order, which is the model fitted here; it agrees with a linear fit
/// of `q_R` in `R^{2-d}` to first order and is much more accurate for sets
/// that are not small compared to `R`.
pub fn equilibrium(a: &ZdSet, r1: usize, r2: usize) -> Result<EquilibriumMeasure> {
    equilibrium_with(a, r1, r2, DEFAULT_TOL)
}

pub fn equilibrium_with(a: &ZdSet, r1: usize, r2: usize, tol: f64) -> Result<EquilibriumMeasure> {
    let d = a.dim();
    if a.is_empty() {
        return Err(Error::InvalidArgument("capacity of the empty set".into()));
    }
    if r1 >= r2 {
        return Err(Error::InvalidArgument(format!("need R1 < R2, got {r1} and {r2}")));
    }
    if 2 * a.radius() > r1 {
        return Err(Error::InvalidArgument(format!(
            "set of radius {} is not inside B(0, R1/2) for R1 = {r1}",
            a.radius()
        )));
    }
    let (h1, h2) = rayon::join(
        || harmonic_solve(a, r1, Boundary::Zero, tol),
        || harmonic_solve(a, r2, Boundary::Zero, tol),
    );
    let (h1, h2) = (h1?, h2?);
    // The walk is killed on leaving B(0, R), i.e. at l_inf radius R + 1.
    let s = |r: usize| ((r + 1) as f64).powi(2 - d as i32);
    let (s1, s2) = (s(r1), s(r2));
    let boundary = a.inner_boundary();
    let mut weights = Vec::with_capacity(boundary.len());
    let mut cap2 = 0.0;
    for x in &boundary {
        let q1 = h1.escape(x);
        let q2 = h2.escape(x);
        // Escape probabilities decrease as the killing radius grows.
        if q2 > q1 + 10.0 * tol || q2 <= 0.0 {
            return Err(Error::UnstableExtrapolation {
                point: x.0.clone(),
                q_small: q1,
                q_large: q2,
            });
        }
        cap2 += q2;
        weights.push((s1 - s2) / (s1 / q2 - s2 / q1));
    }
    let capacity: f64 = weights.iter().sum();
    Ok(EquilibriumMeasure {
        set: a.clone(),
        boundary,
        weights,
        capacity,
        method: Method::ExactExtrapolated,
        error: (cap2 - capacity).abs(),
        radii: Some((r1, r2)),
    })
}

/// `equilibrium` with [`default_radii`].
pub fn equilibrium_default(a: &ZdSet) -> Result<EquilibriumMeasure> {
    let (r1, r2) = default_radii(a);
    equilibrium(a, r1, r2)
}

/// Asymptotic Green function `a_d |x|^{2-d}`, `a_d = d Gamma(d/2 - 1) / (2 pi^{d/2})`.
pub fn green_asymptotic(d: usize, x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    green_constant(d) * norm.powi(2 - d as i32)
}

pub fn green_constant(d: usize) -> f64 {
    let pi = std::f64::consts::PI;
    d as f64 * gamma_half(d as u32 - 2) / (2.0 * pi.powf(d as f64 / 2.0))
}

/// `Gamma(k / 2)` for a positive integer `k`.
fn gamma_half(k: u32) -> f64 {
    let mut k = k;
    let mut out = if k.is_multiple_of(2) {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let base = if k.is_multiple_of(2) { 2 } else { 1 };
    while k > base {
        k -= 2;
        out *= k as f64 / 2.0;
    }
    out
}

/// Monte Carlo capacity estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McCapacity {
    pub capacity: f64,
    pub stderr: f64,
    pub boundary: Vec<ZdPoint>,
    pub escape: Vec<f64>,
    pub walks_per_point: u64,
    pub r_kill: usize,
}

/// Membership oracle for a small set of `Z^d` points.
#[derive(Debug, Clone)]
pub struct SetIndex {
    bx: ZdBox,
    bits: BitSet,
}

impl SetIndex {
    pub fn new(a: &ZdSet) -> Self {
        let bx = ZdBox::new(a.dim(), a.radius());
        let mut bits = BitSet::new(bx.len());
        for p in a.iter() {
            bits.set(bx.index(&p.0).expect("inside its radius"));
        }
        Self { bx, bits }
    }

    #[inline]
    pub fn contains(&self, p: &[i64]) -> bool {
        self.bx.index(p).is_some_and(|i| self.bits.get(i))
    }

    pub fn radius(&self) -> i64 {
        self.bx.r as i64
    }
}

/// Estimates `cap(A)` by running `n` walks from each inner boundary point and
/// counting those that reach `l_inf` radius `r_kill` before returning to `A`.
/// The estimate is biased upwards by `O((diam A / r_kill)^{d-2})`.
pub fn capacity_mc(a: &ZdSet, r_kill: usize, n: u64, seed: u64) -> Result<McCapacity> {
    if n == 0 {
        return Err(Error::InvalidArgument("capacity_mc needs n >= 1".into()));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("capacity of the empty set".into()));
    }
    if 4 * a.radius() > r_kill {
        return Err(Error::InvalidArgument(format!(
            "set of radius {} is not inside B(0, R_kill/4) for R_kill = {r_kill}",
            a.radius()
        )));
    }
    let index = SetIndex::new(a);
    let boundary = a.inner_boundary();
    let chunks = n.div_ceil(MC_CHUNK);
    let jobs: Vec<(usize, u64)> = (0..boundary.len())
        .flat_map(|p| (0..chunks).map(move |c| (p, c)))
        .collect();
    let counts: Vec<u64> = jobs
        .par_iter()
        .map(|&(p, c)| {
            let walks = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut src = StepSource::new(rng::stream(seed, &[TAG_CAP_MC, p as u64, c]));
            (0..walks)
                .filter(|_| escapes(&boundary[p], &index, r_kill as i64, &mut src))
                .count() as u64
        })
        .collect();
    let mut escape = vec![0.0; boundary.len()];
    for (&(p, _), &k) in jobs.iter().zip(&counts) {
        escape[p] += k as f64;
    }
    let mut var = 0.0;
    for e in escape.iter_mut() {
        *e /= n as f64;
        var += *e * (1.0 - *e) / n as f64;
    }
    Ok(McCapacity {
        capacity: escape.iter().sum(),
        stderr: var.sqrt(),
        boundary,
        escape,
        walks_per_point: n,
        r_kill,
    })
}

/// One walk from `x`: true when it reaches radius `r_kill` before returning to the set.
pub(crate) fn escapes<R: rand::RngCore>(x: &ZdPoint, index: &SetIndex, r_kill: i64, src: &mut StepSource<R>) -> bool {
    let mut w = ZdWalk::new(x.0.clone());
    let r_set = index.radius();
    loop {
        w.step(src);
        let m = w.linf();
        if m >= r_kill {
            return true;
        }
        if m <= r_set && index.contains(&w.pos) {
            return false;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanHitting {
    pub mean: f64,
    pub stderr: f64,
    /// `N^d / (mean * cap)`, undefined when the mean is zero.
    pub gloc_ratio: Option<f64>,
    pub samples: u64,
}

/// Mean hitting time of `v` for the walk on the torus from uniform starts.
pub fn mean_hitting(geom: &TorusGeom, v: &SiteSet, capacity: f64, n: u64, seed: u64) -> Result<MeanHitting> {
    if n == 0 {
        return Err(Error::InvalidArgument("mean_hitting needs n >= 1".into()));
    }
    if v.is_empty() {
        return Err(Error::InvalidArgument("hitting time of the empty set".into()));
    }
    let target = v.to_bits(geom.total());
    let chunks = n.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let walks = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut sum = 0.0;
            let mut sq = 0.0;
            for k in 0..walks {
                let mut w = TorusWalk::new(geom, Start::Uniform, rng::derive_seed(seed, &[TAG_HITTING, c, k]))
                    .expect("uniform start");
                let mut pos = w.position();
                while !target.get(pos) {
                    pos = w.step();
                }
                let t = w.time() as f64;
                sum += t;
                sq += t * t;
            }
            (sum, sq)
        })
        .collect();
    let (sum, sq) = partial.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 {
        ((sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    let gloc_ratio = (mean > 0.0).then(|| geom.total() as f64 / (mean * capacity));
    Ok(MeanHitting {
        mean,
        stderr: (var / nf).sqrt(),
        gloc_ratio,
        samples: n,
    })
}

/// Frozen capacities shipped with the crate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldenFile {
    pub generator: String,
    pub tolerance: f64,
    pub entries: Vec<GoldenEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldenEntry {
    pub name: String,
    pub measure: EquilibriumMeasure,
}

/// Sets whose equilibrium measures are frozen in the golden file.
pub fn golden_sets() -> Vec<(String, ZdSet)> {
    let mut out = vec![
        ("point".to_string(), ZdSet::singleton(3)),
        (
            "pair".to_string(),
            ZdSet::new(3, vec![ZdPoint::origin(3), ZdPoint::axis(3, 0, 1)]).expect("valid"),
        ),
    ];
    for r in 1..=4 {
        out.push((format!("ball{r}"), ZdSet::ball(3, r)));
    }
    out
}

/// Recomputes every golden entry.
pub fn golden_regen() -> Result<GoldenFile> {
    let entries = golden_sets()
        .into_iter()
        .map(|(name, set)| {
            Ok(GoldenEntry {
                name,
                measure: equilibrium_default(&set)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GoldenFile {
        generator: format!("tfrg {} golden-regen", env!("CARGO_PKG_VERSION")),
        tolerance: DEFAULT_TOL,
        entries,
    })
}

const GOLDEN_JSON: &str = include_str!("../golden/capacities.json");

pub fn golden_file() -> Result<GoldenFile> {
    Ok(serde_json::from_str(GOLDEN_JSON)?)
}

type Cache = Mutex<HashMap<ZdSet, Arc<EquilibriumMeasure>>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| {
        let mut map = HashMap::new();
        if let Ok(file) = golden_file() {
            for e in file.entries {
                map.insert(e.measure.set.clone(), Arc::new(e.measure));
            }
        }
        Mutex::new(map)
    })
}

/// Equilibrium measure from the golden file, or computed once with default
/// radii and kept for the life of the process.
pub fn equilibrium_cached(a: &ZdSet) -> Result<Arc<EquilibriumMeasure>> {
    if let Some(m) = cache().lock().expect("cache lock").get(a) {
        return Ok(m.clone());
    }
    let m = Arc::new(equilibrium_default(a)?);
    cache().lock().expect("cache lock").insert(a.clone(), m.clone());
    Ok(m)
}
