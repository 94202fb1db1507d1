//! Replicated experiments with tabular output.
//!
//! Every experiment expands an [`ExperimentConfig`] into independent tasks,
//! one per parameter point and replica. Each task draws its randomness from
//! `derive_seed(master, [tag, ...params, replica])`, so results are fixed by
//! the master seed alone and do not depend on the worker count. Records come
//! back in task order and aggregates are recomputed from them.

mod boxfield;
mod connectivity;
mod coupling;
mod excursion;
mod hitting;
mod mixing;
mod phase;
mod strong;
pub mod suites;
mod table;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use boxfield::BoxGraph;
pub use mixing::torus_tv;
pub use table::{read_csv, write_csv};

/// Environment variable overriding the memory cap, in bytes.
pub const MEMORY_CAP_ENV: &str = "TFRG_MEMORY_CAP_BYTES";
pub const DEFAULT_MEMORY_CAP: u64 = 2 << 30;

/// Refuses arrays of `sites` four-byte labels above the memory cap.
pub fn memory_guard(sites: u128) -> Result<()> {
    let cap = match std::env::var(MEMORY_CAP_ENV) {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::InvalidArgument(format!("{MEMORY_CAP_ENV} must be a byte count, got {v:?}")))?,
        Err(_) => DEFAULT_MEMORY_CAP,
    };
    let bytes = sites.saturating_mul(4);
    if bytes > cap as u128 {
        return Err(Error::ResourceGuard(format!(
            "{sites} sites need {bytes} bytes of labels, above the cap of {cap} bytes ({MEMORY_CAP_ENV})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    PhaseSweep,
    CouplingSandwich,
    ExcursionConcentration,
    MixingCheck,
    HittingDistCheck,
    ConnectivityDecay,
    StrongSupercriticalityProbe,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::PhaseSweep,
        ExperimentId::CouplingSandwich,
        ExperimentId::ExcursionConcentration,
        ExperimentId::MixingCheck,
        ExperimentId::HittingDistCheck,
        ExperimentId::ConnectivityDecay,
        ExperimentId::StrongSupercriticalityProbe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::PhaseSweep => "phase-sweep",
            ExperimentId::CouplingSandwich => "coupling-sandwich",
            ExperimentId::ExcursionConcentration => "excursion-concentration",
            ExperimentId::MixingCheck => "mixing-check",
            ExperimentId::HittingDistCheck => "hitting-dist-check",
            ExperimentId::ConnectivityDecay => "connectivity-decay",
            ExperimentId::StrongSupercriticalityProbe => "strong-supercriticality-probe",
        }
    }

    fn tag(self) -> u64 {
        0x4558_5000 + self as u64
    }

    /// Whether the `u` grid is read.
    fn uses_levels(self) -> bool {
        !matches!(self, ExperimentId::HittingDistCheck)
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str() == s || e.as_str().replace('-', "_") == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ExperimentId::ALL.iter().map(|e| e.as_str()).collect();
                Error::InvalidArgument(format!(
                    "unknown experiment {s:?}, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Parameters of one experiment run.
///
/// `n` is the side grid for torus experiments and the box scale for the
/// strong-supercriticality probe. For the mixing check `u` holds time
/// multiples of `t*`; the hitting-distribution check ignores it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub d: usize,
    pub n: Vec<usize>,
    #[serde(default)]
    pub u: Vec<f64>,
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub delta: f64,
    pub replicas: u64,
    pub seed: u64,
    /// Not part of the config hash: outputs are identical for any worker count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Box radii `L` of the connectivity proxies.
    #[serde(default)]
    pub ell: Vec<usize>,
    #[serde(default)]
    pub mu: f64,
    /// Total hits collected by the hitting-distribution check.
    #[serde(default)]
    pub samples: u64,
    /// Radius of `A = B(0, r)`; defaults to `floor(N^{1-eps})`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
}

impl ExperimentConfig {
    /// The reference configuration of each experiment.
    pub fn new(experiment: ExperimentId) -> Self {
        let base = ExperimentConfig {
            experiment,
            d: 3,
            n: vec![],
            u: vec![1.0],
            eps: 0.0,
            delta: 0.0,
            replicas: 1,
            seed: 0,
            workers: None,
            out: None,
            ell: vec![],
            mu: 0.0,
            samples: 0,
            radius: None,
        };
        match experiment {
            ExperimentId::PhaseSweep => ExperimentConfig {
                n: vec![200],
                u: vec![2.5, 3.5],
                replicas: 5,
                ..base
            },
            ExperimentId::CouplingSandwich => ExperimentConfig {
                n: vec![32, 64],
                eps: 0.3,
                replicas: 10_000,
                ..base
            },
            ExperimentId::ExcursionConcentration => ExperimentConfig {
                n: vec![64],
                eps: 0.5,
                replicas: 100,
                ..base
            },
            ExperimentId::MixingCheck => ExperimentConfig {
                n: vec![6, 8, 10, 12],
                ..base
            },
            ExperimentId::HittingDistCheck => ExperimentConfig {
                n: vec![32, 64],
                u: vec![],
                eps: 0.5,
                replicas: 10,
                samples: 100_000,
                radius: Some(4),
                ..base
            },
            ExperimentId::ConnectivityDecay => ExperimentConfig {
                n: vec![],
                u: (1..=10).map(|k| 0.5 * k as f64).collect(),
                ell: vec![4, 8, 16],
                replicas: 100,
                ..base
            },
            ExperimentId::StrongSupercriticalityProbe => ExperimentConfig {
                d: 5,
                n: vec![2, 3, 4],
                u: vec![0.1],
                mu: 0.1,
                replicas: 50,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d < 1 {
            return bad("dimension must be at least 1".into());
        }
        if self.replicas < 1 {
            return bad("replicas must be at least 1".into());
        }
        if self.experiment == ExperimentId::ConnectivityDecay {
            if self.ell.is_empty() || self.ell.contains(&0) {
                return bad("connectivity-decay needs a nonempty grid of positive radii (ell)".into());
            }
        } else if self.n.is_empty() || self.n.contains(&0) {
            return bad("the side grid n must be nonempty and positive".into());
        }
        if self.experiment.uses_levels() {
            if self.u.is_empty() {
                return bad("the level grid u must be nonempty".into());
            }
            if let Some(u) = self.u.iter().find(|u| !(u.is_finite() && **u >= 0.0)) {
                return bad(format!("levels must be finite and non-negative, got {u}"));
            }
        }
        if !(0.0..1.0).contains(&self.eps) {
            return bad(format!("eps must lie in [0, 1), got {}", self.eps));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1], got {}", self.delta));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return bad(format!("mu must lie in [0, 1), got {}", self.mu));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if self.experiment == ExperimentId::HittingDistCheck
            && (self.samples == 0 || !self.samples.is_multiple_of(self.replicas))
        {
            return bad("samples must be a positive multiple of replicas".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every field that affects results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.out = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub params: BTreeMap<String, f64>,
    pub replica: u64,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub params: BTreeMap<String, f64>,
    pub replicas: u64,
    pub mean: BTreeMap<String, f64>,
    pub stderr: BTreeMap<String, f64>,
}

impl Aggregate {
    pub fn mean(&self, metric: &str) -> f64 {
        self.mean[metric]
    }

    pub fn stderr(&self, metric: &str) -> f64 {
        self.stderr[metric]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, value: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            value: if value.is_finite() {
                value
            } else {
                f64::MAX.copysign(value)
            },
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub master_seed: u64,
    pub seed_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub experiment: ExperimentId,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub records: Vec<Record>,
    pub aggregates: Vec<Aggregate>,
    pub checks: Vec<Check>,
    pub summary: serde_json::Value,
    /// Kept out of the JSON summary so outputs stay byte-identical; written
    /// to a separate timing file.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes") + "\n"
    }

    /// Writes `<id>.csv`, `<id>.json` and `<id>.timing.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let stem = self.experiment.as_str();
        let csv = dir.join(format!("{stem}.csv"));
        write_csv(self, &csv)?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(format!("writing {}", json.display()), e))?;
        let timing = dir.join(format!("{stem}.timing.json"));
        let body = serde_json::json!({ "config_hash": self.config_hash, "wall_clock_secs": self.wall_clock_secs });
        std::fs::write(&timing, serde_json::to_string_pretty(&body)? + "\n")
            .map_err(|e| Error::io(format!("writing {}", timing.display()), e))?;
        Ok(vec![csv, json, timing])
    }
}

/// Output of an experiment body, before aggregation.
pub(crate) struct Body {
    pub records: Vec<Record>,
    pub checks: Vec<Check>,
    pub summary: serde_json::Value,
}

/// Groups records by parameters, in order of first appearance, and
/// computes the mean and standard error of every metric.
pub fn aggregate(records: &[Record]) -> Vec<Aggregate> {
    type Key = Vec<(String, u64)>;
    let mut groups: Vec<(Key, Vec<&Record>)> = Vec::new();
    for r in records {
        let key: Key = r.params.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect();
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(_, rs)| {
            let n = rs.len() as f64;
            let mut mean = BTreeMap::new();
            let mut stderr = BTreeMap::new();
            for name in rs[0].metrics.keys() {
                let xs: Vec<f64> = rs.iter().map(|r| r.metrics[name]).collect();
                let m = xs.iter().sum::<f64>() / n;
                let var = if rs.len() > 1 {
                    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                mean.insert(name.clone(), m);
                stderr.insert(name.clone(), (var / n).sqrt());
            }
            Aggregate {
                params: rs[0].params.clone(),
                replicas: rs.len() as u64,
                mean,
                stderr,
            }
        })
        .collect()
}

/// Aggregate whose parameters match every `(name, value)` pair.
pub fn find<'a>(aggs: &'a [Aggregate], params: &[(&str, f64)]) -> Option<&'a Aggregate> {
    aggs.iter().find(|a| {
        params
            .iter()
            .all(|(k, v)| a.params.get(*k).is_some_and(|x| x.to_bits() == v.to_bits()))
    })
}

pub(crate) fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub(crate) fn metrics(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    params(pairs)
}

pub(crate) fn bool_f64(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Runs the configured experiment, inside a dedicated thread pool when a
/// worker count is given.
pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let started = Instant::now();
    let body = match cfg.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build a pool of {k} workers: {e}")))?
            .install(|| dispatch(cfg))?,
        None => dispatch(cfg)?,
    };
    Ok(RunResult {
        experiment: cfg.experiment,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        provenance: Provenance {
            generator: "ChaCha8Rng".into(),
            master_seed: cfg.seed,
            seed_path: format!("derive_seed(master, [{:#x}, params..., replica])", cfg.experiment.tag()),
        },
        aggregates: aggregate(&body.records),
        records: body.records,
        checks: body.checks,
        summary: body.summary,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn dispatch(cfg: &ExperimentConfig) -> Result<Body> {
    match cfg.experiment {
        ExperimentId::PhaseSweep => phase::phase_sweep(cfg),
        ExperimentId::CouplingSandwich => coupling::coupling_sandwich(cfg),
        ExperimentId::ExcursionConcentration => excursion::excursion_concentration(cfg),
        ExperimentId::MixingCheck => mixing::mixing_check(cfg),
        ExperimentId::HittingDistCheck => hitting::hitting_dist_check(cfg),
        ExperimentId::ConnectivityDecay => connectivity::connectivity_decay(cfg),
        ExperimentId::StrongSupercriticalityProbe => strong::strong_supercriticality_probe(cfg),
    }
}

pub fn phase_sweep(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_as(cfg, ExperimentId::PhaseSweep)
}

pub fn coupling_sandwich(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_as(cfg, ExperimentId::CouplingSandwich)
}

pub fn excursion_concentration(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_as(cfg, ExperimentId::ExcursionConcentration)
}

pub fn mixing_check(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_as(cfg, ExperimentId::MixingCheck)
}

pub fn hitting_dist_check(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_as(cfg, ExperimentId::HittingDistCheck)
}

pub fn connectivity_decay(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_as(cfg, ExperimentId::ConnectivityDecay)
}

pub fn strong_supercriticality_probe(cfg: &ExperimentConfig) -> Result<RunResult> {
    run_as(cfg, ExperimentId::StrongSupercriticalityProbe)
}

fn run_as(cfg: &ExperimentConfig, id: ExperimentId) -> Result<RunResult> {
    if cfg.experiment != id {
        return Err(Error::InvalidArgument(format!(
            "config is for {}, not {id}",
            cfg.experiment
        )));
    }
    run(cfg)
}

/// Distinct grid values in increasing order.
pub(crate) fn sorted_grid(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| a.to_bits() == b.to_bits());
    v
}

pub(crate) fn contains(xs: &[f64], x: f64) -> bool {
    xs.iter().any(|v| v.to_bits() == x.to_bits())
}
