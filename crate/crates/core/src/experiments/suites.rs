//! Validation suites run by `tfrg validate` and the acceptance target.
//!
//! A suite fixes every parameter except the master seed and a scale:
//! `Full` is the reference size, `Quick` a reduced run for smoke tests and
//! the worker-count determinism check.

use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{run, Check, ExperimentConfig, ExperimentId};
use crate::components::uniqueness_check;
use crate::error::{Error, Result};
use crate::interlace::{vacancy_table, SamplerConfig};
use crate::lattice::{TorusGeom, ZdSet};
use crate::potential::{capacity_mc, equilibrium_cached, harmonic_solve, mean_hitting, Boundary, DEFAULT_TOL};
use crate::quasistat::{killed_semigroup, quasistationary, sup_distance, RestrictedOperator};
use crate::rng::{derive_seed, stream};
use crate::rw::{regeneration_time, walk_trace, WalkConfig};

/// `1 / G(0)` for the simple random walk on `Z^3`, from Watson's closed form
/// `G(0) = 1.516386059151978`.
pub const POINT_CAPACITY_Z3: f64 = 1.0 / 1.516_386_059_151_978;

const TAG_SUITE: u64 = 0x5355_4954;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Quick,
    Full,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Scale::Quick),
            "full" => Ok(Scale::Full),
            _ => Err(Error::InvalidArgument(format!(
                "unknown scale {s:?}, expected quick or full"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Vacancy,
    Capacity,
    Scaling,
    HittingTime,
    Quasistat,
    HittingDist,
    Excursions,
    Mixing,
    Phase,
    Sandwich,
    Uniqueness,
}

impl Suite {
    pub const ALL: [Suite; 11] = [
        Suite::Vacancy,
        Suite::Capacity,
        Suite::Scaling,
        Suite::HittingTime,
        Suite::Quasistat,
        Suite::HittingDist,
        Suite::Excursions,
        Suite::Mixing,
        Suite::Phase,
        Suite::Sandwich,
        Suite::Uniqueness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Vacancy => "vacancy",
            Suite::Capacity => "capacity",
            Suite::Scaling => "scaling",
            Suite::HittingTime => "hitting-time",
            Suite::Quasistat => "quasistat",
            Suite::HittingDist => "hitting-dist",
            Suite::Excursions => "excursions",
            Suite::Mixing => "mixing",
            Suite::Phase => "phase",
            Suite::Sandwich => "sandwich",
            Suite::Uniqueness => "uniqueness",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.as_str()).collect();
            Error::InvalidArgument(format!("unknown suite {s:?}, expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub scale: Scale,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub data: serde_json::Value,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Runs a suite on the current rayon pool.
pub fn run_suite(suite: Suite, scale: Scale, seed: u64) -> Result<SuiteReport> {
    let full = scale == Scale::Full;
    let (checks, data) = match suite {
        Suite::Vacancy => vacancy(if full { 100_000 } else { 2_000 }, seed)?,
        Suite::Capacity => capacity(if full { 20_000 } else { 500 }, seed)?,
        Suite::Scaling => scaling(if full { 16 } else { 6 })?,
        Suite::HittingTime => hitting_time(if full { 10_000 } else { 300 }, seed)?,
        Suite::Quasistat => quasistat()?,
        Suite::Uniqueness => uniqueness(if full { 200 } else { 6 }, seed)?,
        Suite::HittingDist | Suite::Excursions | Suite::Mixing | Suite::Phase | Suite::Sandwich => {
            let cfg = experiment_config(suite, scale, seed);
            let r = run(&cfg)?;
            let data = json!({ "config_hash": r.config_hash, "aggregates": r.aggregates, "summary": r.summary });
            (r.checks, data)
        }
    };
    Ok(SuiteReport {
        suite,
        scale,
        seed,
        checks,
        data,
    })
}

/// Runs a suite inside a pool of `workers` threads.
pub fn run_suite_with_workers(suite: Suite, scale: Scale, seed: u64, workers: usize) -> Result<SuiteReport> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build a pool of {workers} workers: {e}")))?
        .install(|| run_suite(suite, scale, seed))
}

/// Experiment configuration behind an experiment-backed suite.
pub fn experiment_config(suite: Suite, scale: Scale, seed: u64) -> ExperimentConfig {
    let full = scale == Scale::Full;
    let id = match suite {
        Suite::HittingDist => ExperimentId::HittingDistCheck,
        Suite::Excursions => ExperimentId::ExcursionConcentration,
        Suite::Mixing => ExperimentId::MixingCheck,
        Suite::Phase => ExperimentId::PhaseSweep,
        Suite::Sandwich => ExperimentId::CouplingSandwich,
        other => panic!("suite {} is not experiment backed", other.as_str()),
    };
    let mut cfg = ExperimentConfig::new(id);
    cfg.seed = seed;
    if !full {
        match id {
            ExperimentId::HittingDistCheck => {
                cfg.n = vec![20, 24];
                cfg.samples = 2_000;
                cfg.replicas = 4;
            }
            ExperimentId::ExcursionConcentration => {
                cfg.n = vec![32];
                cfg.u = vec![0.5, 1.0];
                cfg.replicas = 8;
            }
            ExperimentId::PhaseSweep => {
                cfg.n = vec![32];
                cfg.u = vec![0.0, 2.5, 3.5];
                cfg.replicas = 2;
            }
            ExperimentId::CouplingSandwich => {
                cfg.n = vec![12, 16];
                cfg.replicas = 300;
            }
            _ => {}
        }
    }
    cfg
}

fn vacancy(n: u64, seed: u64) -> Result<(Vec<Check>, serde_json::Value)> {
    let windows = super::coupling::windows(3)?;
    let sets: Vec<ZdSet> = windows.iter().map(|w| w.1.clone()).collect();
    let us = [0.5, 1.0, 2.0];
    let table = vacancy_table(&sets, &SamplerConfig::new(3, 1), &us, n, seed)?;
    let mut checks = Vec::new();
    for ((name, _), row) in windows.iter().zip(&table) {
        for e in row {
            let dev = (e.p_hat - e.p_theory).abs();
            // A degenerate sample has zero empirical spread; fall back to
            // the binomial spread of the predicted law.
            let stderr = if e.stderr > 0.0 {
                e.stderr
            } else {
                (e.p_theory * (1.0 - e.p_theory) / e.samples as f64).sqrt()
            };
            checks.push(Check::new(
                format!("{name}, u={}: |p_hat - exp(-u cap)| <= 3 stderr", e.u),
                dev <= 3.0 * stderr,
                dev / stderr,
                format!("p_hat {} vs {} (stderr {})", e.p_hat, e.p_theory, e.stderr),
            ));
        }
    }
    Ok((checks, json!({ "estimates": table })))
}

fn capacity(walks: u64, seed: u64) -> Result<(Vec<Check>, serde_json::Value)> {
    const R_KILL: usize = 32;
    let point = equilibrium_cached(&ZdSet::singleton(3))?;
    let dev = (point.capacity - POINT_CAPACITY_Z3).abs();
    let mut checks = vec![Check::new(
        "cap({0}) within 1e-3 of 1/G(0)",
        dev <= 1e-3,
        dev,
        format!("{} vs {POINT_CAPACITY_Z3}", point.capacity),
    )];
    let mut rows = Vec::new();
    let sets: Vec<(String, ZdSet)> = crate::potential::golden_sets().into_iter().take(5).collect();
    for (k, (name, set)) in sets.iter().enumerate() {
        // The estimator kills walks on leaving B(0, R_KILL - 1), so it is
        // compared with the capacity of that killed problem.
        let field = harmonic_solve(set, R_KILL - 1, Boundary::Zero, DEFAULT_TOL)?;
        let killed: f64 = set.inner_boundary().iter().map(|x| field.escape(x)).sum();
        let mc = capacity_mc(set, R_KILL, walks, derive_seed(seed, &[TAG_SUITE, 2, k as u64]))?;
        let z = (mc.capacity - killed).abs() / mc.stderr;
        checks.push(Check::new(
            format!("{name}: Monte Carlo capacity within 3 sigma"),
            z <= 3.0,
            z,
            format!("{} +- {} vs {killed}", mc.capacity, mc.stderr),
        ));
        let extrapolated = equilibrium_cached(set)?.capacity;
        rows.push(json!({ "set": name, "mc": mc.capacity, "stderr": mc.stderr, "killed": killed, "extrapolated": extrapolated }));
    }
    Ok((
        checks,
        json!({ "point": point.capacity, "oracle": POINT_CAPACITY_Z3, "sets": rows, "r_kill": R_KILL }),
    ))
}

fn scaling(r_max: usize) -> Result<(Vec<Check>, serde_json::Value)> {
    let pts: Vec<(f64, f64)> = (2..=r_max)
        .map(|r| Ok(((r as f64).ln(), equilibrium_cached(&ZdSet::ball(3, r))?.capacity.ln())))
        .collect::<Result<_>>()?;
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let slope =
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let caps: Vec<f64> = pts.iter().map(|p| p.1.exp()).collect();
    Ok((
        vec![Check::new(
            format!("log-log slope of cap(B(0,r)), r = 2..{r_max}, in [0.85, 1.15]"),
            (0.85..=1.15).contains(&slope),
            slope,
            "",
        )],
        json!({ "radii": (2..=r_max).collect::<Vec<_>>(), "capacities": caps, "slope": slope }),
    ))
}

fn hitting_time(samples: u64, seed: u64) -> Result<(Vec<Check>, serde_json::Value)> {
    let geom = TorusGeom::new(3, 40)?;
    let cap = equilibrium_cached(&ZdSet::ball(3, 3))?.capacity;
    let h = mean_hitting(
        &geom,
        &geom.linf_ball(0, 3)?,
        cap,
        samples,
        derive_seed(seed, &[TAG_SUITE, 4]),
    )?;
    let ratio = h.gloc_ratio.unwrap_or(f64::INFINITY);
    // Leading finite-size correction of the torus Green function.
    let kappa = 2.837_297 * crate::potential::green_constant(3);
    let corrected = ratio * (1.0 - kappa * cap / 40.0);
    Ok((
        vec![Check::new(
            "N=40, V=B(0,3): |N^d / (E[H_V] cap V) - 1| <= 0.1",
            (ratio - 1.0).abs() <= 0.1,
            ratio,
            format!(
                "E[H] = {} +- {}, finite-size corrected ratio {corrected}",
                h.mean, h.stderr
            ),
        )],
        json!({ "mean": h.mean, "stderr": h.stderr, "capacity": cap, "ratio": ratio, "corrected_ratio": corrected }),
    ))
}

fn quasistat() -> Result<(Vec<Check>, serde_json::Value)> {
    let geom = TorusGeom::new(3, 8)?;
    let b = geom.linf_ball(0, 2)?;
    let q = quasistationary(&geom, &b, 1e-13)?;
    let op = RestrictedOperator::new(&geom, &b)?;
    let t_star = regeneration_time(8) as f64;
    let worst = op
        .sites
        .par_iter()
        .map(|&x| Ok(sup_distance(&killed_semigroup(&op, x, t_star)?.0, &q.sigma)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    // One unit of time contracts the error by the spectral ratio. The start
    // is off the symmetry axes so the second eigenspace is excited.
    let x = geom.site(&[4, 3, 6]);
    let err = |t: f64| -> Result<f64> { Ok(sup_distance(&killed_semigroup(&op, x, t)?.0, &q.sigma)) };
    let t = 120.0;
    let ratio = err(t + 1.0)? / err(t)?;
    let predicted = q.lambda2 / q.lambda1;
    let rel = (ratio / predicted - 1.0).abs();
    Ok((
        vec![
            Check::new(
                "power iteration residual at most 1e-13",
                q.residual <= 1e-13,
                q.residual,
                "",
            ),
            Check::new(
                "conditional law at t* within 1e-6 of sigma for all starts",
                worst <= 1e-6,
                worst,
                format!("t* = {t_star}"),
            ),
            Check::new(
                "error decay ratio within 10% of lambda2/lambda1",
                rel <= 0.1,
                rel,
                format!("observed {ratio}, predicted {predicted}"),
            ),
        ],
        json!({ "lambda1": q.lambda1, "lambda2": q.lambda2, "worst_at_t_star": worst, "decay_ratio": ratio }),
    ))
}

fn uniqueness(masks: u64, seed: u64) -> Result<(Vec<Check>, serde_json::Value)> {
    let geom = TorusGeom::new(3, 30)?;
    let results = (0..masks)
        .into_par_iter()
        .map(|k| {
            let u = 0.5 + 3.5 * stream(seed, &[TAG_SUITE, 11, k]).random::<f64>();
            let mask = walk_trace(&WalkConfig::for_level(
                geom.clone(),
                u,
                derive_seed(seed, &[TAG_SUITE, 11, k]),
            ))?;
            Ok(uniqueness_check(&geom, &mask.bits, 3))
        })
        .collect::<Result<Vec<_>>>()?;
    let held = results.iter().filter(|r| r.hypotheses_hold).count();
    let violations = results
        .iter()
        .filter(|r| r.hypotheses_hold && !r.conclusion_holds)
        .count();
    Ok((
        vec![Check::new(
            format!("N=30, l=3: hypotheses imply the conclusion on {masks} masks"),
            violations == 0,
            violations as f64,
            format!("hypotheses held on {held} masks"),
        )],
        json!({ "masks": masks, "hypotheses_held": held, "violations": violations }),
    ))
}
