use rayon::prelude::*;
use serde_json::json;

use super::{
    aggregate, bool_f64, contains, find, memory_guard, metrics, params, sorted_grid, Body, Check, ExperimentConfig,
    Record,
};
use crate::components::{label_mask, Adjacency};
use crate::error::Result;
use crate::lattice::TorusGeom;
use crate::rng::derive_seed;
use crate::rw::{walk_trace, WalkConfig};

/// The pair of levels on either side of the phase transition at N=200.
const LOW: f64 = 2.5;
const HIGH: f64 = 3.5;
const MIN_RATIO: f64 = 5.0;
const MIN_WRAP_FREQ: f64 = 0.8;

pub(super) fn phase_sweep(cfg: &ExperimentConfig) -> Result<Body> {
    let tag = cfg.experiment.tag();
    let mut tasks = Vec::new();
    for &n in &cfg.n {
        let geom = TorusGeom::new(cfg.d, n)?;
        memory_guard(geom.total() as u128)?;
        for &u in &cfg.u {
            for i in 0..cfg.replicas {
                tasks.push((
                    geom.clone(),
                    u,
                    i,
                    derive_seed(cfg.seed, &[tag, n as u64, u.to_bits(), i]),
                ));
            }
        }
    }
    let records = tasks
        .into_par_iter()
        .map(|(geom, u, replica, seed)| {
            let mask = walk_trace(&WalkConfig::for_level(geom.clone(), u, seed))?;
            let stats = label_mask(&mask, Adjacency::Nearest);
            let total = geom.total() as f64;
            Ok(Record {
                params: params(&[("N", geom.side() as f64), ("u", u)]),
                replica,
                seed,
                metrics: metrics(&[
                    ("frac_max", stats.max_volume() as f64 / total),
                    ("sec_volume", stats.sec_volume() as f64),
                    ("wraps", bool_f64(stats.wraps_all_axes)),
                    ("vacant_frac", stats.vacant_count() as f64 / total),
                    ("components", stats.components.len() as f64),
                ]),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let aggs = aggregate(&records);
    let mut checks = Vec::new();
    let us = sorted_grid(&cfg.u);
    for &n in &cfg.n {
        let nf = n as f64;
        let at = |u: f64| find(&aggs, &[("N", nf), ("u", u)]).expect("every grid point sampled");
        if contains(&us, 0.0) {
            let total = (n as f64).powi(cfg.d as i32);
            let expected = 1.0 - 1.0 / total;
            let got = at(0.0).mean("frac_max");
            checks.push(Check::new(
                format!("N={n}: zero level leaves one visited site"),
                (got - expected).abs() <= 1e-12,
                got,
                format!("expected {expected}"),
            ));
        }
        let worst = us
            .windows(2)
            .map(|w| {
                let (a, b) = (at(w[0]), at(w[1]));
                let slack = 2.0 * (a.stderr("frac_max") + b.stderr("frac_max"));
                b.mean("frac_max") - a.mean("frac_max") - slack
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if us.len() > 1 {
            checks.push(Check::new(
                format!("N={n}: largest fraction non-increasing in u up to 2 stderr"),
                worst <= 0.0,
                worst,
                "largest increase minus twice the summed stderr",
            ));
        }
        if contains(&us, LOW) && contains(&us, HIGH) {
            let (lo, hi) = (at(LOW), at(HIGH));
            let ratio = lo.mean("frac_max") / hi.mean("frac_max");
            checks.push(Check::new(
                format!("N={n}: fraction at u={LOW} at least {MIN_RATIO}x that at u={HIGH}"),
                ratio >= MIN_RATIO,
                ratio,
                format!("{} vs {}", lo.mean("frac_max"), hi.mean("frac_max")),
            ));
            let wraps = lo.mean("wraps");
            checks.push(Check::new(
                format!("N={n}: largest component wraps all axes at u={LOW}"),
                wraps >= MIN_WRAP_FREQ,
                wraps,
                format!("required frequency {MIN_WRAP_FREQ}"),
            ));
        }
    }
    let curve: Vec<_> = aggs
        .iter()
        .map(|a| json!({ "N": a.params["N"], "u": a.params["u"], "frac_max": a.mean("frac_max"), "stderr": a.stderr("frac_max") }))
        .collect();
    Ok(Body {
        records,
        checks,
        summary: json!({ "curve": curve }),
    })
}
