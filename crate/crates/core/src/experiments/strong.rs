use std::collections::BTreeSet;

use rayon::prelude::*;
use serde_json::json;

use super::{
    aggregate, bool_f64, contains, find, memory_guard, metrics, params, sorted_grid, Body, BoxGraph, Check,
    ExperimentConfig, Record,
};
use crate::error::Result;
use crate::interlace::{level_field, LevelField, Sampler, SamplerConfig};
use crate::rng::derive_seed;

/// Frequency both events should reach in the reference configuration.
const TARGET: f64 = 0.9;

/// Box-boundary proxies of the two events at scale `n`.
///
/// Touch: the vacant set at `hi` connects `B(0, n)` to `{|x|_inf = 2n + 1}`.
/// Conn: every component of the vacant set at `lo` inside `B(0, n)` of
/// diameter at least `n / 8` meets one common component of the vacant set
/// at `hi` inside `B(0, 2n)`. Since the `hi` vacant set is the smaller one,
/// meeting means sharing a site.
fn events(graph: &BoxGraph, field: &LevelField, n: usize, lo: f64, hi: f64) -> (bool, bool) {
    let vacant_hi = |j: usize| !(field.levels[j] < hi);
    let vacant_lo = |j: usize| !(field.levels[j] < lo);
    let touch = graph.connects(vacant_hi, n, 2 * n + 1);

    let (small, diam) = graph.components(vacant_lo, n);
    let (big, _) = graph.components(vacant_hi, 2 * n);
    let large: Vec<bool> = diam.iter().map(|&dm| 8 * dm >= n).collect();
    let mut met: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); diam.len()];
    for (&s, &b) in small.iter().zip(&big) {
        if s != u32::MAX && large[s as usize] && b != u32::MAX {
            met[s as usize].insert(b);
        }
    }
    let mut common: Option<BTreeSet<u32>> = None;
    for (m, _) in met.into_iter().zip(&large).filter(|(_, l)| **l) {
        common = Some(match common {
            None => m,
            Some(c) => c.intersection(&m).copied().collect(),
        });
    }
    (touch, common.is_none_or(|c| !c.is_empty()))
}

pub(super) fn strong_supercriticality_probe(cfg: &ExperimentConfig) -> Result<Body> {
    let tag = cfg.experiment.tag();
    let mut setups = Vec::new();
    let mut tasks = Vec::new();
    for &n in &cfg.n {
        let r = 2 * n + 1;
        memory_guard(((2 * r + 1) as u128).pow(cfg.d as u32) * 2)?;
        setups.push((n, Sampler::new(SamplerConfig::new(cfg.d, r))?, BoxGraph::new(cfg.d, r)));
        for &u in &cfg.u {
            for i in 0..cfg.replicas {
                tasks.push((
                    setups.len() - 1,
                    u,
                    i,
                    derive_seed(cfg.seed, &[tag, n as u64, u.to_bits(), i]),
                ));
            }
        }
    }
    let records = tasks
        .into_par_iter()
        .map(|(s, u, replica, seed)| {
            let (n, sampler, graph) = &setups[s];
            let (lo, hi) = (u * (1.0 - cfg.mu), u * (1.0 + cfg.mu));
            let field = level_field(sampler, hi, seed)?;
            let (touch, conn) = events(graph, &field, *n, lo, hi);
            Ok(Record {
                params: params(&[("N", *n as f64), ("u", u)]),
                replica,
                seed,
                metrics: metrics(&[("touch", bool_f64(touch)), ("conn", bool_f64(conn))]),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let aggs = aggregate(&records);
    let us = sorted_grid(&cfg.u);
    let mut checks = Vec::new();
    let mut table = Vec::new();
    for &n in &cfg.n {
        let at = |u: f64| find(&aggs, &[("N", n as f64), ("u", u)]).expect("sampled");
        if contains(&us, 0.0) {
            let f = at(0.0).mean("touch");
            checks.push(Check::new(
                format!("N={n}, u=0: touch event always holds"),
                f == 1.0,
                f,
                "",
            ));
        }
        if us.len() > 1 {
            let worst = us
                .windows(2)
                .map(|w| {
                    let (a, b) = (at(w[0]), at(w[1]));
                    b.mean("touch") - a.mean("touch") - 2.0 * (a.stderr("touch") + b.stderr("touch"))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            checks.push(Check::new(
                format!("N={n}: touch frequency non-increasing in u up to 2 stderr"),
                worst <= 0.0,
                worst,
                "largest increase minus twice the summed stderr",
            ));
        }
        for &u in &us {
            let a = at(u);
            let target = 1.0 - (-(n as f64).powf(cfg.mu)).exp();
            table.push(json!({
                "N": n, "u": u, "touch": a.mean("touch"), "touch_stderr": a.stderr("touch"),
                "conn": a.mean("conn"), "conn_stderr": a.stderr("conn"), "target": target,
            }));
            if u > 0.0 {
                let f = a.mean("touch").min(a.mean("conn"));
                checks.push(Check::new(
                    format!("N={n}, u={u}: both event frequencies at least {TARGET} (exploratory)"),
                    f >= TARGET,
                    f,
                    format!("touch {}, conn {}", a.mean("touch"), a.mean("conn")),
                ));
            }
        }
    }
    Ok(Body {
        records,
        checks,
        summary: json!({ "frequencies": table, "label": "exploratory" }),
    })
}
