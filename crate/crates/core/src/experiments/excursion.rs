use rayon::prelude::*;
use serde_json::json;

use super::{aggregate, find, memory_guard, metrics, params, sorted_grid, Body, Check, ExperimentConfig, Record};
use crate::error::{Error, Result};
use crate::lattice::{SiteSet, TorusGeom, ZdSet};
use crate::potential::equilibrium_cached;
use crate::rng::derive_seed;
use crate::rw::{excursions, regeneration_time, Start};

/// Window for `K_u / (u cap A)` and the replica share that must fall in it.
pub(crate) const WINDOW: (f64, f64) = (0.5, 2.0);
pub(crate) const MIN_FREQ: f64 = 0.95;
/// Tolerated spread of `E[K_u] / u` across the level grid.
const LINEARITY: f64 = 0.15;
/// Share of replicas covered by the reported `eps'`.
const COVERAGE: f64 = 0.95;

/// `(r_A, r_B)` with `r_A = floor(N^{1-eps})` unless overridden and
/// `r_B = floor(N^{1-eps/2})`.
pub(crate) fn radii(n: usize, eps: f64, radius: Option<usize>) -> Result<(usize, usize)> {
    let ra = radius.unwrap_or_else(|| (n as f64).powf(1.0 - eps).floor() as usize);
    let rb = (n as f64).powf(1.0 - eps / 2.0).floor() as usize;
    if ra > rb {
        return Err(Error::InvalidArgument(format!(
            "A = B(0,{ra}) is not inside B = B(0,{rb})"
        )));
    }
    Ok((ra, rb))
}

pub(super) fn excursion_concentration(cfg: &ExperimentConfig) -> Result<Body> {
    let tag = cfg.experiment.tag();
    let mut setups = Vec::new();
    let mut tasks = Vec::new();
    for &n in &cfg.n {
        let geom = TorusGeom::new(cfg.d, n)?;
        memory_guard(geom.total() as u128)?;
        let (ra, rb) = radii(n, cfg.eps, cfg.radius)?;
        let a: SiteSet = geom.linf_ball(0, ra)?;
        let b: SiteSet = geom.linf_ball(0, rb)?;
        let cap = equilibrium_cached(&ZdSet::ball(cfg.d, ra))?.capacity;
        setups.push((geom, a, b, cap, ra, rb));
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
            let (geom, a, b, cap, _, _) = &setups[s];
            let t_star = regeneration_time(geom.side());
            let horizon = (u * geom.total() as f64).floor() as u64;
            let rec = excursions(geom, a, b, t_star, horizon, Start::Uniform, seed)?;
            let k = rec.count as f64;
            let scale = u * cap;
            Ok(Record {
                params: params(&[("N", geom.side() as f64), ("u", u)]),
                replica,
                seed,
                metrics: metrics(&[("k", k), ("ratio", if scale > 0.0 { k / scale } else { 0.0 })]),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let aggs = aggregate(&records);
    let mut checks = Vec::new();
    let mut table = Vec::new();
    for (geom, _, _, cap, ra, rb) in &setups {
        let n = geom.side();
        let mut per_u = Vec::new();
        for &u in sorted_grid(&cfg.u).iter().filter(|&&u| u > 0.0) {
            let ratios: Vec<f64> = records
                .iter()
                .filter(|r| r.params["N"] == n as f64 && r.params["u"].to_bits() == u.to_bits())
                .map(|r| r.metrics["ratio"])
                .collect();
            let inside = ratios.iter().filter(|x| (WINDOW.0..=WINDOW.1).contains(*x)).count();
            let freq = inside as f64 / ratios.len() as f64;
            checks.push(Check::new(
                format!(
                    "N={n}, u={u}: K_u/(u cap A) in [{}, {}] for at least {MIN_FREQ} of replicas",
                    WINDOW.0, WINDOW.1
                ),
                freq >= MIN_FREQ,
                freq,
                format!("{inside} of {} replicas", ratios.len()),
            ));
            let mut dev: Vec<f64> = ratios.iter().map(|x| (x - 1.0).abs()).collect();
            dev.sort_by(f64::total_cmp);
            let idx = ((COVERAGE * dev.len() as f64).ceil() as usize).clamp(1, dev.len()) - 1;
            let a = find(&aggs, &[("N", n as f64), ("u", u)]).expect("sampled");
            per_u.push((u, a.mean("k")));
            table.push(json!({
                "N": n, "u": u, "r_A": ra, "r_B": rb, "capacity": cap, "t_star": regeneration_time(n),
                "horizon": (u * geom.total() as f64).floor() as u64, "mean_k": a.mean("k"),
                "expected_k": u * cap, "in_window": freq, "eps_prime": dev[idx],
            }));
        }
        if per_u.len() > 1 {
            let slopes: Vec<f64> = per_u.iter().map(|(u, k)| k / u).collect();
            let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = if lo > 0.0 { hi / lo - 1.0 } else { f64::INFINITY };
            checks.push(Check::new(
                format!("N={n}: mean K_u proportional to u within {LINEARITY}"),
                spread <= LINEARITY,
                spread,
                format!("E[K_u]/u per level: {slopes:?}"),
            ));
        }
    }
    Ok(Body {
        records,
        checks,
        summary: json!({ "levels": table }),
    })
}
