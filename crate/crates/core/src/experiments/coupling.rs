use rayon::prelude::*;
use serde_json::json;

use super::{aggregate, bool_f64, find, memory_guard, params, sorted_grid, Body, Check, ExperimentConfig, Record};
use crate::error::{Error, Result};
use crate::lattice::{SiteSet, TorusGeom, ZdPoint, ZdSet};
use crate::potential::equilibrium_cached;
use crate::rng::derive_seed;
use crate::rw::{Start, TorusWalk};

/// Smaller couplings scanned for the exploratory report.
const EPS_SCAN: [f64; 6] = [0.2, 0.1, 0.05, 0.02, 0.01, 0.0];

/// Windows at the origin whose vacancy is tracked.
pub(crate) fn windows(d: usize) -> Result<Vec<(&'static str, ZdSet)>> {
    Ok(vec![
        ("point", ZdSet::singleton(d)),
        ("pair", ZdSet::new(d, vec![ZdPoint::origin(d), ZdPoint::axis(d, 0, 1)])?),
        ("ball1", ZdSet::ball(d, 1)),
    ])
}

/// Interval `[exp(-u(1+eps)cap) - 3s, exp(-u(1-eps)cap) + 3s]`.
fn interval(u: f64, eps: f64, cap: f64, stderr: f64) -> (f64, f64) {
    (
        (-u * (1.0 + eps) * cap).exp() - 3.0 * stderr,
        (-u * (1.0 - eps) * cap).exp() + 3.0 * stderr,
    )
}

pub(super) fn coupling_sandwich(cfg: &ExperimentConfig) -> Result<Body> {
    let tag = cfg.experiment.tag();
    let wins = windows(cfg.d)?;
    let caps: Vec<f64> = wins
        .iter()
        .map(|(_, w)| equilibrium_cached(w).map(|m| m.capacity))
        .collect::<Result<_>>()?;

    let mut tasks = Vec::new();
    let mut placed = Vec::new();
    for &n in &cfg.n {
        let geom = TorusGeom::new(cfg.d, n)?;
        memory_guard(geom.total() as u128)?;
        let limit = (n as f64).powf(1.0 - cfg.eps);
        let sets: Vec<SiteSet> = wins
            .iter()
            .map(|(name, w)| {
                if w.radius() as f64 > limit {
                    return Err(Error::InvalidArgument(format!(
                        "window {name} of radius {} exceeds N^(1-eps) = {limit:.3}",
                        w.radius()
                    )));
                }
                geom.place(0, w)
            })
            .collect::<Result<_>>()?;
        placed.push((geom.clone(), sets));
        for &u in &cfg.u {
            for i in 0..cfg.replicas {
                tasks.push((
                    placed.len() - 1,
                    u,
                    i,
                    derive_seed(cfg.seed, &[tag, n as u64, u.to_bits(), i]),
                ));
            }
        }
    }

    let records = tasks
        .into_par_iter()
        .map(|(g, u, replica, seed)| {
            let (geom, sets) = &placed[g];
            let steps = (u * geom.total() as f64).floor() as u64;
            let mut walk = TorusWalk::new(geom, Start::Uniform, seed)?;
            let mut hit = vec![false; sets.len()];
            let mut remaining = sets.len();
            let mut pos = walk.position();
            loop {
                for (h, s) in hit.iter_mut().zip(sets) {
                    if !*h && s.contains(pos) {
                        *h = true;
                        remaining -= 1;
                    }
                }
                if remaining == 0 || walk.time() == steps {
                    break;
                }
                pos = walk.step();
            }
            let metrics = wins
                .iter()
                .zip(&hit)
                .map(|((name, _), &h)| (format!("vacant_{name}"), bool_f64(!h)))
                .collect();
            Ok(Record {
                params: params(&[("N", geom.side() as f64), ("u", u)]),
                replica,
                seed,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let aggs = aggregate(&records);
    let mut checks = Vec::new();
    let mut violations = Vec::new();
    let mut table = Vec::new();
    let mut scan = Vec::new();
    for &n in &cfg.n {
        let mut count = 0usize;
        let mut scan_counts = vec![0usize; EPS_SCAN.len()];
        for &u in &sorted_grid(&cfg.u) {
            let a = find(&aggs, &[("N", n as f64), ("u", u)]).expect("sampled");
            for ((name, _), &cap) in wins.iter().zip(&caps) {
                let key = format!("vacant_{name}");
                let (p, s) = (a.mean(&key), a.stderr(&key));
                let (lo, hi) = interval(u, cfg.eps, cap, s);
                let ok = (lo..=hi).contains(&p);
                count += usize::from(!ok);
                checks.push(Check::new(
                    format!("N={n}, u={u}, {name}: vacancy inside the sandwich"),
                    ok,
                    p,
                    format!("[{lo}, {hi}]"),
                ));
                table.push(json!({ "N": n, "u": u, "window": name, "capacity": cap, "p_hat": p, "stderr": s, "lower": lo, "upper": hi }));
                for (c, &e) in scan_counts.iter_mut().zip(&EPS_SCAN) {
                    let (lo, hi) = interval(u, e, cap, s);
                    *c += usize::from(!(lo..=hi).contains(&p));
                }
            }
        }
        violations.push(count);
        scan.push(json!({ "N": n, "eps": EPS_SCAN, "violations": scan_counts }));
    }
    let nondecreasing = violations.windows(2).all(|w| w[1] <= w[0]);
    checks.push(Check::new(
        "violations do not increase with N",
        nondecreasing,
        *violations.last().expect("nonempty grid") as f64,
        format!("violations per N: {violations:?}"),
    ));
    Ok(Body {
        records,
        checks,
        summary: json!({ "windows": table, "violations": violations, "eps_scan": scan }),
    })
}
