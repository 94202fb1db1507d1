use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::json;

use super::excursion::radii;
use super::{aggregate, find, memory_guard, Body, Check, ExperimentConfig, Record};
use crate::error::Result;
use crate::lattice::{TorusGeom, ZdSet};
use crate::potential::equilibrium_cached;
use crate::quasistat::quasistationary_sigma;
use crate::rng::{derive_seed, stream, AliasTable, StepSource};

/// Residual tolerance for the quasistationary law. The start law only
/// needs to be accurate well below the sampling noise.
const SIGMA_TOL: f64 = 1e-7;
const MAX_DEVIATION: f64 = 0.1;

/// Orbit of a point under coordinate permutations and reflections.
fn orbit_key(p: &[i64]) -> String {
    let mut a: Vec<i64> = p.iter().map(|x| x.abs()).collect();
    a.sort_unstable();
    let parts: Vec<String> = a.iter().map(|x| x.to_string()).collect();
    format!("orbit_{}", parts.join("_"))
}

pub(super) fn hitting_dist_check(cfg: &ExperimentConfig) -> Result<Body> {
    let tag = cfg.experiment.tag();
    let per_chunk = cfg.samples / cfg.replicas;
    let mut records = Vec::new();
    let mut table = Vec::new();
    let mut deviations = Vec::new();
    for &n in &cfg.n {
        let geom = TorusGeom::new(cfg.d, n)?;
        memory_guard(geom.total() as u128)?;
        let (ra, rb) = radii(n, cfg.eps, cfg.radius)?;
        let a_set = ZdSet::ball(cfg.d, ra);
        let a = geom.linf_ball(0, ra)?.to_bits(geom.total());
        let (sites, sigma, lambda1) = quasistationary_sigma(&geom, &geom.linf_ball(0, rb)?, SIGMA_TOL)?;
        let alias = AliasTable::new(&sigma).expect("positive quasistationary mass");

        // Expected orbit masses from the normalized equilibrium measure.
        let eq = equilibrium_cached(&a_set)?;
        let mut expected: BTreeMap<String, f64> = BTreeMap::new();
        for (p, w) in eq.boundary.iter().zip(eq.normalized()) {
            *expected.entry(orbit_key(&p.0)).or_default() += w;
        }

        let chunk = |c: u64| {
            let seed = derive_seed(cfg.seed, &[tag, n as u64, c]);
            let mut src = StepSource::new(stream(seed, &[]));
            let mut counts: BTreeMap<String, f64> = expected.keys().map(|k| (k.clone(), 0.0)).collect();
            let mut time = 0u64;
            for _ in 0..per_chunk {
                let mut pos = sites[alias.sample(src.rng_mut())];
                while !a.get(pos) {
                    pos = geom.step(pos, src.direction(cfg.d));
                    time += 1;
                }
                *counts
                    .get_mut(&orbit_key(&geom.signed_offset(0, pos).0))
                    .expect("entered through the boundary") += 1.0;
            }
            let mut metrics: BTreeMap<String, f64> =
                counts.into_iter().map(|(k, v)| (k, v / per_chunk as f64)).collect();
            metrics.insert("mean_time".into(), time as f64 / per_chunk as f64);
            Record {
                params: super::params(&[("N", n as f64)]),
                replica: c,
                seed,
                metrics,
            }
        };
        let mut chunks: Vec<Record> = (0..cfg.replicas).into_par_iter().map(chunk).collect();

        let aggs = aggregate(&chunks);
        let agg = find(&aggs, &[("N", n as f64)]).expect("sampled");
        let mut orbits = Vec::new();
        let mut dev = 0.0f64;
        for (k, &e) in &expected {
            let ratio = agg.mean(k) / e;
            dev = dev.max((ratio - 1.0).abs());
            orbits.push(
                json!({ "orbit": k, "expected": e, "observed": agg.mean(k), "stderr": agg.stderr(k), "ratio": ratio }),
            );
        }
        deviations.push(dev);
        table.push(json!({
            "N": n, "r_A": ra, "r_B": rb, "lambda1": lambda1, "capacity": eq.capacity,
            "hits": per_chunk * cfg.replicas, "max_deviation": dev, "orbits": orbits,
        }));
        records.append(&mut chunks);
    }

    let mut checks = Vec::new();
    let last = *deviations.last().expect("nonempty grid");
    checks.push(Check::new(
        format!(
            "N={}: max orbit deviation at most {MAX_DEVIATION}",
            cfg.n[cfg.n.len() - 1]
        ),
        last <= MAX_DEVIATION,
        last,
        format!("deviations per N: {deviations:?}"),
    ));
    if deviations.len() > 1 {
        checks.push(Check::new(
            "deviation decreases with N",
            deviations.windows(2).all(|w| w[1] < w[0]),
            last,
            format!("N {:?}: {deviations:?}", cfg.n),
        ));
    }
    Ok(Body {
        records,
        checks,
        summary: json!({ "sizes": table }),
    })
}
