use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use super::{
    aggregate, bool_f64, contains, find, memory_guard, metrics, params, sorted_grid, Body, BoxGraph, Check,
    ExperimentConfig, Record,
};
use crate::error::Result;
use crate::interlace::{level_field, Sampler, SamplerConfig};
use crate::rng::{derive_seed, stream};

const BOOTSTRAP: usize = 200;
/// Bracketing levels and thresholds for the origin proxy at the largest L.
const LOW: (f64, f64) = (0.5, 0.5);
const HIGH: (f64, f64) = (5.0, 0.05);

/// Logistic fit `P[event] = 1 / (1 + exp(-(a + b u)))` by Newton's method on
/// the binomial likelihood with a small ridge. Returns the crossover
/// `u_c = -a/b` when the fitted curve decreases.
pub(crate) fn logistic_crossover(points: &[(f64, f64)]) -> Option<f64> {
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (-1e-6 * a, -1e-6 * b, 1e-6, 0.0, 1e-6);
        for &(u, y) in points {
            let p = 1.0 / (1.0 + (-(a + b * u)).exp());
            let w = p * (1.0 - p);
            ga += y - p;
            gb += (y - p) * u;
            haa += w;
            hab += w * u;
            hbb += w * u * u;
        }
        let det = haa * hbb - hab * hab;
        if !(det > 0.0) {
            return None;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        a += da;
        b += db;
        if da.abs() + db.abs() < 1e-10 {
            break;
        }
    }
    (b < 0.0 && a.is_finite()).then(|| -a / b).filter(|u| u.is_finite())
}

pub(super) fn connectivity_decay(cfg: &ExperimentConfig) -> Result<Body> {
    let tag = cfg.experiment.tag();
    let us = sorted_grid(&cfg.u);
    let u_max = *us.last().expect("nonempty grid");
    let mut ells = cfg.ell.clone();
    ells.sort_unstable();
    ells.dedup();
    let l_max = *ells.last().expect("nonempty grid");
    let r = 2 * l_max + 1;
    memory_guard(((2 * r + 1) as u128).pow(cfg.d as u32) * 2)?;
    let sampler = Sampler::new(SamplerConfig::new(cfg.d, r))?;
    let graph = BoxGraph::new(cfg.d, r);

    let per_replica = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, &[tag, i]);
            let field = level_field(&sampler, u_max, seed)?;
            let mut out = Vec::new();
            for &u in &us {
                let vacant = |j: usize| !(field.levels[j] < u);
                for &l in &ells {
                    out.push(Record {
                        params: params(&[("L", l as f64), ("u", u)]),
                        replica: i,
                        seed,
                        metrics: metrics(&[
                            ("eta", bool_f64(graph.connects(vacant, 0, l))),
                            ("alpha", bool_f64(graph.connects(vacant, l, 2 * l + 1))),
                        ]),
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<Record> = per_replica.into_iter().flatten().collect();

    let aggs = aggregate(&records);
    let at = |u: f64, l: usize| find(&aggs, &[("L", l as f64), ("u", u)]).expect("sampled");
    let mut checks = Vec::new();
    if contains(&us, 0.0) {
        let worst = ells
            .iter()
            .map(|&l| at(0.0, l).mean("eta").min(at(0.0, l).mean("alpha")))
            .fold(1.0, f64::min);
        checks.push(Check::new(
            "u=0: both proxies equal 1",
            worst == 1.0,
            worst,
            "smallest proxy frequency",
        ));
    }
    let mut worst = f64::NEG_INFINITY;
    for &u in &us {
        for w in ells.windows(2) {
            let (a, b) = (at(u, w[0]), at(u, w[1]));
            worst = worst.max(b.mean("eta") - a.mean("eta") - 2.0 * (a.stderr("eta") + b.stderr("eta")));
        }
    }
    if ells.len() > 1 {
        checks.push(Check::new(
            "origin proxy non-increasing in L up to 2 stderr",
            worst <= 0.0,
            worst,
            "largest increase minus twice the summed stderr",
        ));
    }
    if contains(&us, LOW.0) {
        let eta = at(LOW.0, l_max).mean("eta");
        checks.push(Check::new(
            format!("L={l_max}: origin proxy at u={} above {}", LOW.0, LOW.1),
            eta > LOW.1,
            eta,
            "",
        ));
    }
    if contains(&us, HIGH.0) {
        let eta = at(HIGH.0, l_max).mean("eta");
        checks.push(Check::new(
            format!("L={l_max}: origin proxy at u={} below {}", HIGH.0, HIGH.1),
            eta < HIGH.1,
            eta,
            "",
        ));
    }

    // Crossovers with bootstrap error bars over replicas.
    let mut crossovers = Vec::new();
    for proxy in ["eta", "alpha"] {
        for &l in &ells {
            let outcomes: Vec<Vec<(f64, f64)>> = (0..cfg.replicas as usize)
                .map(|i| {
                    records
                        .iter()
                        .skip(i * us.len() * ells.len())
                        .take(us.len() * ells.len())
                        .filter(|r| r.params["L"] == l as f64)
                        .map(|r| (r.params["u"], r.metrics[proxy]))
                        .collect()
                })
                .collect();
            let fit = |rows: &mut dyn Iterator<Item = usize>| {
                let pts: Vec<(f64, f64)> = rows.flat_map(|i| outcomes[i].iter().copied()).collect();
                logistic_crossover(&pts)
            };
            let u_c = fit(&mut (0..outcomes.len()));
            let mut rng = stream(cfg.seed, &[tag, 0xB007, l as u64, u64::from(proxy == "alpha")]);
            let boots: Vec<f64> = (0..BOOTSTRAP)
                .filter_map(|_| {
                    let draw: Vec<usize> = (0..outcomes.len())
                        .map(|_| rng.random_range(0..outcomes.len()))
                        .collect();
                    fit(&mut draw.into_iter())
                })
                .collect();
            let stderr = if boots.len() > 1 {
                let m = boots.iter().sum::<f64>() / boots.len() as f64;
                (boots.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (boots.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            crossovers.push(json!({
                "proxy": proxy, "L": l, "u_c": u_c, "bootstrap_stderr": stderr,
                "bootstrap_fits": boots.len(), "heuristic": true,
            }));
        }
    }
    Ok(Body {
        records,
        checks,
        summary: json!({
            "box_radius": r,
            "sampler": sampler.cfg,
            "crossovers": crossovers,
            "note": "crossovers are logistic-fit heuristics, not estimates of the true thresholds",
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_recovers_a_known_crossover() {
        // Exact frequencies of a logistic curve with u_c = 2 and slope -3.
        let pts: Vec<(f64, f64)> = (0..40)
            .flat_map(|k| {
                let u = 0.1 * k as f64;
                let p = 1.0 / (1.0 + (3.0 * (u - 2.0)).exp());
                let ones = (p * 1000.0).round() as usize;
                (0..1000).map(move |i| (u, if i < ones { 1.0 } else { 0.0 }))
            })
            .collect();
        let u_c = logistic_crossover(&pts).unwrap();
        assert!((u_c - 2.0).abs() < 0.01, "{u_c}");
    }

    #[test]
    fn increasing_data_has_no_crossover() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (2.0, 1.0)];
        assert!(logistic_crossover(&pts).is_none());
    }
}
