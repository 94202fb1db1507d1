use std::f64::consts::PI;

use serde_json::json;

use super::{bool_f64, memory_guard, metrics, params, sorted_grid, Body, Check, ExperimentConfig, Record};
use crate::error::{Error, Result};
use crate::rw::regeneration_time;

const TV_BOUND: f64 = 1e-6;

/// Exact `sup_x TV(P_x[Y_t = .], uniform)` for the rate-one continuous-time
/// walk on the torus of side `n` in dimension `d`.
///
/// Each coordinate jumps at rate `1/d`, so the law factorizes. A coordinate
/// displacement `k` has probability `(1 + e_k) / n` with
/// `e_k = sum_{j != 0} exp(-(t/d)(1 - cos theta_j)) cos(theta_j k)`, and the
/// distance is summed as `|expm1(sum log1p e_k)|`, which stays accurate when
/// it is far below machine epsilon. Translation invariance makes every start
/// equivalent.
pub fn torus_tv(d: usize, n: usize, t: f64) -> Result<f64> {
    if d == 0 || n == 0 || !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "torus_tv needs d, n >= 1 and finite t >= 0, got {d}, {n}, {t}"
        )));
    }
    let total = (n as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    memory_guard(total)?;
    let s = t / d as f64;
    let log1p: Vec<f64> = (0..n)
        .map(|k| {
            let e: f64 = (1..n)
                .map(|j| {
                    let theta = 2.0 * PI * j as f64 / n as f64;
                    (-s * (1.0 - theta.cos())).exp() * (theta * k as f64).cos()
                })
                .sum();
            e.max(-1.0).ln_1p()
        })
        .collect();
    // Sum over displacements with an odometer over the coordinates.
    let mut idx = vec![0usize; d];
    let mut sum = 0.0;
    loop {
        let l: f64 = idx.iter().map(|&k| log1p[k]).sum();
        sum += l.exp_m1().abs();
        let mut axis = d;
        loop {
            if axis == 0 {
                return Ok(0.5 * sum / total as f64);
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < n {
                break;
            }
            idx[axis] = 0;
        }
    }
}

pub(super) fn mixing_check(cfg: &ExperimentConfig) -> Result<Body> {
    let mut records = Vec::new();
    for &n in &cfg.n {
        let t_star = regeneration_time(n) as f64;
        for &m in &cfg.u {
            let t = m * t_star;
            let tv = torus_tv(cfg.d, n, t)?;
            records.push(Record {
                params: params(&[("N", n as f64), ("t_mult", m)]),
                replica: 0,
                seed: 0,
                metrics: metrics(&[("t", t), ("tv", tv), ("below_bound", bool_f64(tv < TV_BOUND))]),
            });
        }
    }
    let tv_at = |n: usize, m: f64| {
        records
            .iter()
            .find(|r| r.params["N"] == n as f64 && r.params["t_mult"].to_bits() == m.to_bits())
            .map(|r| r.metrics["tv"])
            .expect("computed")
    };

    let mut checks = Vec::new();
    let mut ns = cfg.n.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut fits = Vec::new();
    for &m in &sorted_grid(&cfg.u) {
        let tvs: Vec<f64> = ns.iter().map(|&n| tv_at(n, m)).collect();
        if ns.len() > 1 && m > 0.0 {
            checks.push(Check::new(
                format!("t = {m} t*: distance decreases in N"),
                tvs.windows(2).all(|w| w[1] < w[0]),
                tvs[tvs.len() - 1],
                format!("N {ns:?}: {tvs:?}"),
            ));
        }
        if m == 0.0 {
            let worst = ns
                .iter()
                .zip(&tvs)
                .map(|(&n, tv)| (tv - (1.0 - (n as f64).powi(-(cfg.d as i32)))).abs())
                .fold(0.0, f64::max);
            checks.push(Check::new(
                "t = 0: distance is 1 - N^-d",
                worst < 1e-12,
                worst,
                "largest deviation",
            ));
        }
        if m == 1.0 && cfg.d == 3 && ns.contains(&8) {
            let tv = tv_at(8, 1.0);
            checks.push(Check::new(
                format!("N=8, d=3: distance at t* below {TV_BOUND}"),
                tv < TV_BOUND,
                tv,
                format!("t* = {}", regeneration_time(8)),
            ));
        }
        // Least squares fit of ln TV = b - c ln^2 N.
        let pts: Vec<(f64, f64)> = ns
            .iter()
            .zip(&tvs)
            .filter(|(_, tv)| **tv > 0.0)
            .map(|(&n, tv)| ((n as f64).ln().powi(2), tv.ln()))
            .collect();
        if m > 0.0 && pts.len() > 1 {
            let k = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            fits.push(json!({ "t_mult": m, "c": -sxy / sxx, "intercept": my + sxy / sxx * mx }));
        }
    }
    Ok(Body {
        records,
        checks,
        summary: json!({ "fits": fits, "kernel": "continuous-time, rate one" }),
    })
}
