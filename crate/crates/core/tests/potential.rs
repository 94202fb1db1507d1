mod common;

use common::green_origin_z3;
use proptest::prelude::*;
use std::f64::consts::PI;
use tfrg_core::lattice::{ZdBox, ZdPoint, ZdSet};
use tfrg_core::potential::*;
use tfrg_core::{SiteSet, TorusGeom};

#[test]
fn fourier_oracle_matches_watson() {
    assert!((green_origin_z3() - 1.516_386_059_151_978).abs() < 1e-8);
}

#[test]
fn point_capacity_matches_green_function() {
    let m = equilibrium(&ZdSet::singleton(3), 32, 64).unwrap();
    let oracle = 1.0 / green_origin_z3();
    assert!((m.capacity - oracle).abs() < 1e-3, "{} vs {oracle}", m.capacity);
    assert!((m.capacity - 0.6595).abs() < 1e-4);
    assert!(m.error > 0.0 && m.error < 0.01);
}

/// Direct solve of `(I - P) h = b` on `B(0, R) \ {0}` by banded Cholesky.
fn direct_point_solve(r: i64) -> Vec<f64> {
    let bx = ZdBox::new(3, r as usize);
    let side = bx.side();
    let n = bx.len();
    let center = bx.index(&[0, 0, 0]).unwrap();
    // Keep the origin as a row fixed to 1 so the band stays regular.
    let bw = side * side;
    let mut band = vec![0.0f64; n * (bw + 1)];
    let at = |i: usize, j: usize| i * (bw + 1) + (i - j);
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        band[at(i, i)] = 1.0;
        if i == center {
            rhs[i] = 1.0;
            continue;
        }
        let p = bx.point(i);
        for axis in 0..3 {
            for delta in [1, -1] {
                let mut q = p.clone();
                q.0[axis] += delta;
                if let Some(j) = bx.index(&q.0) {
                    if j == center {
                        rhs[i] += 1.0 / 6.0;
                    } else if j < i {
                        band[at(i, j)] = -1.0 / 6.0;
                    }
                }
            }
        }
    }
    // The origin row decouples after moving its column to the right side.
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        for j in lo..=i {
            let mut s = band[at(i, j)];
            for k in lo.max(j.saturating_sub(bw))..j {
                s -= band[at(i, k)] * band[at(j, k)];
            }
            band[at(i, j)] = if i == j { s.sqrt() } else { s / band[at(j, j)] };
        }
    }
    let mut y = rhs;
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        let mut s = y[i];
        for k in lo..i {
            s -= band[at(i, k)] * y[k];
        }
        y[i] = s / band[at(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..(i + bw + 1).min(n) {
            s -= band[at(k, i)] * y[k];
        }
        y[i] = s / band[at(i, i)];
    }
    y
}

#[test]
fn harmonic_solve_matches_direct_solver() {
    let r = 10;
    let direct = direct_point_solve(r);
    let bx = ZdBox::new(3, r as usize);
    let h = harmonic_solve(&ZdSet::singleton(3), r as usize, Boundary::Zero, 1e-14).unwrap();
    for k in 0..=r {
        let p = [k, 0, 0];
        let exact = direct[bx.index(&p).unwrap()];
        assert!((h.value(&p).unwrap() - exact).abs() < 1e-10, "k={k}");
    }
    for p in bx.points() {
        assert!((h.value(&p.0).unwrap() - direct[bx.index(&p.0).unwrap()]).abs() < 1e-10);
    }
}

#[test]
fn capacity_mc_agrees_with_equilibrium() {
    let exact = equilibrium(&ZdSet::singleton(3), 32, 64).unwrap().capacity;
    let mc = capacity_mc(&ZdSet::singleton(3), 64, 100_000, 11).unwrap();
    assert!((mc.capacity - exact).abs() <= 3.0 * mc.stderr, "{mc:?} vs {exact}");
}

#[test]
fn capacity_mc_is_monotone_under_inclusion() {
    let small = capacity_mc(&ZdSet::singleton(3), 32, 20_000, 5).unwrap();
    let big = capacity_mc(&ZdSet::ball(3, 1), 32, 2_000, 6).unwrap();
    let sep = big.capacity - small.capacity;
    assert!(sep > 3.0 * (big.stderr.powi(2) + small.stderr.powi(2)).sqrt());
}

#[test]
fn capacity_grows_linearly_with_radius() {
    let caps: Vec<f64> = [2usize, 4, 8]
        .iter()
        .map(|&r| equilibrium(&ZdSet::ball(3, r), 32, 64).unwrap().capacity)
        .collect();
    for w in caps.windows(2) {
        let slope = (w[1] / w[0]).ln() / 2f64.ln();
        assert!((0.85..=1.15).contains(&slope), "{caps:?}");
    }
}

#[test]
fn stderr_follows_clt_scaling() {
    let g = TorusGeom::new(3, 12).unwrap();
    let v = g.linf_ball(0, 1).unwrap();
    let a = mean_hitting(&g, &v, 3.156, 4_000, 1).unwrap();
    let b = mean_hitting(&g, &v, 3.156, 8_000, 2).unwrap();
    let ratio = b.stderr / a.stderr;
    assert!((ratio * 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
}

/// The torus Green function at 0 is `G(0) - kappa / N + o(1/N)` with
/// `kappa = 2.837297 * 3 / (2 pi)`, which gives
/// `E[H_V] ~ N^d (1/cap V - kappa / N)` at moderate `N`.
#[test]
fn mean_hitting_matches_finite_size_prediction() {
    let kappa = 2.837_297 * 3.0 / (2.0 * PI);
    let cap = equilibrium_default(&ZdSet::singleton(3)).unwrap().capacity;
    for n in [16usize, 24] {
        let g = TorusGeom::new(3, n).unwrap();
        let v = SiteSet::new(&g, vec![0]).unwrap();
        let r = mean_hitting(&g, &v, cap, 4_000, n as u64).unwrap();
        let predicted = (n * n * n) as f64 * (1.0 / cap - kappa / n as f64);
        assert!(
            (r.mean - predicted).abs() < 3.0 * r.stderr + 0.01 * predicted,
            "{r:?} vs {predicted}"
        );
    }
}

#[test]
fn far_field_hit_is_consistent_with_green_decay() {
    let m = equilibrium(&ZdSet::ball(3, 1), 32, 64).unwrap();
    let near = m.far_field_hit(&[64, 0, 0]);
    let far = m.far_field_hit(&[128, 0, 0]);
    assert!((near / far - 2.0).abs() < 0.05);
    assert!((near - m.capacity * green_constant(3) / 64.0).abs() < 0.01 * near);
}

#[test]
fn golden_file_matches_fresh_computation() {
    let golden = golden_file().unwrap();
    assert!(!golden.entries.is_empty());
    for e in &golden.entries {
        let fresh = equilibrium_default(&e.measure.set).unwrap();
        assert!((fresh.capacity - e.measure.capacity).abs() < 1e-9, "{}", e.name);
    }
}

fn arb_subset() -> impl Strategy<Value = (Vec<ZdPoint>, ZdPoint)> {
    let pts: Vec<ZdPoint> = ZdBox::new(3, 1).points().collect();
    let pts2 = pts.clone();
    (proptest::sample::subsequence(pts, 1..6), proptest::sample::select(pts2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn capacity_is_monotone_and_sums_weights((base, extra) in arb_subset()) {
        let a = ZdSet::new(3, base.clone()).unwrap();
        let mut bigger = base;
        bigger.push(extra);
        let b = ZdSet::new(3, bigger).unwrap();
        let ma = equilibrium(&a, 12, 24).unwrap();
        let mb = equilibrium(&b, 12, 24).unwrap();
        prop_assert!(mb.capacity >= ma.capacity - 1e-9);
        let sum: f64 = ma.weights.iter().sum();
        prop_assert_eq!(sum, ma.capacity);
        let norm: f64 = ma.normalized().iter().sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        prop_assert!(ma.weights.iter().all(|&w| w >= 0.0));
    }
}
