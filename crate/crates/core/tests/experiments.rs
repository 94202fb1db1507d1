use proptest::prelude::*;
use tfrg_core::experiments::suites::{run_suite_with_workers, Scale, Suite};
use tfrg_core::experiments::*;
use tfrg_core::lattice::{SiteSet, TorusGeom};
use tfrg_core::quasistat::{killed_semigroup, RestrictedOperator};

fn config(id: ExperimentId, f: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(id);
    c.seed = 11;
    f(&mut c);
    c
}

fn small_phase() -> ExperimentConfig {
    config(ExperimentId::PhaseSweep, |c| {
        c.n = vec![12];
        c.u = vec![0.0, 1.0, 3.0];
        c.replicas = 3;
    })
}

#[test]
fn aggregates_are_recomputable_from_records() {
    let r = run(&small_phase()).unwrap();
    assert_eq!(aggregate(&r.records), r.aggregates);
    assert_eq!(r.aggregates.len(), 3);
    assert!(r.aggregates.iter().all(|a| a.replicas == 3));
}

#[test]
fn csv_round_trip_preserves_records_and_aggregates() {
    let r = run(&small_phase()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = r.write(dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    let (records, aggs) = read_csv(&dir.path().join("phase-sweep.csv")).unwrap();
    assert_eq!(records, r.records);
    assert_eq!(aggs, r.aggregates);
    assert_eq!(aggregate(&records), aggs);
    let json = std::fs::read_to_string(dir.path().join("phase-sweep.json")).unwrap();
    assert!(!json.contains("wall_clock"));
    let back: RunResult = serde_json::from_str(&json).unwrap();
    assert_eq!(back.records, r.records);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let base = small_phase();
    let json = |workers: usize| {
        let mut r = run(&ExperimentConfig {
            workers: Some(workers),
            ..base.clone()
        })
        .unwrap();
        r.config.workers = None;
        r.to_json()
    };
    assert_eq!(json(1), json(4));
}

#[test]
fn quick_suites_do_not_depend_on_worker_count() {
    for s in [Suite::Vacancy, Suite::Sandwich, Suite::Mixing] {
        let a = run_suite_with_workers(s, Scale::Quick, 3, 1).unwrap();
        let b = run_suite_with_workers(s, Scale::Quick, 3, 3).unwrap();
        assert_eq!(a.to_json(), b.to_json(), "{}", s.as_str());
    }
}

#[test]
fn config_hash_ignores_workers_and_output_dir() {
    let a = small_phase();
    let b = ExperimentConfig {
        workers: Some(7),
        out: Some("elsewhere".into()),
        ..a.clone()
    };
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
    let c = ExperimentConfig { seed: 12, ..a.clone() };
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let json = serde_json::to_value(small_phase()).unwrap();
    let mut extra = json.clone();
    extra["colour"] = serde_json::json!(1);
    assert!(serde_json::from_value::<ExperimentConfig>(extra).is_err());
    let back: ExperimentConfig = serde_json::from_value(json).unwrap();
    assert_eq!(back, small_phase());
    assert!(config(ExperimentId::PhaseSweep, |c| c.replicas = 0).validate().is_err());
    assert!(config(ExperimentId::PhaseSweep, |c| c.n = vec![]).validate().is_err());
}

#[test]
fn experiment_ids_round_trip() {
    for id in ExperimentId::ALL {
        assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
        assert_eq!(id.as_str().replace('-', "_").parse::<ExperimentId>().unwrap(), id);
    }
    assert!("phase".parse::<ExperimentId>().is_err());
}

#[test]
fn zero_level_leaves_only_the_start() {
    let r = run(&small_phase()).unwrap();
    let a = find(&r.aggregates, &[("N", 12.0), ("u", 0.0)]).unwrap();
    assert_eq!(a.mean("vacant_frac"), 1.0 - 1.0 / 1728.0);
    assert_eq!(a.stderr("vacant_frac"), 0.0);
}

#[test]
fn mixing_at_time_zero_is_one_minus_uniform_mass() {
    assert_eq!(torus_tv(3, 6, 0.0).unwrap(), 1.0 - 1.0 / 216.0);
    let r = run(&config(ExperimentId::MixingCheck, |c| {
        c.n = vec![4, 6];
        c.u = vec![0.0, 1.0];
    }))
    .unwrap();
    let a = find(&r.aggregates, &[("N", 6.0), ("t_mult", 0.0)]).unwrap();
    assert_eq!(a.mean("tv"), 1.0 - 1.0 / 216.0);
}

/// With nothing removed, the killed semigroup is the free heat kernel, so
/// its total-variation distance to uniform must match the product formula.
#[test]
fn product_formula_matches_semigroup() {
    let geom = TorusGeom::new(3, 6).unwrap();
    let op = RestrictedOperator::new(&geom, &SiteSet::empty()).unwrap();
    for t in [0.5, 3.0, 12.0, 40.0] {
        let (p, log_mass) = killed_semigroup(&op, 0, t).unwrap();
        assert!(log_mass.abs() < 1e-12);
        let tv = 0.5 * p.iter().map(|x| (x - 1.0 / 216.0).abs()).sum::<f64>();
        let exact = torus_tv(3, 6, t).unwrap();
        assert!((tv - exact).abs() < 1e-10, "t={t}: {tv} vs {exact}");
    }
}

#[test]
fn single_site_target_is_hit_at_itself() {
    let r = run(&config(ExperimentId::HittingDistCheck, |c| {
        c.n = vec![16];
        c.eps = 0.9;
        c.radius = Some(0);
        c.samples = 200;
        c.replicas = 2;
    }))
    .unwrap();
    let a = find(&r.aggregates, &[("N", 16.0)]).unwrap();
    assert_eq!(a.mean("orbit_0_0_0"), 1.0);
    assert_eq!(r.checks[0].value, 0.0);
}

#[test]
fn connectivity_is_certain_at_zero_level() {
    let r = run(&config(ExperimentId::ConnectivityDecay, |c| {
        c.u = vec![0.0, 2.0];
        c.ell = vec![2, 3];
        c.replicas = 2;
    }))
    .unwrap();
    for l in [2.0, 3.0] {
        let a = find(&r.aggregates, &[("L", l), ("u", 0.0)]).unwrap();
        assert_eq!((a.mean("eta"), a.mean("alpha")), (1.0, 1.0));
    }
}

#[test]
fn strong_events_hold_at_zero_level() {
    let r = run(&config(ExperimentId::StrongSupercriticalityProbe, |c| {
        c.d = 3;
        c.n = vec![2];
        c.u = vec![0.0];
        c.replicas = 2;
    }))
    .unwrap();
    let a = find(&r.aggregates, &[("N", 2.0), ("u", 0.0)]).unwrap();
    assert_eq!((a.mean("touch"), a.mean("conn")), (1.0, 1.0));
}

#[test]
fn excursions_are_absent_at_zero_level() {
    let r = run(&config(ExperimentId::ExcursionConcentration, |c| {
        c.n = vec![24];
        c.u = vec![0.0];
        c.replicas = 2;
    }))
    .unwrap();
    let a = find(&r.aggregates, &[("N", 24.0), ("u", 0.0)]).unwrap();
    assert_eq!(a.mean("k"), 0.0);
}

#[test]
fn sandwich_holds_on_a_small_torus() {
    let r = run(&config(ExperimentId::CouplingSandwich, |c| {
        c.n = vec![10];
        c.replicas = 400;
    }))
    .unwrap();
    assert!(r.passed(), "{:?}", r.checks);
}

#[test]
fn memory_guard_reads_the_environment() {
    assert!(memory_guard(1 << 20).is_ok());
    assert!(memory_guard(1 << 40).is_err());
}

fn arb_records() -> impl Strategy<Value = Vec<Record>> {
    prop::collection::vec((0u8..3, -1e3f64..1e3, 0.0f64..1.0), 1..40).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (g, x, y))| Record {
                params: [("g".to_string(), g as f64)].into(),
                replica: i as u64,
                seed: i as u64 * 31,
                metrics: [("x".to_string(), x), ("y".to_string(), y)].into(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn aggregate_means_partition_the_total(records in arb_records()) {
        let aggs = aggregate(&records);
        let n: u64 = aggs.iter().map(|a| a.replicas).sum();
        prop_assert_eq!(n, records.len() as u64);
        let total: f64 = records.iter().map(|r| r.metrics["x"]).sum();
        let weighted: f64 = aggs.iter().map(|a| a.mean("x") * a.replicas as f64).sum();
        prop_assert!((total - weighted).abs() < 1e-8 * (1.0 + total.abs()));
        for a in &aggs {
            prop_assert!(a.stderr("y") >= 0.0);
            if a.replicas == 1 {
                prop_assert_eq!(a.stderr("x"), 0.0);
            }
        }
    }
}
