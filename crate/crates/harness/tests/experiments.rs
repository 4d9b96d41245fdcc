use stcoop_harness::experiments::{run_cdf_experiment, run_congestion_experiment, run_maxmin_experiment, Metric, CONGESTION_METHODS};
use stcoop_harness::ExperimentConfig;

fn desk(drops: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.drops = drops;
    cfg.master_seed = 77;
    cfg
}

#[test]
fn single_drop_cdf_is_one_step() {
    let res = run_cdf_experiment(&desk(1)).unwrap();
    let cdfs = res.cdfs();
    assert_eq!(cdfs.len(), 6);
    assert!(cdfs.values().all(|s| s.len() == 1));
    let dir = tempfile::tempdir().unwrap();
    res.write_csv(dir.path(), false).unwrap();
    let doc = std::fs::read_to_string(dir.path().join("cdf_sum_rate_hybrid.csv")).unwrap();
    let last = doc.lines().nth(1).unwrap();
    assert!(last.ends_with(",1.00000000e0"), "{last}");
}

#[test]
fn cdf_records_are_consistent() {
    let res = run_cdf_experiment(&desk(25)).unwrap();
    assert_eq!(res.succeeded(), 25);
    assert_eq!(res.labels(), vec!["hybrid", "terrestrial", "satellite"]);
    for r in &res.records {
        assert_eq!(r.rates_mbps.len(), 4);
        assert!(r.rates_mbps.iter().all(|x| x.is_finite() && *x > 0.0), "{r:?}");
        let sum: f64 = r.rates_mbps.iter().sum();
        assert!((sum - r.sum_rate_mbps).abs() <= 1e-9 * sum);
        assert_eq!(r.min_rate_mbps, r.rates_mbps.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let drops: Vec<usize> = res.records.iter().filter(|r| r.label == "satellite").map(|r| r.drop).collect();
    assert_eq!(drops, (0..25).collect::<Vec<_>>());
}

#[test]
fn maxmin_lifts_the_weakest_user() {
    let res = run_maxmin_experiment(&desk(15)).unwrap();
    let full = res.samples("full_power_hybrid", Metric::MinRate);
    let fair = res.samples("maxmin_hybrid", Metric::MinRate);
    assert_eq!(full.len(), 15);
    for (a, b) in fair.iter().zip(&full) {
        assert!(*a >= b * (1.0 - 1e-9), "{a} < {b}");
    }
    let powers_ok = res.records.iter().all(|r| r.powers_w.iter().all(|p| (0.0..=100.0 * (1.0 + 1e-12)).contains(p)));
    assert!(powers_ok);
}

#[test]
fn congestion_rows_are_consistent() {
    let mut cfg = desk(12);
    cfg.congestion.targets_mbps = vec![0.001, 30.0, 90.0, 200.0];
    let res = run_congestion_experiment(&cfg).unwrap();
    assert_eq!(res.congestion.len(), 4 * CONGESTION_METHODS.len());
    for row in &res.congestion {
        assert!((row.satisfied_pct + row.unsatisfied_pct - 100.0).abs() < 1e-9);
        assert!((0.25 - 1e-12..=1.0 + 1e-12).contains(&row.jain), "{row:?}");
        if row.target_mbps == 0.001 {
            assert_eq!(row.unsatisfied_pct, 0.0, "{row:?}");
            assert!((row.jain - 1.0).abs() < 1e-12);
        }
    }
    for method in ["full_power", "pin_unsatisfied"] {
        let unsat: Vec<f64> = res.congestion.iter().filter(|r| r.method == method).map(|r| r.unsatisfied_pct).collect();
        assert!(unsat.windows(2).all(|w| w[0] <= w[1]), "{method}: {unsat:?}");
    }
    for target in &cfg.congestion.targets_mbps {
        let power = |m: &str| res.congestion.iter().find(|r| r.method == m && r.target_mbps == *target).unwrap().mean_power_dbw;
        assert!(power("pin_unsatisfied") <= power("full_power") + 1e-9);
    }
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let cfg = desk(6);
    let one = stcoop_harness::experiments::with_threads(Some(1), || run_maxmin_experiment(&cfg)).unwrap().unwrap();
    let three = stcoop_harness::experiments::with_threads(Some(3), || run_maxmin_experiment(&cfg)).unwrap().unwrap();
    assert_eq!(one.records, three.records);
    assert_eq!(one.drops, one.succeeded() + one.failures.len());
}
