mod support;

use rand::Rng;
use stcoop_core::channel::rng_for;
use stcoop_core::power_control::*;
use stcoop_core::throughput::{SinrTerms, SystemMode};
use support::{grid_maxmin, lp_min_power, random_stats};

fn problem(seed: u64, mode: SystemMode) -> PowerProblem {
    let stats = random_stats(4, 3, seed);
    PowerProblem::new(&stats, mode, &[1.0, 0.8, 1.2]).unwrap()
}

#[test]
fn interference_matrix_matches_mutual_interference() {
    let p = problem(1, SystemMode::Hybrid);
    let rho = [0.3, 0.1, 0.9];
    for k in 0..3 {
        let direct: f64 = (0..3).map(|j| p.terms.interference[(k, j)] * rho[j]).sum();
        assert!((direct - p.terms.mutual_interference(&rho, k)).abs() <= 1e-14 * direct);
    }
}

#[test]
fn congestion_solvers_match_lp_on_feasible_targets() {
    let mut rng = rng_for(99, 0);
    let settings = SolverSettings::default();
    for seed in 0..15 {
        for mode in SystemMode::ALL {
            let p = problem(100 + seed, mode);
            let xi_star = solve_maxmin(&p, &settings).unwrap().xi_star;
            let targets: Vec<f64> = (0..3).map(|_| xi_star * rng.random_range(0.2..0.8)).collect();
            let lp = lp_min_power(&p.terms, &p.p_max, &targets).expect("targets below the max-min level are feasible");
            let (a, ra) = solve_fullpower_congestion(&p, &targets, &settings).unwrap();
            let (b, rb) = solve_soft_removal(&p, &targets, &settings).unwrap();
            assert!(ra.unsatisfied.is_empty() && rb.unsatisfied.is_empty());
            for k in 0..3 {
                assert!((a.rho[k] - lp[k]).abs() <= 5e-3 * lp[k], "seed {seed} {mode:?} user {k}: {} vs {}", a.rho[k], lp[k]);
                assert!((b.rho[k] - lp[k]).abs() <= 5e-3 * lp[k]);
            }
        }
    }
}

#[test]
fn lp_oracle_reports_infeasible_targets() {
    let p = problem(5, SystemMode::Hybrid);
    let up = sinr_upper_bound(&p.terms, &p.p_max);
    assert!(lp_min_power(&p.terms, &p.p_max, &[2.0 * up; 3]).is_none());
}

#[test]
fn maxmin_beats_grid_search() {
    let settings = SolverSettings::default();
    for seed in 0..6 {
        let p = problem(200 + seed, SystemMode::Hybrid);
        let res = solve_maxmin(&p, &settings).unwrap();
        let (grid, _) = grid_maxmin(&p.terms, &p.p_max, 51);
        assert!(res.xi_star >= grid - settings.delta, "seed {seed}: {} vs grid {grid}", res.xi_star);
        assert!(res.xi_star <= res.bracket.1);
    }
}

#[test]
fn grid_oracle_finds_full_power_for_one_user() {
    let stats = random_stats(3, 1, 3);
    let terms = SinrTerms::for_mode(&stats, SystemMode::Hybrid);
    let (best, rho) = grid_maxmin(&terms, &[2.0], 51);
    assert_eq!(rho, vec![2.0]);
    assert_eq!(best, terms.sinr_of(&[2.0], 0));
}
