mod support;

use proptest::prelude::*;
use stcoop_core::power_control::*;
use stcoop_core::throughput::{SinrTerms, SystemMode};

fn terms(seed: u64, mode: SystemMode) -> SinrTerms {
    SinrTerms::for_mode(&support::random_stats(3, 4, seed), mode)
}

fn mode_of(i: usize) -> SystemMode {
    SystemMode::ALL[i % 3]
}

fn power_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..2.0f64, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn positivity(seed in 0u64..40, m in 0usize..3, rho in power_vec(), xi in 0.01..5.0f64) {
        let t = terms(seed, mode_of(m));
        for k in 0..4 {
            prop_assert!(interference_function(&t, &rho, k, xi) > 0.0);
        }
    }

    #[test]
    fn monotonicity(seed in 0u64..40, m in 0usize..3, rho in power_vec(), gap in prop::collection::vec(0.0..1.0f64, 4), xi in 0.01..5.0f64) {
        let t = terms(seed, mode_of(m));
        let bigger: Vec<f64> = rho.iter().zip(&gap).map(|(r, g)| r + g).collect();
        for k in 0..4 {
            prop_assert!(interference_function(&t, &bigger, k, xi) >= interference_function(&t, &rho, k, xi));
        }
    }

    #[test]
    fn scalability(seed in 0u64..40, m in 0usize..3, rho in power_vec(), alpha in 1.001..10.0f64, xi in 0.01..5.0f64) {
        let t = terms(seed, mode_of(m));
        let scaled: Vec<f64> = rho.iter().map(|r| alpha * r).collect();
        for k in 0..4 {
            prop_assert!(alpha * interference_function(&t, &rho, k, xi) > interference_function(&t, &scaled, k, xi));
        }
    }

    #[test]
    fn unit_rate_map_is_two_sided_scalable(
        seed in 0u64..40,
        rho in prop::collection::vec(0.01..2.0f64, 4),
        alpha in 1.01..4.0f64,
        u in prop::collection::vec(0.0..1.0f64, 4),
        targets in prop::collection::vec(0.05..3.0f64, 4),
    ) {
        let stats = support::random_stats(3, 4, seed);
        let p = PowerProblem::new(&stats, SystemMode::Hybrid, &[1.0; 4]).unwrap();
        // ρ̃ spans the box [ρ/α, αρ] on a log scale.
        let tilde: Vec<f64> = rho.iter().zip(&u).map(|(r, v)| r * alpha.powf(2.0 * v - 1.0)).collect();
        for k in 0..4 {
            let f = soft_removal_update(&p, &targets, SoftRemovalRate::Unit, &rho, k);
            let ft = soft_removal_update(&p, &targets, SoftRemovalRate::Unit, &tilde, k);
            prop_assert!(f / alpha < ft && ft < alpha * f);
        }
    }
}
