//! Random instances and brute-force oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::Rng;
use stcoop_core::channel::{rng_for, ChannelStatistics};
use stcoop_core::geometry::{self, ArrayGeometry, RadioConstants};
use stcoop_core::throughput::SinrTerms;

pub fn radio(k: usize) -> RadioConstants {
    RadioConstants::new(20.0, 100.0, 10_000, k, 1.0, 0.5, 0.8, 6_371_000.0, 400_000.0).unwrap()
}

/// Random statistics with O(1) gains on a 2x2 array.
pub fn random_stats(m: usize, k: usize, seed: u64) -> ChannelStatistics {
    let mut rng = rng_for(seed, 7);
    let lambda = 0.015;
    let array = ArrayGeometry::half_wavelength(2, 2, lambda);
    let beta_sat: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..2.0)).collect();
    let kappa: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..5.0)).collect();
    let los = (0..k)
        .map(|u| {
            let t = rng.random_range(0.2..1.5);
            let w = rng.random_range(-3.0..3.0);
            geometry::los_vector(t, w, kappa[u], beta_sat[u], &array, lambda).unwrap()
        })
        .collect();
    let corr = (0..k)
        .map(|u| {
            let rh = rng.random_range(-0.8..0.8);
            let rv = rng.random_range(-0.8..0.8);
            geometry::correlation_matrix(beta_sat[u], kappa[u], rh, rv, &array).unwrap()
        })
        .collect();
    let beta_t = DMatrix::from_fn(m, k, |_, _| rng.random_range(0.05..1.5));
    ChannelStatistics::from_parts(radio(k), los, corr, beta_t, beta_sat).unwrap()
}

/// Minimum total power meeting every SINR target under `0 ≤ ρ ≤ P`, by
/// enumerating the vertices of the three-user polytope.
pub fn lp_min_power(terms: &SinrTerms, p_max: &[f64], targets: &[f64]) -> Option<Vec<f64>> {
    assert_eq!(p_max.len(), 3);
    let mut rows: Vec<([f64; 3], f64)> = Vec::new();
    for k in 0..3 {
        let s2 = terms.signal_gain[k].powi(2);
        let mut a = [0.0; 3];
        for j in 0..3 {
            a[j] = -targets[k] * terms.interference[(k, j)];
        }
        a[k] += s2;
        rows.push((a, targets[k] * terms.noise[k]));
    }
    for k in 0..3 {
        let mut e = [0.0; 3];
        e[k] = 1.0;
        rows.push((e, 0.0));
        rows.push(([-e[0], -e[1], -e[2]], -p_max[k]));
    }
    let feasible = |x: &Vector3<f64>| {
        rows.iter().all(|(a, b)| {
            let lhs = a[0] * x[0] + a[1] * x[1] + a[2] * x[2];
            let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * x.amax().max(1e-300) + b.abs();
            lhs >= b - 1e-10 * scale
        })
    };
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let n = rows.len();
    for i in 0..n {
        for j in i + 1..n {
            for l in j + 1..n {
                let m = Matrix3::from_rows(&[
                    Vector3::from(rows[i].0).transpose(),
                    Vector3::from(rows[j].0).transpose(),
                    Vector3::from(rows[l].0).transpose(),
                ]);
                let Some(x) = m.lu().solve(&Vector3::new(rows[i].1, rows[j].1, rows[l].1)) else { continue };
                if !x.iter().all(|v| v.is_finite()) || !feasible(&x) {
                    continue;
                }
                let total = x.sum();
                if best.as_ref().is_none_or(|(t, _)| total < *t) {
                    best = Some((total, x));
                }
            }
        }
    }
    best.map(|(_, x)| x.iter().copied().collect())
}

/// Largest minimum SINR over the uniform grid `{P·i/(n−1)}^K`.
pub fn grid_maxmin(terms: &SinrTerms, p_max: &[f64], n: usize) -> (f64, Vec<f64>) {
    let k = p_max.len();
    let mut idx = vec![0usize; k];
    let mut best = (f64::NEG_INFINITY, vec![0.0; k]);
    let mut rho = vec![0.0; k];
    loop {
        for u in 0..k {
            rho[u] = p_max[u] * idx[u] as f64 / (n - 1) as f64;
        }
        let min = (0..k).map(|u| terms.sinr_of(&rho, u)).fold(f64::INFINITY, f64::min);
        if min > best.0 {
            best = (min, rho.clone());
        }
        let mut u = 0;
        loop {
            if u == k {
                return best;
            }
            idx[u] += 1;
            if idx[u] < n {
                break;
            }
            idx[u] = 0;
            u += 1;
        }
    }
}
