//! Seeded network drops: uniform AP and user placement over a square centred
//! at the origin, log-normal shadowing per link.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use stcoop_core::channel::{build_statistics, derive_seed, rng_for, ChannelStatistics, Scenario};
use stcoop_core::geometry::{self, ArrayGeometry, Position3D};

use crate::config::ExperimentConfig;
use crate::error::Result;

/// Seed of drop `index`; every random stream of the drop derives from it.
pub fn drop_seed(config: &ExperimentConfig, index: usize) -> u64 {
    derive_seed(config.master_seed, index as u64)
}

/// Seed for the Monte-Carlo trials of drop `index`.
pub fn monte_carlo_seed(config: &ExperimentConfig, index: usize) -> u64 {
    derive_seed(drop_seed(config, index), 1)
}

pub fn array_geometry(config: &ExperimentConfig, wavelength_m: f64) -> ArrayGeometry {
    ArrayGeometry {
        n_h: config.array.n_h,
        n_v: config.array.n_v,
        d_h_m: config.array.spacing_wavelengths * wavelength_m,
        d_v_m: config.array.spacing_wavelengths * wavelength_m,
        aperture_radius_m: config.array.aperture_radius_wavelengths * wavelength_m,
    }
}

fn km(p: [f64; 3]) -> Position3D {
    Position3D::new(p[0] * 1e3, p[1] * 1e3, p[2] * 1e3)
}

pub fn generate_drop(config: &ExperimentConfig, index: usize) -> Result<Scenario> {
    let radio = config.radio()?;
    let mut rng = rng_for(drop_seed(config, index), 0);
    let side = (config.area_km2 * 1e6).sqrt();
    let mut place = |z: f64| Position3D::new((rng.random::<f64>() - 0.5) * side, (rng.random::<f64>() - 0.5) * side, z);
    let ap_positions: Vec<Position3D> = (0..config.aps).map(|_| place(config.ap_height_m)).collect();
    let user_positions: Vec<Position3D> = (0..config.users).map(|_| place(config.user_height_m)).collect();

    let gains = config.gains;
    let (m, k) = (config.aps, config.users);
    let mut shadow_t = DMatrix::zeros(m, k);
    for a in 0..m {
        for u in 0..k {
            let z: f64 = rng.sample(StandardNormal);
            shadow_t[(a, u)] = z * gains.shadow_std_terrestrial_db;
        }
    }
    let shadow_s: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal) * gains.shadow_std_sat_db).collect();

    let f = radio.carrier_frequency_ghz;
    let mut beta_terrestrial = DMatrix::zeros(m, k);
    for a in 0..m {
        for u in 0..k {
            let d = ap_positions[a].distance_to(&user_positions[u]);
            let db = geometry::terrestrial_pathloss_db(gains.ap_gain_dbi, gains.user_gain_dbi, f, d, shadow_t[(a, u)])?;
            beta_terrestrial[(a, u)] = geometry::db_to_linear(db);
        }
    }

    let satellite = km(config.satellite_position_km);
    let beam_center = km(config.beam_center_km);
    let array = array_geometry(config, radio.wavelength_m);
    let mut beta_sat = Vec::with_capacity(k);
    let mut sat_elevation = Vec::with_capacity(k);
    let mut sat_azimuth = Vec::with_capacity(k);
    for u in 0..k {
        let (theta, omega) = geometry::elevation_azimuth(&user_positions[u], &satellite)?;
        let d = geometry::slant_range(theta, radio.earth_radius_m, radio.satellite_altitude_m)?;
        let offset = geometry::boresight_offset(&user_positions[u], &satellite, &beam_center)?;
        let pattern = geometry::beam_gain(offset, array.aperture_radius_m, radio.wavelength_m)?;
        let db = geometry::satellite_pathloss_db(
            gains.sat_gain_dbi,
            gains.user_gain_dbi,
            geometry::linear_to_db(pattern),
            f,
            d,
            shadow_s[u],
        )?;
        beta_sat.push(geometry::db_to_linear(db));
        sat_elevation.push(theta);
        sat_azimuth.push(omega);
    }

    let scenario = Scenario {
        ap_positions,
        user_positions,
        satellite_position: satellite,
        radio,
        array,
        gains,
        correlation: config.correlation,
        beta_terrestrial,
        beta_sat,
        kappa: vec![config.kappa; k],
        max_power_w: vec![config.max_power_w(); k],
        sat_elevation,
        sat_azimuth,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Drop `index` together with its channel statistics.
pub fn drop_statistics(config: &ExperimentConfig, index: usize) -> Result<(Scenario, ChannelStatistics)> {
    let scenario = generate_drop(config, index)?;
    let stats = build_statistics(&scenario)?;
    Ok((scenario, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_are_reproducible_and_distinct() {
        let cfg = ExperimentConfig::desk();
        let a = generate_drop(&cfg, 3).unwrap();
        assert_eq!(a, generate_drop(&cfg, 3).unwrap());
        assert_ne!(a.user_positions, generate_drop(&cfg, 4).unwrap().user_positions);
        let mut other = cfg.clone();
        other.master_seed += 1;
        assert_ne!(a.user_positions, generate_drop(&other, 3).unwrap().user_positions);
    }

    #[test]
    fn positions_fill_the_square() {
        let mut cfg = ExperimentConfig::desk();
        cfg.users = 10_000;
        cfg.aps = 0;
        cfg.coherence_block_len = 20_000;
        cfg.array.n_h = 1;
        cfg.array.n_v = 1;
        let s = generate_drop(&cfg, 0).unwrap();
        let side = (cfg.area_km2 * 1e6).sqrt();
        let n = s.user_positions.len() as f64;
        let se = side / 12f64.sqrt() / n.sqrt();
        let mx = s.user_positions.iter().map(|p| p.x).sum::<f64>() / n;
        let my = s.user_positions.iter().map(|p| p.y).sum::<f64>() / n;
        assert!(mx.abs() < 3.0 * se && my.abs() < 3.0 * se, "{mx} {my} {se}");
        assert!(s.user_positions.iter().all(|p| p.x.abs() <= side / 2.0 && p.y.abs() <= side / 2.0 && p.z == 1.5));
    }

    #[test]
    fn satellite_only_drop() {
        let mut cfg = ExperimentConfig::desk();
        cfg.aps = 0;
        let (s, stats) = drop_statistics(&cfg, 0).unwrap();
        assert_eq!(s.num_aps(), 0);
        assert_eq!(stats.num_users(), 4);
    }

    #[test]
    fn gains_are_in_a_plausible_range() {
        let cfg = ExperimentConfig::desk();
        let s = generate_drop(&cfg, 0).unwrap();
        for b in s.beta_sat.iter() {
            let db = geometry::linear_to_db(*b);
            assert!((-150.0..-120.0).contains(&db), "{db}");
        }
        for b in s.beta_terrestrial.iter() {
            assert!(geometry::linear_to_db(*b) < -60.0);
        }
        assert!(s.sat_elevation.iter().all(|t| (0.5..1.2).contains(t)));
    }
}
