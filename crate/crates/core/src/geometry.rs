//! Large-scale link geometry: positions, pathloss, beam pattern, LoS steering
//! vectors and Kronecker spatial correlation of the satellite's planar array.
//!
//! All gains are returned in dB by the pathloss functions and converted to
//! linear scale by the caller; nothing downstream works in dB.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::bessel;
use crate::error::{ensure, Error, Result};
use crate::linalg::{self, CMatrix, CVector, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Noise reference temperature T₀.
pub const REFERENCE_TEMPERATURE_K: f64 = 290.0;
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Thermal noise power `k_B·T₀·B·NF` in watts.
pub fn noise_power_w(bandwidth_mhz: f64, noise_figure_db: f64) -> f64 {
    BOLTZMANN * REFERENCE_TEMPERATURE_K * bandwidth_mhz * 1e6 * db_to_linear(noise_figure_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn delta_to(&self, other: &Position3D) -> [f64; 3] {
        [other.x - self.x, other.y - self.y, other.z - self.z]
    }

    pub fn distance_to(&self, other: &Position3D) -> f64 {
        let [dx, dy, dz] = self.delta_to(other);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConstants {
    pub carrier_frequency_ghz: f64,
    pub wavelength_m: f64,
    pub bandwidth_mhz: f64,
    /// τ_c, in subcarriers.
    pub coherence_block_len: usize,
    /// τ_p; one orthogonal pilot per user.
    pub num_pilots: usize,
    pub pilot_power_w: f64,
    pub ap_noise_power_w: f64,
    pub sat_noise_power_w: f64,
    pub earth_radius_m: f64,
    pub satellite_altitude_m: f64,
}

impl RadioConstants {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        carrier_frequency_ghz: f64,
        bandwidth_mhz: f64,
        coherence_block_len: usize,
        num_pilots: usize,
        pilot_power_w: f64,
        ap_noise_power_w: f64,
        sat_noise_power_w: f64,
        earth_radius_m: f64,
        satellite_altitude_m: f64,
    ) -> Result<Self> {
        let radio = Self {
            carrier_frequency_ghz,
            wavelength_m: SPEED_OF_LIGHT / (carrier_frequency_ghz * 1e9),
            bandwidth_mhz,
            coherence_block_len,
            num_pilots,
            pilot_power_w,
            ap_noise_power_w,
            sat_noise_power_w,
            earth_radius_m,
            satellite_altitude_m,
        };
        radio.validate()?;
        Ok(radio)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.carrier_frequency_ghz > 0.0, || "carrier frequency must be positive".into())?;
        let c = self.wavelength_m * self.carrier_frequency_ghz * 1e9;
        ensure((c / SPEED_OF_LIGHT - 1.0).abs() <= 1e-9, || {
            format!("wavelength {} m inconsistent with carrier {} GHz", self.wavelength_m, self.carrier_frequency_ghz)
        })?;
        ensure(self.bandwidth_mhz > 0.0, || "bandwidth must be positive".into())?;
        ensure(self.num_pilots > 0, || "need at least one pilot".into())?;
        ensure(self.coherence_block_len > self.num_pilots, || {
            format!("coherence block {} must exceed pilot length {}", self.coherence_block_len, self.num_pilots)
        })?;
        ensure(self.pilot_power_w > 0.0, || "pilot power must be positive".into())?;
        ensure(self.ap_noise_power_w > 0.0, || "AP noise power must be positive".into())?;
        ensure(self.sat_noise_power_w > 0.0, || "satellite noise power must be positive".into())?;
        ensure(self.earth_radius_m > 0.0 && self.satellite_altitude_m > 0.0, || {
            "earth radius and altitude must be positive".into()
        })
    }

    /// `p·τ_p`, the pilot energy per user after despreading.
    pub fn pilot_energy(&self) -> f64 {
        self.pilot_power_w * self.num_pilots as f64
    }

    /// Fraction of the coherence block left for data, `1 − K/τ_c`.
    pub fn prelog(&self) -> f64 {
        1.0 - self.num_pilots as f64 / self.coherence_block_len as f64
    }
}

/// Planar `N_H × N_V` receive array of the satellite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_h: usize,
    pub n_v: usize,
    pub d_h_m: f64,
    pub d_v_m: f64,
    /// Radius of the circular aperture used by the beam pattern.
    pub aperture_radius_m: f64,
}

impl ArrayGeometry {
    /// Half-wavelength spacing and a `10λ` aperture radius.
    pub fn half_wavelength(n_h: usize, n_v: usize, wavelength_m: f64) -> Self {
        Self {
            n_h,
            n_v,
            d_h_m: 0.5 * wavelength_m,
            d_v_m: 0.5 * wavelength_m,
            aperture_radius_m: 10.0 * wavelength_m,
        }
    }

    pub fn num_antennas(&self) -> usize {
        self.n_h * self.n_v
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.n_h >= 1 && self.n_v >= 1, || "array needs at least one element per axis".into())?;
        ensure(self.d_h_m > 0.0 && self.d_v_m > 0.0, || "antenna spacings must be positive".into())?;
        ensure(self.aperture_radius_m > 0.0, || "aperture radius must be positive".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkGains {
    pub ap_gain_dbi: f64,
    pub user_gain_dbi: f64,
    pub sat_gain_dbi: f64,
    pub shadow_std_terrestrial_db: f64,
    pub shadow_std_sat_db: f64,
}

impl LinkGains {
    pub fn validate(&self) -> Result<()> {
        ensure(self.shadow_std_terrestrial_db >= 0.0 && self.shadow_std_sat_db >= 0.0, || {
            "shadowing standard deviations must be non-negative".into()
        })
    }
}

/// Per-axis factor model of the satellite spatial correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CorrelationModel {
    Identity,
    /// `[R]_{ab} = r^{|a−b|}` per axis.
    Exponential { r_h: f64, r_v: f64 },
}

impl Default for CorrelationModel {
    fn default() -> Self {
        CorrelationModel::Exponential { r_h: 0.5, r_v: 0.5 }
    }
}

/// Distance from a ground user to a satellite at altitude `z₀` seen under
/// elevation `θ`: `√(R_E² sin²θ + z₀² + 2 z₀ R_E) − R_E sinθ`.
pub fn slant_range(elevation_rad: f64, earth_radius_m: f64, altitude_m: f64) -> Result<f64> {
    if !(0.0..=FRAC_PI_2).contains(&elevation_rad) {
        return Err(Error::Domain(format!("elevation {elevation_rad} outside [0, π/2]")));
    }
    if earth_radius_m <= 0.0 || altitude_m <= 0.0 {
        return Err(Error::Domain("earth radius and altitude must be positive".into()));
    }
    let s = elevation_rad.sin();
    let re = earth_radius_m;
    let z0 = altitude_m;
    let root = (re * re * s * s + z0 * z0 + 2.0 * z0 * re).sqrt();
    // root − R_E·s, rewritten to avoid cancellation near zenith.
    Ok((z0 * z0 + 2.0 * z0 * re) / (root + re * s))
}

/// Elevation and azimuth of `satellite` seen from `user` in the global frame.
pub fn elevation_azimuth(user: &Position3D, satellite: &Position3D) -> Result<(f64, f64)> {
    let [dx, dy, dz] = user.delta_to(satellite);
    let norm = (dx * dx + dy * dy + dz * dz).sqrt();
    if norm == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let elevation = (dz / norm).clamp(-1.0, 1.0).asin();
    let azimuth = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
    let azimuth = if azimuth == -PI { PI } else { azimuth };
    Ok((elevation, azimuth))
}

/// Angle at the satellite between the directions to `user` and to `beam_center`.
pub fn boresight_offset(user: &Position3D, satellite: &Position3D, beam_center: &Position3D) -> Result<f64> {
    let a = satellite.delta_to(user);
    let b = satellite.delta_to(beam_center);
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    Ok(sin.atan2(cos).min(FRAC_PI_2))
}

/// Rural terrestrial large-scale gain in dB (f_c in GHz, d in m).
pub fn terrestrial_pathloss_db(g_m_dbi: f64, g_k_dbi: f64, f_c_ghz: f64, distance_m: f64, shadow_db: f64) -> Result<f64> {
    if distance_m <= 0.0 || f_c_ghz <= 0.0 {
        return Err(Error::Domain(format!("distance {distance_m} m and frequency {f_c_ghz} GHz must be positive")));
    }
    Ok(g_m_dbi + g_k_dbi - 8.50 - 20.0 * f_c_ghz.log10() - 38.63 * distance_m.log10() + shadow_db)
}

/// Normalized circular-aperture beam pattern `4|J₁(u)/u|²`,
/// `u = (2π/λ)·a·sin φ`; equals 1 on boresight.
pub fn beam_gain(offset_angle_rad: f64, aperture_radius_m: f64, wavelength_m: f64) -> Result<f64> {
    if !(0.0..=FRAC_PI_2).contains(&offset_angle_rad) {
        return Err(Error::Domain(format!("beam offset {offset_angle_rad} outside [0, π/2]")));
    }
    if aperture_radius_m <= 0.0 || wavelength_m <= 0.0 {
        return Err(Error::Domain("aperture radius and wavelength must be positive".into()));
    }
    let u = 2.0 * PI / wavelength_m * aperture_radius_m * offset_angle_rad.sin();
    let ratio = bessel::j1_over_x(u);
    Ok(4.0 * ratio * ratio)
}

/// Satellite large-scale gain in dB; `32.45` is the free-space constant for
/// f_c in GHz and d in metres.
pub fn satellite_pathloss_db(
    g_dbi: f64,
    g_k_dbi: f64,
    beam_gain_db: f64,
    f_c_ghz: f64,
    slant_range_m: f64,
    shadow_db: f64,
) -> Result<f64> {
    if slant_range_m <= 0.0 || f_c_ghz <= 0.0 {
        return Err(Error::Domain(format!("slant range {slant_range_m} m and frequency must be positive")));
    }
    Ok(g_dbi + g_k_dbi + beam_gain_db - 32.45 - 20.0 * f_c_ghz.log10() - 20.0 * slant_range_m.log10() + shadow_db)
}

/// Wave vector `ℓ(θ, ω) = (2π/λ)[cosθ cosω, sinθ cosω, sinθ]ᵀ`.
pub fn wave_vector(elevation: f64, azimuth: f64, wavelength_m: f64) -> [f64; 3] {
    let k = 2.0 * PI / wavelength_m;
    let (st, ct) = elevation.sin_cos();
    let cw = azimuth.cos();
    [k * ct * cw, k * st * cw, k * st]
}

/// Position `c_n` of element `n` (1-based); horizontal index runs fastest.
pub fn antenna_offset(n: usize, array: &ArrayGeometry) -> Result<[f64; 3]> {
    let total = array.num_antennas();
    if n == 0 || n > total {
        return Err(Error::IndexOutOfRange { index: n, max: total });
    }
    let i = n - 1;
    Ok([0.0, (i % array.n_h) as f64 * array.d_h_m, (i / array.n_h) as f64 * array.d_v_m])
}

/// LoS component `ḡ = √(κβ/(κ+1))·[e^{jℓᵀc₁}, …, e^{jℓᵀc_N}]ᵀ`.
pub fn los_vector(
    elevation: f64,
    azimuth: f64,
    kappa: f64,
    beta_linear: f64,
    array: &ArrayGeometry,
    wavelength_m: f64,
) -> Result<CVector> {
    ensure(kappa >= 0.0, || format!("Rician factor {kappa} must be non-negative"))?;
    ensure(beta_linear > 0.0, || format!("large-scale gain {beta_linear} must be positive"))?;
    let ell = wave_vector(elevation, azimuth, wavelength_m);
    let amplitude = (kappa * beta_linear / (kappa + 1.0)).sqrt();
    let n = array.num_antennas();
    let mut out = CVector::zeros(n);
    for idx in 0..n {
        let c = antenna_offset(idx + 1, array)?;
        let phase = ell[0] * c[0] + ell[1] * c[1] + ell[2] * c[2];
        out[idx] = C64::from_polar(amplitude, phase);
    }
    Ok(out)
}

/// Exponential correlation factor `[R]_{ab} = r^{|a−b|}`.
pub fn exponential_correlation(n: usize, r: f64) -> Result<CMatrix> {
    if r.abs() >= 1.0 || !r.is_finite() {
        return Err(Error::Domain(format!("correlation coefficient {r} must satisfy |r| < 1")));
    }
    Ok(CMatrix::from_fn(n, n, |a, b| C64::new(r.powi(a.abs_diff(b) as i32), 0.0)))
}

impl CorrelationModel {
    /// Per-axis coefficients `(r_h, r_v)`; the identity model is `r = 0`.
    pub fn coefficients(&self) -> (f64, f64) {
        match *self {
            CorrelationModel::Identity => (0.0, 0.0),
            CorrelationModel::Exponential { r_h, r_v } => (r_h, r_v),
        }
    }
}

/// `R = (β/(κ+1))·R_H ⊗ R_V` with exponential factors.
pub fn correlation_matrix(beta_linear: f64, kappa: f64, r_h: f64, r_v: f64, array: &ArrayGeometry) -> Result<CMatrix> {
    let factor_h = exponential_correlation(array.n_h, r_h)?;
    let factor_v = exponential_correlation(array.n_v, r_v)?;
    correlation_from_factors(beta_linear, kappa, &factor_h, &factor_v)
}

/// Kronecker correlation from explicit per-axis factors, which must be
/// Hermitian positive semidefinite.
pub fn correlation_from_factors(beta_linear: f64, kappa: f64, factor_h: &CMatrix, factor_v: &CMatrix) -> Result<CMatrix> {
    ensure(kappa >= 0.0, || format!("Rician factor {kappa} must be non-negative"))?;
    ensure(beta_linear > 0.0, || format!("large-scale gain {beta_linear} must be positive"))?;
    for factor in [factor_h, factor_v] {
        if !linalg::is_hermitian(factor, 1e-12 * factor.norm().max(1.0)) {
            return Err(Error::InvalidParameter("correlation factor is not Hermitian".into()));
        }
        let (min, _) = linalg::hermitian_eigen_range(factor);
        let scale = linalg::trace(factor).re.abs().max(f64::MIN_POSITIVE);
        if min < -1e-12 * scale {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
        }
    }
    Ok(linalg::kronecker(factor_h, factor_v) * C64::new(beta_linear / (kappa + 1.0), 0.0))
}
