//! Per-drop channel statistics, MMSE estimator constants and seeded
//! small-scale realizations of every terrestrial and satellite channel.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::geometry::{
    self, ArrayGeometry, CorrelationModel, LinkGains, Position3D, RadioConstants,
};
use crate::linalg::{self, CMatrix, CVector, C64};

/// Mixes a master seed with a stream index (splitmix64 finaliser applied twice).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng_for(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}

/// One network drop. `M = 0` encodes a satellite-only deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ap_positions: Vec<Position3D>,
    pub user_positions: Vec<Position3D>,
    pub satellite_position: Position3D,
    pub radio: RadioConstants,
    pub array: ArrayGeometry,
    pub gains: LinkGains,
    pub correlation: CorrelationModel,
    /// β_mk, linear, M×K.
    pub beta_terrestrial: DMatrix<f64>,
    /// β_k, linear.
    pub beta_sat: Vec<f64>,
    pub kappa: Vec<f64>,
    pub max_power_w: Vec<f64>,
    /// Elevation θ_k of the satellite seen from user k.
    pub sat_elevation: Vec<f64>,
    /// Azimuth ω_k of the satellite seen from user k.
    pub sat_azimuth: Vec<f64>,
}

impl Scenario {
    pub fn num_aps(&self) -> usize {
        self.beta_terrestrial.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.beta_sat.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        self.array.validate()?;
        self.gains.validate()?;
        let k = self.num_users();
        let m = self.num_aps();
        ensure(k >= 1, || "need at least one user".into())?;
        ensure(self.radio.num_pilots == k, || {
            format!("pilot length {} must equal the number of users {k}", self.radio.num_pilots)
        })?;
        if self.beta_terrestrial.ncols() != k
            || self.kappa.len() != k
            || self.max_power_w.len() != k
            || self.sat_elevation.len() != k
            || self.sat_azimuth.len() != k
            || self.user_positions.len() != k
            || self.ap_positions.len() != m
        {
            return Err(Error::Dimension(format!("scenario with M={m}, K={k} has inconsistent field lengths")));
        }
        ensure(self.beta_terrestrial.iter().all(|&b| b > 0.0 && b.is_finite()), || {
            "terrestrial gains must be positive and finite".into()
        })?;
        ensure(self.beta_sat.iter().all(|&b| b > 0.0 && b.is_finite()), || {
            "satellite gains must be positive and finite".into()
        })?;
        ensure(self.kappa.iter().all(|&x| x >= 0.0 && x.is_finite()), || "Rician factors must be non-negative".into())?;
        ensure(self.max_power_w.iter().all(|&p| p > 0.0 && p.is_finite()), || "power budgets must be positive".into())?;
        ensure(
            self.ap_positions.iter().chain(&self.user_positions).all(Position3D::is_finite)
                && self.satellite_position.is_finite(),
            || "positions must be finite".into(),
        )
    }
}

/// Long-term statistics of one drop together with the MMSE estimator constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStatistics {
    pub radio: RadioConstants,
    /// ḡ_k.
    pub los: Vec<CVector>,
    /// R_k.
    pub corr: Vec<CMatrix>,
    /// Φ_k = (pK R_k + σ_s² I)⁻¹.
    pub phi: Vec<CMatrix>,
    /// Θ_k = R_k Φ_k R_k.
    pub theta: Vec<CMatrix>,
    /// γ_mk, M×K.
    pub gamma: DMatrix<f64>,
    pub beta_terrestrial: DMatrix<f64>,
    pub beta_sat: Vec<f64>,
    /// 2-norm condition number of pK R_k + σ_s² I.
    pub condition_numbers: Vec<f64>,
}

impl ChannelStatistics {
    /// Assembles statistics from explicit LoS vectors and correlation matrices.
    pub fn from_parts(
        radio: RadioConstants,
        los: Vec<CVector>,
        corr: Vec<CMatrix>,
        beta_terrestrial: DMatrix<f64>,
        beta_sat: Vec<f64>,
    ) -> Result<Self> {
        radio.validate()?;
        let k = los.len();
        if corr.len() != k || beta_terrestrial.ncols() != k || beta_sat.len() != k {
            return Err(Error::Dimension("per-user statistics disagree on K".into()));
        }
        let n = los.first().map_or(0, |v| v.len());
        if los.iter().any(|v| v.len() != n) || corr.iter().any(|r| r.shape() != (n, n)) {
            return Err(Error::Dimension(format!("all satellite vectors must have length N={n}")));
        }
        let pk = radio.pilot_energy();
        let s2 = radio.sat_noise_power_w;
        let mut phi = Vec::with_capacity(k);
        let mut theta = Vec::with_capacity(k);
        let mut condition_numbers = Vec::with_capacity(k);
        for r in &corr {
            let scale = linalg::trace(r).re.abs().max(f64::MIN_POSITIVE);
            if !linalg::is_hermitian(r, 1e-12 * r.norm().max(f64::MIN_POSITIVE)) {
                return Err(Error::InvalidParameter("correlation matrix is not Hermitian".into()));
            }
            let (min, max) = linalg::hermitian_eigen_range(r);
            if min < -1e-9 * scale {
                return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
            }
            let a = r * C64::new(pk, 0.0) + CMatrix::identity(n, n) * C64::new(s2, 0.0);
            condition_numbers.push((pk * max.max(0.0) + s2) / (pk * min.max(0.0) + s2));
            let inv = linalg::hermitian_inverse(&a)?;
            let t = r * &inv * r;
            theta.push((&t + t.adjoint()) * C64::new(0.5, 0.0));
            phi.push(inv);
        }
        let s2a = radio.ap_noise_power_w;
        let gamma = beta_terrestrial.map(|b| pk * b * b / (pk * b + s2a));
        Ok(Self { radio, los, corr, phi, theta, gamma, beta_terrestrial, beta_sat, condition_numbers })
    }

    pub fn num_aps(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.los.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.los.first().map_or(0, |v| v.len())
    }
}

/// Builds ḡ_k, R_k and the estimator statistics for every user of a drop.
pub fn build_statistics(scenario: &Scenario) -> Result<ChannelStatistics> {
    scenario.validate()?;
    let (r_h, r_v) = scenario.correlation.coefficients();
    let lambda = scenario.radio.wavelength_m;
    let k = scenario.num_users();
    let mut los = Vec::with_capacity(k);
    let mut corr = Vec::with_capacity(k);
    for u in 0..k {
        let beta = scenario.beta_sat[u];
        let kappa = scenario.kappa[u];
        los.push(geometry::los_vector(
            scenario.sat_elevation[u],
            scenario.sat_azimuth[u],
            kappa,
            beta,
            &scenario.array,
            lambda,
        )?);
        corr.push(geometry::correlation_matrix(beta, kappa, r_h, r_v, &scenario.array)?);
    }
    ChannelStatistics::from_parts(
        scenario.radio,
        los,
        corr,
        scenario.beta_terrestrial.clone(),
        scenario.beta_sat.clone(),
    )
}

/// One small-scale draw of all channels and their MMSE estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// g_mk, M×K.
    pub g_terrestrial: DMatrix<C64>,
    pub g_sat: Vec<CVector>,
    pub ghat_terrestrial: DMatrix<C64>,
    pub ghat_sat: Vec<CVector>,
}

/// Precomputed factors for repeated sampling: `L_k` with `L_k L_kᴴ = R_k`
/// and the estimator gain `A_k = √(pK)·R_k Φ_k`.
#[derive(Debug, Clone)]
pub struct ChannelSampler<'a> {
    stats: &'a ChannelStatistics,
    sqrt_corr: Vec<CMatrix>,
    gain: Vec<CMatrix>,
    /// √(pK)·β_mk/(pKβ_mk + σ_a²).
    terrestrial_gain: DMatrix<f64>,
}

impl<'a> ChannelSampler<'a> {
    pub fn new(stats: &'a ChannelStatistics) -> Result<Self> {
        let pk = stats.radio.pilot_energy();
        let sqrt_pk = pk.sqrt();
        let sqrt_corr = stats.corr.iter().map(linalg::hermitian_sqrt).collect::<Result<Vec<_>>>()?;
        let gain = stats
            .corr
            .iter()
            .zip(&stats.phi)
            .map(|(r, phi)| (r * phi) * C64::new(sqrt_pk, 0.0))
            .collect();
        let s2a = stats.radio.ap_noise_power_w;
        let terrestrial_gain = stats.beta_terrestrial.map(|b| sqrt_pk * b / (pk * b + s2a));
        Ok(Self { stats, sqrt_corr, gain, terrestrial_gain })
    }

    pub fn statistics(&self) -> &ChannelStatistics {
        self.stats
    }

    /// Draws a realization from `rng`. Draw order is fixed: per user, the
    /// satellite scatter, the satellite pilot noise, then per AP the channel
    /// and the pilot noise.
    pub fn sample_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        let stats = self.stats;
        let k_users = stats.num_users();
        let m_aps = stats.num_aps();
        let n = stats.num_antennas();
        let sqrt_pk = stats.radio.pilot_energy().sqrt();
        let sigma_s = stats.radio.sat_noise_power_w.sqrt();
        let sigma_a = stats.radio.ap_noise_power_w.sqrt();

        let mut g_sat = Vec::with_capacity(k_users);
        let mut ghat_sat = Vec::with_capacity(k_users);
        let mut g_terrestrial = DMatrix::from_element(m_aps, k_users, linalg::ZERO);
        let mut ghat_terrestrial = DMatrix::from_element(m_aps, k_users, linalg::ZERO);
        for k in 0..k_users {
            let w = linalg::complex_normal_vector(rng, n);
            let noise = linalg::complex_normal_vector(rng, n) * C64::new(sigma_s, 0.0);
            let g = &stats.los[k] + &self.sqrt_corr[k] * w;
            // Despread pilot minus its known mean: √(pK)(g − ḡ) + noise.
            let innovation = (&g - &stats.los[k]) * C64::new(sqrt_pk, 0.0) + noise;
            let ghat = &stats.los[k] + &self.gain[k] * innovation;
            g_sat.push(g);
            ghat_sat.push(ghat);

            for m in 0..m_aps {
                let beta = stats.beta_terrestrial[(m, k)];
                let g = linalg::complex_normal(rng) * beta.sqrt();
                let y = g * sqrt_pk + linalg::complex_normal(rng) * sigma_a;
                g_terrestrial[(m, k)] = g;
                ghat_terrestrial[(m, k)] = y * self.terrestrial_gain[(m, k)];
            }
        }
        ChannelRealization { g_terrestrial, g_sat, ghat_terrestrial, ghat_sat }
    }

    /// Realization number `index` of the stream keyed by `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> ChannelRealization {
        self.sample_with(&mut rng_for(seed, index))
    }
}

/// Single seeded realization; equal seeds give bit-identical output.
pub fn sample_realization(stats: &ChannelStatistics, seed: u64) -> Result<ChannelRealization> {
    Ok(ChannelSampler::new(stats)?.sample(seed, 0))
}

/// Empirical second-order statistics of the estimation error of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMoments {
    /// Sample covariance of e_k = g_k − ĝ_k.
    pub sat_error_cov: CMatrix,
    /// Sample cross-covariance E{(ĝ_k − ḡ_k) e_kᴴ}.
    pub sat_cross_cov: CMatrix,
    /// Per-AP sample variance of e_mk.
    pub terrestrial_error_var: Vec<f64>,
    /// Per-AP sample E{ĝ_mk e_mk*}.
    pub terrestrial_cross: Vec<C64>,
    /// Per-AP sample variance of ĝ_mk.
    pub terrestrial_estimate_var: Vec<f64>,
    pub trials: usize,
}

/// Sample moments of the estimation errors over `trials` fresh realizations.
pub fn estimation_error_moments(stats: &ChannelStatistics, trials: usize, seed: u64) -> Result<Vec<ErrorMoments>> {
    ensure(trials >= 10_000, || format!("{trials} trials is too few for error moments (need 10 000)"))?;
    let sampler = ChannelSampler::new(stats)?;
    let k_users = stats.num_users();
    let m_aps = stats.num_aps();
    let n = stats.num_antennas();
    let mut out: Vec<ErrorMoments> = (0..k_users)
        .map(|_| ErrorMoments {
            sat_error_cov: CMatrix::zeros(n, n),
            sat_cross_cov: CMatrix::zeros(n, n),
            terrestrial_error_var: vec![0.0; m_aps],
            terrestrial_cross: vec![linalg::ZERO; m_aps],
            terrestrial_estimate_var: vec![0.0; m_aps],
            trials,
        })
        .collect();
    for t in 0..trials {
        let real = sampler.sample(seed, t as u64);
        for (k, acc) in out.iter_mut().enumerate() {
            let e = &real.g_sat[k] - &real.ghat_sat[k];
            let centred = &real.ghat_sat[k] - &stats.los[k];
            acc.sat_error_cov += &e * e.adjoint();
            acc.sat_cross_cov += &centred * e.adjoint();
            for m in 0..m_aps {
                let ghat = real.ghat_terrestrial[(m, k)];
                let e = real.g_terrestrial[(m, k)] - ghat;
                acc.terrestrial_error_var[m] += e.norm_sqr();
                acc.terrestrial_cross[m] += ghat * e.conj();
                acc.terrestrial_estimate_var[m] += ghat.norm_sqr();
            }
        }
    }
    let inv = 1.0 / trials as f64;
    for acc in &mut out {
        acc.sat_error_cov *= C64::new(inv, 0.0);
        acc.sat_cross_cov *= C64::new(inv, 0.0);
        acc.terrestrial_error_var.iter_mut().for_each(|v| *v *= inv);
        acc.terrestrial_cross.iter_mut().for_each(|v| *v *= inv);
        acc.terrestrial_estimate_var.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}
