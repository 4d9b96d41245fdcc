//! Ergodic SINR and rate: closed-form MRC expressions for the three system
//! modes and a Monte-Carlo estimator of the generic use-and-then-forget SINR
//! for arbitrary combiners.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, ChannelSampler, ChannelStatistics};
use crate::error::{ensure, Error, Result};
use crate::geometry::RadioConstants;
use crate::linalg::{self, kahan_sum, CMatrix, CVector, KahanSum, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemMode {
    Hybrid,
    TerrestrialOnly,
    SatelliteOnly,
}

impl SystemMode {
    pub const ALL: [SystemMode; 3] = [SystemMode::Hybrid, SystemMode::TerrestrialOnly, SystemMode::SatelliteOnly];

    pub fn uses_satellite(self) -> bool {
        self != SystemMode::TerrestrialOnly
    }

    pub fn uses_aps(self) -> bool {
        self != SystemMode::SatelliteOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemMode::Hybrid => "hybrid",
            SystemMode::TerrestrialOnly => "terrestrial",
            SystemMode::SatelliteOnly => "satellite",
        }
    }
}

impl std::str::FromStr for SystemMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(SystemMode::Hybrid),
            "terrestrial" | "terrestrial_only" => Ok(SystemMode::TerrestrialOnly),
            "satellite" | "satellite_only" => Ok(SystemMode::SatelliteOnly),
            other => Err(Error::InvalidParameter(format!("unknown system mode '{other}'"))),
        }
    }
}

/// Closed-form MRC SINR written as a linear model in the powers:
/// `SINR_k = ρ_k·S_k² / (Σ_k' C_kk' ρ_k' + NO_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrTerms {
    /// S_k = ‖ḡ_k‖² + pK·tr(Θ_k) + Σ_m γ_mk.
    pub signal_gain: Vec<f64>,
    /// C_kk'; row k holds the interference coefficients seen by user k.
    pub interference: DMatrix<f64>,
    /// NO_k.
    pub noise: Vec<f64>,
}

impl SinrTerms {
    pub fn num_users(&self) -> usize {
        self.signal_gain.len()
    }

    fn zeros(k: usize) -> Self {
        Self { signal_gain: vec![0.0; k], interference: DMatrix::zeros(k, k), noise: vec![0.0; k] }
    }

    /// Satellite contribution.
    pub fn satellite(stats: &ChannelStatistics) -> Self {
        let k_users = stats.num_users();
        let pk = stats.radio.pilot_energy();
        let s2 = stats.radio.sat_noise_power_w;
        let mut out = Self::zeros(k_users);
        for k in 0..k_users {
            let los_energy = stats.los[k].norm_squared();
            let tr_theta = linalg::trace(&stats.theta[k]).re;
            out.signal_gain[k] = los_energy + pk * tr_theta;
            out.noise[k] = s2 * los_energy + pk * s2 * tr_theta;
            for j in 0..k_users {
                let los_cross = if j == k { 0.0 } else { stats.los[k].dotc(&stats.los[j]).norm_sqr() };
                let terms = [
                    los_cross,
                    pk * linalg::quadratic_form(&stats.los[j], &stats.theta[k]),
                    linalg::quadratic_form(&stats.los[k], &stats.corr[j]),
                    pk * linalg::trace_of_product(&stats.corr[j], &stats.theta[k]).re,
                ];
                out.interference[(k, j)] = kahan_sum(terms);
            }
        }
        out
    }

    /// AP contribution.
    pub fn terrestrial(stats: &ChannelStatistics) -> Self {
        let k_users = stats.num_users();
        let m_aps = stats.num_aps();
        let s2a = stats.radio.ap_noise_power_w;
        let mut out = Self::zeros(k_users);
        for k in 0..k_users {
            let gamma = stats.gamma.column(k);
            let sum_gamma = kahan_sum(gamma.iter().copied());
            out.signal_gain[k] = sum_gamma;
            out.noise[k] = s2a * sum_gamma;
            for j in 0..k_users {
                out.interference[(k, j)] = kahan_sum((0..m_aps).map(|m| gamma[m] * stats.beta_terrestrial[(m, j)]));
            }
        }
        out
    }

    pub fn for_mode(stats: &ChannelStatistics, mode: SystemMode) -> Self {
        match mode {
            SystemMode::SatelliteOnly => Self::satellite(stats),
            SystemMode::TerrestrialOnly => Self::terrestrial(stats),
            SystemMode::Hybrid => Self::satellite(stats).combine(&Self::terrestrial(stats)),
        }
    }

    /// Elementwise sum of two contributions.
    pub fn combine(&self, other: &SinrTerms) -> SinrTerms {
        SinrTerms {
            signal_gain: self.signal_gain.iter().zip(&other.signal_gain).map(|(a, b)| a + b).collect(),
            interference: &self.interference + &other.interference,
            noise: self.noise.iter().zip(&other.noise).map(|(a, b)| a + b).collect(),
        }
    }

    /// ρ_k·S_k².
    pub fn signal(&self, rho: &[f64], k: usize) -> f64 {
        rho[k] * self.signal_gain[k] * self.signal_gain[k]
    }

    /// MI_k = Σ_k' C_kk' ρ_k'.
    pub fn mutual_interference(&self, rho: &[f64], k: usize) -> f64 {
        kahan_sum(rho.iter().enumerate().map(|(j, r)| self.interference[(k, j)] * r))
    }

    pub fn sinr_of(&self, rho: &[f64], k: usize) -> f64 {
        let signal = self.signal(rho, k);
        if signal == 0.0 {
            return 0.0;
        }
        signal / (self.mutual_interference(rho, k) + self.noise[k])
    }

    pub fn sinr(&self, rho: &[f64]) -> Vec<f64> {
        (0..self.num_users()).map(|k| self.sinr_of(rho, k)).collect()
    }
}

/// Per-user SINR and rate with its signal / interference / noise split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub mode: SystemMode,
    pub sinr: Vec<f64>,
    pub rate_mbps: Vec<f64>,
    pub signal: Vec<f64>,
    pub interference: Vec<f64>,
    pub noise: Vec<f64>,
}

impl ThroughputReport {
    pub fn sum_rate(&self) -> f64 {
        kahan_sum(self.rate_mbps.iter().copied())
    }

    pub fn min_rate(&self) -> f64 {
        self.rate_mbps.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_powers(rho: &[f64], k: usize) -> Result<()> {
    if rho.len() != k {
        return Err(Error::Dimension(format!("{} powers for {k} users", rho.len())));
    }
    ensure(rho.iter().all(|r| *r >= 0.0 && r.is_finite()), || "powers must be non-negative and finite".into())
}

/// Closed-form MRC SINR and rate of every user.
pub fn sinr_closed_form(stats: &ChannelStatistics, rho: &[f64], mode: SystemMode) -> Result<ThroughputReport> {
    let k_users = stats.num_users();
    check_powers(rho, k_users)?;
    let terms = SinrTerms::for_mode(stats, mode);
    report_from_terms(&terms, rho, mode, &stats.radio)
}

/// Report for precomputed terms; avoids rebuilding them inside solvers.
pub fn report_from_terms(terms: &SinrTerms, rho: &[f64], mode: SystemMode, radio: &RadioConstants) -> Result<ThroughputReport> {
    let k_users = terms.num_users();
    check_powers(rho, k_users)?;
    let signal: Vec<f64> = (0..k_users).map(|k| terms.signal(rho, k)).collect();
    let interference: Vec<f64> = (0..k_users).map(|k| terms.mutual_interference(rho, k)).collect();
    let sinr = terms.sinr(rho);
    let rate_mbps = sinr.iter().map(|s| ergodic_rate(*s, radio, k_users)).collect::<Result<Vec<_>>>()?;
    Ok(ThroughputReport { mode, sinr, rate_mbps, signal, interference, noise: terms.noise.clone() })
}

/// `(1 − K/τ_c)·B·log₂(1 + SINR)` in Mbps.
pub fn ergodic_rate(sinr: f64, radio: &RadioConstants, k_users: usize) -> Result<f64> {
    ensure(radio.coherence_block_len > k_users, || {
        format!("coherence block {} must exceed K = {k_users}", radio.coherence_block_len)
    })?;
    ensure(sinr >= 0.0, || format!("SINR {sinr} must be non-negative"))?;
    let prelog = 1.0 - k_users as f64 / radio.coherence_block_len as f64;
    Ok(prelog * radio.bandwidth_mhz * sinr.ln_1p() / std::f64::consts::LN_2)
}

/// Inverse of [`ergodic_rate`]: the SINR needed for `rate_mbps`.
pub fn sinr_for_rate(rate_mbps: f64, radio: &RadioConstants, k_users: usize) -> Result<f64> {
    ensure(radio.coherence_block_len > k_users, || "coherence block must exceed K".into())?;
    let prelog = 1.0 - k_users as f64 / radio.coherence_block_len as f64;
    Ok((rate_mbps / (prelog * radio.bandwidth_mhz) * std::f64::consts::LN_2).exp_m1())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    Mrc,
    Mmse,
}

/// Linear receive combiner: `u_k` at the satellite and `u_mk` at the APs.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub kind: CombinerKind,
    pub sat: Vec<CVector>,
    /// u_mk, M×K.
    pub ap: DMatrix<C64>,
}

pub fn make_mrc_combiner(realization: &ChannelRealization) -> Combiner {
    Combiner {
        kind: CombinerKind::Mrc,
        sat: realization.ghat_sat.clone(),
        ap: realization.ghat_terrestrial.clone(),
    }
}

/// Regularised zero-forcing-style combiner `X(XᴴX + Kσ²/P·I)⁻¹` for both links.
pub fn make_mmse_combiner(
    realization: &ChannelRealization,
    p_max: f64,
    sat_noise_w: f64,
    ap_noise_w: f64,
) -> Result<Combiner> {
    ensure(p_max > 0.0, || format!("P_max {p_max} must be positive"))?;
    let k_users = realization.ghat_sat.len();
    let sat = if realization.ghat_sat.first().is_some_and(|v| !v.is_empty()) {
        let g = CMatrix::from_columns(&realization.ghat_sat);
        let u = regularised_inverse(&g, k_users as f64 * sat_noise_w / p_max)?;
        u.column_iter().map(|c| c.into_owned()).collect()
    } else {
        realization.ghat_sat.clone()
    };
    let ap = if realization.ghat_terrestrial.nrows() > 0 {
        regularised_inverse(&realization.ghat_terrestrial, k_users as f64 * ap_noise_w / p_max)?
    } else {
        realization.ghat_terrestrial.clone()
    };
    Ok(Combiner { kind: CombinerKind::Mmse, sat, ap })
}

fn regularised_inverse(x: &CMatrix, reg: f64) -> Result<CMatrix> {
    ensure(reg > 0.0, || "regularisation must be positive".into())?;
    let k = x.ncols();
    let gram = x.adjoint() * x + CMatrix::identity(k, k) * C64::new(reg, 0.0);
    // X (XᴴX + cI)⁻¹ = ((XᴴX + cI)⁻¹ Xᴴ)ᴴ since the Gram matrix is Hermitian.
    Ok(linalg::hermitian_solve(&gram, &x.adjoint())?.adjoint())
}

/// `z_kk' = u_kᴴ g_k' + Σ_m u_mk* g_mk'`, restricted to the links of `mode`.
pub fn overall_channel(combiner: &Combiner, realization: &ChannelRealization, k: usize, k2: usize, mode: SystemMode) -> C64 {
    let mut z = linalg::ZERO;
    if mode.uses_satellite() {
        z += combiner.sat[k].dotc(&realization.g_sat[k2]);
    }
    if mode.uses_aps() {
        z += combiner.ap.column(k).dotc(&realization.g_terrestrial.column(k2));
    }
    z
}

/// Combiner rule applied inside each Monte-Carlo trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CombinerRule {
    Mrc,
    /// Both links regularised with the listed noise powers.
    Mmse { p_max: f64, sat_noise_w: f64, ap_noise_w: f64 },
}

impl CombinerRule {
    fn build(&self, realization: &ChannelRealization) -> Result<Combiner> {
        match *self {
            CombinerRule::Mrc => Ok(make_mrc_combiner(realization)),
            CombinerRule::Mmse { p_max, sat_noise_w, ap_noise_w } => {
                make_mmse_combiner(realization, p_max, sat_noise_w, ap_noise_w)
            }
        }
    }
}

/// Monte-Carlo SINR estimate with delta-method standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mode: SystemMode,
    pub sinr: Vec<f64>,
    pub std_error: Vec<f64>,
    pub trials: usize,
}

pub const MIN_MONTE_CARLO_TRIALS: usize = 1_000;
const BLOCK: usize = 256;

/// Running mean and centred second-moment matrix of a feature vector.
#[derive(Debug, Clone)]
struct Moments {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Moments {
    /// Two-pass moments of one block.
    fn from_rows(rows: &[DVector<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = DVector::zeros(d);
        for r in rows {
            mean += r;
        }
        mean /= n;
        let mut m2 = DMatrix::zeros(d, d);
        for r in rows {
            let c = r - &mean;
            m2.ger(1.0, &c, &c, 1.0);
        }
        Self { n, mean, m2 }
    }

    /// Chan et al. pairwise merge.
    fn merge(&mut self, other: &Moments) {
        let n = self.n + other.n;
        let delta = &other.mean - &self.mean;
        let w = self.n * other.n / n;
        self.m2 += &other.m2;
        self.m2.ger(w, &delta, &delta, 1.0);
        self.mean += delta * (other.n / n);
        self.n = n;
    }
}

/// Feature layout per user: `[Re z_kk, Im z_kk, |z_k1|², …, |z_kK|², noise]`.
fn user_features(
    combiner: &Combiner,
    realization: &ChannelRealization,
    k: usize,
    mode: SystemMode,
    radio: &RadioConstants,
) -> DVector<f64> {
    let k_users = realization.g_sat.len();
    let mut f = DVector::zeros(k_users + 3);
    for j in 0..k_users {
        let z = overall_channel(combiner, realization, k, j, mode);
        if j == k {
            f[0] = z.re;
            f[1] = z.im;
        }
        f[2 + j] = z.norm_sqr();
    }
    let mut noise = 0.0;
    if mode.uses_satellite() {
        noise += radio.sat_noise_power_w * combiner.sat[k].norm_squared();
    }
    if mode.uses_aps() {
        noise += radio.ap_noise_power_w * combiner.ap.column(k).norm_squared();
    }
    f[k_users + 2] = noise;
    f
}

/// SINR and its standard error from merged moments of one user.
fn assemble(moments: &Moments, rho: &[f64], k: usize) -> (f64, f64) {
    let k_users = rho.len();
    let n = moments.n;
    let mu = &moments.mean;
    let (mr, mi) = (mu[0], mu[1]);
    let mean_sq = mr * mr + mi * mi;
    let var_z = (moments.m2[(0, 0)] + moments.m2[(1, 1)]) / n;
    let num = rho[k] * mean_sq;
    let mut den = KahanSum::new();
    for j in 0..k_users {
        if j != k {
            den.add(rho[j] * mu[2 + j]);
        }
    }
    den.add(rho[k] * var_z);
    den.add(mu[k_users + 2]);
    let den = den.value();
    if num == 0.0 {
        return (0.0, 0.0);
    }
    let sinr = num / den;
    // Gradient with respect to the feature means; |z_kk|² enters through var_z.
    let d2 = den * den;
    let mut g = DVector::zeros(k_users + 3);
    g[0] = 2.0 * rho[k] * mr * (den + num) / d2;
    g[1] = 2.0 * rho[k] * mi * (den + num) / d2;
    for j in 0..k_users {
        g[2 + j] = -num * rho[j] / d2;
    }
    g[k_users + 2] = -num / d2;
    let var = (g.transpose() * &moments.m2 * &g)[(0, 0)].max(0.0);
    (sinr, var.sqrt() / n)
}

/// Monte-Carlo estimate of the generic SINR for one mode.
pub fn sinr_monte_carlo(
    stats: &ChannelStatistics,
    rho: &[f64],
    mode: SystemMode,
    rule: CombinerRule,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    Ok(sinr_monte_carlo_modes(stats, rho, &[mode], rule, trials, seed)?.remove(0))
}

/// Monte-Carlo estimates for several modes sharing the same realizations.
///
/// Trials are processed in fixed blocks with per-trial seeds and merged in
/// block order, so the result does not depend on the thread count.
pub fn sinr_monte_carlo_modes(
    stats: &ChannelStatistics,
    rho: &[f64],
    modes: &[SystemMode],
    rule: CombinerRule,
    trials: usize,
    seed: u64,
) -> Result<Vec<MonteCarloEstimate>> {
    let k_users = stats.num_users();
    check_powers(rho, k_users)?;
    ensure(trials >= MIN_MONTE_CARLO_TRIALS, || {
        format!("{trials} trials is below the minimum of {MIN_MONTE_CARLO_TRIALS}")
    })?;
    ensure(!modes.is_empty(), || "no system mode requested".into())?;
    let sampler = ChannelSampler::new(stats)?;
    let radio = stats.radio;
    let blocks = trials.div_ceil(BLOCK);

    // blocks × modes × users.
    let per_block: Vec<Vec<Vec<Moments>>> = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<Vec<Vec<Moments>>> {
            let start = b * BLOCK;
            let end = (start + BLOCK).min(trials);
            let mut rows: Vec<Vec<Vec<DVector<f64>>>> =
                vec![vec![Vec::with_capacity(end - start); k_users]; modes.len()];
            for t in start..end {
                let real = sampler.sample(seed, t as u64);
                let combiner = rule.build(&real)?;
                for (mi, &mode) in modes.iter().enumerate() {
                    for k in 0..k_users {
                        rows[mi][k].push(user_features(&combiner, &real, k, mode, &radio));
                    }
                }
            }
            Ok(rows
                .iter()
                .map(|per_user| per_user.iter().map(|r| Moments::from_rows(r)).collect())
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut iter = per_block.into_iter();
    let mut total = iter.next().expect("at least one block");
    for block in iter {
        for (acc_mode, blk_mode) in total.iter_mut().zip(&block) {
            for (acc, blk) in acc_mode.iter_mut().zip(blk_mode) {
                acc.merge(blk);
            }
        }
    }
    Ok(modes
        .iter()
        .zip(&total)
        .map(|(&mode, per_user)| {
            let (sinr, std_error) = per_user.iter().enumerate().map(|(k, m)| assemble(m, rho, k)).unzip();
            MonteCarloEstimate { mode, sinr, std_error, trials }
        })
        .collect())
}

/// `E|xᴴNx|²` for `x ~ CN(0, R)`: `|tr(RN)|² + tr(RNRNᴴ)`.
pub fn quartic_form_moment(r: &CMatrix, n: &CMatrix) -> f64 {
    let rn = r * n;
    let rnh = r * n.adjoint();
    linalg::trace(&rn).norm_sqr() + linalg::trace_of_product(&rn, &rnh).re
}

/// Closed-form intermediate moments of the MRC overall channel of one user,
/// with `a = ‖ĝ_k‖²`, `ã = ĝ_kᴴe_k`, `b = Σ_m |ĝ_mk|²`, `b̃ = Σ_m ĝ_mk* e_mk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentOracles {
    pub mean_z: f64,
    pub a_sq: f64,
    pub a_tilde_sq: f64,
    pub b_sq: f64,
    pub b_tilde_sq: f64,
    pub a_b: f64,
    /// E|z_kk|² from the five pieces above.
    pub z_sq: f64,
    /// E|z_kk'|² for every k' (entry k equals `z_sq`).
    pub z_cross_sq: Vec<f64>,
    /// E|u_kᴴw|².
    pub sat_noise: f64,
    /// Σ_m E|u_mk* w_m|².
    pub ap_noise: f64,
}

impl MomentOracles {
    /// D₂ = Σ_{k'≠k} ρ_k' E|z_kk'|².
    pub fn d2(&self, rho: &[f64], k: usize) -> f64 {
        kahan_sum(rho.iter().enumerate().filter(|(j, _)| *j != k).map(|(j, r)| r * self.z_cross_sq[j]))
    }
}

pub fn moment_oracles(stats: &ChannelStatistics, k: usize) -> Result<MomentOracles> {
    let k_users = stats.num_users();
    if k >= k_users {
        return Err(Error::IndexOutOfRange { index: k, max: k_users.saturating_sub(1) });
    }
    let pk = stats.radio.pilot_energy();
    let los = &stats.los[k];
    let theta = &stats.theta[k];
    let r = &stats.corr[k];
    let los_energy = los.norm_squared();
    let tr_theta = linalg::trace(theta).re;
    let los_theta = linalg::quadratic_form(los, theta);
    let tr_theta2 = linalg::trace_of_product(theta, theta).re;
    let sat_gain = los_energy + pk * tr_theta;

    let a_sq = sat_gain * sat_gain + 2.0 * pk * los_theta + pk * pk * tr_theta2;
    let a_tilde_sq = linalg::quadratic_form(los, r) - pk * los_theta + pk * linalg::trace_of_product(r, theta).re
        - pk * pk * tr_theta2;
    let gamma = stats.gamma.column(k);
    let sum_gamma = kahan_sum(gamma.iter().copied());
    let b_sq = kahan_sum(gamma.iter().map(|g| g * g)) + sum_gamma * sum_gamma;
    let b_tilde_sq = kahan_sum(gamma.iter().enumerate().map(|(m, g)| g * (stats.beta_terrestrial[(m, k)] - g)));
    let a_b = sat_gain * sum_gamma;
    let z_sq = kahan_sum([a_sq, a_tilde_sq, b_sq, b_tilde_sq, 2.0 * a_b]);

    let terms = SinrTerms::for_mode(stats, SystemMode::Hybrid);
    let z_cross_sq = (0..k_users)
        .map(|j| if j == k { z_sq } else { terms.interference[(k, j)] })
        .collect();
    Ok(MomentOracles {
        mean_z: sat_gain + sum_gamma,
        a_sq,
        a_tilde_sq,
        b_sq,
        b_tilde_sq,
        a_b,
        z_sq,
        z_cross_sq,
        sat_noise: stats.radio.sat_noise_power_w * sat_gain,
        ap_noise: stats.radio.ap_noise_power_w * sum_gamma,
    })
}

/// Sample averages of the quantities in [`MomentOracles`] under MRC.
pub fn moment_samples(stats: &ChannelStatistics, k: usize, trials: usize, seed: u64) -> Result<MomentOracles> {
    let k_users = stats.num_users();
    if k >= k_users {
        return Err(Error::IndexOutOfRange { index: k, max: k_users.saturating_sub(1) });
    }
    ensure(trials >= 1, || "need at least one trial".into())?;
    let sampler = ChannelSampler::new(stats)?;
    let radio = stats.radio;
    let blocks = trials.div_ceil(BLOCK);
    // [mean_z, a², |ã|², b², |b̃|², ab, |z_kk'|²…, sat noise, ap noise]
    let width = 8 + k_users;
    let sums: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![KahanSum::new(); width];
            for t in b * BLOCK..((b + 1) * BLOCK).min(trials) {
                let real = sampler.sample(seed, t as u64);
                let ghat = &real.ghat_sat[k];
                let e = &real.g_sat[k] - ghat;
                let a = ghat.norm_squared();
                let a_t = ghat.dotc(&e);
                let gh_t = real.ghat_terrestrial.column(k);
                let b_val: f64 = gh_t.iter().map(|g| g.norm_sqr()).sum();
                let b_t: C64 = gh_t
                    .iter()
                    .zip(real.g_terrestrial.column(k).iter())
                    .map(|(gh, g)| gh.conj() * (g - gh))
                    .sum();
                let comb = make_mrc_combiner(&real);
                let zkk = overall_channel(&comb, &real, k, k, SystemMode::Hybrid);
                acc[0].add(zkk.re);
                acc[1].add(a * a);
                acc[2].add(a_t.norm_sqr());
                acc[3].add(b_val * b_val);
                acc[4].add(b_t.norm_sqr());
                acc[5].add(a * b_val);
                for j in 0..k_users {
                    acc[6 + j].add(overall_channel(&comb, &real, k, j, SystemMode::Hybrid).norm_sqr());
                }
                acc[6 + k_users].add(radio.sat_noise_power_w * a);
                acc[7 + k_users].add(radio.ap_noise_power_w * b_val);
            }
            acc.iter().map(KahanSum::value).collect()
        })
        .collect();
    let mut total = vec![KahanSum::new(); width];
    for block in &sums {
        for (t, v) in total.iter_mut().zip(block) {
            t.add(*v);
        }
    }
    let avg: Vec<f64> = total.iter().map(|s| s.value() / trials as f64).collect();
    Ok(MomentOracles {
        mean_z: avg[0],
        a_sq: avg[1],
        a_tilde_sq: avg[2],
        b_sq: avg[3],
        b_tilde_sq: avg[4],
        a_b: avg[5],
        z_sq: avg[6 + k],
        z_cross_sq: avg[6..6 + k_users].to_vec(),
        sat_noise: avg[6 + k_users],
        ap_noise: avg[7 + k_users],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::test_support::{radio, random_stats};
    use crate::channel::{rng_for, sample_realization};
    use rand::Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn zero_power_gives_zero_sinr() {
        let stats = random_stats(3, 2, 2, 3, 1);
        for mode in SystemMode::ALL {
            let rep = sinr_closed_form(&stats, &[0.0; 3], mode).unwrap();
            assert!(rep.sinr.iter().all(|s| *s == 0.0));
            assert!(rep.rate_mbps.iter().all(|r| *r == 0.0));
        }
        assert!(sinr_closed_form(&stats, &[1.0, -1.0, 1.0], SystemMode::Hybrid).is_err());
        assert!(sinr_closed_form(&stats, &[1.0, 1.0], SystemMode::Hybrid).is_err());
    }

    /// Independent term-by-term evaluation with explicit loops.
    fn naive_sinr(stats: &ChannelStatistics, rho: &[f64], k: usize, sat: bool, ap: bool) -> f64 {
        let pk = stats.radio.pilot_energy();
        let n = stats.num_antennas();
        let kk = stats.num_users();
        let mm = stats.num_aps();
        let th = &stats.theta[k];
        let gk = &stats.los[k];
        let mut num = 0.0;
        let mut mi = 0.0;
        let mut no = 0.0;
        if sat {
            let mut tr = 0.0;
            let mut e = 0.0;
            for i in 0..n {
                tr += th[(i, i)].re;
                e += gk[i].norm_sqr();
            }
            num += e + pk * tr;
            no += stats.radio.sat_noise_power_w * (e + pk * tr);
            for j in 0..kk {
                let gj = &stats.los[j];
                let rj = &stats.corr[j];
                if j != k {
                    let mut ip = C64::new(0.0, 0.0);
                    for i in 0..n {
                        ip += gk[i].conj() * gj[i];
                    }
                    mi += rho[j] * ip.norm_sqr();
                }
                let mut q1 = C64::new(0.0, 0.0);
                let mut q2 = C64::new(0.0, 0.0);
                let mut t = C64::new(0.0, 0.0);
                for a in 0..n {
                    for b in 0..n {
                        q1 += gj[a].conj() * th[(a, b)] * gj[b];
                        q2 += gk[a].conj() * rj[(a, b)] * gk[b];
                        t += rj[(a, b)] * th[(b, a)];
                    }
                }
                mi += rho[j] * (pk * q1.re + q2.re + pk * t.re);
            }
        }
        if ap {
            let mut sg = 0.0;
            for m in 0..mm {
                sg += stats.gamma[(m, k)];
                for j in 0..kk {
                    mi += rho[j] * stats.gamma[(m, k)] * stats.beta_terrestrial[(m, j)];
                }
            }
            num += sg;
            no += stats.radio.ap_noise_power_w * sg;
        }
        rho[k] * num * num / (mi + no)
    }

    #[test]
    fn closed_form_matches_naive_loops() {
        for seed in 0..6 {
            let stats = random_stats(4, 3, 2, 3, seed);
            let mut rng = rng_for(seed, 1);
            let rho: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..3.0)).collect();
            for (mode, sat, ap) in [
                (SystemMode::Hybrid, true, true),
                (SystemMode::SatelliteOnly, true, false),
                (SystemMode::TerrestrialOnly, false, true),
            ] {
                let rep = sinr_closed_form(&stats, &rho, mode).unwrap();
                for k in 0..3 {
                    let want = naive_sinr(&stats, &rho, k, sat, ap);
                    assert!(rel(rep.sinr[k], want) < 1e-12, "{mode:?} user {k}");
                    assert!(rel(rep.sinr[k], rep.signal[k] / (rep.interference[k] + rep.noise[k])) < 1e-15);
                }
            }
        }
    }

    #[test]
    fn single_user_satellite_interference() {
        let stats = random_stats(0, 2, 3, 1, 9);
        let pk = stats.radio.pilot_energy();
        let terms = SinrTerms::for_mode(&stats, SystemMode::Hybrid);
        let (g, r, th) = (&stats.los[0], &stats.corr[0], &stats.theta[0]);
        let want = linalg::quadratic_form(g, r) + pk * linalg::trace_of_product(r, th).re + pk * linalg::quadratic_form(g, th);
        assert!(rel(terms.interference[(0, 0)], want) < 1e-13);
    }

    #[test]
    fn structural_reductions_are_exact() {
        let base = random_stats(5, 2, 2, 3, 4);
        let rho = [0.7, 1.3, 2.1];
        let zero_sat = ChannelStatistics::from_parts(
            base.radio,
            vec![CVector::zeros(4); 3],
            vec![CMatrix::zeros(4, 4); 3],
            base.beta_terrestrial.clone(),
            base.beta_sat.clone(),
        )
        .unwrap();
        let hybrid = sinr_closed_form(&zero_sat, &rho, SystemMode::Hybrid).unwrap();
        let terr = sinr_closed_form(&zero_sat, &rho, SystemMode::TerrestrialOnly).unwrap();
        assert_eq!(hybrid.sinr, terr.sinr);
        let no_aps = ChannelStatistics::from_parts(
            base.radio,
            base.los.clone(),
            base.corr.clone(),
            DMatrix::zeros(0, 3),
            base.beta_sat.clone(),
        )
        .unwrap();
        let hybrid = sinr_closed_form(&no_aps, &rho, SystemMode::Hybrid).unwrap();
        let sat = sinr_closed_form(&no_aps, &rho, SystemMode::SatelliteOnly).unwrap();
        assert_eq!(hybrid.sinr, sat.sinr);
        let sat_full = sinr_closed_form(&base, &rho, SystemMode::SatelliteOnly).unwrap();
        assert_eq!(sat.sinr, sat_full.sinr);
    }

    #[test]
    fn sinr_monotone_in_powers() {
        let stats = random_stats(4, 2, 2, 3, 2);
        let terms = SinrTerms::for_mode(&stats, SystemMode::Hybrid);
        let rho = [1.0, 1.0, 1.0];
        let base = terms.sinr(&rho);
        for k in 0..3 {
            let mut up = rho;
            up[k] *= 1.5;
            let s = terms.sinr(&up);
            for j in 0..3 {
                if j == k {
                    assert!(s[j] > base[j]);
                } else {
                    assert!(s[j] <= base[j]);
                }
            }
        }
    }

    #[test]
    fn sinr_asymptotes() {
        let stats = random_stats(4, 2, 2, 3, 6);
        let terms = SinrTerms::for_mode(&stats, SystemMode::Hybrid);
        let rho = [0.5, 1.0, 2.0];
        for k in 0..3 {
            let s2 = terms.signal_gain[k].powi(2);
            let big: Vec<f64> = rho.iter().map(|r| r * 1e9).collect();
            let lim = rho[k] * s2 / terms.mutual_interference(&rho, k);
            assert!(rel(terms.sinr_of(&big, k), lim) < 1e-6);
            let c = 1e-9;
            let small: Vec<f64> = rho.iter().map(|r| r * c).collect();
            let lin = c * rho[k] * s2 / terms.noise[k];
            assert!(rel(terms.sinr_of(&small, k), lin) < 1e-6);
        }
    }

    #[test]
    fn rate_examples() {
        let r = radio(20, 1.0, 1.0, 1.0);
        assert_eq!(ergodic_rate(0.0, &r, 20).unwrap(), 0.0);
        assert!((ergodic_rate(1.0, &r, 20).unwrap() - 99.8).abs() < 1e-12);
        assert!((ergodic_rate(3.0, &r, 20).unwrap() - 199.6).abs() < 1e-12);
        assert!(ergodic_rate(1.0, &r, 10_000).is_err());
        let s = sinr_for_rate(150.0, &r, 20).unwrap();
        assert!((ergodic_rate(s, &r, 20).unwrap() - 150.0).abs() < 1e-10);
    }

    #[test]
    fn mrc_combiner_copies_estimates() {
        let stats = random_stats(3, 2, 2, 2, 3);
        let real = sample_realization(&stats, 1).unwrap();
        let c = make_mrc_combiner(&real);
        assert_eq!(c.sat, real.ghat_sat);
        assert_eq!(c.ap, real.ghat_terrestrial);
        assert_eq!(c.kind, CombinerKind::Mrc);
        for k in 0..2 {
            assert_eq!(c.sat[k].norm(), real.ghat_sat[k].norm());
        }
        let mut zero = real.clone();
        zero.ghat_sat.iter_mut().for_each(|v| v.fill(linalg::ZERO));
        zero.ghat_terrestrial.fill(linalg::ZERO);
        let c = make_mrc_combiner(&zero);
        assert!(c.sat.iter().all(|v| v.iter().all(|z| *z == linalg::ZERO)));
        assert_eq!(overall_channel(&c, &real, 0, 1, SystemMode::Hybrid), linalg::ZERO);
    }

    #[test]
    fn mmse_single_user_and_dense_oracle() {
        let stats = random_stats(2, 2, 2, 1, 8);
        let real = sample_realization(&stats, 5).unwrap();
        let (p, s2) = (2.0, 0.3);
        let c = make_mmse_combiner(&real, p, s2, 0.4).unwrap();
        let g = &real.ghat_sat[0];
        let want = g / C64::new(g.norm_squared() + s2 / p, 0.0);
        assert!((&c.sat[0] - want).norm() < 1e-13);

        let stats = random_stats(4, 2, 2, 4, 12);
        let real = sample_realization(&stats, 6).unwrap();
        let c = make_mmse_combiner(&real, 1.5, 0.2, 0.6).unwrap();
        let gm = CMatrix::from_columns(&real.ghat_sat);
        let gram = gm.adjoint() * &gm + CMatrix::identity(4, 4) * C64::new(4.0 * 0.2 / 1.5, 0.0);
        let oracle = &gm * gram.try_inverse().unwrap();
        for k in 0..4 {
            for i in 0..4 {
                assert!((c.sat[k][i] - oracle[(i, k)]).norm() < 1e-10);
            }
        }
        let h = &real.ghat_terrestrial;
        let gram = h.adjoint() * h + CMatrix::identity(4, 4) * C64::new(4.0 * 0.6 / 1.5, 0.0);
        let oracle = h * gram.try_inverse().unwrap();
        assert!((&c.ap - oracle).norm() < 1e-10);
        assert!(make_mmse_combiner(&real, 0.0, 0.2, 0.6).is_err());
    }

    #[test]
    fn mmse_tends_to_scaled_mrc_under_heavy_regularisation() {
        let stats = random_stats(3, 2, 2, 3, 13);
        let real = sample_realization(&stats, 2).unwrap();
        let c = make_mmse_combiner(&real, 1e-12, 1.0, 1.0).unwrap();
        for k in 0..3 {
            let u = &c.sat[k];
            let g = &real.ghat_sat[k];
            let cos = u.dotc(g).norm() / (u.norm() * g.norm());
            assert!((cos - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn overall_channel_examples() {
        let stats = random_stats(0, 2, 2, 2, 14);
        let real = sample_realization(&stats, 3).unwrap();
        let mut e1 = CVector::zeros(4);
        e1[0] = C64::new(1.0, 0.0);
        let comb = Combiner { kind: CombinerKind::Mrc, sat: vec![e1.clone(), e1], ap: DMatrix::zeros(0, 2) };
        assert_eq!(overall_channel(&comb, &real, 0, 1, SystemMode::Hybrid), real.g_sat[1][0]);

        let real = ChannelRealization {
            g_terrestrial: DMatrix::from_element(1, 1, C64::new(0.5, -1.0)),
            g_sat: vec![CVector::from_element(1, C64::new(2.0, 1.0))],
            ghat_terrestrial: DMatrix::from_element(1, 1, C64::new(0.0, 0.0)),
            ghat_sat: vec![CVector::from_element(1, C64::new(0.0, 0.0))],
        };
        let comb = Combiner {
            kind: CombinerKind::Mrc,
            sat: vec![CVector::from_element(1, C64::new(1.0, 2.0))],
            ap: DMatrix::from_element(1, 1, C64::new(3.0, -1.0)),
        };
        // (1−2j)(2+j) + (3+j)(0.5−j) = (4−3j) + (2.5−2.5j)
        let z = overall_channel(&comb, &real, 0, 0, SystemMode::Hybrid);
        assert!((z - C64::new(6.5, -5.5)).norm() < 1e-15);
        assert!((overall_channel(&comb, &real, 0, 0, SystemMode::SatelliteOnly) - C64::new(4.0, -3.0)).norm() < 1e-15);
        assert!((overall_channel(&comb, &real, 0, 0, SystemMode::TerrestrialOnly) - C64::new(2.5, -2.5)).norm() < 1e-15);
    }

    #[test]
    fn deterministic_channel_monte_carlo_is_exact() {
        let base = random_stats(0, 2, 2, 3, 15);
        let tiny = radio(3, 1.0, 1.0, 1e-6);
        let stats = ChannelStatistics::from_parts(tiny, base.los.clone(), vec![CMatrix::zeros(4, 4); 3], DMatrix::zeros(0, 3), base.beta_sat.clone())
            .unwrap();
        let rho = [1.0, 2.0, 0.5];
        let mc = sinr_monte_carlo(&stats, &rho, SystemMode::Hybrid, CombinerRule::Mrc, 1000, 1).unwrap();
        let cf = sinr_closed_form(&stats, &rho, SystemMode::Hybrid).unwrap();
        for k in 0..3 {
            assert!(rel(mc.sinr[k], cf.sinr[k]) < 1e-10, "{} vs {}", mc.sinr[k], cf.sinr[k]);
        }
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form() {
        let stats = random_stats(4, 3, 3, 3, 16);
        let rho = [1.0, 0.5, 2.0];
        let modes = SystemMode::ALL;
        let mc = sinr_monte_carlo_modes(&stats, &rho, &modes, CombinerRule::Mrc, 40_000, 3).unwrap();
        for est in &mc {
            let cf = sinr_closed_form(&stats, &rho, est.mode).unwrap();
            for k in 0..3 {
                let gap = (est.sinr[k] - cf.sinr[k]).abs();
                assert!(gap <= 4.0 * est.std_error[k] + 1e-12, "{:?} user {k}: {} vs {} ± {}", est.mode, est.sinr[k], cf.sinr[k], est.std_error[k]);
            }
        }
    }

    #[test]
    fn standard_error_shrinks_with_trials() {
        let stats = random_stats(3, 2, 2, 2, 17);
        let rho = [1.0, 1.0];
        let a = sinr_monte_carlo(&stats, &rho, SystemMode::Hybrid, CombinerRule::Mrc, 20_000, 1).unwrap();
        let b = sinr_monte_carlo(&stats, &rho, SystemMode::Hybrid, CombinerRule::Mrc, 40_000, 1).unwrap();
        for k in 0..2 {
            let ratio = b.std_error[k] / a.std_error[k];
            assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.05, "ratio {ratio}");
        }
        assert!(sinr_monte_carlo(&stats, &rho, SystemMode::Hybrid, CombinerRule::Mrc, 999, 1).is_err());
    }

    #[test]
    fn monte_carlo_is_thread_count_invariant() {
        let stats = random_stats(3, 2, 2, 2, 18);
        let rho = [1.0, 0.3];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sinr_monte_carlo(&stats, &rho, SystemMode::Hybrid, CombinerRule::Mrc, 3000, 9).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn moment_composition() {
        let stats = random_stats(3, 2, 2, 3, 19);
        for k in 0..3 {
            let o = moment_oracles(&stats, k).unwrap();
            let terms = SinrTerms::for_mode(&stats, SystemMode::Hybrid);
            // E|z_kk|² − |E z_kk|² is the own-user interference coefficient.
            assert!(rel(o.z_sq - o.mean_z * o.mean_z, terms.interference[(k, k)]) < 1e-10);
            assert!(rel(o.sat_noise + o.ap_noise, terms.noise[k]) < 1e-14);
        }
        assert!(moment_oracles(&stats, 3).is_err());
    }

    #[test]
    fn moment_scalar_oracle() {
        // κ = 0, R = cI, M = 0.
        let n = 4;
        let c = 0.6;
        let rad = radio(1, 1.5, 1.0, 0.4);
        let stats = ChannelStatistics::from_parts(
            rad,
            vec![CVector::zeros(n)],
            vec![CMatrix::identity(n, n) * C64::new(c, 0.0)],
            DMatrix::zeros(0, 1),
            vec![c],
        )
        .unwrap();
        let pk = 1.5;
        let t = c * c / (pk * c + 0.4);
        let nf = n as f64;
        let mean = pk * t * nf;
        // ‖x‖² with x ~ CN(0, pK t I): E‖x‖⁴ = N(N+1)(pK t)².
        let a_sq = nf * (nf + 1.0) * (pk * t).powi(2);
        let a_tilde = pk * t * nf * (c - pk * t);
        let o = moment_oracles(&stats, 0).unwrap();
        assert!(rel(o.mean_z, mean) < 1e-14);
        assert!(rel(o.a_sq, a_sq) < 1e-13);
        assert!(rel(o.a_tilde_sq, a_tilde) < 1e-13);
        assert!(rel(o.z_sq, a_sq + a_tilde) < 1e-13);
    }

    #[test]
    fn quartic_moment_on_scalar_case() {
        // N = 1: E|x|⁴·|n|² = 2r²|n|².
        let r = CMatrix::from_element(1, 1, C64::new(0.7, 0.0));
        let n = CMatrix::from_element(1, 1, C64::new(0.3, -0.4));
        assert!(rel(quartic_form_moment(&r, &n), 2.0 * 0.49 * 0.25) < 1e-14);
    }
}
