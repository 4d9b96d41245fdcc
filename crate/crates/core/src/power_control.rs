//! Long-term uplink power control on the closed-form SINR model: max-min
//! fairness by bisection over a standard-interference fixed point, and total
//! power minimisation under per-user targets with two congestion policies.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelStatistics;
use crate::error::{ensure, Error, Result};
use crate::geometry::RadioConstants;
use crate::linalg::kahan_sum;
use crate::throughput::{ergodic_rate, SinrTerms, SystemMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// Outer bisection tolerance on the common SINR.
    pub delta: f64,
    /// Stopping threshold on the normalised total-power change.
    pub epsilon: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Start each inner loop from the last accepted allocation instead of P_max.
    pub warm_start: bool,
    pub soft_removal_rate: SoftRemovalRate,
}

/// How the soft-removal rate μ_k of an unsatisfied user is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftRemovalRate {
    /// `μ_k = max(1, ξ_k/SINR_k(ρ(n−1)))`.
    #[default]
    Adaptive,
    /// `μ_k = 1`, which keeps the update continuous at `Ĩ_k = P_max,k`.
    Unit,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { delta: 0.01, epsilon: 1e-4, max_inner: 500, max_outer: 64, warm_start: false, soft_removal_rate: SoftRemovalRate::Adaptive }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        ensure(self.delta > 0.0 && self.epsilon > 0.0, || "delta and epsilon must be positive".into())?;
        ensure(self.max_inner >= 1 && self.max_outer >= 1, || "iteration limits must be positive".into())
    }
}

/// Closed-form SINR model, radio constants and power budgets of one drop.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProblem {
    pub terms: SinrTerms,
    pub radio: RadioConstants,
    pub p_max: Vec<f64>,
}

impl PowerProblem {
    pub fn new(stats: &ChannelStatistics, mode: SystemMode, p_max: &[f64]) -> Result<Self> {
        Self::from_terms(SinrTerms::for_mode(stats, mode), stats.radio, p_max.to_vec())
    }

    pub fn from_terms(terms: SinrTerms, radio: RadioConstants, p_max: Vec<f64>) -> Result<Self> {
        let k = terms.num_users();
        if p_max.len() != k {
            return Err(Error::Dimension(format!("{} power budgets for {k} users", p_max.len())));
        }
        ensure(p_max.iter().all(|p| *p > 0.0 && p.is_finite()), || "power budgets must be positive".into())?;
        ensure(terms.signal_gain.iter().all(|s| *s > 0.0), || "every user needs a positive signal gain".into())?;
        ensure(terms.noise.iter().all(|n| *n > 0.0), || "every user needs a positive noise term".into())?;
        Ok(Self { terms, radio, p_max })
    }

    pub fn num_users(&self) -> usize {
        self.p_max.len()
    }

    pub fn sinr(&self, rho: &[f64]) -> Vec<f64> {
        self.terms.sinr(rho)
    }

    pub fn rates(&self, rho: &[f64]) -> Vec<f64> {
        let k = self.num_users();
        self.sinr(rho)
            .iter()
            .map(|s| ergodic_rate(*s, &self.radio, k).expect("validated radio constants"))
            .collect()
    }

    pub fn rate_for_sinr(&self, sinr: f64) -> f64 {
        ergodic_rate(sinr, &self.radio, self.num_users()).expect("validated radio constants")
    }
}

/// `I_k(ρ) = ξ·(MI_k(ρ) + NO_k)/S_k²`, the power user k needs to reach SINR ξ.
pub fn interference_function(terms: &SinrTerms, rho: &[f64], k: usize, xi: f64) -> f64 {
    let s = terms.signal_gain[k];
    xi * (terms.mutual_interference(rho, k) + terms.noise[k]) / (s * s)
}

/// Interference-free bound `min_k P_max,k·S_k²/NO_k` on any common SINR.
pub fn sinr_upper_bound(terms: &SinrTerms, p_max: &[f64]) -> f64 {
    (0..terms.num_users())
        .map(|k| p_max[k] * terms.signal_gain[k].powi(2) / terms.noise[k])
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub total_power: f64,
    pub min_sinr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub rho: Vec<f64>,
    pub converged: bool,
    pub iterations_outer: usize,
    pub iterations_inner: usize,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessResult {
    pub allocation: PowerAllocation,
    /// Smallest SINR over users at the returned allocation.
    pub xi_star: f64,
    pub bracket: (f64, f64),
    pub xi_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionReport {
    pub satisfied: Vec<usize>,
    pub unsatisfied: Vec<usize>,
    pub jain: f64,
    pub rate_mbps: Vec<f64>,
    pub target_mbps: Vec<f64>,
}

impl CongestionReport {
    pub fn satisfied_fraction(&self) -> f64 {
        self.satisfied.len() as f64 / self.rate_mbps.len() as f64
    }
}

fn total(rho: &[f64]) -> f64 {
    kahan_sum(rho.iter().copied())
}

fn record(problem: &PowerProblem, rho: &[f64]) -> IterationRecord {
    let min_sinr = problem.sinr(rho).into_iter().fold(f64::INFINITY, f64::min);
    IterationRecord { total_power: total(rho), min_sinr }
}

/// Jacobi iteration `ρ ← map(ρ)` from `start` until the normalised total
/// power change drops to `epsilon` and no single power moved by more than
/// `epsilon·P_max,k`. Returns the iterate, the iteration count and whether the
/// threshold was reached.
fn fixed_point<F>(
    start: Vec<f64>,
    scale: &[f64],
    epsilon: f64,
    max_iters: usize,
    mut map: F,
    mut on_step: impl FnMut(&[f64]),
) -> (Vec<f64>, usize, bool)
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut rho = start;
    let mut prev_total = total(&rho);
    for it in 1..=max_iters {
        let next = map(&rho);
        let next_total = total(&next);
        on_step(&next);
        let ratio = if prev_total > 0.0 {
            (next_total - prev_total).abs() / prev_total
        } else if next_total == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let step = (0..rho.len()).map(|k| (next[k] - rho[k]).abs() / scale[k]).fold(0.0, f64::max);
        rho = next;
        prev_total = next_total;
        if ratio <= epsilon && step <= epsilon {
            return (rho, it, true);
        }
    }
    (rho, max_iters, false)
}

/// One inner loop of the max-min solver at common target `xi`:
/// `ρ_k ← min(I_k(ρ), P_max,k)`.
pub fn maxmin_inner_loop(problem: &PowerProblem, xi: f64, start: Vec<f64>, settings: &SolverSettings) -> (Vec<f64>, usize, bool) {
    let terms = &problem.terms;
    let p_max = &problem.p_max;
    fixed_point(
        start,
        p_max,
        settings.epsilon,
        settings.max_inner,
        |rho| (0..rho.len()).map(|k| interference_function(terms, rho, k, xi).min(p_max[k])).collect(),
        |_| {},
    )
}

/// Common target `xi` is met at `rho` when every rate reaches `R_o(xi)`.
pub fn meets_common_target(problem: &PowerProblem, rho: &[f64], xi: f64) -> bool {
    let target = problem.rate_for_sinr(xi);
    problem.rates(rho).iter().all(|r| *r >= target * (1.0 - 1e-9))
}

/// Max-min fairness: bisection on the common SINR over `[0, ξ_up]` with a
/// standard-interference inner loop per candidate.
pub fn solve_maxmin(problem: &PowerProblem, settings: &SolverSettings) -> Result<FairnessResult> {
    settings.validate()?;
    let xi_upper = sinr_upper_bound(&problem.terms, &problem.p_max);
    let mut lo = 0.0;
    let mut hi = xi_upper;
    let mut accepted = problem.p_max.clone();
    let mut trace = Vec::new();
    let mut outer = 0;
    let mut inner_total = 0;
    let mut inner_ok = true;
    while hi - lo > settings.delta {
        if outer == settings.max_outer {
            break;
        }
        outer += 1;
        let xi = 0.5 * (lo + hi);
        let start = if settings.warm_start { accepted.clone() } else { problem.p_max.clone() };
        let (rho, iters, converged) = maxmin_inner_loop(problem, xi, start, settings);
        inner_total += iters;
        inner_ok &= converged;
        if meets_common_target(problem, &rho, xi) {
            lo = xi;
            accepted = rho;
        } else {
            hi = xi;
        }
        trace.push(record(problem, &accepted));
    }
    let converged = hi - lo <= settings.delta;
    if !converged {
        log::warn!("max-min bisection stopped after {outer} rounds with bracket [{lo}, {hi}]");
    }
    if !inner_ok {
        log::debug!("some max-min inner loops hit the iteration limit");
    }
    let xi_star = problem.sinr(&accepted).into_iter().fold(f64::INFINITY, f64::min);
    Ok(FairnessResult {
        allocation: PowerAllocation {
            rho: accepted,
            converged,
            iterations_outer: outer,
            iterations_inner: inner_total,
            trace,
        },
        xi_star,
        bracket: (lo, hi),
        xi_upper,
    })
}

fn check_targets(problem: &PowerProblem, targets_xi: &[f64]) -> Result<()> {
    if targets_xi.len() != problem.num_users() {
        return Err(Error::Dimension(format!("{} targets for {} users", targets_xi.len(), problem.num_users())));
    }
    ensure(targets_xi.iter().all(|x| *x > 0.0 && x.is_finite()), || "SINR targets must be positive".into())
}

fn run_congestion<F>(problem: &PowerProblem, targets_xi: &[f64], settings: &SolverSettings, update: F) -> Result<(PowerAllocation, CongestionReport)>
where
    F: Fn(&[f64], usize) -> f64,
{
    settings.validate()?;
    check_targets(problem, targets_xi)?;
    let mut trace = Vec::new();
    let (rho, iters, converged) = fixed_point(
        problem.p_max.clone(),
        &problem.p_max,
        settings.epsilon,
        settings.max_inner,
        |rho| (0..rho.len()).map(|k| update(rho, k)).collect(),
        |rho| trace.push(record(problem, rho)),
    );
    if !converged {
        log::debug!("congestion solver stopped after {iters} iterations without reaching epsilon");
    }
    let report = congestion_report(problem, &rho, targets_xi);
    Ok((
        PowerAllocation { rho, converged, iterations_outer: 1, iterations_inner: iters, trace },
        report,
    ))
}

/// Rates, target rates and satisfaction at allocation `rho`.
pub fn congestion_report(problem: &PowerProblem, rho: &[f64], targets_xi: &[f64]) -> CongestionReport {
    let rates = problem.rates(rho);
    let targets: Vec<f64> = targets_xi.iter().map(|x| problem.rate_for_sinr(*x)).collect();
    classify_and_score(&rates, &targets, 1e-6)
}

/// Algorithm with unsatisfied users pinned at full power:
/// `ρ_k ← min(Ĩ_k(ρ), P_max,k)`.
pub fn fullpower_update(problem: &PowerProblem, targets_xi: &[f64], rho: &[f64], k: usize) -> f64 {
    interference_function(&problem.terms, rho, k, targets_xi[k]).min(problem.p_max[k])
}

pub fn solve_fullpower_congestion(problem: &PowerProblem, targets_xi: &[f64], settings: &SolverSettings) -> Result<(PowerAllocation, CongestionReport)> {
    run_congestion(problem, targets_xi, settings, |rho, k| fullpower_update(problem, targets_xi, rho, k))
}

/// Soft-removal map: `Ĩ_k` when it fits the budget, otherwise `P²/(μ_k Ĩ_k)`.
pub fn soft_removal_update(problem: &PowerProblem, targets_xi: &[f64], rate: SoftRemovalRate, rho: &[f64], k: usize) -> f64 {
    let needed = interference_function(&problem.terms, rho, k, targets_xi[k]);
    let p = problem.p_max[k];
    if needed <= p {
        return needed;
    }
    if rate == SoftRemovalRate::Unit {
        return soft_removal_value(needed, p, 1.0);
    }
    let sinr = problem.terms.sinr_of(rho, k);
    if sinr <= 0.0 {
        return 0.0;
    }
    soft_removal_value(needed, p, (targets_xi[k] / sinr).max(1.0))
}

/// Branch value of the soft-removal map for a given rate `mu ≥ 1`.
pub fn soft_removal_value(needed: f64, p_max: f64, mu: f64) -> f64 {
    if needed <= p_max {
        needed
    } else {
        p_max * p_max / (mu * needed)
    }
}

pub fn solve_soft_removal(problem: &PowerProblem, targets_xi: &[f64], settings: &SolverSettings) -> Result<(PowerAllocation, CongestionReport)> {
    run_congestion(problem, targets_xi, settings, |rho, k| soft_removal_update(problem, targets_xi, settings.soft_removal_rate, rho, k))
}

/// `max_k |ρ_k − f_k(ρ)| / P_max,k` for a per-user update map `f`.
pub fn fixed_point_residual(problem: &PowerProblem, rho: &[f64], update: impl Fn(&[f64], usize) -> f64) -> f64 {
    (0..rho.len())
        .map(|k| (rho[k] - update(rho, k)).abs() / problem.p_max[k])
        .fold(0.0, f64::max)
}

/// Satisfied / unsatisfied split and Jain's index of the rate-to-target
/// ratios. A user is satisfied when `rate ≥ target·(1 − tol)`.
pub fn classify_and_score(rates: &[f64], targets: &[f64], tol: f64) -> CongestionReport {
    let k_users = rates.len();
    let mut satisfied = Vec::new();
    let mut unsatisfied = Vec::new();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..k_users {
        if rates[k] >= targets[k] * (1.0 - tol) {
            satisfied.push(k);
        } else {
            let r = rates[k] / targets[k];
            unsatisfied.push(k);
            sum += r;
            sum_sq += r * r;
        }
    }
    let ks = satisfied.len() as f64;
    let kf = k_users as f64;
    let den = kf * ks + kf * sum_sq;
    let jain = if den > 0.0 { (ks + sum).powi(2) / den } else { 1.0 / kf };
    CongestionReport { satisfied, unsatisfied, jain, rate_mbps: rates.to_vec(), target_mbps: targets.to_vec() }
}
