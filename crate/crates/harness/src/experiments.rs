//! Batch experiments over seeded drops. Drops run in parallel and are folded
//! back in drop order, so outputs never depend on scheduling.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use stcoop_core::channel::ChannelStatistics;
use stcoop_core::geometry::linear_to_db;
use stcoop_core::power_control::{
    congestion_report, solve_fullpower_congestion, solve_maxmin, solve_soft_removal, CongestionReport,
    PowerProblem,
};
use stcoop_core::throughput::{
    report_from_terms, sinr_for_rate, sinr_monte_carlo_modes, CombinerRule, SinrTerms, SystemMode,
};

use crate::config::{CombinerChoice, ExperimentConfig, ExperimentKind};
use crate::drop::{drop_statistics, monte_carlo_seed};
use crate::error::{HarnessError, Result};
use crate::output::{cdf_document, csv_document, fmt_f64, mean, percentile, write_file};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropFailure {
    pub drop: usize,
    pub message: String,
}

/// Per-drop metrics under one labelled configuration (mode, solver, ...).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropRecord {
    pub drop: usize,
    pub label: String,
    pub sum_rate_mbps: f64,
    pub min_rate_mbps: f64,
    pub rates_mbps: Vec<f64>,
    pub powers_w: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRecord {
    pub drop: usize,
    pub solver: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub drop: usize,
    pub mode: SystemMode,
    pub user: usize,
    pub closed_form_sinr: f64,
    pub monte_carlo_sinr: f64,
    pub std_error: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CongestionDropRow {
    pub drop: usize,
    pub target_mbps: f64,
    pub method: String,
    pub satisfied: usize,
    pub users: usize,
    pub jain: f64,
    pub mean_power_w: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CongestionRow {
    pub target_mbps: f64,
    pub method: String,
    pub unsatisfied_pct: f64,
    pub satisfied_pct: f64,
    pub jain: f64,
    pub mean_power_dbw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub user_gain_dbi: f64,
    pub sat_noise_multiplier: f64,
    pub mode: SystemMode,
    pub mean_sum_rate_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: String,
    pub label: String,
    pub mean: f64,
    /// 95%-likely value, the 5th percentile.
    pub p5: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AggregateResult {
    pub kind: ExperimentKind,
    pub drops: usize,
    pub failures: Vec<DropFailure>,
    pub records: Vec<DropRecord>,
    pub validation: Vec<ValidationRow>,
    /// `Some` for the validate experiment: whether every gap met the tolerance.
    pub validation_passed: Option<bool>,
    pub congestion_drops: Vec<CongestionDropRow>,
    pub congestion: Vec<CongestionRow>,
    pub sweep: Vec<SweepRow>,
    pub timings: Vec<TimingRecord>,
}

impl AggregateResult {
    pub fn succeeded(&self) -> usize {
        self.drops - self.failures.len()
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.label) {
                out.push(r.label.clone());
            }
        }
        out
    }

    pub fn samples(&self, label: &str, metric: Metric) -> Vec<f64> {
        self.records.iter().filter(|r| r.label == label).map(|r| metric.of(r)).collect()
    }

    /// Sorted CDF samples keyed by `(metric, label)`.
    pub fn cdfs(&self) -> BTreeMap<(String, String), Vec<f64>> {
        let mut out = BTreeMap::new();
        for label in self.labels() {
            for metric in [Metric::SumRate, Metric::MinRate] {
                let mut s = self.samples(&label, metric);
                s.sort_by(f64::total_cmp);
                out.insert((metric.name().to_string(), label.clone()), s);
            }
        }
        out
    }

    pub fn summaries(&self) -> Vec<MetricSummary> {
        let mut out = Vec::new();
        for label in self.labels() {
            for metric in [Metric::SumRate, Metric::MinRate] {
                let s = self.samples(&label, metric);
                out.push(MetricSummary { metric: metric.name().into(), label: label.clone(), mean: mean(&s), p5: percentile(&s, 0.05) });
            }
        }
        out
    }

    /// One-line description of the main outcome.
    pub fn headline(&self) -> String {
        match self.kind {
            ExperimentKind::Validate => {
                let worst = self.validation.iter().map(|r| r.relative_gap).fold(0.0, f64::max);
                format!("max relative gap {:.3}%", 100.0 * worst)
            }
            ExperimentKind::Congestion => {
                let parts: Vec<String> = self
                    .congestion
                    .iter()
                    .filter(|r| Some(r.target_mbps) == self.congestion.last().map(|l| l.target_mbps))
                    .map(|r| format!("{} {:.1}% unsatisfied", r.method, r.unsatisfied_pct))
                    .collect();
                parts.join(", ")
            }
            _ => {
                let parts: Vec<String> = self
                    .summaries()
                    .iter()
                    .filter(|s| s.metric == Metric::MinRate.name() || self.kind == ExperimentKind::Cdf)
                    .map(|s| format!("{} {} mean {:.3} Mbps", s.label, s.metric, s.mean))
                    .collect();
                parts.join(", ")
            }
        }
    }

    pub fn write_csv(&self, dir: &Path, timing: bool) -> Result<()> {
        if self.kind != ExperimentKind::Validate {
            for ((metric, label), samples) in self.cdfs() {
                if !samples.is_empty() {
                    write_file(dir, &format!("cdf_{metric}_{label}.csv"), &cdf_document(&samples))?;
                }
            }
            let rows = self.summaries().into_iter().map(|s| format!("{},{},{},{}", s.metric, s.label, fmt_f64(s.mean), fmt_f64(s.p5)));
            write_file(dir, "summary.csv", &csv_document("metric,label,mean_mbps,p5_mbps", rows))?;
        }
        if !self.validation.is_empty() {
            let rows = self.validation.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{},{}",
                    r.drop,
                    r.mode.name(),
                    r.user,
                    fmt_f64(r.closed_form_sinr),
                    fmt_f64(r.monte_carlo_sinr),
                    fmt_f64(r.std_error),
                    fmt_f64(r.relative_gap)
                )
            });
            write_file(
                dir,
                "validation.csv",
                &csv_document("drop,mode,user,closed_form_sinr,monte_carlo_sinr,std_error,relative_gap", rows),
            )?;
        }
        if self.kind == ExperimentKind::Maxmin {
            let rows = self.records.iter().map(|r| {
                format!("{},{},{},{},{}", r.drop, r.label, fmt_f64(r.min_rate_mbps), fmt_f64(r.sum_rate_mbps), r.converged)
            });
            write_file(dir, "maxmin.csv", &csv_document("drop,label,min_rate_mbps,sum_rate_mbps,converged", rows))?;
        }
        if !self.congestion.is_empty() {
            let rows = self.congestion.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    fmt_f64(r.target_mbps),
                    r.method,
                    fmt_f64(r.unsatisfied_pct),
                    fmt_f64(r.satisfied_pct),
                    fmt_f64(r.jain),
                    fmt_f64(r.mean_power_dbw)
                )
            });
            write_file(
                dir,
                "congestion.csv",
                &csv_document("target_mbps,method,unsatisfied_pct,satisfied_pct,jain,mean_power_dbw", rows),
            )?;
        }
        if !self.sweep.is_empty() {
            let rows = self.sweep.iter().map(|r| {
                format!(
                    "{},{},{},{}",
                    fmt_f64(r.user_gain_dbi),
                    fmt_f64(r.sat_noise_multiplier),
                    r.mode.name(),
                    fmt_f64(r.mean_sum_rate_mbps)
                )
            });
            write_file(dir, "sweep.csv", &csv_document("user_gain_dbi,sat_noise_multiplier,mode,mean_sum_rate_mbps", rows))?;
        }
        if !self.failures.is_empty() {
            let rows = self.failures.iter().map(|f| format!("{},\"{}\"", f.drop, f.message.replace('"', "'")));
            write_file(dir, "failed_drops.csv", &csv_document("drop,message", rows))?;
        }
        if timing {
            let rows = self.timings.iter().map(|t| format!("{},{},{}", t.drop, t.solver, fmt_f64(t.seconds)));
            write_file(dir, "timing.csv", &csv_document("drop,solver,seconds", rows))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    SumRate,
    MinRate,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SumRate => "sum_rate",
            Metric::MinRate => "min_rate",
        }
    }

    fn of(self, r: &DropRecord) -> f64 {
        match self {
            Metric::SumRate => r.sum_rate_mbps,
            Metric::MinRate => r.min_rate_mbps,
        }
    }
}

/// Everything one drop contributes to an aggregate.
#[derive(Default)]
struct DropOutput {
    records: Vec<DropRecord>,
    validation: Vec<ValidationRow>,
    congestion: Vec<CongestionDropRow>,
    timings: Vec<TimingRecord>,
}

fn run_drops<F>(config: &ExperimentConfig, kind: ExperimentKind, drops: usize, per_drop: F) -> AggregateResult
where
    F: Fn(usize, &ChannelStatistics) -> Result<DropOutput> + Sync,
{
    let outputs: Vec<std::result::Result<DropOutput, DropFailure>> = (0..drops)
        .into_par_iter()
        .map(|d| {
            drop_statistics(config, d)
                .and_then(|(_, stats)| per_drop(d, &stats))
                .map_err(|e| DropFailure { drop: d, message: e.to_string() })
        })
        .collect();
    let mut result = AggregateResult { kind, drops, ..Default::default() };
    for out in outputs {
        match out {
            Ok(o) => {
                result.records.extend(o.records);
                result.validation.extend(o.validation);
                result.congestion_drops.extend(o.congestion);
                result.timings.extend(o.timings);
            }
            Err(f) => {
                log::warn!("drop {} failed: {}", f.drop, f.message);
                result.failures.push(f);
            }
        }
    }
    result
}

fn record(drop: usize, label: String, rates: Vec<f64>, powers: Vec<f64>, converged: bool) -> DropRecord {
    DropRecord {
        drop,
        label,
        sum_rate_mbps: rates.iter().sum(),
        min_rate_mbps: rates.iter().copied().fold(f64::INFINITY, f64::min),
        rates_mbps: rates,
        powers_w: powers,
        converged,
    }
}

fn full_power(config: &ExperimentConfig) -> Vec<f64> {
    vec![config.max_power_w(); config.users]
}

fn combiner_rule(config: &ExperimentConfig, stats: &ChannelStatistics) -> CombinerRule {
    match config.cdf.combiner {
        CombinerChoice::Mrc => CombinerRule::Mrc,
        // Both links are regularised with σ_s², as in the printed P-MMSE form.
        CombinerChoice::Mmse => CombinerRule::Mmse {
            p_max: config.max_power_w(),
            sat_noise_w: stats.radio.sat_noise_power_w,
            ap_noise_w: stats.radio.sat_noise_power_w,
        },
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregateResult> {
    match config.experiment {
        ExperimentKind::Validate => run_validate_experiment(config),
        ExperimentKind::Cdf => run_cdf_experiment(config),
        ExperimentKind::Maxmin => run_maxmin_experiment(config),
        ExperimentKind::Congestion => run_congestion_experiment(config),
    }
}

/// Closed form versus Monte-Carlo MRC SINR at full power for all modes.
pub fn run_validate_experiment(config: &ExperimentConfig) -> Result<AggregateResult> {
    config.validate()?;
    let rho = full_power(config);
    let trials = config.validate.trials;
    let mut result = run_drops(config, ExperimentKind::Validate, config.validate.drops, |d, stats| {
        let mc = sinr_monte_carlo_modes(stats, &rho, &SystemMode::ALL, CombinerRule::Mrc, trials, monte_carlo_seed(config, d))?;
        let mut out = DropOutput::default();
        for (mode, est) in SystemMode::ALL.into_iter().zip(mc) {
            let terms = SinrTerms::for_mode(stats, mode);
            let closed = terms.sinr(&rho);
            for u in 0..closed.len() {
                out.validation.push(ValidationRow {
                    drop: d,
                    mode,
                    user: u,
                    closed_form_sinr: closed[u],
                    monte_carlo_sinr: est.sinr[u],
                    std_error: est.std_error[u],
                    relative_gap: (est.sinr[u] - closed[u]).abs() / closed[u],
                });
            }
        }
        Ok(out)
    });
    let tol = config.validate.tolerance;
    result.validation_passed = Some(result.failures.is_empty() && result.validation.iter().all(|r| r.relative_gap <= tol));
    Ok(result)
}

fn closed_form_records(d: usize, stats: &ChannelStatistics, rho: &[f64]) -> Result<Vec<DropRecord>> {
    SystemMode::ALL
        .into_iter()
        .map(|mode| {
            let terms = SinrTerms::for_mode(stats, mode);
            let report = report_from_terms(&terms, rho, mode, &stats.radio)?;
            Ok(record(d, mode.name().to_string(), report.rate_mbps, rho.to_vec(), true))
        })
        .collect()
}

/// Full-power sum and minimum rates of every mode; optional Monte-Carlo
/// estimates on the leading drops and a gain / noise-floor sweep.
pub fn run_cdf_experiment(config: &ExperimentConfig) -> Result<AggregateResult> {
    config.validate()?;
    let rho = full_power(config);
    let mut result = run_drops(config, ExperimentKind::Cdf, config.drops, |d, stats| {
        let mut out = DropOutput::default();
        let start = Instant::now();
        out.records = closed_form_records(d, stats, &rho)?;
        out.timings.push(TimingRecord { drop: d, solver: "closed_form".into(), seconds: start.elapsed().as_secs_f64() });
        if d < config.cdf.monte_carlo_drops {
            let rule = combiner_rule(config, stats);
            let start = Instant::now();
            let mc = sinr_monte_carlo_modes(stats, &rho, &SystemMode::ALL, rule, config.cdf.trials, monte_carlo_seed(config, d))?;
            out.timings.push(TimingRecord { drop: d, solver: "monte_carlo".into(), seconds: start.elapsed().as_secs_f64() });
            for (mode, est) in SystemMode::ALL.into_iter().zip(mc) {
                let k = est.sinr.len();
                let rates = est
                    .sinr
                    .iter()
                    .map(|s| stcoop_core::throughput::ergodic_rate(*s, &stats.radio, k))
                    .collect::<stcoop_core::Result<Vec<f64>>>()?;
                out.records.push(record(d, format!("{}_monte_carlo", mode.name()), rates, rho.clone(), true));
            }
        }
        Ok(out)
    });
    result.sweep = run_sweep(config)?;
    Ok(result)
}

fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let sweep = &config.cdf.sweep;
    if sweep.user_gain_dbi.is_empty() && sweep.sat_noise_multiplier.is_empty() {
        return Ok(Vec::new());
    }
    let gains = if sweep.user_gain_dbi.is_empty() { vec![config.gains.user_gain_dbi] } else { sweep.user_gain_dbi.clone() };
    let mults = if sweep.sat_noise_multiplier.is_empty() { vec![config.sat_noise_multiplier] } else { sweep.sat_noise_multiplier.clone() };
    let mut rows = Vec::new();
    for &mult in &mults {
        for &gain in &gains {
            let mut cfg = config.clone();
            cfg.gains.user_gain_dbi = gain;
            cfg.sat_noise_multiplier = mult;
            cfg.cdf.sweep.user_gain_dbi.clear();
            cfg.cdf.sweep.sat_noise_multiplier.clear();
            let rho = full_power(&cfg);
            let res = run_drops(&cfg, ExperimentKind::Cdf, cfg.drops, |d, stats| {
                Ok(DropOutput { records: closed_form_records(d, stats, &rho)?, ..Default::default() })
            });
            for mode in SystemMode::ALL {
                rows.push(SweepRow {
                    user_gain_dbi: gain,
                    sat_noise_multiplier: mult,
                    mode,
                    mean_sum_rate_mbps: mean(&res.samples(mode.name(), Metric::SumRate)),
                });
            }
        }
    }
    Ok(rows)
}

/// Full power versus max-min fairness per drop for each configured mode.
pub fn run_maxmin_experiment(config: &ExperimentConfig) -> Result<AggregateResult> {
    config.validate()?;
    let rho_full = full_power(config);
    Ok(run_drops(config, ExperimentKind::Maxmin, config.drops, |d, stats| {
        let mut out = DropOutput::default();
        for &mode in &config.maxmin.modes {
            let problem = PowerProblem::new(stats, mode, &rho_full)?;
            out.records.push(record(d, format!("full_power_{}", mode.name()), problem.rates(&rho_full), rho_full.clone(), true));
            let start = Instant::now();
            let res = solve_maxmin(&problem, &config.solver)?;
            out.timings.push(TimingRecord { drop: d, solver: format!("maxmin_{}", mode.name()), seconds: start.elapsed().as_secs_f64() });
            let rho = res.allocation.rho;
            out.records.push(record(d, format!("maxmin_{}", mode.name()), problem.rates(&rho), rho, res.allocation.converged));
        }
        Ok(out)
    }))
}

pub const CONGESTION_METHODS: [&str; 3] = ["full_power", "pin_unsatisfied", "soft_removal"];

fn congestion_row(d: usize, target: f64, method: &str, report: &CongestionReport, rho: &[f64], converged: bool) -> CongestionDropRow {
    CongestionDropRow {
        drop: d,
        target_mbps: target,
        method: method.to_string(),
        satisfied: report.satisfied.len(),
        users: rho.len(),
        jain: report.jain,
        mean_power_w: mean(rho),
        converged,
    }
}

/// Congestion sweep over the target rates: full power, unsatisfied users
/// pinned at full power, and soft removal.
pub fn run_congestion_experiment(config: &ExperimentConfig) -> Result<AggregateResult> {
    config.validate()?;
    let radio = config.radio()?;
    let targets_xi: Vec<f64> = config
        .congestion
        .targets_mbps
        .iter()
        .map(|t| sinr_for_rate(*t, &radio, config.users))
        .collect::<stcoop_core::Result<_>>()?;
    let rho_full = full_power(config);
    let mode = config.congestion.mode;
    let mut result = run_drops(config, ExperimentKind::Congestion, config.drops, |d, stats| {
        let problem = PowerProblem::new(stats, mode, &rho_full)?;
        let mut out = DropOutput::default();
        for (&target, &xi) in config.congestion.targets_mbps.iter().zip(&targets_xi) {
            let xis = vec![xi; config.users];
            let full = congestion_report(&problem, &rho_full, &xis);
            out.congestion.push(congestion_row(d, target, CONGESTION_METHODS[0], &full, &rho_full, true));
            let start = Instant::now();
            let (a, ra) = solve_fullpower_congestion(&problem, &xis, &config.solver)?;
            out.timings.push(TimingRecord { drop: d, solver: CONGESTION_METHODS[1].into(), seconds: start.elapsed().as_secs_f64() });
            out.congestion.push(congestion_row(d, target, CONGESTION_METHODS[1], &ra, &a.rho, a.converged));
            let start = Instant::now();
            let (b, rb) = solve_soft_removal(&problem, &xis, &config.solver)?;
            out.timings.push(TimingRecord { drop: d, solver: CONGESTION_METHODS[2].into(), seconds: start.elapsed().as_secs_f64() });
            out.congestion.push(congestion_row(d, target, CONGESTION_METHODS[2], &rb, &b.rho, b.converged));
        }
        Ok(out)
    });
    let mut rows = Vec::new();
    for &target in &config.congestion.targets_mbps {
        for method in CONGESTION_METHODS {
            let sel: Vec<&CongestionDropRow> =
                result.congestion_drops.iter().filter(|r| r.target_mbps == target && r.method == method).collect();
            if sel.is_empty() {
                continue;
            }
            let users: usize = sel.iter().map(|r| r.users).sum();
            let satisfied: usize = sel.iter().map(|r| r.satisfied).sum();
            let satisfied_pct = 100.0 * satisfied as f64 / users as f64;
            let power = sel.iter().map(|r| r.mean_power_w).sum::<f64>() / sel.len() as f64;
            rows.push(CongestionRow {
                target_mbps: target,
                method: method.to_string(),
                unsatisfied_pct: 100.0 - satisfied_pct,
                satisfied_pct,
                jain: sel.iter().map(|r| r.jain).sum::<f64>() / sel.len() as f64,
                mean_power_dbw: linear_to_db(power),
            });
        }
    }
    result.congestion = rows;
    Ok(result)
}

/// Writes the statistics of drop `index`: per-user satellite quantities and
/// per-link terrestrial gains.
pub fn stats_dump(config: &ExperimentConfig, index: usize, dir: &Path) -> Result<()> {
    config.validate()?;
    let (scenario, stats) = drop_statistics(config, index)?;
    let k = stats.num_users();
    let users = (0..k).map(|u| {
        format!(
            "{},{},{},{},{},{},{}",
            u,
            fmt_f64(linear_to_db(stats.beta_sat[u])),
            fmt_f64(scenario.sat_elevation[u]),
            fmt_f64(scenario.sat_azimuth[u]),
            fmt_f64(stats.theta[u].trace().re),
            fmt_f64(stats.los[u].norm_squared()),
            fmt_f64(stats.condition_numbers[u])
        )
    });
    write_file(
        dir,
        "stats_users.csv",
        &csv_document("user,beta_sat_db,elevation_rad,azimuth_rad,trace_theta,los_norm_sq,condition_number", users),
    )?;
    let links = (0..stats.num_aps()).flat_map(|m| {
        let stats = &stats;
        (0..k).map(move |u| {
            format!(
                "{},{},{},{}",
                m,
                u,
                fmt_f64(linear_to_db(stats.beta_terrestrial[(m, u)])),
                fmt_f64(stats.gamma[(m, u)])
            )
        })
    });
    write_file(dir, "stats_links.csv", &csv_document("ap,user,beta_db,gamma", links))
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Config(format!("cannot build a pool of {n} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
