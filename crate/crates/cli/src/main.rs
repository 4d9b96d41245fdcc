use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use stcoop_harness::experiments::stats_dump;
use stcoop_harness::experiments::with_threads;
use stcoop_harness::{run_experiment, ExperimentConfig, ExperimentKind, HarnessError, Profile, CONFIG_SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(name = "stcoop", about = "Cooperative LEO-satellite and cell-free uplink simulator", disable_version_flag = true)]
struct Cli {
    /// Print the version and config schema version.
    #[arg(short = 'V', long = "version", global = true)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON config merged over the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Base profile: desk or paper.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write timing.csv with per-solve wall-clock times.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed form versus Monte-Carlo SINR on seeded drops.
    Validate(#[command(flatten)] Common),
    /// CDFs of the full-power sum and minimum rates per mode.
    Cdf(#[command(flatten)] Common),
    /// Full power versus max-min fairness power control.
    Maxmin(#[command(flatten)] Common),
    /// Congestion control sweep over target rates.
    Congestion(#[command(flatten)] Common),
    /// Channel statistics of one drop.
    StatsDump {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        drop: usize,
    },
}

fn load(common: &Common, kind: Option<ExperimentKind>, needs_source: bool) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path, common.profile)?,
        None if needs_source && common.profile.is_none() => {
            return Err(HarnessError::Config("this subcommand needs --config or --profile".into()))
        }
        None => ExperimentConfig::for_profile(common.profile.unwrap_or_default()),
    };
    if let Some(kind) = kind {
        cfg.experiment = kind;
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    cfg.timing |= common.timing;
    if common.threads == Some(0) {
        return Err(HarnessError::Config("--threads must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, HarnessError> {
    let Some(command) = cli.command else {
        return Err(HarnessError::Config("missing subcommand; see --help".into()));
    };
    let (common, kind) = match &command {
        Command::Validate(c) => (c, Some(ExperimentKind::Validate)),
        Command::Cdf(c) => (c, Some(ExperimentKind::Cdf)),
        Command::Maxmin(c) => (c, Some(ExperimentKind::Maxmin)),
        Command::Congestion(c) => (c, Some(ExperimentKind::Congestion)),
        Command::StatsDump { common, .. } => (common, None),
    };
    let needs_source = !matches!(command, Command::Validate(_));
    let cfg = load(common, kind, needs_source)?;
    let start = Instant::now();
    if let Command::StatsDump { drop, .. } = command {
        with_threads(common.threads, || stats_dump(&cfg, drop, &common.out))??;
        println!("stats-dump: drop {drop} written to {} in {:.2}s", common.out.display(), start.elapsed().as_secs_f64());
        return Ok(0);
    }
    let result = with_threads(common.threads, || run_experiment(&cfg))??;
    result.write_csv(&common.out, cfg.timing)?;
    println!(
        "{:?}: {}/{} drops in {:.2}s; {}",
        cfg.experiment,
        result.succeeded(),
        result.drops,
        start.elapsed().as_secs_f64(),
        result.headline()
    );
    if !result.failures.is_empty() {
        eprintln!("{} drop(s) failed; see failed_drops.csv", result.failures.len());
        return Ok(3);
    }
    if result.validation_passed == Some(false) {
        eprintln!("relative gap above tolerance {}", cfg.validate.tolerance);
        return Ok(1);
    }
    Ok(0)
}

fn parse_error_code(e: &clap::Error) -> u8 {
    if e.use_stderr() {
        2
    } else {
        0
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(parse_error_code(&e));
        }
    };
    if cli.version {
        println!("{}", version_line());
        return ExitCode::SUCCESS;
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn version_line() -> String {
    format!("stcoop {} (config schema {CONFIG_SCHEMA_VERSION})", env!("CARGO_PKG_VERSION"))
}
