//! Experiment configuration. A JSON document is merged key by key over one of
//! two built-in profiles, so a config only lists what it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use stcoop_core::geometry::{self, CorrelationModel, LinkGains, RadioConstants, EARTH_RADIUS_M};
use stcoop_core::power_control::{SoftRemovalRate, SolverSettings};
use stcoop_core::throughput::SystemMode;

use crate::error::{HarnessError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(HarnessError::Config(format!("unknown profile '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Validate,
    Cdf,
    Maxmin,
    Congestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerChoice {
    #[default]
    Mrc,
    Mmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_h: usize,
    pub n_v: usize,
    /// Element spacing in wavelengths.
    pub spacing_wavelengths: f64,
    pub aperture_radius_wavelengths: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub drops: usize,
    pub trials: usize,
    /// Largest accepted relative gap between Monte-Carlo and closed form.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub user_gain_dbi: Vec<f64>,
    pub sat_noise_multiplier: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdfConfig {
    /// Leading drops that also get a Monte-Carlo estimate.
    pub monte_carlo_drops: usize,
    pub trials: usize,
    pub combiner: CombinerChoice,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxminConfig {
    pub modes: Vec<SystemMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CongestionConfig {
    pub mode: SystemMode,
    pub targets_mbps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub profile: Profile,
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub drops: usize,
    pub users: usize,
    pub aps: usize,
    pub array: ArrayConfig,
    pub area_km2: f64,
    pub ap_height_m: f64,
    pub user_height_m: f64,
    pub satellite_position_km: [f64; 3],
    pub beam_center_km: [f64; 3],
    pub earth_radius_km: f64,
    pub carrier_frequency_ghz: f64,
    pub bandwidth_mhz: f64,
    pub coherence_block_len: usize,
    pub pilot_power_dbw: f64,
    pub max_power_dbw: f64,
    pub ap_noise_figure_db: f64,
    pub sat_noise_figure_db: f64,
    /// Scales σ_s² on top of the noise figure.
    pub sat_noise_multiplier: f64,
    pub gains: LinkGains,
    /// Rician factor, linear.
    pub kappa: f64,
    pub correlation: CorrelationModel,
    pub solver: SolverSettings,
    pub validate: ValidateConfig,
    pub cdf: CdfConfig,
    pub maxmin: MaxminConfig,
    pub congestion: CongestionConfig,
    /// Write `timing.csv`; wall-clock values make it the only non-reproducible output.
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            profile: Profile::Desk,
            experiment: ExperimentKind::Validate,
            master_seed: 1,
            drops: 100,
            users: 4,
            aps: 8,
            array: ArrayConfig { n_h: 4, n_v: 4, spacing_wavelengths: 0.5, aperture_radius_wavelengths: 10.0 },
            area_km2: 20.0,
            ap_height_m: 10.0,
            user_height_m: 1.5,
            satellite_position_km: [300.0, 300.0, 400.0],
            beam_center_km: [0.0, 0.0, 0.0],
            earth_radius_km: EARTH_RADIUS_M / 1e3,
            carrier_frequency_ghz: 20.0,
            bandwidth_mhz: 100.0,
            coherence_block_len: 10_000,
            pilot_power_dbw: 20.0,
            max_power_dbw: 20.0,
            ap_noise_figure_db: 7.0,
            sat_noise_figure_db: 1.2,
            sat_noise_multiplier: 1.0,
            gains: LinkGains {
                ap_gain_dbi: 10.0,
                user_gain_dbi: 10.0,
                sat_gain_dbi: 26.9,
                shadow_std_terrestrial_db: 8.0,
                shadow_std_sat_db: 1.0,
            },
            kappa: 10.0,
            correlation: CorrelationModel::default(),
            solver: SolverSettings::default(),
            validate: ValidateConfig { drops: 20, trials: 10_000, tolerance: 0.03 },
            cdf: CdfConfig {
                monte_carlo_drops: 0,
                trials: 10_000,
                combiner: CombinerChoice::Mrc,
                sweep: SweepConfig { user_gain_dbi: Vec::new(), sat_noise_multiplier: Vec::new() },
            },
            maxmin: MaxminConfig { modes: vec![SystemMode::Hybrid] },
            congestion: CongestionConfig { mode: SystemMode::Hybrid, targets_mbps: vec![60.0, 90.0, 120.0, 150.0, 200.0] },
            timing: false,
        }
    }

    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.profile = Profile::Paper;
        cfg.drops = 1000;
        cfg.users = 20;
        cfg.aps = 40;
        cfg.array.n_h = 10;
        cfg.array.n_v = 10;
        cfg.congestion.targets_mbps = vec![35.0, 40.0, 45.0, 50.0];
        cfg
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Merges `overrides` over the profile it names, or over `profile` when
    /// given, or over the desk profile.
    pub fn from_json_value(overrides: Value, profile: Option<Profile>) -> Result<Self> {
        if !overrides.is_object() {
            return Err(HarnessError::Config("configuration must be a JSON object".into()));
        }
        let named = match overrides.get("profile") {
            Some(v) => Some(
                serde_json::from_value::<Profile>(v.clone())
                    .map_err(|e| HarnessError::Config(format!("profile: {e}")))?,
            ),
            None => None,
        };
        let base_profile = profile.or(named).unwrap_or_default();
        let mut base = serde_json::to_value(Self::for_profile(base_profile)).expect("config serializes");
        merge(&mut base, overrides);
        base["profile"] = serde_json::to_value(base_profile).expect("profile serializes");
        let cfg: Self = serde_json::from_value(base).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str, profile: Option<Profile>) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Self::from_json_value(value, profile)
    }

    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text, profile)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(HarnessError::Config(msg.into()));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.drops == 0 {
            return fail("drops must be at least 1");
        }
        if self.users == 0 {
            return fail("users must be at least 1");
        }
        if !(self.area_km2 > 0.0 && self.area_km2.is_finite()) {
            return fail("area_km2 must be positive");
        }
        if self.coherence_block_len <= self.users {
            return fail("coherence_block_len must exceed the number of users");
        }
        if self.array.n_h == 0 || self.array.n_v == 0 {
            return fail("array needs at least one element per axis");
        }
        if !(self.array.spacing_wavelengths > 0.0 && self.array.aperture_radius_wavelengths > 0.0) {
            return fail("array spacing and aperture must be positive");
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return fail("kappa must be non-negative");
        }
        if !(self.sat_noise_multiplier > 0.0) || self.cdf.sweep.sat_noise_multiplier.iter().any(|m| !(*m > 0.0)) {
            return fail("noise multipliers must be positive");
        }
        if self.satellite_position_km[2] <= 0.0 {
            return fail("satellite must be above the ground plane");
        }
        if let CorrelationModel::Exponential { r_h, r_v } = self.correlation {
            if r_h.abs() >= 1.0 || r_v.abs() >= 1.0 {
                return fail("correlation coefficients must satisfy |r| < 1");
            }
        }
        if self.validate.tolerance <= 0.0 {
            return fail("validate.tolerance must be positive");
        }
        if self.congestion.targets_mbps.iter().any(|t| !(*t > 0.0)) {
            return fail("congestion targets must be positive");
        }
        if self.maxmin.modes.is_empty() {
            return fail("maxmin.modes must list at least one mode");
        }
        self.gains.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.solver.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.radio().map(|_| ())
    }

    pub fn radio(&self) -> Result<RadioConstants> {
        RadioConstants::new(
            self.carrier_frequency_ghz,
            self.bandwidth_mhz,
            self.coherence_block_len,
            self.users,
            geometry::db_to_linear(self.pilot_power_dbw),
            geometry::noise_power_w(self.bandwidth_mhz, self.ap_noise_figure_db),
            geometry::noise_power_w(self.bandwidth_mhz, self.sat_noise_figure_db) * self.sat_noise_multiplier,
            self.earth_radius_km * 1e3,
            self.satellite_position_km[2] * 1e3,
        )
        .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn max_power_w(&self) -> f64 {
        geometry::db_to_linear(self.max_power_dbw)
    }

    pub fn soft_removal_rate(&self) -> SoftRemovalRate {
        self.solver.soft_removal_rate
    }
}

fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (key, value) in o {
                match b.get_mut(&key) {
                    Some(slot) if slot.is_object() && value.is_object() && key != "correlation" => merge(slot, value),
                    _ => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}
