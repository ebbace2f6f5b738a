//! Run configuration: TOML schema, validation bridge, and seed derivation.
//!
//! All randomness in the crate flows from a single root seed expanded by
//! [`derive_seed`] with a purpose label and an index, so any artifact can be
//! regenerated from (config, root seed) alone. Device sections use physical
//! ratings plus fractional SoC at this I/O boundary; everything internal is
//! in physical units.

use crate::learner::KernelFamily;
use crate::model::{
    BesParams, ConfigViolation, CostParams, CurveFamily, DgParams, LdesParams, MicrogridConfig,
    ModelError, NonconvexCurve,
};
use crate::online::{FaultEvent, OcoConfig, ReferenceKind};
use crate::qp::SolverSettings;
use crate::scenario::SyntheticGenConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0:?}")]
    Invalid(Vec<ConfigViolation>),
    #[error("invalid curve: {0}")]
    Curve(#[from] ModelError),
}

/// Derive a child seed from `(root, purpose label, index)` via SHA-256.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Hex SHA-256 of arbitrary bytes (config files, artifacts).
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Conversion curve specification as it appears in the config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CurveSpec {
    Saturating { a: f64, b: f64, d: f64 },
    Accelerating { a: f64, b: f64, d: f64 },
    Power { scale: f64, exponent: f64 },
    Linear { slope: f64 },
}

impl CurveSpec {
    pub fn to_curve(&self, p_lo_kw: f64, p_hi_kw: f64) -> Result<NonconvexCurve, ModelError> {
        let family = match *self {
            CurveSpec::Saturating { a, b, d } => CurveFamily::Saturating { a, b, d },
            CurveSpec::Accelerating { a, b, d } => CurveFamily::Accelerating { a, b, d },
            CurveSpec::Power { scale, exponent } => CurveFamily::Power { scale, exponent },
            CurveSpec::Linear { slope } => CurveFamily::Power {
                scale: slope,
                exponent: 1.0,
            },
        };
        NonconvexCurve::new(family, p_lo_kw, p_hi_kw)
    }
}

/// Battery section: rating plus fractional SoC bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BesSection {
    pub power_kw: f64,
    pub capacity_kwh: f64,
    pub soc_min_frac: f64,
    pub soc_max_frac: f64,
    pub soc_init_frac: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
}

impl Default for BesSection {
    fn default() -> Self {
        Self {
            power_kw: 50.0,
            capacity_kwh: 200.0,
            soc_min_frac: 0.1,
            soc_max_frac: 1.0,
            soc_init_frac: 0.5,
            eta_charge: 0.9,
            eta_discharge: 0.9,
        }
    }
}

impl BesSection {
    fn to_model(&self) -> BesParams {
        BesParams {
            p_max_kw: self.power_kw,
            soc_min_kwh: self.soc_min_frac * self.capacity_kwh,
            soc_max_kwh: self.soc_max_frac * self.capacity_kwh,
            eta_charge: self.eta_charge,
            eta_discharge: self.eta_discharge,
            soc_init_kwh: self.soc_init_frac * self.capacity_kwh,
        }
    }
}

/// Long-duration storage section: rating, fractional SoC, and both curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LdesSection {
    pub p_min_kw: f64,
    pub power_kw: f64,
    pub capacity_kg: f64,
    pub soc_min_frac: f64,
    pub soc_max_frac: f64,
    pub soc_init_frac: f64,
    pub soc_final_target_frac: f64,
    pub charge_curve: CurveSpec,
    pub discharge_curve: CurveSpec,
}

impl Default for LdesSection {
    fn default() -> Self {
        Self {
            p_min_kw: 0.0,
            power_kw: 100.0,
            capacity_kg: 1000.0,
            soc_min_frac: 0.05,
            soc_max_frac: 1.0,
            soc_init_frac: 0.2,
            soc_final_target_frac: 0.5,
            charge_curve: CurveSpec::Saturating {
                a: 0.030,
                b: 0.018,
                d: 50.0,
            },
            discharge_curve: CurveSpec::Accelerating {
                a: 0.050,
                b: 0.0375,
                d: 50.0,
            },
        }
    }
}

impl LdesSection {
    fn to_model(&self) -> Result<LdesParams, ModelError> {
        Ok(LdesParams {
            p_min_kw: self.p_min_kw,
            p_max_kw: self.power_kw,
            soc_min_kg: self.soc_min_frac * self.capacity_kg,
            soc_max_kg: self.soc_max_frac * self.capacity_kg,
            soc_init_kg: self.soc_init_frac * self.capacity_kg,
            soc_final_target_kg: self.soc_final_target_frac * self.capacity_kg,
            charge_curve: self.charge_curve.to_curve(self.p_min_kw, self.power_kw)?,
            discharge_curve: self
                .discharge_curve
                .to_curve(self.p_min_kw, self.power_kw)?,
        })
    }
}

/// Scenario generation section: ensemble size plus the generator knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenariosSection {
    pub count: usize,
    pub horizon: usize,
    pub base_load_kw: f64,
    pub seasonal_amplitude: f64,
    pub diurnal_amplitude: f64,
    pub noise_level_kw: f64,
    pub wind_capacity_kw: f64,
    pub solar_capacity_kw: f64,
    pub wind_cf_by_season: [f64; 4],
    pub solar_cf_by_season: [f64; 4],
    pub scarcity_start: Option<usize>,
    pub scarcity_len: usize,
    pub scarcity_amplitude_kw: f64,
}

impl Default for ScenariosSection {
    fn default() -> Self {
        let gen = SyntheticGenConfig::default();
        Self {
            count: 8,
            horizon: gen.horizon,
            base_load_kw: gen.base_load_kw,
            seasonal_amplitude: gen.seasonal_amplitude,
            diurnal_amplitude: gen.diurnal_amplitude,
            noise_level_kw: gen.noise_level_kw,
            wind_capacity_kw: gen.wind_capacity_kw,
            solar_capacity_kw: gen.solar_capacity_kw,
            wind_cf_by_season: gen.wind_cf_by_season,
            solar_cf_by_season: gen.solar_cf_by_season,
            scarcity_start: gen.scarcity_start,
            scarcity_len: gen.scarcity_len,
            scarcity_amplitude_kw: gen.scarcity_amplitude_kw,
        }
    }
}

impl ScenariosSection {
    /// Generator for the training ensemble (scenario indices 0..count).
    pub fn generator(&self, root_seed: u64) -> SyntheticGenConfig {
        SyntheticGenConfig {
            seed: derive_seed(root_seed, "scenarios", 0),
            horizon: self.horizon,
            base_load_kw: self.base_load_kw,
            seasonal_amplitude: self.seasonal_amplitude,
            diurnal_amplitude: self.diurnal_amplitude,
            noise_level_kw: self.noise_level_kw,
            wind_capacity_kw: self.wind_capacity_kw,
            solar_capacity_kw: self.solar_capacity_kw,
            wind_cf_by_season: self.wind_cf_by_season,
            solar_cf_by_season: self.solar_cf_by_season,
            scarcity_start: self.scarcity_start,
            scarcity_len: self.scarcity_len,
            scarcity_amplitude_kw: self.scarcity_amplitude_kw,
        }
    }

    /// Generator for held-out test scenarios (separate seed stream).
    pub fn test_generator(&self, root_seed: u64) -> SyntheticGenConfig {
        SyntheticGenConfig {
            seed: derive_seed(root_seed, "test-scenario", 0),
            ..self.generator(root_seed)
        }
    }
}

/// Tracking section: reference source and optional penalty override.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingSection {
    pub reference: ReferenceKind,
    /// Explicit penalty ($/kg^2); `None` uses the schedule `theta0 T^c`.
    pub theta: Option<f64>,
}

impl Default for TrackingSection {
    fn default() -> Self {
        Self {
            reference: ReferenceKind::Kernel,
            theta: None,
        }
    }
}

/// Learner training section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerSection {
    pub window_candidates: Vec<usize>,
    pub sigma_factors: Vec<f64>,
    pub kernel: KernelFamily,
    pub validation_stride: usize,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            window_candidates: vec![1, 2, 6, 24, 72, 168],
            sigma_factors: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            kernel: KernelFamily::Gaussian,
            validation_stride: 6,
        }
    }
}

impl LearnerSection {
    pub fn train_options(&self) -> crate::learner::TrainOptions {
        crate::learner::TrainOptions {
            sigma_factors: self.sigma_factors.clone(),
            validation_stride: self.validation_stride,
            family: self.kernel,
        }
    }
}

/// MPC baseline section.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcSection {
    pub horizon_hours: usize,
    pub mape: f64,
}

impl Default for MpcSection {
    fn default() -> Self {
        Self {
            horizon_hours: 168,
            mape: 0.0,
        }
    }
}

fn default_seed() -> u64 {
    42
}

/// Top-level run configuration (the documented TOML schema).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Hull vertex count per direction; `None` uses the schedule `M0 T^c`.
    #[serde(default)]
    pub hull_samples: Option<usize>,
    #[serde(default = "default_costs")]
    pub costs: CostParams,
    #[serde(default = "default_dg")]
    pub dg: DgParams,
    #[serde(default)]
    pub bes: BesSection,
    #[serde(default)]
    pub ldes: LdesSection,
    #[serde(default)]
    pub scenarios: ScenariosSection,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub oco: OcoConfig,
    #[serde(default)]
    pub tracking: TrackingSection,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default)]
    pub mpc: MpcSection,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
}

fn default_costs() -> CostParams {
    MicrogridConfig::desk_default().costs
}

fn default_dg() -> DgParams {
    MicrogridConfig::desk_default().dg
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config deserializes from defaults")
    }
}

impl RunConfig {
    /// Parse a TOML string and align derived fields.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.oco.horizon = cfg.scenarios.horizon;
        Ok(cfg)
    }

    /// Build the physical model and check every invariant.
    pub fn microgrid(&self) -> Result<MicrogridConfig, ConfigError> {
        let config = MicrogridConfig {
            costs: self.costs,
            dg: self.dg,
            bes: self.bes.to_model(),
            ldes: self.ldes.to_model()?,
        };
        let violations = crate::model::validate_config(&config);
        if violations.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    /// Hull vertex count: explicit override or the schedule value.
    pub fn hull_samples(&self) -> usize {
        self.hull_samples.unwrap_or_else(|| self.oco.hull_samples())
    }

    /// Training ensemble size: explicit count (the schedule value is used
    /// only when the count is zero).
    pub fn scenario_count(&self) -> usize {
        if self.scenarios.count == 0 {
            self.oco.scenario_count()
        } else {
            self.scenarios.count
        }
    }

    /// Tracking penalty: explicit override or the schedule value.
    pub fn theta(&self) -> f64 {
        self.tracking.theta.unwrap_or_else(|| self.oco.theta())
    }
}

/// Load a config file, returning the parsed config and the file's SHA-256.
pub fn load_run_config(path: &Path) -> Result<(RunConfig, String), ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg = RunConfig::from_toml(std::str::from_utf8(&bytes).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?)?;
    Ok((cfg, sha256_hex(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_label_and_index() {
        let a = derive_seed(1, "scenario", 0);
        let b = derive_seed(1, "scenario", 1);
        let c = derive_seed(1, "forecast", 0);
        let d = derive_seed(2, "scenario", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a, derive_seed(1, "scenario", 0));
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn empty_config_matches_desk_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        let system = cfg.microgrid().unwrap();
        let desk = MicrogridConfig::desk_default();
        assert_eq!(system.bes.soc_init_kwh, desk.bes.soc_init_kwh);
        assert_eq!(system.ldes.soc_final_target_kg, desk.ldes.soc_final_target_kg);
        assert_eq!(system.costs.load_shed_penalty, desk.costs.load_shed_penalty);
        assert_eq!(cfg.oco.horizon, cfg.scenarios.horizon);
    }

    #[test]
    fn fractional_soc_converts_to_physical_units() {
        let cfg = RunConfig::from_toml(
            r#"
            [ldes]
            capacity_kg = 400.0
            soc_init_frac = 0.25
            soc_final_target_frac = 0.75
        "#,
        )
        .unwrap();
        let system = cfg.microgrid().unwrap();
        assert_eq!(system.ldes.soc_init_kg, 100.0);
        assert_eq!(system.ldes.soc_final_target_kg, 300.0);
    }

    #[test]
    fn invalid_efficiency_is_reported_with_field_name() {
        let cfg = RunConfig::from_toml(
            r#"
            [bes]
            eta_discharge = 1.2
        "#,
        )
        .unwrap();
        match cfg.microgrid() {
            Err(ConfigError::Invalid(v)) => {
                assert!(v.iter().any(|c| c.field == "bes.eta_discharge"));
            }
            other => panic!("expected invalid config, got {other:?}"),
        }
    }

    #[test]
    fn curve_specs_round_trip_through_model() {
        let cfg = RunConfig::from_toml(
            r#"
            [ldes.charge_curve]
            family = "linear"
            slope = 0.02

            [ldes.discharge_curve]
            family = "power"
            scale = 0.05
            exponent = 1.1
        "#,
        )
        .unwrap();
        let system = cfg.microgrid().unwrap();
        let r = crate::model::evaluate_curve(&system.ldes.charge_curve, 50.0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fault_entries_parse() {
        let cfg = RunConfig::from_toml(
            r#"
            [[faults]]
            start_hour = 300
            duration_h = 336
            asset = "wind"
            multiplier = 0.0
        "#,
        )
        .unwrap();
        assert_eq!(cfg.faults.len(), 1);
        assert_eq!(cfg.faults[0].duration_h, 336);
    }
}
