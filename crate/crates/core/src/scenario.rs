//! Scenario ingestion and synthesis.
//!
//! Provides hourly load/renewable ensembles either parsed from CSV
//! (`t,load_kw,renewable_kw`) or generated synthetically as a sum of an
//! annual sinusoid, a diurnal pattern, AR(1) noise, and an optional scarcity
//! window, plus normalized-netload computation and perturbed forecasts for
//! the MPC baseline. All stochastic output is reproducible from (seed, config).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const HOURS_PER_YEAR: f64 = 8760.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("series has {found} rows, expected horizon {expected}")]
    LengthMismatch { found: usize, expected: usize },
    #[error("degenerate data: netload standard deviation is zero")]
    DegenerateData,
    #[error("invalid generator config: {0}")]
    BadConfig(String),
    #[error("forecast mape must lie in [0, 1), got {0}")]
    BadMape(f64),
}

/// One scenario of hourly load and available renewable power.
///
/// Synthetic scenarios also carry the wind/solar component split so fault
/// events can derate a single asset exactly; CSV-ingested scenarios have no
/// split and asset faults fall back to a capacity-share approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSeries {
    pub id: String,
    pub horizon: usize,
    pub load_kw: Vec<f64>,
    pub renewable_kw: Vec<f64>,
    #[serde(default)]
    pub wind_kw: Option<Vec<f64>>,
    #[serde(default)]
    pub solar_kw: Option<Vec<f64>>,
}

impl ScenarioSeries {
    pub fn new(id: impl Into<String>, load_kw: Vec<f64>, renewable_kw: Vec<f64>) -> Self {
        let horizon = load_kw.len();
        Self {
            id: id.into(),
            horizon,
            load_kw,
            renewable_kw,
            wind_kw: None,
            solar_kw: None,
        }
    }

    pub fn raw_netload(&self) -> Vec<f64> {
        self.load_kw
            .iter()
            .zip(&self.renewable_kw)
            .map(|(l, r)| l - r)
            .collect()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.load_kw.len() != self.horizon || self.renewable_kw.len() != self.horizon {
            return Err(ScenarioError::LengthMismatch {
                found: self.load_kw.len().min(self.renewable_kw.len()),
                expected: self.horizon,
            });
        }
        Ok(())
    }
}

/// Mean/standard deviation pair used to z-score netload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Normalized netload series with the statistics used to normalize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetloadSeries {
    pub values: Vec<f64>,
    pub stats: NormStats,
}

impl NetloadSeries {
    pub fn denormalize(&self, t: usize) -> f64 {
        self.values[t] * self.stats.std + self.stats.mean
    }
}

/// Synthetic ensemble generator configuration.
///
/// Seasonal period is one year (8760 h) regardless of the horizon; the
/// diurnal period is 24 h. The scarcity window adds `scarcity_amplitude_kw`
/// to load inside `[scarcity_start, scarcity_start + scarcity_len)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticGenConfig {
    pub seed: u64,
    pub horizon: usize,
    pub base_load_kw: f64,
    /// Relative seasonal swing of load (1 = +/-100%).
    pub seasonal_amplitude: f64,
    /// Relative diurnal swing of load.
    pub diurnal_amplitude: f64,
    /// AR(1) noise scale (kW) applied to load and renewable components;
    /// also scales per-scenario capacity-factor jitter.
    pub noise_level_kw: f64,
    pub wind_capacity_kw: f64,
    pub solar_capacity_kw: f64,
    /// Capacity factors per season [winter, spring, summer, autumn].
    pub wind_cf_by_season: [f64; 4],
    pub solar_cf_by_season: [f64; 4],
    /// Scarcity window start hour (1-based range inside the horizon).
    pub scarcity_start: Option<usize>,
    pub scarcity_len: usize,
    pub scarcity_amplitude_kw: f64,
}

impl Default for SyntheticGenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: 8760,
            base_load_kw: 85.0,
            seasonal_amplitude: 0.20,
            diurnal_amplitude: 0.25,
            noise_level_kw: 6.0,
            wind_capacity_kw: 100.0,
            solar_capacity_kw: 100.0,
            wind_cf_by_season: [0.26, 0.36, 0.44, 0.34],
            solar_cf_by_season: [0.10, 0.28, 0.38, 0.20],
            scarcity_start: Some(700),
            scarcity_len: 500,
            scarcity_amplitude_kw: 18.0,
        }
    }
}

impl SyntheticGenConfig {
    fn validate(&self) -> Result<(), ScenarioError> {
        if self.horizon == 0 {
            return Err(ScenarioError::BadConfig("horizon must be positive".into()));
        }
        for (name, v) in [
            ("seasonal_amplitude", self.seasonal_amplitude),
            ("diurnal_amplitude", self.diurnal_amplitude),
            ("noise_level_kw", self.noise_level_kw),
            ("scarcity_amplitude_kw", self.scarcity_amplitude_kw),
        ] {
            if v < 0.0 {
                return Err(ScenarioError::BadConfig(format!("{name} must be >= 0")));
            }
        }
        if let Some(start) = self.scarcity_start {
            if start + self.scarcity_len > self.horizon + 1 {
                return Err(ScenarioError::BadConfig(
                    "scarcity window must lie inside [1, horizon]".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Smooth interpolation between per-season values with a one-year period.
fn seasonal_value(by_season: &[f64; 4], hour: usize) -> f64 {
    let year_frac = (hour as f64 % HOURS_PER_YEAR) / HOURS_PER_YEAR;
    // season centers at winter=0, spring=0.25, summer=0.5, autumn=0.75
    let x = year_frac * 4.0;
    let i0 = x.floor() as usize % 4;
    let i1 = (i0 + 1) % 4;
    let w = x - x.floor();
    // cosine blend keeps the curve differentiable
    let w = (1.0 - (std::f64::consts::PI * w).cos()) / 2.0;
    by_season[i0] * (1.0 - w) + by_season[i1] * w
}

/// Generate `count` independent scenarios from derived per-scenario seeds.
pub fn synthesize_scenarios(
    gen: &SyntheticGenConfig,
    count: usize,
) -> Result<Vec<ScenarioSeries>, ScenarioError> {
    gen.validate()?;
    if count == 0 {
        return Err(ScenarioError::BadConfig("scenario count must be >= 1".into()));
    }
    (0..count).map(|s| synthesize_one(gen, s)).collect()
}

/// Generate scenario index `index` of the ensemble.
pub fn synthesize_one(
    gen: &SyntheticGenConfig,
    index: usize,
) -> Result<ScenarioSeries, ScenarioError> {
    gen.validate()?;
    let seed = crate::config::derive_seed(gen.seed, "scenario", index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_len = gen.horizon;
    let two_pi = 2.0 * std::f64::consts::PI;

    // Per-scenario inter-annual variability, scaled by the noise level.
    let jitter_scale = gen.noise_level_kw / 6.0 * 0.10;
    let wind_mult = 1.0 + jitter_scale * normal_draw(&mut rng);
    let solar_mult = 1.0 + jitter_scale * normal_draw(&mut rng);
    let load_mult = 1.0 + jitter_scale * 0.5 * normal_draw(&mut rng);

    let mut load = Vec::with_capacity(t_len);
    let mut ren = Vec::with_capacity(t_len);
    let mut wind = Vec::with_capacity(t_len);
    let mut solar = Vec::with_capacity(t_len);
    let (mut ar_l, mut ar_w, mut ar_s) = (0.0f64, 0.0f64, 0.0f64);
    let phi: f64 = 0.85;
    let eps = gen.noise_level_kw * (1.0 - phi * phi).sqrt();
    for t in 0..t_len {
        let hour_of_day = t % 24;
        let year_frac = (t as f64 % HOURS_PER_YEAR) / HOURS_PER_YEAR;
        // winter peak at the start of the year
        let seasonal = 1.0 + gen.seasonal_amplitude * (two_pi * year_frac).cos();
        let diurnal = 1.0
            + gen.diurnal_amplitude * (two_pi * (hour_of_day as f64 - 6.0) / 24.0).sin();
        ar_l = phi * ar_l + eps * normal_draw(&mut rng);
        ar_w = phi * ar_w + eps * normal_draw(&mut rng);
        ar_s = phi * ar_s + 0.4 * eps * normal_draw(&mut rng);

        let mut l = gen.base_load_kw * load_mult * seasonal * diurnal + ar_l;
        if let Some(start) = gen.scarcity_start {
            // window given as 1-based hours
            if t + 1 >= start && t + 1 < start + gen.scarcity_len {
                l += gen.scarcity_amplitude_kw;
            }
        }

        let wind_cf = (seasonal_value(&gen.wind_cf_by_season, t) * wind_mult
            + ar_w / gen.wind_capacity_kw.max(1.0))
        .clamp(0.0, 1.0);
        // solar bell between 6h and 18h
        let daylight = ((two_pi * (hour_of_day as f64 - 12.0) / 24.0).cos()).max(0.0);
        let solar_cf = (seasonal_value(&gen.solar_cf_by_season, t) * solar_mult
            + ar_s / gen.solar_capacity_kw.max(1.0))
        .clamp(0.0, 1.0);
        let r = gen.wind_capacity_kw * wind_cf + gen.solar_capacity_kw * solar_cf * daylight * 2.0;

        load.push(l.max(0.0));
        wind.push((gen.wind_capacity_kw * wind_cf).max(0.0));
        solar.push((gen.solar_capacity_kw * solar_cf * daylight * 2.0).max(0.0));
        ren.push(r.max(0.0));
    }
    Ok(ScenarioSeries {
        id: format!("synthetic-{index}"),
        horizon: t_len,
        load_kw: load,
        renewable_kw: ren,
        wind_kw: Some(wind),
        solar_kw: Some(solar),
    })
}

fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on ChaCha output keeps us independent of distribution-crate
    // sampling changes.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Parse a scenario from the documented CSV schema `t,load_kw,renewable_kw`.
pub fn load_timeseries(path: &Path, horizon: usize) -> Result<ScenarioSeries, ScenarioError> {
    let file = std::fs::File::open(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| ScenarioError::Parse {
            row: 0,
            column: "header".into(),
            message: e.to_string(),
        })?
        .clone();
    for required in ["t", "load_kw", "renewable_kw"] {
        if !headers.iter().any(|h| h == required) {
            return Err(ScenarioError::Parse {
                row: 0,
                column: required.into(),
                message: "missing column".into(),
            });
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (c_load, c_ren) = (col("load_kw"), col("renewable_kw"));
    let mut load = Vec::new();
    let mut ren = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| ScenarioError::Parse {
            row,
            column: "-".into(),
            message: e.to_string(),
        })?;
        let parse = |column: usize, name: &str| -> Result<f64, ScenarioError> {
            let raw = record.get(column).ok_or_else(|| ScenarioError::Parse {
                row,
                column: name.into(),
                message: "missing field".into(),
            })?;
            let v: f64 = raw.trim().parse().map_err(|_| ScenarioError::Parse {
                row,
                column: name.into(),
                message: format!("not a number: {raw}"),
            })?;
            if v < 0.0 {
                return Err(ScenarioError::Parse {
                    row,
                    column: name.into(),
                    message: format!("negative value {v}"),
                });
            }
            Ok(v)
        };
        load.push(parse(c_load, "load_kw")?);
        ren.push(parse(c_ren, "renewable_kw")?);
    }
    if load.len() != horizon {
        return Err(ScenarioError::LengthMismatch {
            found: load.len(),
            expected: horizon,
        });
    }
    let series = ScenarioSeries::new(
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into()),
        load,
        ren,
    );
    series.validate()?;
    Ok(series)
}

/// Write a scenario in the documented CSV schema. Floats are written with
/// Rust's shortest round-trip formatting, so read-back is bit-exact.
pub fn write_timeseries(path: &Path, series: &ScenarioSeries) -> Result<(), ScenarioError> {
    let mut out = std::fs::File::create(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut buf = String::from("t,load_kw,renewable_kw\n");
    for t in 0..series.horizon {
        buf.push_str(&format!(
            "{},{},{}\n",
            t + 1,
            series.load_kw[t],
            series.renewable_kw[t]
        ));
    }
    out.write_all(buf.as_bytes()).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Pooled netload statistics over a training ensemble.
pub fn netload_stats(scenarios: &[ScenarioSeries]) -> Result<NormStats, ScenarioError> {
    let mut values = Vec::new();
    for s in scenarios {
        values.extend(s.raw_netload());
    }
    stats_of(&values)
}

fn stats_of(values: &[f64]) -> Result<NormStats, ScenarioError> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Err(ScenarioError::DegenerateData);
    }
    Ok(NormStats { mean, std })
}

/// Normalize a scenario's netload. With `stats` supplied (test time) the
/// training statistics are applied; otherwise statistics are computed from
/// this series and stored.
pub fn compute_netload(
    series: &ScenarioSeries,
    stats: Option<NormStats>,
) -> Result<NetloadSeries, ScenarioError> {
    let raw = series.raw_netload();
    let stats = match stats {
        Some(s) => {
            if s.std < 1e-12 {
                return Err(ScenarioError::DegenerateData);
            }
            s
        }
        None => stats_of(&raw)?,
    };
    Ok(NetloadSeries {
        values: raw.iter().map(|v| (v - stats.mean) / stats.std).collect(),
        stats,
    })
}

/// Point forecasts over a look-ahead window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub load_kw: Vec<f64>,
    pub renewable_kw: Vec<f64>,
    /// Nominal mean absolute percentage error of the perturbation.
    pub nominal_mape: f64,
}

/// Multiplicative log-normal noise scale hitting `E|X - 1| = mape` for a
/// mean-one log-normal factor X.
fn lognormal_sigma_for_mape(mape: f64) -> f64 {
    if mape <= 0.0 {
        return 0.0;
    }
    // E|X-1| = 2(2*Phi(sigma/2) - 1)  =>  sigma = 2 * Phi^-1(1/2 + mape/4)
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    2.0 * normal.inverse_cdf(0.5 + mape / 4.0)
}

/// Perturb a truth series into a forecast with the requested MAPE.
///
/// Noise is multiplicative log-normal with unit mean, identical draws across
/// MAPE levels for a fixed seed (only the scale changes), clipped at zero by
/// construction. `window` hours are produced starting at hour 0.
pub fn perturb_forecast(
    truth: &ScenarioSeries,
    mape: f64,
    window: usize,
    seed: u64,
) -> Result<ForecastSeries, ScenarioError> {
    if !(0.0..1.0).contains(&mape) {
        return Err(ScenarioError::BadMape(mape));
    }
    let sigma = lognormal_sigma_for_mape(mape);
    let n = window.min(truth.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::config::derive_seed(seed, "forecast", 0));
    let mut load = Vec::with_capacity(n);
    let mut ren = Vec::with_capacity(n);
    for t in 0..n {
        let zl = normal_draw(&mut rng);
        let zr = normal_draw(&mut rng);
        let fl = (sigma * zl - sigma * sigma / 2.0).exp();
        let fr = (sigma * zr - sigma * sigma / 2.0).exp();
        load.push((truth.load_kw[t] * fl).max(0.0));
        ren.push((truth.renewable_kw[t] * fr).max(0.0));
    }
    Ok(ForecastSeries {
        load_kw: load,
        renewable_kw: ren,
        nominal_mape: mape,
    })
}

/// Empirical MAPE of a forecast against truth over hours where truth > 0.
pub fn realized_mape(truth: &[f64], forecast: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, f) in truth.iter().zip(forecast) {
        if *t > 1e-9 {
            total += (f - t).abs() / t;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn short_gen(horizon: usize) -> SyntheticGenConfig {
        SyntheticGenConfig {
            horizon,
            scarcity_start: None,
            ..Default::default()
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let gen = short_gen(96);
        let s = synthesize_one(&gen, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_timeseries(&path, &s).unwrap();
        let back = load_timeseries(&path, 96).unwrap();
        assert_eq!(back.load_kw, s.load_kw);
        assert_eq!(back.renewable_kw, s.renewable_kw);
    }

    #[test]
    fn parses_three_row_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "t,load_kw,renewable_kw\n1,10,5\n2,11,6\n3,12,7\n").unwrap();
        let s = load_timeseries(&path, 3).unwrap();
        assert_eq!(s.horizon, 3);
        assert_eq!(s.load_kw, vec![10.0, 11.0, 12.0]);
    }

    #[test]
    fn rejects_negative_value_citing_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut body = String::from("t,load_kw,renewable_kw\n");
        for t in 1..=10 {
            let load = if t == 7 { -1.0 } else { 10.0 };
            body.push_str(&format!("{t},{load},4\n"));
        }
        std::fs::write(&path, body).unwrap();
        match load_timeseries(&path, 10) {
            Err(ScenarioError::Parse { row, column, .. }) => {
                assert_eq!(row, 7);
                assert_eq!(column, "load_kw");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.csv");
        std::fs::write(&path, "t,load_kw,renewable_kw\n1,10,5\n2,11,6\n").unwrap();
        assert!(matches!(
            load_timeseries(&path, 3),
            Err(ScenarioError::LengthMismatch {
                found: 2,
                expected: 3
            })
        ));
    }

    #[test]
    fn rejects_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cols.csv");
        std::fs::write(&path, "t,load_kw\n1,10\n").unwrap();
        assert!(matches!(
            load_timeseries(&path, 1),
            Err(ScenarioError::Parse { row: 0, .. })
        ));
    }

    #[test]
    fn zero_noise_scenarios_are_identical() {
        let gen = SyntheticGenConfig {
            noise_level_kw: 0.0,
            ..short_gen(240)
        };
        let all = synthesize_scenarios(&gen, 2).unwrap();
        assert_eq!(all[0].load_kw, all[1].load_kw);
        assert_eq!(all[0].renewable_kw, all[1].renewable_kw);
    }

    #[test]
    fn same_seed_gives_identical_ensembles() {
        let gen = SyntheticGenConfig {
            seed: 99,
            ..short_gen(240)
        };
        let a = synthesize_scenarios(&gen, 3).unwrap();
        let b = synthesize_scenarios(&gen, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scarcity_window_raises_netload_by_amplitude() {
        let gen = SyntheticGenConfig {
            horizon: 2000,
            seasonal_amplitude: 0.0,
            noise_level_kw: 2.0,
            scarcity_start: Some(500),
            scarcity_len: 400,
            scarcity_amplitude_kw: 20.0,
            ..Default::default()
        };
        let s = synthesize_one(&gen, 0).unwrap();
        let net = s.raw_netload();
        let inside: f64 = net[499..899].iter().sum::<f64>() / 400.0;
        let outside: f64 = (net[..499].iter().sum::<f64>() + net[899..].iter().sum::<f64>())
            / (2000 - 400) as f64;
        assert!(
            inside - outside >= gen.scarcity_amplitude_kw * 0.95,
            "inside {inside} vs outside {outside}"
        );
    }

    #[test]
    fn netload_degenerate_when_load_equals_renewable() {
        let s = ScenarioSeries::new("flat", vec![10.0; 5], vec![10.0; 5]);
        assert!(matches!(
            compute_netload(&s, None),
            Err(ScenarioError::DegenerateData)
        ));
    }

    #[test]
    fn netload_self_normalization_has_unit_stats() {
        let gen = short_gen(500);
        let s = synthesize_one(&gen, 1).unwrap();
        let net = compute_netload(&s, None).unwrap();
        let n = net.values.len() as f64;
        let mean = net.values.iter().sum::<f64>() / n;
        let var = net.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn netload_train_stats_round_trip() {
        let gen = short_gen(300);
        let train = synthesize_one(&gen, 0).unwrap();
        let test = synthesize_one(&gen, 5).unwrap();
        let stats = compute_netload(&train, None).unwrap().stats;
        let net = compute_netload(&test, Some(stats)).unwrap();
        let raw = test.raw_netload();
        for t in 0..test.horizon {
            assert_abs_diff_eq!(net.denormalize(t), raw[t], epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_mape_forecast_equals_truth() {
        let gen = short_gen(100);
        let s = synthesize_one(&gen, 0).unwrap();
        let f = perturb_forecast(&s, 0.0, 100, 1).unwrap();
        assert_eq!(f.load_kw, s.load_kw);
        assert_eq!(f.renewable_kw, s.renewable_kw);
    }

    #[test]
    fn realized_mape_matches_nominal_over_long_window() {
        let gen = short_gen(8760);
        let s = synthesize_one(&gen, 0).unwrap();
        let f = perturb_forecast(&s, 0.2, 8760, 11).unwrap();
        let m = realized_mape(&s.load_kw, &f.load_kw);
        assert!((0.16..=0.24).contains(&m), "realized mape {m}");
    }

    #[test]
    fn zero_truth_stays_zero_in_forecast() {
        let s = ScenarioSeries::new("z", vec![10.0, 0.0, 10.0, 0.0], vec![0.0, 5.0, 0.0, 5.0]);
        let f = perturb_forecast(&s, 0.3, 4, 2).unwrap();
        assert_eq!(f.load_kw[1], 0.0);
        assert_eq!(f.renewable_kw[0], 0.0);
    }

    #[test]
    fn forecast_rejects_mape_of_one() {
        let gen = short_gen(10);
        let s = synthesize_one(&gen, 0).unwrap();
        assert!(matches!(
            perturb_forecast(&s, 1.0, 10, 0),
            Err(ScenarioError::BadMape(_))
        ));
    }
}
