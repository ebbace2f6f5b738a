//! Artifact persistence: trajectory CSVs, run logs, learner files, bench
//! tables, and the provenance manifest tying them together.
//!
//! Every output directory carries exactly one `manifest.json` recording the
//! config hash, root seed, hull size, solver tolerances, and the SHA-256 of
//! each written file; downstream stages verify those digests before
//! consuming anything. CSV numbers use Rust's shortest round-trip float
//! formatting, so reruns with equal inputs are byte-identical.

use crate::config::sha256_hex;
use crate::learner::{KernelHyperParams, MseReport};
use crate::metrics::{PerformanceSummary, RegretReport};
use crate::model::{ConvexHullModel, MicrogridConfig};
use crate::online::{Method, ReferenceKind, RunLog};
use crate::qp::SolverSettings;
use crate::scenario::NormStats;
use crate::solver::{SolveMeta, TrajectoryBundle};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv parse error in {path} row {row}: {message}")]
    Csv {
        path: String,
        row: usize,
        message: String,
    },
    #[error("provenance mismatch for {file}: manifest says {expected}, found {actual}")]
    Provenance {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("missing artifact: {0}")]
    Missing(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Provenance record written once per output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub created_unix: u64,
    pub tool_version: String,
    pub config_sha256: String,
    pub root_seed: u64,
    pub hull_samples: usize,
    pub solver: SolverSettings,
    /// SHA-256 per produced file (relative names).
    pub files: BTreeMap<String, String>,
    /// Optional digests of consumed upstream artifacts.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config_sha256: String, root_seed: u64, hull_samples: usize, solver: SolverSettings) -> Self {
        Self {
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256,
            root_seed,
            hull_samples,
            solver,
            files: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    /// Record a file's digest under its relative name.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<(), ArtifactError> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        self.files.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), ArtifactError> {
        let path = dir.join("manifest.json");
        let body = serde_json::to_vec_pretty(self).map_err(|source| ArtifactError::Json {
            path: path.display().to_string(),
            source,
        })?;
        std::fs::write(&path, body).map_err(io_err(&path))
    }

    pub fn read(dir: &Path) -> Result<Self, ArtifactError> {
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|source| ArtifactError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    /// Re-hash every recorded file and fail on the first mismatch.
    pub fn verify(&self, dir: &Path) -> Result<(), ArtifactError> {
        for (name, expected) in &self.files {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            let actual = sha256_hex(&bytes);
            if &actual != expected {
                return Err(ArtifactError::Provenance {
                    file: name.clone(),
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }
}

/// Write one trajectory bundle as the documented per-scenario CSV.
pub fn write_trajectory_csv(
    path: &Path,
    bundle: &TrajectoryBundle,
    config: &MicrogridConfig,
    hull: &ConvexHullModel,
) -> Result<(), ArtifactError> {
    let mut out = String::from(
        "t,h_star_kg,e_star_kwh,cost_usd,sched_ren_kw,shed_kw,dg_kw,bes_dis_kw,bes_chg_kw,ldes_chg_kw,ldes_dis_kw,h2_prod_kgph,h2_cons_kgph\n",
    );
    for (t, d) in bundle.decisions.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            t + 1,
            d.ldes_soc_kg,
            d.bes_soc_kwh,
            d.stage_cost(config, hull),
            d.renewable_kw,
            d.shed_kw,
            d.dg_kw,
            d.bes_discharge_kw,
            d.bes_charge_kw,
            d.ldes_charge_kw(hull),
            d.ldes_discharge_kw(hull),
            d.hydrogen_produced_kgph(hull),
            d.hydrogen_consumed_kgph(hull),
        ));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Slim read-back of a trajectory CSV (enough for learner datasets and
/// reference regeneration; the hull weights are not persisted).
#[derive(Debug, Clone)]
pub struct TrajectoryCsv {
    pub scenario_id: String,
    pub ldes_soc_kg: Vec<f64>,
    pub bes_soc_kwh: Vec<f64>,
    pub stage_cost_usd: Vec<f64>,
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryCsv, ArtifactError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let cols: Vec<&str> = header.split(',').collect();
    let find = |name: &str| -> Result<usize, ArtifactError> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| ArtifactError::Csv {
                path: path.display().to_string(),
                row: 0,
                message: format!("missing column {name}"),
            })
    };
    let (c_h, c_e, c_cost) = (find("h_star_kg")?, find("e_star_kwh")?, find("cost_usd")?);
    let mut h = Vec::new();
    let mut e = Vec::new();
    let mut cost = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |k: usize| -> Result<f64, ArtifactError> {
            fields
                .get(k)
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| ArtifactError::Csv {
                    path: path.display().to_string(),
                    row: i + 1,
                    message: format!("bad field {k}"),
                })
        };
        h.push(parse(c_h)?);
        e.push(parse(c_e)?);
        cost.push(parse(c_cost)?);
    }
    Ok(TrajectoryCsv {
        scenario_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        ldes_soc_kg: h,
        bes_soc_kwh: e,
        stage_cost_usd: cost,
    })
}

/// Error record for a failed per-scenario solve inside a batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub scenario_id: String,
    pub error: String,
}

/// Persisted learner artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnerArtifacts {
    pub params: KernelHyperParams,
    pub report: MseReport,
    pub netload_stats: NormStats,
    pub ldes_capacity_kg: f64,
    /// Digest chain back to the trajectory manifest.
    pub trajectories_manifest_sha256: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let body = serde_json::to_vec_pretty(value).map_err(|source| ArtifactError::Json {
        path: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, body).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ArtifactError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| ArtifactError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Write the per-hour run log with documented columns; expert columns are
/// flattened per expert index.
pub fn write_run_log_csv(
    path: &Path,
    log: &RunLog,
    hull: &ConvexHullModel,
) -> Result<(), ArtifactError> {
    let n_experts = log
        .steps
        .iter()
        .map(|s| s.expert_weights.len())
        .max()
        .unwrap_or(0);
    let mut header = String::from(
        "t,reference_kg,load_kw,renewable_kw,sched_ren_kw,shed_kw,dg_kw,bes_dis_kw,bes_chg_kw,ldes_chg_kw,ldes_dis_kw,bes_soc_kwh,ldes_soc_kg,realized_cost_usd,residual_deficit_kw,residual_surplus_kw",
    );
    for i in 1..=n_experts {
        header.push_str(&format!(",rho_{i},loss_{i},q_deficit_{i},q_surplus_{i}"));
    }
    header.push('\n');
    let mut out = header;
    for s in &log.steps {
        let d = &s.settled;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.t + 1,
            s.reference_kg.map_or(String::from(""), |r| r.to_string()),
            s.realized_load_kw,
            s.realized_renewable_kw,
            d.renewable_kw,
            d.shed_kw,
            d.dg_kw,
            d.bes_discharge_kw,
            d.bes_charge_kw,
            d.ldes_charge_kw(hull),
            d.ldes_discharge_kw(hull),
            d.bes_soc_kwh,
            d.ldes_soc_kg,
            s.realized_cost,
            s.residual[0],
            s.residual[1],
        ));
        for i in 0..n_experts {
            out.push_str(&format!(
                ",{},{},{},{}",
                s.expert_weights.get(i).copied().unwrap_or(f64::NAN),
                s.expert_losses.get(i).copied().unwrap_or(f64::NAN),
                s.queue_deficit.get(i).copied().unwrap_or(f64::NAN),
                s.queue_surplus.get(i).copied().unwrap_or(f64::NAN),
            ));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// The JSON summary written next to a run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummaryFile {
    pub scenario_id: String,
    pub method: Method,
    pub reference: ReferenceKind,
    pub summary: PerformanceSummary,
    pub events: Vec<String>,
    pub solve_meta: Option<SolveMeta>,
}

/// One row of the bench comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub reference: String,
    pub cost_usd: f64,
    pub load_loss_kwh: f64,
    pub final_soc_frac: f64,
    pub contract_shortfall_kg: f64,
    pub reference_rmse: Option<f64>,
    pub regret_usd: Option<f64>,
    pub regret_hull: Option<f64>,
    pub regret_oco: Option<f64>,
    pub regret_penalty: Option<f64>,
    pub regret_opt_gap: Option<f64>,
}

impl BenchRow {
    pub fn from_parts(
        method: &str,
        reference: &str,
        summary: &PerformanceSummary,
        report: Option<&RegretReport>,
    ) -> Self {
        Self {
            method: method.to_string(),
            reference: reference.to_string(),
            cost_usd: summary.annual_cost_usd,
            load_loss_kwh: summary.load_loss_kwh,
            final_soc_frac: summary.final_soc_frac,
            contract_shortfall_kg: summary.contract_shortfall_kg,
            reference_rmse: summary.reference_rmse,
            regret_usd: report.map(|r| r.total),
            regret_hull: report.map(|r| r.components.hull_error),
            regret_oco: report.map(|r| r.components.oco),
            regret_penalty: report.map(|r| r.components.tracking_penalty),
            regret_opt_gap: report.map(|r| r.components.optimality_gap),
        }
    }
}

/// Write the comparison table (one row per method x reference cell).
pub fn write_bench_table(path: &Path, rows: &[BenchRow]) -> Result<(), ArtifactError> {
    let mut out = String::from(
        "method,reference,cost_usd,load_loss_kwh,final_soc_frac,contract_shortfall_kg,reference_rmse,regret_usd,regret_hull,regret_oco,regret_penalty,regret_opt_gap\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.reference,
            r.cost_usd,
            r.load_loss_kwh,
            r.final_soc_frac,
            r.contract_shortfall_kg,
            opt(r.reference_rmse),
            opt(r.regret_usd),
            opt(r.regret_hull),
            opt(r.regret_oco),
            opt(r.regret_penalty),
            opt(r.regret_opt_gap),
        ));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Tidy per-hour regret series CSV for external plotting.
pub fn write_regret_series_csv(path: &Path, report: &RegretReport) -> Result<(), ArtifactError> {
    let mut out = String::from("t,cumulative_regret_usd,change_rate_usd,trailing_mean_usd\n");
    for (t, c) in report.cumulative.iter().enumerate() {
        let rate = if t == 0 {
            String::new()
        } else {
            report.change_rate[t - 1].to_string()
        };
        let trail = if t == 0 {
            String::new()
        } else {
            report.trailing_mean[t - 1].to_string()
        };
        out.push_str(&format!("{},{},{},{}\n", t + 1, c, rate, trail));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Locate all trajectory CSVs in a directory, sorted by name.
pub fn list_trajectory_csvs(dir: &Path) -> Result<Vec<PathBuf>, ArtifactError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("trajectory-"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Locate all scenario CSVs in a directory, sorted by name.
pub fn list_scenario_csvs(dir: &Path) -> Result<Vec<PathBuf>, ArtifactError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("scenario-"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::SolverSettings;

    #[test]
    fn manifest_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "t,x\n1,2\n").unwrap();
        let mut m = RunManifest::new("deadbeef".into(), 7, 5, SolverSettings::default());
        m.record(dir.path(), "a.csv").unwrap();
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back.config_sha256, "deadbeef");
        back.verify(dir.path()).unwrap();
        std::fs::write(dir.path().join("a.csv"), "t,x\n1,3\n").unwrap();
        assert!(matches!(
            back.verify(dir.path()),
            Err(ArtifactError::Provenance { .. })
        ));
    }

    #[test]
    fn trajectory_csv_round_trips_soc_path() {
        let cfg = MicrogridConfig::desk_default();
        let hull = ConvexHullModel::build(&cfg.ldes, 3).unwrap();
        let gen = crate::scenario::SyntheticGenConfig {
            horizon: 24,
            scarcity_start: None,
            ..Default::default()
        };
        let scenario = crate::scenario::synthesize_one(&gen, 0).unwrap();
        let mut relaxed = cfg.clone();
        relaxed.ldes.soc_final_target_kg = relaxed.ldes.soc_init_kg;
        let bundle = crate::solver::solve_oed(
            &relaxed,
            &scenario,
            &hull,
            &SolverSettings::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory-000.csv");
        write_trajectory_csv(&path, &bundle, &relaxed, &hull).unwrap();
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(back.ldes_soc_kg.len(), 24);
        for (a, b) in back.ldes_soc_kg.iter().zip(bundle.ldes_soc_path()) {
            assert_eq!(*a, b, "shortest float formatting must round-trip");
        }
    }
}
