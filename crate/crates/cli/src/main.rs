//! `mgrid` — config-driven pipeline for the microgrid dispatch engine.
//!
//! Subcommands mirror the two-stage workflow:
//!   offline  generate scenarios and hindsight-optimal trajectories
//!   train    tune the kernel-regression reference learner
//!   run      closed-loop online dispatch of one scenario
//!   bench    method x reference comparison table with regret reports
//!
//! Exit codes: 0 success, 1 configuration or hard error, 2 partial
//! per-scenario failures. All outputs land under --out; inputs are never
//! mutated. Every flag can also be set through an MGRID_* environment
//! variable.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mgrid_core::artifacts::{
    self, BenchRow, ErrorRecord, LearnerArtifacts, RunManifest, RunSummaryFile,
};
use mgrid_core::config::{derive_seed, load_run_config, RunConfig};
use mgrid_core::learner::{self, RegressionDataset};
use mgrid_core::metrics;
use mgrid_core::model::{ConvexHullModel, MicrogridConfig};
use mgrid_core::online::{self, Method, ReferenceKind, ReferenceSource, RunInputs};
use mgrid_core::scenario::{self, ScenarioSeries};
use mgrid_core::solver::{self, TrajectoryBundle};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mgrid",
    about = "Microgrid dispatch engine: hindsight trajectories, kernel SoC references, and online convex optimization",
    version
)]
struct Cli {
    /// Worker threads for scenario batches and expert banks (0 = all cores).
    #[arg(long, global = true, env = "MGRID_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (TOML).
    #[arg(long, env = "MGRID_CONFIG")]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, env = "MGRID_OUT")]
    out: PathBuf,
    /// Root seed override; defaults to the config's `seed`.
    #[arg(long, env = "MGRID_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: write scenario and hindsight-trajectory CSVs plus a manifest.
    Offline {
        #[command(flatten)]
        common: CommonArgs,
        /// Ingest scenario CSVs from this directory instead of synthesizing.
        #[arg(long, env = "MGRID_SCENARIOS")]
        scenarios: Option<PathBuf>,
    },
    /// Stage 2 (offline part): tune the reference learner on trajectories.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory produced by `offline`.
        #[arg(long, env = "MGRID_TRAJECTORIES")]
        trajectories: PathBuf,
    },
    /// Closed-loop online dispatch of one scenario.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Dispatch method.
        #[arg(long, env = "MGRID_METHOD", value_parser = parse_method, default_value = "oco")]
        method: Method,
        /// Long-term reference source.
        #[arg(long, env = "MGRID_REFERENCE", value_parser = parse_reference, default_value = "kernel")]
        reference: ReferenceKind,
        /// Test scenario: a CSV path, or `synthetic:<index>` for a held-out
        /// generated year.
        #[arg(long, env = "MGRID_SCENARIO", default_value = "synthetic:0")]
        scenario: String,
        /// Directory produced by `offline` (needed for kernel/average
        /// references and fault regeneration).
        #[arg(long, env = "MGRID_TRAJECTORIES")]
        trajectories: Option<PathBuf>,
        /// Directory produced by `train` (needed for the kernel reference).
        #[arg(long, env = "MGRID_LEARNER")]
        learner: Option<PathBuf>,
        /// Fault script (TOML with [[faults]] entries) overriding the
        /// config's fault list.
        #[arg(long, env = "MGRID_FAULTS")]
        faults: Option<PathBuf>,
    },
    /// Full pipeline benchmark: methods x references comparison table.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated methods to compare.
        #[arg(long, default_value = "oco,sed")]
        methods: String,
        /// Comma-separated references to compare.
        #[arg(long, default_value = "kernel,average,none")]
        references: String,
        /// Test scenario (CSV path or `synthetic:<index>`).
        #[arg(long, env = "MGRID_SCENARIO", default_value = "synthetic:0")]
        scenario: String,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "oco" => Ok(Method::Oco),
        "mpc" => Ok(Method::Mpc),
        "sed" => Ok(Method::Sed),
        other => Err(format!("unknown method {other}; expected oco|mpc|sed")),
    }
}

fn parse_reference(s: &str) -> Result<ReferenceKind, String> {
    match s {
        "kernel" => Ok(ReferenceKind::Kernel),
        "average" => Ok(ReferenceKind::Average),
        "none" => Ok(ReferenceKind::None),
        other => Err(format!("unknown reference {other}; expected kernel|average|none")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("error: cannot configure {} worker threads: {e}", cli.jobs);
            return ExitCode::from(1);
        }
    }
    let outcome = match cli.command {
        Command::Offline { common, scenarios } => cmd_offline(&common, scenarios.as_deref()),
        Command::Train {
            common,
            trajectories,
        } => cmd_train(&common, &trajectories),
        Command::Run {
            common,
            method,
            reference,
            scenario,
            trajectories,
            learner,
            faults,
        } => cmd_run(
            &common,
            method,
            reference,
            &scenario,
            trajectories.as_deref(),
            learner.as_deref(),
            faults.as_deref(),
        ),
        Command::Bench {
            common,
            methods,
            references,
            scenario,
        } => cmd_bench(&common, &methods, &references, &scenario),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Shared setup: parse config, apply the seed override, build model and hull.
struct Prepared {
    run: RunConfig,
    config_sha: String,
    system: MicrogridConfig,
    hull: ConvexHullModel,
}

fn prepare(common: &CommonArgs) -> Result<Prepared> {
    let (mut run, config_sha) = load_run_config(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        run.seed = seed;
    }
    let system = run.microgrid().context("configuration rejected")?;
    let hull = ConvexHullModel::build(&system.ldes, run.hull_samples())
        .context("building the convex hull")?;
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    Ok(Prepared {
        run,
        config_sha,
        system,
        hull,
    })
}

fn scenario_file_name(index: usize) -> String {
    format!("scenario-{index:03}.csv")
}

fn trajectory_file_name(index: usize) -> String {
    format!("trajectory-{index:03}.csv")
}

fn cmd_offline(common: &CommonArgs, scenarios_dir: Option<&Path>) -> Result<u8> {
    let p = prepare(common)?;
    let horizon = p.run.scenarios.horizon;
    let scenarios: Vec<ScenarioSeries> = match scenarios_dir {
        Some(dir) => {
            let paths = artifacts::list_scenario_csvs(dir)?;
            if paths.is_empty() {
                bail!("no scenario-*.csv files in {}", dir.display());
            }
            paths
                .iter()
                .map(|path| scenario::load_timeseries(path, horizon))
                .collect::<Result<_, _>>()
                .context("ingesting scenario CSVs")?
        }
        None => scenario::synthesize_scenarios(
            &p.run.scenarios.generator(p.run.seed),
            p.run.scenario_count(),
        )?,
    };

    let results = solver::batch_generate_trajectories(
        &p.system,
        &scenarios,
        &p.hull,
        &p.run.solver,
    );
    let mut manifest = RunManifest::new(
        p.config_sha.clone(),
        p.run.seed,
        p.hull.samples,
        p.run.solver,
    );
    let mut errors: Vec<ErrorRecord> = Vec::new();
    let mut written = 0usize;
    for (i, (scenario, result)) in scenarios.iter().zip(&results).enumerate() {
        let s_name = scenario_file_name(i);
        scenario::write_timeseries(&common.out.join(&s_name), scenario)?;
        manifest.record(&common.out, &s_name)?;
        match result {
            Ok(bundle) => {
                let t_name = trajectory_file_name(i);
                artifacts::write_trajectory_csv(
                    &common.out.join(&t_name),
                    bundle,
                    &p.system,
                    &p.hull,
                )?;
                manifest.record(&common.out, &t_name)?;
                written += 1;
                println!(
                    "scenario {i}: cost {:.2} $ in {:.2} s{}",
                    bundle.total_cost,
                    bundle.wall_time_s,
                    if bundle.warnings.is_empty() {
                        String::new()
                    } else {
                        format!(" ({} warnings)", bundle.warnings.len())
                    }
                );
            }
            Err(e) => {
                eprintln!("scenario {i}: {e}");
                errors.push(ErrorRecord {
                    scenario_id: scenario.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if !errors.is_empty() {
        artifacts::write_json(&common.out.join("errors.json"), &errors)?;
        manifest.record(&common.out, "errors.json")?;
    }
    manifest.write(&common.out)?;
    println!(
        "wrote {written}/{} trajectories to {}",
        scenarios.len(),
        common.out.display()
    );
    Ok(if errors.is_empty() { 0 } else { 2 })
}

/// Load scenarios + trajectories back from an offline directory, verifying
/// provenance.
fn load_offline_dir(
    dir: &Path,
    system: &MicrogridConfig,
) -> Result<(Vec<ScenarioSeries>, RegressionDataset, RunManifest)> {
    let manifest = RunManifest::read(dir).context("reading offline manifest")?;
    manifest
        .verify(dir)
        .context("offline artifacts failed provenance verification")?;
    let s_paths = artifacts::list_scenario_csvs(dir)?;
    let t_paths = artifacts::list_trajectory_csvs(dir)?;
    if t_paths.len() < 2 {
        bail!(
            "need at least 2 trajectories to train, found {}",
            t_paths.len()
        );
    }
    // scenarios whose trajectory solve failed are skipped by matching indices
    let index_of = |p: &Path| -> Option<usize> {
        p.file_stem()?
            .to_string_lossy()
            .rsplit('-')
            .next()?
            .parse()
            .ok()
    };
    let mut scenarios = Vec::new();
    let mut socs: Vec<Vec<f64>> = Vec::new();
    for t_path in &t_paths {
        let idx = index_of(t_path)
            .ok_or_else(|| anyhow!("unparsable trajectory name {}", t_path.display()))?;
        let s_path = dir.join(scenario_file_name(idx));
        if !s_paths.contains(&s_path) {
            bail!("trajectory {} has no matching scenario CSV", t_path.display());
        }
        let t = artifacts::read_trajectory_csv(t_path)?;
        let horizon = t.ldes_soc_kg.len();
        scenarios.push(scenario::load_timeseries(&s_path, horizon)?);
        socs.push(t.ldes_soc_kg);
    }
    let stats = scenario::netload_stats(&scenarios)?;
    let cap = system.ldes.soc_max_kg;
    let netload = scenarios
        .iter()
        .map(|s| scenario::compute_netload(s, Some(stats)).map(|n| n.values))
        .collect::<Result<Vec<_>, _>>()?;
    let soc_frac = socs
        .into_iter()
        .map(|path| path.into_iter().map(|h| h / cap).collect())
        .collect();
    let dataset = RegressionDataset {
        netload,
        soc_frac,
        stats,
        ldes_capacity_kg: cap,
    };
    Ok((scenarios, dataset, manifest))
}

fn cmd_train(common: &CommonArgs, trajectories: &Path) -> Result<u8> {
    let p = prepare(common)?;
    let (_, dataset, offline_manifest) = load_offline_dir(trajectories, &p.system)?;
    let (params, report) = learner::train(
        &dataset,
        &p.run.learner.window_candidates,
        &p.run.learner.train_options(),
    )?;
    println!(
        "selected window {} h, bandwidth {:.4}{}",
        params.window,
        params.bandwidth,
        if report.degenerate {
            " (degenerate ensemble fallback)"
        } else {
            ""
        }
    );
    let manifest_bytes = std::fs::read(trajectories.join("manifest.json"))?;
    let artifacts_file = LearnerArtifacts {
        params,
        report,
        netload_stats: dataset.stats,
        ldes_capacity_kg: dataset.ldes_capacity_kg,
        trajectories_manifest_sha256: mgrid_core::config::sha256_hex(&manifest_bytes),
    };
    artifacts::write_json(&common.out.join("learner.json"), &artifacts_file)?;
    let mut manifest = RunManifest::new(
        p.config_sha,
        p.run.seed,
        p.hull.samples,
        p.run.solver,
    );
    manifest.inputs.insert(
        "trajectories/manifest.json".into(),
        artifacts_file.trajectories_manifest_sha256.clone(),
    );
    manifest.record(&common.out, "learner.json")?;
    manifest.write(&common.out)?;
    let _ = offline_manifest;
    Ok(0)
}

/// Resolve the test scenario argument.
fn resolve_scenario(spec: &str, run: &RunConfig) -> Result<ScenarioSeries> {
    if let Some(index) = spec.strip_prefix("synthetic:") {
        let index: usize = index
            .parse()
            .map_err(|_| anyhow!("bad synthetic scenario index {index}"))?;
        Ok(scenario::synthesize_one(
            &run.scenarios.test_generator(run.seed),
            index,
        )?)
    } else {
        Ok(scenario::load_timeseries(
            Path::new(spec),
            run.scenarios.horizon,
        )?)
    }
}

fn build_reference(
    kind: ReferenceKind,
    dataset: Option<&RegressionDataset>,
    learner_dir: Option<&Path>,
) -> Result<ReferenceSource> {
    match kind {
        ReferenceKind::None => Ok(ReferenceSource::None),
        ReferenceKind::Average => {
            let dataset = dataset
                .ok_or_else(|| anyhow!("--trajectories is required for the average reference"))?;
            Ok(ReferenceSource::Average {
                dataset: dataset.clone(),
            })
        }
        ReferenceKind::Kernel => {
            let dataset = dataset
                .ok_or_else(|| anyhow!("--trajectories is required for the kernel reference"))?;
            let dir = learner_dir
                .ok_or_else(|| anyhow!("--learner is required for the kernel reference"))?;
            let file: LearnerArtifacts = artifacts::read_json(&dir.join("learner.json"))
                .context("reading learner artifacts")?;
            Ok(ReferenceSource::Kernel {
                params: file.params,
                dataset: dataset.clone(),
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    common: &CommonArgs,
    method: Method,
    reference: ReferenceKind,
    scenario_spec: &str,
    trajectories: Option<&Path>,
    learner_dir: Option<&Path>,
    faults_path: Option<&Path>,
) -> Result<u8> {
    let p = prepare(common)?;
    let test = resolve_scenario(scenario_spec, &p.run)?;
    let (training, dataset) = match trajectories {
        Some(dir) => {
            let (s, d, _) = load_offline_dir(dir, &p.system)?;
            (s, Some(d))
        }
        None => (Vec::new(), None),
    };
    let reference_source = build_reference(reference, dataset.as_ref(), learner_dir)?;
    let faults = match faults_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let parsed: RunConfig =
                RunConfig::from_toml(&text).context("parsing fault script")?;
            parsed.faults
        }
        None => p.run.faults.clone(),
    };
    let mut oco = p.run.oco;
    oco.horizon = test.horizon;
    let inputs = RunInputs {
        config: &p.system,
        hull: &p.hull,
        scenario: &test,
        method,
        reference: reference_source,
        oco,
        theta_override: p.run.tracking.theta,
        mpc_horizon: p.run.mpc.horizon_hours,
        mpc_mape: p.run.mpc.mape,
        forecast_seed: derive_seed(p.run.seed, "forecast", 0),
        faults: &faults,
        training_scenarios: &training,
        wind_capacity_kw: p.run.scenarios.wind_capacity_kw,
        solar_capacity_kw: p.run.scenarios.solar_capacity_kw,
        settings: p.run.solver,
    };
    let log = online::run_online(&inputs)?;
    for event in &log.events {
        println!("{event}");
    }
    let summary = metrics::summarize(&log, &p.system, None);
    artifacts::write_run_log_csv(&common.out.join("runlog.csv"), &log, &p.hull)?;
    artifacts::write_json(
        &common.out.join("summary.json"),
        &RunSummaryFile {
            scenario_id: log.scenario_id.clone(),
            method,
            reference,
            summary: summary.clone(),
            events: log.events.clone(),
            solve_meta: None,
        },
    )?;
    let mut manifest = RunManifest::new(
        p.config_sha,
        p.run.seed,
        p.hull.samples,
        p.run.solver,
    );
    manifest.record(&common.out, "runlog.csv")?;
    manifest.record(&common.out, "summary.json")?;
    manifest.write(&common.out)?;
    println!(
        "{} + {}: cost {:.2} $, load loss {:.2} kWh, final SoC {:.3}",
        method, reference, summary.annual_cost_usd, summary.load_loss_kwh, summary.final_soc_frac
    );
    Ok(0)
}

fn cmd_bench(
    common: &CommonArgs,
    methods: &str,
    references: &str,
    scenario_spec: &str,
) -> Result<u8> {
    let p = prepare(common)?;
    let methods: Vec<Method> = methods
        .split(',')
        .map(|s| parse_method(s.trim()).map_err(|e| anyhow!(e)))
        .collect::<Result<_>>()?;
    let references: Vec<ReferenceKind> = references
        .split(',')
        .map(|s| parse_reference(s.trim()).map_err(|e| anyhow!(e)))
        .collect::<Result<_>>()?;
    let test = resolve_scenario(scenario_spec, &p.run)?;

    // stage 1: training ensemble and trajectories (in-memory)
    let training = scenario::synthesize_scenarios(
        &p.run.scenarios.generator(p.run.seed),
        p.run.scenario_count(),
    )?;
    let results =
        solver::batch_generate_trajectories(&p.system, &training, &p.hull, &p.run.solver);
    let mut ok_scenarios = Vec::new();
    let mut ok_bundles = Vec::new();
    let mut cell_errors: Vec<ErrorRecord> = Vec::new();
    for (s, r) in training.iter().zip(results) {
        match r {
            Ok(b) => {
                ok_scenarios.push(s.clone());
                ok_bundles.push(b);
            }
            Err(e) => cell_errors.push(ErrorRecord {
                scenario_id: s.id.clone(),
                error: format!("offline: {e}"),
            }),
        }
    }
    if ok_bundles.len() < 2 {
        bail!("offline stage produced {} trajectories; need 2", ok_bundles.len());
    }
    let dataset = RegressionDataset::from_bundles(&ok_scenarios, &ok_bundles, &p.system)?;
    let (params, _report) = learner::train(
        &dataset,
        &p.run.learner.window_candidates,
        &p.run.learner.train_options(),
    )?;

    // perfect-foresight row: the hindsight optimum of the test scenario is
    // both the baseline cost floor and the regret oracle
    let oracle = solver::solve_oed(&p.system, &test, &p.hull, &p.run.solver)
        .context("perfect-foresight solve of the test scenario")?;
    let pf_log = perfect_foresight_log(&oracle, &test, &p.system, &p.hull);
    let pf_summary = metrics::summarize(&pf_log, &p.system, Some(&oracle));
    let mut rows = vec![BenchRow::from_parts(
        "perfect_foresight",
        "-",
        &pf_summary,
        None,
    )];

    let theta = p.run.theta();
    for method in &methods {
        for reference in &references {
            let source = match reference {
                ReferenceKind::None => ReferenceSource::None,
                ReferenceKind::Average => ReferenceSource::Average {
                    dataset: dataset.clone(),
                },
                ReferenceKind::Kernel => ReferenceSource::Kernel {
                    params,
                    dataset: dataset.clone(),
                },
            };
            let mut oco = p.run.oco;
            oco.horizon = test.horizon;
            let inputs = RunInputs {
                config: &p.system,
                hull: &p.hull,
                scenario: &test,
                method: *method,
                reference: source,
                oco,
                theta_override: Some(if *reference == ReferenceKind::None {
                    0.0
                } else {
                    theta
                }),
                mpc_horizon: p.run.mpc.horizon_hours,
                mpc_mape: p.run.mpc.mape,
                forecast_seed: derive_seed(p.run.seed, "forecast", 0),
                faults: &p.run.faults,
                training_scenarios: &ok_scenarios,
                wind_capacity_kw: p.run.scenarios.wind_capacity_kw,
                solar_capacity_kw: p.run.scenarios.solar_capacity_kw,
                settings: p.run.solver,
            };
            let cell = format!("{}-{}", method, reference);
            match online::run_online(&inputs) {
                Ok(log) => {
                    let summary = metrics::summarize(&log, &p.system, Some(&oracle));
                    let cell_theta = if *reference == ReferenceKind::None { 0.0 } else { theta };
                    let report = metrics::analyze_run(
                        &log,
                        &oracle,
                        &p.system,
                        &p.hull,
                        cell_theta,
                        p.run.oco.gamma0,
                        &p.run.solver,
                    );
                    match report {
                        Ok(report) => {
                            artifacts::write_json(
                                &common.out.join(format!("regret-{cell}.json")),
                                &report,
                            )?;
                            artifacts::write_regret_series_csv(
                                &common.out.join(format!("regret-{cell}.csv")),
                                &report,
                            )?;
                            rows.push(BenchRow::from_parts(
                                &method.to_string(),
                                &reference.to_string(),
                                &summary,
                                Some(&report),
                            ));
                        }
                        Err(e) => {
                            cell_errors.push(ErrorRecord {
                                scenario_id: cell.clone(),
                                error: format!("regret analysis: {e}"),
                            });
                            rows.push(BenchRow::from_parts(
                                &method.to_string(),
                                &reference.to_string(),
                                &summary,
                                None,
                            ));
                        }
                    }
                    println!(
                        "{cell}: cost {:.2} $, load loss {:.2} kWh",
                        rows.last().unwrap().cost_usd,
                        rows.last().unwrap().load_loss_kwh
                    );
                }
                Err(e) => {
                    eprintln!("{cell}: {e}");
                    cell_errors.push(ErrorRecord {
                        scenario_id: cell,
                        error: e.to_string(),
                    });
                }
            }
        }
    }

    artifacts::write_bench_table(&common.out.join("comparison.csv"), &rows)?;
    let mut manifest = RunManifest::new(
        p.config_sha,
        p.run.seed,
        p.hull.samples,
        p.run.solver,
    );
    manifest.record(&common.out, "comparison.csv")?;
    for row in &rows[1..] {
        let cell = format!("{}-{}", row.method, row.reference);
        let name = format!("regret-{cell}.json");
        if common.out.join(&name).exists() {
            manifest.record(&common.out, &name)?;
            manifest.record(&common.out, &format!("regret-{cell}.csv"))?;
        }
    }
    if !cell_errors.is_empty() {
        artifacts::write_json(&common.out.join("errors.json"), &cell_errors)?;
        manifest.record(&common.out, "errors.json")?;
    }
    manifest.write(&common.out)?;
    println!("wrote comparison table with {} rows", rows.len());
    Ok(if cell_errors.is_empty() { 0 } else { 2 })
}

/// Wrap a hindsight bundle as a run log so it can share the summary and
/// regret plumbing (settlement is the identity for a feasible plan under
/// perfect foresight).
fn perfect_foresight_log(
    oracle: &TrajectoryBundle,
    test: &ScenarioSeries,
    system: &MicrogridConfig,
    hull: &ConvexHullModel,
) -> online::RunLog {
    let steps = oracle
        .decisions
        .iter()
        .enumerate()
        .map(|(t, d)| online::OnlineStepLog {
            t,
            reference_kg: None,
            committed: Vec::new(),
            expert_losses: Vec::new(),
            expert_weights: Vec::new(),
            queue_deficit: Vec::new(),
            queue_surplus: Vec::new(),
            realized_load_kw: test.load_kw[t],
            realized_renewable_kw: test.renewable_kw[t],
            settled: d.clone(),
            realized_cost: d.stage_cost(system, hull),
            residual: [0.0, 0.0],
        })
        .collect();
    online::RunLog {
        scenario_id: test.id.clone(),
        method: Method::Mpc,
        reference: ReferenceKind::None,
        steps,
        events: vec!["perfect foresight".into()],
        wall_time_s: oracle.wall_time_s,
        final_state: mgrid_core::model::SystemState {
            t: test.horizon,
            bes_soc_kwh: oracle.decisions.last().map_or(0.0, |d| d.bes_soc_kwh),
            ldes_soc_kg: oracle.decisions.last().map_or(0.0, |d| d.ldes_soc_kg),
        },
    }
}
