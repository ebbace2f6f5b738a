//! Online SoC reference learning by kernel regression.
//!
//! The learner regresses the hindsight-optimal LDES SoC (stored as a
//! fraction of capacity) on a rolling window of normalized netload and SoC
//! history. Offline training selects the window size and bandwidth by
//! leave-one-scenario-out validation on a (W, sigma) grid; the closed-form
//! bandwidth only seeds the sigma grid because its constants (Lipschitz
//! surrogate, residual variance, input density) are estimated, not known.
//! The estimated-MSE decomposition into bias and variance is reported for
//! diagnostics; selection always uses the empirical MSE.

use crate::model::MicrogridConfig;
use crate::scenario::{self, NormStats, ScenarioSeries};
use crate::solver::TrajectoryBundle;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("empty history: need at least one observed (netload, soc) pair")]
    EmptyHistory,
    #[error("need at least 2 scenarios, got {0}")]
    TooFewScenarios(usize),
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset shape error: {0}")]
    BadDataset(String),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
}

/// Training data: per scenario, normalized netload and hindsight SoC as a
/// fraction of LDES capacity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionDataset {
    /// Normalized netload, `[scenario][t]`.
    pub netload: Vec<Vec<f64>>,
    /// Hindsight-optimal LDES SoC fraction, `[scenario][t]`.
    pub soc_frac: Vec<Vec<f64>>,
    /// Netload normalization statistics (training scenarios only).
    pub stats: NormStats,
    pub ldes_capacity_kg: f64,
}

impl RegressionDataset {
    pub fn scenario_count(&self) -> usize {
        self.netload.len()
    }

    pub fn horizon(&self) -> usize {
        self.netload.first().map_or(0, |v| v.len())
    }

    /// Assemble a dataset from scenarios and their hindsight trajectories.
    pub fn from_bundles(
        scenarios: &[ScenarioSeries],
        bundles: &[TrajectoryBundle],
        config: &MicrogridConfig,
    ) -> Result<Self, LearnerError> {
        if scenarios.len() != bundles.len() {
            return Err(LearnerError::BadDataset(format!(
                "{} scenarios but {} bundles",
                scenarios.len(),
                bundles.len()
            )));
        }
        if scenarios.len() < 2 {
            return Err(LearnerError::TooFewScenarios(scenarios.len()));
        }
        let stats = scenario::netload_stats(scenarios)?;
        let cap = config.ldes.soc_max_kg;
        let mut netload = Vec::with_capacity(scenarios.len());
        let mut soc = Vec::with_capacity(scenarios.len());
        for (s, b) in scenarios.iter().zip(bundles) {
            let net = scenario::compute_netload(s, Some(stats))?;
            if b.decisions.len() != s.horizon {
                return Err(LearnerError::BadDataset(format!(
                    "bundle {} horizon {} != scenario horizon {}",
                    b.scenario_id,
                    b.decisions.len(),
                    s.horizon
                )));
            }
            netload.push(net.values);
            soc.push(b.ldes_soc_path().iter().map(|h| h / cap).collect());
        }
        Ok(Self {
            netload,
            soc_frac: soc,
            stats,
            ldes_capacity_kg: cap,
        })
    }
}

/// Kernel families with their one-dimensional moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Epanechnikov,
    Box,
}

impl KernelFamily {
    /// `int v^2 K(v) dv` for the normalized 1-D kernel.
    pub fn second_moment(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0,
            KernelFamily::Epanechnikov => 0.2,
            KernelFamily::Box => 1.0 / 3.0,
        }
    }

    /// `int K^2(v) dv` for the normalized 1-D kernel.
    pub fn square_integral(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0 / (2.0 * std::f64::consts::PI.sqrt()),
            KernelFamily::Epanechnikov => 0.6,
            KernelFamily::Box => 0.5,
        }
    }

    /// Unnormalized kernel response for a squared distance already scaled by
    /// `W sigma^2` (the window-modified denominator of the similarity kernel).
    fn response(self, u2: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-u2).exp(),
            KernelFamily::Epanechnikov => (1.0 - u2).max(0.0),
            KernelFamily::Box => {
                if u2 <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Tuned hyperparameters of the kernel regressor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KernelHyperParams {
    /// Window size W (hours).
    pub window: usize,
    /// Bandwidth sigma (dimensionless).
    pub bandwidth: f64,
    pub family: KernelFamily,
}

impl KernelHyperParams {
    /// Input dimension iota = 2W.
    pub fn input_dim(&self) -> usize {
        2 * self.window
    }
}

/// Normalized scenario weights (a point on the probability simplex).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn uniform(s: usize) -> Self {
        WeightVector(vec![1.0 / s as f64; s])
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// One evaluated grid point of the training search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MseGridPoint {
    pub window: usize,
    pub sigma: f64,
    pub mse: f64,
}

/// Training diagnostics: the evaluated grid, the selected pair, and the
/// estimated constants feeding the closed-form bandwidth seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseReport {
    pub grid: Vec<MseGridPoint>,
    pub selected_window: usize,
    pub selected_sigma: f64,
    /// Lipschitz surrogate (max finite-difference slope of SoC vs input).
    pub lipschitz: f64,
    /// Residual variance of a pilot fit.
    pub noise_var: f64,
    /// Average kernel density proxy at validation points.
    pub density: f64,
    /// Closed-form bandwidth seed per candidate window.
    pub sigma_seeds: Vec<(usize, f64)>,
    /// Set when the ensemble is degenerate (all scenarios identical); the
    /// selection falls back to the smallest grid entries.
    pub degenerate: bool,
}

impl MseReport {
    /// Minimum MSE per window, in candidate order (the Fig. 4(a)-style curve).
    pub fn mse_by_window(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for p in &self.grid {
            match out.iter_mut().find(|(w, _)| *w == p.window) {
                Some((_, best)) => *best = best.min(p.mse),
                None => out.push((p.window, p.mse)),
            }
        }
        out
    }
}

/// Assemble the interleaved input vector `(netload, soc)` over the last `w`
/// hours before hour `t` (0-based). For `t < w` the window is left-padded by
/// repeating the earliest available pair, so the length is always `2w`.
pub fn build_input_vector(
    netload: &[f64],
    soc: &[f64],
    t: usize,
    w: usize,
) -> Result<Vec<f64>, LearnerError> {
    if t == 0 || netload.is_empty() || soc.is_empty() {
        return Err(LearnerError::EmptyHistory);
    }
    let avail = t.min(netload.len()).min(soc.len());
    let mut xi = Vec::with_capacity(2 * w);
    for k in 0..w {
        // hour index t-w+k, clamped into the available history
        let idx = (t + k).saturating_sub(w).min(avail - 1);
        xi.push(netload[idx]);
        xi.push(soc[idx]);
    }
    Ok(xi)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Kernel weights of the observed input against each scenario's training
/// input at the same hour. Returns the simplex weights and a flag marking an
/// underflow fallback to uniform weights.
pub fn compute_weights(
    xi: &[f64],
    train_inputs: &[Vec<f64>],
    params: &KernelHyperParams,
) -> Result<(WeightVector, bool), LearnerError> {
    let dim = params.input_dim();
    if xi.len() != dim {
        return Err(LearnerError::DimensionMismatch {
            expected: dim,
            got: xi.len(),
        });
    }
    let denom = params.window as f64 * params.bandwidth * params.bandwidth;
    let mut u2: Vec<f64> = Vec::with_capacity(train_inputs.len());
    for inp in train_inputs {
        if inp.len() != dim {
            return Err(LearnerError::DimensionMismatch {
                expected: dim,
                got: inp.len(),
            });
        }
        u2.push(squared_distance(xi, inp) / denom);
    }
    // shift by the minimum scaled distance; for the Gaussian family this is
    // the log-sum-exp guard and leaves normalized weights unchanged
    let raw: Vec<f64> = if params.family == KernelFamily::Gaussian {
        let m = u2.iter().copied().fold(f64::INFINITY, f64::min);
        u2.iter().map(|&d| params.family.response(d - m)).collect()
    } else {
        u2.iter().map(|&d| params.family.response(d)).collect()
    };
    let total: f64 = raw.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Ok((WeightVector::uniform(train_inputs.len()), true));
    }
    Ok((
        WeightVector(raw.iter().map(|r| r / total).collect()),
        false,
    ))
}

/// Weighted average of the hindsight SoC column at hour `t`, in kg.
pub fn predict_reference(
    weights: &WeightVector,
    dataset: &RegressionDataset,
    t: usize,
) -> f64 {
    let frac: f64 = weights
        .0
        .iter()
        .zip(&dataset.soc_frac)
        .map(|(w, path)| w * path[t])
        .sum();
    frac * dataset.ldes_capacity_kg
}

/// Rule-based baseline: uniform-weight average of the hindsight SoC column.
pub fn average_reference(dataset: &RegressionDataset, t: usize) -> f64 {
    predict_reference(
        &WeightVector::uniform(dataset.scenario_count()),
        dataset,
        t,
    )
}

/// The two terms of the estimated-MSE decomposition: `(bias^2, variance)`.
///
/// Diagnostics only; hyperparameter selection uses the empirical MSE.
pub fn mse_components(
    params: &KernelHyperParams,
    scenario_count: usize,
    lipschitz: f64,
    noise_var: f64,
    density: f64,
) -> (f64, f64) {
    let iota = params.input_dim() as f64;
    let sigma = params.bandwidth;
    let m2 = params.family.second_moment();
    let k2 = params.family.square_integral();
    let bias2 = sigma.powi(4) / 4.0 * m2 * m2 * lipschitz * lipschitz;
    let variance = noise_var * k2 / (scenario_count as f64 * sigma.powf(iota) * density);
    (bias2, variance)
}

/// Closed-form bandwidth seed for a candidate window, using the estimated
/// constants. `n_samples` is the training sample count (the ambiguous N of
/// the published formula is read as the per-slice sample count).
pub fn sigma_seed(
    window: usize,
    family: KernelFamily,
    lipschitz: f64,
    noise_var: f64,
    density: f64,
    n_samples: usize,
) -> f64 {
    let w = window as f64;
    let m2 = family.second_moment();
    let k2 = family.square_integral();
    let numer = 2.0 * w * noise_var * k2;
    let denom = n_samples as f64 * lipschitz * lipschitz * m2 * m2 * density;
    let base: f64 = (numer / denom).max(1e-12);
    base.powf(1.0 / (2.0 * w + 4.0))
}

/// Options for offline training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Multiplicative factors applied to the closed-form seed to form the
    /// per-window sigma grid.
    pub sigma_factors: Vec<f64>,
    /// Validation subsampling stride over hours (1 = every hour).
    pub validation_stride: usize,
    pub family: KernelFamily,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            sigma_factors: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            validation_stride: 4,
            family: KernelFamily::Gaussian,
        }
    }
}

/// Leave-one-scenario-out grid search over window sizes and bandwidths.
pub fn train(
    dataset: &RegressionDataset,
    window_candidates: &[usize],
    options: &TrainOptions,
) -> Result<(KernelHyperParams, MseReport), LearnerError> {
    let s_count = dataset.scenario_count();
    if s_count < 2 {
        return Err(LearnerError::TooFewScenarios(s_count));
    }
    if window_candidates.is_empty() || options.sigma_factors.is_empty() {
        return Err(LearnerError::EmptyCandidates);
    }
    let horizon = dataset.horizon();
    let stride = options.validation_stride.max(1);
    let val_times: Vec<usize> = (1..horizon).step_by(stride).collect();

    // Estimated constants for the closed-form seed, from a mid-grid pilot.
    let pilot_w = window_candidates[window_candidates.len() / 2];
    let (lipschitz, degenerate) = estimate_lipschitz(dataset, pilot_w, &val_times);
    if degenerate {
        let params = KernelHyperParams {
            window: window_candidates[0],
            bandwidth: options.sigma_factors[0].max(1e-6),
            family: options.family,
        };
        let report = MseReport {
            grid: Vec::new(),
            selected_window: params.window,
            selected_sigma: params.bandwidth,
            lipschitz: 0.0,
            noise_var: 0.0,
            density: 0.0,
            sigma_seeds: Vec::new(),
            degenerate: true,
        };
        return Ok((params, report));
    }
    let pilot_sigma = pilot_bandwidth(dataset, pilot_w, &val_times);
    let pilot_params = KernelHyperParams {
        window: pilot_w,
        bandwidth: pilot_sigma,
        family: options.family,
    };
    let noise_var = loso_mse(dataset, &pilot_params, &val_times).max(1e-9);
    let density = estimate_density(dataset, &pilot_params, &val_times).max(1e-9);

    let mut sigma_seeds = Vec::new();
    let mut grid_points: Vec<KernelHyperParams> = Vec::new();
    for &w in window_candidates {
        let seed = sigma_seed(w, options.family, lipschitz, noise_var, density, s_count);
        sigma_seeds.push((w, seed));
        for &f in &options.sigma_factors {
            grid_points.push(KernelHyperParams {
                window: w,
                bandwidth: (seed * f).max(1e-9),
                family: options.family,
            });
        }
    }

    let grid: Vec<MseGridPoint> = grid_points
        .par_iter()
        .map(|params| MseGridPoint {
            window: params.window,
            sigma: params.bandwidth,
            mse: loso_mse(dataset, params, &val_times),
        })
        .collect();

    let best = grid
        .iter()
        .min_by(|a, b| a.mse.partial_cmp(&b.mse).expect("finite mse"))
        .expect("grid is nonempty");
    let params = KernelHyperParams {
        window: best.window,
        bandwidth: best.sigma,
        family: options.family,
    };
    let report = MseReport {
        selected_window: best.window,
        selected_sigma: best.sigma,
        grid,
        lipschitz,
        noise_var,
        density,
        sigma_seeds,
        degenerate: false,
    };
    Ok((params, report))
}

/// Leave-one-scenario-out empirical MSE of the regressor (SoC fraction units).
pub fn loso_mse(
    dataset: &RegressionDataset,
    params: &KernelHyperParams,
    val_times: &[usize],
) -> f64 {
    let s_count = dataset.scenario_count();
    let mut total = 0.0;
    let mut n = 0usize;
    for t in val_times {
        let t = *t;
        let inputs: Vec<Vec<f64>> = (0..s_count)
            .map(|s| {
                build_input_vector(&dataset.netload[s], &dataset.soc_frac[s], t, params.window)
                    .expect("t >= 1 by construction")
            })
            .collect();
        for v in 0..s_count {
            let others: Vec<Vec<f64>> = (0..s_count)
                .filter(|s| *s != v)
                .map(|s| inputs[s].clone())
                .collect();
            let (weights, _) =
                compute_weights(&inputs[v], &others, params).expect("dimensions agree");
            let mut pred = 0.0;
            let mut k = 0;
            for s in (0..s_count).filter(|s| *s != v) {
                pred += weights.0[k] * dataset.soc_frac[s][t];
                k += 1;
            }
            let err = pred - dataset.soc_frac[v][t];
            total += err * err;
            n += 1;
        }
    }
    total / n.max(1) as f64
}

/// Max finite-difference slope of the regressed SoC against input distance
/// over same-hour scenario pairs; flags a degenerate (all identical) ensemble.
fn estimate_lipschitz(
    dataset: &RegressionDataset,
    w: usize,
    val_times: &[usize],
) -> (f64, bool) {
    let s_count = dataset.scenario_count();
    let mut best: f64 = 0.0;
    let mut any_separated = false;
    for t in val_times.iter().step_by(4) {
        let t = *t;
        let inputs: Vec<Vec<f64>> = (0..s_count)
            .map(|s| {
                build_input_vector(&dataset.netload[s], &dataset.soc_frac[s], t, w)
                    .expect("t >= 1")
            })
            .collect();
        for a in 0..s_count {
            for b in (a + 1)..s_count {
                let d2 = squared_distance(&inputs[a], &inputs[b]);
                if d2 > 1e-18 {
                    any_separated = true;
                    let dy = (dataset.soc_frac[a][t] - dataset.soc_frac[b][t]).abs();
                    best = best.max(dy / d2.sqrt());
                }
            }
        }
    }
    (best.max(1e-9), !any_separated)
}

/// Median same-hour pairwise distance, scaled into bandwidth units.
fn pilot_bandwidth(dataset: &RegressionDataset, w: usize, val_times: &[usize]) -> f64 {
    let s_count = dataset.scenario_count();
    let mut d2s = Vec::new();
    for t in val_times.iter().step_by(8) {
        let t = *t;
        let inputs: Vec<Vec<f64>> = (0..s_count)
            .map(|s| {
                build_input_vector(&dataset.netload[s], &dataset.soc_frac[s], t, w)
                    .expect("t >= 1")
            })
            .collect();
        for a in 0..s_count {
            for b in (a + 1)..s_count {
                d2s.push(squared_distance(&inputs[a], &inputs[b]));
            }
        }
    }
    d2s.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    let median = d2s.get(d2s.len() / 2).copied().unwrap_or(1.0);
    (median / w as f64).sqrt().max(1e-6)
}

/// Average kernel density proxy at validation inputs.
fn estimate_density(
    dataset: &RegressionDataset,
    params: &KernelHyperParams,
    val_times: &[usize],
) -> f64 {
    let s_count = dataset.scenario_count();
    let denom = params.window as f64 * params.bandwidth * params.bandwidth;
    let mut total = 0.0;
    let mut n = 0usize;
    for t in val_times.iter().step_by(8) {
        let t = *t;
        let inputs: Vec<Vec<f64>> = (0..s_count)
            .map(|s| {
                build_input_vector(&dataset.netload[s], &dataset.soc_frac[s], t, params.window)
                    .expect("t >= 1")
            })
            .collect();
        for v in 0..s_count {
            let mut acc = 0.0;
            for s in 0..s_count {
                if s != v {
                    acc += params
                        .family
                        .response(squared_distance(&inputs[v], &inputs[s]) / denom);
                }
            }
            total += acc / (s_count - 1) as f64;
            n += 1;
        }
    }
    total / n.max(1) as f64
}

/// Synthetic regression ensemble from a known smooth map: the SoC fraction
/// responds to the trailing mean of netload over `informative_window` hours
/// plus observation noise. Used by learning-shape tests, where the ground
/// truth must have one informative window length.
pub fn synthetic_known_map_dataset(
    seed: u64,
    scenario_count: usize,
    horizon: usize,
    informative_window: usize,
    noise_std: f64,
) -> RegressionDataset {
    use rand::prelude::*;
    let mut netload = Vec::with_capacity(scenario_count);
    let mut soc = Vec::with_capacity(scenario_count);
    for s in 0..scenario_count {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::config::derive_seed(
            seed, "known-map", s as u64,
        ));
        let mut x = 0.0f64;
        let phi: f64 = 0.9;
        let mut net = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            x = phi * x + (1.0 - phi * phi).sqrt() * z;
            net.push(x);
        }
        let mut path = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let lo = t.saturating_sub(informative_window - 1);
            let mean: f64 = net[lo..=t].iter().sum::<f64>() / (t - lo + 1) as f64;
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            let y = 0.5 + 0.35 * (1.5 * mean).tanh() + noise_std * z;
            path.push(y.clamp(0.0, 1.0));
        }
        netload.push(net);
        soc.push(path);
    }
    RegressionDataset {
        netload,
        soc_frac: soc,
        stats: NormStats { mean: 0.0, std: 1.0 },
        ldes_capacity_kg: 1000.0,
    }
}
