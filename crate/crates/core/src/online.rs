//! Non-anticipatory per-hour dispatch.
//!
//! Implements the adaptive virtual-queue online convex optimization
//! controller with expert tracking: every hour, each expert updates its
//! virtual queue from the previous hour's clipped balance residual, takes a
//! proximal step against the previous hour's cost gradient, and an
//! exponential-weights meta layer aggregates the experts. The decision for
//! hour t is computed strictly from information through hour t-1; realized
//! data enters only through [`settle`], which converts a committed decision
//! into a physically feasible outcome.
//!
//! The relaxed constraint set is the power-balance equation written as a
//! surplus/deficit inequality pair (the only constraint needing unrealized
//! data). The static per-step set X covers the device boxes, both SoC boxes
//! given the known previous state, and the conversion-weight simplices, with
//! curtailment and shedding encoded as fractions of realized values so X is
//! time-invariant.

use crate::learner::{
    self, KernelHyperParams, RegressionDataset, WeightVector,
};
use crate::model::{ConvexHullModel, MicrogridConfig, SystemState};
use crate::qp::{self, ConstraintGroup, ConvexProgram, LinearRow, SolverSettings};
use crate::scenario::{self, ScenarioSeries};
use crate::solver::{
    self, ContractMode, DispatchDecision, PeriodCaps, SolveError, Tracking, TrajectoryBundle,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OnlineError {
    #[error("invalid OCO configuration: {0}")]
    BadConfig(String),
    #[error("initial iterate violates the feasible set by {0:.3e}")]
    InfeasibleInit(f64),
    #[error("negative residual component {0} passed to queue update")]
    NegativeResidual(f64),
    #[error("expert {expert} proximal step failed: {source}")]
    StepFailure {
        expert: usize,
        #[source]
        source: qp::QpError,
    },
    #[error("hard infeasibility at t={t}: {source}")]
    HardInfeasible {
        t: usize,
        #[source]
        source: SolveError,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Learner(#[from] learner::LearnerError),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
}

/// Parameters of the adaptive OCO schedule. The derived quantities follow
/// the published schedule: `alpha_{i,t} = alpha0 2^{i-1} / t^c`,
/// `beta_{i,t} = beta0 / sqrt(alpha_{i,t})`, `gamma = gamma0 / T^c`,
/// `theta = theta0 T^c`, `M = M0 T^c`, `S = S0 T^c`,
/// `N = floor(kappa log2(1+T)) + 1`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct OcoConfig {
    pub alpha0: f64,
    pub beta0: f64,
    pub gamma0: f64,
    /// Exponent c in (0, 1).
    pub c: f64,
    /// Expert-ladder exponent kappa in [0, c].
    pub kappa: f64,
    pub theta0: f64,
    pub m0: f64,
    pub s0: f64,
    pub horizon: usize,
}

impl Default for OcoConfig {
    fn default() -> Self {
        Self {
            alpha0: 2e-4,
            beta0: 0.05,
            gamma0: 2e-3,
            c: 0.5,
            kappa: 0.5,
            theta0: 2e-5,
            m0: 0.07,
            s0: 0.09,
            horizon: 8760,
        }
    }
}

impl OcoConfig {
    pub fn validate(&self) -> Result<(), OnlineError> {
        let mut problems = Vec::new();
        if !(self.alpha0 > 0.0) {
            problems.push("alpha0 must be > 0");
        }
        if !(self.beta0 > 0.0) {
            problems.push("beta0 must be > 0");
        }
        if !(self.gamma0 > 0.0) {
            problems.push("gamma0 must be > 0");
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            problems.push("c must lie in (0, 1)");
        }
        if !(self.kappa >= 0.0 && self.kappa <= self.c) {
            problems.push("kappa must lie in [0, c]");
        }
        if !(self.theta0 > 0.0) {
            problems.push("theta0 must be > 0");
        }
        if !(self.m0 > 0.0) {
            problems.push("m0 must be > 0");
        }
        if !(self.s0 > 0.0) {
            problems.push("s0 must be > 0");
        }
        if self.horizon == 0 {
            problems.push("horizon must be positive");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(OnlineError::BadConfig(problems.join("; ")))
        }
    }

    /// Number of experts `N = floor(kappa log2(1+T)) + 1`.
    pub fn n_experts(&self) -> usize {
        (self.kappa * ((1 + self.horizon) as f64).log2()).floor() as usize + 1
    }

    /// Step size of expert `i` (1-based) at hour `t` (1-based).
    pub fn alpha(&self, expert: usize, t: usize) -> f64 {
        self.alpha0 * 2f64.powi(expert as i32 - 1) / (t as f64).powf(self.c)
    }

    /// Queue step of expert `i` at hour `t`.
    pub fn beta(&self, expert: usize, t: usize) -> f64 {
        self.beta0 / self.alpha(expert, t).sqrt()
    }

    /// Meta-learning rate `gamma = gamma0 / T^c`.
    pub fn gamma(&self) -> f64 {
        self.gamma0 / (self.horizon as f64).powf(self.c)
    }

    /// Tracking penalty `theta = theta0 T^c` ($ / kg^2).
    pub fn theta(&self) -> f64 {
        self.theta0 * (self.horizon as f64).powf(self.c)
    }

    /// Hull sample schedule `M = max(2, round(M0 T^c))`.
    pub fn hull_samples(&self) -> usize {
        (self.m0 * (self.horizon as f64).powf(self.c)).round().max(2.0) as usize
    }

    /// Scenario-count schedule `S = max(2, round(S0 T^c))`.
    pub fn scenario_count(&self) -> usize {
        (self.s0 * (self.horizon as f64).powf(self.c)).round().max(2.0) as usize
    }

    /// Initial meta-weights `rho_{i,1} = (N+1) / (i (i+1) N)`.
    pub fn initial_weights(&self) -> Vec<f64> {
        let n = self.n_experts();
        (1..=n)
            .map(|i| (n as f64 + 1.0) / (i as f64 * (i as f64 + 1.0) * n as f64))
            .collect()
    }
}

/// Which long-term reference guides the tracking penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Kernel,
    Average,
    None,
}

impl std::fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReferenceKind::Kernel => "kernel",
            ReferenceKind::Average => "average",
            ReferenceKind::None => "none",
        })
    }
}

/// Tracking penalty configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrackingConfig {
    /// Quadratic penalty weight ($ / kg^2).
    pub theta: f64,
    pub reference: ReferenceKind,
}

/// Decision vector of the controller:
/// `[phi_r, phi_l, d, b+, b-, e, h, lambda_charge.., lambda_discharge..]`
/// where `phi_r`, `phi_l` are curtailment/shedding fractions of the realized
/// renewable and load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVec(pub Vec<f64>);

pub const CV_PHI_R: usize = 0;
pub const CV_PHI_L: usize = 1;
pub const CV_DG: usize = 2;
pub const CV_BES_DIS: usize = 3;
pub const CV_BES_CHG: usize = 4;
pub const CV_BES_SOC: usize = 5;
pub const CV_LDES_SOC: usize = 6;
pub const CV_FIXED: usize = 7;

impl ControlVec {
    pub fn dim(hull_samples: usize) -> usize {
        CV_FIXED + 2 * hull_samples
    }

    pub fn hull_samples(&self) -> usize {
        (self.0.len() - CV_FIXED) / 2
    }

    pub fn charge_weights(&self) -> &[f64] {
        &self.0[CV_FIXED..CV_FIXED + self.hull_samples()]
    }

    pub fn discharge_weights(&self) -> &[f64] {
        &self.0[CV_FIXED + self.hull_samples()..]
    }

    /// Idle feasible point at the given state: full renewable acceptance, no
    /// shedding, DG at its floor, storage at rest.
    pub fn idle(config: &MicrogridConfig, hull: &ConvexHullModel, state: &SystemState) -> Self {
        let m = hull.samples;
        let mut z = vec![0.0; Self::dim(m)];
        z[CV_PHI_R] = 1.0;
        z[CV_DG] = config.dg.p_min_kw;
        z[CV_BES_SOC] = state.bes_soc_kwh;
        z[CV_LDES_SOC] = state.ldes_soc_kg;
        z[CV_FIXED] = 1.0; // zero-power hull vertex
        z[CV_FIXED + m] = 1.0;
        ControlVec(z)
    }

    /// Materialize the committed physical decision against realized data.
    pub fn materialize(
        &self,
        load_kw: f64,
        renewable_kw: f64,
    ) -> DispatchDecision {
        let m = self.hull_samples();
        DispatchDecision {
            renewable_kw: self.0[CV_PHI_R] * renewable_kw,
            shed_kw: self.0[CV_PHI_L] * load_kw,
            dg_kw: self.0[CV_DG],
            bes_discharge_kw: self.0[CV_BES_DIS],
            bes_charge_kw: self.0[CV_BES_CHG],
            charge_weights: self.0[CV_FIXED..CV_FIXED + m].to_vec(),
            discharge_weights: self.0[CV_FIXED + m..].to_vec(),
            bes_soc_kwh: self.0[CV_BES_SOC],
            ldes_soc_kg: self.0[CV_LDES_SOC],
        }
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// The static per-step feasible set X given the known previous state.
///
/// Coordinates live in physical units; `spans` holds each coordinate's
/// natural width (device rating, SoC range, or 1 for fractions and
/// weights). The proximal metric is Euclidean in span-normalized
/// coordinates, which is what makes one step-size ladder serve fractions
/// and kilogram-scale coordinates alike.
#[derive(Debug, Clone)]
pub struct DecisionSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Equality rows tying SoC coordinates to the previous state and the
    /// conversion weights to their simplices.
    pub equalities: Vec<(Vec<(usize, f64)>, f64)>,
    pub hull_samples: usize,
    /// Per-coordinate normalization widths.
    pub spans: Vec<f64>,
}

impl DecisionSet {
    pub fn build(
        config: &MicrogridConfig,
        hull: &ConvexHullModel,
        state: &SystemState,
        caps: Option<(f64, f64, f64)>,
    ) -> Self {
        let m = hull.samples;
        let n = ControlVec::dim(m);
        let (dg_cap, bes_cap, ldes_cap) = caps.unwrap_or((
            config.dg.p_max_kw,
            config.bes.p_max_kw,
            config.ldes.p_max_kw,
        ));
        let mut lower = vec![0.0; n];
        let mut upper = vec![1.0; n];
        upper[CV_DG] = dg_cap;
        lower[CV_DG] = config.dg.p_min_kw.min(dg_cap);
        upper[CV_BES_DIS] = bes_cap;
        upper[CV_BES_CHG] = bes_cap;
        lower[CV_BES_SOC] = config.bes.soc_min_kwh;
        upper[CV_BES_SOC] = config.bes.soc_max_kwh;
        lower[CV_LDES_SOC] = config.ldes.soc_min_kg;
        upper[CV_LDES_SOC] = config.ldes.soc_max_kg;

        let mut equalities = Vec::with_capacity(4);
        equalities.push((
            vec![
                (CV_BES_SOC, 1.0),
                (CV_BES_CHG, -config.bes.eta_charge),
                (CV_BES_DIS, 1.0 / config.bes.eta_discharge),
            ],
            state.bes_soc_kwh,
        ));
        let mut hdyn = vec![(CV_LDES_SOC, 1.0)];
        for (j, (rate_c, rate_d)) in hull
            .charge
            .rates()
            .zip(hull.discharge.rates())
            .enumerate()
        {
            hdyn.push((CV_FIXED + j, -rate_c));
            hdyn.push((CV_FIXED + m + j, rate_d));
        }
        equalities.push((hdyn, state.ldes_soc_kg));
        equalities.push((
            (0..m).map(|j| (CV_FIXED + j, 1.0)).collect(),
            1.0,
        ));
        equalities.push((
            (0..m).map(|j| (CV_FIXED + m + j, 1.0)).collect(),
            1.0,
        ));
        let mut spans = vec![1.0; n];
        spans[CV_DG] = (config.dg.p_max_kw - config.dg.p_min_kw).max(1e-9);
        spans[CV_BES_DIS] = config.bes.p_max_kw.max(1e-9);
        spans[CV_BES_CHG] = config.bes.p_max_kw.max(1e-9);
        spans[CV_BES_SOC] = (config.bes.soc_max_kwh - config.bes.soc_min_kwh).max(1e-9);
        spans[CV_LDES_SOC] = (config.ldes.soc_max_kg - config.ldes.soc_min_kg).max(1e-9);
        let mut set = Self {
            lower,
            upper,
            equalities,
            hull_samples: m,
            spans,
        };
        // LDES power derate rows are encoded by shrinking the weight boxes
        // when a single vertex already exceeds the cap; finer caps are
        // handled by the solver-side assemblies.
        if ldes_cap < config.ldes.p_max_kw {
            let charge_p: Vec<f64> = hull.charge.powers().collect();
            let dis_p: Vec<f64> = hull.discharge.powers().collect();
            for j in 0..m {
                if charge_p[j] > ldes_cap {
                    set.upper[CV_FIXED + j] = 0.0;
                }
                if dis_p[j] > ldes_cap {
                    set.upper[CV_FIXED + m + j] = 0.0;
                }
            }
        }
        set
    }

    /// Largest violation of the set's boxes and equalities at `z`.
    pub fn violation(&self, z: &ControlVec) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.lower.len() {
            worst = worst
                .max(self.lower[i] - z.0[i])
                .max(z.0[i] - self.upper[i]);
        }
        for (terms, rhs) in &self.equalities {
            let lhs: f64 = terms.iter().map(|&(i, c)| c * z.0[i]).sum();
            worst = worst.max((lhs - rhs).abs());
        }
        worst
    }

    /// Diameter of the box part of the set in the span-normalized metric
    /// (simplices add sqrt(2) each).
    pub fn diameter(&self) -> f64 {
        let box_sq: f64 = self
            .lower
            .iter()
            .zip(&self.upper)
            .zip(&self.spans)
            .map(|((lo, hi), span)| {
                let w = ((hi - lo) / span).max(0.0);
                w * w
            })
            .sum();
        box_sq.sqrt()
    }

    /// Span-normalized distance between two decision vectors.
    pub fn distance(&self, a: &ControlVec, b: &ControlVec) -> f64 {
        a.0.iter()
            .zip(&b.0)
            .zip(&self.spans)
            .map(|((x, y), s)| {
                let d = (x - y) / s;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

}

/// Power-balance description for a given hour's data: `supply(z) = a . z`,
/// relaxed as the inequality pair `g = (load - supply, supply - load)`.
#[derive(Debug, Clone)]
pub struct BalanceRows {
    pub coeffs: Vec<f64>,
    pub load_kw: f64,
}

impl BalanceRows {
    pub fn build(hull: &ConvexHullModel, load_kw: f64, renewable_kw: f64) -> Self {
        let m = hull.samples;
        let mut a = vec![0.0; ControlVec::dim(m)];
        a[CV_PHI_R] = renewable_kw;
        a[CV_PHI_L] = load_kw;
        a[CV_DG] = 1.0;
        a[CV_BES_DIS] = 1.0;
        a[CV_BES_CHG] = -1.0;
        for (j, p) in hull.charge.powers().enumerate() {
            a[CV_FIXED + j] = -p;
        }
        for (j, p) in hull.discharge.powers().enumerate() {
            a[CV_FIXED + m + j] = p;
        }
        Self {
            coeffs: a,
            load_kw,
        }
    }

    pub fn supply(&self, z: &ControlVec) -> f64 {
        self.coeffs.iter().zip(&z.0).map(|(a, x)| a * x).sum()
    }

    /// Clipped constraint value `[g(z)]_+` componentwise (deficit, surplus).
    pub fn clipped_residual(&self, z: &ControlVec) -> [f64; 2] {
        let s = self.supply(z);
        [(self.load_kw - s).max(0.0), (s - self.load_kw).max(0.0)]
    }
}

/// One expert of the adaptive OCO controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertState {
    /// Virtual queue over the relaxed constraints (deficit, surplus).
    pub queue: [f64; 2],
    pub iterate: ControlVec,
    /// Meta-weight rho.
    pub weight: f64,
    pub last_loss: f64,
}

/// The bank of experts plus the shared meta state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertBank {
    pub experts: Vec<ExpertState>,
    pub cfg: OcoConfig,
}

impl ExpertBank {
    pub fn weights(&self) -> Vec<f64> {
        self.experts.iter().map(|e| e.weight).collect()
    }

    pub fn aggregate(&self) -> ControlVec {
        let n = self.experts[0].iterate.0.len();
        let mut z = vec![0.0; n];
        for e in &self.experts {
            for (acc, x) in z.iter_mut().zip(&e.iterate.0) {
                *acc += e.weight * x;
            }
        }
        ControlVec(z)
    }
}

/// Initialize the expert bank at a feasible point.
pub fn init_experts(
    cfg: &OcoConfig,
    x_init: &ControlVec,
    x_set: &DecisionSet,
) -> Result<ExpertBank, OnlineError> {
    cfg.validate()?;
    let violation = x_set.violation(x_init);
    if violation > 1e-6 {
        return Err(OnlineError::InfeasibleInit(violation));
    }
    let weights = cfg.initial_weights();
    Ok(ExpertBank {
        experts: weights
            .into_iter()
            .map(|w| ExpertState {
                queue: [0.0; 2],
                iterate: x_init.clone(),
                weight: w,
                last_loss: 0.0,
            })
            .collect(),
        cfg: *cfg,
    })
}

/// Accumulate the clipped residual into expert `i`'s virtual queue with the
/// schedule step `beta_{i,t}`.
pub fn update_virtual_queue(
    bank: &mut ExpertBank,
    expert: usize,
    residual: [f64; 2],
    t: usize,
) -> Result<(), OnlineError> {
    for r in residual {
        if r < 0.0 {
            return Err(OnlineError::NegativeResidual(r));
        }
    }
    let beta = bank.cfg.beta(expert + 1, t);
    let q = &mut bank.experts[expert].queue;
    q[0] += beta * residual[0];
    q[1] += beta * residual[1];
    Ok(())
}

/// One expert's proximal step: minimize
/// `alpha <grad, z - z_prev> + alpha beta <Q, [g(z)]_+> + |z - z_prev|^2`
/// over X, with the clipped term handled by epigraph slacks.
pub fn expert_prox_step(
    prev: &ControlVec,
    grad: &[f64],
    alpha: f64,
    beta: f64,
    queue: [f64; 2],
    balance: &BalanceRows,
    x_set: &DecisionSet,
    settings: &SolverSettings,
) -> Result<ControlVec, qp::QpError> {
    // Solved in span-normalized delta coordinates (z = prev + span * delta):
    // the proximal metric is Euclidean in normalized units, the objective is
    // near zero at the fixpoint (tight accuracy from the relative gap
    // tolerance), and one step-size ladder serves fraction- and
    // kilogram-scale coordinates alike.
    let n = prev.0.len();
    let spans = &x_set.spans;
    // epigraph slacks only for queue components that actually price the
    // clipped constraint; a zero-cost slack would leave an unbounded
    // optimal face that stalls the interior-point backend
    let use_def = queue[0] > 0.0;
    let use_sur = queue[1] > 0.0;
    let n_slack = usize::from(use_def) + usize::from(use_sur);
    let mut p = ConvexProgram::new(n + n_slack);
    for i in 0..n {
        p.set_bounds(
            i,
            (x_set.lower[i] - prev.0[i]) / spans[i],
            (x_set.upper[i] - prev.0[i]) / spans[i],
        );
        p.quad_cost[i] = 1.0;
        p.lin_cost[i] = alpha * grad[i] * spans[i];
    }
    for (terms, rhs) in &x_set.equalities {
        let fixed: f64 = terms.iter().map(|&(i, c)| c * prev.0[i]).sum();
        let mut scaled: Vec<(usize, f64)> =
            terms.iter().map(|&(i, c)| (i, c * spans[i])).collect();
        // row-normalize for conditioning: spans stretch coefficients by up
        // to three orders of magnitude
        let norm = scaled
            .iter()
            .map(|(_, c)| c.abs())
            .fold(0.0f64, f64::max)
            .max(1e-12);
        for (_, c) in scaled.iter_mut() {
            *c /= norm;
        }
        p.add_eq(LinearRow::new(
            scaled,
            (rhs - fixed) / norm,
            ConstraintGroup::Device,
        ));
    }
    let supply_prev = balance.supply(prev);
    let mut slack = n;
    if use_def {
        // s_def >= load - supply(prev + span*delta)
        p.set_bounds(slack, 0.0, f64::INFINITY);
        p.lin_cost[slack] = alpha * beta * queue[0];
        let row_def: Vec<(usize, f64)> = balance
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| (i, -c * spans[i]))
            .chain([(slack, -1.0)])
            .collect();
        p.add_le(LinearRow::new(
            row_def,
            supply_prev - balance.load_kw,
            ConstraintGroup::PowerBalance,
        ));
        slack += 1;
    }
    if use_sur {
        // s_sur >= supply(prev + span*delta) - load
        p.set_bounds(slack, 0.0, f64::INFINITY);
        p.lin_cost[slack] = alpha * beta * queue[1];
        let row_sur: Vec<(usize, f64)> = balance
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| (i, *c * spans[i]))
            .chain([(slack, -1.0)])
            .collect();
        p.add_le(LinearRow::new(
            row_sur,
            balance.load_kw - supply_prev,
            ConstraintGroup::PowerBalance,
        ));
    }
    let sol = qp::solve(&p, settings).map_err(|e| {
        if std::env::var_os("MGRID_DUMP_PROX").is_some() {
            let dump = serde_json::json!({
                "prev": prev.0,
                "grad": grad,
                "alpha": alpha,
                "beta": beta,
                "queue": queue,
                "balance_coeffs": balance.coeffs,
                "load_kw": balance.load_kw,
                "lower": x_set.lower,
                "upper": x_set.upper,
                "spans": x_set.spans,
                "equalities": x_set.equalities,
            });
            let _ = std::fs::write("/tmp/prox-dump.json", dump.to_string());
        }
        e
    })?;
    Ok(ControlVec(
        prev.0
            .iter()
            .zip(&sol.x[..n])
            .zip(spans)
            .map(|((z, d), s)| z + d * s)
            .collect(),
    ))
}

/// Surrogate losses `l_i = <grad_f(x_agg), x_i - x_agg>`.
pub fn surrogate_losses(bank: &ExpertBank, grad_at_aggregate: &[f64], aggregate: &ControlVec) -> Vec<f64> {
    bank.experts
        .iter()
        .map(|e| {
            grad_at_aggregate
                .iter()
                .zip(e.iterate.0.iter().zip(&aggregate.0))
                .map(|(g, (xi, xa))| g * (xi - xa))
                .sum()
        })
        .collect()
}

/// Exponential-weights update of the meta layer and the aggregated decision.
/// Overflow is guarded by subtracting the minimum loss before exponentiation.
pub fn aggregate_experts(
    bank: &mut ExpertBank,
    losses: &[f64],
    gamma: f64,
) -> ControlVec {
    let min_loss = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (e, &loss) in bank.experts.iter_mut().zip(losses) {
        e.last_loss = loss;
        e.weight *= (-gamma * (loss - min_loss)).exp();
        total += e.weight;
    }
    for e in bank.experts.iter_mut() {
        e.weight /= total;
    }
    bank.aggregate()
}

/// Per-hour log record of the control loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineStepLog {
    pub t: usize,
    pub reference_kg: Option<f64>,
    /// Aggregated decision vector committed before realization.
    pub committed: Vec<f64>,
    pub expert_losses: Vec<f64>,
    pub expert_weights: Vec<f64>,
    pub queue_deficit: Vec<f64>,
    pub queue_surplus: Vec<f64>,
    pub realized_load_kw: f64,
    pub realized_renewable_kw: f64,
    pub settled: DispatchDecision,
    pub realized_cost: f64,
    /// Clipped balance residual of the committed decision against realized
    /// data (deficit, surplus); feeds the virtual queues.
    pub residual: [f64; 2],
}

/// Full-horizon closed-loop run record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub scenario_id: String,
    pub method: Method,
    pub reference: ReferenceKind,
    pub steps: Vec<OnlineStepLog>,
    pub events: Vec<String>,
    pub wall_time_s: f64,
    pub final_state: SystemState,
}

impl RunLog {
    pub fn settled_decisions(&self) -> Vec<DispatchDecision> {
        self.steps.iter().map(|s| s.settled.clone()).collect()
    }

    pub fn total_realized_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.realized_cost).sum()
    }

    pub fn total_load_loss_kwh(&self) -> f64 {
        self.steps.iter().map(|s| s.settled.shed_kw).sum()
    }

    pub fn references(&self) -> Vec<Option<f64>> {
        self.steps.iter().map(|s| s.reference_kg).collect()
    }
}

/// Outcome of settling a committed decision against realized data.
#[derive(Debug, Clone)]
pub struct Settlement {
    pub decision: DispatchDecision,
    pub realized_cost: f64,
    pub residual: [f64; 2],
}

/// Convert a committed decision into a feasible realized outcome: the LDES
/// conversion weights are held, while (r, l, d, b+, b-) are re-optimized
/// against realized data at original costs plus an L1 deviation penalty on
/// the committed units (d, b+, b-), priced between the fuel price and the
/// shedding penalty. Shedding and curtailment adjust freely as recourse.
/// That weighting keeps any balanced commitment untouched (no profitable
/// re-dispatch can pay its own deviation), serves committed-but-avoidable
/// shedding, and covers shortfalls with generation before load loss.
/// Returns the settled decision, its realized stage cost, and the committed
/// decision's clipped balance residual used by the virtual queues.
pub fn settle(
    config: &MicrogridConfig,
    hull: &ConvexHullModel,
    committed: &DispatchDecision,
    load_kw: f64,
    renewable_kw: f64,
    state: &SystemState,
    settings: &SolverSettings,
) -> Result<Settlement, OnlineError> {
    let p_charge = committed.ldes_charge_kw(hull);
    let p_discharge = committed.ldes_discharge_kw(hull);
    // committed curtailment/shedding clamped to realized availability
    let supply_committed = committed.renewable_kw.min(renewable_kw).max(0.0)
        + committed.shed_kw.min(load_kw).max(0.0)
        + committed.dg_kw
        + committed.bes_discharge_kw
        - committed.bes_charge_kw
        + p_discharge
        - p_charge;
    let residual = [
        (load_kw - supply_committed).max(0.0),
        (supply_committed - load_kw).max(0.0),
    ];

    // variables: r, l, d, bp, bm, and 3 L1 deviation slacks for (d, b+, b-)
    let costs = &config.costs;
    let dev_w = 0.5 * (costs.load_shed_penalty + costs.dg_fuel_price);
    let mut p = ConvexProgram::new(8);
    let targets = [
        committed.renewable_kw.min(renewable_kw).max(0.0),
        committed.shed_kw.min(load_kw).max(0.0),
        committed.dg_kw,
        committed.bes_discharge_kw,
        committed.bes_charge_kw,
    ];
    let ubs = [
        renewable_kw,
        load_kw,
        config.dg.p_max_kw,
        config.bes.p_max_kw,
        config.bes.p_max_kw,
    ];
    let lbs = [0.0, 0.0, config.dg.p_min_kw, 0.0, 0.0];
    let lin = [
        0.0,
        costs.load_shed_penalty,
        costs.dg_fuel_price,
        costs.bes_degradation,
        0.0,
    ];
    for k in 0..5 {
        p.set_bounds(k, lbs[k], ubs[k]);
        p.lin_cost[k] = lin[k];
    }
    for (slack, k) in [(5usize, 2usize), (6, 3), (7, 4)] {
        p.set_bounds(slack, 0.0, f64::INFINITY);
        p.lin_cost[slack] = dev_w;
        // slack >= x - target, slack >= target - x
        p.add_le(LinearRow::new(
            vec![(k, 1.0), (slack, -1.0)],
            targets[k],
            ConstraintGroup::Other,
        ));
        p.add_le(LinearRow::new(
            vec![(k, -1.0), (slack, -1.0)],
            -targets[k],
            ConstraintGroup::Other,
        ));
    }
    // realized balance with the LDES exchange held fixed
    p.add_eq(LinearRow::new(
        vec![(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0), (4, -1.0)],
        load_kw - p_discharge + p_charge,
        ConstraintGroup::PowerBalance,
    ));
    // BES SoC box given the live state
    let eta_c = config.bes.eta_charge;
    let eta_d = config.bes.eta_discharge;
    p.add_le(LinearRow::new(
        vec![(4, eta_c), (3, -1.0 / eta_d)],
        config.bes.soc_max_kwh - state.bes_soc_kwh,
        ConstraintGroup::StorageBounds,
    ));
    p.add_le(LinearRow::new(
        vec![(4, -eta_c), (3, 1.0 / eta_d)],
        state.bes_soc_kwh - config.bes.soc_min_kwh,
        ConstraintGroup::StorageBounds,
    ));
    let sol = qp::solve(&p, settings).map_err(|e| match e {
        qp::QpError::Infeasible { group } => OnlineError::HardInfeasible {
            t: state.t,
            source: SolveError::Infeasible { group },
        },
        other => OnlineError::StepFailure {
            expert: usize::MAX,
            source: other,
        },
    })?;
    let x = &sol.x;
    let bes_soc = state.bes_soc_kwh + eta_c * x[4] - x[3] / eta_d;
    let ldes_soc = state.ldes_soc_kg + committed.hydrogen_produced_kgph(hull)
        - committed.hydrogen_consumed_kgph(hull);
    let decision = DispatchDecision {
        renewable_kw: x[0],
        shed_kw: x[1],
        dg_kw: x[2],
        bes_discharge_kw: x[3],
        bes_charge_kw: x[4],
        charge_weights: committed.charge_weights.clone(),
        discharge_weights: committed.discharge_weights.clone(),
        bes_soc_kwh: bes_soc,
        ldes_soc_kg: ldes_soc,
    };
    let realized_cost = decision.stage_cost(config, hull);
    Ok(Settlement {
        decision,
        realized_cost,
        residual,
    })
}

/// MPC baseline step: solve a look-ahead window on forecasts, optionally
/// tracking a terminal reference and enforcing the contract whenever the
/// window reaches the horizon end; apply only the first period.
#[allow(clippy::too_many_arguments)]
pub fn mpc_step(
    config: &MicrogridConfig,
    hull: &ConvexHullModel,
    state: &SystemState,
    forecast_load: &[f64],
    forecast_ren: &[f64],
    terminal_reference_kg: Option<f64>,
    theta_terminal: f64,
    covers_horizon_end: bool,
    settings: &SolverSettings,
) -> Result<DispatchDecision, SolveError> {
    let tracking = match terminal_reference_kg {
        Some(r) => Tracking::Terminal {
            theta: theta_terminal,
            reference_kg: r,
        },
        None => Tracking::None,
    };
    let contract = if covers_horizon_end {
        ContractMode::HardAtHorizonEnd
    } else {
        ContractMode::None
    };
    let mut window = solver::solve_window(
        config,
        state,
        forecast_load,
        forecast_ren,
        hull,
        tracking,
        contract,
        settings,
    )?;
    Ok(window.remove(0))
}

/// The long-term reference provider used during a run.
#[derive(Debug, Clone)]
pub enum ReferenceSource {
    Kernel {
        params: KernelHyperParams,
        dataset: RegressionDataset,
    },
    Average {
        dataset: RegressionDataset,
    },
    None,
}

impl ReferenceSource {
    pub fn kind(&self) -> ReferenceKind {
        match self {
            ReferenceSource::Kernel { .. } => ReferenceKind::Kernel,
            ReferenceSource::Average { .. } => ReferenceKind::Average,
            ReferenceSource::None => ReferenceKind::None,
        }
    }

    fn dataset(&self) -> Option<&RegressionDataset> {
        match self {
            ReferenceSource::Kernel { dataset, .. } => Some(dataset),
            ReferenceSource::Average { dataset } => Some(dataset),
            ReferenceSource::None => None,
        }
    }

    fn dataset_mut(&mut self) -> Option<&mut RegressionDataset> {
        match self {
            ReferenceSource::Kernel { dataset, .. } => Some(dataset),
            ReferenceSource::Average { dataset } => Some(dataset),
            ReferenceSource::None => None,
        }
    }

    /// Reference at hour `t` given the realized closed-loop history
    /// (normalized netload and SoC fraction through t-1). Also returns the
    /// scenario weights when the kernel is active.
    fn predict(
        &self,
        t: usize,
        net_hist: &[f64],
        soc_hist: &[f64],
    ) -> Result<(Option<f64>, Option<WeightVector>), OnlineError> {
        match self {
            ReferenceSource::None => Ok((None, None)),
            ReferenceSource::Average { dataset } => {
                Ok((Some(learner::average_reference(dataset, t)), None))
            }
            ReferenceSource::Kernel { params, dataset } => {
                if t == 0 {
                    // no observed history yet; fall back to the ensemble mean
                    return Ok((Some(learner::average_reference(dataset, 0)), None));
                }
                let xi = learner::build_input_vector(net_hist, soc_hist, t, params.window)?;
                let s_count = dataset.scenario_count();
                let inputs: Vec<Vec<f64>> = (0..s_count)
                    .map(|s| {
                        learner::build_input_vector(
                            &dataset.netload[s],
                            &dataset.soc_frac[s],
                            t,
                            params.window,
                        )
                        .expect("t >= 1")
                    })
                    .collect();
                let (weights, _) = learner::compute_weights(&xi, &inputs, params)?;
                let pred = learner::predict_reference(&weights, dataset, t);
                Ok((Some(pred), Some(weights)))
            }
        }
    }

    /// Reference for a future hour using the current weights (MPC terminal
    /// target).
    fn predict_at(
        &self,
        weights: Option<&WeightVector>,
        t_future: usize,
    ) -> Option<f64> {
        let dataset = self.dataset()?;
        let t = t_future.min(dataset.horizon().saturating_sub(1));
        Some(match (self, weights) {
            (ReferenceSource::Kernel { .. }, Some(w)) => learner::predict_reference(w, dataset, t),
            _ => learner::average_reference(dataset, t),
        })
    }
}

/// Dispatch method used by [`run_online`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oco,
    Mpc,
    Sed,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Oco => "oco",
            Method::Mpc => "mpc",
            Method::Sed => "sed",
        })
    }
}

/// Asset affected by a fault event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultAsset {
    Wind,
    Solar,
    Dg,
    Bes,
    Ldes,
}

/// A capacity derating over a time window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FaultEvent {
    /// First affected hour (0-based).
    pub start_hour: usize,
    pub duration_h: usize,
    pub asset: FaultAsset,
    /// Remaining capacity fraction during the fault, in [0, 1].
    pub multiplier: f64,
}

impl FaultEvent {
    pub fn validate(&self, horizon: usize) -> Result<(), OnlineError> {
        if !(0.0..=1.0).contains(&self.multiplier) {
            return Err(OnlineError::BadConfig(format!(
                "fault multiplier {} outside [0, 1]",
                self.multiplier
            )));
        }
        if self.start_hour + self.duration_h > horizon {
            return Err(OnlineError::BadConfig(
                "fault window extends past the horizon".into(),
            ));
        }
        Ok(())
    }

    pub fn active_at(&self, t: usize) -> bool {
        t >= self.start_hour && t < self.start_hour + self.duration_h
    }
}

/// Apply renewable-side faults to a scenario. With a component split the
/// faulted asset is derated exactly; otherwise the total renewable series is
/// scaled by the asset's share of installed capacity.
pub fn apply_faults_to_scenario(
    scenario: &ScenarioSeries,
    faults: &[FaultEvent],
    wind_capacity_kw: f64,
    solar_capacity_kw: f64,
) -> ScenarioSeries {
    let mut out = scenario.clone();
    for fault in faults {
        let share = match fault.asset {
            FaultAsset::Wind => {
                wind_capacity_kw / (wind_capacity_kw + solar_capacity_kw).max(1e-9)
            }
            FaultAsset::Solar => {
                solar_capacity_kw / (wind_capacity_kw + solar_capacity_kw).max(1e-9)
            }
            _ => continue,
        };
        for t in fault.start_hour..fault.start_hour + fault.duration_h {
            if t >= out.horizon {
                break;
            }
            match (fault.asset, out.wind_kw.as_mut(), out.solar_kw.as_mut()) {
                (FaultAsset::Wind, Some(wind), _) => {
                    let delta = wind[t] * (1.0 - fault.multiplier);
                    wind[t] -= delta;
                    out.renewable_kw[t] = (out.renewable_kw[t] - delta).max(0.0);
                }
                (FaultAsset::Solar, _, Some(solar)) => {
                    let delta = solar[t] * (1.0 - fault.multiplier);
                    solar[t] -= delta;
                    out.renewable_kw[t] = (out.renewable_kw[t] - delta).max(0.0);
                }
                _ => {
                    out.renewable_kw[t] *= 1.0 - share * (1.0 - fault.multiplier);
                }
            }
        }
    }
    out
}

/// Per-period device caps implied by dg/bes/ldes faults.
pub fn fault_period_caps(
    config: &MicrogridConfig,
    faults: &[FaultEvent],
    horizon: usize,
) -> Option<PeriodCaps> {
    let device_faults: Vec<&FaultEvent> = faults
        .iter()
        .filter(|f| matches!(f.asset, FaultAsset::Dg | FaultAsset::Bes | FaultAsset::Ldes))
        .collect();
    if device_faults.is_empty() {
        return None;
    }
    let mut dg = vec![config.dg.p_max_kw; horizon];
    let mut bes = vec![config.bes.p_max_kw; horizon];
    let mut ldes = vec![config.ldes.p_max_kw; horizon];
    for f in device_faults {
        for t in f.start_hour..(f.start_hour + f.duration_h).min(horizon) {
            match f.asset {
                FaultAsset::Dg => dg[t] = dg[t].min(config.dg.p_max_kw * f.multiplier),
                FaultAsset::Bes => bes[t] = bes[t].min(config.bes.p_max_kw * f.multiplier),
                FaultAsset::Ldes => ldes[t] = ldes[t].min(config.ldes.p_max_kw * f.multiplier),
                _ => {}
            }
        }
    }
    Some(PeriodCaps {
        dg_max_kw: Some(dg),
        bes_power_kw: Some(bes),
        ldes_power_kw: Some(ldes),
    })
}

/// Outcome of fault-triggered reference regeneration.
#[derive(Debug)]
pub struct FaultRegenOutcome {
    /// Regenerated bundles (one per training scenario; failures preserved).
    pub bundles: Vec<Result<TrajectoryBundle, SolveError>>,
    /// Dataset with regenerated columns from the fault hour onward.
    pub dataset: RegressionDataset,
    pub warnings: Vec<String>,
}

/// Regenerate hindsight trajectories from the live state with the fault
/// applied over the remaining horizon, and splice the learner dataset. The
/// ExpertBank of a running controller is left untouched by design; scenarios
/// whose regeneration fails keep their original columns.
#[allow(clippy::too_many_arguments)]
pub fn handle_fault(
    event: &FaultEvent,
    current_state: &SystemState,
    config: &MicrogridConfig,
    hull: &ConvexHullModel,
    training_scenarios: &[ScenarioSeries],
    dataset: &RegressionDataset,
    wind_capacity_kw: f64,
    solar_capacity_kw: f64,
    settings: &SolverSettings,
) -> Result<FaultRegenOutcome, OnlineError> {
    let t0 = current_state.t;
    if event.start_hour < t0 {
        return Err(OnlineError::BadConfig(
            "fault event starts before the current hour".into(),
        ));
    }
    let horizon = dataset.horizon();
    let mut new_dataset = dataset.clone();
    let mut warnings = Vec::new();

    // remaining-horizon scenarios with the fault applied, absolute timing kept
    let tails: Vec<ScenarioSeries> = training_scenarios
        .iter()
        .map(|s| {
            let faulted =
                apply_faults_to_scenario(s, std::slice::from_ref(event), wind_capacity_kw, solar_capacity_kw);
            let mut tail = ScenarioSeries::new(
                format!("{}-fault", s.id),
                faulted.load_kw[t0..].to_vec(),
                faulted.renewable_kw[t0..].to_vec(),
            );
            tail.wind_kw = faulted.wind_kw.as_ref().map(|v| v[t0..].to_vec());
            tail.solar_kw = faulted.solar_kw.as_ref().map(|v| v[t0..].to_vec());
            tail
        })
        .collect();
    let init = SystemState {
        t: 0,
        bes_soc_kwh: current_state.bes_soc_kwh,
        ldes_soc_kg: current_state.ldes_soc_kg,
    };
    let caps = fault_period_caps(config, std::slice::from_ref(event), horizon).map(|c| PeriodCaps {
        dg_max_kw: c.dg_max_kw.map(|v| v[t0..].to_vec()),
        bes_power_kw: c.bes_power_kw.map(|v| v[t0..].to_vec()),
        ldes_power_kw: c.ldes_power_kw.map(|v| v[t0..].to_vec()),
    });
    let bundles: Vec<Result<TrajectoryBundle, SolveError>> = tails
        .par_iter()
        .map(|tail| {
            let options = solver::AssemblyOptions {
                contract: Some(ContractMode::HardAtHorizonEnd),
                caps: caps.as_ref(),
                ..Default::default()
            };
            let (program, map) = solver::assemble_horizon_program(
                config,
                hull,
                &tail.load_kw,
                &tail.renewable_kw,
                &init,
                settings,
                &options,
            );
            let sol = qp::solve(&program, settings).map_err(|e| match e {
                qp::QpError::Infeasible { group } => SolveError::Infeasible { group },
                other => SolveError::Backend(other),
            })?;
            let decisions = solver::decisions_from_solution(&sol.x, &map);
            Ok(TrajectoryBundle {
                scenario_id: tail.id.clone(),
                decisions,
                total_cost: sol.objective,
                wall_time_s: 0.0,
                meta: solver::SolveMeta {
                    iterations: sol.iterations,
                    epsilon: settings.epsilon,
                    reduced_accuracy: sol.reduced_accuracy,
                    deterministic: settings.deterministic,
                },
                warnings: Vec::new(),
            })
        })
        .collect();

    for (s, (tail, bundle)) in tails.iter().zip(&bundles).enumerate() {
        match bundle {
            Ok(b) => {
                let net = scenario::compute_netload(tail, Some(dataset.stats))?;
                for (k, t) in (t0..horizon).enumerate() {
                    new_dataset.netload[s][t] = net.values[k];
                    new_dataset.soc_frac[s][t] =
                        b.decisions[k].ldes_soc_kg / dataset.ldes_capacity_kg;
                }
            }
            Err(e) => {
                warnings.push(format!(
                    "scenario {s}: regeneration infeasible ({e}); keeping prior reference"
                ));
            }
        }
    }
    Ok(FaultRegenOutcome {
        bundles,
        dataset: new_dataset,
        warnings,
    })
}

/// Everything needed for a closed-loop run.
#[derive(Debug, Clone)]
pub struct RunInputs<'a> {
    pub config: &'a MicrogridConfig,
    pub hull: &'a ConvexHullModel,
    /// Ground-truth scenario before fault application.
    pub scenario: &'a ScenarioSeries,
    pub method: Method,
    pub reference: ReferenceSource,
    pub oco: OcoConfig,
    /// Tracking penalty; `None` uses the schedule value `theta0 T^c`.
    pub theta_override: Option<f64>,
    /// MPC look-ahead window (hours).
    pub mpc_horizon: usize,
    /// Forecast error level consumed by the MPC baseline.
    pub mpc_mape: f64,
    pub forecast_seed: u64,
    pub faults: &'a [FaultEvent],
    /// Training scenarios for fault-triggered regeneration.
    pub training_scenarios: &'a [ScenarioSeries],
    pub wind_capacity_kw: f64,
    pub solar_capacity_kw: f64,
    pub settings: SolverSettings,
}

/// The per-hour OCO controller state.
pub struct OcoController {
    pub bank: ExpertBank,
    pub theta: f64,
    hydrogen_value: f64,
    prev_aggregate: ControlVec,
    prev_balance: Option<BalanceRows>,
    prev_reference: Option<f64>,
}

impl OcoController {
    pub fn new(
        cfg: &OcoConfig,
        config: &MicrogridConfig,
        hull: &ConvexHullModel,
        state: &SystemState,
        theta: f64,
        hydrogen_value: f64,
    ) -> Result<Self, OnlineError> {
        let x_set = DecisionSet::build(config, hull, state, None);
        let x_init = ControlVec::idle(config, hull, state);
        let bank = init_experts(cfg, &x_init, &x_set)?;
        let prev_aggregate = bank.aggregate();
        Ok(Self {
            bank,
            theta,
            hydrogen_value,
            prev_aggregate,
            prev_balance: None,
            prev_reference: None,
        })
    }

    /// Gradient of the previous hour's tracking-penalized stage cost at `z`.
    fn gradient(
        &self,
        config: &MicrogridConfig,
        hull: &ConvexHullModel,
        balance: &BalanceRows,
        z: &ControlVec,
    ) -> Vec<f64> {
        let m = hull.samples;
        let costs = &config.costs;
        let mut g = vec![0.0; z.0.len()];
        g[CV_PHI_L] = costs.load_shed_penalty * balance.load_kw;
        g[CV_DG] = costs.dg_fuel_price;
        g[CV_BES_DIS] = costs.bes_degradation;
        for (j, (p, rate)) in hull.discharge.powers().zip(hull.discharge.rates()).enumerate() {
            g[CV_FIXED + m + j] = costs.ldes_degradation * p + self.hydrogen_value * rate;
        }
        for (j, rate) in hull.charge.rates().enumerate() {
            g[CV_FIXED + j] = -self.hydrogen_value * rate;
        }
        if let Some(reference) = self.prev_reference {
            g[CV_LDES_SOC] = 2.0 * self.theta * (z.0[CV_LDES_SOC] - reference);
        }
        g
    }

    /// Record the realized data and reference of hour `t` after settlement;
    /// they define `f_t` and `g_t` used at hour `t + 1`.
    pub fn observe(
        &mut self,
        hull: &ConvexHullModel,
        load_kw: f64,
        renewable_kw: f64,
        reference_kg: Option<f64>,
    ) {
        self.prev_balance = Some(BalanceRows::build(hull, load_kw, renewable_kw));
        self.prev_reference = reference_kg;
    }

    /// One non-anticipatory controller step for hour `t` (0-based, >= 1):
    /// queue updates, per-expert proximal steps (in parallel), surrogate
    /// losses, and meta aggregation. Consumes only data through hour t-1.
    pub fn oco_step(
        &mut self,
        config: &MicrogridConfig,
        hull: &ConvexHullModel,
        x_set: &DecisionSet,
        t: usize,
        settings: &SolverSettings,
    ) -> Result<ControlVec, OnlineError> {
        let balance = self
            .prev_balance
            .clone()
            .expect("observe() must run before oco_step");
        let balance = &balance;
        let cfg = self.bank.cfg;
        // (8b): accumulate clipped residuals at each expert's own iterate
        for i in 0..self.bank.experts.len() {
            let residual = balance.clipped_residual(&self.bank.experts[i].iterate);
            update_virtual_queue(&mut self.bank, i, residual, t)?;
        }
        // (8d) surrogate losses at the previous aggregate, before iterates move
        let grad_agg = self.gradient(config, hull, balance, &self.prev_aggregate);
        let losses = surrogate_losses(&self.bank, &grad_agg, &self.prev_aggregate);
        // (8c) proximal steps in parallel over experts
        let steps: Vec<Result<ControlVec, (usize, qp::QpError)>> = self
            .bank
            .experts
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let grad = self.gradient(config, hull, balance, &e.iterate);
                expert_prox_step(
                    &e.iterate,
                    &grad,
                    cfg.alpha(i + 1, t),
                    cfg.beta(i + 1, t),
                    e.queue,
                    balance,
                    x_set,
                    settings,
                )
                .map_err(|e| (i, e))
            })
            .collect();
        for (i, step) in steps.into_iter().enumerate() {
            match step {
                Ok(z) => self.bank.experts[i].iterate = z,
                Err((expert, source)) => return Err(OnlineError::StepFailure { expert, source }),
            }
        }
        // (8e) meta update on the surrogate losses of the previous iterates
        let aggregate = aggregate_experts(&mut self.bank, &losses, cfg.gamma());
        self.prev_aggregate = aggregate.clone();
        Ok(aggregate)
    }
}

/// Full-horizon closed-loop simulation: per hour, update the reference,
/// decide, observe the realization, settle, and log. Aborts only on hard
/// infeasibility.
pub fn run_online(inputs: &RunInputs) -> Result<RunLog, OnlineError> {
    let started = std::time::Instant::now();
    let config = inputs.config;
    let hull = inputs.hull;
    let horizon = inputs.scenario.horizon;
    for f in inputs.faults {
        f.validate(horizon)?;
    }
    inputs.oco.validate()?;
    let theta = inputs.theta_override.unwrap_or_else(|| inputs.oco.theta());

    // realized series with faults applied
    let realized = apply_faults_to_scenario(
        inputs.scenario,
        inputs.faults,
        inputs.wind_capacity_kw,
        inputs.solar_capacity_kw,
    );
    let caps = fault_period_caps(config, inputs.faults, horizon);
    let forecast = if inputs.method == Method::Mpc {
        Some(scenario::perturb_forecast(
            &realized,
            inputs.mpc_mape,
            horizon,
            inputs.forecast_seed,
        )?)
    } else {
        None
    };

    let mut reference = inputs.reference.clone();
    let mut state = config.initial_state();
    let mut steps: Vec<OnlineStepLog> = Vec::with_capacity(horizon);
    let mut events: Vec<String> = Vec::new();
    let mut net_hist: Vec<f64> = Vec::with_capacity(horizon);
    let mut soc_hist: Vec<f64> = Vec::with_capacity(horizon);
    let stats = reference.dataset().map(|d| d.stats);
    let cap_kg = config.ldes.soc_max_kg;

    let mut controller = if inputs.method == Method::Oco {
        Some(OcoController::new(
            &inputs.oco,
            config,
            hull,
            &state,
            theta,
            inputs.settings.hydrogen_value,
        )?)
    } else {
        None
    };

    for t in 0..horizon {
        // fault onset: regenerate references from the live state
        for fault in inputs.faults.iter().filter(|f| f.start_hour == t) {
            if let Some(dataset) = reference.dataset() {
                match handle_fault(
                    fault,
                    &SystemState { t, ..state },
                    config,
                    hull,
                    inputs.training_scenarios,
                    dataset,
                    inputs.wind_capacity_kw,
                    inputs.solar_capacity_kw,
                    &inputs.settings,
                ) {
                    Ok(out) => {
                        let failed = out.bundles.iter().filter(|b| b.is_err()).count();
                        *reference.dataset_mut().expect("dataset present") = out.dataset;
                        events.push(format!(
                            "t={t}: fault on {:?} x{:.2} for {} h; references regenerated ({} ok, {} kept)",
                            fault.asset,
                            fault.multiplier,
                            fault.duration_h,
                            out.bundles.len() - failed,
                            failed
                        ));
                        for w in out.warnings {
                            events.push(format!("t={t}: {w}"));
                        }
                    }
                    Err(e) => {
                        events.push(format!(
                            "t={t}: fault regeneration failed ({e}); keeping prior references"
                        ));
                    }
                }
            } else {
                events.push(format!(
                    "t={t}: fault on {:?} x{:.2} for {} h (no reference to regenerate)",
                    fault.asset, fault.multiplier, fault.duration_h
                ));
            }
        }

        let (reference_kg, weights) = reference.predict(t, &net_hist, &soc_hist)?;
        let cap_tuple = caps.as_ref().map(|c| {
            (
                c.dg_max_kw.as_ref().map_or(config.dg.p_max_kw, |v| v[t]),
                c.bes_power_kw.as_ref().map_or(config.bes.p_max_kw, |v| v[t]),
                c.ldes_power_kw.as_ref().map_or(config.ldes.p_max_kw, |v| v[t]),
            )
        });

        // --- decide (no access to realized[t]) ---
        let load_t = realized.load_kw[t];
        let ren_t = realized.renewable_kw[t];
        let (committed_vec, committed): (Vec<f64>, DispatchDecision) = match inputs.method {
            Method::Oco => {
                let ctrl = controller.as_mut().expect("controller present");
                let x = if t == 0 {
                    ctrl.prev_aggregate.clone()
                } else {
                    let x_set = DecisionSet::build(config, hull, &state, cap_tuple);
                    ctrl.oco_step(config, hull, &x_set, t, &inputs.settings)?
                };
                let dec = x.materialize(load_t, ren_t);
                (x.0.clone(), dec)
            }
            Method::Mpc => {
                let fc = forecast.as_ref().expect("forecast present");
                let k = inputs.mpc_horizon.max(1).min(horizon - t);
                let covers_end = t + k >= horizon;
                let terminal = reference.predict_at(weights.as_ref(), t + k - 1);
                let dec = mpc_step(
                    config,
                    hull,
                    &state,
                    &fc.load_kw[t..t + k],
                    &fc.renewable_kw[t..t + k],
                    terminal.filter(|_| reference.kind() != ReferenceKind::None),
                    theta,
                    covers_end,
                    &inputs.settings,
                )
                .map_err(|e| OnlineError::HardInfeasible { t, source: e })?;
                (Vec::new(), dec)
            }
            Method::Sed => {
                // observe-then-act myopic baseline: current hour's realized
                // data, no look-ahead
                let dec = match reference_kg {
                    Some(r) if theta > 0.0 => solver::solve_ted(
                        config, &state, load_t, ren_t, r, theta, hull, &inputs.settings,
                    ),
                    _ => solver::solve_sed(
                        config,
                        &state,
                        load_t,
                        ren_t,
                        hull,
                        None,
                        &inputs.settings,
                    ),
                }
                .map_err(|e| OnlineError::HardInfeasible { t, source: e })?;
                (Vec::new(), dec)
            }
        };

        // --- observe realization and settle ---
        let settlement = settle(
            config,
            hull,
            &committed,
            load_t,
            ren_t,
            &SystemState { t, ..state },
            &inputs.settings,
        )?;
        state = SystemState {
            t: t + 1,
            bes_soc_kwh: settlement.decision.bes_soc_kwh,
            ldes_soc_kg: settlement.decision.ldes_soc_kg,
        };
        if let Some(ctrl) = controller.as_mut() {
            ctrl.observe(hull, load_t, ren_t, reference_kg);
        }
        if let Some(stats) = stats {
            net_hist.push((load_t - ren_t - stats.mean) / stats.std);
        } else {
            net_hist.push(load_t - ren_t);
        }
        soc_hist.push(state.ldes_soc_kg / cap_kg);

        let (losses, weights_now, q_def, q_sur) = match controller.as_ref() {
            Some(c) => (
                c.bank.experts.iter().map(|e| e.last_loss).collect(),
                c.bank.weights(),
                c.bank.experts.iter().map(|e| e.queue[0]).collect(),
                c.bank.experts.iter().map(|e| e.queue[1]).collect(),
            ),
            None => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
        };
        steps.push(OnlineStepLog {
            t,
            reference_kg,
            committed: committed_vec,
            expert_losses: losses,
            expert_weights: weights_now,
            queue_deficit: q_def,
            queue_surplus: q_sur,
            realized_load_kw: load_t,
            realized_renewable_kw: ren_t,
            settled: settlement.decision,
            realized_cost: settlement.realized_cost,
            residual: settlement.residual,
        });
    }

    Ok(RunLog {
        scenario_id: inputs.scenario.id.clone(),
        method: inputs.method,
        reference: inputs.reference.kind(),
        steps,
        events,
        wall_time_s: started.elapsed().as_secs_f64(),
        final_state: state,
    })
}
