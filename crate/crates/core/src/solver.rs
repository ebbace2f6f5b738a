//! Convex dispatch programs over the inner-hull LDES model.
//!
//! Assembles and solves the full-horizon hindsight dispatch (OED), the
//! single-period dispatch (SED), and the tracking-penalized single-period
//! dispatch (TED) as convex programs over a shared per-period variable
//! layout, with an independent feasibility audit on every returned solution.
//!
//! Scheduled renewable is bounded by the available renewable power, i.e.
//! `R_t` acts as the curtailable cap on `r_t`. The time step is fixed at one
//! hour, so power (kW) and per-period energy (kWh) coincide numerically.

use crate::model::{ConvexHullModel, MicrogridConfig, SystemState, validate_config};
use crate::qp::{self, ConstraintGroup, ConvexProgram, LinearRow, QpError};
pub use crate::qp::SolverSettings;
use crate::scenario::ScenarioSeries;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("configuration invalid: {0:?}")]
    InvalidConfig(Vec<crate::model::ConfigViolation>),
    #[error("program infeasible; binding constraint group: {group}")]
    Infeasible { group: ConstraintGroup },
    #[error("scenario horizon {scenario} does not match requested horizon {requested}")]
    HorizonMismatch { scenario: usize, requested: usize },
    #[error("solver failure: {0}")]
    Backend(#[from] QpError),
    #[error("feasibility audit failed at t={t}: {constraint} violated by {residual:.3e}")]
    AuditFailure {
        t: usize,
        constraint: String,
        residual: f64,
    },
}

/// One period's dispatch decision in the hull model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchDecision {
    /// Scheduled renewable r_t (kW).
    pub renewable_kw: f64,
    /// Load shed l_t (kW).
    pub shed_kw: f64,
    /// DG output d_t (kW).
    pub dg_kw: f64,
    /// BES discharge b+_t (kW).
    pub bes_discharge_kw: f64,
    /// BES charge b-_t (kW).
    pub bes_charge_kw: f64,
    /// LDES charge weights (simplex over hull vertices).
    pub charge_weights: Vec<f64>,
    /// LDES discharge weights (simplex over hull vertices).
    pub discharge_weights: Vec<f64>,
    /// Resulting BES SoC e_t (kWh).
    pub bes_soc_kwh: f64,
    /// Resulting LDES SoC h_t (kg).
    pub ldes_soc_kg: f64,
}

impl DispatchDecision {
    pub fn ldes_charge_kw(&self, hull: &ConvexHullModel) -> f64 {
        self.charge_weights
            .iter()
            .zip(hull.charge.powers())
            .map(|(l, p)| l * p)
            .sum()
    }

    pub fn ldes_discharge_kw(&self, hull: &ConvexHullModel) -> f64 {
        self.discharge_weights
            .iter()
            .zip(hull.discharge.powers())
            .map(|(l, p)| l * p)
            .sum()
    }

    /// Hydrogen production rate implied by the hull model (kg/h).
    pub fn hydrogen_produced_kgph(&self, hull: &ConvexHullModel) -> f64 {
        self.charge_weights
            .iter()
            .zip(hull.charge.rates())
            .map(|(l, r)| l * r)
            .sum()
    }

    /// Hydrogen consumption rate implied by the hull model (kg/h).
    pub fn hydrogen_consumed_kgph(&self, hull: &ConvexHullModel) -> f64 {
        self.discharge_weights
            .iter()
            .zip(hull.discharge.rates())
            .map(|(l, r)| l * r)
            .sum()
    }

    /// Stage cost plus the hydrogen carrying-value tie-break, i.e. the
    /// per-period objective the dispatch programs actually minimize.
    pub fn model_cost(
        &self,
        config: &MicrogridConfig,
        hull: &ConvexHullModel,
        hydrogen_value: f64,
    ) -> f64 {
        self.stage_cost(config, hull)
            + hydrogen_value
                * (self.hydrogen_consumed_kgph(hull) - self.hydrogen_produced_kgph(hull))
    }

    /// Stage cost of this decision under the hull model objective.
    pub fn stage_cost(&self, config: &MicrogridConfig, hull: &ConvexHullModel) -> f64 {
        let c = &config.costs;
        c.load_shed_penalty * self.shed_kw
            + c.dg_fuel_price * self.dg_kw
            + c.bes_degradation * self.bes_discharge_kw
            + c.ldes_degradation * self.ldes_discharge_kw(hull)
    }
}

/// Solve metadata recorded with every bundle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveMeta {
    pub iterations: u32,
    /// Strict-convexity regularizer weight applied to (r, l, d).
    pub epsilon: f64,
    pub reduced_accuracy: bool,
    pub deterministic: bool,
}

/// Hindsight-optimal trajectory for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryBundle {
    pub scenario_id: String,
    pub decisions: Vec<DispatchDecision>,
    /// Objective value of the convex program (stage costs plus the
    /// epsilon-regularizer contribution, which is O(eps * |x|^2)).
    pub total_cost: f64,
    pub wall_time_s: f64,
    pub meta: SolveMeta,
    /// Non-fatal audit findings (e.g. simultaneous charge and discharge).
    pub warnings: Vec<String>,
}

impl TrajectoryBundle {
    pub fn ldes_soc_path(&self) -> Vec<f64> {
        self.decisions.iter().map(|d| d.ldes_soc_kg).collect()
    }

    pub fn bes_soc_path(&self) -> Vec<f64> {
        self.decisions.iter().map(|d| d.bes_soc_kwh).collect()
    }
}

/// Per-period variable layout of the dispatch programs.
#[derive(Debug, Clone, Copy)]
pub struct VarMap {
    pub horizon: usize,
    pub hull_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Renewable,
    Shed,
    Dg,
    BesDischarge,
    BesCharge,
    BesSoc,
    LdesSoc,
    ChargeWeight(usize),
    DischargeWeight(usize),
}

impl VarMap {
    pub fn vars_per_period(&self) -> usize {
        7 + 2 * self.hull_samples
    }

    pub fn num_vars(&self) -> usize {
        self.horizon * self.vars_per_period()
    }

    pub fn idx(&self, t: usize, var: Var) -> usize {
        let k = match var {
            Var::Renewable => 0,
            Var::Shed => 1,
            Var::Dg => 2,
            Var::BesDischarge => 3,
            Var::BesCharge => 4,
            Var::BesSoc => 5,
            Var::LdesSoc => 6,
            Var::ChargeWeight(j) => 7 + j,
            Var::DischargeWeight(j) => 7 + self.hull_samples + j,
        };
        t * self.vars_per_period() + k
    }
}

/// Whether the long-term contract `h_T >= H_T` is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractMode {
    HardAtHorizonEnd,
    None,
}

/// SoC reference tracking term added to the objective.
#[derive(Debug, Clone, Copy)]
pub enum Tracking<'a> {
    None,
    /// `theta * (h_t - ref_t)^2` every period.
    PerPeriod { theta: f64, reference_kg: &'a [f64] },
    /// `theta * (h_end - reference)^2` on the final period only.
    Terminal { theta: f64, reference_kg: f64 },
}

/// Per-period capacity caps used for fault derating; `None` entries leave
/// the config bounds untouched.
#[derive(Debug, Clone, Default)]
pub struct PeriodCaps {
    pub dg_max_kw: Option<Vec<f64>>,
    pub bes_power_kw: Option<Vec<f64>>,
    pub ldes_power_kw: Option<Vec<f64>>,
}

/// Options controlling horizon-program assembly.
#[derive(Debug, Clone, Copy, Default)]
pub struct AssemblyOptions<'a> {
    pub contract: Option<ContractMode>,
    pub tracking: Option<Tracking<'a>>,
    pub fixed_y: Option<&'a [DispatchDecision]>,
    pub caps: Option<&'a PeriodCaps>,
}

/// Add the strict-convexity regularizer `epsilon * z_i^2` on the listed
/// variables. `epsilon = 0` leaves the program unchanged.
pub fn strict_convexity_regularizer(program: &mut ConvexProgram, vars: &[usize], epsilon: f64) {
    if epsilon == 0.0 {
        return;
    }
    for &i in vars {
        program.quad_cost[i] += epsilon;
    }
}

/// Assemble the horizon dispatch program.
pub fn assemble_horizon_program(
    config: &MicrogridConfig,
    hull: &ConvexHullModel,
    load: &[f64],
    renewable: &[f64],
    init: &SystemState,
    settings: &SolverSettings,
    options: &AssemblyOptions,
) -> (ConvexProgram, VarMap) {
    let horizon = load.len();
    let m = hull.samples;
    let map = VarMap {
        horizon,
        hull_samples: m,
    };
    let mut p = ConvexProgram::new(map.num_vars());
    let costs = &config.costs;
    let charge_p: Vec<f64> = hull.charge.powers().collect();
    let charge_h: Vec<f64> = hull.charge.rates().collect();
    let dis_p: Vec<f64> = hull.discharge.powers().collect();
    let dis_h: Vec<f64> = hull.discharge.rates().collect();

    let mut x_vars = Vec::with_capacity(3 * horizon);
    for t in 0..horizon {
        let i_r = map.idx(t, Var::Renewable);
        let i_l = map.idx(t, Var::Shed);
        let i_d = map.idx(t, Var::Dg);
        let i_bp = map.idx(t, Var::BesDischarge);
        let i_bm = map.idx(t, Var::BesCharge);
        let i_e = map.idx(t, Var::BesSoc);
        let i_h = map.idx(t, Var::LdesSoc);

        // objective; stored hydrogen carries a small value so drawdown is
        // never free (see SolverSettings::hydrogen_value)
        p.lin_cost[i_l] = costs.load_shed_penalty;
        p.lin_cost[i_d] = costs.dg_fuel_price;
        p.lin_cost[i_bp] = costs.bes_degradation;
        for j in 0..m {
            p.lin_cost[map.idx(t, Var::DischargeWeight(j))] +=
                costs.ldes_degradation * dis_p[j] + settings.hydrogen_value * dis_h[j];
            p.lin_cost[map.idx(t, Var::ChargeWeight(j))] -=
                settings.hydrogen_value * charge_h[j];
        }
        x_vars.extend([i_r, i_l, i_d]);

        // boxes
        let dg_max = options
            .caps
            .and_then(|c| c.dg_max_kw.as_ref())
            .map_or(config.dg.p_max_kw, |v| v[t]);
        let bes_max = options
            .caps
            .and_then(|c| c.bes_power_kw.as_ref())
            .map_or(config.bes.p_max_kw, |v| v[t]);
        p.set_bounds(i_r, 0.0, renewable[t].max(0.0));
        p.set_bounds(i_l, 0.0, load[t].max(0.0));
        p.set_bounds(i_d, config.dg.p_min_kw.min(dg_max), dg_max);
        p.set_bounds(i_bp, 0.0, bes_max);
        p.set_bounds(i_bm, 0.0, bes_max);
        for j in 0..m {
            p.set_bounds(map.idx(t, Var::ChargeWeight(j)), 0.0, 1.0);
            p.set_bounds(map.idx(t, Var::DischargeWeight(j)), 0.0, 1.0);
        }

        // SoC ranges as named rows for diagnosable infeasibility
        p.add_le(LinearRow::new(
            vec![(i_e, 1.0)],
            config.bes.soc_max_kwh,
            ConstraintGroup::StorageBounds,
        ));
        p.add_le(LinearRow::new(
            vec![(i_e, -1.0)],
            -config.bes.soc_min_kwh,
            ConstraintGroup::StorageBounds,
        ));
        p.add_le(LinearRow::new(
            vec![(i_h, 1.0)],
            config.ldes.soc_max_kg,
            ConstraintGroup::StorageBounds,
        ));
        p.add_le(LinearRow::new(
            vec![(i_h, -1.0)],
            -config.ldes.soc_min_kg,
            ConstraintGroup::StorageBounds,
        ));

        // power balance: r + l + d + b+ - b- + sum(lam+ P+) - sum(lam- P-) = L_t
        let mut balance = vec![
            (i_r, 1.0),
            (i_l, 1.0),
            (i_d, 1.0),
            (i_bp, 1.0),
            (i_bm, -1.0),
        ];
        for j in 0..m {
            balance.push((map.idx(t, Var::DischargeWeight(j)), dis_p[j]));
            balance.push((map.idx(t, Var::ChargeWeight(j)), -charge_p[j]));
        }
        p.add_eq(LinearRow::new(balance, load[t], ConstraintGroup::PowerBalance));

        // optional LDES power derate rows
        if let Some(caps) = options.caps.and_then(|c| c.ldes_power_kw.as_ref()) {
            let cap = caps[t];
            if cap < config.ldes.p_max_kw {
                let chg: Vec<(usize, f64)> = (0..m)
                    .map(|j| (map.idx(t, Var::ChargeWeight(j)), charge_p[j]))
                    .collect();
                p.add_le(LinearRow::new(chg, cap, ConstraintGroup::Device));
                let dis: Vec<(usize, f64)> = (0..m)
                    .map(|j| (map.idx(t, Var::DischargeWeight(j)), dis_p[j]))
                    .collect();
                p.add_le(LinearRow::new(dis, cap, ConstraintGroup::Device));
            }
        }

        // BES dynamics: e_t - e_{t-1} - eta_c b- + b+/eta_d = [init]
        let mut bes_dyn = vec![
            (i_e, 1.0),
            (i_bm, -config.bes.eta_charge),
            (i_bp, 1.0 / config.bes.eta_discharge),
        ];
        let mut bes_rhs = 0.0;
        if t == 0 {
            bes_rhs = init.bes_soc_kwh;
        } else {
            bes_dyn.push((map.idx(t - 1, Var::BesSoc), -1.0));
        }
        p.add_eq(LinearRow::new(bes_dyn, bes_rhs, ConstraintGroup::StorageBounds));

        // LDES dynamics: h_t - h_{t-1} - sum(lam- H-) + sum(lam+ H+) = [init]
        let mut ldes_dyn = vec![(i_h, 1.0)];
        for j in 0..m {
            ldes_dyn.push((map.idx(t, Var::ChargeWeight(j)), -charge_h[j]));
            ldes_dyn.push((map.idx(t, Var::DischargeWeight(j)), dis_h[j]));
        }
        let mut ldes_rhs = 0.0;
        if t == 0 {
            ldes_rhs = init.ldes_soc_kg;
        } else {
            ldes_dyn.push((map.idx(t - 1, Var::LdesSoc), -1.0));
        }
        p.add_eq(LinearRow::new(ldes_dyn, ldes_rhs, ConstraintGroup::StorageBounds));

        // simplex blocks
        let chg_sum: Vec<(usize, f64)> = (0..m)
            .map(|j| (map.idx(t, Var::ChargeWeight(j)), 1.0))
            .collect();
        p.add_eq(LinearRow::new(chg_sum, 1.0, ConstraintGroup::Device));
        let dis_sum: Vec<(usize, f64)> = (0..m)
            .map(|j| (map.idx(t, Var::DischargeWeight(j)), 1.0))
            .collect();
        p.add_eq(LinearRow::new(dis_sum, 1.0, ConstraintGroup::Device));
    }

    // long-term contract
    if options.contract == Some(ContractMode::HardAtHorizonEnd) {
        p.add_le(LinearRow::new(
            vec![(map.idx(horizon - 1, Var::LdesSoc), -1.0)],
            -config.ldes.soc_final_target_kg,
            ConstraintGroup::Contract,
        ));
    }

    // tracking penalty
    match options.tracking {
        Some(Tracking::PerPeriod { theta, reference_kg }) if theta > 0.0 => {
            for t in 0..horizon {
                let i_h = map.idx(t, Var::LdesSoc);
                let r = reference_kg[t];
                p.quad_cost[i_h] += theta;
                p.lin_cost[i_h] += -2.0 * theta * r;
                p.cost_offset += theta * r * r;
            }
        }
        Some(Tracking::Terminal { theta, reference_kg }) if theta > 0.0 => {
            let i_h = map.idx(horizon - 1, Var::LdesSoc);
            p.quad_cost[i_h] += theta;
            p.lin_cost[i_h] += -2.0 * theta * reference_kg;
            p.cost_offset += theta * reference_kg * reference_kg;
        }
        _ => {}
    }

    // pinned inter-temporal block (Proposition 1 mode)
    if let Some(fixed) = options.fixed_y {
        for (t, d) in fixed.iter().enumerate() {
            let clamp = |v: f64, lo: f64, hi: f64| v.clamp(lo, hi);
            p.fix(
                map.idx(t, Var::BesDischarge),
                clamp(d.bes_discharge_kw, 0.0, config.bes.p_max_kw),
            );
            p.fix(
                map.idx(t, Var::BesCharge),
                clamp(d.bes_charge_kw, 0.0, config.bes.p_max_kw),
            );
            p.fix(map.idx(t, Var::BesSoc), d.bes_soc_kwh);
            p.fix(map.idx(t, Var::LdesSoc), d.ldes_soc_kg);
            for j in 0..hull.samples {
                p.fix(
                    map.idx(t, Var::ChargeWeight(j)),
                    clamp(d.charge_weights[j], 0.0, 1.0),
                );
                p.fix(
                    map.idx(t, Var::DischargeWeight(j)),
                    clamp(d.discharge_weights[j], 0.0, 1.0),
                );
            }
        }
    }

    strict_convexity_regularizer(&mut p, &x_vars, settings.epsilon);
    (p, map)
}

/// Extract per-period decisions from a solution vector.
pub fn decisions_from_solution(x: &[f64], map: &VarMap) -> Vec<DispatchDecision> {
    (0..map.horizon)
        .map(|t| DispatchDecision {
            renewable_kw: x[map.idx(t, Var::Renewable)],
            shed_kw: x[map.idx(t, Var::Shed)],
            dg_kw: x[map.idx(t, Var::Dg)],
            bes_discharge_kw: x[map.idx(t, Var::BesDischarge)],
            bes_charge_kw: x[map.idx(t, Var::BesCharge)],
            charge_weights: (0..map.hull_samples)
                .map(|j| x[map.idx(t, Var::ChargeWeight(j))])
                .collect(),
            discharge_weights: (0..map.hull_samples)
                .map(|j| x[map.idx(t, Var::DischargeWeight(j))])
                .collect(),
            bes_soc_kwh: x[map.idx(t, Var::BesSoc)],
            ldes_soc_kg: x[map.idx(t, Var::LdesSoc)],
        })
        .collect()
}

/// Independent feasibility audit of a decision sequence.
///
/// Re-checks every constraint with a plain evaluator (not the solver's own
/// residuals). Hard violations beyond `tol` are errors; simultaneous charge
/// and discharge is reported as a warning, mirroring the relaxed
/// complementarity of the model.
pub fn audit_decisions(
    config: &MicrogridConfig,
    hull: &ConvexHullModel,
    load: &[f64],
    renewable: &[f64],
    init: &SystemState,
    decisions: &[DispatchDecision],
    contract: ContractMode,
    tol: f64,
) -> Result<Vec<String>, SolveError> {
    let mut warnings = Vec::new();
    let mut e_prev = init.bes_soc_kwh;
    let mut h_prev = init.ldes_soc_kg;
    let fail = |t: usize, constraint: &str, residual: f64| -> Result<Vec<String>, SolveError> {
        Err(SolveError::AuditFailure {
            t,
            constraint: constraint.to_string(),
            residual,
        })
    };
    for (t, d) in decisions.iter().enumerate() {
        let m = hull.samples;
        if d.charge_weights.len() != m || d.discharge_weights.len() != m {
            return fail(t, "weight vector length", m as f64);
        }
        let chk = |ok: bool, name: &str, resid: f64| -> Option<(String, f64)> {
            if ok {
                None
            } else {
                Some((name.to_string(), resid))
            }
        };
        let mut checks: Vec<Option<(String, f64)>> = Vec::new();
        checks.push(chk(
            d.renewable_kw >= -tol && d.renewable_kw <= renewable[t] + tol,
            "renewable cap",
            d.renewable_kw - renewable[t],
        ));
        checks.push(chk(
            d.shed_kw >= -tol && d.shed_kw <= load[t] + tol,
            "shed cap",
            d.shed_kw - load[t],
        ));
        checks.push(chk(
            d.dg_kw >= config.dg.p_min_kw - tol && d.dg_kw <= config.dg.p_max_kw + tol,
            "dg box",
            d.dg_kw,
        ));
        checks.push(chk(
            d.bes_discharge_kw >= -tol && d.bes_discharge_kw <= config.bes.p_max_kw + tol,
            "bes discharge box",
            d.bes_discharge_kw,
        ));
        checks.push(chk(
            d.bes_charge_kw >= -tol && d.bes_charge_kw <= config.bes.p_max_kw + tol,
            "bes charge box",
            d.bes_charge_kw,
        ));
        checks.push(chk(
            d.bes_soc_kwh >= config.bes.soc_min_kwh - tol
                && d.bes_soc_kwh <= config.bes.soc_max_kwh + tol,
            "bes soc box",
            d.bes_soc_kwh,
        ));
        checks.push(chk(
            d.ldes_soc_kg >= config.ldes.soc_min_kg - tol
                && d.ldes_soc_kg <= config.ldes.soc_max_kg + tol,
            "ldes soc box",
            d.ldes_soc_kg,
        ));
        for (name, w) in [("charge", &d.charge_weights), ("discharge", &d.discharge_weights)] {
            let sum: f64 = w.iter().sum();
            checks.push(chk(
                (sum - 1.0).abs() <= tol,
                &format!("{name} simplex sum"),
                sum - 1.0,
            ));
            if w.iter().any(|&x| x < -tol) {
                checks.push(Some((format!("{name} weight nonnegativity"), -1.0)));
            }
        }
        let supply = d.renewable_kw + d.shed_kw + d.dg_kw + d.bes_discharge_kw
            - d.bes_charge_kw
            + d.ldes_discharge_kw(hull)
            - d.ldes_charge_kw(hull);
        checks.push(chk(
            (supply - load[t]).abs() <= tol,
            "power balance",
            supply - load[t],
        ));
        let e_expect = e_prev + config.bes.eta_charge * d.bes_charge_kw
            - d.bes_discharge_kw / config.bes.eta_discharge;
        checks.push(chk(
            (d.bes_soc_kwh - e_expect).abs() <= tol,
            "bes dynamics",
            d.bes_soc_kwh - e_expect,
        ));
        let h_expect = h_prev + d.hydrogen_produced_kgph(hull) - d.hydrogen_consumed_kgph(hull);
        checks.push(chk(
            (d.ldes_soc_kg - h_expect).abs() <= tol,
            "ldes dynamics",
            d.ldes_soc_kg - h_expect,
        ));
        for c in checks.into_iter().flatten() {
            return fail(t, &c.0, c.1);
        }
        if d.bes_discharge_kw * d.bes_charge_kw > 1e-6 {
            warnings.push(format!("t={t}: simultaneous BES charge and discharge"));
        }
        if d.ldes_charge_kw(hull) > 1e-6 && d.ldes_discharge_kw(hull) > 1e-6 {
            warnings.push(format!("t={t}: simultaneous LDES charge and discharge"));
        }
        e_prev = d.bes_soc_kwh;
        h_prev = d.ldes_soc_kg;
    }
    if contract == ContractMode::HardAtHorizonEnd {
        if let Some(last) = decisions.last() {
            if last.ldes_soc_kg < config.ldes.soc_final_target_kg - 1e-6 {
                return fail(
                    decisions.len() - 1,
                    "final SoC contract",
                    config.ldes.soc_final_target_kg - last.ldes_soc_kg,
                );
            }
        }
    }
    Ok(warnings)
}

/// Quick structural infeasibility checks that give exact certificates
/// without running the solver.
fn precheck(
    config: &MicrogridConfig,
    horizon: usize,
    init: &SystemState,
) -> Result<(), SolveError> {
    let l = &config.ldes;
    if l.soc_final_target_kg > l.soc_max_kg {
        return Err(SolveError::Infeasible {
            group: ConstraintGroup::Contract,
        });
    }
    let max_rate =
        crate::model::evaluate_curve(&l.charge_curve, l.p_max_kw).unwrap_or(f64::INFINITY);
    if init.ldes_soc_kg + horizon as f64 * max_rate < l.soc_final_target_kg {
        return Err(SolveError::Infeasible {
            group: ConstraintGroup::Contract,
        });
    }
    Ok(())
}

/// Solve the full-horizon hindsight dispatch (perfect foresight, hard
/// contract) for one scenario.
pub fn solve_oed(
    config: &MicrogridConfig,
    scenario: &ScenarioSeries,
    hull: &ConvexHullModel,
    settings: &SolverSettings,
) -> Result<TrajectoryBundle, SolveError> {
    solve_oed_from(config, scenario, hull, settings, &config.initial_state())
}

/// OED from an arbitrary initial state (used for fault-triggered
/// regeneration mid-horizon).
pub fn solve_oed_from(
    config: &MicrogridConfig,
    scenario: &ScenarioSeries,
    hull: &ConvexHullModel,
    settings: &SolverSettings,
    init: &SystemState,
) -> Result<TrajectoryBundle, SolveError> {
    let violations = validate_config(config);
    if !violations.is_empty() {
        return Err(SolveError::InvalidConfig(violations));
    }
    precheck(config, scenario.horizon, init)?;
    let started = std::time::Instant::now();
    let options = AssemblyOptions {
        contract: Some(ContractMode::HardAtHorizonEnd),
        ..Default::default()
    };
    let (program, map) = assemble_horizon_program(
        config,
        hull,
        &scenario.load_kw,
        &scenario.renewable_kw,
        init,
        settings,
        &options,
    );
    let sol = qp::solve(&program, settings).map_err(|e| match e {
        QpError::Infeasible { group } => SolveError::Infeasible { group },
        other => SolveError::Backend(other),
    })?;
    let decisions = decisions_from_solution(&sol.x, &map);
    let warnings = audit_decisions(
        config,
        hull,
        &scenario.load_kw,
        &scenario.renewable_kw,
        init,
        &decisions,
        ContractMode::HardAtHorizonEnd,
        1e-6,
    )?;
    Ok(TrajectoryBundle {
        scenario_id: scenario.id.clone(),
        decisions,
        total_cost: sol.objective,
        wall_time_s: started.elapsed().as_secs_f64(),
        meta: SolveMeta {
            iterations: sol.iterations,
            epsilon: settings.epsilon,
            reduced_accuracy: sol.reduced_accuracy,
            deterministic: settings.deterministic,
        },
        warnings,
    })
}

/// Solve OED for every scenario; per-scenario failures are isolated and the
/// batch continues. Results keep the input order, and parallel execution is
/// bit-identical to sequential because each solve is deterministic.
pub fn batch_generate_trajectories(
    config: &MicrogridConfig,
    scenarios: &[ScenarioSeries],
    hull: &ConvexHullModel,
    settings: &SolverSettings,
) -> Vec<Result<TrajectoryBundle, SolveError>> {
    batch_generate_from(config, scenarios, hull, settings, &config.initial_state())
}

/// Batch OED from an arbitrary shared initial state.
pub fn batch_generate_from(
    config: &MicrogridConfig,
    scenarios: &[ScenarioSeries],
    hull: &ConvexHullModel,
    settings: &SolverSettings,
    init: &SystemState,
) -> Vec<Result<TrajectoryBundle, SolveError>> {
    scenarios
        .par_iter()
        .map(|s| solve_oed_from(config, s, hull, settings, init))
        .collect()
}

/// Solve the single-period dispatch from `state` against realized
/// `(load, renewable)`. With `fixed_y` supplied, all inter-temporal
/// variables are pinned and only (r, l, d) are optimized.
pub fn solve_sed(
    config: &MicrogridConfig,
    state: &SystemState,
    load_kw: f64,
    renewable_kw: f64,
    hull: &ConvexHullModel,
    fixed_y: Option<&DispatchDecision>,
    settings: &SolverSettings,
) -> Result<DispatchDecision, SolveError> {
    solve_single_period(
        config,
        state,
        load_kw,
        renewable_kw,
        hull,
        fixed_y,
        Tracking::None,
        settings,
    )
}

/// Solve the tracking-penalized single-period dispatch (TED). With
/// `theta = 0` this reduces exactly to [`solve_sed`].
pub fn solve_ted(
    config: &MicrogridConfig,
    state: &SystemState,
    load_kw: f64,
    renewable_kw: f64,
    reference_kg: f64,
    theta: f64,
    hull: &ConvexHullModel,
    settings: &SolverSettings,
) -> Result<DispatchDecision, SolveError> {
    let refs = [reference_kg];
    solve_single_period(
        config,
        state,
        load_kw,
        renewable_kw,
        hull,
        None,
        Tracking::PerPeriod {
            theta,
            reference_kg: &refs,
        },
        settings,
    )
}

#[allow(clippy::too_many_arguments)]
fn solve_single_period(
    config: &MicrogridConfig,
    state: &SystemState,
    load_kw: f64,
    renewable_kw: f64,
    hull: &ConvexHullModel,
    fixed_y: Option<&DispatchDecision>,
    tracking: Tracking,
    settings: &SolverSettings,
) -> Result<DispatchDecision, SolveError> {
    let load = [load_kw];
    let ren = [renewable_kw];
    let fixed = fixed_y.map(|d| vec![d.clone()]);
    let options = AssemblyOptions {
        contract: None,
        tracking: Some(tracking),
        fixed_y: fixed.as_deref(),
        caps: None,
    };
    let (program, map) =
        assemble_horizon_program(config, hull, &load, &ren, state, settings, &options);
    let sol = qp::solve(&program, settings).map_err(|e| match e {
        QpError::Infeasible { group } => SolveError::Infeasible { group },
        other => SolveError::Backend(other),
    })?;
    let mut decisions = decisions_from_solution(&sol.x, &map);
    Ok(decisions.remove(0))
}

/// Solve a rolling window of `k` periods and return all window decisions;
/// the caller applies the first one (MPC pattern).
#[allow(clippy::too_many_arguments)]
pub fn solve_window(
    config: &MicrogridConfig,
    state: &SystemState,
    load: &[f64],
    renewable: &[f64],
    hull: &ConvexHullModel,
    tracking: Tracking,
    contract: ContractMode,
    settings: &SolverSettings,
) -> Result<Vec<DispatchDecision>, SolveError> {
    let options = AssemblyOptions {
        contract: Some(contract),
        tracking: Some(tracking),
        fixed_y: None,
        caps: None,
    };
    let (program, map) =
        assemble_horizon_program(config, hull, load, renewable, state, settings, &options);
    let sol = qp::solve(&program, settings).map_err(|e| match e {
        QpError::Infeasible { group } => SolveError::Infeasible { group },
        other => SolveError::Backend(other),
    })?;
    Ok(decisions_from_solution(&sol.x, &map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BesParams, CostParams, DgParams, LdesParams, NonconvexCurve};
    use crate::scenario::{synthesize_one, SyntheticGenConfig};
    use approx::assert_abs_diff_eq;

    fn desk() -> (MicrogridConfig, ConvexHullModel) {
        let cfg = MicrogridConfig::desk_default();
        let hull = ConvexHullModel::build(&cfg.ldes, 6).unwrap();
        (cfg, hull)
    }

    /// Integral toy with unit efficiencies and linear 0.5 kg/kWh conversion,
    /// small enough for exhaustive 1 kW grid search.
    fn toy_config() -> (MicrogridConfig, ConvexHullModel) {
        let charge = NonconvexCurve::linear(0.5, 2.0);
        let discharge = NonconvexCurve::linear(0.5, 2.0);
        let cfg = MicrogridConfig {
            costs: CostParams {
                load_shed_penalty: 10.0,
                dg_fuel_price: 1.0,
                bes_degradation: 0.0,
                ldes_degradation: 0.0,
                contract_violation_penalty: 10.0,
            },
            dg: DgParams { p_min_kw: 0.0, p_max_kw: 3.0 },
            bes: BesParams {
                p_max_kw: 2.0,
                soc_min_kwh: 0.0,
                soc_max_kwh: 4.0,
                eta_charge: 1.0,
                eta_discharge: 1.0,
                soc_init_kwh: 2.0,
            },
            ldes: LdesParams {
                p_min_kw: 0.0,
                p_max_kw: 2.0,
                soc_min_kg: 0.0,
                soc_max_kg: 10.0,
                soc_init_kg: 2.0,
                soc_final_target_kg: 2.0,
                charge_curve: charge,
                discharge_curve: discharge,
            },
        };
        let hull = ConvexHullModel::build(&cfg.ldes, 2).unwrap();
        (cfg, hull)
    }

    fn toy_scenario(load: Vec<f64>, ren: Vec<f64>) -> ScenarioSeries {
        ScenarioSeries::new("toy", load, ren)
    }

    /// Exhaustive 1 kW grid search over (d, b+, b-, p-, p+) per period for
    /// the integral toy. Serves as the independent optimality oracle.
    fn brute_force_toy(cfg: &MicrogridConfig, load: &[f64], ren: &[f64]) -> f64 {
        let t_len = load.len();
        assert!(t_len <= 3, "oracle is exponential in the horizon");
        let mut best = f64::INFINITY;
        // decision tuple ranges (integers)
        let d_max = cfg.dg.p_max_kw as i64;
        let b_max = cfg.bes.p_max_kw as i64;
        let p_max = cfg.ldes.p_max_kw as i64;
        struct Frame {
            e: f64,
            h: f64,
            cost: f64,
        }
        fn recurse(
            cfg: &MicrogridConfig,
            load: &[f64],
            ren: &[f64],
            t: usize,
            frame: Frame,
            ranges: (i64, i64, i64),
            best: &mut f64,
        ) {
            if t == load.len() {
                if frame.h >= cfg.ldes.soc_final_target_kg - 1e-9 {
                    *best = best.min(frame.cost);
                }
                return;
            }
            if frame.cost >= *best {
                return;
            }
            let (d_max, b_max, p_max) = ranges;
            for d in 0..=d_max {
                for bp in 0..=b_max {
                    for bm in 0..=b_max {
                        let e = frame.e + bm as f64 - bp as f64;
                        if e < cfg.bes.soc_min_kwh - 1e-9 || e > cfg.bes.soc_max_kwh + 1e-9 {
                            continue;
                        }
                        for pc in 0..=p_max {
                            for pd in 0..=p_max {
                                let h = frame.h + 0.5 * pc as f64 - 0.5 * pd as f64;
                                if h < cfg.ldes.soc_min_kg - 1e-9
                                    || h > cfg.ldes.soc_max_kg + 1e-9
                                {
                                    continue;
                                }
                                let net = d as f64 + bp as f64 - bm as f64 + pd as f64
                                    - pc as f64;
                                let rhs = load[t] - net;
                                if rhs < -1e-9 {
                                    continue;
                                }
                                let r = rhs.min(ren[t]);
                                let l = rhs - r;
                                if l > load[t] + 1e-9 {
                                    continue;
                                }
                                let cost = frame.cost
                                    + cfg.costs.dg_fuel_price * d as f64
                                    + cfg.costs.load_shed_penalty * l;
                                recurse(
                                    cfg,
                                    load,
                                    ren,
                                    t + 1,
                                    Frame { e, h, cost },
                                    ranges,
                                    best,
                                );
                            }
                        }
                    }
                }
            }
        }
        recurse(
            cfg,
            load,
            ren,
            0,
            Frame {
                e: cfg.bes.soc_init_kwh,
                h: cfg.ldes.soc_init_kg,
                cost: 0.0,
            },
            (d_max, b_max, p_max),
            &mut best,
        );
        best
    }

    #[test]
    fn surplus_two_period_toy_costs_nothing() {
        let (mut cfg, _) = toy_config();
        cfg.ldes.soc_final_target_kg = cfg.ldes.soc_init_kg;
        let hull = ConvexHullModel::build(&cfg.ldes, 2).unwrap();
        let scenario = toy_scenario(vec![2.0, 2.0], vec![5.0, 5.0]);
        let mut settings = SolverSettings::default();
        settings.hydrogen_value = 0.0;
        let bundle = solve_oed(&cfg, &scenario, &hull, &settings).unwrap();
        assert!(bundle.total_cost.abs() < 1e-6, "cost {}", bundle.total_cost);
        for d in &bundle.decisions {
            assert!(d.dg_kw < 1e-6);
            assert!(d.shed_kw < 1e-6);
        }
    }

    #[test]
    fn oed_matches_brute_force_grid_on_scarcity_toy() {
        let (cfg, hull) = toy_config();
        let load = vec![2.0, 8.0, 2.0];
        let ren = vec![4.0, 0.0, 2.0];
        let oracle = brute_force_toy(&cfg, &load, &ren);
        let scenario = toy_scenario(load, ren);
        let mut settings = SolverSettings::default();
        settings.hydrogen_value = 0.0;
        let bundle = solve_oed(&cfg, &scenario, &hull, &settings).unwrap();
        // grid restriction can only be worse than the continuous optimum
        assert!(oracle >= bundle.total_cost - 1e-3 * oracle.abs());
        assert!(
            (bundle.total_cost - oracle).abs() <= 1e-3 * oracle.abs(),
            "lp {} vs grid {}",
            bundle.total_cost,
            oracle
        );
    }

    #[test]
    fn unreachable_contract_is_infeasible_with_certificate() {
        let (mut cfg, _) = toy_config();
        cfg.ldes.soc_final_target_kg = 11.0; // above capacity
        let hull = ConvexHullModel::build(&cfg.ldes, 2).unwrap();
        let scenario = toy_scenario(vec![2.0], vec![2.0]);
        match solve_oed(&cfg, &scenario, &hull, &SolverSettings::default()) {
            Err(SolveError::InvalidConfig(v)) => {
                assert!(v.iter().any(|c| c.field.contains("soc_final_target")));
            }
            other => panic!("expected invalid config, got {other:?}"),
        }
        // reachable bound-wise but not within the horizon
        let mut cfg2 = toy_config().0;
        cfg2.ldes.soc_final_target_kg = 9.0;
        let hull2 = ConvexHullModel::build(&cfg2.ldes, 2).unwrap();
        match solve_oed(&cfg2, &toy_scenario(vec![2.0], vec![2.0]), &hull2, &SolverSettings::default()) {
            Err(SolveError::Infeasible { group }) => assert_eq!(group, ConstraintGroup::Contract),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn batch_isolates_failures_and_matches_sequential() {
        let (cfg, hull) = toy_config();
        let good = toy_scenario(vec![2.0, 2.0], vec![4.0, 4.0]);
        let starving = toy_scenario(vec![9.0, 9.0], vec![0.0, 0.0]);
        let scenarios = vec![good.clone(), starving.clone(), good.clone()];
        let settings = SolverSettings::default();
        let batch = batch_generate_trajectories(&cfg, &scenarios, &hull, &settings);
        assert_eq!(batch.len(), 3);
        assert!(batch[0].is_ok());
        assert!(batch[2].is_ok());
        // starving scenario sheds load but is still feasible; force failure
        // via an unreachable contract instead
        let mut cfg2 = cfg.clone();
        cfg2.ldes.soc_final_target_kg = 9.5;
        let hull2 = ConvexHullModel::build(&cfg2.ldes, 2).unwrap();
        let batch2 = batch_generate_trajectories(&cfg2, &scenarios, &hull2, &settings);
        assert!(batch2.iter().all(|r| r.is_err()));
        // determinism: parallel equals a fresh sequential run
        let seq: Vec<_> = scenarios
            .iter()
            .map(|s| solve_oed(&cfg, s, &hull, &settings))
            .collect();
        for (a, b) in batch.iter().zip(&seq) {
            match (a, b) {
                (Ok(x), Ok(y)) => {
                    assert_eq!(x.total_cost, y.total_cost);
                    assert_eq!(x.decisions, y.decisions);
                }
                _ => panic!("mismatched batch results"),
            }
        }
    }

    #[test]
    fn identical_scenarios_give_identical_bundles() {
        let (cfg, hull) = toy_config();
        let s = toy_scenario(vec![2.0, 6.0], vec![5.0, 1.0]);
        let out = batch_generate_trajectories(
            &cfg,
            &[s.clone(), s],
            &hull,
            &SolverSettings::default(),
        );
        let a = out[0].as_ref().unwrap();
        let b = out[1].as_ref().unwrap();
        assert_eq!(a.total_cost, b.total_cost);
        assert_eq!(a.decisions, b.decisions);
    }

    #[test]
    fn sed_idles_when_renewable_covers_load() {
        let (mut cfg, _) = toy_config();
        cfg.costs.bes_degradation = 0.0;
        cfg.costs.ldes_degradation = 0.0;
        let hull = ConvexHullModel::build(&cfg.ldes, 2).unwrap();
        let state = cfg.initial_state();
        let d = solve_sed(&cfg, &state, 2.0, 6.0, &hull, None, &SolverSettings::default())
            .unwrap();
        assert!(d.dg_kw < 1e-6);
        assert!(d.shed_kw < 1e-6);
    }

    #[test]
    fn sed_sheds_exactly_the_residual_in_scarcity() {
        // DG capped, storage empty: shedding covers the remaining imbalance.
        let (cfg, hull) = desk();
        let state = SystemState {
            t: 0,
            bes_soc_kwh: cfg.bes.soc_min_kwh,
            ldes_soc_kg: cfg.ldes.soc_min_kg,
        };
        let d = solve_sed(&cfg, &state, 100.0, 10.0, &hull, None, &SolverSettings::default())
            .unwrap();
        // one-period brute force: supply = r + d; best is r=10, d=50, shed 40
        assert_abs_diff_eq!(d.renewable_kw, 10.0, epsilon = 1e-5);
        assert_abs_diff_eq!(d.dg_kw, 50.0, epsilon = 1e-5);
        assert_abs_diff_eq!(d.shed_kw, 40.0, epsilon = 1e-5);
    }

    #[test]
    fn ted_with_zero_theta_equals_sed() {
        let (cfg, hull) = desk();
        let state = cfg.initial_state();
        let settings = SolverSettings::default();
        let sed = solve_sed(&cfg, &state, 80.0, 60.0, &hull, None, &settings).unwrap();
        let ted = solve_ted(&cfg, &state, 80.0, 60.0, 400.0, 0.0, &hull, &settings).unwrap();
        assert_eq!(sed, ted);
    }

    #[test]
    fn ted_with_huge_theta_hits_reachable_reference() {
        let (cfg, hull) = desk();
        let state = cfg.initial_state();
        let settings = SolverSettings::default();
        // surplus hour: charging at up to 100 kW is possible
        let reachable = state.ldes_soc_kg + 1.0;
        let d = solve_ted(&cfg, &state, 50.0, 160.0, reachable, 1e9, &hull, &settings).unwrap();
        assert!(
            (d.ldes_soc_kg - reachable).abs() <= 1e-4,
            "soc {} vs ref {}",
            d.ldes_soc_kg,
            reachable
        );
    }

    #[test]
    fn ted_tracking_gap_is_monotone_in_theta() {
        let (cfg, hull) = desk();
        let state = cfg.initial_state();
        let settings = SolverSettings::default();
        // closing the gap requires burning DG fuel, so the trade-off moves
        // with theta across several orders of magnitude
        let reference = state.ldes_soc_kg + 1.2;
        let mut last_gap = f64::INFINITY;
        for theta in [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0] {
            let d =
                solve_ted(&cfg, &state, 90.0, 100.0, reference, theta, &hull, &settings).unwrap();
            let gap = (d.ldes_soc_kg - reference).abs();
            assert!(
                gap <= last_gap + 1e-5,
                "theta {theta}: gap {gap} > previous {last_gap}"
            );
            last_gap = gap;
        }
        assert!(last_gap < 0.05, "large theta should nearly close the gap");
    }

    #[test]
    fn regularizer_identity_and_perturbation_bound() {
        let (cfg, hull) = toy_config();
        let scenario = toy_scenario(vec![2.0, 8.0, 2.0], vec![4.0, 0.0, 2.0]);
        let mut s0 = SolverSettings::default();
        s0.epsilon = 0.0;
        let init = cfg.initial_state();
        let opts = AssemblyOptions {
            contract: Some(ContractMode::HardAtHorizonEnd),
            ..Default::default()
        };
        let (p0, _) = assemble_horizon_program(
            &cfg, &hull, &scenario.load_kw, &scenario.renewable_kw, &init, &s0, &opts,
        );
        assert!(p0.quad_cost.iter().all(|&q| q == 0.0), "epsilon 0 adds nothing");
        let b0 = solve_oed(&cfg, &scenario, &hull, &s0).unwrap();
        let b1 = solve_oed(&cfg, &scenario, &hull, &SolverSettings::default()).unwrap();
        // objective change at optimum bounded by eps * |x|^2
        let norm_sq: f64 = b1
            .decisions
            .iter()
            .map(|d| d.renewable_kw.powi(2) + d.shed_kw.powi(2) + d.dg_kw.powi(2))
            .sum();
        assert!((b1.total_cost - b0.total_cost).abs() <= 1e-8 * norm_sq + 1e-6);
    }

    #[test]
    fn regularizer_resolves_degenerate_tie_to_analytic_argmin() {
        // free DG (zero fuel price breaks c_l > c_d, so use a tiny price and
        // exaggerate epsilon instead): surplus splits between r and d.
        let (mut cfg, _) = toy_config();
        cfg.costs.dg_fuel_price = 0.0;
        cfg.costs.load_shed_penalty = 1.0;
        cfg.dg.p_max_kw = 10.0;
        // pin both SoC levels so storage cannot shift the tie
        cfg.bes.soc_min_kwh = cfg.bes.soc_init_kwh;
        cfg.bes.soc_max_kwh = cfg.bes.soc_init_kwh;
        cfg.ldes.soc_min_kg = cfg.ldes.soc_init_kg;
        cfg.ldes.soc_max_kg = cfg.ldes.soc_init_kg;
        let hull = ConvexHullModel::build(&cfg.ldes, 2).unwrap();
        let mut settings = SolverSettings::default();
        settings.epsilon = 1e-3;
        let state = cfg.initial_state();
        // L = 10, R = 20: any r + d = 10 with r <= 20, d <= 10 is optimal at
        // zero cost; epsilon picks min |x|^2 subject to r + d = 10 -> r = d = 5.
        let d = solve_sed(&cfg, &state, 10.0, 20.0, &hull, None, &settings).unwrap();
        assert_abs_diff_eq!(d.renewable_kw, 5.0, epsilon = 1e-3);
        assert_abs_diff_eq!(d.dg_kw, 5.0, epsilon = 1e-3);
    }

    #[test]
    fn proposition1_sequential_sed_reproduces_oed() {
        let mut cfg = MicrogridConfig::desk_default();
        cfg.ldes.soc_final_target_kg = cfg.ldes.soc_init_kg;
        let hull = ConvexHullModel::build(&cfg.ldes, 4).unwrap();
        let settings = SolverSettings::default();
        for seed in 0..5u64 {
            let gen = SyntheticGenConfig {
                seed,
                horizon: 24,
                scarcity_start: None,
                ..Default::default()
            };
            let scenario = synthesize_one(&gen, seed as usize).unwrap();
            let bundle = solve_oed(&cfg, &scenario, &hull, &settings).unwrap();
            let mut state = cfg.initial_state();
            for (t, oed) in bundle.decisions.iter().enumerate() {
                let sed = solve_sed(
                    &cfg,
                    &state,
                    scenario.load_kw[t],
                    scenario.renewable_kw[t],
                    &hull,
                    Some(oed),
                    &settings,
                )
                .unwrap();
                for (name, a, b) in [
                    ("r", sed.renewable_kw, oed.renewable_kw),
                    ("l", sed.shed_kw, oed.shed_kw),
                    ("d", sed.dg_kw, oed.dg_kw),
                ] {
                    assert!(
                        (a - b).abs() <= 1e-6,
                        "seed {seed} t={t} {name}: sed {a} vs oed {b}"
                    );
                }
                state = SystemState {
                    t: t + 1,
                    bes_soc_kwh: oed.bes_soc_kwh,
                    ldes_soc_kg: oed.ldes_soc_kg,
                };
            }
        }
    }

    #[test]
    fn oed_cost_is_monotone_in_hull_samples() {
        let mut cfg = MicrogridConfig::desk_default();
        cfg.ldes.soc_final_target_kg = 400.0;
        let gen = SyntheticGenConfig {
            seed: 3,
            horizon: 168,
            scarcity_start: Some(60),
            scarcity_len: 48,
            scarcity_amplitude_kw: 30.0,
            ..Default::default()
        };
        let scenario = synthesize_one(&gen, 0).unwrap();
        let settings = SolverSettings::default();
        let mut last = f64::INFINITY;
        for m in [2usize, 10, 40] {
            let hull = ConvexHullModel::build(&cfg.ldes, m).unwrap();
            let bundle = solve_oed(&cfg, &scenario, &hull, &settings).unwrap();
            assert!(
                bundle.total_cost <= last + 1e-6 * last.abs().max(1.0),
                "m={m}: cost {} above previous {last}",
                bundle.total_cost
            );
            last = bundle.total_cost;
        }
    }

    #[test]
    fn two_vertex_hull_matches_explicit_constant_efficiency_model() {
        // Independent assembly with explicit LDES power variables and linear
        // conversion at the chord slopes.
        let mut cfg = MicrogridConfig::desk_default();
        cfg.ldes.soc_final_target_kg = 240.0;
        let hull = ConvexHullModel::build(&cfg.ldes, 2).unwrap();
        let gen = SyntheticGenConfig {
            seed: 8,
            horizon: 48,
            scarcity_start: None,
            ..Default::default()
        };
        let scenario = synthesize_one(&gen, 0).unwrap();
        let mut settings = SolverSettings::default();
        settings.hydrogen_value = 0.0;
        let bundle = solve_oed(&cfg, &scenario, &hull, &settings).unwrap();

        // test-side model: vars per t = r,l,d,bp,bm,e,h,pc,pd (9)
        let t_len = scenario.horizon;
        let nv = 9;
        let idx = |t: usize, k: usize| t * nv + k;
        let mut p = ConvexProgram::new(t_len * nv);
        let slope_c = crate::model::evaluate_curve(&cfg.ldes.charge_curve, 100.0).unwrap() / 100.0;
        let slope_d =
            crate::model::evaluate_curve(&cfg.ldes.discharge_curve, 100.0).unwrap() / 100.0;
        for t in 0..t_len {
            p.lin_cost[idx(t, 1)] = cfg.costs.load_shed_penalty;
            p.lin_cost[idx(t, 2)] = cfg.costs.dg_fuel_price;
            p.lin_cost[idx(t, 3)] = cfg.costs.bes_degradation;
            p.lin_cost[idx(t, 8)] = cfg.costs.ldes_degradation;
            for k in [0usize, 1, 2] {
                p.quad_cost[idx(t, k)] = settings.epsilon;
            }
            p.set_bounds(idx(t, 0), 0.0, scenario.renewable_kw[t]);
            p.set_bounds(idx(t, 1), 0.0, scenario.load_kw[t]);
            p.set_bounds(idx(t, 2), 0.0, cfg.dg.p_max_kw);
            p.set_bounds(idx(t, 3), 0.0, cfg.bes.p_max_kw);
            p.set_bounds(idx(t, 4), 0.0, cfg.bes.p_max_kw);
            p.set_bounds(idx(t, 5), cfg.bes.soc_min_kwh, cfg.bes.soc_max_kwh);
            p.set_bounds(idx(t, 6), cfg.ldes.soc_min_kg, cfg.ldes.soc_max_kg);
            p.set_bounds(idx(t, 7), 0.0, cfg.ldes.p_max_kw);
            p.set_bounds(idx(t, 8), 0.0, cfg.ldes.p_max_kw);
            p.add_eq(LinearRow::new(
                vec![
                    (idx(t, 0), 1.0),
                    (idx(t, 1), 1.0),
                    (idx(t, 2), 1.0),
                    (idx(t, 3), 1.0),
                    (idx(t, 4), -1.0),
                    (idx(t, 8), 1.0),
                    (idx(t, 7), -1.0),
                ],
                scenario.load_kw[t],
                ConstraintGroup::PowerBalance,
            ));
            let mut bes = vec![
                (idx(t, 5), 1.0),
                (idx(t, 4), -cfg.bes.eta_charge),
                (idx(t, 3), 1.0 / cfg.bes.eta_discharge),
            ];
            let mut rhs = 0.0;
            if t == 0 {
                rhs = cfg.bes.soc_init_kwh;
            } else {
                bes.push((idx(t - 1, 5), -1.0));
            }
            p.add_eq(LinearRow::new(bes, rhs, ConstraintGroup::StorageBounds));
            let mut ldes = vec![(idx(t, 6), 1.0), (idx(t, 7), -slope_c), (idx(t, 8), slope_d)];
            let mut rhs = 0.0;
            if t == 0 {
                rhs = cfg.ldes.soc_init_kg;
            } else {
                ldes.push((idx(t - 1, 6), -1.0));
            }
            p.add_eq(LinearRow::new(ldes, rhs, ConstraintGroup::StorageBounds));
        }
        p.add_le(LinearRow::new(
            vec![(idx(t_len - 1, 6), -1.0)],
            -cfg.ldes.soc_final_target_kg,
            ConstraintGroup::Contract,
        ));
        let sol = qp::solve(&p, &settings).unwrap();
        assert!(
            (sol.objective - bundle.total_cost).abs()
                <= 1e-6 * bundle.total_cost.abs().max(1.0),
            "linear model {} vs 2-vertex hull {}",
            sol.objective,
            bundle.total_cost
        );
    }

    #[test]
    fn audit_rejects_tampered_decision() {
        let (cfg, hull) = toy_config();
        let scenario = toy_scenario(vec![2.0, 8.0, 2.0], vec![4.0, 0.0, 2.0]);
        let bundle = solve_oed(&cfg, &scenario, &hull, &SolverSettings::default()).unwrap();
        let mut tampered = bundle.decisions.clone();
        tampered[1].dg_kw += 0.5;
        let out = audit_decisions(
            &cfg,
            &hull,
            &scenario.load_kw,
            &scenario.renewable_kw,
            &cfg.initial_state(),
            &tampered,
            ContractMode::HardAtHorizonEnd,
            1e-6,
        );
        assert!(matches!(out, Err(SolveError::AuditFailure { t: 1, .. })));
    }
}
