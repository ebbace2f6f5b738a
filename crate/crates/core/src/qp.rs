//! Solver-agnostic convex program assembly.
//!
//! The dispatch programs in this crate are linear except for diagonal
//! quadratic terms (tracking penalties, proximal terms, the strict-convexity
//! regularizer), so a program is described by variable boxes, sparse linear
//! equalities and inequalities, a linear cost, and a diagonal quadratic cost.
//! Any LP/QP method can back this contract; the default backend is the
//! Clarabel interior-point solver, run single-threaded for determinism.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, ZeroConeT,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Constraint grouping used for infeasibility diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintGroup {
    PowerBalance,
    StorageBounds,
    Contract,
    Device,
    Other,
}

impl std::fmt::Display for ConstraintGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConstraintGroup::PowerBalance => "power balance",
            ConstraintGroup::StorageBounds => "storage bounds",
            ConstraintGroup::Contract => "contract",
            ConstraintGroup::Device => "device",
            ConstraintGroup::Other => "other",
        };
        f.write_str(s)
    }
}

/// Sparse linear row `sum(coeff * z[idx]) (= | <=) rhs`.
#[derive(Debug, Clone)]
pub struct LinearRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
    pub group: ConstraintGroup,
}

impl LinearRow {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64, group: ConstraintGroup) -> Self {
        Self { terms, rhs, group }
    }
}

/// A convex program with linear constraints, variable boxes, and a
/// linear-plus-diagonal-quadratic objective:
///
/// ```text
/// minimize    sum_i lin[i] z_i + quad[i] z_i^2 + offset
/// subject to  eq rows, le rows, lb <= z <= ub
/// ```
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    n: usize,
    pub lin_cost: Vec<f64>,
    /// Coefficient of `z_i^2` (not halved).
    pub quad_cost: Vec<f64>,
    pub cost_offset: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub equalities: Vec<LinearRow>,
    pub inequalities: Vec<LinearRow>,
}

impl ConvexProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            lin_cost: vec![0.0; n],
            quad_cost: vec![0.0; n],
            cost_offset: 0.0,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            equalities: Vec::new(),
            inequalities: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn set_bounds(&mut self, i: usize, lo: f64, hi: f64) {
        self.lower[i] = lo;
        self.upper[i] = hi;
    }

    /// Pin a variable to a fixed value.
    pub fn fix(&mut self, i: usize, value: f64) {
        self.lower[i] = value;
        self.upper[i] = value;
    }

    pub fn add_eq(&mut self, row: LinearRow) {
        self.equalities.push(row);
    }

    pub fn add_le(&mut self, row: LinearRow) {
        self.inequalities.push(row);
    }

    /// Objective value of a candidate point.
    pub fn objective(&self, z: &[f64]) -> f64 {
        let mut v = self.cost_offset;
        for i in 0..self.n {
            v += self.lin_cost[i] * z[i] + self.quad_cost[i] * z[i] * z[i];
        }
        v
    }

    /// Largest violation of equalities, inequalities, and boxes at `z`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.equalities {
            let lhs: f64 = row.terms.iter().map(|&(i, c)| c * z[i]).sum();
            worst = worst.max((lhs - row.rhs).abs());
        }
        for row in &self.inequalities {
            let lhs: f64 = row.terms.iter().map(|&(i, c)| c * z[i]).sum();
            worst = worst.max(lhs - row.rhs);
        }
        for i in 0..self.n {
            worst = worst.max(self.lower[i] - z[i]).max(z[i] - self.upper[i]);
        }
        worst
    }
}

/// Tolerances and limits for the backend solver.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverSettings {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub max_iterations: u32,
    /// Single-threaded, reproducible solves. The backend is deterministic;
    /// the flag is recorded in solve metadata and manifests.
    pub deterministic: bool,
    /// Strict-convexity regularizer weight applied to single-period
    /// decision variables by the dispatch assemblers.
    pub epsilon: f64,
    /// Carrying value of stored hydrogen ($/kg) charged on net drawdown.
    /// Breaks the hydrogen-level degeneracy of myopic solves (where the
    /// hydrogen flow at a given power is otherwise free), keeping weights on
    /// adjacent hull vertices; small enough not to distort the economics.
    pub hydrogen_value: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-8,
            max_iterations: 200,
            deterministic: true,
            epsilon: 1e-8,
            hydrogen_value: 1e-3,
        }
    }
}

#[derive(Debug, Error)]
pub enum QpError {
    #[error("program infeasible; most binding constraint group: {group}")]
    Infeasible { group: ConstraintGroup },
    #[error("solver reached iteration cap without converging")]
    IterationLimit,
    #[error("solver failed with status {0}")]
    NumericalFailure(String),
    #[error("invalid settings: {0}")]
    BadSettings(String),
}

/// Solution of a [`ConvexProgram`].
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
    /// True when the solver reports reduced accuracy; callers may retry or
    /// audit more carefully.
    pub reduced_accuracy: bool,
}

/// Solve a convex program with the Clarabel backend. A numerical stall
/// triggers one retry at 100x looser tolerances, reported as reduced
/// accuracy.
pub fn solve(program: &ConvexProgram, settings: &SolverSettings) -> Result<QpSolution, QpError> {
    match solve_once(program, settings, 1.0) {
        Err(QpError::NumericalFailure(_)) | Err(QpError::IterationLimit) => {
            let mut sol = solve_once(program, settings, 100.0)?;
            sol.reduced_accuracy = true;
            Ok(sol)
        }
        other => other,
    }
}

fn solve_once(
    program: &ConvexProgram,
    settings: &SolverSettings,
    tol_relax: f64,
) -> Result<QpSolution, QpError> {
    if settings.feasibility_tol <= 0.0 || settings.optimality_tol <= 0.0 {
        return Err(QpError::BadSettings("tolerances must be positive".into()));
    }
    let n = program.n;

    // Assemble A z + s = b with s in (zero cone, nonnegative cone).
    // Row order: equalities, inequalities, upper bounds, lower bounds.
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut groups: Vec<ConstraintGroup> = Vec::new();
    let mut r = 0usize;
    for row in &program.equalities {
        for &(i, c) in &row.terms {
            triplets.push((r, i, c));
        }
        b.push(row.rhs);
        groups.push(row.group);
        r += 1;
    }
    let n_eq = r;
    for row in &program.inequalities {
        for &(i, c) in &row.terms {
            triplets.push((r, i, c));
        }
        b.push(row.rhs);
        groups.push(row.group);
        r += 1;
    }
    for i in 0..n {
        if program.upper[i].is_finite() {
            triplets.push((r, i, 1.0));
            b.push(program.upper[i]);
            groups.push(ConstraintGroup::Device);
            r += 1;
        }
        if program.lower[i].is_finite() {
            triplets.push((r, i, -1.0));
            b.push(-program.lower[i]);
            groups.push(ConstraintGroup::Device);
            r += 1;
        }
    }
    let n_rows = r;
    let a = csc_from_triplets(n_rows, n, &triplets);

    // P = 2 * diag(quad) since Clarabel minimizes 1/2 z'Pz + q'z.
    let p_triplets: Vec<(usize, usize, f64)> = program
        .quad_cost
        .iter()
        .enumerate()
        .filter(|&(_, &w)| w != 0.0)
        .map(|(i, &w)| (i, i, 2.0 * w))
        .collect();
    let p = csc_from_triplets(n, n, &p_triplets);

    let cones = [ZeroConeT(n_eq), NonnegativeConeT(n_rows - n_eq)];
    let clarabel_settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(settings.max_iterations)
        .tol_feas(settings.feasibility_tol.min(1e-8) * tol_relax)
        .tol_gap_abs(settings.optimality_tol.min(1e-8) * tol_relax)
        .tol_gap_rel(settings.optimality_tol.min(1e-8) * tol_relax)
        .build()
        .map_err(|e| QpError::BadSettings(e.to_string()))?;

    let mut solver = DefaultSolver::new(&p, &program.lin_cost, &a, &b, &cones, clarabel_settings);
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(QpSolution {
            x: sol.x.clone(),
            objective: sol.obj_val + program.cost_offset,
            iterations: sol.iterations,
            reduced_accuracy: sol.status == SolverStatus::AlmostSolved,
        }),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            Err(QpError::Infeasible {
                group: dominant_group(&sol.z, &groups),
            })
        }
        SolverStatus::MaxIterations => Err(QpError::IterationLimit),
        other => Err(QpError::NumericalFailure(format!("{other:?}"))),
    }
}

/// Attribute an infeasibility certificate to the constraint group with the
/// largest dual weight.
fn dominant_group(dual: &[f64], groups: &[ConstraintGroup]) -> ConstraintGroup {
    let mut best = ConstraintGroup::Other;
    let mut best_mag = 0.0;
    for (i, g) in groups.iter().enumerate() {
        let mag = dual.get(i).copied().unwrap_or(0.0).abs();
        // Prefer named groups over box rows when magnitudes are comparable.
        let weight = if *g == ConstraintGroup::Device { mag * 0.5 } else { mag };
        if weight > best_mag {
            best_mag = weight;
            best = *g;
        }
    }
    best
}

fn csc_from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> CscMatrix {
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cols];
    for &(r, c, v) in triplets {
        by_col[c].push((r, v));
    }
    let mut colptr = Vec::with_capacity(cols + 1);
    let mut rowval = Vec::with_capacity(triplets.len());
    let mut nzval = Vec::with_capacity(triplets.len());
    colptr.push(0);
    for col in by_col.iter_mut() {
        col.sort_by_key(|e| e.0);
        // merge duplicate entries
        let mut k = 0;
        while k < col.len() {
            let (row, mut v) = col[k];
            let mut j = k + 1;
            while j < col.len() && col[j].0 == row {
                v += col[j].1;
                j += 1;
            }
            rowval.push(row);
            nzval.push(v);
            k = j;
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(rows, cols, colptr, rowval, nzval)
}
