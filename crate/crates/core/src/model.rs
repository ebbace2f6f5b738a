//! Physical and economic model of the microgrid.
//!
//! Holds the device parameter blocks, the nonconvex LDES power–hydrogen
//! curves, and the inner convex hull approximation that every solver in the
//! crate consumes. All quantities are kept in physical units internally
//! (kW, kWh, kg); fractional state of charge appears only at I/O boundaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of grid points used for dense-grid curve scans (error measurement,
/// finite-difference bounds). The hull error contract requires at least 1e4.
pub const DENSE_GRID_POINTS: usize = 20_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("power {power} kW outside curve domain [{lo}, {hi}]")]
    OutOfDomain { power: f64, lo: f64, hi: f64 },
    #[error("convex hull needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("hull domain [{hull_lo}, {hull_hi}] does not match curve domain [{curve_lo}, {curve_hi}]")]
    DomainMismatch {
        hull_lo: f64,
        hull_hi: f64,
        curve_lo: f64,
        curve_hi: f64,
    },
    #[error("curve is not strictly increasing on its domain")]
    NotIncreasing,
    #[error("invalid curve parameters: {0}")]
    BadCurve(String),
}

/// Cost coefficients of the dispatch objective plus the long-term contract
/// penalty applied to any final-SoC shortfall.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostParams {
    /// Load shedding penalty ($/kWh).
    pub load_shed_penalty: f64,
    /// Diesel generator fuel price ($/kWh).
    pub dg_fuel_price: f64,
    /// BES marginal degradation cost ($/kWh discharged).
    pub bes_degradation: f64,
    /// LDES marginal degradation cost ($/kWh discharged).
    pub ldes_degradation: f64,
    /// Contract violation penalty on final-SoC shortfall ($/kg).
    pub contract_violation_penalty: f64,
}

/// Diesel generator power bounds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DgParams {
    pub p_min_kw: f64,
    pub p_max_kw: f64,
}

/// Battery energy storage parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BesParams {
    /// Charge and discharge power cap (kW).
    pub p_max_kw: f64,
    pub soc_min_kwh: f64,
    pub soc_max_kwh: f64,
    /// Charge efficiency (fraction of grid energy stored).
    pub eta_charge: f64,
    /// Discharge efficiency (stored energy per unit of grid energy delivered).
    pub eta_discharge: f64,
    pub soc_init_kwh: f64,
}

/// Long-duration (hydrogen) storage parameters, including the nonconvex
/// conversion curves for both directions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdesParams {
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub soc_min_kg: f64,
    pub soc_max_kg: f64,
    pub soc_init_kg: f64,
    /// Final SoC target required by the long-term contract (kg).
    pub soc_final_target_kg: f64,
    /// Power (kW) -> hydrogen production rate (kg/h) while charging.
    pub charge_curve: NonconvexCurve,
    /// Power (kW) -> hydrogen consumption rate (kg/h) while discharging.
    pub discharge_curve: NonconvexCurve,
}

/// Parametric family of a power-to-hydrogen-rate curve.
///
/// Every family maps power (kW) to a hydrogen rate (kg/h), is anchored at
/// `rate(0) = 0`, and must be strictly increasing on its domain.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CurveFamily {
    /// `rate(p) = a*p - b*p^2 / (p + d)` with `a, b, d > 0`.
    ///
    /// The default stand-in for the electrochemical conversion: marginal
    /// efficiency falls from `a` at low power toward `a - b` at high power.
    /// Second derivative is `-2*b*d^2 / (p + d)^3`, so the analytic bound is
    /// `Z = 2*b/d` at the left edge of a domain starting at zero.
    Saturating { a: f64, b: f64, d: f64 },
    /// `rate(p) = a*p + b*p^2 / (p + d)` with `a > 0`, `b, d > 0`.
    ///
    /// Convex companion family used for the discharge (consumption) side:
    /// delivering power gets costlier per kW as load rises, so hydrogen
    /// consumption accelerates. A concave consumption curve would let the
    /// convex hull under-model consumption along its long chord no matter
    /// how many vertices are sampled, destroying the approximation's
    /// convergence in M; the convex shape keeps the optimizer on adjacent
    /// chords. Second derivative is `2*b*d^2 / (p + d)^3`, so
    /// `Z = 2*b/d` at a zero left edge.
    Accelerating { a: f64, b: f64, d: f64 },
    /// `rate(p) = scale * p^exponent`. `exponent = 1` is the constant
    /// efficiency model; `exponent < 1` has an unbounded second derivative
    /// at zero, in which case `Z` is estimated on a dense grid and may be
    /// infinite.
    Power { scale: f64, exponent: f64 },
}

/// A nonconvex conversion curve together with its domain and a bound `Z` on
/// the magnitude of its second derivative over that domain.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NonconvexCurve {
    pub family: CurveFamily,
    pub p_lo_kw: f64,
    pub p_hi_kw: f64,
    /// max |rate''(p)| over the domain (kg/h per kW^2).
    pub second_derivative_bound: f64,
}

impl NonconvexCurve {
    /// Build a curve, validating monotonicity and computing `Z`.
    ///
    /// `Z` is analytic for the saturating family; other families fall back to
    /// finite-difference maximization on a dense grid.
    pub fn new(family: CurveFamily, p_lo_kw: f64, p_hi_kw: f64) -> Result<Self, ModelError> {
        if !(p_lo_kw >= 0.0 && p_hi_kw > p_lo_kw) {
            return Err(ModelError::BadCurve(format!(
                "domain [{p_lo_kw}, {p_hi_kw}] must satisfy 0 <= lo < hi"
            )));
        }
        match family {
            CurveFamily::Saturating { a, b, d } => {
                if !(a > 0.0 && b >= 0.0 && d > 0.0) {
                    return Err(ModelError::BadCurve(format!(
                        "saturating family needs a > 0, b >= 0, d > 0 (got a={a}, b={b}, d={d})"
                    )));
                }
            }
            CurveFamily::Accelerating { a, b, d } => {
                if !(a > 0.0 && b >= 0.0 && d > 0.0) {
                    return Err(ModelError::BadCurve(format!(
                        "accelerating family needs a > 0, b >= 0, d > 0 (got a={a}, b={b}, d={d})"
                    )));
                }
            }
            CurveFamily::Power { scale, exponent } => {
                if !(scale > 0.0 && exponent > 0.0) {
                    return Err(ModelError::BadCurve(format!(
                        "power family needs scale > 0, exponent > 0 (got {scale}, {exponent})"
                    )));
                }
            }
        }
        let mut curve = Self {
            family,
            p_lo_kw,
            p_hi_kw,
            second_derivative_bound: 0.0,
        };
        curve.second_derivative_bound = curve.compute_z();
        // Strict monotonicity check on a dense grid.
        let mut prev = curve.rate_unchecked(p_lo_kw);
        let n = 2_000;
        for k in 1..=n {
            let p = p_lo_kw + (p_hi_kw - p_lo_kw) * k as f64 / n as f64;
            let r = curve.rate_unchecked(p);
            if r <= prev {
                return Err(ModelError::NotIncreasing);
            }
            prev = r;
        }
        Ok(curve)
    }

    /// Default charge-side curve on [0, p_max]: marginal production falls
    /// from 0.030 kg/kWh toward 0.60 of that at rated power.
    pub fn default_charge(p_max_kw: f64) -> Self {
        let d = p_max_kw / 2.0;
        let b = 0.012 * (p_max_kw + d) / p_max_kw;
        Self::new(
            CurveFamily::Saturating { a: 0.030, b, d },
            0.0,
            p_max_kw,
        )
        .expect("default charge curve is valid")
    }

    /// Default discharge-side curve on [0, p_max]: hydrogen consumption
    /// accelerates so delivered-energy efficiency falls from ~20 kWh/kg at
    /// low load toward ~13 kWh/kg at rated power.
    pub fn default_discharge(p_max_kw: f64) -> Self {
        let d = p_max_kw / 2.0;
        let b = 0.025 * (p_max_kw + d) / p_max_kw;
        Self::new(
            CurveFamily::Accelerating { a: 0.050, b, d },
            0.0,
            p_max_kw,
        )
        .expect("default discharge curve is valid")
    }

    /// Constant-efficiency (linear) curve through `(p_max, rate_at_max)`.
    pub fn linear(slope_kg_per_kwh: f64, p_max_kw: f64) -> Self {
        Self::new(
            CurveFamily::Power {
                scale: slope_kg_per_kwh,
                exponent: 1.0,
            },
            0.0,
            p_max_kw,
        )
        .expect("linear curve is valid")
    }

    fn rate_unchecked(&self, p: f64) -> f64 {
        match self.family {
            CurveFamily::Saturating { a, b, d } => a * p - b * p * p / (p + d),
            CurveFamily::Accelerating { a, b, d } => a * p + b * p * p / (p + d),
            CurveFamily::Power { scale, exponent } => scale * p.powf(exponent),
        }
    }

    fn compute_z(&self) -> f64 {
        match self.family {
            // |f''(p)| = 2 b d^2 / (p + d)^3, maximal at the domain's left edge.
            CurveFamily::Saturating { b, d, .. } | CurveFamily::Accelerating { b, d, .. } => {
                2.0 * b * d * d / (self.p_lo_kw + d).powi(3)
            }
            CurveFamily::Power { .. } => self.finite_difference_z(),
        }
    }

    /// Estimate max |f''| by central finite differences on a dense grid.
    fn finite_difference_z(&self) -> f64 {
        let n = DENSE_GRID_POINTS;
        let h = (self.p_hi_kw - self.p_lo_kw) / n as f64;
        let mut z: f64 = 0.0;
        for k in 1..n {
            let p = self.p_lo_kw + h * k as f64;
            let f2 =
                (self.rate_unchecked(p + h) - 2.0 * self.rate_unchecked(p) + self.rate_unchecked(p - h))
                    / (h * h);
            z = z.max(f2.abs());
        }
        if let CurveFamily::Power { exponent, .. } = self.family {
            // Second derivative diverges at a zero left edge for exponents below 2.
            if exponent < 2.0 && exponent != 1.0 && self.p_lo_kw == 0.0 {
                return f64::INFINITY;
            }
        }
        z
    }
}

/// Hydrogen rate (kg/h) of `curve` at `power` (kW).
pub fn evaluate_curve(curve: &NonconvexCurve, power_kw: f64) -> Result<f64, ModelError> {
    if power_kw < curve.p_lo_kw - 1e-9 || power_kw > curve.p_hi_kw + 1e-9 {
        return Err(ModelError::OutOfDomain {
            power: power_kw,
            lo: curve.p_lo_kw,
            hi: curve.p_hi_kw,
        });
    }
    Ok(curve.rate_unchecked(power_kw.clamp(curve.p_lo_kw, curve.p_hi_kw)))
}

/// One direction of the inner convex hull: on-curve vertices sorted by power.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HullSide {
    /// `(power_kw, hydrogen_rate_kg_per_h)` vertices, sorted by power,
    /// spanning the curve's domain.
    pub vertices: Vec<(f64, f64)>,
}

impl HullSide {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn powers(&self) -> impl Iterator<Item = f64> + '_ {
        self.vertices.iter().map(|v| v.0)
    }

    pub fn rates(&self) -> impl Iterator<Item = f64> + '_ {
        self.vertices.iter().map(|v| v.1)
    }

    /// Piecewise-linear interpolation through consecutive vertices.
    pub fn chord_interpolation(&self, power_kw: f64) -> f64 {
        let vs = &self.vertices;
        if power_kw <= vs[0].0 {
            return vs[0].1;
        }
        for pair in vs.windows(2) {
            let (p0, r0) = pair[0];
            let (p1, r1) = pair[1];
            if power_kw <= p1 {
                let w = (power_kw - p0) / (p1 - p0);
                return r0 + w * (r1 - r0);
            }
        }
        vs[vs.len() - 1].1
    }
}

/// Inner convex hull approximation of both LDES conversion curves.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvexHullModel {
    pub charge: HullSide,
    pub discharge: HullSide,
    /// Vertex count per direction.
    pub samples: usize,
}

impl ConvexHullModel {
    /// Build both hull sides from the LDES curves with `m` vertices each.
    pub fn build(ldes: &LdesParams, m: usize) -> Result<Self, ModelError> {
        Ok(Self {
            charge: build_convex_hull(&ldes.charge_curve, m)?,
            discharge: build_convex_hull(&ldes.discharge_curve, m)?,
            samples: m,
        })
    }
}

/// Sample `m` on-curve vertices on a uniform power grid including both
/// domain endpoints.
pub fn build_convex_hull(curve: &NonconvexCurve, m: usize) -> Result<HullSide, ModelError> {
    if m < 2 {
        return Err(ModelError::TooFewSamples(m));
    }
    let mut vertices = Vec::with_capacity(m);
    for k in 0..m {
        let p = curve.p_lo_kw + (curve.p_hi_kw - curve.p_lo_kw) * k as f64 / (m - 1) as f64;
        vertices.push((p, evaluate_curve(curve, p)?));
    }
    Ok(HullSide { vertices })
}

/// Maximum vertical gap (kg/h) between the curve and the hull's chord
/// interpolation over a dense power grid.
///
/// This upper-bounds the chordal approximation error and, for a curve with
/// |f''| <= Z, satisfies `error <= 2 Z (p_hi - p_lo)^2 / (m - 1)^2`.
pub fn hull_approximation_error(
    curve: &NonconvexCurve,
    hull: &HullSide,
) -> Result<f64, ModelError> {
    let first = hull.vertices.first().ok_or(ModelError::TooFewSamples(0))?;
    let last = hull.vertices.last().unwrap();
    if (first.0 - curve.p_lo_kw).abs() > 1e-9 || (last.0 - curve.p_hi_kw).abs() > 1e-9 {
        return Err(ModelError::DomainMismatch {
            hull_lo: first.0,
            hull_hi: last.0,
            curve_lo: curve.p_lo_kw,
            curve_hi: curve.p_hi_kw,
        });
    }
    let n = DENSE_GRID_POINTS;
    let mut worst: f64 = 0.0;
    for k in 0..=n {
        let p = curve.p_lo_kw + (curve.p_hi_kw - curve.p_lo_kw) * k as f64 / n as f64;
        let gap = (evaluate_curve(curve, p)? - hull.chord_interpolation(p)).abs();
        worst = worst.max(gap);
    }
    Ok(worst)
}

/// State of the system entering an hour.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SystemState {
    /// Hour index (0-based).
    pub t: usize,
    pub bes_soc_kwh: f64,
    pub ldes_soc_kg: f64,
}

/// Full parameter set of the microgrid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MicrogridConfig {
    pub costs: CostParams,
    pub dg: DgParams,
    pub bes: BesParams,
    pub ldes: LdesParams,
}

impl MicrogridConfig {
    pub fn initial_state(&self) -> SystemState {
        SystemState {
            t: 0,
            bes_soc_kwh: self.bes.soc_init_kwh,
            ldes_soc_kg: self.ldes.soc_init_kg,
        }
    }

    /// Desk-scale reference system: 150 kW load peak against 100 kW wind +
    /// 100 kW solar, 50 kW DG, 50 kW / 200 kWh BES (eta 0.9, initial SoC 0.5)
    /// and 100 kW / 1000 kg LDES (initial SoC 0.2, final target 0.5).
    pub fn desk_default() -> Self {
        Self {
            costs: CostParams {
                load_shed_penalty: 5.0,
                dg_fuel_price: 0.3,
                bes_degradation: 0.01,
                ldes_degradation: 0.02,
                contract_violation_penalty: 10.0,
            },
            dg: DgParams {
                p_min_kw: 0.0,
                p_max_kw: 50.0,
            },
            bes: BesParams {
                p_max_kw: 50.0,
                soc_min_kwh: 20.0,
                soc_max_kwh: 200.0,
                eta_charge: 0.9,
                eta_discharge: 0.9,
                soc_init_kwh: 100.0,
            },
            ldes: LdesParams {
                p_min_kw: 0.0,
                p_max_kw: 100.0,
                soc_min_kg: 50.0,
                soc_max_kg: 1000.0,
                soc_init_kg: 200.0,
                soc_final_target_kg: 500.0,
                charge_curve: NonconvexCurve::default_charge(100.0),
                discharge_curve: NonconvexCurve::default_discharge(100.0),
            },
        }
    }
}

/// One violated invariant, naming the offending field and the rule it broke.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConfigViolation {
    pub field: String,
    pub rule: String,
}

impl ConfigViolation {
    fn new(field: &str, rule: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            rule: rule.into(),
        }
    }
}

/// Check every model invariant; violations are data, not failures.
pub fn validate_config(config: &MicrogridConfig) -> Vec<ConfigViolation> {
    let mut v = Vec::new();
    let c = &config.costs;
    for (name, val) in [
        ("costs.load_shed_penalty", c.load_shed_penalty),
        ("costs.dg_fuel_price", c.dg_fuel_price),
        ("costs.bes_degradation", c.bes_degradation),
        ("costs.ldes_degradation", c.ldes_degradation),
        (
            "costs.contract_violation_penalty",
            c.contract_violation_penalty,
        ),
    ] {
        if !(val >= 0.0) {
            v.push(ConfigViolation::new(name, "must be nonnegative"));
        }
    }
    if !(c.load_shed_penalty > c.dg_fuel_price) {
        v.push(ConfigViolation::new(
            "costs.load_shed_penalty",
            "must strictly exceed dg_fuel_price",
        ));
    }
    let dg = &config.dg;
    if !(0.0 <= dg.p_min_kw && dg.p_min_kw <= dg.p_max_kw) {
        v.push(ConfigViolation::new("dg.p_min_kw", "needs 0 <= p_min <= p_max"));
    }
    let b = &config.bes;
    if !(b.p_max_kw > 0.0) {
        v.push(ConfigViolation::new("bes.p_max_kw", "must be positive"));
    }
    if !(b.eta_charge > 0.0 && b.eta_charge <= 1.0) {
        v.push(ConfigViolation::new("bes.eta_charge", "must lie in (0, 1]"));
    }
    if !(b.eta_discharge > 0.0 && b.eta_discharge <= 1.0) {
        v.push(ConfigViolation::new("bes.eta_discharge", "must lie in (0, 1]"));
    }
    if !(b.soc_min_kwh <= b.soc_init_kwh && b.soc_init_kwh <= b.soc_max_kwh) {
        v.push(ConfigViolation::new(
            "bes.soc_init_kwh",
            "must lie in [soc_min, soc_max]",
        ));
    }
    let l = &config.ldes;
    if !(l.p_max_kw > 0.0) {
        v.push(ConfigViolation::new("ldes.p_max_kw", "must be positive"));
    }
    if !(0.0 <= l.p_min_kw && l.p_min_kw <= l.p_max_kw) {
        v.push(ConfigViolation::new(
            "ldes.p_min_kw",
            "needs 0 <= p_min <= p_max",
        ));
    }
    if !(l.soc_min_kg <= l.soc_init_kg && l.soc_init_kg <= l.soc_max_kg) {
        v.push(ConfigViolation::new(
            "ldes.soc_init_kg",
            "must lie in [soc_min, soc_max]",
        ));
    }
    if !(l.soc_min_kg <= l.soc_final_target_kg && l.soc_final_target_kg <= l.soc_max_kg) {
        v.push(ConfigViolation::new(
            "ldes.soc_final_target_kg",
            "must lie in [soc_min, soc_max]",
        ));
    }
    for (name, curve) in [
        ("ldes.charge_curve", &l.charge_curve),
        ("ldes.discharge_curve", &l.discharge_curve),
    ] {
        if (curve.p_lo_kw - l.p_min_kw).abs() > 1e-9 || (curve.p_hi_kw - l.p_max_kw).abs() > 1e-9 {
            v.push(ConfigViolation::new(
                name,
                "domain must match [ldes.p_min_kw, ldes.p_max_kw]",
            ));
        }
        if curve.p_lo_kw == 0.0 && evaluate_curve(curve, 0.0).map_or(true, |r| r.abs() > 1e-12) {
            v.push(ConfigViolation::new(name, "must map zero power to zero rate"));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn default_curve() -> NonconvexCurve {
        NonconvexCurve::default_charge(100.0)
    }

    fn reference_config() -> MicrogridConfig {
        MicrogridConfig::desk_default()
    }

    #[test]
    fn curve_is_zero_at_origin() {
        assert_eq!(evaluate_curve(&default_curve(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn curve_matches_closed_form_at_rated_power() {
        // Independent evaluation of the documented formula a*p - b*p^2/(p+d).
        let c = default_curve();
        let (a, b, d) = match c.family {
            CurveFamily::Saturating { a, b, d } => (a, b, d),
            _ => unreachable!(),
        };
        let expected = a * 100.0 - b * 100.0 * 100.0 / (100.0 + d);
        assert_abs_diff_eq!(evaluate_curve(&c, 100.0).unwrap(), expected, epsilon = 1e-12);
        // efficiency (rate per kW) should have fallen materially from `a`
        assert!(expected / 100.0 < 0.8 * a);
    }

    #[test]
    fn curve_rejects_out_of_domain() {
        let c = default_curve();
        assert!(matches!(
            evaluate_curve(&c, -1.0),
            Err(ModelError::OutOfDomain { .. })
        ));
        assert!(matches!(
            evaluate_curve(&c, 101.0),
            Err(ModelError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn second_derivative_bound_holds_on_grid() {
        let c = default_curve();
        let z = c.second_derivative_bound;
        let n = 5_000;
        let h = 100.0 / n as f64;
        for k in 1..n {
            let p = h * k as f64;
            let f2 = (c.rate_unchecked(p + h) - 2.0 * c.rate_unchecked(p)
                + c.rate_unchecked(p - h))
                / (h * h);
            assert!(f2.abs() <= z * (1.0 + 1e-6), "p={p}: {} > {z}", f2.abs());
        }
    }

    #[test]
    fn hull_with_two_vertices_is_the_chord() {
        let c = default_curve();
        let hull = build_convex_hull(&c, 2).unwrap();
        assert_eq!(hull.vertices.len(), 2);
        assert_eq!(hull.vertices[0], (0.0, 0.0));
        assert_abs_diff_eq!(
            hull.vertices[1].1,
            evaluate_curve(&c, 100.0).unwrap(),
            epsilon = 1e-12
        );
        // any interpolation lies on the straight chord
        let mid = hull.chord_interpolation(50.0);
        assert_abs_diff_eq!(mid, hull.vertices[1].1 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn hull_sqrt_curve_three_vertices_on_uniform_grid() {
        let c = NonconvexCurve::new(
            CurveFamily::Power {
                scale: 1.0,
                exponent: 0.5,
            },
            0.0,
            1.0,
        )
        .unwrap();
        let hull = build_convex_hull(&c, 3).unwrap();
        let ps: Vec<f64> = hull.powers().collect();
        let rs: Vec<f64> = hull.rates().collect();
        assert_eq!(ps, vec![0.0, 0.5, 1.0]);
        assert_abs_diff_eq!(rs[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rs[1], 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(rs[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hull_rejects_single_sample() {
        assert!(matches!(
            build_convex_hull(&default_curve(), 1),
            Err(ModelError::TooFewSamples(1))
        ));
    }

    #[test]
    fn hull_error_zero_for_linear_curve() {
        let c = NonconvexCurve::linear(0.02, 100.0);
        let hull = build_convex_hull(&c, 2).unwrap();
        let err = hull_approximation_error(&c, &hull).unwrap();
        assert!(err < 1e-12, "chord equals curve, got {err}");
    }

    #[test]
    fn hull_error_shrinks_with_samples() {
        // Independent dense-grid oracle: direct max-gap scan, written separately
        // from the library routine.
        let c = default_curve();
        let oracle = |m: usize| -> f64 {
            let hull = build_convex_hull(&c, m).unwrap();
            let mut worst: f64 = 0.0;
            for k in 0..=100_000 {
                let p = 100.0 * k as f64 / 100_000.0;
                let gap = (c.rate_unchecked(p) - hull.chord_interpolation(p)).abs();
                worst = worst.max(gap);
            }
            worst
        };
        let e10 = oracle(10);
        let e40 = oracle(40);
        assert!(e40 < e10, "error(40)={e40} !< error(10)={e10}");
        // Library scan uses a coarser (but still >= 1e4 point) grid.
        let lib10 = hull_approximation_error(&c, &build_convex_hull(&c, 10).unwrap()).unwrap();
        assert_abs_diff_eq!(lib10, e10, epsilon = 1e-6);
    }

    #[test]
    fn hull_error_respects_appendix_bound() {
        let c = default_curve();
        let z = c.second_derivative_bound;
        for m in [2usize, 5, 10, 20, 40] {
            let hull = build_convex_hull(&c, m).unwrap();
            let err = hull_approximation_error(&c, &hull).unwrap();
            let bound = 2.0 * z * (100.0f64 - 0.0).powi(2) / ((m - 1) as f64).powi(2);
            assert!(err <= bound, "m={m}: {err} > {bound}");
        }
    }

    #[test]
    fn hull_error_detects_domain_mismatch() {
        let c = default_curve();
        let other = NonconvexCurve::default_charge(80.0);
        let hull = build_convex_hull(&other, 5).unwrap();
        assert!(matches!(
            hull_approximation_error(&c, &hull),
            Err(ModelError::DomainMismatch { .. })
        ));
    }

    #[test]
    fn lambda_combinations_stay_below_chordal_envelope() {
        // Inner-approximation property over random simplex points.
        use rand::prelude::*;
        let c = default_curve();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for m in [2usize, 10, 40] {
            let hull = build_convex_hull(&c, m).unwrap();
            for _ in 0..1_000 {
                // Exponential spacings normalized to the simplex.
                let mut lam: Vec<f64> = (0..m)
                    .map(|_| -(rng.random::<f64>().max(1e-12)).ln())
                    .collect();
                let s: f64 = lam.iter().sum();
                lam.iter_mut().for_each(|x| *x /= s);
                let p: f64 = lam.iter().zip(hull.powers()).map(|(l, pw)| l * pw).sum();
                let h: f64 = lam.iter().zip(hull.rates()).map(|(l, r)| l * r).sum();
                assert!(
                    h <= hull.chord_interpolation(p) + 1e-9,
                    "m={m}: combo ({p}, {h}) above envelope"
                );
            }
        }
    }

    #[test]
    fn lambda_combinations_stay_above_envelope_for_convex_consumption() {
        // mirrored inner-approximation property on the discharge side: the
        // modeled consumption never undershoots the chordal envelope
        use rand::prelude::*;
        let c = NonconvexCurve::default_discharge(100.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for m in [2usize, 10, 40] {
            let hull = build_convex_hull(&c, m).unwrap();
            for _ in 0..1_000 {
                let mut lam: Vec<f64> = (0..m)
                    .map(|_| -(rng.random::<f64>().max(1e-12)).ln())
                    .collect();
                let s: f64 = lam.iter().sum();
                lam.iter_mut().for_each(|x| *x /= s);
                let p: f64 = lam.iter().zip(hull.powers()).map(|(l, pw)| l * pw).sum();
                let h: f64 = lam.iter().zip(hull.rates()).map(|(l, r)| l * r).sum();
                assert!(
                    h >= hull.chord_interpolation(p) - 1e-9,
                    "m={m}: combo ({p}, {h}) below envelope"
                );
            }
        }
    }

    #[test]
    fn reference_config_is_valid() {
        assert!(validate_config(&reference_config()).is_empty());
    }

    #[test]
    fn validation_flags_bad_discharge_efficiency() {
        let mut cfg = reference_config();
        cfg.bes.eta_discharge = 1.2;
        let v = validate_config(&cfg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "bes.eta_discharge");
    }

    #[test]
    fn validation_flags_initial_soc_below_minimum() {
        let mut cfg = reference_config();
        cfg.ldes.soc_init_kg = 10.0;
        let v = validate_config(&cfg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "ldes.soc_init_kg");
    }

    #[test]
    fn curve_monotonicity_property() {
        use rand::prelude::*;
        let c = default_curve();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let p1 = rng.random::<f64>() * 100.0;
            let p2 = rng.random::<f64>() * 100.0;
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            if hi - lo > 1e-9 {
                assert!(
                    evaluate_curve(&c, lo).unwrap() < evaluate_curve(&c, hi).unwrap(),
                    "rate must increase on ({lo}, {hi})"
                );
            }
        }
    }
}
