//! Multi-principal, one-agent energy contract market.
//!
//! Charging stations (principals) offer the smart-grid provider (agent) a
//! menu of (payment, energy) bundles, one per possible provider type. The
//! provider, whose type is private, picks the proportion of each request it
//! serves. Types are the integers `phi_min..=phi_max`; vectors indexed by
//! type use position `phi - phi_min`.

pub mod baselines;
pub mod best_response;
pub mod equilibrium;
pub mod oracle;
pub mod p1;
pub mod sweeps;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baselines::{
    baseline_information_symmetry, baseline_non_prediction, baseline_proportional_request,
    BaselineOutcome,
};
pub use best_response::{best_response, BestResponse, SolverConfig};
pub use equilibrium::{
    best_response_gains, initial_menus, iterate_contracts, Acceptance, EquilibriumResult,
};
pub use p1::solve_p1;
pub use sweeps::{sweep_price_units, sweep_types, PriceSweepRow, TypeSweepRow};

/// Tolerance for constraint satisfaction inside the solvers.
pub const FEAS_TOL: f64 = 1e-8;
/// Tolerance for end-to-end audits of returned equilibria.
pub const AUDIT_TOL: f64 = 1e-6;
/// Tolerance for payment monotonicity checks.
pub const MONO_TOL: f64 = 1e-10;

/// The provider's type space, type distribution and capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgpTypeModel {
    pub phi_min: u32,
    pub phi_max: u32,
    /// Probability of each type.
    pub p: Vec<f64>,
    /// Energy capacity (MWh) of each type.
    pub capacity: Vec<f64>,
    /// Transfer cost per MWh.
    pub zeta: f64,
    pub true_type: u32,
}

impl SgpTypeModel {
    /// Types `1..=phi_max`, uniform probabilities, capacity
    /// `phi * s_max / phi_max`.
    pub fn uniform(phi_max: u32, s_max: f64, zeta: f64, true_type: u32) -> Result<Self> {
        if phi_max == 0 {
            return Err(Error::InvalidArgument("phi_max must be at least 1".into()));
        }
        let n = phi_max as usize;
        let m = Self {
            phi_min: 1,
            phi_max,
            p: vec![1.0 / n as f64; n],
            capacity: (1..=phi_max)
                .map(|phi| f64::from(phi) * s_max / f64::from(phi_max))
                .collect(),
            zeta,
            true_type,
        };
        m.validate()?;
        Ok(m)
    }

    /// A one-type model at `phi` with the same capacity, for the
    /// full-information comparator.
    pub fn restricted_to(&self, phi: u32) -> Result<Self> {
        let m = Self {
            phi_min: phi,
            phi_max: phi,
            p: vec![1.0],
            capacity: vec![self.capacity_at(phi)],
            zeta: self.zeta,
            true_type: phi,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi_min == 0 || self.phi_min > self.phi_max {
            return Err(Error::InvalidArgument(format!(
                "type range {}..={} is invalid",
                self.phi_min, self.phi_max
            )));
        }
        let n = self.phi_tot();
        if self.p.len() != n || self.capacity.len() != n {
            return Err(Error::Shape(
                "type probabilities or capacities do not match the type count".into(),
            ));
        }
        if self.p.iter().any(|&x| !(x >= 0.0)) || (self.p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "type probabilities must be non-negative and sum to 1".into(),
            ));
        }
        if self.capacity.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "capacities must be finite and non-negative".into(),
            ));
        }
        if self.capacity.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "capacity must be strictly increasing in type".into(),
            ));
        }
        if !(self.zeta >= 0.0) || !self.zeta.is_finite() {
            return Err(Error::InvalidArgument(
                "zeta must be finite and non-negative".into(),
            ));
        }
        if !(self.phi_min..=self.phi_max).contains(&self.true_type) {
            return Err(Error::InvalidArgument(format!(
                "true type {} outside type range",
                self.true_type
            )));
        }
        Ok(())
    }

    /// Number of types.
    pub fn phi_tot(&self) -> usize {
        (self.phi_max - self.phi_min + 1) as usize
    }

    pub fn types(&self) -> impl Iterator<Item = u32> {
        self.phi_min..=self.phi_max
    }

    pub fn index(&self, phi: u32) -> usize {
        (phi - self.phi_min) as usize
    }

    pub fn phi_at(&self, t: usize) -> f64 {
        f64::from(self.phi_min) + t as f64
    }

    pub fn capacity_at(&self, phi: u32) -> f64 {
        self.capacity[self.index(phi)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub ids: Vec<String>,
    /// Announced energy-transfer price per MWh.
    pub rho_unit: f64,
    /// Per-station EV charging price per MWh.
    pub varrho: Vec<f64>,
    /// Minimum improvement for accepting a new contract.
    pub kappa: f64,
    pub max_rounds: usize,
    /// Predicted demand per station (MWh); also caps each request.
    pub demands: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl MarketConfig {
    /// Default prices for `demands.len()` stations named `CS01`, ...
    pub fn with_demands(demands: Vec<f64>) -> Self {
        let n = demands.len();
        Self {
            ids: (1..=n).map(|i| format!("CS{i:02}")).collect(),
            rho_unit: 200.0,
            varrho: vec![220.0; n],
            kappa: 1e-6,
            max_rounds: 200,
            demands,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }

    /// Desk-scale instance: `n` stations with demands drawn uniformly from
    /// `[10, 60]` MWh, rounded to 0.01.
    pub fn desk(n: usize, seed: u64) -> Self {
        let mut rng = crate::seed::rng(seed, "desk-demands", &[]);
        let demands = (0..n)
            .map(|_| (rng.random_range(10.0..60.0) * 100.0_f64).round() / 100.0)
            .collect();
        let mut config = Self::with_demands(demands);
        config.seed = seed;
        config
    }

    pub fn n_cs(&self) -> usize {
        self.demands.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.demands.len();
        if n == 0 {
            return Err(Error::Empty("market needs at least one station".into()));
        }
        if self.ids.len() != n || self.varrho.len() != n {
            return Err(Error::Shape(
                "ids, prices and demands differ in length".into(),
            ));
        }
        if !(self.rho_unit > 0.0) || !self.rho_unit.is_finite() {
            return Err(Error::InvalidArgument("rho_unit must be positive".into()));
        }
        if self.varrho.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "charging prices must be positive".into(),
            ));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::InvalidArgument("kappa must be positive".into()));
        }
        if self.demands.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument(
                "demands must be finite and non-negative".into(),
            ));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidArgument(
                "max_rounds must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One station's contract menu: payment and requested energy per type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractMenu {
    pub cs_id: String,
    pub rho: Vec<f64>,
    pub xi: Vec<f64>,
}

impl ContractMenu {
    pub fn zeros(cs_id: impl Into<String>, phi_tot: usize) -> Self {
        Self {
            cs_id: cs_id.into(),
            rho: vec![0.0; phi_tot],
            xi: vec![0.0; phi_tot],
        }
    }

    pub fn validate(&self, phi_tot: usize) -> Result<()> {
        if self.rho.len() != phi_tot || self.xi.len() != phi_tot {
            return Err(Error::Shape(format!(
                "menu of {} does not cover {phi_tot} types",
                self.cs_id
            )));
        }
        if self
            .rho
            .iter()
            .chain(&self.xi)
            .any(|&v| !(v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "menu of {} has negative or non-finite entries",
                self.cs_id
            )));
        }
        Ok(())
    }
}

/// Served proportion of each station's request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationVector {
    pub pi: Vec<f64>,
}

impl AllocationVector {
    pub fn new(pi: Vec<f64>) -> Self {
        Self { pi }
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }
}

/// Weighted aggregates `(sum pi_i rho_i, sum pi_i xi_i)` at type index `t`.
pub fn aggregates(menus: &[ContractMenu], pi: &AllocationVector, t: usize) -> (f64, f64) {
    menus
        .iter()
        .zip(&pi.pi)
        .fold((0.0, 0.0), |(r, x), (m, &w)| {
            (r + w * m.rho[t], x + w * m.xi[t])
        })
}

fn check_shapes(menus: &[ContractMenu], pi: &AllocationVector, model: &SgpTypeModel) -> Result<()> {
    if menus.len() != pi.len() {
        return Err(Error::Shape(format!(
            "{} menus but {} proportions",
            menus.len(),
            pi.len()
        )));
    }
    menus.iter().try_for_each(|m| m.validate(model.phi_tot()))
}

/// Provider's gain minus transfer cost when of type `phi`.
pub fn sgp_utility(
    phi: u32,
    pi: &AllocationVector,
    menus: &[ContractMenu],
    model: &SgpTypeModel,
) -> f64 {
    let (r, x) = aggregates(menus, pi, model.index(phi));
    f64::from(phi) * r.ln_1p() - model.zeta * x
}

/// Expected profit of station `cs` over the type distribution.
pub fn cs_expected_utility(
    cs: usize,
    menus: &[ContractMenu],
    pi_hat: &AllocationVector,
    model: &SgpTypeModel,
    config: &MarketConfig,
) -> f64 {
    let m = &menus[cs];
    let margin: f64 = (0..model.phi_tot())
        .map(|t| model.p[t] * (config.varrho[cs] * m.xi[t] - m.rho[t]))
        .sum();
    pi_hat.pi[cs] * margin
}

/// Provider utility plus every station's realized profit at type `phi`.
pub fn social_welfare(
    phi: u32,
    menus: &[ContractMenu],
    pi_hat: &AllocationVector,
    model: &SgpTypeModel,
    config: &MarketConfig,
) -> f64 {
    let t = model.index(phi);
    let stations: f64 = menus
        .iter()
        .enumerate()
        .map(|(i, m)| pi_hat.pi[i] * (config.varrho[i] * m.xi[t] - m.rho[t]))
        .sum();
    sgp_utility(phi, pi_hat, menus, model) + stations
}

/// Participation residual per type; satisfied when all are `>= -FEAS_TOL`.
pub fn check_ir(
    menus: &[ContractMenu],
    pi_hat: &AllocationVector,
    model: &SgpTypeModel,
) -> Result<Vec<f64>> {
    check_shapes(menus, pi_hat, model)?;
    Ok(model
        .types()
        .map(|phi| sgp_utility(phi, pi_hat, menus, model))
        .collect())
}

/// Pairwise truth-telling residuals: entry `[a][b]` is how much a provider
/// of type `a` prefers its own bundle over the bundle for type `b`.
pub fn check_ic(
    menus: &[ContractMenu],
    pi_hat: &AllocationVector,
    model: &SgpTypeModel,
) -> Result<Vec<Vec<f64>>> {
    check_shapes(menus, pi_hat, model)?;
    let n = model.phi_tot();
    let agg: Vec<(f64, f64)> = (0..n).map(|t| aggregates(menus, pi_hat, t)).collect();
    Ok((0..n)
        .map(|a| {
            let phi = model.phi_at(a);
            let value = |t: usize| phi * agg[t].0.ln_1p() - model.zeta * agg[t].1;
            (0..n)
                .map(|b| if a == b { 0.0 } else { value(a) - value(b) })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub ok: bool,
    /// Lowest type whose payment drops below the previous type's.
    pub first_violation: Option<u32>,
}

pub fn check_monotonicity(menu: &ContractMenu, phi_min: u32) -> MonotonicityCheck {
    let first = menu
        .rho
        .windows(2)
        .position(|w| w[1] - w[0] < -MONO_TOL)
        .map(|t| phi_min + t as u32 + 1);
    MonotonicityCheck {
        ok: first.is_none(),
        first_violation: first,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Capacity,
    Participation,
    TruthTelling,
    LocalTruthTelling,
    Monotonicity,
}

/// One constraint with its residual (satisfied when `residual >= 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub kind: ConstraintKind,
    pub phi: u32,
    pub phi_other: Option<u32>,
    pub residual: f64,
}

/// Local truth-telling residual between type `t` and `t - 1`.
fn local_ic(model: &SgpTypeModel, r: f64, r_prev: f64, x: f64, x_prev: f64, t: usize) -> f64 {
    model.phi_at(t) * (r - r_prev) - (1.0 + r) * model.zeta * (x - x_prev)
}

/// The full constraint system: capacity and participation per type and
/// truth-telling for every ordered pair of distinct types, `phi_tot^2 +
/// phi_tot` rows in all.
pub fn build_full_constraints(
    menus: &[ContractMenu],
    pi_hat: &AllocationVector,
    model: &SgpTypeModel,
) -> Result<Vec<ConstraintRow>> {
    let ir = check_ir(menus, pi_hat, model)?;
    let ic = check_ic(menus, pi_hat, model)?;
    let mut rows = Vec::with_capacity(model.phi_tot() * (model.phi_tot() + 1));
    for (t, phi) in model.types().enumerate() {
        let (_, x) = aggregates(menus, pi_hat, t);
        rows.push(ConstraintRow {
            kind: ConstraintKind::Capacity,
            phi,
            phi_other: None,
            residual: model.capacity[t] - x,
        });
    }
    for (t, phi) in model.types().enumerate() {
        rows.push(ConstraintRow {
            kind: ConstraintKind::Participation,
            phi,
            phi_other: None,
            residual: ir[t],
        });
    }
    for (a, phi) in model.types().enumerate() {
        for (b, other) in model.types().enumerate() {
            if a != b {
                rows.push(ConstraintRow {
                    kind: ConstraintKind::TruthTelling,
                    phi,
                    phi_other: Some(other),
                    residual: ic[a][b],
                });
            }
        }
    }
    Ok(rows)
}

/// The reduced system: capacity per type, participation at the lowest type,
/// local truth-telling and payment monotonicity per type, `3 phi_tot + 1`
/// rows. Rows referring to `phi - 1` at the lowest type are vacuous and
/// carry residual 0.
pub fn build_reduced_constraints(
    menus: &[ContractMenu],
    pi_hat: &AllocationVector,
    model: &SgpTypeModel,
) -> Result<Vec<ConstraintRow>> {
    check_shapes(menus, pi_hat, model)?;
    let n = model.phi_tot();
    let agg: Vec<(f64, f64)> = (0..n).map(|t| aggregates(menus, pi_hat, t)).collect();
    let mut rows = Vec::with_capacity(3 * n + 1);
    for (t, phi) in model.types().enumerate() {
        rows.push(ConstraintRow {
            kind: ConstraintKind::Capacity,
            phi,
            phi_other: None,
            residual: model.capacity[t] - agg[t].1,
        });
    }
    rows.push(ConstraintRow {
        kind: ConstraintKind::Participation,
        phi: model.phi_min,
        phi_other: None,
        residual: f64::from(model.phi_min) * agg[0].0.ln_1p() - model.zeta * agg[0].1,
    });
    for (t, phi) in model.types().enumerate() {
        let residual = if t == 0 {
            0.0
        } else {
            local_ic(model, agg[t].0, agg[t - 1].0, agg[t].1, agg[t - 1].1, t)
        };
        rows.push(ConstraintRow {
            kind: ConstraintKind::LocalTruthTelling,
            phi,
            phi_other: (t > 0).then(|| phi - 1),
            residual,
        });
    }
    for (t, phi) in model.types().enumerate() {
        let residual = if t == 0 {
            0.0
        } else {
            menus
                .iter()
                .map(|m| m.rho[t] - m.rho[t - 1])
                .fold(f64::INFINITY, f64::min)
                .min(f64::MAX)
        };
        rows.push(ConstraintRow {
            kind: ConstraintKind::Monotonicity,
            phi,
            phi_other: (t > 0).then(|| phi - 1),
            residual,
        });
    }
    Ok(rows)
}

/// Worst (most negative, sign-flipped) residual; 0 when all hold.
pub fn max_violation(rows: &[ConstraintRow]) -> f64 {
    rows.iter()
        .map(|r| (-r.residual).max(0.0))
        .fold(0.0, f64::max)
}
