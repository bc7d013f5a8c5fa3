//! Parameter sweeps over the number of provider types and over the number
//! of distinct announced price levels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    initial_menus, iterate_contracts, EquilibriumResult, MarketConfig, SgpTypeModel, AUDIT_TOL,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSweepRow {
    pub phi_tot: u32,
    pub cs_id: String,
    pub expected_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeSweepPoint {
    pub phi_tot: u32,
    pub result: EquilibriumResult,
}

/// Passes the end-to-end audit: converged within the round limit, every
/// constraint within `AUDIT_TOL`, payments monotone.
pub fn audit_ok(r: &EquilibriumResult) -> bool {
    r.converged && r.max_constraint_violation <= AUDIT_TOL && r.monotone.iter().all(|&m| m)
}

/// Re-runs the equilibrium for each type count with uniform probabilities
/// and capacities `phi * S_max / phi_tot`, where `S_max` is the template's
/// top capacity. The true type is capped at the type count.
pub fn sweep_types(
    phi_tots: &[u32],
    template: &SgpTypeModel,
    config: &MarketConfig,
) -> Result<Vec<TypeSweepPoint>> {
    let s_max = *template
        .capacity
        .last()
        .ok_or_else(|| Error::Empty("template has no types".into()))?;
    phi_tots
        .par_iter()
        .map(|&n| {
            let model = SgpTypeModel::uniform(n, s_max, template.zeta, template.true_type.min(n))?;
            let init = initial_menus(&model, config)?;
            Ok(TypeSweepPoint {
                phi_tot: n,
                result: iterate_contracts(&model, config, &init)?,
            })
        })
        .collect()
}

pub fn type_sweep_rows(points: &[TypeSweepPoint], config: &MarketConfig) -> Vec<TypeSweepRow> {
    points
        .iter()
        .flat_map(|p| {
            config
                .ids
                .iter()
                .zip(&p.result.expected_utilities)
                .map(move |(id, &u)| TypeSweepRow {
                    phi_tot: p.phi_tot,
                    cs_id: id.clone(),
                    expected_utility: u,
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSweepRow {
    pub price_levels: usize,
    pub welfare: f64,
    pub total_cs_utility: f64,
    pub audit_ok: bool,
}

/// `levels` prices evenly spaced on `[lo, hi]`; a single level sits at `hi`.
pub fn price_levels(levels: usize, lo: f64, hi: f64) -> Vec<f64> {
    match levels {
        0 => Vec::new(),
        1 => vec![hi],
        n => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Price per station: stations ranked by predicted demand (ties by index)
/// are spread over the levels, highest demand on the lowest price.
pub fn assign_prices(demands: &[f64], levels: &[f64]) -> Vec<f64> {
    let n = demands.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| demands[b].total_cmp(&demands[a]).then(a.cmp(&b)));
    let mut prices = vec![0.0; n];
    for (rank, &cs) in order.iter().enumerate() {
        let k = if n <= 1 || levels.len() <= 1 {
            0
        } else {
            ((rank * (levels.len() - 1)) as f64 / (n - 1) as f64).round() as usize
        };
        prices[cs] = levels[k];
    }
    prices
}

/// Welfare at the true type and total station profit for each number of
/// price levels on `[lo, hi]`.
pub fn sweep_price_units(
    counts: &[usize],
    model: &SgpTypeModel,
    config: &MarketConfig,
    lo: f64,
    hi: f64,
) -> Result<Vec<PriceSweepRow>> {
    if counts.contains(&0) {
        return Err(Error::InvalidArgument(
            "price level count must be positive".into(),
        ));
    }
    counts
        .par_iter()
        .map(|&levels| {
            let prices = assign_prices(&config.demands, &price_levels(levels, lo, hi));
            let mut init = initial_menus(model, config)?;
            for (menu, price) in init.iter_mut().zip(&prices) {
                menu.rho = menu.xi.iter().map(|x| price * x).collect();
            }
            let r = iterate_contracts(model, config, &init)?;
            Ok(PriceSweepRow {
                price_levels: levels,
                welfare: r.welfare,
                total_cs_utility: r.expected_utilities.iter().sum(),
                audit_ok: audit_ok(&r),
            })
        })
        .collect()
}
