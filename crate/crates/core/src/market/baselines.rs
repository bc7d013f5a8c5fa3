//! Comparators for the contract equilibrium: a full-information market
//! where stations know the provider's type, and two non-contract schemes
//! that split capacity in proportion to requests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    cs_expected_utility, initial_menus, iterate_contracts, sgp_utility, AllocationVector,
    ContractMenu, MarketConfig, SgpTypeModel,
};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub name: String,
    /// Bundles at the true type.
    pub menus: Vec<ContractMenu>,
    pub pi: AllocationVector,
    pub utilities: Vec<f64>,
    pub sgp_utility: f64,
    pub welfare: f64,
}

/// Stations optimize against the known true type: the same iteration on the
/// one-type model, with participation required at that type only.
pub fn baseline_information_symmetry(
    model: &SgpTypeModel,
    config: &MarketConfig,
) -> Result<BaselineOutcome> {
    let known = model.restricted_to(model.true_type)?;
    let init = initial_menus(&known, config)?;
    let eq = iterate_contracts(&known, config, &init)?;
    let sgp = sgp_utility(known.true_type, &eq.pi_hat, &eq.menus, &known);
    Ok(BaselineOutcome {
        name: "information_symmetry".into(),
        welfare: sgp + eq.expected_utilities.iter().sum::<f64>(),
        sgp_utility: sgp,
        utilities: eq.expected_utilities,
        menus: eq.menus,
        pi: eq.pi_hat,
    })
}

fn proportional(
    name: &str,
    model: &SgpTypeModel,
    config: &MarketConfig,
    demands: &[f64],
    prices: &[f64],
) -> Result<BaselineOutcome> {
    if demands.len() != config.n_cs() || prices.len() != config.n_cs() {
        return Err(Error::Shape(
            "one demand and price per station required".into(),
        ));
    }
    let known = model.restricted_to(model.true_type)?;
    let total: f64 = demands.iter().sum();
    let share = if total > 0.0 {
        (known.capacity[0] / total).min(1.0)
    } else {
        1.0
    };
    let menus: Vec<ContractMenu> = config
        .ids
        .iter()
        .zip(demands.iter().zip(prices))
        .map(|(id, (&d, &price))| ContractMenu {
            cs_id: id.clone(),
            rho: vec![price * d],
            xi: vec![d],
        })
        .collect();
    let pi = AllocationVector::new(vec![share; menus.len()]);
    let utilities: Vec<f64> = (0..menus.len())
        .map(|i| cs_expected_utility(i, &menus, &pi, &known, config))
        .collect();
    let sgp = sgp_utility(known.true_type, &pi, &menus, &known);
    Ok(BaselineOutcome {
        name: name.into(),
        welfare: sgp + utilities.iter().sum::<f64>(),
        sgp_utility: sgp,
        utilities,
        menus,
        pi,
    })
}

/// Every station requests its predicted demand at the announced price and
/// receives the same share `min(1, S / sum D)`.
pub fn baseline_proportional_request(
    model: &SgpTypeModel,
    config: &MarketConfig,
) -> Result<BaselineOutcome> {
    let prices = vec![config.rho_unit; config.n_cs()];
    proportional(
        "proportional_request",
        model,
        config,
        &config.demands,
        &prices,
    )
}

/// Stations request their actual demand and pay a fluctuating spot price
/// drawn from `[rho_unit, 1.2 rho_unit]`.
pub fn baseline_non_prediction(
    model: &SgpTypeModel,
    config: &MarketConfig,
    actual_demands: &[f64],
    seed: u64,
) -> Result<BaselineOutcome> {
    let mut rng = seed::rng(seed, "spot-price", &[]);
    let prices: Vec<f64> = (0..config.n_cs())
        .map(|_| rng.random_range(config.rho_unit..=1.2 * config.rho_unit))
        .collect();
    proportional("non_prediction", model, config, actual_demands, &prices)
}
