//! Iterated best responses: each round the provider re-solves its
//! allocation at its true type, then stations in ascending index order
//! replace their menus whenever a best response improves their expected
//! profit by more than `kappa`.

use serde::{Deserialize, Serialize};

use super::best_response::{Problem, HEADROOM};
use super::{
    aggregates, best_response, build_full_constraints, build_reduced_constraints, check_ic,
    check_ir, check_monotonicity, cs_expected_utility, max_violation, social_welfare, solve_p1,
    AllocationVector, ContractMenu, MarketConfig, SgpTypeModel, FEAS_TOL,
};
use crate::error::{Error, Result};
use crate::seed;

/// One accepted menu update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub round: usize,
    pub cs: usize,
    pub utility_before: f64,
    pub utility_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub menus: Vec<ContractMenu>,
    pub pi_hat: AllocationVector,
    pub expected_utilities: Vec<f64>,
    pub rounds: usize,
    pub converged: bool,
    /// Worst violation over capacity, participation and truth-telling at
    /// every type pair, and payment monotonicity.
    pub max_constraint_violation: f64,
    pub ir_residuals: Vec<f64>,
    pub ic_residuals: Vec<Vec<f64>>,
    pub monotone: Vec<bool>,
    /// Social welfare at each type, with the allocation re-solved for it.
    pub welfare_by_type: Vec<f64>,
    /// Social welfare at the true type under `pi_hat`.
    pub welfare: f64,
    pub acceptances: Vec<Acceptance>,
}

/// Linear starting menus: `xi(phi) = D phi / phi_max`, `rho = rho_unit xi`.
pub fn initial_menus(model: &SgpTypeModel, config: &MarketConfig) -> Result<Vec<ContractMenu>> {
    config.validate()?;
    model.validate()?;
    let top = f64::from(model.phi_max);
    Ok(config
        .ids
        .iter()
        .zip(&config.demands)
        .map(|(id, &d)| {
            let xi: Vec<f64> = model.types().map(|phi| d * f64::from(phi) / top).collect();
            ContractMenu {
                cs_id: id.clone(),
                rho: xi.iter().map(|x| config.rho_unit * x).collect(),
                xi,
            }
        })
        .collect())
}

/// Audit fields for a menu profile at allocation `pi_hat`.
pub fn summarize(
    menus: Vec<ContractMenu>,
    pi_hat: AllocationVector,
    model: &SgpTypeModel,
    config: &MarketConfig,
    rounds: usize,
    converged: bool,
    acceptances: Vec<Acceptance>,
) -> Result<EquilibriumResult> {
    let ir = check_ir(&menus, &pi_hat, model)?;
    let ic = check_ic(&menus, &pi_hat, model)?;
    let monotone: Vec<bool> = menus
        .iter()
        .map(|m| check_monotonicity(m, model.phi_min).ok)
        .collect();
    let full = build_full_constraints(&menus, &pi_hat, model)?;
    let reduced = build_reduced_constraints(&menus, &pi_hat, model)?;
    let expected_utilities = (0..menus.len())
        .map(|i| cs_expected_utility(i, &menus, &pi_hat, model, config))
        .collect();
    let welfare_by_type = model
        .types()
        .map(|phi| social_welfare(phi, &menus, &solve_p1(&menus, phi, model), model, config))
        .collect();
    let welfare = social_welfare(model.true_type, &menus, &pi_hat, model, config);
    Ok(EquilibriumResult {
        max_constraint_violation: max_violation(&full).max(max_violation(&reduced)),
        menus,
        pi_hat,
        expected_utilities,
        rounds,
        converged,
        ir_residuals: ir,
        ic_residuals: ic,
        monotone,
        welfare_by_type,
        welfare,
        acceptances,
    })
}

/// Re-solving the allocation can raise served proportions enough to
/// overload capacity at types other than the true one, a state no single
/// station can repair. Make every station's requests non-decreasing, trim
/// overloaded types back to capacity, then re-price every served station at
/// its own-share cheapest payments.
/// Returns whether anything changed.
fn restore(
    menus: &mut [ContractMenu],
    pi_hat: &AllocationVector,
    model: &SgpTypeModel,
    config: &MarketConfig,
) -> bool {
    let violation = |m: &[ContractMenu]| {
        let full = build_full_constraints(m, pi_hat, model)
            .map_or(f64::INFINITY, |rows| max_violation(&rows));
        let reduced = build_reduced_constraints(m, pi_hat, model)
            .map_or(f64::INFINITY, |rows| max_violation(&rows));
        full.max(reduced)
    };
    if violation(menus) <= FEAS_TOL {
        return false;
    }
    for m in menus.iter_mut() {
        for t in 1..m.xi.len() {
            m.xi[t] = m.xi[t].max(m.xi[t - 1]);
        }
    }
    // trim overloaded types toward the previous type's requests, which fit
    // because capacity does not shrink with type
    for t in 0..model.phi_tot() {
        let (_, x) = aggregates(menus, pi_hat, t);
        let cap = model.capacity[t] * (1.0 - 1e-12);
        if x > cap {
            let base = if t == 0 {
                0.0
            } else {
                aggregates(menus, pi_hat, t - 1).1
            };
            let lambda = ((cap - base) / (x - base)).clamp(0.0, 1.0);
            for m in menus.iter_mut() {
                let floor = if t == 0 { 0.0 } else { m.xi[t - 1] };
                m.xi[t] = floor + lambda * (m.xi[t] - floor);
            }
        }
    }
    // stations whose own shares respect the local bounds sum to a feasible
    // aggregate; price each against the others' latest payments and sweep
    // until the acceptance bounds, the only coupling, settle
    for _ in 0..100 {
        let mut moved = false;
        for cs in (0..menus.len()).filter(|&i| pi_hat.pi[i] > 0.0) {
            let prob = Problem::new(
                cs,
                menus,
                pi_hat,
                model,
                config.varrho[cs],
                config.demands[cs],
            );
            if let Some(rho) = prob.own_payments(&menus[cs].xi) {
                moved |= rho
                    .iter()
                    .zip(&menus[cs].rho)
                    .any(|(a, b)| (a - b).abs() > 1e-13 * b.abs().max(1.0));
                menus[cs].rho = rho;
            }
        }
        if !moved {
            break;
        }
    }
    true
}

/// Makes the menus feasible as if every station were served, then
/// re-prices stations whose payment at the true type no longer covers the
/// provider's marginal cost, which happens when later movers raise their
/// payments. Without this the provider drops stale stations outright.
/// Returns whether anything changed.
fn settle_acceptance(
    menus: &mut [ContractMenu],
    model: &SgpTypeModel,
    config: &MarketConfig,
) -> bool {
    let tt = model.index(model.true_type);
    let phi = model.phi_at(tt);
    let full = AllocationVector::new(vec![1.0; menus.len()]);
    // payments covering everyone exist only while zeta * X stays below phi
    // at the true type; keep some headroom so they stay moderate
    let limit = HEADROOM * phi / model.zeta;
    let x: f64 = menus.iter().map(|m| m.xi[tt]).sum();
    let mut changed = false;
    if x > limit {
        let scale = limit / x;
        for m in menus.iter_mut() {
            let cap = m.xi[tt] * scale;
            for v in &mut m.xi[..=tt] {
                *v = v.min(cap);
            }
        }
        changed = true;
    }
    changed |= restore(menus, &full, model, config);
    // stations whose true-type payment fell below the provider's marginal
    // cost re-price against the others; raising one payment can push
    // another below, so sweep until none is
    for _ in 0..100 {
        let r: f64 = menus.iter().map(|m| m.rho[tt]).sum();
        let mut moved = false;
        for cs in 0..menus.len() {
            let m = &menus[cs];
            if phi * m.rho[tt] >= (1.0 + r) * model.zeta * m.xi[tt] - FEAS_TOL {
                continue;
            }
            let prob = Problem::new(
                cs,
                menus,
                &full,
                model,
                config.varrho[cs],
                config.demands[cs],
            );
            if let Some(rho) = prob.own_payments(&menus[cs].xi) {
                moved |= rho != menus[cs].rho;
                menus[cs].rho = rho;
            }
        }
        if !moved {
            break;
        }
        changed = true;
    }
    changed
}

struct Response {
    menu: ContractMenu,
    before: f64,
    after: f64,
    /// The current menu no longer meets the station's constraints.
    stale: bool,
}

/// Station `cs`'s feasible best response with its utility before and
/// after, or `None` when it has none or it equals the current menu.
fn respond(
    cs: usize,
    menus: &[ContractMenu],
    pi_hat: &AllocationVector,
    model: &SgpTypeModel,
    config: &MarketConfig,
    seed: u64,
) -> Result<Option<Response>> {
    let unserved = pi_hat.pi[cs] <= 0.0;
    // an unserved station designs for full service and is judged by the
    // allocation its new menu would actually attract
    let design_pi = if unserved {
        let mut pi = pi_hat.pi.clone();
        pi[cs] = 1.0;
        AllocationVector::new(pi)
    } else {
        pi_hat.clone()
    };
    let current = &menus[cs];
    let br = best_response(cs, menus, &design_pi, model, config, current, seed)?;
    if !br.feasible || br.menu == *current {
        return Ok(None);
    }
    let mut trial = menus.to_vec();
    trial[cs] = br.menu;
    let before = cs_expected_utility(cs, menus, pi_hat, model, config);
    let after = if unserved {
        let pi = solve_p1(&trial, model.true_type, model);
        cs_expected_utility(cs, &trial, &pi, model, config)
    } else {
        cs_expected_utility(cs, &trial, pi_hat, model, config)
    };
    let stale = !unserved
        && Problem::new(
            cs,
            menus,
            pi_hat,
            model,
            config.varrho[cs],
            config.demands[cs],
        )
        .max_violation(&current.rho, &current.xi)
            > FEAS_TOL;
    Ok(Some(Response {
        menu: trial.swap_remove(cs),
        before,
        after,
        stale,
    }))
}

/// Utility each station would gain by replacing its menu with a fresh best
/// response at the returned equilibrium; a fixed point has every gain at
/// most `kappa`.
pub fn best_response_gains(
    result: &EquilibriumResult,
    model: &SgpTypeModel,
    config: &MarketConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..result.menus.len())
        .map(|cs| {
            Ok(
                respond(cs, &result.menus, &result.pi_hat, model, config, seed)?
                    .map_or(0.0, |r| r.after - r.before),
            )
        })
        .collect()
}

pub fn iterate_contracts(
    model: &SgpTypeModel,
    config: &MarketConfig,
    initial: &[ContractMenu],
) -> Result<EquilibriumResult> {
    model.validate()?;
    config.validate()?;
    if initial.len() != config.n_cs() {
        return Err(Error::Shape(format!(
            "{} menus for {} stations",
            initial.len(),
            config.n_cs()
        )));
    }
    initial
        .iter()
        .try_for_each(|m| m.validate(model.phi_tot()))?;
    let mut menus = initial.to_vec();
    let mut acceptances = Vec::new();
    let mut pi_hat = solve_p1(&menus, model.true_type, model);
    let mut converged = false;
    let mut rounds = 0;
    while rounds < config.max_rounds {
        rounds += 1;
        let settled = settle_acceptance(&mut menus, model, config);
        pi_hat = solve_p1(&menus, model.true_type, model);
        let mut accepted = settled | restore(&mut menus, &pi_hat, model, config);
        if accepted {
            log::debug!("round {rounds}: restored feasibility after re-allocation");
        }
        let br_seed = seed::derive(config.seed, "round", &[rounds as u64]);
        for cs in 0..menus.len() {
            let Some(step) = respond(cs, &menus, &pi_hat, model, config, br_seed)? else {
                continue;
            };
            if step.after - step.before > config.kappa {
                acceptances.push(Acceptance {
                    round: rounds,
                    cs,
                    utility_before: step.before,
                    utility_after: step.after,
                });
            } else if !step.stale {
                continue;
            }
            // stale replacements are repairs rather than improvements and
            // go unrecorded, but still keep the round alive
            menus[cs] = step.menu;
            accepted = true;
        }
        if !accepted {
            converged = true;
            break;
        }
    }
    if !converged {
        // report the allocation the final menus would receive
        pi_hat = solve_p1(&menus, model.true_type, model);
    }
    summarize(menus, pi_hat, model, config, rounds, converged, acceptances)
}
