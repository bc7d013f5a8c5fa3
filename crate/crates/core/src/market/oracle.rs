//! Exhaustive oracles for small instances. They enumerate instead of
//! optimizing, so they are slow but share no search logic with the solvers
//! they check.

use serde::{Deserialize, Serialize};

use super::best_response::Problem;
use super::{
    build_full_constraints, cs_expected_utility, max_violation, solve_p1, AllocationVector,
    ContractMenu, MarketConfig, SgpTypeModel, FEAS_TOL,
};
use crate::error::{Error, Result};

/// Provider objective at type index `t` for proportions `pi`.
fn p1_objective(menus: &[ContractMenu], pi: &[f64], phi: f64, zeta: f64, t: usize) -> f64 {
    let (r, x) = menus.iter().zip(pi).fold((0.0, 0.0), |(r, x), (m, &w)| {
        (r + w * m.rho[t], x + w * m.xi[t])
    });
    phi * r.ln_1p() - zeta * x
}

/// Best proportion for the last station given the others' aggregates; the
/// objective is concave in it, so clamping the stationary point is exact.
fn last_station(phi: f64, zeta: f64, r0: f64, rho: f64, xi: f64, room: f64) -> Option<f64> {
    if room < 0.0 {
        return None;
    }
    let upper = if xi > 0.0 { (room / xi).min(1.0) } else { 1.0 };
    if rho <= 0.0 {
        return Some(if xi > 0.0 { 0.0 } else { 1.0 });
    }
    let stationary = if xi > 0.0 && zeta > 0.0 {
        phi / (zeta * xi) - (1.0 + r0) / rho
    } else {
        f64::INFINITY
    };
    Some(stationary.clamp(0.0, upper))
}

/// Grid search for the provider's allocation at type `phi` with `step`
/// spacing on every proportion but the last, which is solved exactly. With
/// three stations a 100-point coarse pass picks the neighbourhood that the
/// fine pass then covers.
pub fn p1_grid_oracle(
    menus: &[ContractMenu],
    phi: u32,
    model: &SgpTypeModel,
    step: f64,
) -> Result<(AllocationVector, f64)> {
    let n = menus.len();
    if n == 0 || n > 3 {
        return Err(Error::InvalidArgument(
            "the allocation oracle handles one to three stations".into(),
        ));
    }
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::InvalidArgument(
            "grid step must lie in (0, 0.5]".into(),
        ));
    }
    let t = model.index(phi);
    let (ph, z, cap) = (f64::from(phi), model.zeta, model.capacity[t]);
    let complete = |head: &[f64]| -> Option<(Vec<f64>, f64)> {
        let (r0, x0) = head.iter().zip(menus).fold((0.0, 0.0), |(r, x), (&w, m)| {
            (r + w * m.rho[t], x + w * m.xi[t])
        });
        let last = &menus[n - 1];
        let w = last_station(ph, z, r0, last.rho[t], last.xi[t], cap - x0)?;
        let mut pi = head.to_vec();
        pi.push(w);
        let v = p1_objective(menus, &pi, ph, z, t);
        Some((pi, v))
    };
    let points = |lo: f64, hi: f64, h: f64| -> Vec<f64> {
        let k = ((hi - lo) / h).round() as usize;
        (0..=k).map(|i| (lo + i as f64 * h).min(1.0)).collect()
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |cand: Option<(Vec<f64>, f64)>| {
        if let Some((pi, v)) = cand {
            if best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((pi, v));
            }
        }
    };
    match n {
        1 => consider(complete(&[])),
        2 => {
            for a in points(0.0, 1.0, step) {
                consider(complete(&[a]));
            }
        }
        _ => {
            let coarse = 0.01_f64.max(step);
            let mut centre: Option<(Vec<f64>, f64)> = None;
            for a in points(0.0, 1.0, coarse) {
                for b in points(0.0, 1.0, coarse) {
                    if let Some(c) = complete(&[a, b]) {
                        if centre.as_ref().is_none_or(|x| c.1 > x.1) {
                            centre = Some(c);
                        }
                    }
                }
            }
            let (c, _) = centre
                .ok_or_else(|| Error::Infeasible("no feasible allocation on the grid".into()))?;
            let span = |v: f64| ((v - coarse).max(0.0), (v + coarse).min(1.0));
            let ((a0, a1), (b0, b1)) = (span(c[0]), span(c[1]));
            for a in points(a0, a1, step) {
                for b in points(b0, b1, step) {
                    consider(complete(&[a, b]));
                }
            }
        }
    }
    let (pi, v) =
        best.ok_or_else(|| Error::Infeasible("no feasible allocation on the grid".into()))?;
    Ok((AllocationVector::new(pi), v))
}

/// `count` points: zero, then geometric from `hi * 1e-6` to `hi`.
pub fn payment_grid(hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 || hi <= 0.0 {
        return vec![0.0];
    }
    let lo = hi * 1e-6;
    let k = count - 1;
    std::iter::once(0.0)
        .chain((0..k).map(|i| lo * (hi / lo).powf(i as f64 / (k - 1).max(1) as f64)))
        .collect()
}

fn linspace(hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![hi.max(0.0)];
    }
    (0..count)
        .map(|i| hi.max(0.0) * i as f64 / (count - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub rho: Vec<f64>,
    pub xi: Vec<f64>,
    pub utility: f64,
}

/// Best feasible menu for station `cs` over a `points`-per-variable grid,
/// checked against the same constraint rows the best-response solver must
/// meet. Requests run evenly from zero to their bound; payments are
/// geometric so small binding payments are resolved finely. At most two
/// types.
pub fn best_response_grid_oracle(
    cs: usize,
    menus: &[ContractMenu],
    pi_hat: &AllocationVector,
    model: &SgpTypeModel,
    config: &MarketConfig,
    points: usize,
) -> Result<Option<GridPoint>> {
    let n = model.phi_tot();
    if n > 2 || menus.len() > 2 {
        return Err(Error::InvalidArgument(
            "the response oracle handles at most two types and two stations".into(),
        ));
    }
    let prob = Problem::new(
        cs,
        menus,
        pi_hat,
        model,
        config.varrho[cs],
        config.demands[cs],
    );
    let upper = prob.upper();
    let xi_axes: Vec<Vec<f64>> = upper.iter().map(|&u| linspace(u, points)).collect();
    let top = upper.iter().fold(0.0f64, |m, v| m.max(*v));
    let rho_axis = payment_grid(config.varrho[cs] * top.max(1e-9), points);
    let mut best: Option<GridPoint> = None;
    let mut rho = vec![0.0; n];
    let mut xi = vec![0.0; n];
    let total = (rho_axis.len() * points).pow(n as u32);
    for k in 0..total {
        let mut rest = k;
        for t in 0..n {
            rho[t] = rho_axis[rest % rho_axis.len()];
            rest /= rho_axis.len();
            xi[t] = xi_axes[t][rest % points];
            rest /= points;
        }
        if prob.max_violation(&rho, &xi) > FEAS_TOL {
            continue;
        }
        let u = prob.utility(&rho, &xi);
        if best.as_ref().is_none_or(|b| u > b.utility) {
            best = Some(GridPoint {
                rho: rho.clone(),
                xi: xi.clone(),
                utility: u,
            });
        }
    }
    Ok(best)
}

/// Candidate values shared by every station and type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuGrid {
    pub rho: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BruteForceOutcome {
    /// No joint profile on the grid satisfies the constraints.
    NoFeasiblePoint,
    /// Grid best responses kept cycling.
    NotFound { passes: usize },
    Equilibrium {
        menus: Vec<ContractMenu>,
        pi_hat: AllocationVector,
        utilities: Vec<f64>,
    },
}

fn feasible(
    menus: &[ContractMenu],
    model: &SgpTypeModel,
    config: &MarketConfig,
) -> Option<AllocationVector> {
    let within = menus
        .iter()
        .zip(&config.demands)
        .all(|(m, &d)| m.xi.iter().all(|&x| x <= d + 1e-12));
    if !within {
        return None;
    }
    let pi = solve_p1(menus, model.true_type, model);
    let rows = build_full_constraints(menus, &pi, model).ok()?;
    (max_violation(&rows) <= FEAS_TOL).then_some(pi)
}

/// Searches the joint grid for a profile where no station gains more than
/// `tol` by switching to any other grid menu, with the provider's
/// allocation re-solved at its true type for every candidate. Uses grid
/// best-response passes from the first feasible profile found; the
/// terminating pass is itself the exhaustive certificate. At most two
/// stations and two types.
pub fn brute_force_equilibrium(
    model: &SgpTypeModel,
    config: &MarketConfig,
    grid: &MenuGrid,
    tol: f64,
) -> Result<BruteForceOutcome> {
    let (n, stations) = (model.phi_tot(), config.n_cs());
    if n > 2 || stations > 2 {
        return Err(Error::InvalidArgument(
            "brute force handles at most two stations and two types".into(),
        ));
    }
    if grid.rho.len() > 50 || grid.xi.len() > 50 {
        return Err(Error::InvalidArgument(
            "at most 50 grid points per variable".into(),
        ));
    }
    let pairs: Vec<(f64, f64)> = grid
        .rho
        .iter()
        .flat_map(|&r| grid.xi.iter().map(move |&x| (r, x)))
        .collect();
    let catalogue: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs.len().pow(n as u32))
        .map(|mut k| {
            let mut rho = vec![0.0; n];
            let mut xi = vec![0.0; n];
            for t in 0..n {
                (rho[t], xi[t]) = pairs[k % pairs.len()];
                k /= pairs.len();
            }
            (rho, xi)
        })
        .collect();
    let menu = |cs: usize, k: usize| ContractMenu {
        cs_id: config.ids[cs].clone(),
        rho: catalogue[k].0.clone(),
        xi: catalogue[k].1.clone(),
    };

    // first feasible joint profile in catalogue order
    let mut choice = vec![0usize; stations];
    let joint = catalogue.len().pow(stations as u32);
    let start = (0..joint).find(|&code| {
        let mut c = code;
        let menus: Vec<ContractMenu> = (0..stations)
            .map(|cs| {
                let k = c % catalogue.len();
                c /= catalogue.len();
                menu(cs, k)
            })
            .collect();
        feasible(&menus, model, config).is_some()
    });
    let Some(mut code) = start else {
        return Ok(BruteForceOutcome::NoFeasiblePoint);
    };
    for slot in choice.iter_mut() {
        *slot = code % catalogue.len();
        code /= catalogue.len();
    }

    let profile = |choice: &[usize]| -> Vec<ContractMenu> {
        choice
            .iter()
            .enumerate()
            .map(|(cs, &k)| menu(cs, k))
            .collect()
    };
    let value = |choice: &[usize], cs: usize| -> Option<f64> {
        let menus = profile(choice);
        let pi = feasible(&menus, model, config)?;
        Some(cs_expected_utility(cs, &menus, &pi, model, config))
    };
    const MAX_PASSES: usize = 200;
    for _ in 0..MAX_PASSES {
        let mut switched = false;
        for cs in 0..stations {
            let current = value(&choice, cs).unwrap_or(f64::NEG_INFINITY);
            let mut best = (current, choice[cs]);
            for k in 0..catalogue.len() {
                let mut trial = choice.clone();
                trial[cs] = k;
                if let Some(v) = value(&trial, cs) {
                    if v > best.0 + tol {
                        best = (v, k);
                    }
                }
            }
            if best.1 != choice[cs] {
                choice[cs] = best.1;
                switched = true;
            }
        }
        if !switched {
            let menus = profile(&choice);
            let pi = feasible(&menus, model, config).expect("certified profile is feasible");
            let utilities = (0..stations)
                .map(|cs| cs_expected_utility(cs, &menus, &pi, model, config))
                .collect();
            return Ok(BruteForceOutcome::Equilibrium {
                menus,
                pi_hat: pi,
                utilities,
            });
        }
    }
    Ok(BruteForceOutcome::NotFound { passes: MAX_PASSES })
}
