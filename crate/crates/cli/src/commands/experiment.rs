use std::path::Path;

use anyhow::Result;
use evmarket_core::market::{self, EquilibriumResult, MarketConfig, SgpTypeModel};
use serde::{Deserialize, Serialize};

use super::market::{audit_failures, cached_equilibrium, compare, setup, Demands};
use crate::config::RunConfig;
use crate::output::{ensure_dir, write_csv, AuditFailure, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    TypeSweep,
    PriceSweep,
    FigureSuite,
}

#[derive(Serialize)]
struct PriceRow {
    price_levels: usize,
    welfare: f64,
    total_cs_utility: f64,
}

fn type_sweep(
    cfg: &RunConfig,
    model: &SgpTypeModel,
    mc: &MarketConfig,
    dir: &Path,
) -> Result<Vec<AuditFailure>> {
    let points = market::sweep_types(&cfg.experiment.type_counts, model, mc)?;
    write_csv(
        &dir.join("type_sweep.csv"),
        &market::sweeps::type_sweep_rows(&points, mc),
    )?;
    Ok(points
        .iter()
        .flat_map(|p| audit_failures(&format!("type_sweep[{}]", p.phi_tot), &p.result))
        .collect())
}

fn price_sweep(
    cfg: &RunConfig,
    model: &SgpTypeModel,
    mc: &MarketConfig,
    dir: &Path,
) -> Result<Vec<AuditFailure>> {
    let e = &cfg.experiment;
    let rows = market::sweep_price_units(&e.price_level_counts, model, mc, e.price_lo, e.price_hi)?;
    let out: Vec<PriceRow> = rows
        .iter()
        .map(|r| PriceRow {
            price_levels: r.price_levels,
            welfare: r.welfare,
            total_cs_utility: r.total_cs_utility,
        })
        .collect();
    write_csv(&dir.join("price_sweep.csv"), &out)?;
    Ok(rows
        .iter()
        .filter(|r| !r.audit_ok)
        .map(|r| {
            AuditFailure::new(
                &format!("price_sweep[{}]", r.price_levels),
                "equilibrium audit failed",
            )
        })
        .collect())
}

#[derive(Serialize)]
struct MenuRow<'a> {
    cs_id: &'a str,
    phi: u32,
    rho: f64,
    xi: f64,
}

#[derive(Serialize)]
struct SgpRow {
    phi: u32,
    sgp_utility: f64,
}

#[derive(Serialize)]
struct IcRow {
    true_phi: u32,
    contract_phi: u32,
    sgp_utility: f64,
}

#[derive(Serialize)]
struct ArgmaxRow {
    true_phi: u32,
    best_contract_phi: u32,
    own_is_best: bool,
}

#[derive(Serialize)]
struct MethodWelfareRow {
    method: String,
    phi: u32,
    welfare: f64,
}

#[derive(Serialize)]
struct MethodUtilityRow<'a> {
    method: String,
    phi: u32,
    cs_id: &'a str,
    utility: f64,
}

#[derive(Serialize, Deserialize)]
struct LearningRow {
    mode: String,
    rmse: Option<f64>,
    mean_predictor_rmse: Option<f64>,
    federated_bytes: Option<u64>,
    centralized_bytes: Option<u64>,
    reduction_pct: Option<f64>,
}

/// Provider-side tables: contracts, utility per type, and utility of every
/// type under every type's bundle.
fn provider_tables(model: &SgpTypeModel, eq: &EquilibriumResult, dir: &Path) -> Result<()> {
    let menus: Vec<MenuRow> = eq
        .menus
        .iter()
        .flat_map(|m| {
            model.types().enumerate().map(move |(t, phi)| MenuRow {
                cs_id: &m.cs_id,
                phi,
                rho: m.rho[t],
                xi: m.xi[t],
            })
        })
        .collect();
    write_csv(&dir.join("contract_menus.csv"), &menus)?;

    let n = model.phi_tot();
    let agg: Vec<(f64, f64)> = (0..n)
        .map(|t| market::aggregates(&eq.menus, &eq.pi_hat, t))
        .collect();
    let value = |a: usize, b: usize| model.phi_at(a) * agg[b].0.ln_1p() - model.zeta * agg[b].1;
    let own: Vec<SgpRow> = model
        .types()
        .enumerate()
        .map(|(t, phi)| SgpRow {
            phi,
            sgp_utility: value(t, t),
        })
        .collect();
    write_csv(&dir.join("sgp_utility_by_type.csv"), &own)?;

    let types: Vec<u32> = model.types().collect();
    let mut ic = Vec::with_capacity(n * n);
    let mut argmax = Vec::with_capacity(n);
    for a in 0..n {
        let mut best = 0;
        for b in 0..n {
            ic.push(IcRow {
                true_phi: types[a],
                contract_phi: types[b],
                sgp_utility: value(a, b),
            });
            if value(a, b) > value(a, best) {
                best = b;
            }
        }
        argmax.push(ArgmaxRow {
            true_phi: types[a],
            best_contract_phi: types[best],
            own_is_best: value(a, a) >= value(a, best),
        });
    }
    write_csv(&dir.join("sgp_ic_matrix.csv"), &ic)?;
    write_csv(&dir.join("ic_argmax.csv"), &argmax)
}

/// Welfare and per-station utility of every method when the provider is of
/// each possible type.
fn per_type_tables(
    model: &SgpTypeModel,
    mc: &MarketConfig,
    demands: &Demands,
    eq: &EquilibriumResult,
    dir: &Path,
) -> Result<Vec<AuditFailure>> {
    let mut welfare = Vec::new();
    let mut utility = Vec::new();
    let mut failures = Vec::new();
    for (t, phi) in model.types().enumerate() {
        let pi = market::solve_p1(&eq.menus, phi, model);
        welfare.push(MethodWelfareRow {
            method: "proposed".into(),
            phi,
            welfare: eq.welfare_by_type[t],
        });
        for (i, m) in eq.menus.iter().enumerate() {
            utility.push(MethodUtilityRow {
                method: "proposed".into(),
                phi,
                cs_id: &mc.ids[i],
                utility: pi.pi[i] * (mc.varrho[i] * m.xi[t] - m.rho[t]),
            });
        }
        let at = SgpTypeModel {
            true_type: phi,
            ..model.clone()
        };
        let cmp = compare(&at, mc, demands, eq.clone())?;
        for b in &cmp.baselines {
            welfare.push(MethodWelfareRow {
                method: b.name.clone(),
                phi,
                welfare: b.welfare,
            });
            for (i, &u) in b.utilities.iter().enumerate() {
                utility.push(MethodUtilityRow {
                    method: b.name.clone(),
                    phi,
                    cs_id: &mc.ids[i],
                    utility: u,
                });
            }
        }
        let sym = cmp
            .baselines
            .iter()
            .find(|b| b.name == "information_symmetry")
            .map(|b| b.welfare);
        if let Some(w) = sym {
            if w < eq.welfare_by_type[t] - super::market::ORDER_TOL {
                log::warn!(
                    "type {phi}: information symmetry welfare {w} below proposed {}",
                    eq.welfare_by_type[t]
                );
            }
        }
        if phi == model.true_type {
            failures.extend(cmp.ordering_failure());
        }
    }
    write_csv(&dir.join("welfare_by_type.csv"), &welfare)?;
    write_csv(&dir.join("cs_utility_by_type.csv"), &utility)?;
    Ok(failures)
}

/// Collects whatever training reports exist upstream.
fn learning_table(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for mode in ["dfel", "dfel-cluster", "centralized"] {
        let base = cfg.out().join(format!("train-{mode}"));
        let read = |name: &str| -> Option<serde_json::Value> {
            serde_json::from_str(&std::fs::read_to_string(base.join(name)).ok()?).ok()
        };
        let (rmse, overhead) = (read("rmse.json"), read("overhead.json"));
        if rmse.is_none() && overhead.is_none() {
            continue;
        }
        let f = |v: &Option<serde_json::Value>, k: &str| {
            v.as_ref().and_then(|v| v.get(k)).and_then(|x| x.as_f64())
        };
        let u = |v: &Option<serde_json::Value>, k: &str| {
            v.as_ref().and_then(|v| v.get(k)).and_then(|x| x.as_u64())
        };
        rows.push(LearningRow {
            mode: mode.into(),
            rmse: f(&rmse, "rmse"),
            mean_predictor_rmse: f(&rmse, "mean_predictor_rmse"),
            federated_bytes: u(&overhead, "federated_bytes"),
            centralized_bytes: u(&overhead, "centralized_bytes"),
            reduction_pct: f(&overhead, "reduction_pct"),
        });
    }
    write_csv(&dir.join("learning_summary.csv"), &rows)
}

pub fn run(cfg: &RunConfig, name: Experiment, demands_override: Option<&Path>) -> Result<Report> {
    let (demands, model, mc) = setup(cfg, demands_override)?;
    let sub = match name {
        Experiment::TypeSweep => "type-sweep",
        Experiment::PriceSweep => "price-sweep",
        Experiment::FigureSuite => "figure-suite",
    };
    let dir = cfg.out().join("experiment").join(sub);
    ensure_dir(&dir)?;
    let mut failures = Vec::new();
    match name {
        Experiment::TypeSweep => failures.extend(type_sweep(cfg, &model, &mc, &dir)?),
        Experiment::PriceSweep => failures.extend(price_sweep(cfg, &model, &mc, &dir)?),
        Experiment::FigureSuite => {
            let eq = cached_equilibrium(cfg, &model, &mc)?;
            failures.extend(audit_failures("proposed", &eq));
            provider_tables(&model, &eq, &dir)?;
            failures.extend(per_type_tables(&model, &mc, &demands, &eq, &dir)?);
            learning_table(cfg, &dir)?;
            failures.extend(type_sweep(cfg, &model, &mc, &dir)?);
            failures.extend(price_sweep(cfg, &model, &mc, &dir)?);
        }
    }
    Ok(Report { dir, failures })
}
