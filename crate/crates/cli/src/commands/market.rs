use std::path::Path;

use anyhow::{bail, Context, Result};
use evmarket_core::market::{
    self, baselines::BaselineOutcome, sweeps::audit_ok, EquilibriumResult, MarketConfig,
    SgpTypeModel, AUDIT_TOL,
};
use evmarket_core::seed;
use serde::{Deserialize, Serialize};

use crate::config::{MarketBlock, RunConfig};
use crate::output::{ensure_dir, write_csv, write_json, AuditFailure, Report};

/// Welfare ordering slack between the information-symmetric bound and the
/// proposed equilibrium.
pub const ORDER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Demands {
    pub ids: Vec<String>,
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

#[derive(Deserialize)]
struct DemandCsvRow {
    cs_id: String,
    predicted_mwh: f64,
    #[serde(default)]
    actual_mwh: Option<f64>,
}

#[derive(Deserialize)]
struct ActualCsvRow {
    cs_id: String,
    actual_mwh: f64,
}

/// Reads `cs_id,predicted_mwh[,actual_mwh]`. Without an `actual_mwh`
/// column, a sibling `actual_demand.csv` supplies realized demand; failing
/// that, realized demand is taken to equal the prediction.
pub fn load_demands(path: &Path) -> Result<Demands> {
    if !path.exists() {
        bail!(
            "missing demands file {}; run `evmarket train --mode dfel` first or pass --demands",
            path.display()
        );
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut ids = Vec::new();
    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    for (i, row) in reader.deserialize::<DemandCsvRow>().enumerate() {
        let row =
            row.with_context(|| format!("malformed demands row {} in {}", i + 1, path.display()))?;
        if !row.predicted_mwh.is_finite() || row.predicted_mwh < 0.0 {
            bail!(
                "row {}: predicted_mwh must be finite and non-negative",
                i + 1
            );
        }
        if ids.contains(&row.cs_id) {
            bail!("row {}: duplicate station `{}`", i + 1, row.cs_id);
        }
        ids.push(row.cs_id);
        predicted.push(row.predicted_mwh);
        actual.push(row.actual_mwh);
    }
    if ids.is_empty() {
        bail!("{} lists no stations", path.display());
    }
    let actual = if actual.iter().all(Option::is_some) {
        actual.into_iter().flatten().collect()
    } else {
        let sibling = path.with_file_name("actual_demand.csv");
        if sibling.exists() {
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(&sibling)?;
            let rows: Vec<ActualCsvRow> = reader
                .deserialize()
                .collect::<std::result::Result<_, _>>()?;
            ids.iter()
                .zip(&predicted)
                .map(|(id, &p)| {
                    rows.iter()
                        .find(|r| &r.cs_id == id)
                        .map_or(p, |r| r.actual_mwh)
                })
                .collect()
        } else {
            predicted.clone()
        }
    };
    Ok(Demands {
        ids,
        predicted,
        actual,
    })
}

pub fn setup(
    cfg: &RunConfig,
    demands_override: Option<&Path>,
) -> Result<(Demands, SgpTypeModel, MarketConfig)> {
    let path = demands_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.demands_path());
    let demands = load_demands(&path)?;
    let model = cfg.type_model()?;
    let mc = cfg.market_config(demands.ids.clone(), demands.predicted.clone());
    mc.validate()?;
    Ok((demands, model, mc))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditSummary {
    pub ok: bool,
    pub converged: bool,
    pub max_constraint_violation: f64,
    pub min_ir_residual: f64,
    pub min_ic_residual: f64,
    pub monotone: bool,
    pub tolerance: f64,
}

impl AuditSummary {
    pub fn of(r: &EquilibriumResult) -> Self {
        let min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
        Self {
            ok: audit_ok(r),
            converged: r.converged,
            max_constraint_violation: r.max_constraint_violation,
            min_ir_residual: min(&mut r.ir_residuals.iter().copied()),
            min_ic_residual: min(&mut r.ic_residuals.iter().flatten().copied()),
            monotone: r.monotone.iter().all(|&m| m),
            tolerance: AUDIT_TOL,
        }
    }
}

/// Everything needed to reuse an equilibrium downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumFile {
    pub seed: u64,
    pub kappa: f64,
    pub market: MarketBlock,
    pub ids: Vec<String>,
    pub demands: Vec<f64>,
    pub type_model: SgpTypeModel,
    pub audit: AuditSummary,
    pub result: EquilibriumResult,
}

pub fn equilibrium(model: &SgpTypeModel, mc: &MarketConfig) -> Result<EquilibriumResult> {
    let init = market::initial_menus(model, mc)?;
    Ok(market::iterate_contracts(model, mc, &init)?)
}

pub fn audit_failures(label: &str, r: &EquilibriumResult) -> Vec<AuditFailure> {
    let a = AuditSummary::of(r);
    let mut out = Vec::new();
    if !a.converged {
        out.push(AuditFailure::new(
            &format!("{label}:converged"),
            format!("no fixed point after {} rounds", r.rounds),
        ));
    }
    if a.max_constraint_violation > AUDIT_TOL {
        out.push(AuditFailure::new(
            &format!("{label}:feasibility"),
            format!(
                "max constraint violation {:.3e}",
                a.max_constraint_violation
            ),
        ));
    }
    if a.min_ir_residual < -AUDIT_TOL || a.min_ic_residual < -AUDIT_TOL {
        out.push(AuditFailure::new(
            &format!("{label}:ir_ic"),
            format!(
                "min IR {:.3e}, min IC {:.3e}",
                a.min_ir_residual, a.min_ic_residual
            ),
        ));
    }
    if !a.monotone {
        out.push(AuditFailure::new(
            &format!("{label}:monotone"),
            "payments not monotone in type",
        ));
    }
    out
}

#[derive(Serialize)]
struct WelfareRow {
    phi: u32,
    welfare: f64,
}

#[derive(Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub welfare: f64,
    pub sgp_utility: f64,
    pub total_cs_utility: f64,
    /// Relative to the proposed method; positive means above it.
    pub gap_vs_proposed_pct: f64,
}

pub struct Comparison {
    pub proposed: EquilibriumResult,
    pub baselines: Vec<BaselineOutcome>,
}

pub fn compare(
    model: &SgpTypeModel,
    mc: &MarketConfig,
    demands: &Demands,
    proposed: EquilibriumResult,
) -> Result<Comparison> {
    let baselines = vec![
        market::baseline_information_symmetry(model, mc)?,
        market::baseline_proportional_request(model, mc)?,
        market::baseline_non_prediction(
            model,
            mc,
            &demands.actual,
            seed::derive(mc.seed, "non-prediction", &[]),
        )?,
    ];
    Ok(Comparison {
        proposed,
        baselines,
    })
}

impl Comparison {
    pub fn rows(&self, model: &SgpTypeModel) -> Vec<ComparisonRow> {
        let p = &self.proposed;
        let sgp = market::sgp_utility(model.true_type, &p.pi_hat, &p.menus, model);
        let gap = |w: f64| {
            if p.welfare != 0.0 {
                100.0 * (w - p.welfare) / p.welfare.abs()
            } else {
                0.0
            }
        };
        std::iter::once(ComparisonRow {
            method: "proposed".into(),
            welfare: p.welfare,
            sgp_utility: sgp,
            total_cs_utility: p.welfare - sgp,
            gap_vs_proposed_pct: 0.0,
        })
        .chain(self.baselines.iter().map(|b| ComparisonRow {
            method: b.name.clone(),
            welfare: b.welfare,
            sgp_utility: b.sgp_utility,
            total_cs_utility: b.utilities.iter().sum(),
            gap_vs_proposed_pct: gap(b.welfare),
        }))
        .collect()
    }

    pub fn ordering_failure(&self) -> Option<AuditFailure> {
        let sym = self
            .baselines
            .iter()
            .find(|b| b.name == "information_symmetry")?;
        (sym.welfare < self.proposed.welfare - ORDER_TOL).then(|| {
            AuditFailure::new(
                "welfare_ordering",
                format!(
                    "information symmetry {} below proposed {}",
                    sym.welfare, self.proposed.welfare
                ),
            )
        })
    }
}

pub fn run(cfg: &RunConfig, demands_override: Option<&Path>) -> Result<Report> {
    let (demands, model, mc) = setup(cfg, demands_override)?;
    let dir = cfg.out().join("market");
    ensure_dir(&dir)?;
    let result = equilibrium(&model, &mc)?;
    let mut failures = audit_failures("proposed", &result);
    write_json(
        &dir.join("equilibrium.json"),
        &EquilibriumFile {
            seed: mc.seed,
            kappa: mc.kappa,
            market: cfg.market.clone(),
            ids: mc.ids.clone(),
            demands: mc.demands.clone(),
            type_model: model.clone(),
            audit: AuditSummary::of(&result),
            result: result.clone(),
        },
    )?;
    let welfare: Vec<WelfareRow> = model
        .types()
        .zip(&result.welfare_by_type)
        .map(|(phi, &w)| WelfareRow { phi, welfare: w })
        .collect();
    write_csv(&dir.join("welfare.csv"), &welfare)?;

    let cmp = compare(&model, &mc, &demands, result)?;
    write_csv(&dir.join("comparison.csv"), &cmp.rows(&model))?;
    failures.extend(cmp.ordering_failure());
    Ok(Report { dir, failures })
}

/// Reuses `market/equilibrium.json` when it was computed for the same
/// inputs; otherwise solves afresh.
pub fn cached_equilibrium(
    cfg: &RunConfig,
    model: &SgpTypeModel,
    mc: &MarketConfig,
) -> Result<EquilibriumResult> {
    let path = cfg.out().join("market").join("equilibrium.json");
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(f) = serde_json::from_str::<EquilibriumFile>(&text) {
            if f.seed == mc.seed
                && f.market == cfg.market
                && f.ids == mc.ids
                && f.demands == mc.demands
                && &f.type_model == model
            {
                log::info!("reusing {}", path.display());
                return Ok(f.result);
            }
        }
    }
    equilibrium(model, mc)
}
