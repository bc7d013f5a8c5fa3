//! Run configuration: one JSON file, every field defaulted.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use evmarket_core::federated::FederationConfig;
use evmarket_core::ingest::ColumnMap;
use evmarket_core::market::{MarketConfig, SgpTypeModel, SolverConfig};
use evmarket_core::AdamConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random stream is derived from it.
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub learning: LearningConfig,
    pub clustering: ClusteringConfig,
    pub market: MarketBlock,
    pub experiment: ExperimentConfig,
}

/// Unset paths resolve inside the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub output_dir: PathBuf,
    pub transactions: Option<PathBuf>,
    pub locations: Option<PathBuf>,
    /// `cs_id,predicted_mwh[,actual_mwh]`; defaults to the dfel training output.
    pub demands: Option<PathBuf>,
    /// `canonical` or `dundee`.
    pub column_map: String,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            transactions: None,
            locations: None,
            demands: None,
            column_map: "canonical".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_stations: usize,
    pub n_transactions: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_stations: 6,
            n_transactions: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub adam: AdamConfig,
    pub epochs: u64,
    pub convergence_window: usize,
    pub convergence_tol: f64,
    pub train_ratio: f64,
    /// Length of the demand-prediction interval handed to the market.
    pub interval_days: u32,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            dropout: 0.15,
            adam: AdamConfig::default(),
            epochs: 100,
            convergence_window: 5,
            convergence_tol: 1e-4,
            train_ratio: 0.8,
            interval_days: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub k: usize,
    pub size_min: usize,
    pub size_max: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: 2,
            size_min: 2,
            size_max: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketBlock {
    pub phi_max: u32,
    pub true_type: u32,
    /// Capacity of the top type, MWh.
    pub s_max: f64,
    pub zeta: f64,
    pub rho_unit: f64,
    pub varrho: f64,
    pub kappa: f64,
    pub max_rounds: usize,
    pub solver: SolverConfig,
}

impl Default for MarketBlock {
    fn default() -> Self {
        Self {
            phi_max: 10,
            true_type: 5,
            s_max: 500.0,
            zeta: 0.022,
            rho_unit: 200.0,
            varrho: 220.0,
            kappa: 1e-6,
            max_rounds: 200,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub type_counts: Vec<u32>,
    pub price_level_counts: Vec<usize>,
    pub price_lo: f64,
    pub price_hi: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            type_counts: vec![5, 10],
            price_level_counts: vec![1, 5, 10, 15, 20, 25, 30],
            price_lo: 190.0,
            price_hi: 200.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n_stations == 0 || d.n_transactions == 0 {
            bail!("data.n_stations and data.n_transactions must be at least 1");
        }
        if d.n_transactions < d.n_stations {
            bail!("data.n_transactions must cover every station at least once");
        }
        let l = &self.learning;
        if l.hidden.is_empty() || l.hidden.contains(&0) {
            bail!("learning.hidden needs at least one positive layer width");
        }
        if !(0.0..1.0).contains(&l.dropout) {
            bail!("learning.dropout must lie in [0, 1)");
        }
        if !(l.train_ratio > 0.0 && l.train_ratio < 1.0) {
            bail!("learning.train_ratio must lie in (0, 1)");
        }
        if l.interval_days == 0 {
            bail!("learning.interval_days must be at least 1");
        }
        l.adam.validate()?;
        self.federation().validate()?;
        let c = &self.clustering;
        if c.k == 0 || c.size_min > c.size_max {
            bail!("clustering needs k >= 1 and size_min <= size_max");
        }
        let m = &self.market;
        if m.true_type == 0 || m.true_type > m.phi_max {
            bail!("market.true_type must lie in 1..=phi_max");
        }
        if !(m.s_max >= 0.0) || !(m.zeta > 0.0) || !(m.varrho > 0.0) {
            bail!("market.s_max must be non-negative, zeta and varrho positive");
        }
        self.type_model()?.validate()?;
        let e = &self.experiment;
        if e.type_counts.contains(&0) || e.price_level_counts.contains(&0) {
            bail!("experiment sweep counts must be positive");
        }
        if !(e.price_lo <= e.price_hi) || !(e.price_lo > 0.0) {
            bail!("experiment price range must satisfy 0 < price_lo <= price_hi");
        }
        match self.paths.column_map.as_str() {
            "canonical" | "dundee" => Ok(()),
            other => bail!("paths.column_map must be `canonical` or `dundee`, got `{other}`"),
        }
    }

    pub fn out(&self) -> &Path {
        &self.paths.output_dir
    }

    pub fn transactions_path(&self) -> PathBuf {
        self.paths
            .transactions
            .clone()
            .unwrap_or_else(|| self.out().join("transactions.csv"))
    }

    pub fn locations_path(&self) -> PathBuf {
        self.paths
            .locations
            .clone()
            .unwrap_or_else(|| self.out().join("locations.csv"))
    }

    pub fn demands_path(&self) -> PathBuf {
        self.paths
            .demands
            .clone()
            .unwrap_or_else(|| self.out().join("train-dfel").join("predicted_demand.csv"))
    }

    pub fn column_map(&self) -> ColumnMap {
        if self.paths.column_map == "dundee" {
            ColumnMap::dundee()
        } else {
            ColumnMap::default()
        }
    }

    pub fn federation(&self) -> FederationConfig {
        let l = &self.learning;
        FederationConfig {
            hidden: l.hidden.clone(),
            dropout_rate: l.dropout,
            adam: l.adam,
            epochs_max: l.epochs,
            convergence_window: l.convergence_window,
            convergence_tol: l.convergence_tol,
        }
    }

    pub fn type_model(&self) -> Result<SgpTypeModel> {
        let m = &self.market;
        Ok(SgpTypeModel::uniform(
            m.phi_max,
            m.s_max,
            m.zeta,
            m.true_type,
        )?)
    }

    pub fn market_config(&self, ids: Vec<String>, demands: Vec<f64>) -> MarketConfig {
        let m = &self.market;
        let n = demands.len();
        MarketConfig {
            ids,
            rho_unit: m.rho_unit,
            varrho: vec![m.varrho; n],
            kappa: m.kappa,
            max_rounds: m.max_rounds,
            demands,
            seed: self.seed,
            solver: m.solver.clone(),
        }
    }
}
