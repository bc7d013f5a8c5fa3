use std::path::Path;

use anyhow::{bail, Result};
use chrono::Duration;
use evmarket_core::clustering::{self, ClusterProblem, ClusterSolution};
use evmarket_core::federated::{self, LossRecord, OverheadReport, Shard, TrainOutcome};
use evmarket_core::ingest::{self, EncodedDataset};
use evmarket_core::{seed, ModelParams, StationRegistry, TransactionRecord};
use serde::Serialize;

use super::data::{load, load_locations, Loaded};
use crate::config::RunConfig;
use crate::output::{ensure_dir, write_csv, write_json, AuditFailure, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Dfel,
    DfelCluster,
    Centralized,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Dfel => "dfel",
            Mode::DfelCluster => "dfel-cluster",
            Mode::Centralized => "centralized",
        }
    }
}

#[derive(Serialize)]
struct RmseRecord {
    mode: &'static str,
    rmse: f64,
    mean_predictor_rmse: f64,
    /// Percentage by which the model beats the label-mean predictor.
    improvement_pct: f64,
    train_rows: usize,
    test_rows: usize,
    epochs_run: u64,
    converged: bool,
}

#[derive(Serialize)]
struct CentralizedOverhead {
    /// Raw rows uploaded to the server, same byte model as federated runs.
    centralized_bytes: u64,
    model: &'static str,
}

#[derive(Serialize)]
pub struct DemandRow {
    pub cs_id: String,
    pub predicted_mwh: f64,
}

#[derive(Serialize)]
struct ActualRow {
    cs_id: String,
    actual_mwh: f64,
}

pub fn cluster_problem(
    cfg: &RunConfig,
    locations: &[evmarket_core::StationLocation],
) -> Result<ClusterProblem> {
    let c = &cfg.clustering;
    Ok(ClusterProblem::from_locations(
        locations, c.k, c.size_min, c.size_max,
    )?)
}

fn write_cluster(dir: &Path, solution: &ClusterSolution) -> Result<()> {
    clustering::write_membership_csv(dir.join("membership.csv"), solution)?;
    write_json(&dir.join("clustering.json"), solution)
}

pub fn cluster(cfg: &RunConfig) -> Result<Report> {
    let (locations, _) = load_locations(cfg)?;
    let problem = cluster_problem(cfg, &locations)?;
    let solution = clustering::cluster_cs(&problem, cfg.seed)?;
    let dir = cfg.out().join("cluster");
    ensure_dir(&dir)?;
    write_cluster(&dir, &solution)?;
    let mut failures = Vec::new();
    let sizes = solution.cluster_sizes(cfg.clustering.k);
    if sizes
        .iter()
        .any(|&s| s < cfg.clustering.size_min || s > cfg.clustering.size_max)
    {
        failures.push(AuditFailure::new(
            "cluster_size_bounds",
            format!("sizes {sizes:?}"),
        ));
    }
    if solution
        .iterations
        .windows(2)
        .any(|w| w[1].objective > w[0].objective + 1e-9)
    {
        failures.push(AuditFailure::new(
            "objective_non_increasing",
            "objective rose between iterations",
        ));
    }
    Ok(Report { dir, failures })
}

/// Energy each station actually delivered over the last `days` days of
/// the history, MWh.
fn actual_interval_demand(
    records: &[TransactionRecord],
    registry: &StationRegistry,
    days: u32,
) -> Vec<f64> {
    let mut out = vec![0.0; registry.len()];
    let Some(last) = records.iter().map(|r| r.date).max() else {
        return out;
    };
    let cutoff = last - Duration::days(i64::from(days));
    for r in records.iter().filter(|r| r.date > cutoff) {
        if let Some(s) = registry.index_of(&r.cs_id) {
            out[s] += r.energy_kwh / 1000.0;
        }
    }
    out
}

/// Rows of `data` whose station is in `members`.
fn rows_of(data: &EncodedDataset, members: &[usize]) -> EncodedDataset {
    let idx: Vec<usize> = (0..data.len())
        .filter(|&r| members.contains(&data.stations[r]))
        .collect();
    data.select(&idx)
}

struct Trained {
    models: Vec<ModelParams>,
    /// Model index per station.
    model_of: Vec<usize>,
    history: Vec<LossRecord>,
    epochs_run: u64,
    converged: bool,
}

pub fn train(cfg: &RunConfig, mode: Mode) -> Result<Report> {
    let Loaded {
        locations,
        registry,
        records,
    } = load(cfg)?;
    let dataset = ingest::encode(&records, &registry)?;
    let (train, test) = ingest::split(&dataset, cfg.learning.train_ratio, cfg.seed)?;
    let fed = cfg.federation();
    let dir = cfg.out().join(format!("train-{}", mode.name()));
    ensure_dir(&dir)?;

    let single = |o: TrainOutcome| Trained {
        model_of: vec![0; registry.len()],
        models: vec![o.model],
        history: o.history,
        epochs_run: o.epochs_run,
        converged: o.converged,
    };

    let trained = match mode {
        Mode::Dfel => {
            let shards = federated::shards_from(&train);
            let out = federated::train_dfel(&fed, &shards, cfg.seed)?;
            write_json(
                &dir.join("overhead.json"),
                &federated::overhead_report(&out.ledger, &shards),
            )?;
            single(out)
        }
        Mode::Centralized => {
            let out = federated::train_centralized(&train, &fed, cfg.seed)?;
            let shards = federated::shards_from(&train);
            let bytes = federated::overhead_report(&Default::default(), &shards).centralized_bytes;
            write_json(
                &dir.join("overhead.json"),
                &CentralizedOverhead {
                    centralized_bytes: bytes,
                    model: "bytes = scalars * 8; centralized = rows * (features + 1)",
                },
            )?;
            // the pooled run has one pseudo-station; relabel its history
            let mut t = single(out);
            for h in &mut t.history {
                h.cs = usize::MAX;
            }
            t
        }
        Mode::DfelCluster => {
            let solution = clustering::cluster_cs(&cluster_problem(cfg, &locations)?, cfg.seed)?;
            write_cluster(&dir, &solution)?;
            let mut model_of = vec![0; registry.len()];
            let mut models = Vec::new();
            let mut history = Vec::new();
            let (mut fed_bytes, mut central_bytes, mut epochs_run, mut converged) =
                (0u64, 0u64, 0u64, true);
            for c in 0..cfg.clustering.k {
                let members: Vec<usize> = solution
                    .members(c)
                    .into_iter()
                    .filter_map(|p| registry.index_of(&solution.ids[p]))
                    .collect();
                let shards: Vec<Shard> = federated::shards_from(&rows_of(&train, &members));
                if shards.is_empty() {
                    bail!("cluster {c} has no training rows");
                }
                let out = federated::train_dfel(
                    &fed,
                    &shards,
                    seed::derive(cfg.seed, "cluster-train", &[c as u64]),
                )?;
                let rep = federated::overhead_report(&out.ledger, &shards);
                fed_bytes += rep.federated_bytes;
                central_bytes += rep.centralized_bytes;
                epochs_run = epochs_run.max(out.epochs_run);
                converged &= out.converged;
                write_json(&dir.join(format!("model_cluster{c}.json")), &out.model)?;
                for &s in &members {
                    model_of[s] = models.len();
                }
                models.push(out.model);
                history.extend(out.history);
            }
            history.sort_by_key(|h| (h.epoch, h.cs));
            let reduction_pct = if central_bytes == 0 {
                0.0
            } else {
                100.0 * (1.0 - fed_bytes as f64 / central_bytes as f64)
            };
            write_json(
                &dir.join("overhead.json"),
                &OverheadReport {
                    federated_bytes: fed_bytes,
                    centralized_bytes: central_bytes,
                    reduction_pct,
                    model: "bytes = scalars * 8; federated = sum over clusters of rounds * stations * params; centralized = rows * (features + 1)".into(),
                },
            )?;
            Trained {
                models,
                model_of,
                history,
                epochs_run,
                converged,
            }
        }
    };

    if mode != Mode::DfelCluster {
        write_json(&dir.join("model.json"), &trained.models[0])?;
    }
    federated::write_history_csv(dir.join("history.csv"), &trained.history, &registry)?;

    // test error pooled over the per-model station groups
    let mut sse = 0.0;
    for (m, model) in trained.models.iter().enumerate() {
        let members: Vec<usize> = (0..registry.len())
            .filter(|&s| trained.model_of[s] == m)
            .collect();
        let part = rows_of(&test, &members);
        if !part.is_empty() {
            sse += federated::rmse(model, &part)?.powi(2) * part.len() as f64;
        }
    }
    let rmse = (sse / test.len() as f64).sqrt();
    let baseline = federated::mean_predictor_rmse(&train, &test)?;
    write_json(
        &dir.join("rmse.json"),
        &RmseRecord {
            mode: mode.name(),
            rmse,
            mean_predictor_rmse: baseline,
            improvement_pct: 100.0 * (1.0 - rmse / baseline),
            train_rows: train.len(),
            test_rows: test.len(),
            epochs_run: trained.epochs_run,
            converged: trained.converged,
        },
    )?;

    let days = cfg.learning.interval_days;
    let per_model: Vec<Vec<f64>> = trained
        .models
        .iter()
        .map(|m| federated::predict_interval_demand(m, &records, &registry, days))
        .collect::<std::result::Result<_, _>>()?;
    let demand: Vec<DemandRow> = registry
        .ids()
        .iter()
        .enumerate()
        .map(|(s, id)| DemandRow {
            cs_id: id.clone(),
            predicted_mwh: per_model[trained.model_of[s]][s],
        })
        .collect();
    write_csv(&dir.join("predicted_demand.csv"), &demand)?;
    let actual: Vec<ActualRow> = registry
        .ids()
        .iter()
        .zip(actual_interval_demand(&records, &registry, days))
        .map(|(id, a)| ActualRow {
            cs_id: id.clone(),
            actual_mwh: a,
        })
        .collect();
    write_csv(&dir.join("actual_demand.csv"), &actual)?;

    let mut failures = Vec::new();
    if !rmse.is_finite() {
        failures.push(AuditFailure::new(
            "rmse_finite",
            format!("test RMSE is {rmse}"),
        ));
    }
    if demand
        .iter()
        .any(|d| !(d.predicted_mwh >= 0.0) || !d.predicted_mwh.is_finite())
    {
        failures.push(AuditFailure::new(
            "demand_finite",
            "a predicted demand is negative or not finite",
        ));
    }
    log::info!(
        "{}: test RMSE {rmse:.4} vs mean predictor {baseline:.4}",
        mode.name()
    );
    Ok(Report { dir, failures })
}
