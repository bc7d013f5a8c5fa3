//! Decentralized federated energy learning: every charging station computes
//! a full-batch gradient of its local loss on the shared model, the
//! gradients are averaged behind a synchronous barrier and one Adam step
//! updates the global model. Also hosts the pooled (cloud) baseline, RMSE
//! and the communication-overhead model.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    day_index, EncodedDataset, StationRegistry, TransactionRecord, DAYS_PER_WEEK, HOURS_PER_DAY,
};
use crate::neuralnet::{self, AdamConfig, AdamState, ModelParams, ParamTensor};
use crate::seed;

/// Bytes per transmitted scalar (f64).
pub const BYTES_PER_SCALAR: u64 = 8;

/// One station's local gradient for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientUpdate {
    pub source_cs: usize,
    pub epoch: u64,
    pub grads: ParamTensor,
}

/// A station's local training data, keyed by its registry index.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub cs: usize,
    pub data: EncodedDataset,
}

pub fn shards_from(dataset: &EncodedDataset) -> Vec<Shard> {
    dataset
        .shard_by_station()
        .into_iter()
        .map(|(cs, data)| Shard { cs, data })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub adam: AdamConfig,
    pub epochs_max: u64,
    pub convergence_window: usize,
    /// Relative loss change below which a station counts as converged.
    pub convergence_tol: f64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            dropout_rate: 0.15,
            adam: AdamConfig::default(),
            epochs_max: 200,
            convergence_window: 5,
            convergence_tol: 1e-4,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_max < 1 {
            return Err(Error::InvalidArgument(
                "epochs_max must be at least 1".into(),
            ));
        }
        if self.convergence_window < 1 {
            return Err(Error::InvalidArgument(
                "convergence_window must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument("dropout rate outside [0,1)".into()));
        }
        self.adam.validate()
    }
}

/// Component-wise mean of one epoch's local gradients.
///
/// `expected` lists the participating stations; the barrier requires exactly
/// one update from each, all for the same epoch. Summation follows ascending
/// station index regardless of arrival order.
pub fn aggregate(updates: &[GradientUpdate], expected: &[usize]) -> Result<ParamTensor> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Barrier("no gradient updates".into()))?;
    let want: BTreeSet<usize> = expected.iter().copied().collect();
    if want.len() != expected.len() {
        return Err(Error::Barrier("duplicate station in expected set".into()));
    }
    let mut seen = BTreeSet::new();
    for u in updates {
        if u.epoch != first.epoch {
            return Err(Error::Barrier(format!(
                "epoch mismatch: station {} sent epoch {}, expected {}",
                u.source_cs, u.epoch, first.epoch
            )));
        }
        if !want.contains(&u.source_cs) {
            return Err(Error::Barrier(format!(
                "unexpected station {}",
                u.source_cs
            )));
        }
        if !seen.insert(u.source_cs) {
            return Err(Error::Barrier(format!(
                "duplicate update from station {}",
                u.source_cs
            )));
        }
        if !u.grads.same_shape(&first.grads) {
            return Err(Error::Shape(format!(
                "station {} sent a mis-shaped gradient",
                u.source_cs
            )));
        }
    }
    if let Some(missing) = want.difference(&seen).next() {
        return Err(Error::Barrier(format!(
            "missing update from station {missing}"
        )));
    }
    let mut order: Vec<&GradientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.source_cs);
    let mut sum = ParamTensor {
        layers: first
            .grads
            .layers
            .iter()
            .map(|l| neuralnet::Layer::zeros(l.inputs(), l.outputs()))
            .collect(),
    };
    for u in order {
        sum.add_scaled(1.0, &u.grads);
    }
    sum.scale(1.0 / updates.len() as f64);
    Ok(sum)
}

/// Scalars exchanged during federated training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadLedger {
    pub rounds: u64,
    pub stations: usize,
    pub params_per_update: usize,
    pub scalars_sent: u64,
}

impl OverheadLedger {
    fn record_round(&mut self) {
        self.rounds += 1;
        self.scalars_sent += (self.stations * self.params_per_update) as u64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: u64,
    pub cs: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub history: Vec<LossRecord>,
    pub ledger: OverheadLedger,
    pub epochs_run: u64,
    pub converged: bool,
}

fn converged(per_cs: &[Vec<f64>], window: usize, tol: f64) -> bool {
    per_cs.iter().all(|h| {
        if h.len() <= window {
            return false;
        }
        let now = h[h.len() - 1];
        let then = h[h.len() - 1 - window];
        let rel = (now - then).abs() / then.abs().max(f64::MIN_POSITIVE);
        rel < tol
    })
}

/// Federated training over per-station shards.
///
/// Each epoch every station evaluates its loss and full-batch gradient on the
/// current global model (dropout mask seeded by `(seed, station, epoch)`),
/// the gradients are averaged and a single Adam step is applied. Training
/// stops after `epochs_max` epochs, or once every station's loss changed by
/// less than `convergence_tol` (relative) over the last `convergence_window`
/// epochs.
pub fn train_dfel(config: &FederationConfig, shards: &[Shard], seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if shards.is_empty() {
        return Err(Error::Empty("no station shards".into()));
    }
    if let Some(s) = shards.iter().find(|s| s.data.is_empty()) {
        return Err(Error::Empty(format!(
            "shard of station {} has no rows",
            s.cs
        )));
    }
    let width = shards[0].data.width();
    if shards.iter().any(|s| s.data.width() != width) {
        return Err(Error::Shape("shards differ in feature width".into()));
    }
    let expected: Vec<usize> = shards.iter().map(|s| s.cs).collect();

    let mut model = ModelParams::init(
        width,
        &config.hidden,
        config.dropout_rate,
        seed::derive(seed, "init", &[]),
    )?;
    // Start the output at the pooled label mean. Each station only reveals a
    // label sum and a row count; raw kWh labels otherwise make the tanh
    // layers saturate while the bias climbs from zero.
    let (label_sum, rows) = shards.iter().fold((0.0, 0usize), |(s, n), sh| {
        (s + sh.data.labels.sum(), n + sh.data.len())
    });
    if let Some(out) = model.layers.last_mut() {
        out.bias.fill(label_sum / rows as f64);
    }
    let mut adam = AdamState::new(config.adam, &model);
    let mut ledger = OverheadLedger {
        stations: shards.len(),
        params_per_update: model.num_params(),
        ..Default::default()
    };
    let mut history = Vec::new();
    let mut per_cs: Vec<Vec<f64>> = vec![Vec::new(); shards.len()];
    let mut is_converged = false;

    for epoch in 0..config.epochs_max {
        let local: Vec<(GradientUpdate, f64)> = shards
            .par_iter()
            .map(|s| {
                let mask_seed = seed::derive(seed, "dropout", &[s.cs as u64, epoch]);
                let (grads, loss) =
                    neuralnet::gradient(&model, s.data.features.view(), &s.data.labels, mask_seed)?;
                Ok((
                    GradientUpdate {
                        source_cs: s.cs,
                        epoch,
                        grads,
                    },
                    loss,
                ))
            })
            .collect::<Result<_>>()?;
        let (updates, losses): (Vec<_>, Vec<_>) = local.into_iter().unzip();
        let global = aggregate(&updates, &expected)?;
        neuralnet::adam_step(&mut adam, &mut model, &global)?;
        ledger.record_round();
        for (i, (s, l)) in shards.iter().zip(&losses).enumerate() {
            history.push(LossRecord {
                epoch,
                cs: s.cs,
                loss: *l,
            });
            per_cs[i].push(*l);
        }
        log::debug!("epoch {epoch}: losses {losses:?}");
        if converged(&per_cs, config.convergence_window, config.convergence_tol) {
            is_converged = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        epochs_run: ledger.rounds,
        history,
        ledger,
        converged: is_converged,
    })
}

/// Cloud baseline: the same network and optimizer on the pooled dataset,
/// treated as a single participant with index 0.
pub fn train_centralized(
    pooled: &EncodedDataset,
    config: &FederationConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if pooled.is_empty() {
        return Err(Error::Empty("pooled dataset has no rows".into()));
    }
    train_dfel(
        config,
        &[Shard {
            cs: 0,
            data: pooled.clone(),
        }],
        seed,
    )
}

/// Root-mean-square error with dropout disabled.
pub fn rmse(model: &ModelParams, test: &EncodedDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set has no rows".into()));
    }
    let sse = neuralnet::loss(model, test.features.view(), &test.labels)?;
    Ok((sse / test.len() as f64).sqrt())
}

/// RMSE of predicting the training-label mean for every test row.
pub fn mean_predictor_rmse(train: &EncodedDataset, test: &EncodedDataset) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty(
            "mean predictor needs train and test rows".into(),
        ));
    }
    let mean = train.labels.mean().unwrap_or(0.0);
    let mse = test.labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / test.len() as f64;
    Ok(mse.sqrt())
}

/// Communication cost of federated training versus uploading raw data.
///
/// This byte-count model is the crate's own: federated cost is
/// `rounds * stations * |params| * 8`, centralized cost is
/// `sum_i rows_i * (features + 1) * 8`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub federated_bytes: u64,
    pub centralized_bytes: u64,
    pub reduction_pct: f64,
    pub model: String,
}

pub fn overhead_report(ledger: &OverheadLedger, shards: &[Shard]) -> OverheadReport {
    let federated_bytes =
        ledger.rounds * ledger.stations as u64 * ledger.params_per_update as u64 * BYTES_PER_SCALAR;
    let centralized_bytes = shards
        .iter()
        .map(|s| s.data.len() as u64 * (s.data.width() as u64 + 1) * BYTES_PER_SCALAR)
        .sum::<u64>();
    let reduction_pct = if centralized_bytes == 0 {
        0.0
    } else {
        100.0 * (1.0 - federated_bytes as f64 / centralized_bytes as f64)
    };
    OverheadReport {
        federated_bytes,
        centralized_bytes,
        reduction_pct,
        model: "bytes = scalars * 8; federated = rounds * stations * params; centralized = rows * (features + 1)".into(),
    }
}

pub fn write_history_csv(
    path: impl AsRef<Path>,
    history: &[LossRecord],
    registry: &StationRegistry,
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "epoch,cs_id,loss").map_err(io)?;
    for r in history {
        let id = registry
            .ids()
            .get(r.cs)
            .map(String::as_str)
            .unwrap_or("pooled");
        writeln!(w, "{},{},{:.10e}", r.epoch, id, r.loss).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Predicted energy (MWh) each station will deliver over the next
/// `interval_days` days.
///
/// Session counts per (day-of-week, hour) slot are estimated from the
/// station's history; each slot's expected session energy comes from the
/// model.
pub fn predict_interval_demand(
    model: &ModelParams,
    records: &[TransactionRecord],
    registry: &StationRegistry,
    interval_days: u32,
) -> Result<Vec<f64>> {
    let n = registry.len();
    if records.is_empty() {
        return Ok(vec![0.0; n]);
    }
    let (first, last) = records
        .iter()
        .fold((NaiveDate::MAX, NaiveDate::MIN), |(a, b), r| {
            (a.min(r.date), b.max(r.date))
        });
    let weeks = ((last - first).num_days() + 1) as f64 / 7.0;
    let mut counts = vec![[[0u32; HOURS_PER_DAY]; DAYS_PER_WEEK]; n];
    for r in records {
        let s = registry
            .index_of(&r.cs_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown station `{}`", r.cs_id)))?;
        counts[s][day_index(r.date)][chrono::Timelike::hour(&r.start_time) as usize] += 1;
    }
    let layout = crate::ingest::FeatureLayout { n_stations: n };
    let slots = DAYS_PER_WEEK * HOURS_PER_DAY;
    let mut x = Array2::<f64>::zeros((n * slots, layout.width()));
    for s in 0..n {
        for d in 0..DAYS_PER_WEEK {
            for h in 0..HOURS_PER_DAY {
                let row = s * slots + d * HOURS_PER_DAY + h;
                x[[row, layout.station_col(s)]] = 1.0;
                x[[row, layout.day_col(d)]] = 1.0;
                x[[row, layout.hour_col(h)]] = 1.0;
            }
        }
    }
    let pred = neuralnet::predict(model, x.view())?;
    let scale = f64::from(interval_days) / 7.0 / weeks / 1000.0;
    Ok((0..n)
        .map(|s| {
            let mut kwh = 0.0;
            for d in 0..DAYS_PER_WEEK {
                for h in 0..HOURS_PER_DAY {
                    let c = f64::from(counts[s][d][h]);
                    if c > 0.0 {
                        kwh += c * pred[s * slots + d * HOURS_PER_DAY + h].max(0.0);
                    }
                }
            }
            kwh * scale
        })
        .collect())
}
