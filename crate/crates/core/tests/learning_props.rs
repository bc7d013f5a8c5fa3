use evmarket_core::federated::{
    self, aggregate, train_centralized, train_dfel, FederationConfig, GradientUpdate,
};
use evmarket_core::ingest::{self, LocationBox};
use evmarket_core::neuralnet::{self, ModelParams};
use evmarket_core::StationRegistry;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;

fn batch(rows: usize, cols: usize, bits: &[bool], labels: &[f64]) -> (Array2<f64>, Array1<f64>) {
    let x = Array2::from_shape_fn((rows, cols), |(i, j)| {
        f64::from(u8::from(bits[(i * cols + j) % bits.len()]))
    });
    let y = Array1::from_shape_fn(rows, |i| labels[i % labels.len()]);
    (x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradient_matches_finite_differences(
        inputs in 1usize..5,
        hidden in prop::collection::vec(1usize..5, 1..3),
        dropout in prop::sample::select(vec![0.0, 0.3]),
        bits in prop::collection::vec(any::<bool>(), 1..40),
        labels in prop::collection::vec(-5.0f64..15.0, 1..10),
        seed in any::<u64>(),
    ) {
        let model = ModelParams::init(inputs, &hidden, dropout, seed).unwrap();
        let (x, y) = batch(6, inputs, &bits, &labels);
        let (g, loss) = neuralnet::gradient(&model, x.view(), &y, seed ^ 1).unwrap();
        prop_assert!((loss - neuralnet::training_loss(&model, x.view(), &y, seed ^ 1).unwrap()).abs() < 1e-9);
        let base = model.to_flat();
        let h = 1e-5;
        for (k, a) in g.to_flat().into_iter().enumerate() {
            let at = |d: f64| {
                let mut m = model.clone();
                let mut p = base.clone();
                p[k] += d;
                m.set_flat(&p).unwrap();
                neuralnet::training_loss(&m, x.view(), &y, seed ^ 1).unwrap()
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            prop_assert!((a - numeric).abs() <= 1e-4 * a.abs().max(numeric.abs()).max(1e-2), "param {k}: {a} vs {numeric}");
        }
    }

    #[test]
    fn aggregate_equals_pooled_over_stations(
        rows in 4usize..40,
        stations in 1usize..6,
        bits in prop::collection::vec(any::<bool>(), 1..50),
        labels in prop::collection::vec(0.0f64..30.0, 1..20),
        owner_seed in prop::collection::vec(0usize..6, 40),
        seed in any::<u64>(),
    ) {
        let stations = stations.min(rows);
        let model = ModelParams::init(5, &[3, 3], 0.0, seed).unwrap();
        let (x, y) = batch(rows, 5, &bits, &labels);
        let owner: Vec<usize> = (0..rows).map(|i| if i < stations { i } else { owner_seed[i] % stations }).collect();
        let updates: Vec<GradientUpdate> = (0..stations)
            .map(|c| {
                let idx: Vec<usize> = (0..rows).filter(|&i| owner[i] == c).collect();
                let (g, _) = neuralnet::gradient(&model, x.select(Axis(0), &idx).view(), &y.select(Axis(0), &idx), 0).unwrap();
                GradientUpdate { source_cs: c, epoch: 3, grads: g }
            })
            .collect();
        let mean = aggregate(&updates, &(0..stations).collect::<Vec<_>>()).unwrap();
        let (pooled, _) = neuralnet::gradient(&model, x.view(), &y, 0).unwrap();
        for (a, b) in mean.to_flat().iter().zip(pooled.to_flat()) {
            prop_assert!((a - b / stations as f64).abs() <= 1e-10);
        }
        // arrival order does not change the sum
        let mut reversed = updates.clone();
        reversed.reverse();
        prop_assert_eq!(aggregate(&reversed, &(0..stations).collect::<Vec<_>>()).unwrap(), mean);
    }
}

#[test]
fn aggregate_trivial_cases_and_barrier() {
    let model = ModelParams::init(3, &[2], 0.0, 1).unwrap();
    let x = Array2::from_elem((2, 3), 1.0);
    let (g, _) = neuralnet::gradient(&model, x.view(), &Array1::from(vec![1.0, 2.0]), 0).unwrap();
    let up = |c, e, grads: &neuralnet::ParamTensor| GradientUpdate {
        source_cs: c,
        epoch: e,
        grads: grads.clone(),
    };
    let same = aggregate(&[up(0, 0, &g), up(1, 0, &g), up(2, 0, &g)], &[0, 1, 2]).unwrap();
    for (a, b) in same.to_flat().iter().zip(g.to_flat()) {
        assert!((a - b).abs() < 1e-15);
    }
    let mut neg = g.clone();
    neg.scale(-1.0);
    assert_eq!(
        aggregate(&[up(0, 0, &g), up(1, 0, &neg)], &[0, 1])
            .unwrap()
            .max_abs(),
        0.0
    );
    assert!(aggregate(&[up(0, 0, &g)], &[0, 1]).is_err(), "missing");
    assert!(
        aggregate(&[up(0, 0, &g), up(0, 0, &g)], &[0, 1]).is_err(),
        "duplicate"
    );
    assert!(
        aggregate(&[up(0, 0, &g), up(1, 1, &g)], &[0, 1]).is_err(),
        "epoch mismatch"
    );
}

fn synthetic(n_tx: usize) -> ingest::EncodedDataset {
    let (recs, locs) = ingest::synth_generate(4, 6, n_tx, LocationBox::default()).unwrap();
    ingest::encode(&recs, &StationRegistry::from_locations(&locs).unwrap()).unwrap()
}

fn small() -> FederationConfig {
    FederationConfig {
        hidden: vec![8],
        epochs_max: 30,
        ..Default::default()
    }
}

#[test]
fn dfel_reduces_pooled_loss_and_is_reproducible() {
    let data = synthetic(3000);
    let shards = federated::shards_from(&data);
    let cfg = small();
    let a = train_dfel(&cfg, &shards, 9).unwrap();
    let b = train_dfel(&cfg, &shards, 9).unwrap();
    assert_eq!(a, b);
    let pooled = |epoch| {
        a.history
            .iter()
            .filter(|h| h.epoch == epoch)
            .map(|h| h.loss)
            .sum::<f64>()
    };
    assert!(pooled(a.epochs_run - 1) < pooled(0));
    // every epoch consumed exactly one update per station
    for e in 0..a.epochs_run {
        assert_eq!(
            a.history.iter().filter(|h| h.epoch == e).count(),
            shards.len()
        );
    }
}

#[test]
fn centralized_loss_decreases_and_matches_single_shard_dfel() {
    let data = synthetic(1500);
    let cfg = FederationConfig {
        epochs_max: 200,
        ..small()
    };
    let c = train_centralized(&data, &cfg, 2).unwrap();
    let first = c.history.first().unwrap().loss;
    let last = c.history.last().unwrap().loss;
    assert!(last < first, "{last} !< {first}");
    let single = train_dfel(
        &cfg,
        &[federated::Shard {
            cs: 0,
            data: data.clone(),
        }],
        2,
    )
    .unwrap();
    assert_eq!(c.model, single.model);
}

#[test]
fn overhead_positive_when_data_outweighs_models() {
    let data = synthetic(4000);
    let shards = federated::shards_from(&data);
    let out = train_dfel(
        &FederationConfig {
            epochs_max: 5,
            ..small()
        },
        &shards,
        0,
    )
    .unwrap();
    let rep = federated::overhead_report(&out.ledger, &shards);
    let rows: u64 = shards.iter().map(|s| s.data.len() as u64).sum();
    let width = data.width() as u64 + 1;
    assert_eq!(rep.centralized_bytes, rows * width * 8);
    assert_eq!(
        rep.federated_bytes,
        out.epochs_run * shards.len() as u64 * out.model.num_params() as u64 * 8
    );
    assert!(rep.federated_bytes < rep.centralized_bytes);
    assert!(rep.reduction_pct > 0.0);
}
