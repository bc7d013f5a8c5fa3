//! Acceptance criteria 1-11. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run
//! a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use evmarket_cli::config::RunConfig;
use evmarket_core::clustering::{brute_force_assign, cluster_cs, objective, ClusterProblem};
use evmarket_core::federated::{self, aggregate, GradientUpdate, TrainOutcome};
use evmarket_core::ingest::{self, EncodedDataset, LocationBox};
use evmarket_core::market::oracle::{best_response_grid_oracle, p1_grid_oracle};
use evmarket_core::market::{
    self, best_response, best_response_gains, build_full_constraints, build_reduced_constraints,
    initial_menus, iterate_contracts, solve_p1, AllocationVector, ContractMenu, MarketConfig,
    SgpTypeModel,
};
use evmarket_core::neuralnet::{self, ModelParams};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- learning

fn random_batch(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> (Array2<f64>, Array1<f64>) {
    let x = Array2::from_shape_fn((rows, cols), |_| if r.random_bool(0.4) { 1.0 } else { 0.0 });
    let y = Array1::from_shape_fn(rows, |_| r.random_range(0.0..20.0));
    (x, y)
}

/// Central finite differences on the sum-of-squares loss with the dropout
/// mask held fixed.
fn c1_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    for net in 0..25u64 {
        let mut r = rng(100 + net);
        let inputs = r.random_range(2..7);
        let hidden: Vec<usize> = (0..r.random_range(1..3))
            .map(|_| r.random_range(2..6))
            .collect();
        let dropout = if net % 2 == 0 { 0.0 } else { 0.15 };
        let model = ModelParams::init(inputs, &hidden, dropout, net).map_err(|e| e.to_string())?;
        let (x, y) = random_batch(&mut r, 8, inputs);
        let mask = 7 + net;
        let (grad, _) =
            neuralnet::gradient(&model, x.view(), &y, mask).map_err(|e| e.to_string())?;
        let analytic = grad.to_flat();
        let base = model.to_flat();
        let h = 1e-5;
        for (k, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let mut p = base.clone();
                p[k] += delta;
                m.set_flat(&p).unwrap();
                neuralnet::training_loss(&m, x.view(), &y, mask).unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    check(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 25 networks (limit 1e-4)"),
    )
}

/// Mean of per-shard full-batch gradients against the pooled gradient over
/// the number of shards.
fn c2_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 0..10u64 {
        let mut r = rng(200 + s);
        let cols = 9;
        let rows = r.random_range(20..60);
        let (x, y) = random_batch(&mut r, rows, cols);
        let model = ModelParams::init(cols, &[5, 4], 0.0, s).map_err(|e| e.to_string())?;
        let shards = r.random_range(2..6usize);
        // every shard gets at least one row, the rest at random
        let owner: Vec<usize> = (0..rows)
            .map(|i| {
                if i < shards {
                    i
                } else {
                    r.random_range(0..shards)
                }
            })
            .collect();
        let mut updates = Vec::new();
        for c in 0..shards {
            let idx: Vec<usize> = (0..rows).filter(|&i| owner[i] == c).collect();
            let xs = x.select(ndarray::Axis(0), &idx);
            let ys = y.select(ndarray::Axis(0), &idx);
            let (g, _) =
                neuralnet::gradient(&model, xs.view(), &ys, 0).map_err(|e| e.to_string())?;
            updates.push(GradientUpdate {
                source_cs: c,
                epoch: 0,
                grads: g,
            });
        }
        let expected: Vec<usize> = (0..shards).collect();
        let mean = aggregate(&updates, &expected).map_err(|e| e.to_string())?;
        let (pooled, _) =
            neuralnet::gradient(&model, x.view(), &y, 0).map_err(|e| e.to_string())?;
        for (a, b) in mean.to_flat().iter().zip(pooled.to_flat()) {
            worst = worst.max((a - b / shards as f64).abs());
        }
    }
    check(
        worst <= 1e-10,
        format!("max |mean - pooled/I| = {worst:.2e} over 10 shardings (limit 1e-10)"),
    )
}

struct DeskRun {
    train: EncodedDataset,
    test: EncodedDataset,
    outcome: TrainOutcome,
    shards: Vec<federated::Shard>,
    /// Data generation plus training.
    elapsed: Duration,
}

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let cfg = RunConfig::default();
        let (records, locations) = ingest::synth_generate(
            cfg.seed,
            cfg.data.n_stations,
            cfg.data.n_transactions,
            LocationBox::default(),
        )
        .unwrap();
        let registry = evmarket_core::StationRegistry::from_locations(&locations).unwrap();
        let data = ingest::encode(&records, &registry).unwrap();
        let (train, test) = ingest::split(&data, cfg.learning.train_ratio, cfg.seed).unwrap();
        let shards = federated::shards_from(&train);
        let outcome = federated::train_dfel(&cfg.federation(), &shards, cfg.seed).unwrap();
        DeskRun {
            train,
            test,
            outcome,
            shards,
            elapsed: start.elapsed(),
        }
    })
}

fn c3_learning() -> Outcome {
    let run = desk_run();
    let model = federated::rmse(&run.outcome.model, &run.test).map_err(|e| e.to_string())?;
    let mean = federated::mean_predictor_rmse(&run.train, &run.test).map_err(|e| e.to_string())?;
    let gain = 1.0 - model / mean;
    check(
        gain >= 0.10,
        format!(
            "DFEL test RMSE {model:.4} vs label-mean {mean:.4}: {:.1}% lower (need >= 10%)",
            100.0 * gain
        ),
    )
}

fn c4_overhead() -> Outcome {
    let run = desk_run();
    let rep = federated::overhead_report(&run.outcome.ledger, &run.shards);
    // the desk run is shared with criterion 3, so its time counts here
    let secs = run.elapsed.as_secs_f64();
    check(
        rep.reduction_pct >= 90.0 && secs < 60.0,
        format!(
            "federated {} B vs centralized {} B: {:.2}% reduction (need >= 90%); desk training run took {secs:.1}s (limit 60s)",
            rep.federated_bytes, rep.centralized_bytes, rep.reduction_pct
        ),
    )
}

// -------------------------------------------------------------- clustering

fn c5_clustering() -> Outcome {
    let mut instances = 0;
    let mut iterations = 0;
    for n in 2..=8usize {
        for rep in 0..25u64 {
            let mut r = rng(500 + 100 * n as u64 + rep);
            let points: Vec<[f64; 2]> = (0..n)
                .map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
                .collect();
            let lo = r.random_range(0..=n / 2);
            let hi = r.random_range(n.div_ceil(2)..=n);
            let ids = (0..n).map(|i| format!("P{i}")).collect();
            let problem = ClusterProblem::new(ids, points, 2, lo, hi).map_err(|e| e.to_string())?;
            let sol = cluster_cs(&problem, rep).map_err(|e| e.to_string())?;
            instances += 1;
            for (i, it) in sol.iterations.iter().enumerate() {
                iterations += 1;
                let (_, best) =
                    brute_force_assign(&problem, &it.centers).ok_or("no bounded assignment")?;
                let got = objective(&problem, &it.membership, &it.centers);
                if (got - best).abs() > 1e-12 * best.abs().max(1.0) {
                    return Err(format!(
                        "n={n} rep={rep} iteration {i}: objective {got} vs brute force {best}"
                    ));
                }
                if i > 0 && it.objective > sol.iterations[i - 1].objective + 1e-12 {
                    return Err(format!("n={n} rep={rep}: objective rose at iteration {i}"));
                }
            }
            let sizes = sol.cluster_sizes(2);
            if sizes.iter().any(|&s| s < lo || s > hi) {
                return Err(format!(
                    "n={n} rep={rep}: sizes {sizes:?} outside [{lo}, {hi}]"
                ));
            }
        }
    }
    Ok(format!("{instances} instances, {iterations} iterations match brute force; bounds and monotone objective hold"))
}

// ------------------------------------------------------------------ market

fn c6_counts() -> Outcome {
    let mut seen = Vec::new();
    for n in [2u32, 5, 10, 50] {
        let model = SgpTypeModel::uniform(n, 500.0, 0.022, 1).map_err(|e| e.to_string())?;
        let menus = vec![
            ContractMenu::zeros("a", n as usize),
            ContractMenu::zeros("b", n as usize),
        ];
        let pi = AllocationVector::new(vec![1.0, 1.0]);
        let full = build_full_constraints(&menus, &pi, &model)
            .map_err(|e| e.to_string())?
            .len();
        let reduced = build_reduced_constraints(&menus, &pi, &model)
            .map_err(|e| e.to_string())?
            .len();
        let n = n as usize;
        if full != n * n + n || reduced != 3 * n + 1 {
            return Err(format!("phi_tot={n}: {full} full / {reduced} reduced rows"));
        }
        seen.push(format!("{n}:{full}/{reduced}"));
    }
    Ok(format!("full/reduced rows {}", seen.join(" ")))
}

fn c7_p1() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 0..20u64 {
        let mut r = rng(700 + s);
        let stations = r.random_range(1..=3usize);
        let n = r.random_range(1..=4u32);
        let model = SgpTypeModel::uniform(n, r.random_range(5.0..80.0), 0.022, 1)
            .map_err(|e| e.to_string())?;
        let menus: Vec<ContractMenu> = (0..stations)
            .map(|i| {
                let mut xi: Vec<f64> = (0..n).map(|_| r.random_range(0.5..40.0)).collect();
                let mut rho: Vec<f64> = (0..n).map(|_| r.random_range(0.01..3.0)).collect();
                xi.sort_by(f64::total_cmp);
                rho.sort_by(f64::total_cmp);
                ContractMenu {
                    cs_id: format!("CS{i}"),
                    rho,
                    xi,
                }
            })
            .collect();
        let phi = r.random_range(1..=n);
        let pi = solve_p1(&menus, phi, &model);
        let solved = market::sgp_utility(phi, &pi, &menus, &model);
        let (_, grid) = p1_grid_oracle(&menus, phi, &model, 1e-4).map_err(|e| e.to_string())?;
        worst = worst.max((solved - grid).abs());
    }
    check(
        worst <= 1e-3,
        format!("max |solve_p1 - grid oracle| = {worst:.2e} over 20 instances (limit 1e-3)"),
    )
}

fn c8_best_response() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let mut r = rng(seed);
        let n_types: u32 = r.random_range(1..=2);
        let n_cs: usize = r.random_range(1..=2);
        let s_max: f64 = r.random_range(10.0..80.0);
        let tt = r.random_range(1..=n_types);
        let model = SgpTypeModel::uniform(n_types, s_max, 0.022, tt).map_err(|e| e.to_string())?;
        let demands: Vec<f64> = (0..n_cs).map(|_| r.random_range(2.0..40.0)).collect();
        let mut config = MarketConfig::with_demands(demands);
        config.max_rounds = 2;
        // a couple of rounds give a non-trivial opponent profile
        let start = iterate_contracts(
            &model,
            &config,
            &initial_menus(&model, &config).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let cs = r.random_range(0..n_cs);
        let br = best_response(
            cs,
            &start.menus,
            &start.pi_hat,
            &model,
            &config,
            &start.menus[cs],
            seed,
        )
        .map_err(|e| e.to_string())?;
        let grid = best_response_grid_oracle(cs, &start.menus, &start.pi_hat, &model, &config, 50)
            .map_err(|e| e.to_string())?;
        let Some(grid) = grid else { continue };
        if !br.feasible {
            return Err(format!(
                "instance {seed}: best response infeasible ({:.2e})",
                br.max_violation
            ));
        }
        let gap = (grid.utility - br.utility) / grid.utility.abs().max(1e-9);
        worst = worst.max(gap);
        lines.push(format!("{:.4}/{:.4}", br.utility, grid.utility));
    }
    check(
        worst <= 0.01,
        format!(
            "worst shortfall vs grid {:.3}% (limit 1%); solver/grid {}",
            100.0 * worst.max(0.0),
            lines.join(" ")
        ),
    )
}

fn desk_model() -> SgpTypeModel {
    SgpTypeModel::uniform(10, 500.0, 0.022, 5).unwrap()
}

fn c9_equilibrium() -> Outcome {
    let model = desk_model();
    let config = MarketConfig::desk(6, 0);
    let init = initial_menus(&model, &config).map_err(|e| e.to_string())?;
    let res = iterate_contracts(&model, &config, &init).map_err(|e| e.to_string())?;
    if !res.converged || res.rounds > 200 {
        return Err(format!("not converged after {} rounds", res.rounds));
    }
    let mut max_gain: f64 = f64::NEG_INFINITY;
    for seed in [1u64, 12345] {
        let gains = best_response_gains(&res, &model, &config, seed).map_err(|e| e.to_string())?;
        max_gain = gains.into_iter().fold(max_gain, f64::max);
    }
    let min_ir = res
        .ir_residuals
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let min_ic = res
        .ic_residuals
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let monotone = res.monotone.iter().all(|&m| m);
    let acc_ok = res
        .acceptances
        .iter()
        .all(|a| a.utility_after - a.utility_before > config.kappa);
    check(
        max_gain <= config.kappa && min_ir >= -1e-6 && min_ic >= -1e-6 && monotone && acc_ok,
        format!(
            "{} rounds, {} acceptances; fresh best-response gain {max_gain:.2e} (kappa 1e-6); min IR {min_ir:.3e}, min IC {min_ic:.3e}, monotone {monotone}, acceptances strictly improving {acc_ok}",
            res.rounds,
            res.acceptances.len()
        ),
    )
}

fn c10_welfare() -> Outcome {
    let model = desk_model();
    let mut gaps = Vec::new();
    let mut rounds = Vec::new();
    let mut ok = true;
    for seed in 0..10u64 {
        let mut config = MarketConfig::desk(6, seed);
        // some seeds approach their fixed point geometrically past 200 rounds
        config.max_rounds = 1000;
        let init = initial_menus(&model, &config).map_err(|e| e.to_string())?;
        let proposed = iterate_contracts(&model, &config, &init).map_err(|e| e.to_string())?;
        let sym =
            market::baseline_information_symmetry(&model, &config).map_err(|e| e.to_string())?;
        let gap = sym.welfare - proposed.welfare;
        ok &= gap >= -1e-6 && proposed.converged;
        gaps.push(format!("{gap:.2}"));
        rounds.push(proposed.rounds.to_string());
    }
    check(
        ok,
        format!(
            "symmetric - proposed welfare per seed: [{}]; rounds [{}]",
            gaps.join(", "),
            rounds.join(", ")
        ),
    )
}

// ----------------------------------------------------------------- pipeline

fn run_cli(out: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_evmarket"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!(
            "`evmarket {}` exited with {status}",
            args.join(" ")
        ))
    }
}

fn collect(dir: &Path, base: &Path, into: &mut BTreeMap<PathBuf, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, base, into)?;
        } else if path
            .file_name()
            .is_some_and(|n| n != evmarket_cli::output::METADATA_FILE)
        {
            into.insert(
                path.strip_prefix(base).unwrap().to_path_buf(),
                std::fs::read(&path)?,
            );
        }
    }
    Ok(())
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        for args in [
            &["gen-data"][..],
            &["train", "--mode", "dfel"],
            &["market"],
            &["experiment", "--name", "figure-suite"],
        ] {
            run_cli(&out, args)?;
        }
        let mut files = BTreeMap::new();
        collect(&out, &out, &mut files).map_err(|e| e.to_string())?;
        trees.push(files);
    }
    let (a, b) = (&trees[0], &trees[1]);
    if a.keys().ne(b.keys()) {
        return Err("the two runs produced different file sets".into());
    }
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} files byte-identical across two runs", a.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "gradient correctness",
            budget: Duration::from_secs(10),
            run: c1_gradients,
        },
        Criterion {
            id: 2,
            name: "federated/centralized equivalence",
            budget: Duration::from_secs(10),
            run: c2_equivalence,
        },
        Criterion {
            id: 3,
            name: "learning at desk scale",
            budget: Duration::MAX,
            run: c3_learning,
        },
        Criterion {
            id: 4,
            name: "communication overhead",
            budget: Duration::from_secs(60),
            run: c4_overhead,
        },
        Criterion {
            id: 5,
            name: "constrained clustering",
            budget: Duration::from_secs(30),
            run: c5_clustering,
        },
        Criterion {
            id: 6,
            name: "constraint-count identities",
            budget: Duration::from_secs(1),
            run: c6_counts,
        },
        Criterion {
            id: 7,
            name: "allocation oracle equivalence",
            budget: Duration::from_secs(120),
            run: c7_p1,
        },
        Criterion {
            id: 8,
            name: "best-response oracle equivalence",
            budget: Duration::from_secs(300),
            run: c8_best_response,
        },
        Criterion {
            id: 9,
            name: "equilibrium audit",
            budget: Duration::from_secs(600),
            run: c9_equilibrium,
        },
        Criterion {
            id: 10,
            name: "welfare ordering",
            budget: Duration::MAX,
            run: c10_welfare,
        },
        Criterion {
            id: 11,
            name: "pipeline determinism",
            budget: Duration::from_secs(900),
            run: c11_determinism,
        },
    ];
    // cargo passes harness flags such as --nocapture; keep only numbers
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| wanted.is_empty() || wanted.contains(&c.id))
    {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let (pass, mut detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let in_time = took <= c.budget;
        if !in_time {
            detail.push_str(&format!("; over the {}s budget", c.budget.as_secs()));
        }
        let pass = pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} [{}]: {} ({:.1}s) {}",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            detail
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion/criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
