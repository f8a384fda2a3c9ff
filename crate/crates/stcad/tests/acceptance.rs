//! Acceptance gate: oracle equivalence, gradient checks, structural
//! invariants, the planted-anomaly benchmark, ablation direction, and
//! determinism. Each criterion prints one PASS/FAIL line (run with
//! `--nocapture` to see them).

use std::io::Cursor;
use std::sync::OnceLock;

use rand::Rng;

use stcad::features::{pagerank, shortest_distance, FeatureConfig};
use stcad::graph::{parse_edge_stream, partition_snapshots, Snapshot};
use stcad::metrics::{average_precision, roc_auc};
use stcad::model::{Model, ModelConfig};
use stcad::sampler::{build_test_set, build_training_set};
use stcad::seed::derived_rng;
use stcad::synthetic::{generate, SyntheticConfig};
use stcad::tensor::gradcheck::{check_gradients, pseudo_random, CheckInput, FD_TOL};
use stcad::tensor::Tape;
use stcad::training::{build_dataset_with, train, TrainConfig, TrainOutcome};

fn verdict(name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {name} failed: {detail}");
}

/// Random connected-ish graph as a single snapshot, `n <= 30` nodes.
fn random_snapshot(seed: u64) -> Snapshot {
    let mut rng = derived_rng(seed, "acc-graph", &[]);
    let n = rng.gen_range(2..=30usize);
    let m = rng.gen_range(1..=n * 2);
    let mut text = String::new();
    for k in 0..m {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        text.push_str(&format!("{a} {b} {k}\n"));
    }
    let g = parse_edge_stream(Cursor::new(text)).unwrap();
    partition_snapshots(&g, m).unwrap().remove(0)
}

// -- criterion 1: oracle equivalence ----------------------------------------

fn floyd_warshall(s: &Snapshot) -> Vec<Vec<usize>> {
    let nodes = s.nodes();
    let n = nodes.len();
    let idx = |v| nodes.binary_search(&v).unwrap();
    const INF: usize = usize::MAX / 4;
    let mut d = vec![vec![INF; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for (i, &v) in nodes.iter().enumerate() {
        for &u in s.neighbors(v) {
            d[i][idx(u)] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

fn dense_pagerank(s: &Snapshot, damping: f64, iters: usize) -> Vec<f64> {
    let nodes = s.nodes();
    let n = nodes.len();
    let mut rank = vec![1.0 / n as f64; n];
    let idx = |v| nodes.binary_search(&v).unwrap();
    for _ in 0..iters {
        let mut next = vec![0.0; n];
        let mut dangling = 0.0;
        for (i, &v) in nodes.iter().enumerate() {
            let deg = s.degree(v);
            if deg == 0 {
                dangling += rank[i];
            } else {
                for &u in s.neighbors(v) {
                    next[idx(u)] += damping * rank[i] / deg as f64;
                }
            }
        }
        let base = (1.0 - damping) / n as f64 + damping * dangling / n as f64;
        for x in &mut next {
            *x += base;
        }
        rank = next;
    }
    rank
}

fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
        for (&sj, &lj) in scores.iter().zip(labels).skip(i + 1) {
            if li == lj {
                continue;
            }
            pairs += 1.0;
            let (pos, neg) = if li == 1 { (si, sj) } else { (sj, si) };
            if pos > neg {
                wins += 1.0;
            } else if pos == neg {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn ap_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(labels[a].cmp(&labels[b]))
            .then(a.cmp(&b))
    });
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / n_pos as f64
}

#[test]
fn criterion_oracle_equivalence() {
    // distances vs Floyd-Warshall on 200 random graphs
    let cap = 5;
    let mut worst_dist = 0usize;
    for g in 0..200u64 {
        let s = random_snapshot(g);
        let fw = floyd_warshall(&s);
        let nodes = s.nodes().to_vec();
        for (i, &a) in nodes.iter().enumerate() {
            for (j, &b) in nodes.iter().enumerate() {
                let expect = fw[i][j].min(cap);
                let got = shortest_distance(&s, a, b, cap);
                worst_dist = worst_dist.max(expect.abs_diff(got));
            }
        }
    }

    // pagerank vs dense power iteration
    let mut worst_pr = 0.0f64;
    for g in 0..50u64 {
        let s = random_snapshot(1000 + g);
        let oracle = dense_pagerank(&s, 0.85, 300);
        let got = pagerank(&s, 0.85, 1e-12, 500);
        for (i, &v) in s.nodes().iter().enumerate() {
            worst_pr = worst_pr.max((got[&v] - oracle[i]).abs());
        }
    }

    // metrics vs brute force on 1000 randomized instances
    let mut worst_metric = 0.0f64;
    for inst in 0..1000u64 {
        let mut rng = derived_rng(inst, "acc-metrics", &[]);
        let n = rng.gen_range(5..60usize);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        // quantized scores force ties
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
        let auc = roc_auc(&scores, &labels).unwrap();
        let ap = average_precision(&scores, &labels).unwrap();
        worst_metric = worst_metric.max((auc - auc_oracle(&scores, &labels)).abs());
        worst_metric = worst_metric.max((ap - ap_oracle(&scores, &labels)).abs());
    }

    let pass = worst_dist == 0 && worst_pr < 1e-8 && worst_metric < 1e-12;
    verdict(
        "oracle-equivalence",
        pass,
        &format!("dist diff {worst_dist}, pagerank err {worst_pr:.2e}, metric err {worst_metric:.2e}"),
    );
}

// -- criterion 2: gradient suite ---------------------------------------------

#[test]
fn criterion_gradient_suite() {
    let mut worst = 0.0f64;
    let mut check = |inputs: &[CheckInput], f: &dyn Fn(&mut Tape, &[stcad::tensor::TensorId]) -> stcad::tensor::TensorId| {
        worst = worst.max(check_gradients(inputs, f));
    };
    let a34 = CheckInput::new(3, 4, pseudo_random(12, 1));
    let b42 = CheckInput::new(4, 2, pseudo_random(8, 2));
    let c34 = CheckInput::new(3, 4, pseudo_random(12, 3));
    let row4 = CheckInput::new(1, 4, pseudo_random(4, 4));
    let reduce_u = CheckInput::new(1, 3, pseudo_random(3, 5));
    let reduce_v = CheckInput::new(4, 1, pseudo_random(4, 6));

    // each op is wrapped into the scalar reduction u X v to get a loss
    check(&[a34.clone(), b42.clone()], &|tape, ids| {
        let u = tape.leaf(1, 3, pseudo_random(3, 5));
        let v = tape.leaf(2, 1, pseudo_random(2, 6));
        let m = tape.matmul(ids[0], ids[1]).unwrap();
        let ux = tape.matmul(u, m).unwrap();
        tape.matmul(ux, v).unwrap()
    });
    check(&[a34.clone(), c34.clone()], &|tape, ids| {
        let u = tape.leaf(1, 3, pseudo_random(3, 7));
        let v = tape.leaf(3, 1, pseudo_random(3, 8));
        let m = tape.matmul_bt(ids[0], ids[1]).unwrap();
        let ux = tape.matmul(u, m).unwrap();
        tape.matmul(ux, v).unwrap()
    });
    for op in 0..8 {
        check(&[a34.clone(), c34.clone(), reduce_u.clone(), reduce_v.clone()], &move |tape, ids| {
            let x = match op {
                0 => tape.add(ids[0], ids[1]).unwrap(),
                1 => tape.scale(ids[0], -1.75),
                2 => tape.softmax_rows(ids[0]),
                3 => tape.relu(ids[0]),
                4 => tape.sigmoid(ids[0]),
                5 => {
                    let parts = [
                        tape.slice_cols(ids[0], 0, 2).unwrap(),
                        tape.slice_cols(ids[1], 2, 2).unwrap(),
                    ];
                    tape.concat_cols(&parts).unwrap()
                }
                6 => tape.mask_row(ids[0], 1).unwrap(),
                _ => {
                    let m = tape.mean_rows(ids[0]);
                    // broadcast the row mean back over the other matrix
                    tape.add_row_broadcast(ids[1], m).unwrap()
                }
            };
            let ux = tape.matmul(ids[2], x).unwrap();
            tape.matmul(ux, ids[3]).unwrap()
        });
    }
    // layer norm
    check(
        &[
            a34.clone(),
            CheckInput::new(1, 4, pseudo_random(4, 9)),
            CheckInput::new(1, 4, pseudo_random(4, 10)),
            reduce_u.clone(),
            reduce_v.clone(),
        ],
        &|tape, ids| {
            let ln = tape.layer_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
            let ux = tape.matmul(ids[3], ln).unwrap();
            tape.matmul(ux, ids[4]).unwrap()
        },
    );
    // bce + kl + mean of scalars
    check(&[a34.clone(), c34.clone(), row4.clone()], &|tape, ids| {
        let w = tape.leaf(4, 1, pseudo_random(4, 11));
        let lin = tape.matmul(ids[2], w).unwrap();
        let score = tape.sigmoid(lin);
        let bce = tape.bce_scalar(score, 1.0).unwrap();
        let kl = tape.kl_rows(ids[0], ids[1]).unwrap();
        tape.mean_scalars(&[bce, kl]).unwrap()
    });

    // full model joint loss: one transformer layer, all weights as leaves
    let k = 3;
    let d = 4;
    let d_ff = 6;
    let inputs = vec![
        CheckInput::new(k, d, pseudo_random(k * d, 20)), // input sequence
        CheckInput::new(d, d, pseudo_random(d * d, 21)), // w_q
        CheckInput::new(d, d, pseudo_random(d * d, 22)), // w_k
        CheckInput::new(d, d, pseudo_random(d * d, 23)), // w_v
        CheckInput::new(d, d, pseudo_random(d * d, 24)), // w_o
        CheckInput::new(1, d, pseudo_random(d, 25).iter().map(|x| 1.0 + 0.1 * x).collect()), // ln gain
        CheckInput::new(1, d, pseudo_random(d, 26)),     // ln bias
        CheckInput::new(d, d_ff, pseudo_random(d * d_ff, 27)), // ffn w1
        CheckInput::new(d_ff, d, pseudo_random(d_ff * d, 28)), // ffn w2
        CheckInput::new(d, 1, pseudo_random(d, 29)),     // scorer
        CheckInput::new(d, d, pseudo_random(d * d, 30)), // decoder (d -> d)
    ];
    let encode = |tape: &mut Tape, x, ids: &[stcad::tensor::TensorId]| {
        let q = tape.matmul(x, ids[1]).unwrap();
        let kk = tape.matmul(x, ids[2]).unwrap();
        let v = tape.matmul(x, ids[3]).unwrap();
        let raw = tape.matmul_bt(q, kk).unwrap();
        let scaled = tape.scale(raw, 1.0 / (d as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        let o = tape.matmul(attn, v).unwrap();
        let proj = tape.matmul(o, ids[4]).unwrap();
        let sum1 = tape.add(proj, q).unwrap();
        let h1 = tape.layer_norm(sum1, ids[5], ids[6], 1e-5).unwrap();
        let f1 = tape.matmul(h1, ids[7]).unwrap();
        let act = tape.relu(f1);
        let f2 = tape.matmul(act, ids[8]).unwrap();
        let sum2 = tape.add(f2, h1).unwrap();
        tape.layer_norm(sum2, ids[5], ids[6], 1e-5).unwrap()
    };
    worst = worst.max(check_gradients(&inputs, |tape, ids| {
        let h = encode(tape, ids[0], ids);
        let emb = tape.mean_rows(h);
        let lin = tape.matmul(emb, ids[9]).unwrap();
        let score = tape.sigmoid(lin);
        let bce = tape.bce_scalar(score, 1.0).unwrap();
        let masked = tape.mask_row(ids[0], 1).unwrap();
        let h2 = encode(tape, masked, ids);
        let rec = tape.matmul(h2, ids[10]).unwrap();
        let kl = tape.kl_rows(ids[0], rec).unwrap();
        let sum = tape.add(bce, kl).unwrap();
        tape.scale(sum, 0.5)
    }));

    verdict(
        "gradient-suite",
        worst < FD_TOL,
        &format!("worst relative error {worst:.2e} (tol {FD_TOL:.0e})"),
    );
}

// -- criterion 3: structural invariants --------------------------------------

#[test]
fn criterion_structural_invariants() {
    let mut ok = true;
    let mut detail = Vec::new();

    // softmax row sums
    let mut worst_sm = 0.0f64;
    for s in 0..20u64 {
        let mut tape = Tape::new();
        let x = tape.leaf(6, 7, pseudo_random(42, 100 + s).iter().map(|v| 10.0 * v).collect());
        let sm = tape.softmax_rows(x);
        for i in 0..6 {
            let sum: f64 = tape.values(sm)[i * 7..(i + 1) * 7].iter().sum();
            worst_sm = worst_sm.max((sum - 1.0).abs());
        }
    }
    ok &= worst_sm < 1e-12;
    detail.push(format!("softmax row-sum err {worst_sm:.1e}"));

    // attention rows stochastic on a real model
    let config = ModelConfig::default();
    let model = Model::new(config, 1).unwrap();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let input = tape.leaf(config.seq_len(), config.d, pseudo_random(config.seq_len() * config.d, 7));
    let mut attn = Vec::new();
    model.encode(&mut tape, &bound, input, Some(&mut attn)).unwrap();
    let mut worst_attn = 0.0f64;
    for a in attn {
        let (r, c) = tape.shape(a);
        for i in 0..r {
            let sum: f64 = tape.values(a)[i * c..(i + 1) * c].iter().sum();
            worst_attn = worst_attn.max((sum - 1.0).abs());
        }
    }
    ok &= worst_attn < 1e-12;
    detail.push(format!("attention row-sum err {worst_attn:.1e}"));

    // pagerank sums to 1 on every synthetic snapshot
    let syn = generate(&SyntheticConfig::default(), 3).unwrap();
    let mut worst_pr = 0.0f64;
    for s in &syn.snapshots {
        let sum: f64 = pagerank(s, 0.85, 1e-10, 200).values().sum();
        worst_pr = worst_pr.max((sum - 1.0).abs());
    }
    ok &= worst_pr < 1e-9;
    detail.push(format!("pagerank sum err {worst_pr:.1e}"));

    // exact training class balance
    let train_set = build_training_set(&syn.graph, &syn.snapshots, 0.5, 5, 4, 9).unwrap();
    let pos = train_set.iter().filter(|s| s.label == 0).count();
    let neg = train_set.iter().filter(|s| s.label == 1).count();
    ok &= pos == neg && pos > 0;
    detail.push(format!("train balance {pos}/{neg}"));

    // injected test pairs absent from every snapshot
    let test_set = build_test_set(&syn.graph, &syn.snapshots, 0.5, 0.1, 5, 4, 9).unwrap();
    let mut absent = true;
    for s in test_set.iter().filter(|s| s.label == 1) {
        absent &= !syn.graph.pair_exists(s.central.0, s.central.1);
        for snap in &syn.snapshots {
            absent &= !snap.contains_pair(s.central.0, s.central.1);
        }
    }
    ok &= absent;
    detail.push(format!("injected pairs absent: {absent}"));

    // K = 28 at default config
    let k28 = ModelConfig::default().seq_len() == 28;
    ok &= k28;
    detail.push(format!("K = {}", ModelConfig::default().seq_len()));

    verdict("structural-invariants", ok, &detail.join(", "));
}

// -- criteria 4 and 5: synthetic benchmark and ablations ----------------------

const BENCH_SEEDS: [u64; 5] = [11, 22, 33, 44, 55];

fn bench_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 50,
        seed,
        inject_rate: 0.1,
        eval_every: 10,
        ..TrainConfig::default()
    }
}

fn run_bench(seed: u64, mutate: impl Fn(&mut TrainConfig)) -> TrainOutcome {
    let syn = generate(&SyntheticConfig::default(), seed).unwrap();
    let mut cfg = bench_train_config(seed);
    mutate(&mut cfg);
    let dataset = build_dataset_with(
        &syn.graph,
        &syn.snapshots,
        &cfg,
        &FeatureConfig::default(),
        |end, k| {
            let mut rng = derived_rng(seed, "inject", &[end as u64, k as u64]);
            Ok(syn.cross_community_pair(&mut rng))
        },
    )
    .unwrap();
    train(&dataset, &cfg).unwrap()
}

struct BenchResults {
    full: Vec<(f64, f64)>,
    no_coupling: Vec<(f64, f64)>,
    no_pe: Vec<(f64, f64)>,
}

fn bench_results() -> &'static BenchResults {
    static RESULTS: OnceLock<BenchResults> = OnceLock::new();
    RESULTS.get_or_init(|| {
        use rayon::prelude::*;
        let variants: Vec<(usize, u64)> = (0..3)
            .flat_map(|v| BENCH_SEEDS.iter().map(move |&s| (v, s)))
            .collect();
        let mut out: Vec<((usize, u64), (f64, f64))> = variants
            .par_iter()
            .map(|&(variant, seed)| {
                let outcome = run_bench(seed, |cfg| match variant {
                    0 => {}
                    1 => cfg.model.use_level2 = false,
                    _ => {
                        cfg.model.use_pe_tmp = false;
                        cfg.model.use_pe_rel = false;
                    }
                });
                ((variant, seed), (outcome.report.best.auc, outcome.report.best.ap))
            })
            .collect();
        out.sort_by_key(|&((v, s), _)| (v, s));
        let slice = |v: usize| {
            out.iter()
                .filter(|&&((var, _), _)| var == v)
                .map(|&(_, m)| m)
                .collect::<Vec<_>>()
        };
        BenchResults {
            full: slice(0),
            no_coupling: slice(1),
            no_pe: slice(2),
        }
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_synthetic_planted_anomalies() {
    let results = bench_results();
    let mean_auc = mean(results.full.iter().map(|m| m.0));
    let mean_ap = mean(results.full.iter().map(|m| m.1));
    verdict(
        "synthetic-benchmark",
        mean_auc >= 0.90 && mean_ap >= 0.60,
        &format!("mean AUC {mean_auc:.4} (>= 0.90), mean AP {mean_ap:.4} (>= 0.60) over {} seeds", BENCH_SEEDS.len()),
    );
}

#[test]
fn criterion_ablation_direction() {
    let results = bench_results();
    let full = mean(results.full.iter().map(|m| m.1));
    let cf = mean(results.no_coupling.iter().map(|m| m.1));
    let pe = mean(results.no_pe.iter().map(|m| m.1));
    verdict(
        "ablation-direction",
        cf < full && pe < full,
        &format!("mean AP full {full:.4}, no-coupling {cf:.4}, no-pe {pe:.4}"),
    );
}

// -- criterion 6: real-data smoke run (opt-in) --------------------------------

/// Needs the UCI-Message edge list on disk; point `UCI_MESSAGE_PATH` at it
/// and run with `--ignored`. Uses window = 2 because 16000 edges at snapshot
/// size 4000 give only 4 snapshots.
#[test]
#[ignore]
fn criterion_uci_smoke() {
    let path = std::env::var("UCI_MESSAGE_PATH").expect("set UCI_MESSAGE_PATH");
    let text = std::fs::read_to_string(path).unwrap();
    let first: String = text.lines().take(16000).map(|l| format!("{l}\n")).collect();
    let graph = parse_edge_stream(Cursor::new(first)).unwrap();
    let snapshots = partition_snapshots(&graph, 4000).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        seed: 1,
        inject_rate: 0.1,
        eval_every: 10,
        model: ModelConfig {
            window: 2,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let dataset = stcad::training::build_dataset(
        &graph,
        &snapshots,
        &cfg,
        &FeatureConfig::default(),
    )
    .unwrap();
    let outcome = train(&dataset, &cfg).unwrap();
    verdict(
        "uci-smoke",
        outcome.report.best.auc >= 0.80,
        &format!("best AUC {:.4} (>= 0.80)", outcome.report.best.auc),
    );
}

// -- criterion 7: determinism -------------------------------------------------

#[test]
fn criterion_determinism() {
    let syn = generate(&SyntheticConfig::default(), 77).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed: 77,
        inject_rate: 0.1,
        eval_every: 2,
        ..TrainConfig::default()
    };
    let run = || {
        let dataset = stcad::training::build_dataset(
            &syn.graph,
            &syn.snapshots,
            &cfg,
            &FeatureConfig::default(),
        )
        .unwrap();
        let outcome = train(&dataset, &cfg).unwrap();
        let report = serde_json::to_vec(&outcome.report).unwrap();
        let mut ckpt = Vec::new();
        outcome.model.params.save(&mut ckpt).unwrap();
        (report, ckpt)
    };
    let (report_a, ckpt_a) = run();
    let (report_b, ckpt_b) = run();
    let pass = report_a == report_b && ckpt_a == ckpt_b;
    verdict(
        "determinism",
        pass,
        &format!(
            "report bytes {} (equal: {}), checkpoint bytes {} (equal: {})",
            report_a.len(),
            report_a == report_b,
            ckpt_a.len(),
            ckpt_a == ckpt_b
        ),
    );
}
