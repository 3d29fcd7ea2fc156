//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! for each and exits non-zero if any failed.
//!
//! The training criteria take several minutes each; the whole suite runs in
//! roughly half an hour on one core.

use std::collections::HashSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lznet::autograd::Tensor;
use lznet::bench::{round_trip, separability};
use lznet::cells::{init_lstm, LstmParams, NoveltyParams};
use lznet::gradcheck::{composite_suite, primitive_suite, COMPOSITE_RTOL, PRIMITIVE_RTOL};
use lznet::harness::{train, TrainConfig};
use lznet::layer::{lstm_forward, lz_forward, LzConfig};
use lznet::lz::{jaccard_distance, lz_digest};
use lznet::memory::BackendKind;
use lznet::tasks::{addition_baseline_mse, copy_baseline_ce, frequency_motifs, gen_addition, write_ucr_tsv};

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn set_all(cfg: &mut TrainConfig, pairs: &[(&str, &str)]) {
    for (k, v) in pairs {
        cfg.set(k, v).unwrap_or_else(|e| panic!("{k}={v}: {e}"));
    }
}

fn run_training(dir: &Path, name: &str, pairs: &[(&str, &str)]) -> Vec<lznet::harness::MetricsRow> {
    let mut cfg = TrainConfig::default();
    set_all(&mut cfg, pairs);
    cfg.set("metrics", dir.join(format!("{name}.csv")).to_str().unwrap()).unwrap();
    train(&cfg).unwrap_or_else(|e| panic!("{name}: {e}")).rows
}

fn min_loss(rows: &[lznet::harness::MetricsRow], split: &str) -> f64 {
    rows.iter().filter(|r| r.split == split).map(|r| r.loss).fold(f64::INFINITY, f64::min)
}

fn digest_fidelity() -> Outcome {
    let set = |s: &str| -> HashSet<Vec<u8>> { lz_digest(s.as_bytes()).entries().iter().cloned().collect() };
    let expect = |xs: &[&str]| -> HashSet<Vec<u8>> { xs.iter().map(|x| x.as_bytes().to_vec()).collect() };
    let a = set("aabbaba") == expect(&["a", "ab", "b", "aba"]);
    let b = set("aabbba") == expect(&["a", "ab", "b", "ba"]);
    outcome(a && b, format!("aabbaba {}, aabbba {}", if a { "exact" } else { "wrong" }, if b { "exact" } else { "wrong" }))
}

fn lzjd_properties() -> Outcome {
    let start = Instant::now();
    // |{a,ab,b}| / |{a,ab,b,aba,ba}|
    let oracle = 1.0 - 3.0 / 5.0;
    let pair = jaccard_distance(&lz_digest(b"aabbaba"), &lz_digest(b"aabbba"));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut random = || {
        let len = rng.random_range(1..40);
        let alpha = rng.random_range(2..5u8);
        let s: Vec<u8> = (0..len).map(|_| b'a' + rng.random_range(0..alpha)).collect();
        lz_digest(&s)
    };
    let mut violations = 0;
    for _ in 0..1000 {
        let (x, y, z) = (random(), random(), random());
        let (xy, yx, xz, yz) = (
            jaccard_distance(&x, &y),
            jaccard_distance(&y, &x),
            jaccard_distance(&x, &z),
            jaccard_distance(&y, &z),
        );
        let same: HashSet<_> = x.entries().iter().collect::<HashSet<_>>();
        let other: HashSet<_> = y.entries().iter().collect::<HashSet<_>>();
        let identity = jaccard_distance(&x, &x) == 0.0 && ((xy == 0.0) == (same == other));
        if xy != yx || !identity || xz > xy + yz + 1e-12 {
            violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (pair - oracle).abs() <= 1e-12 && violations == 0 && secs < 10.0,
        format!("pair distance {pair}, {violations} axiom violations in 1000 triples, {secs:.2} s"),
    )
}

fn addition_baseline() -> Outcome {
    let start = Instant::now();
    let batch = gen_addition(2, 1_000_000, 9).unwrap();
    let mse = batch.targets.iter().map(|y| (y - 1.0).powi(2)).sum::<f64>() / 1e6;
    let secs = start.elapsed().as_secs_f64();
    let reported = 0.167;
    outcome(
        (mse - 1.0 / 6.0).abs() <= 0.002 && (addition_baseline_mse() - reported).abs() < 5e-4 && secs < 30.0,
        format!("Monte Carlo MSE {mse:.5} (1/6 = {:.5}), {secs:.2} s", 1.0 / 6.0),
    )
}

fn copy_baseline() -> Outcome {
    let worst = [100usize, 200, 300, 500, 1000, 2000]
        .iter()
        .map(|&t| (copy_baseline_ce(10, 8, t) - 10.0 * 8f64.ln() / (t + 20) as f64).abs())
        .fold(0.0, f64::max);
    outcome(worst <= 1e-12, format!("max deviation {worst:e} over T in 100..2000"))
}

fn vsa_round_trips() -> Outcome {
    let start = Instant::now();
    let stats = |xs: Vec<f64>| (xs.iter().sum::<f64>() / xs.len() as f64, xs.iter().cloned().fold(f64::INFINITY, f64::min));
    let (hm, hmin) = stats(round_trip(BackendKind::Hrr, 256, 100, 0).unwrap());
    let (vm, vmin) = stats(round_trip(BackendKind::Vtb, 256, 100, 0).unwrap());
    let secs = start.elapsed().as_secs_f64();
    outcome(
        hmin >= 0.99 && vmin >= 0.95 && secs < 30.0,
        format!("HRR mean {hm:.4} min {hmin:.4} (>= 0.99); VTB mean {vm:.4} min {vmin:.4} (>= 0.95); {secs:.2} s"),
    )
}

fn memory_separability() -> Outcome {
    let start = Instant::now();
    let s = separability(BackendKind::Hrr, 1024, 20, 1000, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        s.accuracy >= 0.95 && secs < 60.0,
        format!("accuracy {:.4} at threshold {:.4}, {secs:.2} s", s.accuracy, s.threshold),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let prim = primitive_suite(0).unwrap();
    let comp = composite_suite(0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let bounds = PRIMITIVE_RTOL <= 1e-4 && COMPOSITE_RTOL <= 1e-3;
    let failed: Vec<&str> = prim.iter().chain(&comp).filter(|r| !r.passed()).map(|r| r.name).collect();
    let covered = ["lstm_cell", "novelty_score", "lz_forward[hrr]", "lz_forward[vtb]"]
        .iter()
        .all(|n| comp.iter().any(|r| r.name == *n));
    outcome(
        bounds && covered && failed.is_empty() && secs < 300.0,
        format!("{} primitives, {} composites, failed {:?}, {secs:.2} s", prim.len(), comp.len(), failed),
    )
}

/// Straight scalar LSTM, gate order input, forget, candidate, output.
fn scalar_lstm(x: &Tensor, p: &LstmParams) -> Vec<Vec<f64>> {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let (steps, input) = x.dims();
    let hidden = p.hidden_size();
    let (w_ih, w_hh, b) = (p.w_ih.data(), p.w_hh.data(), p.bias.data());
    let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
    let mut out = Vec::new();
    for t in 0..steps {
        let xt = x.row(t);
        let gate = |k: usize| -> f64 {
            let mut z = b[k];
            for (i, xi) in xt.iter().enumerate().take(input) {
                z += xi * w_ih[i * 4 * hidden + k];
            }
            for (j, hj) in h.iter().enumerate() {
                z += hj * w_hh[j * 4 * hidden + k];
            }
            z
        };
        let mut nh = vec![0.0; hidden];
        for u in 0..hidden {
            let i = sig(gate(u));
            let f = sig(gate(hidden + u));
            let g = gate(2 * hidden + u).tanh();
            let o = sig(gate(3 * hidden + u));
            c[u] = f * c[u] + i * g;
            nh[u] = o * c[u].tanh();
        }
        h = nh;
        out.push(h.clone());
    }
    out
}

fn reduction_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let lstm = init_lstm(3, 9, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let steps = rng.random_range(1..16);
        let data = (0..steps * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![steps, 3], data).unwrap();
        let plain = lstm_forward(&x, &lstm).unwrap();
        let oracle = scalar_lstm(&x, &lstm);
        for backend in [BackendKind::Hrr, BackendKind::Vtb, BackendKind::Hopfield] {
            let out = lz_forward(&x, &lstm, &NoveltyParams::constant(9, -1e3), &LzConfig::new(backend), seed).unwrap();
            assert!(out.p_mask.iter().all(|&p| p == 0.0));
            for t in 0..steps {
                for u in 0..9 {
                    let v = out.h_hats.row(t)[u];
                    worst = worst.max((v - plain.row(t)[u]).abs()).max((v - oracle[t][u]).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-12, format!("max |h_lz - h_lstm| = {worst:e} over 10 sequences x 3 backends"))
}

const ADDITION: &[(&str, &str)] = &[
    ("task", "addition"),
    ("seq-len", "100"),
    ("hidden", "64"),
    ("batch", "32"),
    ("batches-per-epoch", "80"),
    ("eval-batches", "2"),
    ("epochs", "100"),
    ("optimizer", "rmsprop"),
    ("lr", "1e-3"),
    ("decay", "0.9"),
    ("seed", "0"),
];

fn addition_training(dir: &Path) -> Outcome {
    let start = Instant::now();
    let lstm = run_training(dir, "addition_lstm", &[ADDITION, &[("model", "lstm")]].concat());
    // With b = 0 the novelty gate saturates near 1 while the loss is still at
    // the baseline and the carried state never recovers; b = -1 keeps it low.
    let lz = run_training(
        dir,
        "addition_lzhrr",
        &[ADDITION, &[("model", "lz"), ("backend", "hrr"), ("bias-init", "-1")]].concat(),
    );
    let secs = start.elapsed().as_secs_f64();
    let (a, b) = (min_loss(&lstm, "train"), min_loss(&lz, "train"));
    let final_lz = lz.iter().rev().find(|r| r.split == "train").map(|r| r.loss).unwrap_or(f64::NAN);
    outcome(
        a < 0.05 && b < 0.05 && secs <= 1800.0,
        format!(
            "best train MSE: LSTM {a:.4}, LZHRR b=-1 {b:.4} (final {final_lz:.4}); need < 0.05 within 100 epochs; {:.1} min",
            secs / 60.0
        ),
    )
}

const COPY: &[(&str, &str)] = &[
    ("task", "copy"),
    ("seq-len", "100"),
    ("copy-n", "10"),
    ("copy-m", "8"),
    ("hidden", "64"),
    ("batch", "20"),
    ("batches-per-epoch", "20"),
    ("eval-batches", "2"),
    ("epochs", "200"),
    ("optimizer", "rmsprop"),
    ("lr", "1e-3"),
    ("decay", "0.9"),
    ("seed", "0"),
];

fn copy_training(dir: &Path) -> Outcome {
    let start = Instant::now();
    let baseline = copy_baseline_ce(10, 8, 100);
    let lstm = run_training(dir, "copy_lstm", &[COPY, &[("model", "lstm")]].concat());
    let lz = run_training(dir, "copy_lzhrr", &[COPY, &[("model", "lz"), ("backend", "hrr")]].concat());
    let secs = start.elapsed().as_secs_f64();
    let best = min_loss(&lstm, "train");
    let lz_train: Vec<f64> = lz.iter().filter(|r| r.split == "train").map(|r| r.loss).collect();
    let finite = lz.iter().all(|r| r.loss.is_finite());
    let window = 20.min(lz_train.len() / 2).max(1);
    let head = lz_train[..window].iter().sum::<f64>() / window as f64;
    let tail = lz_train[lz_train.len() - window..].iter().sum::<f64>() / window as f64;
    outcome(
        best < baseline && finite && tail < head,
        format!(
            "LSTM best train CE {best:.4} (baseline {baseline:.4}); LZHRR finite {finite}, first {window} epochs {head:.4} -> last {window} {tail:.4}; {:.1} min",
            secs / 60.0
        ),
    )
}

const UCR: &[(&str, &str)] = &[
    ("task", "ucr"),
    ("model", "lz"),
    ("backend", "hrr"),
    ("hidden", "64"),
    ("batch", "10"),
    ("epochs", "30"),
    ("optimizer", "adam"),
    ("lr", "1e-3"),
    ("seed", "0"),
];

fn ucr_run(dir: &Path, name: &str, bias: &str) -> Vec<lznet::harness::MetricsRow> {
    let train_path = dir.join("motifs_TRAIN.tsv");
    let test_path = dir.join("motifs_TEST.tsv");
    let pairs = [
        UCR,
        &[
            ("bias-init", bias),
            ("ucr-train", train_path.to_str().unwrap()),
            ("ucr-test", test_path.to_str().unwrap()),
        ],
    ]
    .concat();
    run_training(dir, name, &pairs)
}

fn write_motifs(dir: &Path) {
    let data = frequency_motifs(100, 100, 64, 0);
    write_ucr_tsv(dir.join("motifs_TRAIN.tsv"), &data.train).unwrap();
    write_ucr_tsv(dir.join("motifs_TEST.tsv"), &data.test).unwrap();
}

fn classification(dir: &Path) -> Outcome {
    let start = Instant::now();
    write_motifs(dir);
    let mut parts = Vec::new();
    let mut best: f64 = 0.0;
    for (name, bias) in [("minus", "-1"), ("zero", "0"), ("plus", "1")] {
        let rows = ucr_run(dir, &format!("ucr_b_{name}"), bias);
        let acc = rows.iter().rev().find(|r| r.split == "test").and_then(|r| r.accuracy).unwrap_or(0.0);
        best = best.max(acc);
        parts.push(format!("b={bias}: {acc:.3}"));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        best > 0.9 && secs < 600.0,
        format!("final test accuracy {}; need > 0.9 for some b; {:.1} min", parts.join(", "), secs / 60.0),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let first = dir.join("ucr_b_zero.csv");
    if !first.exists() {
        write_motifs(dir);
        ucr_run(dir, "ucr_b_zero", "0");
    }
    ucr_run(dir, "ucr_b_zero_again", "0");
    let a = std::fs::read(first).unwrap();
    let b = std::fs::read(dir.join("ucr_b_zero_again.csv")).unwrap();
    outcome(a == b, format!("repeated b=0 classification run: {} bytes, identical {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let criteria: Vec<(&str, Check<'_>)> = vec![
        ("LZ digest fidelity", Box::new(digest_fidelity)),
        ("LZJD properties", Box::new(lzjd_properties)),
        ("addition baseline", Box::new(addition_baseline)),
        ("copy baseline", Box::new(copy_baseline)),
        ("VSA round trips", Box::new(vsa_round_trips)),
        ("memory separability", Box::new(memory_separability)),
        ("gradient suite", Box::new(gradient_suite)),
        ("reduction equivalence", Box::new(reduction_equivalence)),
        ("desk-scale addition training", Box::new(|| addition_training(d))),
        ("desk-scale copy training", Box::new(|| copy_training(d))),
        ("end-to-end classification", Box::new(|| classification(d))),
        ("determinism", Box::new(|| determinism(d))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        if !r.pass {
            failed += 1;
        }
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] {:>2}. {name}: {}", i + 1, r.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
