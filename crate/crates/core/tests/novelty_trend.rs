//! After training on sequences that repeat one motif, the novelty gate should
//! fire less on the repetitions than on the motif's first occurrence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lznet::autograd::{Tape, Tensor, Var};
use lznet::cells::BiasInit;
use lznet::harness::train::{batch_loss, Targets};
use lznet::harness::{clip_global_norm, Optimizer, OptimizerKind};
use lznet::layer::{LzConfig, ReadoutSource};
use lznet::memory::BackendKind;
use lznet::model::{ModelConfig, ModelKind, Network, ParamSet};

const VOCAB: usize = 6;
const MOTIF: usize = 4;
const REPEATS: usize = 4;
const BATCH: usize = 16;
const HIDDEN: usize = 16;
const STEPS: usize = 300;

/// Token sequences, one per row: a random motif repeated `REPEATS` times.
fn sequences(seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..BATCH)
        .map(|_| {
            let motif: Vec<usize> = (0..MOTIF).map(|_| rng.random_range(0..VOCAB)).collect();
            motif.iter().copied().cycle().take(MOTIF * REPEATS).collect()
        })
        .collect()
}

fn one_hot_steps(seqs: &[Vec<usize>]) -> Vec<Tensor> {
    (0..seqs[0].len())
        .map(|t| {
            let mut data = vec![0.0; seqs.len() * VOCAB];
            for (r, s) in seqs.iter().enumerate() {
                data[r * VOCAB + s[t]] = 1.0;
            }
            Tensor::new(vec![seqs.len(), VOCAB], data).unwrap()
        })
        .collect()
}

fn next_tokens(seqs: &[Vec<usize>]) -> Targets {
    Targets::Tokens((1..seqs[0].len()).map(|t| seqs.iter().map(|s| s[t]).collect()).collect())
}

fn network(seed: u64) -> Network {
    let config = ModelConfig {
        kind: ModelKind::Lz,
        input: VOCAB,
        hidden: HIDDEN,
        output: VOCAB,
        lz: LzConfig::new(BackendKind::Hrr),
        readout: ReadoutSource::FinalHidden,
        bias_init: BiasInit::Zero,
    };
    Network::init(config, seed).unwrap()
}

fn train(seed: u64) -> Network {
    let mut net = network(seed);
    let mut opt = Optimizer::new(OptimizerKind::Adam { beta1: 0.9, beta2: 0.999 }, 1e-2);
    for step in 0..STEPS {
        let seqs = sequences(seed.wrapping_mul(1_000_003).wrapping_add(step as u64));
        let tape = Tape::new();
        let tracked = net.track(&tape);
        let xs: Vec<Var<'_>> = one_hot_steps(&seqs).into_iter().map(|x| tape.constant(x)).collect();
        let fwd = net.forward(&tape, &tracked, &xs, true, 0).unwrap();
        let loss = batch_loss(&fwd.outputs[..xs.len() - 1], &next_tokens(&seqs)).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut g: ParamSet = tracked.vars.iter().map(|(k, v)| (k.clone(), grads.wrt(*v))).collect();
        clip_global_norm(&mut g, 5.0);
        opt.step(&mut net.params, &g).unwrap();
    }
    net
}

/// Mean p over the first occurrence and over all later repetitions.
fn novelty_split(net: &Network, seed: u64) -> (f64, f64) {
    let seqs = sequences(seed);
    let tape = Tape::new();
    let tracked = net.track(&tape);
    let xs: Vec<Var<'_>> = one_hot_steps(&seqs).into_iter().map(|x| tape.constant(x)).collect();
    let fwd = net.forward(&tape, &tracked, &xs, true, 0).unwrap();
    let mean = |ps: &[Var<'_>]| ps.iter().map(|p| p.value().data().iter().sum::<f64>()).sum::<f64>() / (ps.len() * BATCH) as f64;
    (mean(&fwd.ps[..MOTIF]), mean(&fwd.ps[MOTIF..]))
}

#[test]
fn repetitions_look_less_novel_after_training() {
    for seed in 0..3u64 {
        let net = train(seed);
        let (first, later) = novelty_split(&net, u64::MAX - seed);
        println!("seed {seed}: first occurrence p = {first:.4}, repetitions p = {later:.4}");
        assert!(later < first, "seed {seed}: {later} >= {first}");
    }
}
