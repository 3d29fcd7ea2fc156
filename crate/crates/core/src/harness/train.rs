use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{add_all, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layer::LzConfig;
use crate::model::{mean_novelty, ModelConfig, ModelKind, Network, ParamSet, Predictor};
use crate::tasks::{gen_addition, gen_copy, load_ucr_pair, load_ucr_tsv, znormalize, UcrDataset};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::{TaskKind, TrainConfig};
use super::metrics::{MetricsRow, MetricsWriter};
use super::optim::{clip_global_norm, Optimizer};

/// The data side of a run.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskData {
    Addition { seq_len: usize },
    Copy { n: usize, m: usize, delay: usize },
    Ucr(UcrDataset),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    /// One target token per row, for every step.
    Tokens(Vec<Vec<usize>>),
    Classes(Vec<usize>),
}

/// Step inputs (`[B, I]` each) and what the model should produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Tensor>,
    pub targets: Targets,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.dims().0)
    }
}

const VALID_STREAM: u64 = u64::MAX;

/// Deterministic seed for `(seed, a, b)`.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn ucr_batch(rows: &[&(usize, Vec<f64>)]) -> Result<Batch> {
    let len = rows[0].1.len();
    let inputs = (0..len)
        .map(|t| Tensor::matrix(rows.len(), 1, rows.iter().map(|r| r.1[t]).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch {
        inputs,
        targets: Targets::Classes(rows.iter().map(|r| r.0).collect()),
    })
}

impl TaskData {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        Ok(match cfg.task {
            TaskKind::Addition => TaskData::Addition { seq_len: cfg.seq_len },
            TaskKind::Copy => TaskData::Copy {
                n: cfg.copy_n,
                m: cfg.copy_m,
                delay: cfg.seq_len,
            },
            TaskKind::Ucr => {
                let train = cfg
                    .ucr_train
                    .as_ref()
                    .ok_or_else(|| Error::Config("task ucr needs `ucr-train`".into()))?;
                let data = match &cfg.ucr_test {
                    Some(test) => load_ucr_pair(train, test)?,
                    None => load_ucr_tsv(train)?,
                };
                if data.train.is_empty() {
                    return Err(Error::EmptyTrainingSet);
                }
                TaskData::Ucr(if cfg.znormalize { znormalize(data) } else { data })
            }
        })
    }

    pub fn input_width(&self) -> usize {
        match self {
            TaskData::Addition { .. } => 2,
            TaskData::Copy { m, .. } => m + 2,
            TaskData::Ucr(_) => 1,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            TaskData::Addition { .. } => 1,
            TaskData::Copy { m, .. } => m + 2,
            TaskData::Ucr(d) => d.num_classes,
        }
    }

    pub fn per_step(&self) -> bool {
        matches!(self, TaskData::Copy { .. })
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, TaskData::Ucr(_))
    }

    /// Name of the held-out split.
    pub fn eval_split(&self) -> &'static str {
        match self {
            TaskData::Ucr(d) if d.test.is_empty() => "train",
            TaskData::Ucr(_) => "test",
            _ => "valid",
        }
    }

    pub fn synthetic_batch(&self, batch: usize, seed: u64) -> Result<Batch> {
        match *self {
            TaskData::Addition { seq_len } => {
                let b = gen_addition(seq_len, batch, seed)?;
                Ok(Batch {
                    inputs: (0..seq_len).map(|t| b.step_input(t)).collect(),
                    targets: Targets::Regression(b.targets),
                })
            }
            TaskData::Copy { n, m, delay } => {
                let b = gen_copy(n, m, delay, batch, seed)?;
                Ok(Batch {
                    inputs: (0..b.seq_len()).map(|t| b.step_input(t)).collect(),
                    targets: Targets::Tokens((0..b.seq_len()).map(|t| b.step_targets(t)).collect()),
                })
            }
            TaskData::Ucr(_) => Err(Error::InvalidArgument("UCR data is not generated".into())),
        }
    }

    /// Training batches of epoch `epoch` (1-based). Synthetic tasks draw fresh
    /// data; UCR shuffles the training split.
    pub fn train_batches(&self, cfg: &TrainConfig, epoch: usize) -> Result<Vec<Batch>> {
        match self {
            TaskData::Ucr(d) => {
                let mut order: Vec<usize> = (0..d.train.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 0)));
                order
                    .chunks(cfg.batch)
                    .map(|c| ucr_batch(&c.iter().map(|&i| &d.train[i]).collect::<Vec<_>>()))
                    .collect()
            }
            _ => (0..cfg.batches_per_epoch)
                .map(|k| self.synthetic_batch(cfg.batch, derive_seed(cfg.seed, epoch as u64, k as u64)))
                .collect(),
        }
    }

    /// Fixed held-out batches.
    pub fn eval_batches(&self, batch: usize, n_batches: usize, seed: u64) -> Result<Vec<Batch>> {
        match self {
            TaskData::Ucr(d) => {
                let rows = if d.test.is_empty() { &d.train } else { &d.test };
                rows.chunks(batch)
                    .map(|c| ucr_batch(&c.iter().collect::<Vec<_>>()))
                    .collect()
            }
            _ => (0..n_batches)
                .map(|k| self.synthetic_batch(batch, derive_seed(seed, VALID_STREAM, k as u64)))
                .collect(),
        }
    }
}

/// Differentiable batch loss.
pub fn batch_loss<'t>(outputs: &[Var<'t>], targets: &Targets) -> Result<Var<'t>> {
    match targets {
        Targets::Regression(y) => outputs[0].mse(y),
        Targets::Classes(y) => outputs[0].softmax_cross_entropy(y),
        Targets::Tokens(steps) => {
            if steps.len() != outputs.len() {
                return Err(Error::DimensionMismatch {
                    expected: steps.len(),
                    got: outputs.len(),
                });
            }
            let terms = outputs
                .iter()
                .zip(steps)
                .map(|(o, y)| o.softmax_cross_entropy(y))
                .collect::<Result<Vec<_>>>()?;
            Ok(add_all(&terms)?.scale(1.0 / terms.len() as f64))
        }
    }
}

fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[k] - lse
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn mean_ce(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let (rows, cols) = logits.dims();
    if rows != targets.len() || targets.iter().any(|&t| t >= cols) {
        return Err(Error::ShapeMismatch {
            op: "cross entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    Ok((0..rows).map(|r| -log_softmax_at(logits.row(r), targets[r])).sum::<f64>() / rows as f64)
}

/// Loss of a finished prediction, and the argmax accuracy for classification.
pub fn prediction_loss(outputs: &[Tensor], targets: &Targets) -> Result<(f64, Option<f64>)> {
    match targets {
        Targets::Regression(y) => {
            let p = outputs.first().ok_or(Error::EmptySequence)?;
            if p.len() != y.len() {
                return Err(Error::DimensionMismatch {
                    expected: y.len(),
                    got: p.len(),
                });
            }
            let mse = p.data().iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
            Ok((mse, None))
        }
        Targets::Classes(y) => {
            let l = outputs.first().ok_or(Error::EmptySequence)?;
            let ce = mean_ce(l, y)?;
            let hits = y.iter().enumerate().filter(|&(r, &k)| argmax(l.row(r)) == k).count();
            Ok((ce, Some(hits as f64 / y.len() as f64)))
        }
        Targets::Tokens(steps) => {
            if steps.len() != outputs.len() {
                return Err(Error::DimensionMismatch {
                    expected: steps.len(),
                    got: outputs.len(),
                });
            }
            let total = outputs
                .iter()
                .zip(steps)
                .map(|(o, y)| mean_ce(o, y))
                .sum::<Result<f64>>()?;
            Ok((total / steps.len() as f64, None))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub mean_p: Option<f64>,
}

/// Row-weighted mean loss of `predictor` over `batches`.
pub fn evaluate_batches(predictor: &dyn Predictor, batches: &[Batch], per_step: bool, seed: u64) -> Result<EvalResult> {
    let mut rows = 0usize;
    let (mut loss, mut acc, mut p) = (0.0, 0.0, 0.0);
    let (mut has_acc, mut has_p) = (false, false);
    for (k, b) in batches.iter().enumerate() {
        let n = b.rows();
        let pred = predictor.predict(&b.inputs, per_step, derive_seed(seed, VALID_STREAM, k as u64))?;
        let (l, a) = prediction_loss(&pred.outputs, &b.targets)?;
        loss += l * n as f64;
        if let Some(a) = a {
            acc += a * n as f64;
            has_acc = true;
        }
        if let Some(mp) = pred.mean_p {
            p += mp * n as f64;
            has_p = true;
        }
        rows += n;
    }
    if rows == 0 {
        return Err(Error::EmptySequence);
    }
    let n = rows as f64;
    Ok(EvalResult {
        loss: loss / n,
        accuracy: has_acc.then_some(acc / n),
        mean_p: has_p.then_some(p / n),
    })
}

/// Evaluates on the held-out split of `data` (`n_batches` is ignored for UCR).
pub fn evaluate(predictor: &dyn Predictor, data: &TaskData, batch: usize, n_batches: usize, seed: u64) -> Result<EvalResult> {
    let batches = data.eval_batches(batch, n_batches, seed)?;
    evaluate_batches(predictor, &batches, data.per_step(), seed)
}

pub fn model_config(cfg: &TrainConfig, data: &TaskData) -> ModelConfig {
    ModelConfig {
        kind: cfg.model,
        input: data.input_width(),
        hidden: cfg.hidden,
        output: data.output_width(),
        lz: LzConfig {
            backend: cfg.backend,
            mode: cfg.mode,
            reset_cell: cfg.reset_cell,
            memory_seed: cfg.memory_seed,
            beta: None,
        },
        readout: cfg.readout,
        bias_init: cfg.bias_init,
    }
}

struct StepStats {
    loss: f64,
    accuracy: Option<f64>,
    mean_p: Option<f64>,
}

/// Forward, backward and optimizer update on one batch.
fn train_step(net: &mut Network, opt: &mut Optimizer, batch: &Batch, cfg: &TrainConfig, seed: u64, epoch: usize) -> Result<StepStats> {
    let tape = Tape::new();
    let tracked = net.track(&tape);
    let xs: Vec<Var<'_>> = batch.inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let per_step = matches!(batch.targets, Targets::Tokens(_));
    let fwd = net.forward(&tape, &tracked, &xs, per_step, seed)?;
    let loss = batch_loss(&fwd.outputs, &batch.targets)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "training loss".into(),
            epoch,
        });
    }
    let accuracy = match &batch.targets {
        Targets::Classes(_) => prediction_loss(&[fwd.outputs[0].value()], &batch.targets)?.1,
        _ => None,
    };
    let grads = tape.backward(loss)?;
    let mut g: ParamSet = tracked.vars.iter().map(|(k, v)| (k.clone(), grads.wrt(*v))).collect();
    if let Some(max) = cfg.clip {
        clip_global_norm(&mut g, max);
    }
    opt.step(&mut net.params, &g)?;
    if let Some((name, _)) = net.params.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("parameter `{name}`"),
            epoch,
        });
    }
    Ok(StepStats {
        loss: value,
        accuracy,
        mean_p: mean_novelty(&fwd.ps),
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub network: Network,
    pub rows: Vec<MetricsRow>,
    pub epochs_completed: usize,
}

impl TrainSummary {
    /// Last logged row of `split`.
    pub fn last(&self, split: &str) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

const BEST_KEY: &str = "harness.best_loss";

fn checkpoint_of(cfg: &TrainConfig, net: &Network, opt: &Optimizer, epoch: usize, best: f64) -> Checkpoint {
    let mut tensors = net.params.clone();
    tensors.extend(opt.export());
    tensors.insert(BEST_KEY.into(), Tensor::scalar(best));
    Checkpoint {
        config: cfg.to_text(),
        seed: cfg.seed,
        epoch: epoch as u64,
        tensors,
    }
}

fn best_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".best");
    s.into()
}

/// Runs training as configured, writing the metrics CSV and checkpoints.
pub fn train(cfg: &TrainConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = TaskData::from_config(cfg)?;
    let mcfg = model_config(cfg, &data);
    let mut net = Network::init(mcfg, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer_kind()?, cfg.lr);
    let mut start = 1;
    let mut best = f64::INFINITY;
    if let Some(path) = &cfg.resume {
        let ck = load_checkpoint(path)?;
        let saved = TrainConfig::parse_text(&ck.config)?;
        for key in TrainConfig::STRUCTURAL_KEYS {
            if saved.get(key) != cfg.get(key) {
                return Err(Error::Config(format!(
                    "checkpoint was written with {key}={}, run has {key}={}",
                    saved.get(key).unwrap_or_default(),
                    cfg.get(key).unwrap_or_default()
                )));
            }
        }
        let params: ParamSet = ck
            .tensors
            .iter()
            .filter(|(k, _)| !k.starts_with("opt.") && !k.starts_with("harness."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        net = Network::with_params(mcfg, params)?;
        opt.import(&ck.tensors)?;
        best = ck.tensors.get(BEST_KEY).map_or(f64::INFINITY, Tensor::item);
        start = ck.epoch as usize + 1;
    }

    let clock = Instant::now();
    let wall = || cfg.wallclock.then(|| clock.elapsed().as_secs_f64());
    let eval_set = data.eval_batches(cfg.batch, cfg.eval_batches, cfg.seed)?;
    let split = data.eval_split();
    let track_best = split == "test" && cfg.checkpoint.is_some();
    let mut writer = MetricsWriter::create(&cfg.metrics)?;
    let mut rows = Vec::new();
    let mut log = |row: MetricsRow, rows: &mut Vec<MetricsRow>| -> Result<()> {
        writer.write(&row)?;
        rows.push(row);
        Ok(())
    };

    if start == 1 {
        let e = evaluate_batches(&net, &eval_set, data.per_step(), cfg.seed)?;
        log(
            MetricsRow {
                epoch: 0,
                split,
                loss: e.loss,
                accuracy: e.accuracy,
                mean_p: e.mean_p,
                wallclock_s: wall(),
            },
            &mut rows,
        )?;
    }

    for epoch in start..=cfg.epochs {
        let batches = data.train_batches(cfg, epoch)?;
        let (mut loss, mut acc, mut p, mut n) = (0.0, 0.0, 0.0, 0.0);
        for (k, batch) in batches.iter().enumerate() {
            let rows_in = batch.rows() as f64;
            let seed = derive_seed(cfg.seed, epoch as u64, k as u64);
            let s = train_step(&mut net, &mut opt, batch, cfg, seed, epoch)?;
            loss += s.loss * rows_in;
            acc += s.accuracy.unwrap_or(0.0) * rows_in;
            p += s.mean_p.unwrap_or(0.0) * rows_in;
            n += rows_in;
        }
        let is_lz = cfg.model == ModelKind::Lz;
        log(
            MetricsRow {
                epoch,
                split: "train",
                loss: loss / n,
                accuracy: data.is_classification().then_some(acc / n),
                mean_p: is_lz.then_some(p / n),
                wallclock_s: wall(),
            },
            &mut rows,
        )?;
        let e = evaluate_batches(&net, &eval_set, data.per_step(), cfg.seed)?;
        if !e.loss.is_finite() {
            return Err(Error::NonFinite {
                what: format!("{split} loss"),
                epoch,
            });
        }
        log(
            MetricsRow {
                epoch,
                split,
                loss: e.loss,
                accuracy: e.accuracy,
                mean_p: e.mean_p,
                wallclock_s: wall(),
            },
            &mut rows,
        )?;
        if e.loss < best {
            best = e.loss;
            if track_best {
                let path = best_path(cfg.checkpoint.as_ref().expect("checked"));
                save_checkpoint(path, &checkpoint_of(cfg, &net, &opt, epoch, best))?;
            }
        }
    }

    let completed = cfg.epochs.max(start - 1);
    if let Some(path) = &cfg.checkpoint {
        save_checkpoint(path, &checkpoint_of(cfg, &net, &opt, completed, best))?;
    }
    Ok(TrainSummary {
        network: net,
        rows,
        epochs_completed: completed,
    })
}

/// Loads the network stored in a checkpoint.
pub fn network_from_checkpoint(ck: &Checkpoint) -> Result<(TrainConfig, TaskData, Network)> {
    let cfg = TrainConfig::parse_text(&ck.config)?;
    let data = TaskData::from_config(&cfg)?;
    let params: ParamSet = ck
        .tensors
        .iter()
        .filter(|(k, _)| !k.starts_with("opt.") && !k.starts_with("harness."))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let net = Network::with_params(model_config(&cfg, &data), params)?;
    Ok((cfg, data, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Prediction;
    use crate::tasks::{addition_baseline_mse, copy_baseline_ce, frequency_motifs, write_ucr_tsv};

    struct Constant(f64);

    impl Predictor for Constant {
        fn predict(&self, inputs: &[Tensor], _: bool, _: u64) -> Result<Prediction> {
            let b = inputs[0].dims().0;
            Ok(Prediction {
                outputs: vec![Tensor::full(&[b, 1], self.0)],
                mean_p: None,
            })
        }
    }

    /// Blank with certainty, then uniform over the symbols.
    struct Memoryless {
        n: usize,
        m: usize,
    }

    impl Predictor for Memoryless {
        fn predict(&self, inputs: &[Tensor], _: bool, _: u64) -> Result<Prediction> {
            let b = inputs[0].dims().0;
            let vocab = self.m + 2;
            let len = inputs.len();
            let outputs = (0..len)
                .map(|t| {
                    let mut row = vec![-1e9; vocab];
                    if t < len - self.n {
                        row[0] = 0.0;
                    } else {
                        row[1..=self.m].iter_mut().for_each(|v| *v = 0.0);
                    }
                    Tensor::matrix(b, vocab, row.repeat(b)).unwrap()
                })
                .collect();
            Ok(Prediction { outputs, mean_p: None })
        }
    }

    #[test]
    fn constant_one_matches_addition_baseline() {
        let data = TaskData::Addition { seq_len: 10 };
        let r = evaluate(&Constant(1.0), &data, 20_000, 10, 3).unwrap();
        assert!((r.loss - addition_baseline_mse()).abs() < 0.005, "{}", r.loss);
        assert!(r.accuracy.is_none());
    }

    #[test]
    fn memoryless_matches_copy_baseline() {
        let data = TaskData::Copy { n: 10, m: 8, delay: 100 };
        let r = evaluate(&Memoryless { n: 10, m: 8 }, &data, 8, 2, 0).unwrap();
        assert!((r.loss - copy_baseline_ce(10, 8, 100)).abs() < 1e-9, "{}", r.loss);
    }

    #[test]
    fn perfect_classifier() {
        let logits = Tensor::matrix(3, 2, vec![1e3, -1e3, -1e3, 1e3, 1e3, -1e3]).unwrap();
        let (loss, acc) = prediction_loss(&[logits], &Targets::Classes(vec![0, 1, 0])).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(acc, Some(1.0));
        let (mse, _) = prediction_loss(&[Tensor::matrix(2, 1, vec![0.5, 1.5]).unwrap()], &Targets::Regression(vec![0.5, 1.5])).unwrap();
        assert_eq!(mse, 0.0);
    }

    #[test]
    fn tape_and_value_losses_agree() {
        let tape = Tape::new();
        let logits = Tensor::matrix(2, 3, vec![0.1, 2.0, -1.0, 0.3, 0.3, 0.9]).unwrap();
        let targets = Targets::Tokens(vec![vec![1, 2], vec![0, 0]]);
        let outs = [tape.constant(logits.clone()), tape.constant(logits.clone())];
        let a = batch_loss(&outs, &targets).unwrap().item();
        let (b, _) = prediction_loss(&[logits.clone(), logits], &targets).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    fn small(task: TaskKind, dir: &std::path::Path) -> TrainConfig {
        TrainConfig {
            task,
            seq_len: 6,
            copy_n: 2,
            copy_m: 3,
            hidden: 4,
            batch: 8,
            batches_per_epoch: 2,
            eval_batches: 1,
            epochs: 3,
            lr: 1e-2,
            metrics: dir.join("m.csv"),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_logs_initial_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..small(TaskKind::Addition, dir.path())
        };
        let s = train(&cfg).unwrap();
        assert_eq!(s.rows.len(), 1);
        assert_eq!((s.rows[0].epoch, s.rows[0].split), (0, "valid"));
        let text = std::fs::read_to_string(&cfg.metrics).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn runs_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        for task in [TaskKind::Addition, TaskKind::Copy] {
            for model in [ModelKind::Lstm, ModelKind::Lz] {
                let a = TrainConfig {
                    model,
                    ..small(task, dir.path())
                };
                let b = TrainConfig {
                    metrics: dir.path().join("m2.csv"),
                    ..a.clone()
                };
                train(&a).unwrap();
                train(&b).unwrap();
                assert_eq!(std::fs::read(&a.metrics).unwrap(), std::fs::read(&b.metrics).unwrap());
            }
        }
    }

    #[test]
    fn ucr_training_reports_accuracy_and_best_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let d = frequency_motifs(16, 8, 12, 0);
        let (tr, te) = (dir.path().join("tr.tsv"), dir.path().join("te.tsv"));
        write_ucr_tsv(&tr, &d.train).unwrap();
        write_ucr_tsv(&te, &d.test).unwrap();
        let cfg = TrainConfig {
            ucr_train: Some(tr),
            ucr_test: Some(te),
            checkpoint: Some(dir.path().join("c.ckpt")),
            ..small(TaskKind::Ucr, dir.path())
        };
        let s = train(&cfg).unwrap();
        let last = s.last("test").unwrap();
        assert!(last.accuracy.is_some() && last.mean_p.is_some());
        assert!(s.last("train").unwrap().accuracy.is_some());
        assert!(dir.path().join("c.ckpt.best").exists());
        let (_, _, net) = network_from_checkpoint(&load_checkpoint(dir.path().join("c.ckpt")).unwrap()).unwrap();
        assert_eq!(net, s.network);
    }

    #[test]
    fn resume_continues_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let full = TrainConfig {
            epochs: 4,
            ..small(TaskKind::Addition, dir.path())
        };
        let straight = train(&full).unwrap();
        let first = TrainConfig {
            epochs: 2,
            checkpoint: Some(dir.path().join("half.ckpt")),
            metrics: dir.path().join("a.csv"),
            ..full.clone()
        };
        train(&first).unwrap();
        let second = TrainConfig {
            resume: first.checkpoint.clone(),
            metrics: dir.path().join("b.csv"),
            ..full.clone()
        };
        let resumed = train(&second).unwrap();
        assert_eq!(resumed.rows[0].epoch, 3);
        let tail: Vec<_> = straight.rows.iter().filter(|r| r.epoch >= 3).collect();
        assert_eq!(tail.len(), resumed.rows.len());
        for (a, b) in tail.iter().zip(&resumed.rows) {
            assert!((a.loss - b.loss).abs() <= 1e-9);
        }
        let mismatched = TrainConfig {
            hidden: 9,
            ..second
        };
        assert!(matches!(train(&mismatched), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            lr: 1e300,
            clip: None,
            model: ModelKind::Lstm,
            ..small(TaskKind::Addition, dir.path())
        };
        match train(&cfg) {
            Err(Error::NonFinite { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("{other:?}"),
        }
    }
}
