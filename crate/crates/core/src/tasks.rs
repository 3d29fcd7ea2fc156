//! Synthetic benchmarks (adding problem, memory copy) and UCR-format time series.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// A batch of the adding problem. Matrices are row-major `B × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditionBatch {
    pub seq_len: usize,
    pub batch: usize,
    pub values: Vec<f64>,
    pub indicators: Vec<f64>,
    pub targets: Vec<f64>,
}

impl AdditionBatch {
    /// Network input at step `t`: `[B, 2]` rows of (value, indicator).
    pub fn step_input(&self, t: usize) -> Tensor {
        let data = (0..self.batch)
            .flat_map(|b| {
                let i = b * self.seq_len + t;
                [self.values[i], self.indicators[i]]
            })
            .collect();
        Tensor::matrix(self.batch, 2, data).expect("shape is consistent")
    }
}

/// Generates `batch` adding-problem sequences of length `seq_len`. One marker
/// lands before `⌊T/2⌋` and one at or after it.
pub fn gen_addition(seq_len: usize, batch: usize, seed: u64) -> Result<AdditionBatch> {
    if seq_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "addition needs T >= 2, got {seq_len}"
        )));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = seq_len / 2;
    let mut values = Vec::with_capacity(batch * seq_len);
    let mut indicators = vec![0.0; batch * seq_len];
    let mut targets = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = values.len();
        values.extend((0..seq_len).map(|_| rng.random::<f64>()));
        let first = rng.random_range(0..half);
        let second = rng.random_range(half..seq_len);
        indicators[row + first] = 1.0;
        indicators[row + second] = 1.0;
        targets.push(values[row + first] + values[row + second]);
        debug_assert_eq!(row, b * seq_len);
    }
    Ok(AdditionBatch {
        seq_len,
        batch,
        values,
        indicators,
        targets,
    })
}

/// MSE of always predicting 1: the variance of a sum of two `U[0,1)` draws.
pub fn addition_baseline_mse() -> f64 {
    1.0 / 6.0
}

pub const BLANK: usize = 0;

/// A batch of the memory-copy problem. Token rows are `B × (T + 2N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyBatch {
    pub n: usize,
    pub m: usize,
    pub delay: usize,
    pub batch: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl CopyBatch {
    pub fn seq_len(&self) -> usize {
        self.delay + 2 * self.n
    }

    /// Symbols `1..=M`, blank and the delimiter.
    pub fn vocab(&self) -> usize {
        self.m + 2
    }

    pub fn delimiter(&self) -> usize {
        self.m + 1
    }

    pub fn input_row(&self, b: usize) -> &[usize] {
        let len = self.seq_len();
        &self.inputs[b * len..(b + 1) * len]
    }

    pub fn target_row(&self, b: usize) -> &[usize] {
        let len = self.seq_len();
        &self.targets[b * len..(b + 1) * len]
    }

    /// One-hot network input at step `t`, `[B, M + 2]`.
    pub fn step_input(&self, t: usize) -> Tensor {
        let vocab = self.vocab();
        let mut data = vec![0.0; self.batch * vocab];
        for b in 0..self.batch {
            data[b * vocab + self.input_row(b)[t]] = 1.0;
        }
        Tensor::matrix(self.batch, vocab, data).expect("shape is consistent")
    }

    /// Target tokens at step `t`, one per batch row.
    pub fn step_targets(&self, t: usize) -> Vec<usize> {
        (0..self.batch).map(|b| self.target_row(b)[t]).collect()
    }
}

/// Generates copy-problem sequences: `N` symbols from `1..=M`, `T − 1` blanks,
/// the delimiter `M + 1`, then `N` blanks. The target is blank for the first
/// `N + T` steps and repeats the symbols afterwards.
pub fn gen_copy(n: usize, m: usize, delay: usize, batch: usize, seed: u64) -> Result<CopyBatch> {
    if n == 0 || m < 2 || delay == 0 || batch == 0 {
        return Err(Error::InvalidArgument(format!(
            "copy needs N >= 1, M >= 2, T >= 1, B >= 1 (got N={n}, M={m}, T={delay}, B={batch})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = delay + 2 * n;
    let mut inputs = Vec::with_capacity(batch * len);
    let mut targets = Vec::with_capacity(batch * len);
    for _ in 0..batch {
        let symbols: Vec<usize> = (0..n).map(|_| rng.random_range(1..=m)).collect();
        inputs.extend_from_slice(&symbols);
        inputs.extend(std::iter::repeat_n(BLANK, delay - 1));
        inputs.push(m + 1);
        inputs.extend(std::iter::repeat_n(BLANK, n));
        targets.extend(std::iter::repeat_n(BLANK, n + delay));
        targets.extend_from_slice(&symbols);
    }
    Ok(CopyBatch {
        n,
        m,
        delay,
        batch,
        inputs,
        targets,
    })
}

/// Cross-entropy of the memoryless strategy: blanks, then uniform symbols.
pub fn copy_baseline_ce(n: usize, m: usize, delay: usize) -> f64 {
    n as f64 * (m as f64).ln() / (delay + 2 * n) as f64
}

/// Labelled fixed-length series in UCR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct UcrDataset {
    pub train: Vec<(usize, Vec<f64>)>,
    pub test: Vec<(usize, Vec<f64>)>,
    pub num_classes: usize,
    pub series_len: usize,
}

struct RawRows {
    rows: Vec<(i64, Vec<f64>)>,
    width: usize,
}

fn parse_ucr(path: &Path) -> Result<RawRows> {
    let text = std::fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(['\t', ','])
            .map(str::trim)
            .collect();
        if fields.len() < 2 {
            return Err(err(lineno, "need a label and at least one value".into()));
        }
        let label: f64 = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("label `{}` is not numeric", fields[0])))?;
        if label.fract() != 0.0 || !label.is_finite() {
            return Err(err(lineno, format!("label `{}` is not an integer", fields[0])));
        }
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| err(lineno, format!("value `{f}` is not numeric")))
            })
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(err(
                    lineno,
                    format!("ragged row: {} values, expected {w}", values.len()),
                ))
            }
            _ => {}
        }
        rows.push((label as i64, values));
    }
    let width = width.ok_or_else(|| err(0, "no rows".into()))?;
    Ok(RawRows { rows, width })
}

fn remap(labels: &BTreeSet<i64>, rows: Vec<(i64, Vec<f64>)>) -> Vec<(usize, Vec<f64>)> {
    let order: Vec<i64> = labels.iter().copied().collect();
    rows.into_iter()
        .map(|(l, s)| (order.binary_search(&l).expect("label collected"), s))
        .collect()
}

/// Loads one UCR file into the `train` split; `test` is left empty.
pub fn load_ucr_tsv(path: impl AsRef<Path>) -> Result<UcrDataset> {
    let raw = parse_ucr(path.as_ref())?;
    let labels: BTreeSet<i64> = raw.rows.iter().map(|r| r.0).collect();
    Ok(UcrDataset {
        num_classes: labels.len(),
        series_len: raw.width,
        train: remap(&labels, raw.rows),
        test: Vec::new(),
    })
}

/// Loads a `_TRAIN`/`_TEST` pair with one shared label mapping.
pub fn load_ucr_pair(train: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<UcrDataset> {
    let tr = parse_ucr(train.as_ref())?;
    let te = parse_ucr(test.as_ref())?;
    if tr.width != te.width {
        return Err(Error::DimensionMismatch {
            expected: tr.width,
            got: te.width,
        });
    }
    let labels: BTreeSet<i64> = tr.rows.iter().chain(&te.rows).map(|r| r.0).collect();
    Ok(UcrDataset {
        num_classes: labels.len(),
        series_len: tr.width,
        train: remap(&labels, tr.rows),
        test: remap(&labels, te.rows),
    })
}

/// Writes `(label, series)` rows tab-separated.
pub fn write_ucr_tsv(path: impl AsRef<Path>, rows: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut out = String::new();
    for (label, series) in rows {
        out.push_str(&label.to_string());
        for v in series {
            write!(out, "\t{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Shifts and scales `series` to mean 0 and population std 1. Constant series
/// become all zeros.
pub fn znormalize_series(series: &mut [f64]) {
    if series.is_empty() {
        return;
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in series.iter_mut() {
        *v = if std > 1e-12 { (*v - mean) / std } else { 0.0 };
    }
}

pub fn znormalize(mut dataset: UcrDataset) -> UcrDataset {
    for (_, s) in dataset.train.iter_mut().chain(dataset.test.iter_mut()) {
        znormalize_series(s);
    }
    dataset
}

/// Two-class series told apart by their dominant frequency: class `k` is a
/// sinusoid with `2 + 4k` cycles, random phase, plus Gaussian noise.
pub fn frequency_motifs(n_train: usize, n_test: usize, len: usize, seed: u64) -> UcrDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).expect("valid std");
    let mut draw = |n: usize| -> Vec<(usize, Vec<f64>)> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let cycles = 2.0 + 4.0 * label as f64;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let series = (0..len)
                    .map(|t| {
                        let x = std::f64::consts::TAU * cycles * t as f64 / len as f64;
                        (x + phase).sin() + noise.sample(&mut rng)
                    })
                    .collect();
                (label, series)
            })
            .collect()
    };
    let train = draw(n_train);
    let test = draw(n_test);
    UcrDataset {
        train,
        test,
        num_classes: 2,
        series_len: len,
    }
}
