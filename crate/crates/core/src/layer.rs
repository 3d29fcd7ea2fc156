//! The Lempel-Ziv recurrent layer.
//!
//! Each step runs the LSTM cell to get a preliminary hidden state `ĥ`, asks the
//! associative memory whether `ĥ` was seen before, turns the answer into a
//! novelty score `p`, inserts `p·ĥ`, and carries `h = (1 − p)·ĥ` forward. With
//! `p = 1` the carried state is wiped, which is how the layer starts a new
//! "phrase" the way LZ restarts its window.
//!
//! Everything here runs on an autodiff [`Tape`] over a batch of sequences; each
//! batch row owns an independent memory.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{add_all, Tape, Tensor, Var};
use crate::cells::{lstm_cell, novelty_score, LstmParams, LstmVars, NoveltyMode, NoveltyParams, NoveltyVars};
use crate::error::{Error, Result};
use crate::memory::{default_beta, memory_tag, AssociativeMemory, BackendKind};
use crate::vsa::HyperVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LzConfig {
    pub backend: BackendKind,
    pub mode: NoveltyMode,
    /// Scale the cell state by `(1 − p)` together with the hidden state.
    pub reset_cell: bool,
    /// Seed of the VSA tag vector.
    pub memory_seed: u64,
    /// Hopfield inverse temperature; `None` means `1/sqrt(H)`.
    pub beta: Option<f64>,
}

impl LzConfig {
    pub fn new(backend: BackendKind) -> Self {
        Self {
            backend,
            mode: NoveltyMode::Soft,
            reset_cell: true,
            memory_seed: 0,
            beta: None,
        }
    }
}

/// Which vector the task head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutSource {
    /// The last preliminary hidden state `ĥ_T`.
    FinalHidden,
    /// The final memory: the VSA bundle, or the weighted pattern sum for Hopfield.
    Memory,
}

impl fmt::Display for ReadoutSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadoutSource::FinalHidden => "hidden",
            ReadoutSource::Memory => "memory",
        })
    }
}

impl FromStr for ReadoutSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hidden" => Ok(ReadoutSource::FinalHidden),
            "memory" => Ok(ReadoutSource::Memory),
            other => Err(Error::InvalidArgument(format!(
                "readout `{other}` must be hidden or memory"
            ))),
        }
    }
}

/// Hard-mode random stream for sequence `index` under the global `seed`.
pub fn sequence_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Differentiable memory state for a batch.
pub enum TrackedMemory<'t> {
    Vsa {
        kind: BackendKind,
        /// `[B, H]` bundle
        state: Var<'t>,
        /// `[B, H]`, the same tag in every row
        tag: Var<'t>,
    },
    Hopfield {
        patterns: Vec<Var<'t>>,
        weights: Vec<Var<'t>>,
        beta: f64,
    },
}

impl<'t> TrackedMemory<'t> {
    pub fn fresh(tape: &'t Tape, cfg: &LzConfig, batch: usize, dim: usize) -> Result<Self> {
        cfg.backend.validate_dim(dim)?;
        Ok(match cfg.backend {
            BackendKind::Hrr | BackendKind::Vtb => {
                let tag = memory_tag(dim, cfg.memory_seed)?;
                let rows: Vec<f64> = (0..batch).flat_map(|_| tag.as_slice().to_vec()).collect();
                TrackedMemory::Vsa {
                    kind: cfg.backend,
                    state: tape.constant(Tensor::zeros(&[batch, dim])),
                    tag: tape.constant(Tensor::matrix(batch, dim, rows)?),
                }
            }
            BackendKind::Hopfield => TrackedMemory::Hopfield {
                patterns: Vec::new(),
                weights: Vec::new(),
                beta: cfg.beta.unwrap_or_else(|| default_beta(dim)),
            },
        })
    }

    /// `(r̂, r)` for query `q` (`[B, H]`).
    pub fn query(&self, q: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        match self {
            TrackedMemory::Vsa { kind, state, tag } => {
                let r_hat = match kind {
                    BackendKind::Hrr => state.circ_conv(q.hrr_pseudo_inverse()?)?,
                    _ => state.vtb_unbind(q)?,
                };
                Ok((r_hat, *tag))
            }
            TrackedMemory::Hopfield {
                patterns,
                weights,
                beta,
            } => Ok((q.hopfield_retrieve(patterns, weights, *beta)?, q)),
        }
    }

    /// Inserts `v` (`[B, H]`) with per-row weight `p` (`[B, 1]`).
    pub fn insert(&mut self, v: Var<'t>, p: Var<'t>) -> Result<()> {
        match self {
            TrackedMemory::Vsa { kind, state, tag } => {
                let bound = match kind {
                    BackendKind::Hrr => v.circ_conv(*tag)?,
                    _ => v.vtb_bind(*tag)?,
                };
                *state = state.add(bound.mul(p)?)?;
            }
            TrackedMemory::Hopfield {
                patterns, weights, ..
            } => {
                patterns.push(v);
                weights.push(p);
            }
        }
        Ok(())
    }

    /// Vector summary used by memory readout: the bundle, or `Σ pᵢ vᵢ`.
    pub fn summary(&self, batch: usize, dim: usize, tape: &'t Tape) -> Result<Var<'t>> {
        match self {
            TrackedMemory::Vsa { state, .. } => Ok(*state),
            TrackedMemory::Hopfield {
                patterns, weights, ..
            } => {
                if patterns.is_empty() {
                    return Ok(tape.constant(Tensor::zeros(&[batch, dim])));
                }
                let terms = patterns
                    .iter()
                    .zip(weights)
                    .map(|(v, p)| v.mul(*p))
                    .collect::<Result<Vec<_>>>()?;
                add_all(&terms)
            }
        }
    }

    /// Plain [`AssociativeMemory`] for batch row `row`.
    pub fn materialize(&self, row: usize) -> Result<AssociativeMemory> {
        match self {
            TrackedMemory::Vsa { kind, state, tag } => {
                let tag = HyperVector::new(tag.value().row(row).to_vec())?;
                AssociativeMemory::from_vsa_state(*kind, state.value().row(row).to_vec(), tag)
            }
            TrackedMemory::Hopfield {
                patterns,
                weights,
                beta,
            } => {
                let dim = patterns.first().map(|p| p.dims().1);
                let Some(dim) = dim else {
                    return Err(Error::InvalidArgument("empty Hopfield trace".into()));
                };
                let mut vs = Vec::new();
                let mut ws = Vec::new();
                for (p, w) in patterns.iter().zip(weights) {
                    vs.push(HyperVector::new(p.value().row(row).to_vec())?);
                    ws.push(w.value().data()[row]);
                }
                AssociativeMemory::from_patterns(dim, vs, ws, *beta)
            }
        }
    }
}

/// Recurrent state of a batch.
pub struct LzState<'t> {
    pub h: Var<'t>,
    pub c: Var<'t>,
    pub memory: TrackedMemory<'t>,
}

impl<'t> LzState<'t> {
    pub fn fresh(tape: &'t Tape, cfg: &LzConfig, batch: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            h: tape.constant(Tensor::zeros(&[batch, hidden])),
            c: tape.constant(Tensor::zeros(&[batch, hidden])),
            memory: TrackedMemory::fresh(tape, cfg, batch, hidden)?,
        })
    }
}

/// One layer step. Returns the next state, `ĥ_t` and `p_t` (`[B, 1]`).
/// `uniforms` supplies one draw per row in hard mode.
pub fn lz_step<'t>(
    state: LzState<'t>,
    x_t: Var<'t>,
    lstm: &LstmVars<'t>,
    novelty: &NoveltyVars<'t>,
    cfg: &LzConfig,
    uniforms: Option<&[f64]>,
) -> Result<(LzState<'t>, Var<'t>, Var<'t>)> {
    let LzState { h, c, mut memory } = state;
    let (h_hat, c_next) = lstm_cell(x_t, h, c, lstm)?;
    let (r_hat, r) = memory.query(h_hat)?;
    let p = novelty_score(r_hat, r, novelty, cfg.mode, uniforms)?;
    memory.insert(h_hat, p)?;
    let keep = p.one_minus();
    let h_next = h_hat.mul(keep)?;
    let c_next = if cfg.reset_cell { c_next.mul(keep)? } else { c_next };
    Ok((
        LzState {
            h: h_next,
            c: c_next,
            memory,
        },
        h_hat,
        p,
    ))
}

/// Everything a batched forward pass produces.
pub struct LzTrace<'t> {
    pub h_hats: Vec<Var<'t>>,
    pub ps: Vec<Var<'t>>,
    pub memory: TrackedMemory<'t>,
}

/// Runs the layer over `inputs` (one `[B, I]` value per step) from a fresh
/// state. `rngs` holds one stream per batch row and is required in hard mode.
pub fn lz_forward_batch<'t>(
    tape: &'t Tape,
    inputs: &[Var<'t>],
    lstm: &LstmVars<'t>,
    novelty: &NoveltyVars<'t>,
    cfg: &LzConfig,
    mut rngs: Option<&mut [ChaCha8Rng]>,
) -> Result<LzTrace<'t>> {
    let first = inputs.first().ok_or(Error::EmptySequence)?;
    let batch = first.dims().0;
    let hidden = lstm.w_hh.dims().0;
    if cfg.mode == NoveltyMode::Hard && rngs.as_ref().is_none_or(|r| r.len() != batch) {
        return Err(Error::InvalidArgument(
            "hard mode needs one random stream per sequence".into(),
        ));
    }
    let mut state = LzState::fresh(tape, cfg, batch, hidden)?;
    let mut h_hats = Vec::with_capacity(inputs.len());
    let mut ps = Vec::with_capacity(inputs.len());
    let mut draws = vec![0.0; batch];
    for &x in inputs {
        let uniforms = match (cfg.mode, rngs.as_deref_mut()) {
            (NoveltyMode::Hard, Some(rngs)) => {
                for (d, rng) in draws.iter_mut().zip(rngs.iter_mut()) {
                    *d = rng.random();
                }
                Some(draws.as_slice())
            }
            _ => None,
        };
        let (next, h_hat, p) = lz_step(state, x, lstm, novelty, cfg, uniforms)?;
        state = next;
        h_hats.push(h_hat);
        ps.push(p);
    }
    Ok(LzTrace {
        h_hats,
        ps,
        memory: state.memory,
    })
}

/// Plain LSTM over `inputs`; returns the hidden state at every step.
pub fn lstm_forward_batch<'t>(tape: &'t Tape, inputs: &[Var<'t>], lstm: &LstmVars<'t>) -> Result<Vec<Var<'t>>> {
    let first = inputs.first().ok_or(Error::EmptySequence)?;
    let batch = first.dims().0;
    let hidden = lstm.w_hh.dims().0;
    let mut h = tape.constant(Tensor::zeros(&[batch, hidden]));
    let mut c = tape.constant(Tensor::zeros(&[batch, hidden]));
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let (hn, cn) = lstm_cell(x, h, c, lstm)?;
        out.push(hn);
        h = hn;
        c = cn;
    }
    Ok(out)
}

/// Result of running the layer on one sequence.
#[derive(Debug, Clone)]
pub struct LzLayerOutput {
    /// `[T, H]`
    pub h_hats: Tensor,
    pub p_mask: Vec<f64>,
    pub memory: AssociativeMemory,
}

fn split_steps<'t>(tape: &'t Tape, x_seq: &Tensor) -> Result<Vec<Var<'t>>> {
    let (steps, width) = x_seq.dims();
    if x_seq.shape().len() != 2 {
        return Err(Error::InvalidArgument("input sequence must be [T, I]".into()));
    }
    (0..steps)
        .map(|t| Ok(tape.constant(Tensor::matrix(1, width, x_seq.row(t).to_vec())?)))
        .collect()
}

fn stack_rows(rows: &[Var<'_>]) -> Result<Tensor> {
    let width = rows[0].dims().1;
    let data: Vec<f64> = rows.iter().flat_map(|v| v.value().into_data()).collect();
    Tensor::matrix(rows.len(), width, data)
}

/// Runs the layer on a single `[T, I]` sequence. `seed` drives hard-mode sampling.
pub fn lz_forward(
    x_seq: &Tensor,
    lstm: &LstmParams,
    novelty: &NoveltyParams,
    cfg: &LzConfig,
    seed: u64,
) -> Result<LzLayerOutput> {
    if x_seq.shape().len() != 2 {
        return Err(Error::InvalidArgument("input sequence must be [T, I]".into()));
    }
    let tape = Tape::new();
    let inputs = split_steps(&tape, x_seq)?;
    let lv = lstm.track(&tape);
    let nv = novelty.track(&tape);
    let mut rngs = [sequence_rng(seed, 0)];
    let trace = lz_forward_batch(&tape, &inputs, &lv, &nv, cfg, Some(&mut rngs))?;
    Ok(LzLayerOutput {
        h_hats: stack_rows(&trace.h_hats)?,
        p_mask: trace.ps.iter().map(|p| p.item()).collect(),
        memory: trace.memory.materialize(0).or_else(|_| {
            AssociativeMemory::new(cfg.backend, lstm.hidden_size(), cfg.memory_seed)
        })?,
    })
}

/// Hidden states of a plain LSTM on one `[T, I]` sequence, as `[T, H]`.
pub fn lstm_forward(x_seq: &Tensor, lstm: &LstmParams) -> Result<Tensor> {
    let tape = Tape::new();
    let inputs = split_steps(&tape, x_seq)?;
    if inputs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let lv = lstm.track(&tape);
    stack_rows(&lstm_forward_batch(&tape, &inputs, &lv)?)
}

/// Affine task head: `weight` is `[H, out]`, `bias` is `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Head {
    pub fn zeros(hidden: usize, out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[hidden, out]),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn track<'t>(&self, tape: &'t Tape) -> HeadVars<'t> {
        HeadVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> HeadVars<'t> {
    /// `v W + b` for `v` of shape `[B, H]`.
    pub fn apply(&self, v: Var<'t>) -> Result<Var<'t>> {
        v.matmul(self.weight)?.add(self.bias)
    }
}

/// Applies `head` to `ĥ_T` (or to the final memory) of one layer output.
pub fn readout(output: &LzLayerOutput, head: &Head, source: ReadoutSource) -> Result<Vec<f64>> {
    let (steps, hidden) = output.h_hats.dims();
    if head.weight.dims().0 != hidden {
        return Err(Error::DimensionMismatch {
            expected: hidden,
            got: head.weight.dims().0,
        });
    }
    let features: Vec<f64> = match source {
        ReadoutSource::FinalHidden => output.h_hats.row(steps - 1).to_vec(),
        ReadoutSource::Memory => match output.memory.state() {
            Some(m) => m.to_vec(),
            None => {
                let (patterns, weights) = output.memory.patterns().expect("hopfield");
                let mut acc = vec![0.0; hidden];
                for (p, w) in patterns.iter().zip(weights) {
                    for (a, x) in acc.iter_mut().zip(p.as_slice()) {
                        *a += w * x;
                    }
                }
                acc
            }
        },
    };
    let tape = Tape::new();
    let hv = head.track(&tape);
    let v = tape.constant(Tensor::matrix(1, hidden, features)?);
    Ok(hv.apply(v)?.value().into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use crate::cells::{init_lstm, init_novelty, BiasInit};
    use crate::vsa::{self, bind_hrr};

    fn rand_seq(t: usize, i: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(t, i, (0..t * i).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn cfg(backend: BackendKind) -> LzConfig {
        LzConfig {
            memory_seed: 5,
            ..LzConfig::new(backend)
        }
    }

    #[test]
    fn forced_full_novelty_clears_state() {
        let lstm = init_lstm(3, 9, 1).unwrap();
        let tape = Tape::new();
        let lv = lstm.track(&tape);
        let nv = NoveltyParams::constant(9, 1e3).track(&tape);
        let c = cfg(BackendKind::Hrr);
        let state = LzState::fresh(&tape, &c, 2, 9).unwrap();
        let x = tape.constant(rand_seq(2, 3, 2));
        let (next, _, p) = lz_step(state, x, &lv, &nv, &c, None).unwrap();
        assert!(p.value().data().iter().all(|&v| v == 1.0));
        assert!(next.h.value().data().iter().all(|&v| v == 0.0));
        assert!(next.c.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forced_zero_novelty_is_a_plain_lstm_step() {
        let lstm = init_lstm(3, 9, 1).unwrap();
        for backend in [BackendKind::Hrr, BackendKind::Vtb, BackendKind::Hopfield] {
            let tape = Tape::new();
            let lv = lstm.track(&tape);
            let nv = NoveltyParams::constant(9, -1e3).track(&tape);
            let c = cfg(backend);
            let state = LzState::fresh(&tape, &c, 1, 9).unwrap();
            let x = tape.constant(rand_seq(1, 3, 2));
            let (next, h_hat, p) = lz_step(state, x, &lv, &nv, &c, None).unwrap();
            assert_eq!(p.item(), 0.0);
            assert_eq!(next.h.value(), h_hat.value());
            let mem = next.memory.materialize(0).unwrap();
            if let Some(m) = mem.state() {
                assert!(m.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn half_novelty_inserts_half() {
        let lstm = init_lstm(3, 9, 1).unwrap();
        let tape = Tape::new();
        let lv = lstm.track(&tape);
        let nv = NoveltyParams::constant(9, 0.0).track(&tape);
        let c = cfg(BackendKind::Hrr);
        let state = LzState::fresh(&tape, &c, 1, 9).unwrap();
        let x = tape.constant(rand_seq(1, 3, 2));
        let (next, h_hat, p) = lz_step(state, x, &lv, &nv, &c, None).unwrap();
        assert_eq!(p.item(), 0.5);
        let h_hat = HyperVector::new(h_hat.value().into_data()).unwrap();
        let tag = memory_tag(9, 5).unwrap();
        let expect = bind_hrr(&h_hat, &tag).unwrap().scale(0.5);
        let mem = next.memory.materialize(0).unwrap();
        for (a, b) in mem.state().unwrap().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in next.h.value().data().iter().zip(h_hat.as_slice()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn reset_cell_flag_keeps_cell() {
        let lstm = init_lstm(3, 4, 1).unwrap();
        let tape = Tape::new();
        let lv = lstm.track(&tape);
        let nv = NoveltyParams::constant(4, 1e3).track(&tape);
        let c = LzConfig {
            reset_cell: false,
            ..cfg(BackendKind::Hrr)
        };
        let state = LzState::fresh(&tape, &c, 1, 4).unwrap();
        let x = tape.constant(rand_seq(1, 3, 2));
        let (next, _, _) = lz_step(state, x, &lv, &nv, &c, None).unwrap();
        assert!(next.h.value().data().iter().all(|&v| v == 0.0));
        assert!(next.c.value().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_novelty_sequence_equals_lstm() {
        let lstm = init_lstm(2, 9, 3).unwrap();
        let x = rand_seq(12, 2, 4);
        let plain = lstm_forward(&x, &lstm).unwrap();
        for backend in [BackendKind::Hrr, BackendKind::Vtb, BackendKind::Hopfield] {
            let out = lz_forward(&x, &lstm, &NoveltyParams::constant(9, -1e3), &cfg(backend), 0).unwrap();
            assert!(out.p_mask.iter().all(|&p| p == 0.0));
            for (a, b) in out.h_hats.data().iter().zip(plain.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn final_memory_is_weighted_bundle() {
        let lstm = init_lstm(2, 9, 3).unwrap();
        let novelty = init_novelty(9, BiasInit::Zero, 4).unwrap();
        let x = rand_seq(10, 2, 6);
        for backend in [BackendKind::Hrr, BackendKind::Vtb] {
            let out = lz_forward(&x, &lstm, &novelty, &cfg(backend), 0).unwrap();
            let tag = memory_tag(9, 5).unwrap();
            let mut expect = vec![0.0; 9];
            for (t, p) in out.p_mask.iter().enumerate() {
                let h = HyperVector::new(out.h_hats.row(t).to_vec()).unwrap();
                let b = match backend {
                    BackendKind::Hrr => bind_hrr(&h, &tag).unwrap(),
                    _ => vsa::bind_vtb(&h, &tag).unwrap(),
                };
                for (e, v) in expect.iter_mut().zip(b.as_slice()) {
                    *e += p * v;
                }
            }
            for (a, b) in out.memory.state().unwrap().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_step_sequence() {
        let lstm = init_lstm(2, 4, 3).unwrap();
        let novelty = init_novelty(4, BiasInit::One, 4).unwrap();
        let out = lz_forward(&rand_seq(1, 2, 1), &lstm, &novelty, &cfg(BackendKind::Hrr), 0).unwrap();
        assert_eq!(out.h_hats.dims(), (1, 4));
        assert_eq!(out.p_mask.len(), 1);
    }

    #[test]
    fn hard_mode_is_binary_and_reproducible() {
        let lstm = init_lstm(2, 4, 3).unwrap();
        let novelty = init_novelty(4, BiasInit::Zero, 4).unwrap();
        let c = LzConfig {
            mode: NoveltyMode::Hard,
            ..cfg(BackendKind::Hopfield)
        };
        let x = rand_seq(20, 2, 1);
        let a = lz_forward(&x, &lstm, &novelty, &c, 7).unwrap();
        let b = lz_forward(&x, &lstm, &novelty, &c, 7).unwrap();
        assert!(a.p_mask.iter().all(|&p| p == 0.0 || p == 1.0));
        assert_eq!(a.p_mask, b.p_mask);
        assert_eq!(a.h_hats, b.h_hats);
    }

    #[test]
    fn readout_contract() {
        let lstm = init_lstm(2, 4, 3).unwrap();
        let novelty = init_novelty(4, BiasInit::Zero, 4).unwrap();
        let out = lz_forward(&rand_seq(5, 2, 1), &lstm, &novelty, &cfg(BackendKind::Hrr), 0).unwrap();
        let zero = Head::zeros(4, 3);
        assert_eq!(readout(&out, &zero, ReadoutSource::FinalHidden).unwrap(), vec![0.0; 3]);
        assert_eq!(readout(&out, &zero, ReadoutSource::Memory).unwrap().len(), 3);
        assert!(readout(&out, &Head::zeros(5, 1), ReadoutSource::FinalHidden).is_err());

        let lstm1 = init_lstm(2, 2, 3).unwrap();
        let nov1 = NoveltyParams::constant(2, 0.0);
        let c1 = cfg(BackendKind::Hopfield);
        let out = lz_forward(&rand_seq(5, 2, 1), &lstm1, &nov1, &c1, 0).unwrap();
        let ident = Head {
            weight: Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap(),
            bias: Tensor::vector(vec![0.0]),
        };
        let y = readout(&out, &ident, ReadoutSource::FinalHidden).unwrap();
        assert_eq!(y, vec![out.h_hats.row(4)[1]]);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let tape = Tape::new();
        let lstm = init_lstm(2, 4, 3).unwrap().track(&tape);
        let nov = NoveltyParams::constant(4, 0.0).track(&tape);
        assert!(matches!(
            lz_forward_batch(&tape, &[], &lstm, &nov, &cfg(BackendKind::Hrr), None),
            Err(Error::EmptySequence)
        ));
        assert!(lz_forward(&rand_seq(3, 2, 1), &init_lstm(2, 5, 1).unwrap(), &NoveltyParams::constant(5, 0.0), &cfg(BackendKind::Vtb), 0).is_err());
    }

    fn end_to_end_error(backend: BackendKind) -> f64 {
        let lstm = init_lstm(2, 9, 11).unwrap();
        let novelty = init_novelty(9, BiasInit::Zero, 12).unwrap();
        let head = Head {
            weight: rand_seq(9, 1, 13),
            bias: Tensor::vector(vec![0.1]),
        };
        let x = rand_seq(5, 2, 14);
        let c = cfg(backend);
        let inputs = vec![
            lstm.w_ih.clone(),
            lstm.w_hh.clone(),
            lstm.bias.clone(),
            novelty.weight.clone(),
            novelty.bias.clone(),
            head.weight.clone(),
            head.bias.clone(),
        ];
        grad_check(
            |tape, v| {
                let steps = split_steps(tape, &x)?;
                let lv = LstmVars {
                    w_ih: v[0],
                    w_hh: v[1],
                    bias: v[2],
                };
                let nv = NoveltyVars {
                    weight: v[3],
                    bias: v[4],
                };
                let hv = HeadVars {
                    weight: v[5],
                    bias: v[6],
                };
                let trace = lz_forward_batch(tape, &steps, &lv, &nv, &c, None)?;
                hv.apply(*trace.h_hats.last().unwrap())?.mse(&[0.7])
            },
            &inputs,
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn end_to_end_gradients() {
        for backend in [BackendKind::Hrr, BackendKind::Vtb, BackendKind::Hopfield] {
            let err = end_to_end_error(backend);
            assert!(err < 1e-3, "{backend}: {err}");
        }
    }
}
