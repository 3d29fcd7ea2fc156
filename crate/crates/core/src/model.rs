//! Single-layer sequence models (plain LSTM or LZ layer) with an affine head.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::autograd::{Tape, Tensor, Var};
use crate::cells::{init_lstm, init_novelty, BiasInit, LstmParams, LstmVars, NoveltyParams, NoveltyVars};
use crate::error::{Error, Result};
use crate::layer::{lstm_forward_batch, lz_forward_batch, sequence_rng, HeadVars, LzConfig, ReadoutSource};

/// Named parameter (or optimizer state) tensors in a stable order.
pub type ParamSet = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Lstm,
    Lz,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Lz => "lz",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(ModelKind::Lstm),
            "lz" => Ok(ModelKind::Lz),
            other => Err(Error::InvalidArgument(format!(
                "model `{other}` must be lstm or lz"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub lz: LzConfig,
    pub readout: ReadoutSource,
    pub bias_init: BiasInit,
}

/// Model outputs on a batch: one `[B, out]` tensor, or one per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub outputs: Vec<Tensor>,
    /// Mean novelty over steps and rows, for LZ models.
    pub mean_p: Option<f64>,
}

/// Anything that maps a batch of step inputs (`[B, I]` each) to outputs.
pub trait Predictor {
    /// With `per_step` the prediction holds one output per input step,
    /// otherwise a single output for the whole sequence. `seed` drives any
    /// sampling.
    fn predict(&self, inputs: &[Tensor], per_step: bool, seed: u64) -> Result<Prediction>;
}

/// Tape handles for one forward/backward pass.
pub struct TrackedNetwork<'t> {
    pub vars: BTreeMap<String, Var<'t>>,
}

impl<'t> TrackedNetwork<'t> {
    fn get(&self, name: &str) -> Var<'t> {
        self.vars[name]
    }

    fn lstm(&self) -> LstmVars<'t> {
        LstmVars {
            w_ih: self.get("lstm.w_ih"),
            w_hh: self.get("lstm.w_hh"),
            bias: self.get("lstm.bias"),
        }
    }

    fn novelty(&self) -> NoveltyVars<'t> {
        NoveltyVars {
            weight: self.get("novelty.W"),
            bias: self.get("novelty.b"),
        }
    }

    fn head(&self) -> HeadVars<'t> {
        HeadVars {
            weight: self.get("head.w"),
            bias: self.get("head.b"),
        }
    }
}

/// Differentiable forward result.
pub struct ForwardPass<'t> {
    pub outputs: Vec<Var<'t>>,
    /// Per-step novelty `[B, 1]`; empty for the plain LSTM.
    pub ps: Vec<Var<'t>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Network {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.output == 0 {
            return Err(Error::InvalidArgument("output size must be positive".into()));
        }
        if config.kind == ModelKind::Lz {
            config.lz.backend.validate_dim(config.hidden)?;
        }
        let mut params = ParamSet::new();
        let lstm = init_lstm(config.input, config.hidden, seed)?;
        params.insert("lstm.w_ih".into(), lstm.w_ih);
        params.insert("lstm.w_hh".into(), lstm.w_hh);
        params.insert("lstm.bias".into(), lstm.bias);
        if config.kind == ModelKind::Lz {
            let nov = init_novelty(config.hidden, config.bias_init, seed.wrapping_add(1))?;
            params.insert("novelty.W".into(), nov.weight);
            params.insert("novelty.b".into(), nov.bias);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = (0..config.hidden * config.output).map(|_| dist.sample(&mut rng)).collect();
        params.insert("head.w".into(), Tensor::matrix(config.hidden, config.output, w)?);
        params.insert("head.b".into(), Tensor::zeros(&[config.output]));
        Ok(Self { config, params })
    }

    /// Checks that `params` has exactly the expected names and shapes.
    pub fn with_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::init(config, 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, t) in &reference.params {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::ShapeMismatch {
                        op: "load parameter",
                        lhs: t.shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    })
                }
                None => return Err(Error::Config(format!("missing parameter `{name}`"))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn lstm_params(&self) -> LstmParams {
        LstmParams {
            w_ih: self.params["lstm.w_ih"].clone(),
            w_hh: self.params["lstm.w_hh"].clone(),
            bias: self.params["lstm.bias"].clone(),
        }
    }

    pub fn novelty_params(&self) -> Option<NoveltyParams> {
        Some(NoveltyParams {
            weight: self.params.get("novelty.W")?.clone(),
            bias: self.params.get("novelty.b")?.clone(),
        })
    }

    pub fn track<'t>(&self, tape: &'t Tape) -> TrackedNetwork<'t> {
        TrackedNetwork {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    /// Forward pass on the tape. Hard mode draws from one stream per row,
    /// derived from `seed` and the row index.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        net: &TrackedNetwork<'t>,
        inputs: &[Var<'t>],
        per_step: bool,
        seed: u64,
    ) -> Result<ForwardPass<'t>> {
        let first = inputs.first().ok_or(Error::EmptySequence)?;
        let (batch, width) = first.dims();
        if width != self.config.input {
            return Err(Error::DimensionMismatch {
                expected: self.config.input,
                got: width,
            });
        }
        let head = net.head();
        let lstm = net.lstm();
        let (features, ps) = match self.config.kind {
            ModelKind::Lstm => {
                let hs = lstm_forward_batch(tape, inputs, &lstm)?;
                let features = if per_step { hs } else { vec![*hs.last().expect("non-empty")] };
                (features, Vec::new())
            }
            ModelKind::Lz => {
                let mut rngs: Vec<ChaCha8Rng> = (0..batch as u64).map(|i| sequence_rng(seed, i)).collect();
                let trace = lz_forward_batch(tape, inputs, &lstm, &net.novelty(), &self.config.lz, Some(&mut rngs))?;
                let features = if per_step {
                    trace.h_hats
                } else {
                    match self.config.readout {
                        ReadoutSource::FinalHidden => vec![*trace.h_hats.last().expect("non-empty")],
                        ReadoutSource::Memory => vec![trace.memory.summary(batch, self.config.hidden, tape)?],
                    }
                };
                (features, trace.ps)
            }
        };
        let outputs = features
            .into_iter()
            .map(|f| head.apply(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardPass { outputs, ps })
    }
}

/// Mean of the per-step `[B, 1]` novelty scores.
pub fn mean_novelty(ps: &[Var<'_>]) -> Option<f64> {
    if ps.is_empty() {
        return None;
    }
    let (total, count) = ps.iter().fold((0.0, 0usize), |(s, n), p| {
        let v = p.value();
        (s + v.data().iter().sum::<f64>(), n + v.len())
    });
    Some(total / count as f64)
}

impl Predictor for Network {
    fn predict(&self, inputs: &[Tensor], per_step: bool, seed: u64) -> Result<Prediction> {
        let tape = Tape::new();
        let net = self.track(&tape);
        let xs: Vec<Var<'_>> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let fwd = self.forward(&tape, &net, &xs, per_step, seed)?;
        Ok(Prediction {
            outputs: fwd.outputs.iter().map(|o| o.value()).collect(),
            mean_p: mean_novelty(&fwd.ps),
        })
    }
}
