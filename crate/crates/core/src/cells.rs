//! LSTM cell and the bilinear novelty score.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// LSTM weights. Gate blocks are laid out along the columns in the order
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[input, 4 * hidden]`
    pub w_ih: Tensor,
    /// `[hidden, 4 * hidden]`
    pub w_hh: Tensor,
    /// `[4 * hidden]`
    pub bias: Tensor,
}

impl LstmParams {
    pub fn input_size(&self) -> usize {
        self.w_ih.dims().0
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.dims().0
    }

    /// All-zero weights and biases.
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[input, 4 * hidden]),
            w_hh: Tensor::zeros(&[hidden, 4 * hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn track<'t>(&self, tape: &'t Tape) -> LstmVars<'t> {
        LstmVars {
            w_ih: tape.param(self.w_ih.clone()),
            w_hh: tape.param(self.w_hh.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars<'t> {
    pub w_ih: Var<'t>,
    pub w_hh: Var<'t>,
    pub bias: Var<'t>,
}

/// Bilinear novelty weights `W` (`[hidden, hidden]`) and scalar bias `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl NoveltyParams {
    /// `W = 0` with the given bias.
    pub fn constant(hidden: usize, bias: f64) -> Self {
        Self {
            weight: Tensor::zeros(&[hidden, hidden]),
            bias: Tensor::scalar(bias),
        }
    }

    pub fn track<'t>(&self, tape: &'t Tape) -> NoveltyVars<'t> {
        NoveltyVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NoveltyVars<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

/// Initial value of the novelty bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasInit {
    MinusOne,
    Zero,
    One,
}

impl BiasInit {
    pub const ALL: [BiasInit; 3] = [BiasInit::MinusOne, BiasInit::Zero, BiasInit::One];

    pub fn value(self) -> f64 {
        match self {
            BiasInit::MinusOne => -1.0,
            BiasInit::Zero => 0.0,
            BiasInit::One => 1.0,
        }
    }
}

impl fmt::Display for BiasInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value() as i32)
    }
}

impl FromStr for BiasInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "-1" => Ok(BiasInit::MinusOne),
            "0" => Ok(BiasInit::Zero),
            "1" | "+1" => Ok(BiasInit::One),
            other => Err(Error::InvalidArgument(format!(
                "bias init `{other}` must be one of -1, 0, 1"
            ))),
        }
    }
}

/// Whether the novelty score is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoveltyMode {
    /// `p = σ(·)`, a probability.
    Soft,
    /// `p ~ Bernoulli(σ(·))` with a straight-through gradient.
    Hard,
}

impl fmt::Display for NoveltyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoveltyMode::Soft => "soft",
            NoveltyMode::Hard => "hard",
        })
    }
}

impl FromStr for NoveltyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(NoveltyMode::Soft),
            "hard" => Ok(NoveltyMode::Hard),
            other => Err(Error::InvalidArgument(format!(
                "novelty mode `{other}` must be soft or hard"
            ))),
        }
    }
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

fn check_sizes(input: usize, hidden: usize) -> Result<()> {
    if input == 0 || hidden == 0 {
        return Err(Error::InvalidArgument(format!(
            "layer sizes must be positive (input {input}, hidden {hidden})"
        )));
    }
    Ok(())
}

/// Weights and biases uniform in `[-1/sqrt(H), 1/sqrt(H)]`, forget bias `+1`.
pub fn init_lstm(input: usize, hidden: usize, seed: u64) -> Result<LstmParams> {
    check_sizes(input, hidden)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (hidden as f64).sqrt();
    let w_ih = uniform_tensor(&[input, 4 * hidden], bound, &mut rng);
    let w_hh = uniform_tensor(&[hidden, 4 * hidden], bound, &mut rng);
    let mut bias = uniform_tensor(&[4 * hidden], bound, &mut rng);
    bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
    Ok(LstmParams { w_ih, w_hh, bias })
}

/// `W` uniform in `[-1/sqrt(H), 1/sqrt(H)]`, bias exactly `bias_init`.
pub fn init_novelty(hidden: usize, bias_init: BiasInit, seed: u64) -> Result<NoveltyParams> {
    check_sizes(1, hidden)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (hidden as f64).sqrt();
    Ok(NoveltyParams {
        weight: uniform_tensor(&[hidden, hidden], bound, &mut rng),
        bias: Tensor::scalar(bias_init.value()),
    })
}

/// One LSTM step on a batch: `x` is `[B, I]`, `h` and `c` are `[B, H]`.
/// Returns the new hidden and cell states.
pub fn lstm_cell<'t>(x: Var<'t>, h: Var<'t>, c: Var<'t>, p: &LstmVars<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let hidden = p.w_hh.dims().0;
    if h.dims() != c.dims() || h.dims().1 != hidden {
        return Err(Error::ShapeMismatch {
            op: "lstm_cell",
            lhs: h.shape(),
            rhs: c.shape(),
        });
    }
    let gates = x.matmul(p.w_ih)?.add(h.matmul(p.w_hh)?)?.add(p.bias)?;
    let i = gates.slice_cols(0, hidden)?.sigmoid();
    let f = gates.slice_cols(hidden, hidden)?.sigmoid();
    let g = gates.slice_cols(2 * hidden, hidden)?.tanh();
    let o = gates.slice_cols(3 * hidden, hidden)?.sigmoid();
    let c_next = f.mul(c)?.add(i.mul(g)?)?;
    let h_next = o.mul(c_next.tanh())?;
    Ok((h_next, c_next))
}

/// `σ(r̂ᵀ W r + b)` per row, shape `[B, 1]`. In hard mode the score is
/// thresholded against `uniforms` (one per row) with a straight-through
/// gradient.
pub fn novelty_score<'t>(
    r_hat: Var<'t>,
    r: Var<'t>,
    p: &NoveltyVars<'t>,
    mode: NoveltyMode,
    uniforms: Option<&[f64]>,
) -> Result<Var<'t>> {
    let s = r_hat.bilinear(p.weight, r, p.bias)?.sigmoid();
    match mode {
        NoveltyMode::Soft => Ok(s),
        NoveltyMode::Hard => {
            let u = uniforms.ok_or_else(|| {
                Error::InvalidArgument("hard novelty mode needs uniform draws".into())
            })?;
            s.bernoulli(u, true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use rand::Rng;

    fn sig(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    /// Scalar-loop LSTM step, independent of the tape.
    fn scalar_lstm(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
        let hid = h.len();
        let inp = x.len();
        let w_ih = p.w_ih.data();
        let w_hh = p.w_hh.data();
        let b = p.bias.data();
        let pre = |k: usize| {
            let mut acc = b[k];
            for a in 0..inp {
                acc += x[a] * w_ih[a * 4 * hid + k];
            }
            for a in 0..hid {
                acc += h[a] * w_hh[a * 4 * hid + k];
            }
            acc
        };
        let mut h_out = vec![0.0; hid];
        let mut c_out = vec![0.0; hid];
        for j in 0..hid {
            let i = sig(pre(j));
            let f = sig(pre(hid + j));
            let g = pre(2 * hid + j).tanh();
            let o = sig(pre(3 * hid + j));
            c_out[j] = f * c[j] + i * g;
            h_out[j] = o * c_out[j].tanh();
        }
        (h_out, c_out)
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_give_half_gates() {
        let tape = Tape::new();
        let p = LstmParams::zeros(3, 4).track(&tape);
        let x = tape.constant(Tensor::matrix(1, 3, rand_vec(3, 1)).unwrap());
        let h = tape.constant(Tensor::zeros(&[1, 4]));
        let c = tape.constant(Tensor::zeros(&[1, 4]));
        let (h1, c1) = lstm_cell(x, h, c, &p).unwrap();
        assert!(h1.value().data().iter().all(|&v| v == 0.0));
        assert!(c1.value().data().iter().all(|&v| v == 0.0));

        let cv = rand_vec(4, 2);
        let c = tape.constant(Tensor::matrix(1, 4, cv.clone()).unwrap());
        let (h1, c1) = lstm_cell(x, h, c, &p).unwrap();
        for k in 0..4 {
            assert!((c1.value().data()[k] - 0.5 * cv[k]).abs() < 1e-15);
            assert!((h1.value().data()[k] - 0.5 * (0.5 * cv[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let p = init_lstm(5, 8, 3).unwrap();
        let (x, h, c) = (rand_vec(5, 4), rand_vec(8, 5), rand_vec(8, 6));
        let tape = Tape::new();
        let vars = p.track(&tape);
        let (hv, cv) = lstm_cell(
            tape.constant(Tensor::matrix(1, 5, x.clone()).unwrap()),
            tape.constant(Tensor::matrix(1, 8, h.clone()).unwrap()),
            tape.constant(Tensor::matrix(1, 8, c.clone()).unwrap()),
            &vars,
        )
        .unwrap();
        let (ho, co) = scalar_lstm(&x, &h, &c, &p);
        for k in 0..8 {
            assert!((hv.value().data()[k] - ho[k]).abs() < 1e-12);
            assert!((cv.value().data()[k] - co[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_cell_rejects_bad_shapes() {
        let tape = Tape::new();
        let p = LstmParams::zeros(3, 4).track(&tape);
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let h = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(lstm_cell(x, h, h, &p).is_err());
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let h5 = tape.constant(Tensor::zeros(&[1, 5]));
        assert!(lstm_cell(x, h5, h5, &p).is_err());
    }

    #[test]
    fn init_contract() {
        let a = init_lstm(2, 6, 11).unwrap();
        assert_eq!(a, init_lstm(2, 6, 11).unwrap());
        assert!(a.bias.data()[6..12].iter().all(|&b| b == 1.0));
        let bound = 1.0 / 6f64.sqrt();
        assert!(a.w_hh.data().iter().all(|v| v.abs() <= bound));
        let n = init_novelty(6, BiasInit::MinusOne, 2).unwrap();
        assert_eq!(n.bias.item(), -1.0);
        assert_eq!(init_novelty(6, BiasInit::One, 2).unwrap().bias.item(), 1.0);
        assert!(init_lstm(0, 4, 1).is_err());
        assert!(init_novelty(0, BiasInit::Zero, 1).is_err());
    }

    fn score(bias: f64, mode: NoveltyMode, uniforms: Option<&[f64]>) -> f64 {
        let tape = Tape::new();
        let p = NoveltyParams::constant(4, bias).track(&tape);
        let r_hat = tape.constant(Tensor::matrix(1, 4, rand_vec(4, 1)).unwrap());
        let r = tape.constant(Tensor::matrix(1, 4, rand_vec(4, 2)).unwrap());
        novelty_score(r_hat, r, &p, mode, uniforms).unwrap().item()
    }

    #[test]
    fn novelty_examples() {
        assert_eq!(score(0.0, NoveltyMode::Soft, None), 0.5);
        assert!((score(1.0, NoveltyMode::Soft, None) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((score(-1.0, NoveltyMode::Soft, None) - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert_eq!(score(1e3, NoveltyMode::Hard, Some(&[0.999_999])), 1.0);
        assert_eq!(score(-1e3, NoveltyMode::Hard, Some(&[0.0])), 0.0);
    }

    #[test]
    fn novelty_swap_symmetry() {
        let (a, b) = (rand_vec(5, 1), rand_vec(5, 2));
        let w = Tensor::matrix(5, 5, rand_vec(25, 3)).unwrap();
        let mut wt = vec![0.0; 25];
        for i in 0..5 {
            for j in 0..5 {
                wt[j * 5 + i] = w.data()[i * 5 + j];
            }
        }
        let eval = |x: &[f64], y: &[f64], w: Tensor| {
            let tape = Tape::new();
            let p = NoveltyParams {
                weight: w,
                bias: Tensor::scalar(0.3),
            }
            .track(&tape);
            let x = tape.constant(Tensor::matrix(1, 5, x.to_vec()).unwrap());
            let y = tape.constant(Tensor::matrix(1, 5, y.to_vec()).unwrap());
            novelty_score(x, y, &p, NoveltyMode::Soft, None).unwrap().item()
        };
        let lhs = eval(&a, &b, w);
        let rhs = eval(&b, &a, Tensor::matrix(5, 5, wt).unwrap());
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn hard_mode_emits_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let u: f64 = rng.random();
            let p = score(0.2, NoveltyMode::Hard, Some(&[u]));
            assert!(p == 0.0 || p == 1.0);
        }
    }

    #[test]
    fn straight_through_is_unbiased() {
        // loss (p - t)^2: E[2 (b - t) σ'] = 2 (σ - t) σ'
        let (r_hat, r) = (rand_vec(4, 1), rand_vec(4, 2));
        let target = 0.2;
        let grad_bias = |mode: NoveltyMode, u: Option<f64>| {
            let tape = Tape::new();
            let p = NoveltyParams::constant(4, 0.4).track(&tape);
            let x = tape.constant(Tensor::matrix(1, 4, r_hat.clone()).unwrap());
            let y = tape.constant(Tensor::matrix(1, 4, r.clone()).unwrap());
            let u = u.map(|u| vec![u]);
            let s = novelty_score(x, y, &p, mode, u.as_deref()).unwrap();
            let loss = s.mse(&[target]).unwrap();
            tape.backward(loss).unwrap().wrt(p.bias).item()
        };
        let soft = grad_bias(NoveltyMode::Soft, None);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let hard: f64 = (0..n)
            .map(|_| grad_bias(NoveltyMode::Hard, Some(rng.random())))
            .sum::<f64>()
            / n as f64;
        assert!(((hard - soft) / soft).abs() < 0.05, "soft {soft} hard {hard}");
    }

    #[test]
    fn cells_pass_grad_check() {
        let p = init_lstm(3, 8, 1).unwrap();
        let inputs = vec![
            Tensor::matrix(2, 3, rand_vec(6, 2)).unwrap(),
            Tensor::matrix(2, 8, rand_vec(16, 3)).unwrap(),
            Tensor::matrix(2, 8, rand_vec(16, 4)).unwrap(),
            p.w_ih.clone(),
            p.w_hh.clone(),
            p.bias.clone(),
        ];
        let target = rand_vec(16, 5);
        let err = grad_check(
            |_, v| {
                let vars = LstmVars {
                    w_ih: v[3],
                    w_hh: v[4],
                    bias: v[5],
                };
                let (h, _) = lstm_cell(v[0], v[1], v[2], &vars)?;
                h.mse(&target)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "lstm {err}");

        let n = init_novelty(6, BiasInit::Zero, 3).unwrap();
        let inputs = vec![
            Tensor::matrix(3, 6, rand_vec(18, 6)).unwrap(),
            Tensor::matrix(3, 6, rand_vec(18, 7)).unwrap(),
            n.weight.clone(),
            n.bias.clone(),
        ];
        let err = grad_check(
            |_, v| {
                let vars = NoveltyVars {
                    weight: v[2],
                    bias: v[3],
                };
                novelty_score(v[0], v[1], &vars, NoveltyMode::Soft, None)?.mse(&[0.1, 0.9, 0.4])
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "novelty {err}");
    }
}
