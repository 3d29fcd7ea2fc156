//! Finite-difference checks of every differentiable operation and of the
//! composite cells, as a reusable table. The Bernoulli sample is piecewise
//! constant, so it has no finite-difference counterpart and is left out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{concat_cols, grad_check, Tape, Tensor, Var};
use crate::cells::{lstm_cell, novelty_score, LstmVars, NoveltyMode, NoveltyVars};
use crate::error::Result;
use crate::layer::{lz_forward_batch, HeadVars, LzConfig};
use crate::memory::BackendKind;

/// Tolerance for single primitives.
pub const PRIMITIVE_RTOL: f64 = 1e-4;
/// Tolerance for cells and the full layer.
pub const COMPOSITE_RTOL: f64 = 1e-3;
const EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_err <= self.tolerance
    }
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| self.0.random_range(lo..hi)).collect()).expect("valid shape")
    }

    fn t(&mut self, shape: &[usize]) -> Tensor {
        self.tensor(shape, -1.0, 1.0)
    }
}

/// Reduces `v` to a scalar with fixed random weights so no coordinate's
/// gradient vanishes by symmetry.
fn project<'t>(tape: &'t Tape, v: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed ^ 0xABCD));
    let w = tape.constant(g.tensor(&v.shape(), 0.5, 1.5));
    Ok(v.mul(w)?.sum())
}

type Case = (&'static str, Box<dyn Fn(&mut Gen) -> Result<f64>>);

fn check<F>(f: F, inputs: Vec<Tensor>) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check(f, &inputs, EPS)
}

fn primitive_cases() -> Vec<Case> {
    vec![
        ("add", Box::new(|g| check(|t, x| project(t, x[0].add(x[1])?, 1), vec![g.t(&[3, 4]), g.t(&[1, 4])]))),
        ("sub", Box::new(|g| check(|t, x| project(t, x[0].sub(x[1])?, 2), vec![g.t(&[3, 4]), g.t(&[3, 1])]))),
        ("mul", Box::new(|g| check(|t, x| project(t, x[0].mul(x[1])?, 3), vec![g.t(&[3, 4]), g.t(&[4])]))),
        ("affine", Box::new(|g| check(|t, x| project(t, x[0].affine(-1.7, 0.3), 4), vec![g.t(&[2, 5])]))),
        ("one_minus", Box::new(|g| check(|t, x| project(t, x[0].one_minus(), 5), vec![g.t(&[2, 5])]))),
        ("matmul", Box::new(|g| check(|t, x| project(t, x[0].matmul(x[1])?, 6), vec![g.t(&[3, 4]), g.t(&[4, 5])]))),
        (
            "bilinear",
            Box::new(|g| {
                check(
                    |t, x| project(t, x[0].bilinear(x[1], x[2], x[3])?, 7),
                    vec![g.t(&[3, 4]), g.t(&[4, 4]), g.t(&[3, 4]), g.t(&[1])],
                )
            }),
        ),
        ("sigmoid", Box::new(|g| check(|t, x| project(t, x[0].sigmoid(), 8), vec![g.tensor(&[2, 5], -3.0, 3.0)]))),
        ("tanh", Box::new(|g| check(|t, x| project(t, x[0].tanh(), 9), vec![g.tensor(&[2, 5], -2.0, 2.0)]))),
        ("softmax", Box::new(|g| check(|t, x| project(t, x[0].softmax(), 10), vec![g.t(&[3, 5])]))),
        (
            "concat_cols",
            Box::new(|g| check(|t, x| project(t, concat_cols(&[x[0], x[1]])?, 11), vec![g.t(&[2, 3]), g.t(&[2, 2])])),
        ),
        ("slice_cols", Box::new(|g| check(|t, x| project(t, x[0].slice_cols(1, 3)?, 12), vec![g.t(&[2, 6])]))),
        ("sum", Box::new(|g| check(|_, x| Ok(x[0].tanh().sum()), vec![g.t(&[2, 3])]))),
        ("mean", Box::new(|g| check(|_, x| Ok(x[0].tanh().mean()), vec![g.t(&[2, 3])]))),
        (
            "circ_conv",
            Box::new(|g| check(|t, x| project(t, x[0].circ_conv(x[1])?, 13), vec![g.t(&[2, 9]), g.t(&[1, 9])])),
        ),
        ("unitary_project", Box::new(|g| check(|t, x| project(t, x[0].unitary_project()?, 14), vec![g.t(&[2, 8])]))),
        ("involution", Box::new(|g| check(|t, x| project(t, x[0].involution(), 15), vec![g.t(&[2, 7])]))),
        (
            "hrr_pseudo_inverse",
            Box::new(|g| check(|t, x| project(t, x[0].hrr_pseudo_inverse()?, 16), vec![g.t(&[2, 9])])),
        ),
        ("vtb_bind", Box::new(|g| check(|t, x| project(t, x[0].vtb_bind(x[1])?, 17), vec![g.t(&[2, 9]), g.t(&[2, 9])]))),
        (
            "vtb_unbind",
            Box::new(|g| check(|t, x| project(t, x[0].vtb_unbind(x[1])?, 18), vec![g.t(&[2, 16]), g.t(&[2, 16])])),
        ),
        (
            "hopfield_retrieve",
            Box::new(|g| {
                check(
                    |t, x| project(t, x[0].hopfield_retrieve(&x[1..4], &x[4..7], 0.8)?, 19),
                    vec![
                        g.t(&[2, 5]),
                        g.t(&[2, 5]),
                        g.t(&[2, 5]),
                        g.t(&[2, 5]),
                        g.tensor(&[2, 1], 0.2, 1.0),
                        g.tensor(&[2, 1], 0.2, 1.0),
                        g.tensor(&[2, 1], 0.2, 1.0),
                    ],
                )
            }),
        ),
        (
            "mse",
            Box::new(|g| {
                let target = g.t(&[6]).into_data();
                check(move |_, x| x[0].mse(&target), vec![g.t(&[2, 3])])
            }),
        ),
        (
            "softmax_cross_entropy",
            Box::new(|g| check(|_, x| x[0].softmax_cross_entropy(&[2, 0, 3]), vec![g.t(&[3, 4])])),
        ),
    ]
}

fn composite_cases() -> Vec<Case> {
    let mut cases: Vec<Case> = vec![
        (
            "lstm_cell",
            Box::new(|g| {
                check(
                    |t, x| {
                        let p = LstmVars {
                            w_ih: x[3],
                            w_hh: x[4],
                            bias: x[5],
                        };
                        let (h, c) = lstm_cell(x[0], x[1], x[2], &p)?;
                        project(t, h, 20)?.add(project(t, c, 21)?)
                    },
                    vec![g.t(&[2, 3]), g.t(&[2, 4]), g.t(&[2, 4]), g.t(&[3, 16]), g.t(&[4, 16]), g.t(&[16])],
                )
            }),
        ),
        (
            "novelty_score",
            Box::new(|g| {
                check(
                    |t, x| {
                        let nv = NoveltyVars {
                            weight: x[2],
                            bias: x[3],
                        };
                        project(t, novelty_score(x[0], x[1], &nv, NoveltyMode::Soft, None)?, 22)
                    },
                    vec![g.t(&[2, 5]), g.t(&[2, 5]), g.t(&[5, 5]), g.t(&[1])],
                )
            }),
        ),
    ];
    for (name, backend) in [
        ("lz_forward[hrr]", BackendKind::Hrr),
        ("lz_forward[vtb]", BackendKind::Vtb),
        ("lz_forward[hopfield]", BackendKind::Hopfield),
    ] {
        cases.push((name, Box::new(move |g| lz_forward_case(g, backend))));
    }
    cases
}

/// Scalar loss of a `T = 5`, `H = 9` soft-mode layer plus head, checked with
/// respect to every LSTM, novelty and head parameter.
fn lz_forward_case(g: &mut Gen, backend: BackendKind) -> Result<f64> {
    let (steps, input, hidden) = (5, 2, 9);
    let xs: Vec<Tensor> = (0..steps).map(|_| g.t(&[1, input])).collect();
    let target = g.t(&[1]).into_data();
    let cfg = LzConfig {
        memory_seed: 3,
        ..LzConfig::new(backend)
    };
    let scale = 1.0 / (hidden as f64).sqrt();
    let params = vec![
        g.tensor(&[input, 4 * hidden], -scale, scale),
        g.tensor(&[hidden, 4 * hidden], -scale, scale),
        g.tensor(&[4 * hidden], -scale, scale),
        g.tensor(&[hidden, hidden], -scale, scale),
        g.t(&[1]),
        g.t(&[hidden, 1]),
        g.t(&[1]),
    ];
    check(
        move |tape, v| {
            let inputs: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            let lstm = LstmVars {
                w_ih: v[0],
                w_hh: v[1],
                bias: v[2],
            };
            let nov = NoveltyVars {
                weight: v[3],
                bias: v[4],
            };
            let head = HeadVars {
                weight: v[5],
                bias: v[6],
            };
            let trace = lz_forward_batch(tape, &inputs, &lstm, &nov, &cfg, None)?;
            head.apply(*trace.h_hats.last().expect("non-empty"))?.mse(&target)
        },
        params,
    )
}

fn run(cases: Vec<Case>, tolerance: f64, seed: u64) -> Result<Vec<CheckResult>> {
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut g = Gen(ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)));
            Ok(CheckResult {
                name,
                rel_err: f(&mut g)?,
                tolerance,
            })
        })
        .collect()
}

/// One row per differentiable primitive.
pub fn primitive_suite(seed: u64) -> Result<Vec<CheckResult>> {
    run(primitive_cases(), PRIMITIVE_RTOL, seed)
}

/// The LSTM cell, the novelty score and the full layer on each backend.
pub fn composite_suite(seed: u64) -> Result<Vec<CheckResult>> {
    run(composite_cases(), COMPOSITE_RTOL, seed)
}
