use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::ParamSet;

use super::config::OptimizerKind;

fn check_lengths(op: &'static str, theta: &[f64], g: &[f64], state: &[f64]) -> Result<()> {
    if theta.len() != g.len() || theta.len() != state.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![theta.len()],
            rhs: vec![g.len(), state.len()],
        });
    }
    Ok(())
}

/// `v ← decay·v + (1−decay)·g²`, `θ ← θ − lr·g/(√v + eps)`.
pub fn rmsprop_step(theta: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, decay: f64, eps: f64) -> Result<()> {
    check_lengths("rmsprop", theta, g, v)?;
    for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = decay * *vi + (1.0 - decay) * gi * gi;
        *t -= lr * gi / (vi.sqrt() + eps);
    }
    Ok(())
}

/// Adam with bias correction; `step` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    theta: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_lengths("adam", theta, g, m)?;
    check_lengths("adam", theta, g, v)?;
    let c1 = 1.0 - beta1.powf(step as f64);
    let c2 = 1.0 - beta2.powf(step as f64);
    for (((t, &gi), mi), vi) in theta.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = beta1 * *mi + (1.0 - beta1) * gi;
        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *t -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

pub const EPS: f64 = 1e-8;

/// Stateful optimizer over a named parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    first: ParamSet,
    second: ParamSet,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            first: ParamSet::new(),
            second: ParamSet::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        self.step += 1;
        for (name, theta) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("no gradient for `{name}`")))?;
            let zeros = || Tensor::zeros(theta.shape());
            let v = self.second.entry(name.clone()).or_insert_with(zeros);
            match self.kind {
                OptimizerKind::RmsProp { decay } => {
                    rmsprop_step(theta.data_mut(), g.data(), v.data_mut(), self.lr, decay, EPS)?
                }
                OptimizerKind::Adam { beta1, beta2 } => {
                    let m = self.first.entry(name.clone()).or_insert_with(zeros);
                    adam_step(
                        theta.data_mut(),
                        g.data(),
                        m.data_mut(),
                        v.data_mut(),
                        self.step,
                        self.lr,
                        beta1,
                        beta2,
                        EPS,
                    )?
                }
            }
        }
        Ok(())
    }

    /// Internal state as named tensors, for checkpoints.
    pub fn export(&self) -> ParamSet {
        let mut out = ParamSet::new();
        out.insert("opt.step".into(), Tensor::scalar(self.step as f64));
        for (k, v) in &self.first {
            out.insert(format!("opt.m.{k}"), v.clone());
        }
        for (k, v) in &self.second {
            out.insert(format!("opt.v.{k}"), v.clone());
        }
        out
    }

    /// Restores state written by [`Optimizer::export`]; other entries are ignored.
    pub fn import(&mut self, state: &ParamSet) -> Result<()> {
        let step = state
            .get("opt.step")
            .ok_or_else(|| Error::CorruptCheckpoint("missing optimizer step".into()))?;
        self.step = step.item() as u64;
        self.first.clear();
        self.second.clear();
        for (k, v) in state {
            if let Some(name) = k.strip_prefix("opt.m.") {
                self.first.insert(name.to_string(), v.clone());
            } else if let Some(name) = k.strip_prefix("opt.v.") {
                self.second.insert(name.to_string(), v.clone());
            }
        }
        Ok(())
    }
}
