//! Round-trip and capacity measurements for the VSA backends.

use crate::error::{Error, Result};
use crate::memory::{AssociativeMemory, BackendKind};
use crate::vsa::{self, HyperVector};

fn unit(v: HyperVector) -> HyperVector {
    let n = v.norm();
    v.scale(1.0 / n)
}

fn trial_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x1000_0000_01B3).wrapping_add(i)
}

/// Cosine between `x` and `unbind(bind(x, y), y)` for `trials` seeded pairs.
/// HRR pairs are unitary; VTB pairs are random unit vectors.
pub fn round_trip(kind: BackendKind, d: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    (0..trials as u64)
        .map(|i| {
            let a = vsa::random_hypervector(d, trial_seed(seed, 2 * i))?;
            let b = vsa::random_hypervector(d, trial_seed(seed, 2 * i + 1))?;
            let (a, back) = match kind {
                BackendKind::Hrr => {
                    let (a, b) = (vsa::project_unitary(&a)?, vsa::project_unitary(&b)?);
                    let back = vsa::unbind_hrr(&vsa::bind_hrr(&a, &b)?, &b)?;
                    (a, back)
                }
                BackendKind::Vtb => {
                    let (a, b) = (unit(a), unit(b));
                    let back = vsa::unbind_vtb(&vsa::bind_vtb(&a, &b)?, &b)?;
                    (a, back)
                }
                BackendKind::Hopfield => {
                    return Err(Error::InvalidArgument("round trips need a VSA backend".into()))
                }
            };
            vsa::cosine_similarity(&back, &a)
        })
        .collect()
}

/// Tag similarities of stored items and of fresh random queries for one memory.
pub fn tag_scores(kind: BackendKind, d: usize, n_stored: usize, n_fresh: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mem = AssociativeMemory::new(kind, d, trial_seed(seed, 0))?;
    let items = (0..n_stored as u64)
        .map(|i| vsa::project_unitary(&vsa::random_hypervector(d, trial_seed(seed, 1 + i))?))
        .collect::<Result<Vec<_>>>()?;
    for v in &items {
        mem.insert(v, 1.0)?;
    }
    let stored = items
        .iter()
        .map(|v| Ok(mem.query(v)?.similarity()))
        .collect::<Result<Vec<_>>>()?;
    let fresh = (0..n_fresh as u64)
        .map(|i| {
            let q = vsa::random_hypervector(d, trial_seed(seed, 1_000_000 + i))?;
            Ok(mem.query(&q)?.similarity())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((stored, fresh))
}

/// Threshold maximising balanced accuracy, searched over midpoints of the
/// pooled sorted scores.
pub fn calibrate_threshold(stored: &[f64], fresh: &[f64]) -> f64 {
    let mut pooled: Vec<f64> = stored.iter().chain(fresh).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for w in pooled.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let acc = balanced_accuracy(stored, fresh, t);
        if acc > best.0 {
            best = (acc, t);
        }
    }
    best.1
}

fn balanced_accuracy(stored: &[f64], fresh: &[f64], t: f64) -> f64 {
    let tp = stored.iter().filter(|&&s| s > t).count() as f64 / stored.len() as f64;
    let tn = fresh.iter().filter(|&&s| s <= t).count() as f64 / fresh.len() as f64;
    0.5 * (tp + tn)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separability {
    pub threshold: f64,
    /// Fraction of all held-out queries classified correctly.
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

/// Calibrates a threshold on one memory (seed `seed`) and scores a second,
/// independently drawn memory with it.
pub fn separability(kind: BackendKind, d: usize, n_stored: usize, n_fresh: usize, seed: u64) -> Result<Separability> {
    let (cs, cf) = tag_scores(kind, d, n_stored, n_fresh, seed)?;
    let threshold = calibrate_threshold(&cs, &cf);
    let (s, f) = tag_scores(kind, d, n_stored, n_fresh, seed.wrapping_add(1))?;
    let correct = s.iter().filter(|&&x| x > threshold).count() + f.iter().filter(|&&x| x <= threshold).count();
    Ok(Separability {
        threshold,
        accuracy: correct as f64 / (s.len() + f.len()) as f64,
        balanced_accuracy: balanced_accuracy(&s, &f, threshold),
    })
}
