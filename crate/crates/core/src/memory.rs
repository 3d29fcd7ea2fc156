//! Insert/query associative memories.
//!
//! Three backends share one surface:
//!
//! - `Hrr` / `Vtb`: a VSA bundle `m = Σ pₜ B(vₜ, tag)` with a fixed unitary tag.
//!   Querying with `q` unbinds `q` from the bundle; the result approximates the
//!   tag when `q` was stored.
//! - `Hopfield`: a weighted pattern store answered by one softmax retrieval step.
//!
//! [`QueryResult`] carries the reconstruction `r_hat` and the reference `r` it
//! should be compared against (the tag for VSA backends, the query itself for
//! Hopfield).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::vsa::{self, HyperVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    Hrr,
    Vtb,
    Hopfield,
}

impl BackendKind {
    pub fn is_vsa(self) -> bool {
        !matches!(self, BackendKind::Hopfield)
    }

    /// Checks that `d` is usable by this backend.
    pub fn validate_dim(self, d: usize) -> Result<()> {
        if d < 2 {
            return Err(Error::InvalidDimension {
                dim: d,
                reason: "memories need d >= 2",
            });
        }
        if self == BackendKind::Vtb {
            vsa::vtb_side(d)?;
        }
        Ok(())
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Hrr => "hrr",
            BackendKind::Vtb => "vtb",
            BackendKind::Hopfield => "hopfield",
        })
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hrr" => Ok(BackendKind::Hrr),
            "vtb" => Ok(BackendKind::Vtb),
            "hopfield" => Ok(BackendKind::Hopfield),
            other => Err(Error::InvalidArgument(format!(
                "unknown backend `{other}` (expected hrr, vtb or hopfield)"
            ))),
        }
    }
}

/// Tag vector used by VSA memories built from `seed`.
pub fn memory_tag(d: usize, seed: u64) -> Result<HyperVector> {
    vsa::project_unitary(&vsa::random_hypervector(d, seed)?)
}

/// Default Hopfield inverse temperature `1/sqrt(d)`.
pub fn default_beta(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub r_hat: HyperVector,
    pub r: HyperVector,
}

impl QueryResult {
    /// Cosine between `r_hat` and `r`, with a zero-norm side counted as 0.
    pub fn similarity(&self) -> f64 {
        vsa::cosine_similarity(&self.r_hat, &self.r).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Store {
    Vsa {
        state: Vec<f64>,
        tag: HyperVector,
    },
    Hopfield {
        patterns: Vec<HyperVector>,
        weights: Vec<f64>,
        beta: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociativeMemory {
    kind: BackendKind,
    dim: usize,
    store: Store,
}

impl AssociativeMemory {
    pub fn new(kind: BackendKind, d: usize, seed: u64) -> Result<Self> {
        kind.validate_dim(d)?;
        let store = match kind {
            BackendKind::Hrr | BackendKind::Vtb => Store::Vsa {
                state: vec![0.0; d],
                tag: memory_tag(d, seed)?,
            },
            BackendKind::Hopfield => Store::Hopfield {
                patterns: Vec::new(),
                weights: Vec::new(),
                beta: default_beta(d),
            },
        };
        Ok(Self {
            kind,
            dim: d,
            store,
        })
    }

    /// Rebuilds a VSA memory from an explicit state and tag.
    pub fn from_vsa_state(kind: BackendKind, state: Vec<f64>, tag: HyperVector) -> Result<Self> {
        if !kind.is_vsa() {
            return Err(Error::InvalidArgument(
                "from_vsa_state needs a VSA backend".into(),
            ));
        }
        kind.validate_dim(tag.dim())?;
        if state.len() != tag.dim() {
            return Err(Error::DimensionMismatch {
                expected: tag.dim(),
                got: state.len(),
            });
        }
        Ok(Self {
            kind,
            dim: tag.dim(),
            store: Store::Vsa { state, tag },
        })
    }

    /// Rebuilds a Hopfield memory from stored patterns and their weights.
    pub fn from_patterns(
        d: usize,
        patterns: Vec<HyperVector>,
        weights: Vec<f64>,
        beta: f64,
    ) -> Result<Self> {
        let mut mem = Self::new(BackendKind::Hopfield, d, 0)?.with_beta(beta);
        if patterns.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: patterns.len(),
                got: weights.len(),
            });
        }
        for (v, p) in patterns.iter().zip(weights) {
            mem.insert(v, p)?;
        }
        Ok(mem)
    }

    /// Overrides the Hopfield inverse temperature; no effect on VSA memories.
    pub fn with_beta(mut self, new_beta: f64) -> Self {
        if let Store::Hopfield { beta, .. } = &mut self.store {
            *beta = new_beta;
        }
        self
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tag(&self) -> Option<&HyperVector> {
        match &self.store {
            Store::Vsa { tag, .. } => Some(tag),
            Store::Hopfield { .. } => None,
        }
    }

    /// VSA bundle state `m`.
    pub fn state(&self) -> Option<&[f64]> {
        match &self.store {
            Store::Vsa { state, .. } => Some(state),
            Store::Hopfield { .. } => None,
        }
    }

    /// Stored Hopfield patterns with their weights.
    pub fn patterns(&self) -> Option<(&[HyperVector], &[f64])> {
        match &self.store {
            Store::Hopfield {
                patterns, weights, ..
            } => Some((patterns, weights)),
            Store::Vsa { .. } => None,
        }
    }

    pub fn len(&self) -> Option<usize> {
        self.patterns().map(|(p, _)| p.len())
    }

    pub fn is_empty(&self) -> bool {
        match &self.store {
            Store::Vsa { state, .. } => state.iter().all(|&v| v == 0.0),
            Store::Hopfield { patterns, .. } => patterns.is_empty(),
        }
    }

    fn check_dim(&self, v: &HyperVector) -> Result<()> {
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        Ok(())
    }

    /// Adds `v` with weight `p`.
    pub fn insert(&mut self, v: &HyperVector, p: f64) -> Result<()> {
        self.check_dim(v)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        if p == 0.0 {
            return Ok(());
        }
        let kind = self.kind;
        match &mut self.store {
            Store::Vsa { state, tag } => {
                let bound = match kind {
                    BackendKind::Hrr => vsa::bind_hrr(v, tag)?,
                    _ => vsa::bind_vtb(v, tag)?,
                };
                for (m, b) in state.iter_mut().zip(bound.as_slice()) {
                    *m += p * b;
                }
            }
            Store::Hopfield {
                patterns, weights, ..
            } => {
                patterns.push(v.clone());
                weights.push(p);
            }
        }
        Ok(())
    }

    pub fn query(&self, q: &HyperVector) -> Result<QueryResult> {
        self.check_dim(q)?;
        match &self.store {
            Store::Vsa { state, tag } => {
                let m = HyperVector::new(state.clone())?;
                let r_hat = match self.kind {
                    BackendKind::Hrr => vsa::unbind_hrr(&m, q)?,
                    _ => vsa::unbind_vtb(&m, q)?,
                };
                Ok(QueryResult {
                    r_hat,
                    r: tag.clone(),
                })
            }
            Store::Hopfield {
                patterns,
                weights,
                beta,
            } => {
                let mut r_hat = vec![0.0; self.dim];
                let rows: Vec<&[f64]> = patterns.iter().map(|p| p.as_slice()).collect();
                let attn = hopfield_attention(q.as_slice(), &rows, weights, *beta);
                for (a, row) in attn.iter().zip(&rows) {
                    for (o, x) in r_hat.iter_mut().zip(row.iter()) {
                        *o += a * x;
                    }
                }
                Ok(QueryResult {
                    r_hat: HyperVector::new(r_hat)?,
                    r: q.clone(),
                })
            }
        }
    }

    /// Empties the store; the tag is kept.
    pub fn reset(&mut self) {
        match &mut self.store {
            Store::Vsa { state, .. } => state.iter_mut().for_each(|v| *v = 0.0),
            Store::Hopfield {
                patterns, weights, ..
            } => {
                patterns.clear();
                weights.clear();
            }
        }
    }
}

/// Softmax over `beta <patternᵢ, q> + ln wᵢ`. Patterns with non-positive
/// weight get zero attention.
pub(crate) fn hopfield_attention(q: &[f64], patterns: &[&[f64]], weights: &[f64], beta: f64) -> Vec<f64> {
    let logits: Vec<f64> = patterns
        .iter()
        .zip(weights)
        .map(|(p, &w)| {
            if w > 0.0 {
                beta * vsa::dot(p, q) + w.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![0.0; logits.len()];
    }
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
