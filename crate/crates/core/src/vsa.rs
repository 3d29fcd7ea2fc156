//! Hypervector algebra.
//!
//! Dense real hypervectors with two binding families:
//!
//! - **HRR**: circular convolution, computed in the Fourier domain. Inputs are
//!   usually projected to *unitary* vectors (every DFT component has magnitude 1)
//!   so that the cheap pseudo-inverse is also the exact inverse.
//! - **VTB**: `B(x, y) = V_y x`, where `V_y` is block diagonal with `sqrt(d)`
//!   copies of `d^{1/4} * reshape(y)` (row-major `sqrt(d) x sqrt(d)`).
//!   Unbinding applies the transpose.
//!
//! The DFT is the standard one: unnormalized forward transform, `1/d` on the
//! inverse. Under it the delta vector has an all-ones spectrum and unitary
//! vectors have unit L2 norm.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Spectral components below this magnitude make projection and unbinding
/// ill-defined.
pub const SPECTRAL_EPS: f64 = 1e-12;

/// A dense real vector of dimension `d >= 2` with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperVector {
    data: Vec<f64>,
}

impl HyperVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::InvalidDimension {
                dim: data.len(),
                reason: "hypervectors need d >= 2",
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry(i));
        }
        Ok(Self { data })
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d])
    }

    /// The convolution identity `(1, 0, ..., 0)`.
    pub fn delta(d: usize) -> Result<Self> {
        let mut data = vec![0.0; d];
        if let Some(first) = data.first_mut() {
            *first = 1.0;
        }
        Self::new(data)
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dims(self, other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Entries re-indexed `j -> -j mod d`. For unitary `a` this is its inverse.
    pub fn involution(&self) -> Self {
        Self {
            data: involution(&self.data),
        }
    }
}

fn check_dims(a: &HyperVector, b: &HyperVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Gaussian hypervector with i.i.d. `N(0, 1/d)` entries, deterministic in `seed`.
pub fn random_hypervector(d: usize, seed: u64) -> Result<HyperVector> {
    if d < 2 {
        return Err(Error::InvalidDimension {
            dim: d,
            reason: "hypervectors need d >= 2",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
    HyperVector::new((0..d).map(|_| normal.sample(&mut rng)).collect())
}

/// Spectrum normalized to unit magnitude componentwise.
pub fn project_unitary(x: &HyperVector) -> Result<HyperVector> {
    HyperVector::new(unitary_projection(x.as_slice())?)
}

/// Circular convolution `a ⊛ b`.
pub fn bind_hrr(a: &HyperVector, b: &HyperVector) -> Result<HyperVector> {
    check_dims(a, b)?;
    HyperVector::new(circular_convolution(a.as_slice(), b.as_slice()))
}

/// `a⁺`: spectrum `conj(F(a)) / |F(a)|`.
pub fn pseudo_inverse(a: &HyperVector) -> Result<HyperVector> {
    Ok(project_unitary(a)?.involution())
}

/// `s ⊛ a⁺`.
pub fn unbind_hrr(s: &HyperVector, a: &HyperVector) -> Result<HyperVector> {
    check_dims(s, a)?;
    bind_hrr(s, &pseudo_inverse(a)?)
}

/// `V_y x`.
pub fn bind_vtb(x: &HyperVector, y: &HyperVector) -> Result<HyperVector> {
    let side = vtb_side(x.dim())?;
    check_dims(x, y)?;
    HyperVector::new(vtb_bind(x.as_slice(), y.as_slice(), side))
}

/// `V_yᵀ s`.
pub fn unbind_vtb(s: &HyperVector, y: &HyperVector) -> Result<HyperVector> {
    let side = vtb_side(s.dim())?;
    check_dims(s, y)?;
    HyperVector::new(vtb_unbind(s.as_slice(), y.as_slice(), side))
}

/// Weighted elementwise sum `Σ wᵢ vᵢ`.
pub fn bundle(vs: &[HyperVector], weights: &[f64]) -> Result<HyperVector> {
    if vs.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: vs.len(),
            got: weights.len(),
        });
    }
    let first = vs
        .first()
        .ok_or_else(|| Error::InvalidArgument("bundle of zero vectors".into()))?;
    let mut out = vec![0.0; first.dim()];
    for (v, &w) in vs.iter().zip(weights) {
        check_dims(first, v)?;
        for (o, x) in out.iter_mut().zip(v.as_slice()) {
            *o += w * x;
        }
    }
    HyperVector::new(out)
}

pub fn cosine_similarity(a: &HyperVector, b: &HyperVector) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

/// Side length `sqrt(d)` of the VTB block; fails unless `d` is a perfect square.
pub fn vtb_side(d: usize) -> Result<usize> {
    let side = (d as f64).sqrt().round() as usize;
    if d < 2 || side * side != d {
        return Err(Error::InvalidDimension {
            dim: d,
            reason: "VTB needs a perfect-square dimension",
        });
    }
    Ok(side)
}

// ---------------------------------------------------------------------------
// Slice kernels shared with the autodiff primitives.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn involution(a: &[f64]) -> Vec<f64> {
    let d = a.len();
    (0..d).map(|j| a[(d - j) % d]).collect()
}

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static LAST: RefCell<Option<(usize, Plans)>> = const { RefCell::new(None) };
}

fn plans(d: usize) -> Plans {
    LAST.with(|last| {
        let mut last = last.borrow_mut();
        match &*last {
            Some((n, p)) if *n == d => p.clone(),
            _ => {
                let p = PLANNER.with(|p| {
                    let mut p = p.borrow_mut();
                    (p.plan_fft_forward(d), p.plan_fft_inverse(d))
                });
                *last = Some((d, p.clone()));
                p
            }
        }
    })
}

pub(crate) fn fft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plans(x.len()).0.process(&mut buf);
    buf
}

/// Inverse DFT of a Hermitian spectrum; the imaginary residue is dropped.
pub(crate) fn ifft_real(spec: &[Complex64]) -> Vec<f64> {
    let d = spec.len();
    let mut buf = spec.to_vec();
    plans(d).1.process(&mut buf);
    let scale = 1.0 / d as f64;
    debug_assert!(
        buf.iter()
            .all(|c| c.im.abs() * scale <= 1e-9 * (1.0 + c.re.abs() * scale)),
        "inverse transform of a non-Hermitian spectrum"
    );
    buf.iter().map(|c| c.re * scale).collect()
}

pub(crate) fn circular_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    let fa = fft(a);
    let fb = fft(b);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    ifft_real(&prod)
}

/// `out_j = Σ_n g_n b_{n-j}`, the adjoint of convolution with `b`.
pub(crate) fn circular_correlation(g: &[f64], b: &[f64]) -> Vec<f64> {
    let fg = fft(g);
    let fb = fft(b);
    let prod: Vec<Complex64> = fg.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
    ifft_real(&prod)
}

pub(crate) fn unitary_projection(x: &[f64]) -> Result<Vec<f64>> {
    let spec = fft(x);
    let mut unit = Vec::with_capacity(spec.len());
    for (index, c) in spec.iter().enumerate() {
        let magnitude = c.norm();
        if magnitude < SPECTRAL_EPS {
            return Err(Error::DegenerateSpectrum { index, magnitude });
        }
        unit.push(c / magnitude);
    }
    Ok(ifft_real(&unit))
}

/// Vector-Jacobian product of [`unitary_projection`] at `x` with upstream `g`.
pub(crate) fn unitary_projection_adjoint(x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let spec = fft(x);
    let gs = fft(g);
    let mut out = Vec::with_capacity(spec.len());
    for (index, (c, gk)) in spec.iter().zip(&gs).enumerate() {
        let magnitude = c.norm();
        if magnitude < SPECTRAL_EPS {
            return Err(Error::DegenerateSpectrum { index, magnitude });
        }
        let u = c / magnitude;
        let radial = (u.conj() * gk).re;
        out.push((gk - u * radial) / magnitude);
    }
    Ok(ifft_real(&out))
}

pub(crate) fn vtb_bind(x: &[f64], y: &[f64], side: usize) -> Vec<f64> {
    let scale = (side as f64).sqrt();
    let mut out = vec![0.0; x.len()];
    for k in 0..side {
        let xk = &x[k * side..(k + 1) * side];
        for i in 0..side {
            let row = &y[i * side..(i + 1) * side];
            out[k * side + i] = scale * dot(row, xk);
        }
    }
    out
}

pub(crate) fn vtb_unbind(s: &[f64], y: &[f64], side: usize) -> Vec<f64> {
    let scale = (side as f64).sqrt();
    let mut out = vec![0.0; s.len()];
    for k in 0..side {
        for i in 0..side {
            let si = scale * s[k * side + i];
            if si == 0.0 {
                continue;
            }
            let row = &y[i * side..(i + 1) * side];
            for j in 0..side {
                out[k * side + j] += si * row[j];
            }
        }
    }
    out
}

/// Gradient of `<g, V_y x>` with respect to `y`.
pub(crate) fn vtb_bind_grad_y(x: &[f64], g: &[f64], side: usize) -> Vec<f64> {
    let scale = (side as f64).sqrt();
    let mut out = vec![0.0; x.len()];
    for k in 0..side {
        for i in 0..side {
            let gi = scale * g[k * side + i];
            for j in 0..side {
                out[i * side + j] += gi * x[k * side + j];
            }
        }
    }
    out
}

/// Gradient of `<g, V_yᵀ s>` with respect to `y`.
pub(crate) fn vtb_unbind_grad_y(s: &[f64], g: &[f64], side: usize) -> Vec<f64> {
    vtb_bind_grad_y(g, s, side)
}
