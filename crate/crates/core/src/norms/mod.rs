//! Forward passes: local context normalization and the reference family.

mod family;
mod lcn;
mod lrn;

pub use family::{bn_forward, gn_forward, in_forward, ln_forward, ReferenceNorm, RunningStats};
pub(crate) use lcn::center_groups;
pub use lcn::{lcn_counts, lcn_forward};
pub use lrn::{gaussian_kernel, lrn_forward, LrnConfig, LrnDivisor};

use crate::error::{LcnError, Result};
use crate::integral::{check_group, check_window};
use crate::tensor::{Dims, Tensor4};
use crate::window::{Boundary, WindowMode};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Local context normalization settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcnConfig {
    /// Channels per normalization group.
    pub c_group: usize,
    /// Window height.
    pub p: usize,
    /// Window width.
    pub q: usize,
    pub mode: WindowMode,
    pub boundary: Boundary,
    pub eps: f64,
}

impl Default for LcnConfig {
    /// Two channels per group and a 227x227 sliding window.
    fn default() -> Self {
        LcnConfig {
            c_group: 2,
            p: 227,
            q: 227,
            mode: WindowMode::Sliding,
            boundary: Boundary::Replicate,
            eps: DEFAULT_EPS,
        }
    }
}

impl LcnConfig {
    pub fn new(c_group: usize, p: usize, q: usize) -> Self {
        LcnConfig {
            c_group,
            p,
            q,
            ..Default::default()
        }
    }

    pub fn with_mode(mut self, mode: WindowMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        check_group(dims.c, self.c_group)?;
        check_window(self.p, self.q)?;
        check_eps(self.eps)
    }
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(LcnError::Range(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Per-channel scale and shift applied after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl AffineParams {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(LcnError::Shape(format!(
                "gamma has {} entries, beta has {}",
                gamma.len(),
                beta.len()
            )));
        }
        if gamma.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(LcnError::Data("non-finite affine parameter".into()));
        }
        Ok(AffineParams { gamma, beta })
    }

    /// `gamma = 1`, `beta = 0`.
    pub fn identity(channels: usize) -> Self {
        AffineParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn check(&self, channels: usize) -> Result<()> {
        if self.gamma.len() != channels || self.beta.len() != channels {
            return Err(LcnError::Shape(format!(
                "affine params have {}/{} entries, input has {channels} channels",
                self.gamma.len(),
                self.beta.len()
            )));
        }
        Ok(())
    }
}

/// Statistics saved by a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    /// Per-position mean, real64, same dims as the input.
    pub mean: Tensor4,
    /// Per-position variance before `eps` is added, clamped at zero.
    pub var: Tensor4,
    /// Per-position number of elements the statistics pooled over.
    pub n_map: Vec<u32>,
}

impl NormStats {
    pub fn dims(&self) -> Dims {
        self.mean.dims()
    }
}

/// `y = gamma[c] * xhat + beta[c]`, keeping the dtype of `xhat`.
pub fn affine(xhat: &Tensor4, params: &AffineParams) -> Result<Tensor4> {
    let d = xhat.dims();
    params.check(d.c)?;
    let plane = d.plane();
    let out: Vec<f64> = (0..d.len())
        .map(|i| {
            let c = (i / plane) % d.c;
            params.gamma[c] * xhat.at(i) + params.beta[c]
        })
        .collect();
    Tensor4::from_f64_as(d, out, xhat.dtype())
}

/// Shared tail of every forward pass: normalize with per-position statistics
/// then apply the affine transform.
pub(crate) fn normalize_affine(
    x: &Tensor4,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    params: &AffineParams,
) -> Result<Tensor4> {
    let d = x.dims();
    let plane = d.plane();
    let out: Vec<f64> = (0..d.len())
        .map(|i| {
            let c = (i / plane) % d.c;
            let xhat = (x.at(i) - mean[i]) / (var[i] + eps).sqrt();
            params.gamma[c] * xhat + params.beta[c]
        })
        .collect();
    Tensor4::from_f64_as(d, out, x.dtype())
}

pub(crate) fn stats_from_parts(
    dims: Dims,
    mean: Vec<f64>,
    var: Vec<f64>,
    n_map: Vec<u32>,
) -> Result<NormStats> {
    Ok(NormStats {
        mean: Tensor4::from_f64(dims, mean)?,
        var: Tensor4::from_f64(dims, var)?,
        n_map,
    })
}
