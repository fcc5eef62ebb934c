use crate::error::{LcnError, Result};
use crate::tensor::{Dims, Tensor4};

/// How the divisor floor `c` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrnDivisor {
    /// `c` is the mean of `sigma_hw` over the image.
    #[default]
    MeanSigma,
}

/// Local response (contrast) normalization with a Gaussian window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnConfig {
    /// Side of the square Gaussian window; odd and at least 3.
    pub window: usize,
    /// Standard deviation of the Gaussian, in pixels.
    pub sigma_g: f64,
    pub c_mode: LrnDivisor,
}

impl Default for LrnConfig {
    fn default() -> Self {
        LrnConfig {
            window: 9,
            sigma_g: 2.0,
            c_mode: LrnDivisor::MeanSigma,
        }
    }
}

impl LrnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(LcnError::Range(format!(
                "LRN window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.sigma_g > 0.0 && self.sigma_g.is_finite()) {
            return Err(LcnError::Range(format!(
                "LRN sigma must be positive, got {}",
                self.sigma_g
            )));
        }
        Ok(())
    }

    /// Full 2-D weight matrix, row-major, summing to one.
    pub fn weights(&self) -> Vec<f64> {
        let g = gaussian_kernel(self.window, self.sigma_g);
        g.iter()
            .flat_map(|a| g.iter().map(move |b| a * b))
            .collect()
    }
}

/// Normalized 1-D Gaussian of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let t = i as f64 - r;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur of one plane with replicate-clamped coordinates.
fn blur(plane: &[f64], h: usize, w: usize, g: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    let r = (g.len() / 2) as isize;
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in g.iter().enumerate() {
                let sx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += wt * row[sx];
            }
            scratch[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in g.iter().enumerate() {
                let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += wt * scratch[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
}

/// Subtractive and divisive local normalization.
///
/// Per channel, the Gaussian-weighted local mean is subtracted. The divisor
/// is `max(c, sigma_hw)` where `sigma_hw` is the weighted standard deviation
/// over the window pooled across all channels, and `c` is its mean over the
/// image. Where the divisor is zero the output is zero.
pub fn lrn_forward(x: &Tensor4, cfg: &LrnConfig) -> Result<Tensor4> {
    cfg.validate()?;
    x.ensure_finite()?;
    let d: Dims = x.dims();
    let (h, w) = (d.h, d.w);
    let plane = d.plane();
    let g = gaussian_kernel(cfg.window, cfg.sigma_g);
    let mut out = Vec::with_capacity(d.len());
    let mut scratch = vec![0.0; plane];
    for b in 0..d.b {
        let sample = x.sample_f64(b);
        let mut centered = vec![0.0; sample.len()];
        let mut pooled_var = vec![0.0; plane];
        let mut local_mean = vec![0.0; plane];
        let mut local_sq = vec![0.0; plane];
        for c in 0..d.c {
            let chan = &sample[c * plane..(c + 1) * plane];
            // Both terms are invariant to a per-channel offset; shifting by the
            // first element keeps constant regions exactly zero.
            let origin = chan[0];
            let z: Vec<f64> = chan.iter().map(|v| v - origin).collect();
            let z2: Vec<f64> = z.iter().map(|v| v * v).collect();
            blur(&z, h, w, &g, &mut scratch, &mut local_mean);
            blur(&z2, h, w, &g, &mut scratch, &mut local_sq);
            for i in 0..plane {
                centered[c * plane + i] = z[i] - local_mean[i];
                pooled_var[i] += local_sq[i] - local_mean[i] * local_mean[i];
            }
        }
        let sigma: Vec<f64> = pooled_var
            .iter()
            .map(|v| (v / d.c as f64).max(0.0).sqrt())
            .collect();
        let floor = match cfg.c_mode {
            LrnDivisor::MeanSigma => sigma.iter().sum::<f64>() / plane as f64,
        };
        for c in 0..d.c {
            for i in 0..plane {
                let div = floor.max(sigma[i]);
                let v = centered[c * plane + i];
                out.push(if div > 0.0 { v / div } else { 0.0 });
            }
        }
    }
    Tensor4::from_f64_as(d, out, x.dtype())
}
