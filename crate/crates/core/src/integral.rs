//! Three-dimensional summed-area tables over (C, H, W) and constant-time box sums.

use rayon::prelude::*;

use crate::error::{LcnError, Result};
use crate::tensor::Tensor4;
use crate::window::{AxisWindows, Boundary, WindowMode};

/// Summed-area table of one sample. `table[c][h][w]` holds the sum of the
/// source over `[0, c) x [0, h) x [0, w)`, so the leading planes are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Integral3 {
    c: usize,
    h: usize,
    w: usize,
    table: Vec<f64>,
}

impl Integral3 {
    /// Builds the table from a dense CHW slice. Accumulation is always real64.
    pub fn from_slice(src: &[f64], c: usize, h: usize, w: usize) -> Self {
        assert_eq!(src.len(), c * h * w, "source slice does not match dims");
        let (sh, sw) = (h + 1, w + 1);
        let plane = sh * sw;
        let mut table = vec![0.0; (c + 1) * plane];
        for ic in 0..c {
            let (prev, cur) = table.split_at_mut((ic + 1) * plane);
            let prev = &prev[ic * plane..];
            let cur = &mut cur[..plane];
            let chan = &src[ic * h * w..(ic + 1) * h * w];
            for ih in 0..h {
                let mut row = 0.0;
                for iw in 0..w {
                    row += chan[ih * w + iw];
                    let here = (ih + 1) * sw + iw + 1;
                    let above = ih * sw + iw + 1;
                    cur[here] = cur[above] + row;
                }
            }
            for (dst, &p) in cur.iter_mut().zip(prev.iter()) {
                *dst += p;
            }
        }
        Integral3 { c, h, w, table }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    /// Raw table entry; indices run over `0..=C`, `0..=H`, `0..=W`.
    #[inline]
    pub fn at(&self, c: usize, h: usize, w: usize) -> f64 {
        self.table[(c * (self.h + 1) + h) * (self.w + 1) + w]
    }

    pub fn total(&self) -> f64 {
        self.at(self.c, self.h, self.w)
    }

    /// Sum over `[c0, c1) x [h0, h1) x [w0, w1)`.
    pub fn box_sum(
        &self,
        c0: usize,
        c1: usize,
        h0: usize,
        h1: usize,
        w0: usize,
        w1: usize,
    ) -> Result<f64> {
        for (name, lo, hi, ext) in [
            ("c", c0, c1, self.c),
            ("h", h0, h1, self.h),
            ("w", w0, w1, self.w),
        ] {
            if lo >= hi || hi > ext {
                return Err(LcnError::Range(format!(
                    "{name} range [{lo}, {hi}) is empty or outside [0, {ext})"
                )));
            }
        }
        Ok(self.box_sum_unchecked(c0, c1, h0, h1, w0, w1))
    }

    /// Eight-corner inclusion-exclusion without range validation.
    #[inline]
    pub fn box_sum_unchecked(
        &self,
        c0: usize,
        c1: usize,
        h0: usize,
        h1: usize,
        w0: usize,
        w1: usize,
    ) -> f64 {
        let sw = self.w + 1;
        let plane = (self.h + 1) * sw;
        let t = &self.table;
        let (p0, p1) = (c0 * plane, c1 * plane);
        let (r0, r1) = (h0 * sw, h1 * sw);
        let upper = t[p1 + r1 + w1] - t[p1 + r1 + w0] - t[p1 + r0 + w1] + t[p1 + r0 + w0];
        let lower = t[p0 + r1 + w1] - t[p0 + r1 + w0] - t[p0 + r0 + w1] + t[p0 + r0 + w0];
        upper - lower
    }
}

/// Summed-area table of sample `sample` of `x`, or of `x²` when `squared`.
pub fn build_integral(x: &Tensor4, sample: usize, squared: bool) -> Result<Integral3> {
    let d = x.dims();
    if sample >= d.b {
        return Err(LcnError::Index(format!(
            "sample {sample} out of range for batch of {}",
            d.b
        )));
    }
    let mut src = x.sample_f64(sample);
    if squared {
        src.iter_mut().for_each(|v| *v *= *v);
    }
    Ok(Integral3::from_slice(&src, d.c, d.h, d.w))
}

pub(crate) fn check_group(channels: usize, c_group: usize) -> Result<()> {
    if c_group == 0 || c_group > channels || !channels.is_multiple_of(c_group) {
        return Err(LcnError::Group(format!(
            "c_group {c_group} does not divide {channels} channels"
        )));
    }
    Ok(())
}

pub(crate) fn check_window(p: usize, q: usize) -> Result<()> {
    if p == 0 || q == 0 {
        return Err(LcnError::Range(format!(
            "window {p}x{q} must be at least 1x1"
        )));
    }
    Ok(())
}

/// Window sums for every position of the sample, as a dense CHW map.
///
/// Each position reads eight table entries, so the cost is `O(C*H*W)`
/// whatever the window size.
pub fn box_sums_all(
    ii: &Integral3,
    c_group: usize,
    p: usize,
    q: usize,
    mode: WindowMode,
    boundary: Boundary,
) -> Result<Vec<f64>> {
    let (c, h, w) = ii.dims();
    check_group(c, c_group)?;
    check_window(p, q)?;
    let Boundary::Replicate = boundary;
    let rows = AxisWindows::new(h, p, mode);
    let cols = AxisWindows::new(w, q, mode);
    let mut out = vec![0.0; c * h * w];
    out.par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(ic, plane)| {
            let c0 = ic / c_group * c_group;
            let c1 = c0 + c_group;
            for ih in 0..h {
                let (h0, h1) = rows.window(ih);
                let row = &mut plane[ih * w..(ih + 1) * w];
                for (iw, slot) in row.iter_mut().enumerate() {
                    let (w0, w1) = cols.window(iw);
                    *slot = ii.box_sum_unchecked(c0, c1, h0, h1, w0, w1);
                }
            }
        });
    Ok(out)
}
