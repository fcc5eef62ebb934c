//! Backward passes for the normalization layers.
//!
//! Statistics are differentiated through: the gradient of every input
//! includes its contribution to each mean and variance it took part in.

mod check;

pub use check::{
    adjoint_check, finite_diff_check, gradient_test_input, AdjointReport, FdReport, ForwardOp,
    ParamSlot,
};

use crate::error::{LcnError, Result};
use crate::integral::Integral3;
use crate::norms::{center_groups, lcn_counts, AffineParams, LcnConfig, NormStats, ReferenceNorm};
use crate::tensor::{Dims, Tensor4};
use crate::window::AxisWindows;

/// Gradients with respect to the input and the affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub grad_x: Tensor4,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

/// Per-position pieces shared by every backward pass.
struct Upstream {
    /// `gamma[c] * dy`
    g: Vec<f64>,
    /// `1 / sqrt(var + eps)`
    inv_std: Vec<f64>,
    /// Gradient flowing into each position's variance.
    dvar: Vec<f64>,
    grad_gamma: Vec<f64>,
    grad_beta: Vec<f64>,
}

fn validate(
    grad_y: &Tensor4,
    x: &Tensor4,
    params: &AffineParams,
    stats: &NormStats,
    expected_counts: &[u32],
) -> Result<()> {
    let d = x.dims();
    if grad_y.dims() != d {
        return Err(LcnError::Shape(format!(
            "grad_y dims {} differ from input dims {d}",
            grad_y.dims()
        )));
    }
    if stats.dims() != d || stats.var.dims() != d || stats.n_map.len() != d.len() {
        return Err(LcnError::State(format!(
            "saved statistics have dims {}, input has {d}",
            stats.dims()
        )));
    }
    params.check(d.c)?;
    if stats.n_map != expected_counts {
        return Err(LcnError::State(
            "saved window counts do not match the configuration".into(),
        ));
    }
    grad_y.ensure_finite()?;
    x.ensure_finite()
}

fn upstream(
    grad_y: &Tensor4,
    x: &Tensor4,
    eps: f64,
    params: &AffineParams,
    stats: &NormStats,
) -> Upstream {
    let d = x.dims();
    let plane = d.plane();
    let mut g = Vec::with_capacity(d.len());
    let mut inv_std = Vec::with_capacity(d.len());
    let mut dvar = Vec::with_capacity(d.len());
    let mut grad_gamma = vec![0.0; d.c];
    let mut grad_beta = vec![0.0; d.c];
    for i in 0..d.len() {
        let c = (i / plane) % d.c;
        let dy = grad_y.at(i);
        let var = stats.var.at(i);
        let s = 1.0 / (var + eps).sqrt();
        let xhat = (x.at(i) - stats.mean.at(i)) * s;
        grad_gamma[c] += dy * xhat;
        grad_beta[c] += dy;
        let gi = params.gamma[c] * dy;
        g.push(gi);
        inv_std.push(s);
        // Zero variance sits on the clamp; its subgradient is taken as zero.
        dvar.push(if var > 0.0 {
            -0.5 * gi * xhat * s * s
        } else {
            0.0
        });
    }
    Upstream {
        g,
        inv_std,
        dvar,
        grad_gamma,
        grad_beta,
    }
}

/// Backward pass of [`crate::norms::lcn_forward`].
///
/// Each anchor `i` pushes `a_i = (-g_i s_i - 2 mu_i dvar_i) / n_i` and
/// `b_i = dvar_i / n_i` onto every element of its window, so element `j`
/// receives `g_j s_j + sum(a) + 2 x_j sum(b)` over the anchors whose windows
/// cover it. Those anchors form a box (the channel group times one run of
/// rows and one run of columns), so both sums are summed-area queries and the
/// cost does not depend on the window size.
pub fn lcn_backward(
    grad_y: &Tensor4,
    x: &Tensor4,
    cfg: &LcnConfig,
    params: &AffineParams,
    stats: &NormStats,
) -> Result<GradBundle> {
    let d = x.dims();
    cfg.validate(d)?;
    validate(grad_y, x, params, stats, &lcn_counts(d, cfg))?;
    let up = upstream(grad_y, x, cfg.eps, params, stats);

    let rows = AxisWindows::new(d.h, cfg.p, cfg.mode);
    let cols = AxisWindows::new(d.w, cfg.q, cfg.mode);
    let per_sample = d.sample();
    let mut grad_x = Vec::with_capacity(d.len());
    let group_len = cfg.c_group * d.plane();
    for b in 0..d.b {
        let span = b * per_sample..(b + 1) * per_sample;
        // Work relative to each group's mean; the pushes are shift-invariant
        // in exact arithmetic and better conditioned this way.
        let mut centred = x.sample_f64(b);
        let offsets = center_groups(&mut centred, cfg.c_group, d.plane());
        let mut push_mean = Vec::with_capacity(per_sample);
        let mut push_sq = Vec::with_capacity(per_sample);
        for (k, i) in span.clone().enumerate() {
            let n = stats.n_map[i] as f64;
            let dv = up.dvar[i];
            let mu = stats.mean.at(i) - offsets[k / group_len];
            push_mean.push((-up.g[i] * up.inv_std[i] - 2.0 * mu * dv) / n);
            push_sq.push(dv / n);
        }
        let mean_table = Integral3::from_slice(&push_mean, d.c, d.h, d.w);
        let sq_table = Integral3::from_slice(&push_sq, d.c, d.h, d.w);
        for c in 0..d.c {
            let c0 = c / cfg.c_group * cfg.c_group;
            let c1 = c0 + cfg.c_group;
            for h in 0..d.h {
                let (h0, h1) = rows.covering(h);
                for w in 0..d.w {
                    let (w0, w1) = cols.covering(w);
                    let i = d.index(b, c, h, w);
                    let from_mean = mean_table.box_sum_unchecked(c0, c1, h0, h1, w0, w1);
                    let from_sq = sq_table.box_sum_unchecked(c0, c1, h0, h1, w0, w1);
                    let xc = centred[i - span.start];
                    grad_x.push(up.g[i] * up.inv_std[i] + from_mean + 2.0 * xc * from_sq);
                }
            }
        }
    }
    Ok(GradBundle {
        grad_x: Tensor4::from_f64_as(d, grad_x, x.dtype())?,
        grad_gamma: up.grad_gamma,
        grad_beta: up.grad_beta,
    })
}

/// Maps `(sample, channel)` to the index of its statistics pool.
type PoolOf = Box<dyn Fn(usize, usize) -> usize>;

fn reference_groups(op: ReferenceNorm, d: Dims) -> Result<(usize, PoolOf)> {
    Ok(match op {
        ReferenceNorm::Gn { groups } => {
            if groups == 0 || !d.c.is_multiple_of(groups) {
                return Err(LcnError::Group(format!(
                    "{groups} groups do not divide {} channels",
                    d.c
                )));
            }
            let per = d.c / groups;
            (d.b * groups, Box::new(move |b, c| b * groups + c / per))
        }
        ReferenceNorm::In => {
            let c_total = d.c;
            (d.b * d.c, Box::new(move |b, c| b * c_total + c))
        }
        ReferenceNorm::Ln => (d.b, Box::new(|b, _| b)),
        ReferenceNorm::Bn => (d.c, Box::new(|_, c| c)),
    })
}

/// Backward pass of the global normalizations (batch norm in training mode).
pub fn reference_backward(
    op: ReferenceNorm,
    grad_y: &Tensor4,
    x: &Tensor4,
    eps: f64,
    params: &AffineParams,
    stats: &NormStats,
) -> Result<GradBundle> {
    let d = x.dims();
    let (n_groups, group_of) = reference_groups(op, d)?;
    let plane = d.plane();

    let mut counts = vec![0usize; n_groups];
    for b in 0..d.b {
        for c in 0..d.c {
            counts[group_of(b, c)] += plane;
        }
    }
    let mut expected = Vec::with_capacity(d.len());
    for b in 0..d.b {
        for c in 0..d.c {
            expected.extend(std::iter::repeat_n(counts[group_of(b, c)] as u32, plane));
        }
    }
    validate(grad_y, x, params, stats, &expected)?;
    let up = upstream(grad_y, x, eps, params, stats);

    // Per-pool sums of the pushes; every member shares the pool's statistics.
    let mut push_mean = vec![0.0; n_groups];
    let mut push_var = vec![0.0; n_groups];
    for b in 0..d.b {
        for c in 0..d.c {
            let gidx = group_of(b, c);
            let base = d.index(b, c, 0, 0);
            for i in base..base + plane {
                push_mean[gidx] -= up.g[i] * up.inv_std[i];
                push_var[gidx] += up.dvar[i];
            }
        }
    }
    let mut grad_x = Vec::with_capacity(d.len());
    for b in 0..d.b {
        for c in 0..d.c {
            let gidx = group_of(b, c);
            let n = counts[gidx] as f64;
            let base = d.index(b, c, 0, 0);
            for i in base..base + plane {
                let centred = x.at(i) - stats.mean.at(i);
                grad_x.push(
                    up.g[i] * up.inv_std[i]
                        + push_mean[gidx] / n
                        + 2.0 * centred * push_var[gidx] / n,
                );
            }
        }
    }
    Ok(GradBundle {
        grad_x: Tensor4::from_f64_as(d, grad_x, x.dtype())?,
        grad_gamma: up.grad_gamma,
        grad_beta: up.grad_beta,
    })
}
