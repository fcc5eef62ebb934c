//! Numerical verification of the backward passes.

use crate::error::{LcnError, Result};
use crate::grad::{lcn_backward, reference_backward, GradBundle};
use crate::norms::{lcn_forward, AffineParams, LcnConfig, NormStats, ReferenceNorm};
use crate::tensor::{fill_random, Distribution, Tensor4};

/// Below this variance a position is too close to the clamp for finite
/// differences to be meaningful.
pub const MIN_CHECK_VAR: f64 = 1e-3;
/// First adjoint step as a fraction of the smallest window deviation.
const ADJOINT_STEP_FRACTION: f64 = 0.3;

/// A differentiable forward pass together with its configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardOp {
    Lcn(LcnConfig),
    Reference { op: ReferenceNorm, eps: f64 },
}

impl ForwardOp {
    pub fn name(&self) -> &'static str {
        match self {
            ForwardOp::Lcn(_) => "lcn",
            ForwardOp::Reference { op, .. } => op.name(),
        }
    }

    pub fn forward(&self, x: &Tensor4, params: &AffineParams) -> Result<(Tensor4, NormStats)> {
        match self {
            ForwardOp::Lcn(cfg) => lcn_forward(x, cfg, params),
            ForwardOp::Reference { op, eps } => op.forward(x, *eps, params),
        }
    }

    pub fn backward(
        &self,
        grad_y: &Tensor4,
        x: &Tensor4,
        params: &AffineParams,
        stats: &NormStats,
    ) -> Result<GradBundle> {
        match self {
            ForwardOp::Lcn(cfg) => lcn_backward(grad_y, x, cfg, params, stats),
            ForwardOp::Reference { op, eps } => {
                reference_backward(*op, grad_y, x, *eps, params, stats)
            }
        }
    }
}

/// Which gradient entry an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    X(usize),
    Gamma(usize),
    Beta(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_abs_err: f64,
    /// Largest relative error over all of grad_x, grad_gamma and grad_beta.
    pub max_rel_err: f64,
    pub worst: ParamSlot,
    pub x_rel_err: f64,
    pub gamma_rel_err: f64,
    pub beta_rel_err: f64,
}

/// Input with a per-position ramp under small noise, so that every window
/// with more than one element has variance well away from zero.
pub fn gradient_test_input(dims: [usize; 4], seed: u64) -> Result<Tensor4> {
    let noise = fill_random(dims, seed, Distribution::Normal01)?;
    let d = noise.dims();
    let mut v = Vec::with_capacity(d.len());
    for i in 0..d.len() {
        let (b, c, h, w) = d.coords(i);
        let ramp = 0.45 * b as f64 + 0.6 * c as f64 + 0.35 * h as f64 + 0.2 * w as f64;
        v.push(ramp + 0.25 * noise.at(i));
    }
    Tensor4::from_f64(d, v)
}

fn loss(op: &ForwardOp, x: &Tensor4, params: &AffineParams, weights: &Tensor4) -> Result<f64> {
    let (y, _) = op.forward(x, params)?;
    Ok(compensated_sum(
        (0..y.len()).map(|i| weights.at(i) * y.at(i)),
    ))
}

/// Neumaier summation.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + carry
}

/// Smallest window variance, or an error when it is too close to zero.
fn ensure_nondegenerate(stats: &NormStats) -> Result<f64> {
    let min_var = stats
        .var
        .to_f64_vec()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if min_var < MIN_CHECK_VAR {
        return Err(LcnError::DegenerateInput(format!(
            "minimum window variance {min_var:e} is below {MIN_CHECK_VAR:e}"
        )));
    }
    Ok(min_var)
}

/// Relative error per entry, with the denominator floored at a thousandth of
/// the largest reference gradient so that near-zero entries are judged on an
/// absolute scale.
fn compare(analytic: &[f64], numeric: &[f64]) -> (f64, f64, usize) {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    let mut worst = (0.0, 0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(floor);
        if rel > worst.1 {
            worst = (abs, rel, i);
        }
        worst.0 = f64::max(worst.0, abs);
    }
    worst
}

fn central<F: FnMut(f64) -> Result<f64>>(f: &mut F, step: f64) -> Result<f64> {
    Ok((f(step)? - f(-step)?) / (2.0 * step))
}

/// Compares analytic gradients against central differences of the scalar
/// loss `L = sum(w * y)` with fixed random weights `w` drawn from `seed`.
pub fn finite_diff_check(
    op: &ForwardOp,
    x: &Tensor4,
    params: &AffineParams,
    step: f64,
    seed: u64,
) -> Result<FdReport> {
    let d = x.dims();
    let (_, stats) = op.forward(x, params)?;
    ensure_nondegenerate(&stats)?;
    let weights = fill_random([d.b, d.c, d.h, d.w], seed, Distribution::Normal01)?;
    let analytic = op.backward(&weights, x, params, &stats)?;

    let base = x.to_f64_vec();
    let mut num_x = Vec::with_capacity(d.len());
    for j in 0..d.len() {
        num_x.push(central(
            &mut |t| {
                let mut v = base.clone();
                v[j] += t;
                loss(op, &Tensor4::from_f64(d, v)?, params, &weights)
            },
            step,
        )?);
    }
    let mut num_gamma = Vec::with_capacity(d.c);
    let mut num_beta = Vec::with_capacity(d.c);
    for c in 0..d.c {
        num_gamma.push(central(
            &mut |t| {
                let mut p = params.clone();
                p.gamma[c] += t;
                loss(op, x, &p, &weights)
            },
            step,
        )?);
        num_beta.push(central(
            &mut |t| {
                let mut p = params.clone();
                p.beta[c] += t;
                loss(op, x, &p, &weights)
            },
            step,
        )?);
    }

    let ex = compare(&analytic.grad_x.to_f64_vec(), &num_x);
    let eg = compare(&analytic.grad_gamma, &num_gamma);
    let eb = compare(&analytic.grad_beta, &num_beta);
    let mut report = FdReport {
        max_abs_err: ex.0.max(eg.0).max(eb.0),
        max_rel_err: ex.1,
        worst: ParamSlot::X(ex.2),
        x_rel_err: ex.1,
        gamma_rel_err: eg.1,
        beta_rel_err: eb.1,
    };
    if eg.1 > report.max_rel_err {
        report.max_rel_err = eg.1;
        report.worst = ParamSlot::Gamma(eg.2);
    }
    if eb.1 > report.max_rel_err {
        report.max_rel_err = eb.1;
        report.worst = ParamSlot::Beta(eb.2);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointReport {
    /// `<J u, v>` from directional differences of the forward pass.
    pub forward_side: f64,
    /// `<u, J^T v>` from the backward pass.
    pub backward_side: f64,
    pub rel_err: f64,
    /// Directions `u` discarded as ill-conditioned before the one used.
    pub redraws: u64,
}

/// Derivative at zero by Ridders' method: central differences on a shrinking
/// step sequence, extrapolated to zero step in a Neville tableau. Returns the
/// entry with the smallest error estimate over the whole tableau; stopping
/// at the first rise of that estimate proved too eager on short pools.
fn ridders<F: FnMut(f64) -> Result<f64>>(mut f: F, first_step: f64) -> Result<f64> {
    const SHRINK: f64 = 1.4;
    const LEVELS: usize = 10;
    let mut h = first_step;
    let mut table = vec![vec![0.0; LEVELS]; LEVELS];
    table[0][0] = central(&mut f, h)?;
    let mut best = table[0][0];
    let mut err = f64::INFINITY;
    for i in 1..LEVELS {
        h /= SHRINK;
        table[0][i] = central(&mut f, h)?;
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (table[j][i] - table[j - 1][i])
                .abs()
                .max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
    }
    Ok(best)
}

/// Checks `<J u, v> = <u, J^T v>` for random directions `u` and `v`.
///
/// The directional derivative is a finite-difference estimate refined by
/// Ridders' extrapolation, which keeps steps large enough for rounding to
/// stay small. The first step is scaled to the smallest window deviation. For random `u` the inner product has standard deviation
/// `|J^T v|`; draws of `u` landing within half of that of zero are replaced,
/// since a relative comparison of a near-cancelled sum only measures rounding.
pub fn adjoint_check(
    op: &ForwardOp,
    x: &Tensor4,
    params: &AffineParams,
    seed: u64,
) -> Result<AdjointReport> {
    const MAX_DRAWS: u64 = 64;
    let d = x.dims();
    let (_, stats) = op.forward(x, params)?;
    let min_var = ensure_nondegenerate(&stats)?;
    let dims = [d.b, d.c, d.h, d.w];
    let v = fill_random(dims, seed ^ 0x9e37_79b9_7f4a_7c15, Distribution::Normal01)?;
    let back = op.backward(&v, x, params, &stats)?.grad_x;
    let scale = compensated_sum((0..d.len()).map(|i| back.at(i) * back.at(i))).sqrt();

    let mut redraws = 0;
    let (u, backward_side) = loop {
        let u = fill_random(dims, seed.wrapping_add(redraws), Distribution::Normal01)?;
        let side = compensated_sum((0..d.len()).map(|i| u.at(i) * back.at(i)));
        if side.abs() >= 0.5 * scale || redraws + 1 == MAX_DRAWS {
            break (u, side);
        }
        redraws += 1;
    };

    let base = x.to_f64_vec();
    let along = |t: f64| -> Result<f64> {
        let moved: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, b)| b + t * u.at(i))
            .collect();
        loss(op, &Tensor4::from_f64(d, moved)?, params, &v)
    };
    // Keep the largest probe well inside the region where every window's
    // statistics stay close to their values at x.
    let u_max = (0..d.len()).map(|i| u.at(i).abs()).fold(0.0, f64::max);
    let first_step = ADJOINT_STEP_FRACTION * min_var.sqrt() / u_max.max(1.0);
    let forward_side = ridders(along, first_step)?;
    let rel_err = (forward_side - backward_side).abs()
        / forward_side
            .abs()
            .max(backward_side.abs())
            .max(f64::MIN_POSITIVE);
    Ok(AdjointReport {
        forward_side,
        backward_side,
        rel_err,
        redraws,
    })
}
