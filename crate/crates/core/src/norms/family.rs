use crate::error::{LcnError, Result};
use crate::integral::check_group;
use crate::norms::{check_eps, normalize_affine, stats_from_parts, AffineParams, NormStats};
use crate::tensor::{Dims, Tensor4};

/// The global normalizations, named by the pool their statistics cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReferenceNorm {
    /// Per sample, `C / groups` channels at a time.
    Gn { groups: usize },
    /// Per sample and channel.
    In,
    /// Per sample.
    Ln,
    /// Per channel across the batch, using batch statistics.
    Bn,
}

impl ReferenceNorm {
    pub fn name(self) -> &'static str {
        match self {
            ReferenceNorm::Gn { .. } => "gn",
            ReferenceNorm::In => "in",
            ReferenceNorm::Ln => "ln",
            ReferenceNorm::Bn => "bn",
        }
    }

    pub fn forward(
        self,
        x: &Tensor4,
        eps: f64,
        params: &AffineParams,
    ) -> Result<(Tensor4, NormStats)> {
        match self {
            ReferenceNorm::Gn { groups } => gn_forward(x, groups, eps, params),
            ReferenceNorm::In => in_forward(x, eps, params),
            ReferenceNorm::Ln => ln_forward(x, eps, params),
            ReferenceNorm::Bn => bn_forward(x, eps, params, None, true),
        }
    }
}

/// Batch-norm running statistics, updated in place during training.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    /// Zero mean, unit variance, momentum 0.1.
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: 0.1,
        }
    }
}

/// Statistics pooled over whole (H, W) planes, with `group_of(b, c)` naming
/// the pool each plane belongs to. Mean and variance are two-pass.
fn global_forward(
    x: &Tensor4,
    eps: f64,
    params: &AffineParams,
    n_groups: usize,
    group_of: impl Fn(usize, usize) -> usize,
) -> Result<(Tensor4, NormStats)> {
    let d = x.dims();
    check_eps(eps)?;
    params.check(d.c)?;
    x.ensure_finite()?;
    let (group_mean, group_var, group_n) = pooled_moments(x, n_groups, &group_of);
    broadcast(x, eps, params, &group_of, &group_mean, &group_var, &group_n)
}

pub(crate) fn pooled_moments(
    x: &Tensor4,
    n_groups: usize,
    group_of: &impl Fn(usize, usize) -> usize,
) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let d = x.dims();
    let plane = d.plane();
    let mut sum = vec![0.0; n_groups];
    let mut n = vec![0usize; n_groups];
    for b in 0..d.b {
        for c in 0..d.c {
            let g = group_of(b, c);
            let base = d.index(b, c, 0, 0);
            sum[g] += (base..base + plane).map(|i| x.at(i)).sum::<f64>();
            n[g] += plane;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&n).map(|(s, &k)| s / k as f64).collect();
    let mut sq = vec![0.0; n_groups];
    for b in 0..d.b {
        for c in 0..d.c {
            let g = group_of(b, c);
            let base = d.index(b, c, 0, 0);
            sq[g] += (base..base + plane)
                .map(|i| {
                    let dev = x.at(i) - mean[g];
                    dev * dev
                })
                .sum::<f64>();
        }
    }
    let var = sq.iter().zip(&n).map(|(s, &k)| s / k as f64).collect();
    (mean, var, n)
}

fn broadcast(
    x: &Tensor4,
    eps: f64,
    params: &AffineParams,
    group_of: &impl Fn(usize, usize) -> usize,
    group_mean: &[f64],
    group_var: &[f64],
    group_n: &[usize],
) -> Result<(Tensor4, NormStats)> {
    let d = x.dims();
    let plane = d.plane();
    let mut mean = Vec::with_capacity(d.len());
    let mut var = Vec::with_capacity(d.len());
    let mut n_map = Vec::with_capacity(d.len());
    for b in 0..d.b {
        for c in 0..d.c {
            let g = group_of(b, c);
            mean.extend(std::iter::repeat_n(group_mean[g], plane));
            var.extend(std::iter::repeat_n(group_var[g].max(0.0), plane));
            n_map.extend(std::iter::repeat_n(group_n[g] as u32, plane));
        }
    }
    let y = normalize_affine(x, &mean, &var, eps, params)?;
    Ok((y, stats_from_parts(d, mean, var, n_map)?))
}

pub(crate) fn gn_group_fn(dims: Dims, groups: usize) -> impl Fn(usize, usize) -> usize {
    let per = dims.c / groups;
    move |b, c| b * groups + c / per
}

fn check_groups(channels: usize, groups: usize) -> Result<()> {
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(LcnError::Group(format!(
            "{groups} groups do not divide {channels} channels"
        )));
    }
    check_group(channels, channels / groups)
}

/// Group normalization: per sample, over `C / groups` channels and all of (H, W).
pub fn gn_forward(
    x: &Tensor4,
    groups: usize,
    eps: f64,
    params: &AffineParams,
) -> Result<(Tensor4, NormStats)> {
    let d = x.dims();
    check_groups(d.c, groups)?;
    global_forward(x, eps, params, d.b * groups, gn_group_fn(d, groups))
}

/// Instance normalization: group normalization with one channel per group.
pub fn in_forward(x: &Tensor4, eps: f64, params: &AffineParams) -> Result<(Tensor4, NormStats)> {
    gn_forward(x, x.dims().c, eps, params)
}

/// Layer normalization: group normalization with a single group.
pub fn ln_forward(x: &Tensor4, eps: f64, params: &AffineParams) -> Result<(Tensor4, NormStats)> {
    gn_forward(x, 1, eps, params)
}

/// Batch normalization over (B, H, W) per channel.
///
/// In training mode the batch statistics are used and, when given, the
/// running statistics move towards them by `momentum`. In eval mode the
/// running statistics are required and used as-is.
pub fn bn_forward(
    x: &Tensor4,
    eps: f64,
    params: &AffineParams,
    running: Option<&mut RunningStats>,
    training: bool,
) -> Result<(Tensor4, NormStats)> {
    let d = x.dims();
    check_eps(eps)?;
    params.check(d.c)?;
    x.ensure_finite()?;
    let group_of = |_b: usize, c: usize| c;
    if let Some(r) = running.as_ref() {
        if r.mean.len() != d.c || r.var.len() != d.c {
            return Err(LcnError::Shape(format!(
                "running stats have {} channels, input has {}",
                r.mean.len(),
                d.c
            )));
        }
    }
    if training {
        let (mean, var, n) = pooled_moments(x, d.c, &group_of);
        if let Some(r) = running {
            let m = r.momentum;
            for c in 0..d.c {
                r.mean[c] = (1.0 - m) * r.mean[c] + m * mean[c];
                r.var[c] = (1.0 - m) * r.var[c] + m * var[c];
            }
        }
        broadcast(x, eps, params, &group_of, &mean, &var, &n)
    } else {
        let r = running.ok_or_else(|| {
            LcnError::State("batch norm in eval mode needs running statistics".into())
        })?;
        let n = vec![d.b * d.plane(); d.c];
        broadcast(x, eps, params, &group_of, &r.mean, &r.var, &n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{fill_random, DType, Distribution};

    fn rand(dims: [usize; 4], seed: u64) -> Tensor4 {
        fill_random(dims, seed, Distribution::Normal01).unwrap()
    }

    #[test]
    fn gn_reductions_are_exact() {
        let x = rand([2, 6, 4, 3], 1);
        let p = AffineParams::new(vec![1.5, -0.5, 2.0, 1.0, 0.3, 0.7], vec![0.1; 6]).unwrap();
        let (a, _) = gn_forward(&x, 1, 1e-5, &p).unwrap();
        let (b, _) = ln_forward(&x, 1e-5, &p).unwrap();
        assert!(a.bit_eq(&b));
        let (a, _) = gn_forward(&x, 6, 1e-5, &p).unwrap();
        let (b, _) = in_forward(&x, 1e-5, &p).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn constant_planes_give_beta() {
        let dims = Dims::new(2, 3, 4, 4).unwrap();
        let p = AffineParams::new(vec![2.0, 3.0, 4.0], vec![-1.0, 0.5, 9.0]).unwrap();
        let x = Tensor4::full(dims, DType::F64, 3.25);
        for (y, _) in [
            in_forward(&x, 1e-5, &p).unwrap(),
            ln_forward(&x, 1e-5, &p).unwrap(),
            bn_forward(&x, 1e-5, &p, None, true).unwrap(),
        ] {
            for b in 0..2 {
                for c in 0..3 {
                    assert_eq!(y.get(b, c, 1, 2), p.beta[c]);
                }
            }
        }
    }

    #[test]
    fn bn_single_sample_equals_instance_norm() {
        let x = rand([1, 3, 5, 5], 8);
        let p = AffineParams::identity(3);
        let (a, _) = bn_forward(&x, 1e-5, &p, None, true).unwrap();
        let (b, _) = in_forward(&x, 1e-5, &p).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn bn_running_stats_update_and_eval() {
        let x = rand([4, 2, 3, 3], 3);
        let p = AffineParams::identity(2);
        let mut r = RunningStats::new(2);
        let (_, stats) = bn_forward(&x, 1e-5, &p, Some(&mut r), true).unwrap();
        let batch_mean = stats.mean.get(0, 1, 0, 0);
        let batch_var = stats.var.get(0, 1, 0, 0);
        assert!((r.mean[1] - 0.1 * batch_mean).abs() < 1e-15);
        assert!((r.var[1] - (0.9 + 0.1 * batch_var)).abs() < 1e-15);

        let (y, stats) = bn_forward(&x, 1e-5, &p, Some(&mut r.clone()), false).unwrap();
        assert_eq!(stats.mean.get(3, 1, 2, 2), r.mean[1]);
        let want = (x.get(3, 1, 2, 2) - r.mean[1]) / (r.var[1] + 1e-5).sqrt();
        assert!((y.get(3, 1, 2, 2) - want).abs() < 1e-14);
        assert_eq!(stats.n_map[0], 36);
    }

    #[test]
    fn bn_eval_without_running_stats() {
        let x = rand([2, 2, 2, 2], 3);
        assert!(matches!(
            bn_forward(&x, 1e-5, &AffineParams::identity(2), None, false),
            Err(LcnError::State(_))
        ));
    }

    #[test]
    fn gn_indivisible() {
        let x = rand([1, 6, 2, 2], 3);
        let p = AffineParams::identity(6);
        assert!(matches!(
            gn_forward(&x, 4, 1e-5, &p),
            Err(LcnError::Group(_))
        ));
        assert!(matches!(
            gn_forward(&x, 0, 1e-5, &p),
            Err(LcnError::Group(_))
        ));
    }
}
