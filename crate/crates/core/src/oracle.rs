//! Slow, direct reference implementations.
//!
//! Every statistic here is computed by visiting the members of its pool one
//! by one, in real64, single-threaded. Only the window geometry is shared
//! with the fast path.

use crate::error::{LcnError, Result};
use crate::integral::{check_group, check_window};
use crate::norms::{AffineParams, LcnConfig, LrnConfig, NormStats};
use crate::tensor::{Dims, Tensor4};
use crate::window::{channel_range, spatial_range};

/// Direct evaluation of local context normalization, `O(N * c_group * p * q)`.
pub fn lcn_naive(
    x: &Tensor4,
    cfg: &LcnConfig,
    params: &AffineParams,
) -> Result<(Tensor4, NormStats)> {
    let d = x.dims();
    check_group(d.c, cfg.c_group)?;
    check_window(cfg.p, cfg.q)?;
    params.check(d.c)?;
    x.ensure_finite()?;
    let mut y = Vec::with_capacity(d.len());
    let mut mean = Vec::with_capacity(d.len());
    let mut var = Vec::with_capacity(d.len());
    let mut n_map = Vec::with_capacity(d.len());
    for b in 0..d.b {
        for c in 0..d.c {
            let (c0, c1) = channel_range(c, cfg.c_group);
            for h in 0..d.h {
                let (h0, h1) = spatial_range(h, d.h, cfg.p, cfg.mode);
                for w in 0..d.w {
                    let (w0, w1) = spatial_range(w, d.w, cfg.q, cfg.mode);
                    let mut sum = 0.0;
                    let mut n = 0usize;
                    for kc in c0..c1 {
                        for kh in h0..h1 {
                            for kw in w0..w1 {
                                sum += x.get(b, kc, kh, kw);
                                n += 1;
                            }
                        }
                    }
                    let mu = sum / n as f64;
                    let mut dev = 0.0;
                    for kc in c0..c1 {
                        for kh in h0..h1 {
                            for kw in w0..w1 {
                                let e = x.get(b, kc, kh, kw) - mu;
                                dev += e * e;
                            }
                        }
                    }
                    let sigma2 = dev / n as f64;
                    let xhat = (x.get(b, c, h, w) - mu) / (sigma2 + cfg.eps).sqrt();
                    y.push(params.gamma[c] * xhat + params.beta[c]);
                    mean.push(mu);
                    var.push(sigma2);
                    n_map.push(n as u32);
                }
            }
        }
    }
    Ok((
        Tensor4::from_f64(d, y)?,
        NormStats {
            mean: Tensor4::from_f64(d, mean)?,
            var: Tensor4::from_f64(d, var)?,
            n_map,
        },
    ))
}

/// Operations covered by [`family_naive`]. Batch norm uses batch statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyOp {
    Gn { groups: usize },
    In,
    Ln,
    Bn,
    Lrn(LrnConfig),
}

/// Direct evaluation of the reference family. `eps` and `params` are
/// ignored for LRN.
pub fn family_naive(op: FamilyOp, x: &Tensor4, eps: f64, params: &AffineParams) -> Result<Tensor4> {
    let d = x.dims();
    x.ensure_finite()?;
    if let FamilyOp::Lrn(cfg) = op {
        cfg.validate()?;
        return lrn_naive(x, &cfg);
    }
    params.check(d.c)?;
    if let FamilyOp::Gn { groups } = op {
        if groups == 0 || !d.c.is_multiple_of(groups) {
            return Err(LcnError::Group(format!(
                "{groups} groups do not divide {} channels",
                d.c
            )));
        }
    }
    // Membership of element (kb, kc) in the pool of (ib, ic); spatial
    // coordinates never restrict a global pool.
    let member = |ib: usize, ic: usize, kb: usize, kc: usize| -> bool {
        match op {
            FamilyOp::Gn { groups } => {
                let per = d.c / groups;
                kb == ib && kc / per == ic / per
            }
            FamilyOp::In => kb == ib && kc == ic,
            FamilyOp::Ln => kb == ib,
            FamilyOp::Bn => kc == ic,
            FamilyOp::Lrn(_) => unreachable!(),
        }
    };
    let mut out = vec![0.0; d.len()];
    for ib in 0..d.b {
        for ic in 0..d.c {
            let pool: Vec<f64> = (0..d.len())
                .filter(|&k| {
                    let (kb, kc, _, _) = d.coords(k);
                    member(ib, ic, kb, kc)
                })
                .map(|k| x.at(k))
                .collect();
            let m = pool.len() as f64;
            let mu = pool.iter().sum::<f64>() / m;
            let sigma = (pool.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m + eps).sqrt();
            for h in 0..d.h {
                for w in 0..d.w {
                    let i = d.index(ib, ic, h, w);
                    out[i] = params.gamma[ic] * (x.at(i) - mu) / sigma + params.beta[ic];
                }
            }
        }
    }
    Tensor4::from_f64(d, out)
}

/// Gaussian-weighted loop over the full 2-D window at every position.
fn lrn_naive(x: &Tensor4, cfg: &LrnConfig) -> Result<Tensor4> {
    let d: Dims = x.dims();
    let weights = cfg.weights();
    let k = cfg.window;
    let r = (k / 2) as isize;
    let at = |b: usize, c: usize, h: isize, w: isize| {
        let h = h.clamp(0, d.h as isize - 1) as usize;
        let w = w.clamp(0, d.w as isize - 1) as usize;
        x.get(b, c, h, w)
    };
    let mut out = vec![0.0; d.len()];
    for b in 0..d.b {
        let mut numer = vec![0.0; d.len() / d.b];
        let mut sigma = vec![0.0; d.plane()];
        for h in 0..d.h {
            for w in 0..d.w {
                let mut pooled = 0.0;
                for c in 0..d.c {
                    let centre = x.get(b, c, h, w);
                    // Offsets from the centre value, so flat regions give exact zeros.
                    let mut local = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            let v = at(
                                b,
                                c,
                                h as isize + dy as isize - r,
                                w as isize + dx as isize - r,
                            );
                            local += weights[dy * k + dx] * (v - centre);
                        }
                    }
                    numer[(c * d.h + h) * d.w + w] = -local;
                    for dy in 0..k {
                        for dx in 0..k {
                            let v = at(
                                b,
                                c,
                                h as isize + dy as isize - r,
                                w as isize + dx as isize - r,
                            );
                            let e = (v - centre) - local;
                            pooled += weights[dy * k + dx] * e * e;
                        }
                    }
                }
                sigma[h * d.w + w] = (pooled / d.c as f64).sqrt();
            }
        }
        let floor = sigma.iter().sum::<f64>() / sigma.len() as f64;
        for c in 0..d.c {
            for h in 0..d.h {
                for w in 0..d.w {
                    let div = floor.max(sigma[h * d.w + w]);
                    let v = numer[(c * d.h + h) * d.w + w];
                    out[d.index(b, c, h, w)] = if div > 0.0 { v / div } else { 0.0 };
                }
            }
        }
    }
    Tensor4::from_f64(d, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::{bn_forward, gn_forward, in_forward, lcn_forward, ln_forward, lrn_forward};
    use crate::tensor::{fill_random, DType, Distribution};
    use crate::window::WindowMode;

    #[test]
    fn constant_input_gives_beta() {
        let x = Tensor4::full(Dims::new(1, 2, 4, 4).unwrap(), DType::F64, 2.5);
        let p = AffineParams::new(vec![2.0, 3.0], vec![0.25, -4.0]).unwrap();
        let (y, _) = lcn_naive(&x, &LcnConfig::new(1, 3, 3), &p).unwrap();
        for h in 0..4 {
            assert_eq!(y.get(0, 0, h, 1), 0.25);
            assert_eq!(y.get(0, 1, h, 2), -4.0);
        }
    }

    #[test]
    fn two_element_closed_form() {
        let x = Tensor4::from_f64(Dims::new(1, 1, 1, 2).unwrap(), vec![0.0, 2.0]).unwrap();
        let (y, stats) =
            lcn_naive(&x, &LcnConfig::new(1, 5, 5), &AffineParams::identity(1)).unwrap();
        assert_eq!(stats.mean.to_f64_vec(), vec![1.0, 1.0]);
        assert_eq!(stats.var.to_f64_vec(), vec![1.0, 1.0]);
        let want = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert_eq!(y.to_f64_vec(), vec![-want, want]);
    }

    #[test]
    fn gn_hand_arithmetic() {
        let x = Tensor4::from_f64(
            Dims::new(1, 4, 2, 2).unwrap(),
            (0..16).map(f64::from).collect(),
        )
        .unwrap();
        let y = family_naive(
            FamilyOp::Gn { groups: 2 },
            &x,
            1e-5,
            &AffineParams::identity(4),
        )
        .unwrap();
        // Group 0 holds 0..8: mean 3.5, variance 5.25.
        assert_eq!(y.at(0), (0.0 - 3.5) / (5.25f64 + 1e-5).sqrt());
        assert_eq!(y.at(15), (15.0 - 11.5) / (5.25f64 + 1e-5).sqrt());
    }

    #[test]
    fn in_is_gn_with_one_channel_groups() {
        let x = fill_random([2, 3, 4, 4], 1, Distribution::Normal01).unwrap();
        let p = AffineParams::identity(3);
        let a = family_naive(FamilyOp::In, &x, 1e-5, &p).unwrap();
        let b = family_naive(FamilyOp::Gn { groups: 3 }, &x, 1e-5, &p).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn bn_mean_is_exact_on_integers() {
        let dims = Dims::new(3, 2, 2, 3).unwrap();
        let x = Tensor4::from_f64(dims, (0..36).map(|v| f64::from(v * 7 % 11)).collect()).unwrap();
        let (_, stats) = bn_forward(&x, 1e-5, &AffineParams::identity(2), None, true).unwrap();
        for c in 0..2 {
            let mut sum = 0.0;
            for b in 0..3 {
                for h in 0..2 {
                    for w in 0..3 {
                        sum += x.get(b, c, h, w);
                    }
                }
            }
            assert_eq!(stats.mean.get(0, c, 0, 0), sum / 18.0);
        }
    }

    #[test]
    fn fast_paths_agree_with_oracle() {
        let x = fill_random([2, 8, 6, 6], 4, Distribution::Normal01).unwrap();
        let p = AffineParams::new((0..8).map(|c| 0.5 + c as f64).collect(), vec![0.3; 8]).unwrap();
        let eps = 1e-5;
        let cases = [
            (
                gn_forward(&x, 4, eps, &p).unwrap().0,
                FamilyOp::Gn { groups: 4 },
            ),
            (in_forward(&x, eps, &p).unwrap().0, FamilyOp::In),
            (ln_forward(&x, eps, &p).unwrap().0, FamilyOp::Ln),
            (bn_forward(&x, eps, &p, None, true).unwrap().0, FamilyOp::Bn),
        ];
        for (fast, op) in cases {
            let slow = family_naive(op, &x, eps, &p).unwrap();
            assert!(fast.max_rel_diff(&slow) < 1e-12, "{op:?}");
        }
        for mode in [WindowMode::Sliding, WindowMode::Tiled] {
            let cfg = LcnConfig::new(2, 5, 3).with_mode(mode);
            let (fast, fs) = lcn_forward(&x, &cfg, &p).unwrap();
            let (slow, ss) = lcn_naive(&x, &cfg, &p).unwrap();
            assert!(fast.max_rel_diff(&slow) < 1e-9, "{mode:?}");
            assert_eq!(fs.n_map, ss.n_map);
        }
    }

    #[test]
    fn lrn_matches_direct_loop() {
        let x = fill_random([1, 2, 9, 9], 6, Distribution::Normal01).unwrap();
        let cfg = LrnConfig::default();
        let fast = lrn_forward(&x, &cfg).unwrap();
        let slow = family_naive(FamilyOp::Lrn(cfg), &x, 0.0, &AffineParams::identity(2)).unwrap();
        assert!(fast.max_rel_diff(&slow) < 1e-9);
    }
}
