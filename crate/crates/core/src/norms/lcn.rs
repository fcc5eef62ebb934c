use crate::error::Result;
use crate::integral::{box_sums_all, Integral3};
use crate::norms::{normalize_affine, stats_from_parts, AffineParams, LcnConfig, NormStats};
use crate::tensor::{Dims, Tensor4};
use crate::window::AxisWindows;

/// Local context normalization.
///
/// Every position is normalized with the mean and variance of its spatial
/// window within its channel group. Window sums of `x` and `x²` come from two
/// summed-area tables per sample, so the cost does not depend on `p` or `q`.
/// The variance uses the sum-of-squares form and is clamped at zero before
/// `eps` is added.
pub fn lcn_forward(
    x: &Tensor4,
    cfg: &LcnConfig,
    params: &AffineParams,
) -> Result<(Tensor4, NormStats)> {
    let d = x.dims();
    cfg.validate(d)?;
    params.check(d.c)?;
    x.ensure_finite()?;

    let n_map = lcn_counts(d, cfg);
    let mut mean = Vec::with_capacity(d.len());
    let mut var = Vec::with_capacity(d.len());
    let per_sample = d.sample();
    for b in 0..d.b {
        let mut src = x.sample_f64(b);
        let offsets = center_groups(&mut src, cfg.c_group, d.plane());
        let sq: Vec<f64> = src.iter().map(|v| v * v).collect();
        let sums = box_sums_all(
            &Integral3::from_slice(&src, d.c, d.h, d.w),
            cfg.c_group,
            cfg.p,
            cfg.q,
            cfg.mode,
            cfg.boundary,
        )?;
        let sq_sums = box_sums_all(
            &Integral3::from_slice(&sq, d.c, d.h, d.w),
            cfg.c_group,
            cfg.p,
            cfg.q,
            cfg.mode,
            cfg.boundary,
        )?;
        let counts = &n_map[b * per_sample..(b + 1) * per_sample];
        let group_len = cfg.c_group * d.plane();
        for (i, ((&s, &s2), &n)) in sums.iter().zip(&sq_sums).zip(counts).enumerate() {
            if n == 1 {
                // The window is the element itself.
                mean.push(x.at(b * per_sample + i));
                var.push(0.0);
                continue;
            }
            let n = n as f64;
            let mu = s / n;
            mean.push(offsets[i / group_len] + mu);
            var.push((s2 / n - mu * mu).max(0.0));
        }
    }
    let y = normalize_affine(x, &mean, &var, cfg.eps, params)?;
    Ok((y, stats_from_parts(d, mean, var, n_map)?))
}

/// Subtracts from every channel group of a CHW sample its own mean and
/// returns the means. Window statistics are unchanged by the shift, while the
/// sum-of-squares table no longer carries the squared offset.
pub(crate) fn center_groups(sample: &mut [f64], c_group: usize, plane: usize) -> Vec<f64> {
    sample
        .chunks_mut(c_group * plane)
        .map(|group| {
            let m = group.iter().sum::<f64>() / group.len() as f64;
            group.iter_mut().for_each(|v| *v -= m);
            m
        })
        .collect()
}

/// Number of elements in the window and channel group of every position.
pub fn lcn_counts(dims: Dims, cfg: &LcnConfig) -> Vec<u32> {
    let rows = AxisWindows::new(dims.h, cfg.p, cfg.mode);
    let cols = AxisWindows::new(dims.w, cfg.q, cfg.mode);
    let mut plane = Vec::with_capacity(dims.plane());
    for h in 0..dims.h {
        let (h0, h1) = rows.window(h);
        for w in 0..dims.w {
            let (w0, w1) = cols.window(w);
            plane.push((cfg.c_group * (h1 - h0) * (w1 - w0)) as u32);
        }
    }
    let mut out = Vec::with_capacity(dims.len());
    for _ in 0..dims.b * dims.c {
        out.extend_from_slice(&plane);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::LcnError;
    use crate::tensor::{fill_random, DType, Distribution};
    use crate::window::WindowMode;

    fn d(b: usize, c: usize, h: usize, w: usize) -> Dims {
        Dims::new(b, c, h, w).unwrap()
    }

    #[test]
    fn constant_input_maps_to_zero() {
        let x = Tensor4::full(d(2, 4, 6, 5), DType::F64, 5.0);
        for mode in [WindowMode::Sliding, WindowMode::Tiled] {
            let cfg = LcnConfig::new(2, 3, 4).with_mode(mode);
            let (y, stats) = lcn_forward(&x, &cfg, &AffineParams::identity(4)).unwrap();
            assert!(y.to_f64_vec().iter().all(|&v| v == 0.0));
            assert!(stats.var.to_f64_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn two_element_closed_form() {
        let x = Tensor4::from_f64(d(1, 1, 1, 2), vec![0.0, 2.0]).unwrap();
        let cfg = LcnConfig::new(1, 1, 2).with_eps(1e-5);
        let (y, stats) = lcn_forward(&x, &cfg, &AffineParams::identity(1)).unwrap();
        assert_eq!(stats.mean.to_f64_vec(), vec![1.0, 1.0]);
        assert_eq!(stats.var.to_f64_vec(), vec![1.0, 1.0]);
        let want = 1.0 / (1.0f64 + 1e-5).sqrt();
        let got = y.to_f64_vec();
        assert!((got[0] + want).abs() < 1e-15 && (got[1] - want).abs() < 1e-15);
        assert!((want - 0.999995).abs() < 1e-10);
    }

    #[test]
    fn counts_follow_windows() {
        let dims = d(1, 4, 10, 7);
        let sliding = lcn_counts(dims, &LcnConfig::new(2, 3, 5));
        assert!(sliding.iter().all(|&n| n == 2 * 3 * 5));
        let tiled = lcn_counts(dims, &LcnConfig::new(4, 4, 3).with_mode(WindowMode::Tiled));
        // rows tile as 4,4,2 and columns as 3,3,1
        assert_eq!(tiled[0], 4 * 4 * 3);
        assert_eq!(tiled[9 * 7 + 6], 4 * 2);
        let full = lcn_counts(dims, &LcnConfig::new(1, 99, 99));
        assert!(full.iter().all(|&n| n == 70));
    }

    #[test]
    fn dtype_is_preserved() {
        let x = fill_random([1, 2, 5, 5], 2, Distribution::Normal01)
            .unwrap()
            .cast(DType::F32);
        let (y, stats) =
            lcn_forward(&x, &LcnConfig::new(2, 3, 3), &AffineParams::identity(2)).unwrap();
        assert_eq!(y.dtype(), DType::F32);
        assert_eq!(stats.mean.dtype(), DType::F64);
    }

    #[test]
    fn errors() {
        let x = fill_random([1, 4, 5, 5], 2, Distribution::Normal01).unwrap();
        let id = AffineParams::identity(4);
        assert!(matches!(
            lcn_forward(&x, &LcnConfig::new(3, 3, 3), &id),
            Err(LcnError::Group(_))
        ));
        assert!(matches!(
            lcn_forward(&x, &LcnConfig::new(2, 3, 3), &AffineParams::identity(2)),
            Err(LcnError::Shape(_))
        ));
        let mut v = x.to_f64_vec();
        v[17] = f64::NAN;
        let bad = Tensor4::from_f64(x.dims(), v).unwrap();
        assert!(matches!(
            lcn_forward(&bad, &LcnConfig::new(2, 3, 3), &id),
            Err(LcnError::Data(_))
        ));
    }

    #[test]
    fn default_config_on_large_input() {
        let x = fill_random([1, 4, 512, 512], 9, Distribution::Normal01).unwrap();
        let (y, _) = lcn_forward(&x, &LcnConfig::default(), &AffineParams::identity(4)).unwrap();
        assert_eq!(y.dims(), x.dims());
        assert!(y.first_non_finite().is_none());
    }
}
