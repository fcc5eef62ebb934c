//! Seeded property suites: oracle equivalence, reduction identities,
//! gradient checks and shift consistency.
//!
//! Each trial draws its case from its own seed, so a failing trial can be
//! replayed from the seed in the report.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{LcnError, Result};
use crate::grad::{adjoint_check, finite_diff_check, gradient_test_input, ForwardOp};
use crate::norms::{
    lcn_counts, lcn_forward, lrn_forward, AffineParams, LcnConfig, LrnConfig, ReferenceNorm,
};
use crate::oracle::{family_naive, lcn_naive, FamilyOp};
use crate::tensor::{fill_random, Dims, Distribution, Tensor4};
use crate::window::WindowMode;

pub const ORACLE_TOL: f64 = 1e-9;
pub const REDUCTION_TOL: f64 = 1e-12;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const ADJOINT_TOL: f64 = 1e-10;
pub const SHIFT_TOL: f64 = 1e-12;
pub const FD_STEP: f64 = 1e-4;
pub const SHIFT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Oracle,
    Reductions,
    Gradients,
    Shift,
    All,
}

impl Suite {
    pub fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![
                Suite::Oracle,
                Suite::Reductions,
                Suite::Gradients,
                Suite::Shift,
            ],
            s => vec![s],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Reductions => "reductions",
            Suite::Gradients => "gradients",
            Suite::Shift => "shift",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = LcnError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "oracle" => Suite::Oracle,
            "reductions" => Suite::Reductions,
            "gradients" => Suite::Gradients,
            "shift" => Suite::Shift,
            "all" => Suite::All,
            other => return Err(LcnError::Range(format!("unknown suite {other:?}"))),
        })
    }
}

/// Worst error of one named check across the trials of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckStat {
    pub name: String,
    pub tolerance: f64,
    pub cases: usize,
    pub failures: usize,
    pub worst: f64,
    pub worst_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    pub rejected: usize,
    pub checks: Vec<CheckStat>,
    /// Seed of the first failing trial.
    pub first_failure: Option<u64>,
}

impl SuiteReport {
    fn new(suite: Suite, trials: usize) -> Self {
        SuiteReport {
            suite,
            trials,
            rejected: 0,
            checks: Vec::new(),
            first_failure: None,
        }
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().map(|c| c.failures).sum()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }

    pub fn check(&self, name: &str) -> Option<&CheckStat> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn record(&mut self, name: &str, tolerance: f64, seed: u64, err: f64) {
        let idx = match self.checks.iter().position(|c| c.name == name) {
            Some(i) => i,
            None => {
                self.checks.push(CheckStat {
                    name: name.to_string(),
                    tolerance,
                    cases: 0,
                    failures: 0,
                    worst: 0.0,
                    worst_seed: seed,
                });
                self.checks.len() - 1
            }
        };
        let stat = &mut self.checks[idx];
        stat.cases += 1;
        // NaN counts as a failure.
        if err.is_nan() || err >= tolerance {
            stat.failures += 1;
            self.first_failure.get_or_insert(seed);
        }
        if err.is_nan() || err > stat.worst {
            stat.worst = err;
            stat.worst_seed = seed;
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "[{status}] suite {}: {} trials, {} rejected, {} failures",
            self.suite.name(),
            self.trials,
            self.rejected,
            self.failures()
        )?;
        for c in &self.checks {
            write!(
                f,
                "\n    {:<28} cases {:>4}  fail {:>3}  worst {:.3e} (tol {:.0e}, seed {})",
                c.name, c.cases, c.failures, c.worst, c.tolerance, c.worst_seed
            )?;
        }
        if let Some(seed) = self.first_failure {
            write!(f, "\n    reproduce with trial seed {seed}")?;
        }
        Ok(())
    }
}

/// Seed of trial `trial` under base seed `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((trial as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9))
        ^ 0x94d0_49bb_1331_11eb
}

fn divisors(n: usize, among: &[usize]) -> Vec<usize> {
    among
        .iter()
        .copied()
        .filter(|&g| g <= n && n.is_multiple_of(g))
        .collect()
}

fn random_params(rng: &mut Xoshiro256PlusPlus, channels: usize) -> AffineParams {
    AffineParams {
        gamma: (0..channels).map(|_| rng.random_range(0.25..2.0)).collect(),
        beta: (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn random_dims(rng: &mut Xoshiro256PlusPlus, max: [usize; 4], channels: &[usize]) -> Dims {
    let c = *channels.choose(rng).unwrap();
    Dims::new(
        rng.random_range(1..=max[0]),
        c.min(max[1]),
        rng.random_range(1..=max[2]),
        rng.random_range(1..=max[3]),
    )
    .unwrap()
}

fn pick_mode(rng: &mut Xoshiro256PlusPlus) -> WindowMode {
    if rng.random_bool(0.5) {
        WindowMode::Sliding
    } else {
        WindowMode::Tiled
    }
}

/// Fast LCN (and the reference family) against the naive oracle.
pub fn run_oracle(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Oracle, trials);
    for t in 0..trials {
        let ts = trial_seed(seed, t);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(ts);
        let dims = random_dims(&mut rng, [2, 8, 16, 16], &[1, 2, 4, 8]);
        let c_group = *divisors(dims.c, &[1, 2, 4, 8]).choose(&mut rng).unwrap();
        let sizes = [1, 3, 5, 7, 16];
        let cfg = LcnConfig::new(
            c_group,
            *sizes.choose(&mut rng).unwrap(),
            *sizes.choose(&mut rng).unwrap(),
        )
        .with_mode(pick_mode(&mut rng));
        let dist = if rng.random_bool(0.5) {
            Distribution::Normal01
        } else {
            Distribution::Uniform01
        };
        let x = fill_random([dims.b, dims.c, dims.h, dims.w], ts, dist)?;
        let params = random_params(&mut rng, dims.c);

        let (fast, _) = lcn_forward(&x, &cfg, &params)?;
        let (slow, _) = lcn_naive(&x, &cfg, &params)?;
        report.record("lcn vs naive", ORACLE_TOL, ts, fast.max_rel_diff(&slow));

        let eps = cfg.eps;
        let groups = dims.c / c_group;
        for (op, naive) in [
            (ReferenceNorm::Gn { groups }, FamilyOp::Gn { groups }),
            (ReferenceNorm::In, FamilyOp::In),
            (ReferenceNorm::Ln, FamilyOp::Ln),
            (ReferenceNorm::Bn, FamilyOp::Bn),
        ] {
            let (fast, _) = op.forward(&x, eps, &params)?;
            let slow = family_naive(naive, &x, eps, &params)?;
            report.record(
                &format!("{} vs naive", op.name()),
                ORACLE_TOL,
                ts,
                fast.max_rel_diff(&slow),
            );
        }
        let lrn = LrnConfig::default();
        let fast = lrn_forward(&x, &lrn)?;
        let slow = family_naive(FamilyOp::Lrn(lrn), &x, eps, &params)?;
        report.record("lrn vs naive", ORACLE_TOL, ts, fast.max_rel_diff(&slow));
    }
    Ok(report)
}

/// Full-extent LCN against GN, LN and IN.
pub fn run_reductions(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Reductions, trials);
    for t in 0..trials {
        let ts = trial_seed(seed, t);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(ts);
        let dims = random_dims(&mut rng, [2, 8, 16, 16], &[2, 4, 6, 8]);
        let x = fill_random([dims.b, dims.c, dims.h, dims.w], ts, Distribution::Normal01)?;
        let params = random_params(&mut rng, dims.c);
        let eps = if rng.random_bool(0.5) { 1e-5 } else { 1e-3 };
        let p = dims.h + rng.random_range(0..4);
        let q = dims.w + rng.random_range(0..4);
        let mode = pick_mode(&mut rng);
        let c_group = *divisors(dims.c, &[1, 2, 3, 4, 6, 8])
            .choose(&mut rng)
            .unwrap();

        let lcn = |g: usize| -> Result<Tensor4> {
            let cfg = LcnConfig::new(g, p, q).with_mode(mode).with_eps(eps);
            Ok(lcn_forward(&x, &cfg, &params)?.0)
        };
        let gn = ReferenceNorm::Gn {
            groups: dims.c / c_group,
        }
        .forward(&x, eps, &params)?
        .0;
        report.record(
            "lcn(full) = gn",
            REDUCTION_TOL,
            ts,
            lcn(c_group)?.max_rel_diff(&gn),
        );
        let ln = ReferenceNorm::Ln.forward(&x, eps, &params)?.0;
        report.record(
            "lcn(full, C) = ln",
            REDUCTION_TOL,
            ts,
            lcn(dims.c)?.max_rel_diff(&ln),
        );
        let inorm = ReferenceNorm::In.forward(&x, eps, &params)?.0;
        report.record(
            "lcn(full, 1) = in",
            REDUCTION_TOL,
            ts,
            lcn(1)?.max_rel_diff(&inorm),
        );
    }
    Ok(report)
}

/// An LCN configuration whose every window pools at least four elements.
fn gradient_lcn_config(rng: &mut Xoshiro256PlusPlus, dims: Dims, eps: f64) -> LcnConfig {
    loop {
        let c_group = *divisors(dims.c, &[1, 2, 4]).choose(rng).unwrap();
        let cfg = LcnConfig::new(c_group, rng.random_range(1..=6), rng.random_range(1..=6))
            .with_mode(pick_mode(rng))
            .with_eps(eps);
        if lcn_counts(dims, &cfg).iter().all(|&n| n >= 4) {
            return cfg;
        }
    }
}

/// Finite-difference checks for every backward pass plus the adjoint identity.
pub fn run_gradients(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Gradients, trials);
    for t in 0..trials {
        let ts = trial_seed(seed, t);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(ts);
        let dims = loop {
            let d = random_dims(&mut rng, [2, 4, 8, 8], &[1, 2, 4]);
            // Global pools need more than one element too.
            if d.plane() >= 4 {
                break d;
            }
        };
        let eps = if rng.random_bool(0.5) { 1e-3 } else { 1e-5 };
        let x = gradient_test_input([dims.b, dims.c, dims.h, dims.w], ts)?;
        let params = random_params(&mut rng, dims.c);
        let groups = *divisors(dims.c, &[1, 2, 4]).choose(&mut rng).unwrap();
        let ops = [
            ForwardOp::Lcn(gradient_lcn_config(&mut rng, dims, eps)),
            ForwardOp::Reference {
                op: ReferenceNorm::Gn { groups },
                eps,
            },
            ForwardOp::Reference {
                op: ReferenceNorm::In,
                eps,
            },
            ForwardOp::Reference {
                op: ReferenceNorm::Ln,
                eps,
            },
            ForwardOp::Reference {
                op: ReferenceNorm::Bn,
                eps,
            },
        ];
        for op in &ops {
            match finite_diff_check(op, &x, &params, FD_STEP, ts ^ 1) {
                Ok(r) => report.record(
                    &format!("{} finite differences", op.name()),
                    GRADIENT_TOL,
                    ts,
                    r.max_rel_err,
                ),
                Err(LcnError::DegenerateInput(_)) => report.rejected += 1,
                Err(e) => return Err(e),
            }
            match adjoint_check(op, &x, &params, ts ^ 2) {
                Ok(r) => report.record(
                    &format!("{} adjoint identity", op.name()),
                    ADJOINT_TOL,
                    ts,
                    r.rel_err,
                ),
                Err(LcnError::DegenerateInput(_)) => report.rejected += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(report)
}

/// Largest difference between sliding-mode LCN of `x` and of `x` with its
/// first `SHIFT` columns cropped away, over positions whose window is not
/// clamped in the crop (and therefore not in the original either).
pub fn shift_discrepancy(
    x: &Tensor4,
    cfg: &LcnConfig,
    params: &AffineParams,
) -> Result<(f64, usize)> {
    let d = x.dims();
    if d.w <= SHIFT {
        return Err(LcnError::Dim(format!(
            "width {} must exceed the shift {SHIFT}",
            d.w
        )));
    }
    let cropped_w = d.w - SHIFT;
    let mut v = Vec::with_capacity(d.b * d.c * d.h * cropped_w);
    for b in 0..d.b {
        for c in 0..d.c {
            for h in 0..d.h {
                for w in SHIFT..d.w {
                    v.push(x.get(b, c, h, w));
                }
            }
        }
    }
    let crop = Tensor4::from_f64(Dims::new(d.b, d.c, d.h, cropped_w)?, v)?;
    let cfg = cfg.with_mode(WindowMode::Sliding);
    let (full, _) = lcn_forward(x, &cfg, params)?;
    let (shifted, _) = lcn_forward(&crop, &cfg, params)?;
    let half = cfg.q / 2;
    let mut worst = 0.0f64;
    let mut compared = 0;
    for w in half..cropped_w {
        if w - half + cfg.q > cropped_w {
            break;
        }
        for b in 0..d.b {
            for c in 0..d.c {
                for h in 0..d.h {
                    let a = shifted.get(b, c, h, w);
                    let r = full.get(b, c, h, w + SHIFT);
                    worst = worst.max((a - r).abs() / r.abs().max(1.0));
                    compared += 1;
                }
            }
        }
    }
    Ok((worst, compared))
}

/// Shift consistency of sliding-mode LCN.
pub fn run_shift(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Shift, trials);
    for t in 0..trials {
        let ts = trial_seed(seed, t);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(ts);
        let c = *[2usize, 4, 8].choose(&mut rng).unwrap();
        let dims = [
            rng.random_range(1..=2),
            c,
            rng.random_range(8..=24),
            rng.random_range(40..=64),
        ];
        let x = fill_random(dims, ts, Distribution::Normal01)?;
        let c_group = *divisors(c, &[1, 2, 4, 8]).choose(&mut rng).unwrap();
        let cfg = LcnConfig::new(
            c_group,
            *[3usize, 5, 7, 9, 15].choose(&mut rng).unwrap(),
            *[3usize, 5, 7, 9, 15, 21].choose(&mut rng).unwrap(),
        );
        let params = random_params(&mut rng, c);
        let (worst, compared) = shift_discrepancy(&x, &cfg, &params)?;
        if compared == 0 {
            report.rejected += 1;
            continue;
        }
        report.record("interior outputs agree", SHIFT_TOL, ts, worst);
    }
    Ok(report)
}

pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<Vec<SuiteReport>> {
    suite
        .expand()
        .into_iter()
        .map(|s| match s {
            Suite::Oracle => run_oracle(trials, seed),
            Suite::Reductions => run_reductions(trials, seed),
            Suite::Gradients => run_gradients(trials, seed),
            Suite::Shift => run_shift(trials, seed),
            Suite::All => unreachable!(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_a_few_trials() {
        for report in run_suite(Suite::All, 3, 1).unwrap() {
            assert!(report.passed(), "{report}");
            assert!(!report.checks.is_empty());
        }
    }

    #[test]
    fn failures_are_counted_and_seeded() {
        let mut r = SuiteReport::new(Suite::Oracle, 2);
        r.record("x", 1e-9, 10, 1e-12);
        r.record("x", 1e-9, 11, 1e-3);
        r.record("x", 1e-9, 12, f64::NAN);
        assert_eq!(r.failures(), 2);
        assert_eq!(r.first_failure, Some(11));
        assert!(!r.passed());
        assert!(r.to_string().contains("reproduce with trial seed 11"));
    }

    #[test]
    fn suite_names_parse() {
        for s in ["oracle", "reductions", "gradients", "shift", "all"] {
            assert_eq!(s.parse::<Suite>().unwrap().name(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
        assert_eq!(Suite::All.expand().len(), 4);
    }
}
