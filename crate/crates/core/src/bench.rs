//! Runtime of LCN against window size.

use std::fs::File;
use std::hint::black_box;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{LcnError, Result};
use crate::norms::{lcn_forward, AffineParams, LcnConfig};
use crate::oracle::lcn_naive;
use crate::tensor::{fill_random, DType, Dims, Distribution};
use crate::window::WindowMode;

pub const FAST_OP: &str = "lcn_fast";
pub const NAIVE_OP: &str = "lcn_naive";
/// Largest window side timed on the naive path.
pub const NAIVE_MAX_WINDOW: usize = 31;
pub const MIN_REPS: usize = 5;
pub const WARMUP_RUNS: usize = 2;

/// One CSV row: the median of `reps` timed runs of one operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub op: String,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub p: usize,
    pub q: usize,
    pub c_group: usize,
    pub mode: WindowMode,
    pub reps: usize,
    pub median_ns: u64,
    /// Input elements per second at the median time.
    pub throughput_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dims: Dims,
    /// Square window sides.
    pub windows: Vec<usize>,
    pub c_group: usize,
    pub mode: WindowMode,
    pub reps: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(LcnError::Range("no window sizes given".into()));
        }
        if self.reps < MIN_REPS {
            return Err(LcnError::Range(format!(
                "at least {MIN_REPS} repetitions are needed, got {}",
                self.reps
            )));
        }
        for &k in &self.windows {
            LcnConfig::new(self.c_group, k, k).validate(self.dims)?;
        }
        Ok(())
    }
}

fn median(mut times: Vec<u64>) -> u64 {
    times.sort_unstable();
    let n = times.len();
    if n % 2 == 1 {
        times[n / 2]
    } else {
        (times[n / 2 - 1] + times[n / 2]) / 2
    }
}

/// Median time in nanoseconds of each job. After the warmup runs the timed repetitions go
/// round-robin over the jobs, so slow phases of the machine spread evenly
/// instead of landing on one window size.
pub fn interleaved_medians(
    reps: usize,
    jobs: &mut [Box<dyn FnMut() -> Result<()> + '_>],
) -> Result<Vec<u64>> {
    for job in jobs.iter_mut() {
        for _ in 0..WARMUP_RUNS {
            job()?;
        }
    }
    let mut times = vec![Vec::with_capacity(reps); jobs.len()];
    for _ in 0..reps {
        for (job, t) in jobs.iter_mut().zip(&mut times) {
            let start = Instant::now();
            job()?;
            t.push(start.elapsed().as_nanos() as u64);
        }
    }
    Ok(times.into_iter().map(median).collect())
}

/// Times the summed-area path at every window and the naive path at windows
/// up to [`NAIVE_MAX_WINDOW`], on a real32 normal input.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let d = cfg.dims;
    let x = fill_random([d.b, d.c, d.h, d.w], cfg.seed, Distribution::Normal01)?.cast(DType::F32);
    let params = AffineParams::identity(d.c);
    let record = |op: &str, k: usize, ns: u64| BenchRecord {
        op: op.to_string(),
        b: d.b,
        c: d.c,
        h: d.h,
        w: d.w,
        p: k,
        q: k,
        c_group: cfg.c_group,
        mode: cfg.mode,
        reps: cfg.reps,
        median_ns: ns,
        throughput_eps: d.len() as f64 / (ns.max(1) as f64 * 1e-9),
    };

    let run = |op: &'static str, windows: &[usize]| -> Result<Vec<BenchRecord>> {
        let configs: Vec<LcnConfig> = windows
            .iter()
            .map(|&k| LcnConfig::new(cfg.c_group, k, k).with_mode(cfg.mode))
            .collect();
        let mut jobs: Vec<Box<dyn FnMut() -> Result<()> + '_>> = configs
            .iter()
            .map(|lcn| -> Box<dyn FnMut() -> Result<()> + '_> {
                let (x, params) = (&x, &params);
                if op == FAST_OP {
                    Box::new(move || {
                        black_box(lcn_forward(black_box(x), lcn, params)?);
                        Ok(())
                    })
                } else {
                    Box::new(move || {
                        black_box(lcn_naive(black_box(x), lcn, params)?);
                        Ok(())
                    })
                }
            })
            .collect();
        let medians = interleaved_medians(cfg.reps, &mut jobs)?;
        Ok(windows
            .iter()
            .zip(medians)
            .map(|(&k, ns)| record(op, k, ns))
            .collect())
    };
    let naive: Vec<usize> = cfg
        .windows
        .iter()
        .copied()
        .filter(|&k| k <= NAIVE_MAX_WINDOW)
        .collect();
    let mut out = run(FAST_OP, &cfg.windows)?;
    out.extend(run(NAIVE_OP, &naive)?);
    Ok(out)
}

/// Ratio of the slowest to the fastest median among rows of `op`.
pub fn flatness(records: &[BenchRecord], op: &str) -> Option<f64> {
    let times: Vec<f64> = records
        .iter()
        .filter(|r| r.op == op)
        .map(|r| r.median_ns as f64)
        .collect();
    let max = times.iter().copied().reduce(f64::max)?;
    let min = times.iter().copied().reduce(f64::min)?;
    Some(max / min)
}

/// Median time of `op` at window `to` over its time at window `from`.
pub fn growth(records: &[BenchRecord], op: &str, from: usize, to: usize) -> Option<f64> {
    let at = |k: usize| {
        records
            .iter()
            .find(|r| r.op == op && r.p == k)
            .map(|r| r.median_ns as f64)
    };
    Some(at(to)? / at(from)?)
}

pub fn write_csv<W: Write>(out: W, records: &[BenchRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in records {
        writer.serialize(r).map_err(csv_error)?;
    }
    writer.flush().map_err(|e| LcnError::io("csv output", e))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<BenchRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_error)
}

pub fn write_csv_file(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| LcnError::io(path, e))?;
    write_csv(file, records)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<BenchRecord>> {
    read_csv(File::open(path).map_err(|e| LcnError::io(path, e))?)
}

fn csv_error(e: csv::Error) -> LcnError {
    LcnError::Format(format!("benchmark csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(windows: Vec<usize>) -> BenchConfig {
        BenchConfig {
            dims: Dims::new(1, 2, 12, 12).unwrap(),
            windows,
            c_group: 1,
            mode: WindowMode::Sliding,
            reps: MIN_REPS,
            seed: 3,
        }
    }

    #[test]
    fn rows_for_both_paths() {
        let recs = run_bench(&tiny(vec![1, 3, 40])).unwrap();
        let fast: Vec<_> = recs
            .iter()
            .filter(|r| r.op == FAST_OP)
            .map(|r| r.p)
            .collect();
        let naive: Vec<_> = recs
            .iter()
            .filter(|r| r.op == NAIVE_OP)
            .map(|r| r.p)
            .collect();
        assert_eq!(fast, vec![1, 3, 40]);
        assert_eq!(naive, vec![1, 3]);
        assert!(recs.iter().all(|r| r.reps == 5 && r.throughput_eps > 0.0));
        assert!(flatness(&recs, FAST_OP).unwrap() >= 1.0);
        assert!(growth(&recs, NAIVE_OP, 1, 3).is_some());
        assert!(growth(&recs, NAIVE_OP, 1, 40).is_none());
    }

    #[test]
    fn csv_round_trip() {
        let recs = run_bench(&tiny(vec![3, 5])).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "op,B,C,H,W,p,q,c_group,mode,reps,median_ns,throughput_eps"
        );
        assert_eq!(read_csv(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(run_bench(&tiny(vec![])), Err(LcnError::Range(_))));
        assert!(matches!(run_bench(&tiny(vec![0])), Err(LcnError::Range(_))));
        let mut few = tiny(vec![3]);
        few.reps = 4;
        assert!(matches!(run_bench(&few), Err(LcnError::Range(_))));
        let mut groups = tiny(vec![3]);
        groups.c_group = 3;
        assert!(matches!(run_bench(&groups), Err(LcnError::Group(_))));
    }
}
