//! Command-line front end: `apply`, `check` and `bench`.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, BenchConfig, FAST_OP, NAIVE_OP};
use crate::error::LcnError;
use crate::norms::{
    bn_forward, gn_forward, in_forward, lcn_forward, ln_forward, lrn_forward, AffineParams,
    LcnConfig, LrnConfig, NormStats, DEFAULT_EPS,
};
use crate::tensor::{read_tensor, write_tensor, Dims, Tensor4};
use crate::verify::{run_suite, Suite};
use crate::window::WindowMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FILE: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "lcn",
    version,
    about = "Local context normalization and reference norms"
)]
struct Cli {
    /// Kernel thread count (default: all cores). Never changes results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize an LCNT tensor file.
    Apply(ApplyArgs),
    /// Run the property suites.
    Check(CheckArgs),
    /// Time the summed-area path against the naive path over window sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Norm {
    Lcn,
    Gn,
    In,
    Ln,
    Bn,
    Lrn,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = Norm::Lcn)]
    norm: Norm,
    /// Channels per group (lcn, gn). Default 2.
    #[arg(long)]
    c_group: Option<usize>,
    /// Window as PxQ, or a single side. lcn default 227x227; lrn takes an odd square.
    #[arg(long, value_parser = parse_window)]
    window: Option<(usize, usize)>,
    #[arg(long)]
    mode: Option<WindowMode>,
    #[arg(long)]
    eps: Option<f64>,
    /// LCNT file with one scale per channel.
    #[arg(long)]
    gamma: Option<PathBuf>,
    /// LCNT file with one shift per channel.
    #[arg(long)]
    beta: Option<PathBuf>,
    /// Writes PATH.mean.lcnt and PATH.var.lcnt.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value = "1x32x256x256")]
    dims: Dims,
    /// Comma-separated square window sides.
    #[arg(long, value_delimiter = ',', default_value = "7,31,127,227")]
    windows: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    c_group: usize,
    #[arg(long, default_value = "sliding")]
    mode: WindowMode,
    #[arg(long, default_value_t = bench::MIN_REPS)]
    reps: usize,
    /// Output file; the CSV goes to standard output when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<LcnError> for Failure {
    fn from(e: LcnError) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &LcnError) -> i32 {
    match e {
        LcnError::Format(_)
        | LcnError::UnsupportedDtype(_)
        | LcnError::Truncation { .. }
        | LcnError::Data(_)
        | LcnError::Dim(_)
        | LcnError::Io { .. } => EXIT_FILE,
        LcnError::Range(_) => EXIT_USAGE,
        LcnError::Index(_) | LcnError::Group(_) | LcnError::Shape(_) | LcnError::State(_) => {
            EXIT_SHAPE
        }
        LcnError::DegenerateInput(_) => EXIT_CHECK_FAILED,
    }
}

fn parse_window(s: &str) -> Result<(usize, usize), String> {
    let side = |t: &str| -> Result<usize, String> {
        match t.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("bad window side {t:?}")),
            Ok(v) => Ok(v),
        }
    };
    match s.split_once(['x', 'X']) {
        Some((p, q)) => Ok((side(p)?, side(q)?)),
        None => side(s).map(|k| (k, k)),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("lcn: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, Failure> {
    let Some(threads) = cli.threads else {
        return execute(cli.command);
    };
    if threads == 0 {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::usage(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| execute(cli.command))
}

fn execute(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Apply(a) => apply(a),
        Command::Check(a) => check(a),
        Command::Bench(a) => run_bench(a),
    }
}

fn apply(a: ApplyArgs) -> Result<i32, Failure> {
    let name = format!("{:?}", a.norm).to_lowercase();
    let reject = |present: bool, flag: &str| -> Result<(), Failure> {
        if present {
            Err(Failure::usage(format!(
                "{flag} does not apply to --norm {name}"
            )))
        } else {
            Ok(())
        }
    };
    match a.norm {
        Norm::Lcn => {}
        Norm::Gn => {
            reject(a.window.is_some(), "--window")?;
            reject(a.mode.is_some(), "--mode")?;
        }
        Norm::In | Norm::Ln | Norm::Bn => {
            reject(a.window.is_some(), "--window")?;
            reject(a.mode.is_some(), "--mode")?;
            reject(a.c_group.is_some(), "--c-group")?;
        }
        Norm::Lrn => {
            reject(a.mode.is_some(), "--mode")?;
            reject(a.c_group.is_some(), "--c-group")?;
            reject(a.eps.is_some(), "--eps")?;
            reject(a.gamma.is_some() || a.beta.is_some(), "--gamma/--beta")?;
            reject(a.stats.is_some(), "--stats")?;
            if let Some((p, q)) = a.window {
                if p != q {
                    return Err(Failure::usage("--norm lrn needs a square window"));
                }
            }
        }
    }
    let eps = a.eps.unwrap_or(DEFAULT_EPS);
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Failure::usage(format!("--eps must be positive, got {eps}")));
    }
    let c_group = a.c_group.unwrap_or(2);
    if c_group == 0 {
        return Err(Failure::usage("--c-group must be at least 1"));
    }

    let x = read_tensor(&a.input)?;
    let d = x.dims();
    let params = read_params(a.gamma.as_deref(), a.beta.as_deref(), d.c)?;
    let (y, stats): (Tensor4, Option<NormStats>) = match a.norm {
        Norm::Lcn => {
            let defaults = LcnConfig::default();
            let (p, q) = a.window.unwrap_or((defaults.p, defaults.q));
            let cfg = LcnConfig::new(c_group, p, q)
                .with_mode(a.mode.unwrap_or_default())
                .with_eps(eps);
            let (y, s) = lcn_forward(&x, &cfg, &params)?;
            (y, Some(s))
        }
        Norm::Gn => {
            if d.c % c_group != 0 {
                return Err(LcnError::Group(format!(
                    "c_group {c_group} does not divide {} channels",
                    d.c
                ))
                .into());
            }
            let (y, s) = gn_forward(&x, d.c / c_group, eps, &params)?;
            (y, Some(s))
        }
        Norm::In => in_forward(&x, eps, &params).map(|(y, s)| (y, Some(s)))?,
        Norm::Ln => ln_forward(&x, eps, &params).map(|(y, s)| (y, Some(s)))?,
        Norm::Bn => bn_forward(&x, eps, &params, None, true).map(|(y, s)| (y, Some(s)))?,
        Norm::Lrn => {
            let mut cfg = LrnConfig::default();
            if let Some((k, _)) = a.window {
                cfg.window = k;
            }
            (lrn_forward(&x, &cfg)?, None)
        }
    };
    write_tensor(&y, &a.output)?;
    if let (Some(base), Some(stats)) = (&a.stats, stats) {
        write_tensor(&stats.mean, suffixed(base, ".mean.lcnt"))?;
        write_tensor(&stats.var, suffixed(base, ".var.lcnt"))?;
    }
    Ok(EXIT_OK)
}

fn read_params(
    gamma: Option<&Path>,
    beta: Option<&Path>,
    channels: usize,
) -> Result<AffineParams, Failure> {
    let load = |path: Option<&Path>, fill: f64, what: &str| -> Result<Vec<f64>, Failure> {
        let Some(path) = path else {
            return Ok(vec![fill; channels]);
        };
        let t = read_tensor(path)?;
        if t.len() != channels {
            return Err(LcnError::Shape(format!(
                "{what} has {} elements, input has {channels} channels",
                t.len()
            ))
            .into());
        }
        Ok(t.to_f64_vec())
    };
    Ok(AffineParams::new(
        load(gamma, 1.0, "gamma")?,
        load(beta, 0.0, "beta")?,
    )?)
}

fn suffixed(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn check(a: CheckArgs) -> Result<i32, Failure> {
    if a.trials == 0 {
        return Err(Failure::usage("--trials must be at least 1"));
    }
    let reports = run_suite(a.suite, a.trials, a.seed)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!(
        "{} of {} suites passed (seed {})",
        reports.len() - failed,
        reports.len(),
        a.seed
    );
    Ok(if failed == 0 {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

fn run_bench(a: BenchArgs) -> Result<i32, Failure> {
    let cfg = BenchConfig {
        dims: a.dims,
        windows: a.windows,
        c_group: a.c_group,
        mode: a.mode,
        reps: a.reps,
        seed: a.seed,
    };
    cfg.validate()?;
    // Open the destination first so a bad path fails before the timing runs.
    let file = match &a.csv {
        Some(path) => Some(File::create(path).map_err(|e| LcnError::io(path, e))?),
        None => None,
    };
    let records = bench::run_bench(&cfg)?;
    let mut summary: Box<dyn Write> = match file {
        Some(f) => {
            bench::write_csv(f, &records)?;
            Box::new(std::io::stdout())
        }
        None => {
            bench::write_csv(std::io::stdout(), &records)?;
            Box::new(std::io::stderr())
        }
    };
    for r in &records {
        let _ = writeln!(
            summary,
            "{:<10} {:>4}x{:<4} median {:>12.3} ms  {:>10.3e} elem/s",
            r.op,
            r.p,
            r.q,
            r.median_ns as f64 / 1e6,
            r.throughput_eps
        );
    }
    if let Some(ratio) = bench::flatness(&records, FAST_OP) {
        let _ = writeln!(
            summary,
            "flatness ratio (max/min fast-path median): {ratio:.3}"
        );
    }
    let naive: Vec<usize> = records
        .iter()
        .filter(|r| r.op == NAIVE_OP)
        .map(|r| r.p)
        .collect();
    if let (Some(&lo), Some(&hi)) = (naive.iter().min(), naive.iter().max()) {
        if lo != hi {
            let g = bench::growth(&records, NAIVE_OP, lo, hi).unwrap_or(f64::NAN);
            let _ = writeln!(summary, "naive growth from window {lo} to {hi}: {g:.2}x");
        }
    }
    Ok(EXIT_OK)
}
