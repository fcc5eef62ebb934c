use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lcn::bench::read_csv_file;
use lcn::{
    bn_forward, fill_random, gn_forward, lcn_forward, lrn_forward, read_tensor, write_tensor,
    AffineParams, DType, Dims, Distribution, LcnConfig, LrnConfig, Tensor4, WindowMode,
};
use tempfile::TempDir;

fn lcn_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcn"))
        .args(args)
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> i32 {
    lcn_cmd(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn save(dir: &TempDir, name: &str, t: &Tensor4) -> PathBuf {
    let path = dir.path().join(name);
    write_tensor(t, &path).unwrap();
    path
}

fn random(dims: [usize; 4], seed: u64) -> Tensor4 {
    fill_random(dims, seed, Distribution::Normal01).unwrap()
}

#[test]
fn apply_lcn_large_window_keeps_dims() {
    let dir = TempDir::new().unwrap();
    let x = random([1, 4, 512, 512], 1).cast(DType::F32);
    let input = save(&dir, "x.lcnt", &x);
    let output = dir.path().join("y.lcnt");
    let args = [
        "apply",
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--norm",
        "lcn",
        "--c-group",
        "2",
        "--window",
        "227x227",
    ];
    assert_eq!(code(&args), 0);
    let y = read_tensor(&output).unwrap();
    assert_eq!(y.dims(), x.dims());
    assert_eq!(y.dtype(), DType::F32);
    let (want, _) =
        lcn_forward(&x, &LcnConfig::new(2, 227, 227), &AffineParams::identity(4)).unwrap();
    assert!(y.bit_eq(&want));
}

#[test]
fn apply_matches_library_and_writes_stats() {
    let dir = TempDir::new().unwrap();
    let x = random([2, 4, 9, 11], 2);
    let input = save(&dir, "x.lcnt", &x);
    let gamma = save(
        &dir,
        "g.lcnt",
        &Tensor4::from_f64(Dims::new(1, 4, 1, 1).unwrap(), vec![1.5, -1.0, 0.5, 2.0]).unwrap(),
    );
    let beta = save(
        &dir,
        "b.lcnt",
        &Tensor4::from_f64(Dims::new(1, 4, 1, 1).unwrap(), vec![0.0, 0.25, -3.0, 1.0]).unwrap(),
    );
    let output = dir.path().join("y.lcnt");
    let stats = dir.path().join("run1");
    let args = [
        "apply",
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--c-group",
        "2",
        "--window",
        "5x3",
        "--mode",
        "tiled",
        "--eps",
        "1e-3",
        "--gamma",
        s(&gamma),
        "--beta",
        s(&beta),
        "--stats",
        s(&stats),
    ];
    assert_eq!(code(&args), 0);
    let params = AffineParams::new(vec![1.5, -1.0, 0.5, 2.0], vec![0.0, 0.25, -3.0, 1.0]).unwrap();
    let cfg = LcnConfig::new(2, 5, 3)
        .with_mode(WindowMode::Tiled)
        .with_eps(1e-3);
    let (want, want_stats) = lcn_forward(&x, &cfg, &params).unwrap();
    assert!(read_tensor(&output).unwrap().bit_eq(&want));
    let mean = read_tensor(dir.path().join("run1.mean.lcnt")).unwrap();
    let var = read_tensor(dir.path().join("run1.var.lcnt")).unwrap();
    assert!(mean.bit_eq(&want_stats.mean));
    assert!(var.bit_eq(&want_stats.var));
}

#[test]
fn apply_reference_norms() {
    let dir = TempDir::new().unwrap();
    let x = random([2, 4, 6, 6], 3);
    let input = save(&dir, "x.lcnt", &x);
    let output = dir.path().join("y.lcnt");
    let id = AffineParams::identity(4);
    let run = |extra: &[&str]| {
        let mut args = vec!["apply", "--input", s(&input), "--output", s(&output)];
        args.extend_from_slice(extra);
        assert_eq!(code(&args), 0, "{extra:?}");
        read_tensor(&output).unwrap()
    };
    // gn takes channels per group, like lcn
    assert!(
        run(&["--norm", "gn", "--c-group", "1"]).bit_eq(&gn_forward(&x, 4, 1e-5, &id).unwrap().0)
    );
    assert!(
        run(&["--norm", "gn", "--c-group", "4"]).bit_eq(&gn_forward(&x, 1, 1e-5, &id).unwrap().0)
    );
    assert!(run(&["--norm", "bn"]).bit_eq(&bn_forward(&x, 1e-5, &id, None, true).unwrap().0));
    let lrn = LrnConfig {
        window: 5,
        ..LrnConfig::default()
    };
    assert!(run(&["--norm", "lrn", "--window", "5"]).bit_eq(&lrn_forward(&x, &lrn).unwrap()));
    for norm in ["in", "ln"] {
        assert_eq!(run(&["--norm", norm]).dims(), x.dims());
    }
}

#[test]
fn constant_input_gives_zeros() {
    let dir = TempDir::new().unwrap();
    let x = Tensor4::full(Dims::new(1, 2, 8, 8).unwrap(), DType::F32, 3.25);
    let input = save(&dir, "x.lcnt", &x);
    let output = dir.path().join("y.lcnt");
    assert_eq!(
        code(&[
            "apply",
            "--input",
            s(&input),
            "--output",
            s(&output),
            "--window",
            "3x3"
        ]),
        0
    );
    assert!(read_tensor(&output)
        .unwrap()
        .to_f64_vec()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn single_element_window_gives_beta() {
    let dir = TempDir::new().unwrap();
    let x = random([1, 3, 5, 5], 4);
    let input = save(&dir, "x.lcnt", &x);
    let beta = save(
        &dir,
        "b.lcnt",
        &Tensor4::from_f64(Dims::new(3, 1, 1, 1).unwrap(), vec![0.5, -2.0, 7.0]).unwrap(),
    );
    let output = dir.path().join("y.lcnt");
    let args = [
        "apply",
        "--input",
        s(&input),
        "--output",
        s(&output),
        "--c-group",
        "1",
        "--window",
        "1x1",
        "--beta",
        s(&beta),
    ];
    assert_eq!(code(&args), 0);
    let y = read_tensor(&output).unwrap();
    for c in 0..3 {
        for i in 0..25 {
            assert_eq!(y.at(c * 25 + i), [0.5, -2.0, 7.0][c]);
        }
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let input = save(&dir, "x.lcnt", &random([2, 8, 20, 24], 5));
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let output = dir.path().join(format!("y{threads}.lcnt"));
        let args = [
            "--threads",
            threads,
            "apply",
            "--input",
            s(&input),
            "--output",
            s(&output),
            "--window",
            "7x5",
        ];
        assert_eq!(code(&args), 0);
        outputs.push(std::fs::read(&output).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn apply_flag_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let input = save(&dir, "x.lcnt", &random([1, 4, 6, 6], 6));
    let output = dir.path().join("y.lcnt");
    let base = ["apply", "--input", s(&input), "--output", s(&output)];
    let with = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        code(&args)
    };
    assert_eq!(with(&["--norm", "gn", "--window", "3x3"]), 2);
    assert_eq!(with(&["--norm", "bn", "--c-group", "2"]), 2);
    assert_eq!(with(&["--norm", "in", "--mode", "tiled"]), 2);
    assert_eq!(with(&["--norm", "lrn", "--eps", "1e-3"]), 2);
    assert_eq!(with(&["--norm", "lrn", "--window", "4"]), 2);
    assert_eq!(with(&["--norm", "nope"]), 2);
    assert_eq!(with(&["--window", "0x3"]), 2);
    assert_eq!(with(&["--eps", "-1"]), 2);
    assert_eq!(with(&["--mode", "diagonal"]), 2);
    assert!(!output.exists());
}

#[test]
fn apply_file_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let output = dir.path().join("y.lcnt");
    let missing = dir.path().join("missing.lcnt");
    assert_eq!(
        code(&["apply", "--input", s(&missing), "--output", s(&output)]),
        3
    );

    let good = random([1, 2, 4, 4], 7).to_bytes();
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let truncated = &good[..good.len() - 3];
    let mut bad_dtype = good.clone();
    bad_dtype[5] = 9;
    for (name, bytes) in [
        ("magic", &bad_magic[..]),
        ("short", truncated),
        ("dtype", &bad_dtype[..]),
    ] {
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(
            code(&["apply", "--input", s(&path), "--output", s(&output)]),
            3,
            "{name}"
        );
    }
    let input = save(&dir, "x.lcnt", &random([1, 2, 4, 4], 7));
    let unwritable = dir.path().join("no/such/dir/y.lcnt");
    assert_eq!(
        code(&[
            "apply",
            "--input",
            s(&input),
            "--output",
            s(&unwritable),
            "--window",
            "3"
        ]),
        3
    );
}

#[test]
fn apply_shape_errors_exit_four() {
    let dir = TempDir::new().unwrap();
    let input = save(&dir, "x.lcnt", &random([1, 6, 4, 4], 8));
    let output = dir.path().join("y.lcnt");
    let short_gamma = save(&dir, "g.lcnt", &random([1, 4, 1, 1], 9));
    let base = ["apply", "--input", s(&input), "--output", s(&output)];
    let with = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        code(&args)
    };
    assert_eq!(with(&["--c-group", "4", "--window", "3"]), 4);
    assert_eq!(with(&["--norm", "gn", "--c-group", "4"]), 4);
    assert_eq!(with(&["--window", "3", "--gamma", s(&short_gamma)]), 4);
}

#[test]
fn check_reports_and_exit_codes() {
    let out = lcn_cmd(&[
        "check",
        "--suite",
        "reductions",
        "--trials",
        "20",
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[PASS] suite reductions"), "{text}");
    assert_eq!(text.matches("fail   0").count(), 3, "{text}");
    assert_eq!(
        code(&["check", "--suite", "gradients", "--trials", "50"]),
        0
    );
    assert_eq!(code(&["check", "--trials", "0"]), 2);
    assert_eq!(code(&["check", "--suite", "everything"]), 2);
}

#[test]
fn bench_csv_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("b.csv");
    let out = lcn_cmd(&[
        "bench",
        "--dims",
        "1x2x24x24",
        "--windows",
        "1,5,40",
        "--c-group",
        "2",
        "--mode",
        "tiled",
        "--reps",
        "6",
        "--csv",
        s(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("flatness ratio"));
    let recs = read_csv_file(&csv).unwrap();
    assert_eq!(recs.len(), 3 + 2);
    assert!(recs
        .iter()
        .all(|r| r.mode == WindowMode::Tiled && r.reps == 6 && r.c_group == 2));
    assert_eq!((recs[0].b, recs[0].c, recs[0].h, recs[0].w), (1, 2, 24, 24));

    // parsing and re-emitting reproduces the file byte for byte
    let mut again = Vec::new();
    lcn::bench::write_csv(&mut again, &recs).unwrap();
    assert_eq!(again, std::fs::read(&csv).unwrap());

    assert_eq!(code(&["bench", "--dims", "1x1x8x8", "--windows", "1"]), 0);
    assert_eq!(code(&["bench", "--windows", ""]), 2);
    assert_eq!(code(&["bench", "--dims", "1x0x8x8"]), 2);
    assert_eq!(
        code(&[
            "bench",
            "--dims",
            "1x1x8x8",
            "--windows",
            "3",
            "--reps",
            "2"
        ]),
        2
    );
    let bad = dir.path().join("missing/b.csv");
    assert_eq!(
        code(&[
            "bench",
            "--dims",
            "1x1x8x8",
            "--windows",
            "3",
            "--csv",
            s(&bad)
        ]),
        3
    );
}
