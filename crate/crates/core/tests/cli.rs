use std::path::Path;
use std::process::{Command, Output};

use lpr_core::imgcore::{read_limg, write_limg, Image};
use lpr_core::lprnet::{load_weights, ParamSet};

fn lpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn test_image(path: &Path, h: usize, w: usize) -> Image {
    let img = Image::from_fn(h, w, |i, j| {
        let base = if i + j < h { 0.2 } else { 0.8 };
        base + 0.1 * (1.3 * j as f64).cos()
    });
    write_limg(path, &img).unwrap();
    img
}

#[test]
fn decompose_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = test_image(&d.join("f.limg"), 16, 16);
    let o = lpr(&[
        "decompose",
        "--input",
        p(&d.join("f.limg")),
        "--mu",
        "0.05",
        "--a",
        "0",
        "--iters",
        "100",
        "--pgd",
        "20",
        "--out-u",
        p(&d.join("u.limg")),
        "--out-v",
        p(&d.join("v.limg")),
        "--diagnostics",
        p(&d.join("diag.csv")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let u = read_limg(d.join("u.limg")).unwrap();
    let v = read_limg(d.join("v.limg")).unwrap();
    let sum = u.zip_map(&v, |a, b| a + b);
    // outputs are stored in single precision
    assert!(sum.max_abs_diff(&f) < 1e-6);
    let csv = std::fs::read_to_string(d.join("diag.csv")).unwrap();
    assert!(csv.starts_with("iter,res_t,res_s,res_constraint,ms\n"));
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn decompose_to_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    test_image(&d.join("f.limg"), 8, 8);
    let o = lpr(&[
        "decompose",
        "--input",
        p(&d.join("f.limg")),
        "--iters",
        "5",
        "--out-u",
        p(&d.join("u.pgm")),
        "--out-v",
        p(&d.join("v.limg")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read(d.join("u.pgm")).unwrap().starts_with(b"P5"));
}

#[test]
fn failures_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // 7 rows is not admissible for 4x4 patches with overlap 2
    test_image(&d.join("f.limg"), 7, 8);
    let o = lpr(&[
        "decompose",
        "--input",
        p(&d.join("f.limg")),
        "--out-u",
        p(&d.join("u.limg")),
        "--out-v",
        p(&d.join("v.limg")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("mod"));
    assert!(!d.join("u.limg").exists() && !d.join("v.limg").exists());

    let o = lpr(&[
        "decompose",
        "--input",
        p(&d.join("missing.limg")),
        "--out-u",
        p(&d.join("u.limg")),
        "--out-v",
        p(&d.join("v.limg")),
    ]);
    assert!(!o.status.success());
    assert!(!d.join("u.limg").exists());
}

#[test]
fn infer_with_corrupt_weights() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    test_image(&d.join("f.limg"), 8, 8);
    std::fs::write(d.join("w.lprnet"), b"not a weight file at all").unwrap();
    let o = lpr(&[
        "infer",
        "--weights",
        p(&d.join("w.lprnet")),
        "--input",
        p(&d.join("f.limg")),
        "--out-u",
        p(&d.join("u.limg")),
        "--out-v",
        p(&d.join("v.limg")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bad magic"), "{}", stderr(&o));
    assert!(!d.join("u.limg").exists());
}

#[test]
fn init_inspect_infer() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let w = d.join("w.lprnet");
    let o = lpr(&[
        "init-weights",
        "--out",
        p(&w),
        "--blocks",
        "2",
        "--pgd",
        "3",
        "--config",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let net = load_weights(&w).unwrap();
    assert_eq!(net.config.params, ParamSet::NonConvexCnnMu);

    let o = lpr(&["inspect-weights", p(&w)]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("K 2") && out.contains("n 3") && out.contains("config_id 4"));
    assert!(out.contains("block.1.mucnn.conv3.weight") && out.contains("[16, 8, 3, 3]"));
    assert!(out.contains("block.0.b"));

    test_image(&d.join("f.limg"), 8, 8);
    let o = lpr(&[
        "infer",
        "--weights",
        p(&w),
        "--input",
        p(&d.join("f.limg")),
        "--out-u",
        p(&d.join("u.limg")),
        "--out-v",
        p(&d.join("v.limg")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("u.limg").exists() && d.join("v.limg").exists());
}

#[test]
fn gen_dataset_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ds = d.join("ds");
    let o = lpr(&[
        "gen-dataset",
        "--out",
        p(&ds),
        "--count",
        "2",
        "--seed",
        "9",
        "--height",
        "16",
        "--width",
        "16",
        "--freq-min",
        "2",
        "--freq-max",
        "6",
        "--mask-ratio",
        "0.25",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(ds.join("dataset.json").exists() && ds.join("sample_00001/mask.limg").exists());

    let csv = d.join("report.csv");
    let o = lpr(&[
        "evaluate",
        "--dataset",
        p(&ds),
        "--iters",
        "10",
        "--csv",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("index,psnr_u,psnr_v,psnr_joint,res_constraint,ms\n"));
    assert_eq!(text.lines().count(), 3);

    let o = lpr(&[
        "evaluate",
        "--dataset",
        p(&ds),
        "--iters",
        "5",
        "--sweep",
        "mu=0.02:0.08:2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("chosen Mu"));
}

#[test]
fn fixture_check_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = Image::from_fn(8, 8, |i, j| ((i + 2 * j) % 4) as f64 / 4.0);
    let net = lpr_core::lprnet::NetWeights::initial(lpr_core::lprnet::NetConfig::new(
        2,
        2,
        ParamSet::ConvexFixedMu,
    ));
    lpr_core::harness::write_fixture(d, &net, &f, &lpr_core::imgcore::Mask::ones(8, 8)).unwrap();
    let o = lpr(&["check-fixture", p(d)]);
    assert!(o.status.success(), "{}", stdout(&o));
    // tamper with a stored output
    let mut u = read_limg(d.join("u_out.limg")).unwrap();
    u[(0, 0)] += 0.01;
    write_limg(d.join("u_out.limg"), &u).unwrap();
    let o = lpr(&["check-fixture", p(d)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_invocations() {
    assert!(!lpr(&["decompose", "--no-such-flag"]).status.success());
    assert!(!lpr(&["frobnicate"]).status.success());
    assert!(!lpr(&[]).status.success());
    assert!(lpr(&["--help"]).status.success());
    let o = lpr(&["inspect-weights", "/nonexistent/w.lprnet"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn in_process_entry_point() {
    assert_eq!(lpr_core::harness::cli_main(["lpr", "--version"]), 0);
    assert_ne!(lpr_core::harness::cli_main(["lpr", "evaluate"]), 0);
}
