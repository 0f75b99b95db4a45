//! End-to-end runs of the modhdr binary: pipeline correctness, exit codes,
//! and byte-reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use modhdr::io::{DatasetManifest, ManifestEntry, Role};

fn modhdr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modhdr"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn modhdr")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = modhdr(dir, args);
    assert!(
        out.status.success(),
        "modhdr {args:?} failed\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn noiseless_pipeline_reaches_eighty_db() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &[
        "synth", "--kind", "gaussian-bumps", "--height", "32", "--width", "32", "--peak",
        "1023", "--seed", "5", "--out", "scene.pfm",
    ]);
    ok(dir, &["wrap", "--in", "scene.pfm", "--bits", "8", "--out", "y.png"]);
    ok(dir, &[
        "reconstruct", "--in", "y.png", "--bits", "8", "--method", "itoh", "--out", "rec.pfm",
    ]);
    let out = ok(dir, &[
        "eval", "--ref", "scene.pfm", "--est", "rec.pfm", "--align", "mean", "--json",
    ]);

    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let psnr = &report["psnr_l"];
    let high_enough = match psnr {
        serde_json::Value::Number(n) => n.as_f64().unwrap() >= 80.0,
        serde_json::Value::String(s) => s == "inf",
        other => panic!("unexpected psnr_l {other:?}"),
    };
    assert!(high_enough, "psnr_l too low: {psnr}");
    assert_eq!(report["alignment_mode"], "mean");
}

#[test]
fn identical_invocations_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &[
        "synth", "--kind", "checker", "--height", "24", "--width", "24", "--seed", "3",
        "--out", "s1.pfm",
    ]);
    ok(dir, &[
        "synth", "--kind", "checker", "--height", "24", "--width", "24", "--seed", "3",
        "--out", "s2.pfm",
    ]);
    assert_eq!(fs::read(dir.join("s1.pfm")).unwrap(), fs::read(dir.join("s2.pfm")).unwrap());

    for out in ["y1.png", "y2.png"] {
        ok(dir, &[
            "wrap", "--in", "s1.pfm", "--bits", "8", "--sigma", "10", "--seed", "77",
            "--out", out,
        ]);
    }
    let y1 = fs::read(dir.join("y1.png")).unwrap();
    assert_eq!(y1, fs::read(dir.join("y2.png")).unwrap());

    // A different seed must change the noise.
    ok(dir, &[
        "wrap", "--in", "s1.pfm", "--bits", "8", "--sigma", "10", "--seed", "78",
        "--out", "y3.png",
    ]);
    assert_ne!(y1, fs::read(dir.join("y3.png")).unwrap());
}

#[test]
fn usage_errors_exit_two_and_name_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = modhdr(tmp.path(), &[
        "reconstruct", "--in", "y.png", "--method", "magic", "--out", "x.pfm",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--method"), "stderr: {stderr}");

    let out = modhdr(tmp.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_single_coded_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = modhdr(tmp.path(), &[
        "reconstruct", "--in", "missing.png", "--method", "itoh", "--out", "x.pfm",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "expected one diagnostic line, got: {stderr}");
    assert!(lines[0].starts_with("error: io: "), "line: {}", lines[0]);
    assert!(out.stdout.is_empty());
}

#[test]
fn eval_without_json_prints_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &[
        "synth", "--kind", "ramp", "--height", "16", "--width", "16", "--out", "a.pfm",
    ]);
    let out = ok(dir, &["eval", "--ref", "a.pfm", "--est", "a.pfm", "--align", "none"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "psnr_l,ssim_l,q_index,psnr_mu,alignment_mode");
    assert!(lines[1].starts_with("inf,1,1,inf,none"), "row: {}", lines[1]);
}

#[test]
fn tonemap_writes_display_png() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &[
        "synth", "--kind", "gaussian-bumps", "--height", "16", "--width", "16", "--peak",
        "4095", "--seed", "2", "--out", "hdr.pfm",
    ]);
    ok(dir, &[
        "tonemap", "--in", "hdr.pfm", "--beta", "500", "--out", "t.png",
    ]);
    let img = modhdr::io::read_png(&dir.join("t.png")).unwrap();
    assert_eq!(img.dims(), (16, 16, 1));
    assert!(img.max_value() <= 255.0 && img.min_value() >= 0.0);
}

#[test]
fn training_pipeline_produces_usable_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Tiny dataset: two scenes plus a wrapped directory.
    for (name, seed) in [("imgs/a.pfm", 11u64), ("imgs/b.pfm", 12)] {
        fs::create_dir_all(dir.join("imgs")).unwrap();
        ok(dir, &[
            "synth", "--kind", "gaussian-bumps", "--height", "16", "--width", "16",
            "--peak", "1023", "--seed", &seed.to_string(), "--out", name,
        ]);
    }
    let manifest = DatasetManifest::new(
        42,
        10,
        vec![
            ManifestEntry { path: "imgs/a.pfm".into(), bit_depth: 10, role: Role::Train },
            ManifestEntry { path: "imgs/b.pfm".into(), bit_depth: 10, role: Role::Train },
        ],
    );
    manifest.save(&dir.join("data.json")).unwrap();

    ok(dir, &[
        "train-denoiser", "--manifest", "data.json", "--spec", "small", "--steps", "4",
        "--batch", "1", "--patch", "8", "--loss-csv", "loss.csv", "--out", "d.weights",
    ]);
    let csv = fs::read_to_string(dir.join("loss.csv")).unwrap();
    assert!(csv.starts_with("step,phase,loss\n"));
    assert_eq!(csv.lines().count(), 5);

    ok(dir, &[
        "train-unrolled", "--manifest", "data.json", "--weights", "d.weights", "--steps",
        "3", "--batch", "1", "--patch", "8", "--out", "u.weights",
    ]);

    fs::create_dir_all(dir.join("wd")).unwrap();
    ok(dir, &[
        "wrap", "--in", "imgs/a.pfm", "--bits", "8", "--out", "wd/y0.png",
    ]);
    ok(dir, &[
        "finetune-se", "--wrapped-dir", "wd", "--weights", "u.weights", "--steps", "2",
        "--out", "u2.weights",
    ]);

    ok(dir, &[
        "reconstruct", "--in", "wd/y0.png", "--bits", "8", "--method", "unrolled",
        "--weights", "u2.weights", "--clamp", "--out", "xr.pfm",
    ]);
    let rec = modhdr::io::read_pfm(&dir.join("xr.pfm")).unwrap();
    assert_eq!(rec.dims(), (16, 16, 1));
    assert!(rec.min_value() >= 0.0 && rec.max_value() <= 1023.0);

    // Weight provenance survives the pipeline.
    let (_, prov) = modhdr::io::load_weights(&dir.join("u2.weights")).unwrap();
    assert_eq!(prov.unwrap().phase, "self-equivariance");
}

#[test]
fn admm_reconstruct_runs_with_classical_denoiser() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &[
        "synth", "--kind", "gaussian-bumps", "--height", "16", "--width", "16", "--peak",
        "1023", "--seed", "9", "--out", "s.pfm",
    ]);
    ok(dir, &[
        "wrap", "--in", "s.pfm", "--bits", "8", "--sigma", "5", "--seed", "1", "--out",
        "y.png",
    ]);
    ok(dir, &[
        "reconstruct", "--in", "y.png", "--bits", "8", "--method", "admm", "--denoiser",
        "dct-threshold", "--iters", "20", "--rho", "0.5", "--lambda", "50", "--out",
        "x.pfm",
    ]);
    let rec = modhdr::io::read_pfm(&dir.join("x.pfm")).unwrap();
    assert_eq!(rec.dims(), (16, 16, 1));
    assert!(rec.data().iter().all(|v| v.is_finite()));
}
