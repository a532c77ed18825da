use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ptychodip::data::{encode_idx, Image};

const GEOMETRY: [&str; 6] = ["--probe-size", "5", "--sigma", "1", "--shift", "2"];

fn ptychodip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptychodip"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ptychodip(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Six 10x10 images: offset Gaussian blobs of varying width.
fn write_dataset(dir: &Path) -> PathBuf {
    let images: Vec<Image> = (0..6)
        .map(|n| {
            let (cy, cx) = (3.5 + 0.4 * n as f64, 5.0 - 0.3 * n as f64);
            let s2 = 3.0 + n as f64;
            let pixels = (0..100)
                .map(|i| {
                    let (r, c) = ((i / 10) as f64, (i % 10) as f64);
                    (-((r - cy).powi(2) + (c - cx).powi(2)) / s2).exp()
                })
                .collect();
            Image::new(10, 10, pixels).unwrap()
        })
        .collect();
    let path = dir.join("blobs-idx3-ubyte");
    fs::write(&path, encode_idx(&images).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn e0_column(csv: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|&h| h == "E0").unwrap();
    lines
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn simulate_then_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let amps = dir.path().join("img.ptg4");
    let mut args = vec![
        "simulate",
        "--data",
        s(&data),
        "--index",
        "2",
        "--out",
        s(&amps),
    ];
    args.extend(GEOMETRY);
    ok(&args);
    assert!(dir.path().join("img.ptg4.json").is_file());
    assert!(dir.path().join("img.ptg4.truth.pgm").is_file());

    let out = dir.path().join("dm");
    ok(&[
        "reconstruct",
        "--amplitudes",
        s(&amps),
        "--method",
        "DM",
        "--iterations",
        "40",
        "--seed",
        "3",
        "--snapshots",
        "0,40",
        "--out-dir",
        s(&out),
    ]);
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let e0 = e0_column(&traj);
    assert_eq!(e0.len(), 41);
    assert!(e0[40] < e0[0], "E0 {} -> {}", e0[0], e0[40]);
    let pgm = fs::read(out.join("object.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n10 10\n255\n"));
    assert!(out.join("object.ptg4").is_file());
    assert!(out.join("images").read_dir().unwrap().count() >= 2);
}

#[test]
fn refiner_without_a_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let amps = dir.path().join("img.ptg4");
    let mut args = vec!["simulate", "--data", s(&data), "--out", s(&amps)];
    args.extend(GEOMETRY);
    ok(&args);
    for method in ["DIP", "DIP_then_DM", "HIO"] {
        let out = ptychodip(&[
            "reconstruct",
            "--amplitudes",
            s(&amps),
            "--method",
            method,
            "--out-dir",
            s(&dir.path().join("x")),
        ]);
        assert!(!out.status.success(), "{method} accepted");
    }
}

fn bench_args<'a>(data: &'a str, out: &'a str, threads: &'a str) -> Vec<&'a str> {
    let mut args = vec![
        "bench",
        "--data",
        data,
        "--method",
        "AP",
        "--method",
        "DM",
        "--iterations",
        "8",
        "--images",
        "3",
        "--seeds",
        "2",
        "--master-seed",
        "11",
        "--threshold",
        "0.5",
        "--threads",
        threads,
        "--output-dir",
        out,
    ];
    args.extend(GEOMETRY);
    args
}

#[test]
fn bench_is_reproducible_and_report_rebuilds_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let stdout = ok(&bench_args(s(&data), s(&a), "1"));
    assert!(stdout.contains("DM") && stdout.contains("AP"));
    ok(&bench_args(s(&data), s(&b), "2"));
    for f in ["runs.csv", "curves.csv", "summary.csv", "failures.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let runs = fs::read_to_string(a.join("runs.csv")).unwrap();
    // header + 2 methods x 3 images x 2 seeds x 9 iterations
    assert_eq!(runs.lines().count(), 1 + 2 * 3 * 2 * 9);

    let rep = dir.path().join("rep");
    ok(&[
        "report",
        "--runs",
        s(&a.join("runs.csv")),
        "--threshold",
        "0.5",
        "--out-dir",
        s(&rep),
    ]);
    for f in ["curves.csv", "summary.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(rep.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn train_writes_a_usable_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let model = dir.path().join("tiny.dipm");
    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--images",
        "4",
        "--validation-images",
        "2",
        "--epochs",
        "1",
        "--batch-size",
        "2",
        "--hidden-channels",
        "2",
        "--taps",
        "3,3,3,3",
        "--out",
        s(&model),
    ];
    args.extend(GEOMETRY);
    ok(&args);
    assert!(model.is_file());
    assert!(model.with_extension("config.json").is_file());

    let amps = dir.path().join("img.ptg4");
    let mut sim = vec!["simulate", "--data", s(&data), "--out", s(&amps)];
    sim.extend(GEOMETRY);
    ok(&sim);
    let out = dir.path().join("dip");
    ok(&[
        "reconstruct",
        "--amplitudes",
        s(&amps),
        "--method",
        "DIP_then_DM",
        "--model",
        s(&model),
        "--iterations",
        "6",
        "--out-dir",
        s(&out),
    ]);
    let e0 = e0_column(&fs::read_to_string(out.join("trajectory.csv")).unwrap());
    assert_eq!(e0.len(), 7);
    assert!(e0.iter().all(|v| v.is_finite()));
}
