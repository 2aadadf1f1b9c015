use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flsn::checkpoint::Checkpoint;
use flsn::tensor::{read_flt1_file, write_flt1_file, Shape, Tensor};
use tempfile::TempDir;

const SMALL_MODEL: [&str; 6] = [
    "--set",
    "model.nc=8",
    "--set",
    "model.branches=2",
    "--set",
    "model.blocks_per_branch=1",
];

fn flsn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flsn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = flsn(args);
    assert!(
        out.status.success(),
        "flsn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--samples",
        "4",
        "--seed",
        "7",
        "--lr-size",
        "32",
        "--out",
        s(dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--out",
        s(out),
        "--crop-size",
        "32",
        "--quiet",
    ];
    args.extend_from_slice(&SMALL_MODEL);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn synth_is_deterministic_and_supports_both_regimes() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, &["--regime", "LE"]);
    synth(&b, &["--regime", "LE"]);
    let samples = fs::read_dir(a.join("train")).unwrap().count();
    assert_eq!(samples, 4);
    assert_eq!(tree(&a), tree(&b));
    assert!(a.join("resolved_config.txt").exists());
    assert!(fs::read_to_string(a.join("resolved_config.txt"))
        .unwrap()
        .contains("regime = LE"));

    let both = tmp.path().join("both");
    synth(&both, &["--regime", "BOTH"]);
    for r in ["HE", "LE"] {
        assert_eq!(fs::read_dir(both.join(r).join("train")).unwrap().count(), 4);
    }
    assert_ne!(
        fs::read(both.join("HE/train/sample_00000/frame_0_0.flt")).unwrap(),
        fs::read(both.join("LE/train/sample_00000/frame_0_0.flt")).unwrap()
    );
}

#[test]
fn train_ablation_resume_and_nan() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--regime", "HE"]);

    let full = tmp.path().join("full");
    train(
        &data,
        &full,
        &[
            "--epochs",
            "3",
            "--batch-size",
            "2",
            "--set",
            "train.checkpoint_every=1",
        ],
    );
    for f in [
        "final.flc",
        "train_log.csv",
        "resolved_config.txt",
        "checkpoint_0001.flc",
    ] {
        assert!(full.join(f).exists(), "missing {f}");
    }
    let no_ne = tmp.path().join("no_ne");
    train(&data, &no_ne, &["--epochs", "1", "--no-ne"]);
    let params = |p: &Path| {
        Checkpoint::<f32>::load(p.join("final.flc"))
            .unwrap()
            .params
            .element_count()
    };
    assert!(params(&no_ne) < params(&full));

    let resumed = tmp.path().join("resumed");
    train(
        &data,
        &resumed,
        &[
            "--epochs",
            "3",
            "--batch-size",
            "2",
            "--set",
            "train.checkpoint_every=1",
            "--resume",
            s(&full.join("checkpoint_0001.flc")),
        ],
    );
    for f in ["final.flc", "train_log.csv"] {
        assert_eq!(
            fs::read(full.join(f)).unwrap(),
            fs::read(resumed.join(f)).unwrap(),
            "{f}"
        );
    }

    let out = flsn(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("nan")),
        "--crop-size",
        "32",
        "--lr",
        "1e30",
        "--epochs",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epoch") && err.contains("step"), "{err}");
}

#[test]
fn config_and_usage_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(flsn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(flsn(&["info", "--set", "model.width=3"]).status.code(), Some(1));
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "[model]\nnc = 8\nbogus = 1\n").unwrap();
    let out = flsn(&["info", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let data = tmp.path().join("data");
    synth(&data, &[]);
    let out = flsn(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("r")),
        "--crop-size",
        "20",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2^B"));

    let out = flsn(&[
        "eval",
        "--checkpoint",
        s(&tmp.path().join("missing.flc")),
        "--data",
        s(&data),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.flc"));
}

#[test]
fn infer_shapes_determinism_and_geometry_error() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let run = tmp.path().join("run");
    train(&data, &run, &["--epochs", "1"]);
    let ck = run.join("final.flc");

    let input = tmp.path().join("in.flt");
    let frame = Tensor::<f32>::from_fn(Shape::new(1, 1, 64, 64), |_, _, y, x| {
        ((x * 7 + y * 3) % 50) as f32 * 1000.0
    });
    write_flt1_file(&frame, &input).unwrap();
    let (o1, o2) = (tmp.path().join("o1.flt"), tmp.path().join("o2.flt"));
    let stdout = ok(&[
        "infer",
        "--checkpoint",
        s(&ck),
        "--input",
        s(&input),
        "--output",
        s(&o1),
    ]);
    assert!(stdout.contains("ms"), "{stdout}");
    ok(&[
        "infer",
        "--checkpoint",
        s(&ck),
        "--input",
        s(&input),
        "--output",
        s(&o2),
    ]);
    let out: Tensor<f32> = read_flt1_file(&o1).unwrap();
    assert_eq!(out.shape(), Shape::new(1, 1, 128, 128));
    assert_eq!(fs::read(&o1).unwrap(), fs::read(&o2).unwrap());

    let odd = tmp.path().join("odd.flt");
    write_flt1_file(&Tensor::<f32>::zeros(Shape::new(1, 1, 50, 50)), &odd).unwrap();
    let res = flsn(&["infer", "--checkpoint", s(&ck), "--input", s(&odd), "--output", s(&o1)]);
    assert_ne!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stderr).contains("2^B"));

    let pgm = tmp.path().join("out.pgm");
    let back = tmp.path().join("back.flt");
    ok(&["convert", "--input", s(&o1), "--output", s(&pgm)]);
    ok(&["convert", "--input", s(&pgm), "--output", s(&back)]);
    let back: Tensor<f32> = read_flt1_file(&back).unwrap();
    assert_eq!(back.shape(), out.shape());
    for (a, b) in back.data().iter().zip(out.data()) {
        assert_eq!(*a, b.round().clamp(0.0, 65535.0));
    }
}

#[test]
fn info_reports_hand_counted_params() {
    let out = ok(&[
        "info",
        "--set",
        "model.nc=4",
        "--set",
        "model.branches=2",
        "--set",
        "model.blocks_per_branch=1",
    ]);
    let model_line = out.lines().find(|l| l.starts_with("model ")).unwrap();
    assert_eq!(model_line.split_whitespace().nth(1), Some("1585"), "{out}");
    assert!(out.contains("GFLOPs"));
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck"]);
    assert!(!out.contains("FAIL"), "{out}");
}

#[test]
fn eval_trained_beats_untrained() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "synth",
        "--samples",
        "4",
        "--seed",
        "1",
        "--lr-size",
        "32",
        "--regime",
        "HE",
        "--set",
        "data.style=blobs",
        "--out",
        s(&data),
    ]);
    let common = [
        "--batch-size",
        "4",
        "--set",
        "train.lr_decay_factor=1",
        "--lr",
        "3e-3",
        "--seed",
        "0",
    ];
    let untrained = tmp.path().join("untrained");
    train(&data, &untrained, &[&common[..], &["--epochs", "0"]].concat());
    let trained = tmp.path().join("trained");
    train(&data, &trained, &[&common[..], &["--epochs", "150"]].concat());
    let mean_rmse = |run: &Path| -> f64 {
        let out = tmp
            .path()
            .join(format!("eval_{}", run.file_name().unwrap().to_str().unwrap()));
        ok(&[
            "eval",
            "--checkpoint",
            s(&run.join("final.flc")),
            "--data",
            s(&data),
            "--split",
            "train",
            "--out",
            s(&out),
        ]);
        assert!(out.join("resolved_config.txt").exists());
        let csv = fs::read_to_string(out.join("eval_report.csv")).unwrap();
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("ALL,"), "{last}");
        last.split(',').nth(2).unwrap().parse().unwrap()
    };
    let (before, after) = (mean_rmse(&untrained), mean_rmse(&trained));
    assert!(after < before, "trained {after} vs untrained {before}");
}
