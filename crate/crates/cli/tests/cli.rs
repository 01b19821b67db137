//! End-to-end CLI behaviour through the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vivid() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vivid"));
    // Keep the output-root override from leaking between tests.
    c.env_remove("VIVID_RUN_DIR");
    c
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn make_toy_data(dir: &Path, n: usize, seed: u64) {
    run_ok(vivid()
        .arg("make-data")
        .arg("--toy")
        .arg(n.to_string())
        .arg("--out")
        .arg(dir)
        .arg("--seed")
        .arg(seed.to_string()));
}

fn small_config(dir: &Path, steps: u64, batch: usize) -> PathBuf {
    let path = dir.join("train.toml");
    std::fs::write(
        &path,
        format!(
            "[train]\nsteps = {steps}\nbatch_size = {batch}\nseed = 3\n",
        ),
    )
    .unwrap();
    path
}

#[test]
fn make_data_writes_layout_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d1 = tmp.path().join("a");
    let d2 = tmp.path().join("b");
    make_toy_data(&d1, 10, 7);
    make_toy_data(&d2, 10, 7);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d1.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 10);
    for i in 0..10 {
        let id = format!("{i:05}");
        assert!(d1.join("hr").join(format!("{id}.png")).exists());
        assert!(d1.join("lr").join(format!("{id}.png")).exists());
        assert!(d1.join("landmarks").join(format!("{id}.txt")).exists());
    }
    // Same seed twice: bitwise-identical LR files.
    let a = std::fs::read(d1.join("lr").join("00004.png")).unwrap();
    let b = std::fs::read(d2.join("lr").join("00004.png")).unwrap();
    assert_eq!(a, b);
    // LR files are 16x16 at the default scale 8.
    let img = image::open(d1.join("lr").join("00000.png")).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));
    // Resolved config echoed.
    assert!(d1.join("config.resolved.toml").exists());
}

#[test]
fn train_stage3_without_checkpoints_fails_with_stage_message() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_toy_data(&data, 4, 1);
    let out = tmp.path().join("run");
    let res = vivid()
        .arg("train")
        .arg("--stage")
        .arg("3")
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!res.status.success());
    assert_eq!(res.status.code(), Some(2), "config error exit code");
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("stage"), "names the missing stage: {stderr}");
}

#[test]
fn train_stage1_writes_report_checkpoint_and_config_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_toy_data(&data, 4, 2);
    let out = tmp.path().join("run");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = small_config(tmp.path(), 2, 2);
    run_ok(vivid()
        .arg("train")
        .arg("--stage")
        .arg("1")
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out));
    assert!(out.join("stage1.ckpt").exists());
    let report = std::fs::read_to_string(out.join("report_stage1.csv")).unwrap();
    let header = report.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 13, "13 documented columns");
    // Default learning rate appears in the resolved config echo.
    let echoed = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(echoed.contains("lr_fine_integration = 0.001"), "{echoed}");
}

#[test]
fn infer_produces_three_artifacts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_toy_data(&data, 4, 3);
    let run = tmp.path().join("run");
    std::fs::create_dir_all(&run).unwrap();
    let cfg = small_config(tmp.path(), 1, 2);
    run_ok(vivid()
        .arg("train")
        .arg("--stage")
        .arg("1")
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run));

    let out1 = tmp.path().join("out1");
    let out2 = tmp.path().join("out2");
    let input = data.join("lr").join("00001.png");
    for out in [&out1, &out2] {
        run_ok(vivid()
            .arg("infer")
            .arg("--checkpoint")
            .arg(run.join("stage1.ckpt"))
            .arg("--input")
            .arg(&input)
            .arg("--out")
            .arg(out));
    }
    for suffix in ["coarse", "prior", "fine"] {
        let p = out1.join(format!("00001_{suffix}.png"));
        assert!(p.exists(), "{suffix} artifact");
        let img = image::open(&p).unwrap();
        assert_eq!((img.width(), img.height()), (128, 128));
        let a = std::fs::read(&p).unwrap();
        let b = std::fs::read(out2.join(format!("00001_{suffix}.png"))).unwrap();
        assert_eq!(a, b, "identical output bytes for {suffix}");
    }
    // Prior is black outside its component windows: count black pixels.
    let prior = image::open(out1.join("00001_prior.png")).unwrap().to_rgb8();
    let black = prior.pixels().filter(|p| p.0 == [0, 0, 0]).count();
    assert!(black > 8000, "masked template leaves most pixels black ({black})");

    // Wrong input size is a data error.
    let res = vivid()
        .arg("infer")
        .arg("--checkpoint")
        .arg(run.join("stage1.ckpt"))
        .arg("--input")
        .arg(data.join("hr").join("00001.png"))
        .arg("--out")
        .arg(tmp.path().join("bad"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("16x16"), "expected-dims message: {stderr}");
}

#[test]
fn eval_identity_stub_and_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_toy_data(&data, 4, 4);
    let run = tmp.path().join("run");
    let cfg = small_config(tmp.path(), 1, 2);
    run_ok(vivid()
        .arg("train")
        .arg("--stage")
        .arg("1")
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run));

    let out = tmp.path().join("eval");
    run_ok(vivid()
        .arg("eval")
        .arg("--checkpoint")
        .arg(run.join("stage1.ckpt"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .arg("--stub")
        .arg("identity"));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    lines.next();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3], "1", "stub ssim column is 1.0: {line}");
        assert_eq!(cols[2], "inf");
    }
    let agg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("aggregate.json")).unwrap())
            .unwrap();
    assert!(agg.get("per_pose").is_some(), "per-pose grouping present");

    // Empty dataset: exit 0, empty report, warning on stderr.
    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out2 = tmp.path().join("eval2");
    let res = run_ok(vivid()
        .arg("eval")
        .arg("--checkpoint")
        .arg(run.join("stage1.ckpt"))
        .arg("--data")
        .arg(&empty)
        .arg("--out")
        .arg(&out2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("warning"), "{stderr}");
    let csv = std::fs::read_to_string(out2.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "header only");
}

#[test]
fn vivid_run_dir_overrides_out() {
    let tmp = tempfile::tempdir().unwrap();
    let override_dir = tmp.path().join("override");
    let ignored = tmp.path().join("ignored");
    let mut cmd = vivid();
    cmd.env("VIVID_RUN_DIR", &override_dir);
    cmd.arg("make-data")
        .arg("--toy")
        .arg("2")
        .arg("--out")
        .arg(&ignored);
    run_ok(&mut cmd);
    assert!(override_dir.join("manifest.json").exists());
    assert!(!ignored.exists());
}
