use std::path::Path;
use std::process::{Command, Output};

fn sparsevox(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsevox"))
        .args(args)
        .current_dir(cwd)
        .env("THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL_SCENE: &str = r#"{
  "width": 24, "height": 24,
  "train_ring": { "count": 6, "radius": 4.0, "elevation_deg": 25.0 },
  "test_ring": { "count": 2, "radius": 4.0, "elevation_deg": 35.0, "azimuth_offset_deg": 30.0 },
  "march_step": 0.01
}"#;

const SMALL_CONFIG: &str = r#"preset = "toy"
[[stages]]
iterations = 30
resolution = [16, 16, 16]
batch_rays = 128
sampled_rays = 128
"#;

fn setup(dir: &Path) {
    std::fs::write(dir.join("scene.json"), SMALL_SCENE).unwrap();
    std::fs::write(dir.join("small.toml"), SMALL_CONFIG).unwrap();
    ok(&sparsevox(&["make-toy", "--spec", "scene.json", "--out", "data"], dir));
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsevox(&[], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsevox(&["eval", "--bogus", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failures_are_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsevox(&["train", "--config", "nope", "--data", "missing", "--out", "ck"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));

    let out = sparsevox(&["eval", "--ckpt", "none.svx", "--data", ".", "--report", "r.json"], dir.path());
    assert!(!out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim_end().lines().count(), 1);
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sparsevox"))
        .args(["make-toy", "--out", "x"])
        .current_dir(dir.path())
        .env("THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("THREADS"));
}

#[test]
fn toy_train_eval_render_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    assert!(d.join("data/transforms_train.json").exists());

    ok(&sparsevox(&["train", "--config", "small.toml", "--data", "data", "--out", "ck", "--views", "4", "--seed", "3"], d));
    assert!(d.join("ck/final.svx").exists());
    assert!(d.join("ck/final.json").exists());
    assert!(d.join("ck/0_toy_log.csv").exists());

    ok(&sparsevox(&["eval", "--ckpt", "ck/final.svx", "--data", "data", "--report", "r.json"], d));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert!(report["mean_psnr"].as_f64().unwrap().is_finite());
    assert_eq!(report["views"].as_u64(), Some(2));
    assert!(report["lpips"].is_null());

    let poses = r#"{ "cameras": [ {
        "width": 8, "height": 6, "fx": 10.0, "fy": 10.0, "cx": 4.0, "cy": 3.0,
        "pose": [[1,0,0,0],[0,0,-1,-4],[0,1,0,0]], "near": 2.0, "far": 6.0 } ] }"#;
    std::fs::write(d.join("poses.json"), poses).unwrap();
    ok(&sparsevox(&["render", "--ckpt", "ck/final.svx", "--poses", "poses.json", "--out", "imgs"], d));
    let img = image::open(d.join("imgs/000.png")).unwrap();
    assert_eq!((img.width(), img.height()), (8, 6));
    assert!(d.join("imgs/000_depth.pfm").exists());
}

#[test]
fn ablate_writes_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    ok(&sparsevox(&["ablate", "--data", "data", "--out", "abl.csv", "--config", "small.toml", "--views", "3"], d));
    let mut r = csv::Reader::from_path(d.join("abl.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["inc", "ds", "cavs", "psnr", "ssim"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(&rows[0].iter().take(3).collect::<Vec<_>>(), &["false", "false", "false"]);
    assert_eq!(&rows[7].iter().take(3).collect::<Vec<_>>(), &["true", "true", "true"]);
}
