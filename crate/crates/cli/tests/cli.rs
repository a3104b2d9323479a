use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use trifuse_core::{Bundle, ScoreReport};

const SMALL: [&str; 16] = [
    "--frames",
    "2",
    "--views",
    "2",
    "--resolution",
    "32",
    "--channels",
    "4",
    "--visibility-resolution",
    "16",
    "--image-size",
    "24",
    "--samples",
    "16",
    "--seed",
    "5",
];

fn trifuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trifuse"))
        .args(args)
        .output()
        .expect("spawn trifuse")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn gen_small(dir: &Path) -> String {
    let root = dir.join("bundle").display().to_string();
    let mut args = vec!["gen", "--out", root.as_str()];
    args.extend(SMALL);
    let o = trifuse(&args);
    assert!(o.status.success(), "{}", text(&o));
    root
}

#[test]
fn single_view_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b").display().to_string();
    let o = trifuse(&["gen", "--out", &out, "--views", "1"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}

#[test]
fn unknown_flag_and_zero_threads_are_usage_errors() {
    assert_eq!(trifuse(&["gen", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        trifuse(&["--threads", "0", "report", "x.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(trifuse(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_report_names_the_path() {
    let o = trifuse(&["report", "/nonexistent/where/report.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        text(&o).contains("/nonexistent/where/report.json"),
        "{}",
        text(&o)
    );
}

#[test]
fn eval_on_missing_bundle_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = trifuse(&[
        "eval",
        "--bundle",
        &dir.path().join("nope").display().to_string(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn unavailable_metric_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let root = gen_small(dir.path());
    let o = trifuse(&["eval", "--bundle", &root, "--metric", "id"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(text(&o).to_lowercase().contains("id"), "{}", text(&o));
}

#[test]
fn perfect_eval_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = gen_small(dir.path());
    let reports = dir.path().join("reports");
    let o = trifuse(&[
        "eval",
        "--bundle",
        &root,
        "--reconstructor",
        "perfect",
        "--metric",
        "psnr,l1",
        "--out",
        &reports.display().to_string(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let psnr_line = stdout.lines().find(|l| l.starts_with("psnr")).unwrap();
    let cols: Vec<f64> = psnr_line
        .split_whitespace()
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(cols, vec![99.0, 99.0, 0.0, 0.0]);

    let json = reports.join("perfect_psnr.json");
    assert!(reports.join("perfect_psnr.csv").exists());
    assert!(reports.join("perfect_l1.json").exists());
    let loaded = ScoreReport::load(&json).unwrap();
    let bundle = Bundle::load(Path::new(&root)).unwrap();
    assert_eq!(loaded.metadata.bundle_spec_hash, bundle.spec_hash());
    assert_eq!(loaded.shape, [2, 2, 2]);

    let o = trifuse(&["report", &json.display().to_string()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("perfect"));
}

#[test]
fn tampered_report_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let root = gen_small(dir.path());
    let reports = dir.path().join("reports");
    let o = trifuse(&[
        "eval",
        "--bundle",
        &root,
        "--reconstructor",
        "identity",
        "--out",
        &reports.display().to_string(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let path = reports.join("identity_psnr.json");
    let original = fs::read_to_string(&path).unwrap();

    let bad_schema = original.replace("scoretensor/1", "scoretensor/9");
    fs::write(&path, bad_schema).unwrap();
    let o = trifuse(&["report", &path.display().to_string()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));

    let mut v: serde_json::Value = serde_json::from_str(&original).unwrap();
    v["aggregates"]["overall"] = serde_json::json!(1234.5);
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let o = trifuse(&["report", &path.display().to_string()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let from_cfg = dir.path().join("from_cfg");
    fs::write(
        &cfg,
        serde_json::json!({
            "out": from_cfg, "frames": 1, "views": 3, "channels": 4, "resolution": 32,
            "visibility_resolution": 16, "image_size": 16, "samples": 8, "seed": 2
        })
        .to_string(),
    )
    .unwrap();
    let cfg_s = cfg.display().to_string();
    let o = trifuse(&["--config", &cfg_s, "gen"]);
    assert!(o.status.success(), "{}", text(&o));
    let b = Bundle::load(&from_cfg).unwrap();
    assert_eq!((b.spec.frames, b.spec.views), (1, 3));

    let flagged = dir.path().join("flagged");
    let o = trifuse(&[
        "--config",
        &cfg_s,
        "gen",
        "--views",
        "2",
        "--out",
        &flagged.display().to_string(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let b = Bundle::load(&flagged).unwrap();
    assert_eq!((b.spec.frames, b.spec.views), (1, 2));

    fs::write(&cfg, r#"{"vews": 3}"#).unwrap();
    assert_eq!(trifuse(&["--config", &cfg_s, "gen"]).status.code(), Some(1));
}

#[test]
fn distort_then_undistort_round_trips_a_triplane() {
    let dir = tempfile::tempdir().unwrap();
    let root = gen_small(dir.path());
    let d = dir.path();
    let s = |p: &str| d.join(p).display().to_string();
    let b = Bundle::load(Path::new(&root)).unwrap();
    trifuse_core::save_triplane(b.gt(0), d.join("gt.tri")).unwrap();
    let o = trifuse(&[
        "distort",
        "--triplane",
        &s("gt.tri"),
        "--out",
        &s("warped.tri"),
        "--field-out",
        &s("d.wrp"),
        "--seed",
        "3",
        "--magnitude",
        "2",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let o = trifuse(&[
        "undistort",
        "--triplane",
        &s("warped.tri"),
        "--field",
        &s("d.wrp"),
        "--out",
        &s("back.tri"),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let load = |p: &str| trifuse_core::load_triplane(d.join(p)).unwrap();
    let (gt, warped, back) = (load("gt.tri"), load("warped.tri"), load("back.tri"));
    let (before, after) = (interior_l1(&gt, &warped), interior_l1(&gt, &back));
    assert!(after < 0.25 * before, "undistort left {after} of {before}");

    let o = trifuse(&[
        "fuse",
        "--bundle",
        &root,
        "--frame",
        "1",
        "--view",
        "1",
        "--out",
        &s("fused.tri"),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let o = trifuse(&[
        "render",
        "--bundle",
        &root,
        "--reconstructor",
        "canonical",
        "--frame",
        "1",
        "--input-view",
        "0",
        "--eval-view",
        "1",
        "--out",
        &s("view.png"),
        "--image-format",
        "png",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(d.join("view.png").exists());
}

fn interior_l1(a: &trifuse_core::Triplane, b: &trifuse_core::Triplane) -> f64 {
    let dims = a.dims();
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for k in 0..3 {
        for c in 0..dims.channels {
            for r in 4..dims.height - 4 {
                for col in 4..dims.width - 4 {
                    sum += f64::from((a.get(k, c, r, col) - b.get(k, c, r, col)).abs());
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}
