//! End-to-end tests of the `csl` binary: exit codes, determinism, and the
//! documented failure paths.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csl_cli::tensor_file;
use csl_core::tensor::{Shape, Tensor};

fn csl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csl"))
}

fn run(args: &[&str]) -> Output {
    csl().args(args).output().expect("spawn csl")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_annotations(dir: &Path) -> PathBuf {
    let path = dir.join("ann.json");
    let mut anns = String::new();
    for (i, (w, h)) in [(30.0, 40.0), (120.0, 100.0), (300.0, 280.0)]
        .iter()
        .flat_map(|&c| std::iter::repeat(c).take(8))
        .enumerate()
    {
        let jitter = (i % 4) as f64;
        anns.push_str(&format!(
            r#"{{"image_id":1,"bbox":[5,5,{},{}]}},"#,
            w + jitter,
            h - jitter
        ));
    }
    anns.pop();
    let doc =
        format!(r#"{{"images":[{{"id":1,"width":640,"height":480}}],"annotations":[{anns}]}}"#);
    std::fs::write(&path, doc).unwrap();
    path
}

#[test]
fn summary_is_deterministic_and_reports_totals() {
    let a = run(&["summary", "--input-size", "416"]);
    assert!(a.status.success());
    let b = run(&["summary", "--input-size", "416"]);
    assert_eq!(stdout(&a), stdout(&b), "summary must be byte-identical");
    assert!(stdout(&a).contains("totals:"));
    // The footer documents the speed-up figures, including the 7.2x caveat.
    assert!(stdout(&a).contains("9/(1+0.25t)"));
    assert!(stdout(&a).contains("7.2x"));

    let csv = run(&["summary", "--format", "csv"]);
    let text = stdout(&csv);
    assert!(text.starts_with("layer,analytic_macs,empirical_macs,params"));
    // One row checked by hand: the stem is a 3x3 stride-2 convolution
    // 3 -> 32 over a 208x208 output, so 208*208*3*9*32 MACs.
    let stem = text
        .lines()
        .find(|l| l.starts_with("bone.stem.conv,"))
        .expect("stem row");
    let macs: u64 = stem.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(macs, 208 * 208 * 3 * 9 * 32);
}

#[test]
fn summary_rejects_malformed_config_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[fpn]\nwidth = \"wide\"\nrepeats = 3\n").unwrap();
    let out = run(&["summary", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("width") || stderr(&out).contains("line"));

    let out = run(&["summary", "--config", "/nonexistent.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flags_are_rejected() {
    let out = run(&["summary", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_small_input_passes_and_corrupt_fixture_fails() {
    let out = run(&["verify", "--input-size", "96", "--trials", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.matches("layers match").count(), 3);

    let out = run(&[
        "verify",
        "--input-size",
        "96",
        "--corrupt",
        "bone.stem.conv",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("MISMATCH bone.stem.conv"));
}

#[test]
fn anchors_writes_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write_annotations(dir.path());
    let prefix = dir.path().join("out");
    let args = [
        "anchors",
        "--annotations",
        ann.to_str().unwrap(),
        "--levels",
        "5",
        "--per-level",
        "3",
        "--seed",
        "0",
        "--out-prefix",
        prefix.to_str().unwrap(),
    ];
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("bin occupancy"));
    let txt1 = std::fs::read(prefix.with_extension("txt")).unwrap();
    let csv1 = std::fs::read(prefix.with_extension("csv")).unwrap();
    let second = run(&args);
    assert!(second.status.success());
    assert_eq!(txt1, std::fs::read(prefix.with_extension("txt")).unwrap());
    assert_eq!(csv1, std::fs::read(prefix.with_extension("csv")).unwrap());
}

#[test]
fn anchors_with_no_boxes_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("empty.json");
    std::fs::write(&ann, r#"{"images":[],"annotations":[]}"#).unwrap();
    let out = run(&["anchors", "--annotations", ann.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

fn write_anchor_csv(dir: &Path, levels: usize, per_level: usize) -> PathBuf {
    let path = dir.join("anchors.csv");
    let mut text = String::from("level,index,width,height,fallback,clamped\n");
    for l in 0..levels {
        for i in 0..per_level {
            let s = 0.05 + 0.15 * l as f64 + 0.01 * i as f64;
            text.push_str(&format!("{l},{i},{s},{s},false,false\n"));
        }
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn decode_zero_raw_yields_empty_results() {
    let dir = tempfile::tempdir().unwrap();
    let anchors = write_anchor_csv(dir.path(), 5, 2);
    let raw = dir.path().join("zero.cslt");
    // 2 anchors x (5 + 80 classes) channels on a 4x4 grid.
    tensor_file::write_tensor(&raw, &Tensor::zeros(Shape::new(1, 170, 4, 4))).unwrap();
    let out = run(&[
        "decode",
        "--raw",
        raw.to_str().unwrap(),
        "--anchors",
        anchors.to_str().unwrap(),
        "--thresh",
        "0.3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 0);
}

#[test]
fn decode_one_hot_cell_yields_exactly_one_detection() {
    let dir = tempfile::tempdir().unwrap();
    let anchors = write_anchor_csv(dir.path(), 5, 2);
    let raw = dir.path().join("hot.cslt");
    let per_anchor = 85;
    let mut t = Tensor::zeros(Shape::new(1, 2 * per_anchor, 4, 4));
    // Suppress everything, then light up anchor 0, class 7 at cell (2, 1).
    for a in 0..2 {
        for y in 0..4 {
            for x in 0..4 {
                t.set(0, a * per_anchor + 4, y, x, -10.0);
            }
        }
    }
    t.set(0, 4, 2, 1, 10.0);
    t.set(0, 5 + 7, 2, 1, 10.0);
    tensor_file::write_tensor(&raw, &t).unwrap();
    let out = run(&[
        "decode",
        "--raw",
        raw.to_str().unwrap(),
        "--anchors",
        anchors.to_str().unwrap(),
        "--thresh",
        "0.5",
        "--image-size",
        "416",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let dets = parsed.as_array().unwrap();
    assert_eq!(dets.len(), 1, "{dets:?}");
    assert_eq!(dets[0]["category_id"], 7);
    // Cell (x=1, y=2) on a 4x4 grid with zero offsets: center (1.5/4, 2.5/4).
    let bbox = dets[0]["bbox"].as_array().unwrap();
    let cx = bbox[0].as_f64().unwrap() + bbox[2].as_f64().unwrap() / 2.0;
    assert!((cx - 1.5 / 4.0 * 416.0).abs() < 1e-6);
}

#[test]
fn decode_random_is_deterministic_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let anchors = write_anchor_csv(dir.path(), 5, 3);
    let dump = dir.path().join("raw.cslw");
    let base_args = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = [
            "decode",
            "--random",
            "--anchors",
            anchors.to_str().unwrap(),
            "--thresh",
            "0.9",
            "--seed",
            "5",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let a = csl()
        .args(base_args(&["--dump-raw", dump.to_str().unwrap()]))
        .output()
        .unwrap();
    assert!(a.status.success(), "{}", stderr(&a));
    let b = csl().args(base_args(&[])).output().unwrap();
    assert_eq!(stdout(&a), stdout(&b), "same seed, same detections");

    // Replaying the dumped container reproduces the run bit-for-bit.
    let c = run(&[
        "decode",
        "--raw",
        dump.to_str().unwrap(),
        "--anchors",
        anchors.to_str().unwrap(),
        "--thresh",
        "0.9",
    ]);
    assert_eq!(stdout(&a), stdout(&c));
}

#[test]
fn gradcheck_passes_and_fault_injection_fails() {
    let out = run(&["gradcheck", "--size", "toy"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("toy detector 64x64"));
    assert!(text.contains("max relative error"));

    let out = run(&["gradcheck", "--size", "toy", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn seed_env_var_overrides_default() {
    let dir = tempfile::tempdir().unwrap();
    let anchors = write_anchor_csv(dir.path(), 5, 2);
    let with_env = |env_seed: Option<&str>| -> String {
        let mut cmd = csl();
        cmd.args([
            "decode",
            "--random",
            "--anchors",
            anchors.to_str().unwrap(),
            "--thresh",
            "0.95",
        ]);
        cmd.env_remove("CSL_SEED");
        if let Some(s) = env_seed {
            cmd.env("CSL_SEED", s);
        }
        stdout(&cmd.output().unwrap())
    };
    let default = with_env(None);
    let seeded = with_env(Some("777"));
    let seeded2 = with_env(Some("777"));
    assert_eq!(seeded, seeded2);
    assert_ne!(default, seeded, "env seed must change the random stream");
}
