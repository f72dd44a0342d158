use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use floorplan_slam::scene_parser::SceneLayout;
use image::{ImageBuffer, Luma, Rgb};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floorplan-slam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The box room sequence at 160 x 120, rendered once per test binary.
fn box_sequence() -> &'static Path {
    static SEQ: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, seq) = SEQ.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("box");
        ok(&[
            "simulate",
            "--world",
            "box",
            "--out",
            p(&seq),
            "--width",
            "160",
            "--height",
            "120",
        ]);
        (dir, seq)
    });
    seq
}

#[test]
fn eval_of_identical_trajectories_is_zero() {
    let gt = box_sequence().join("groundtruth.txt");
    assert_eq!(ok(&["eval", p(&gt), p(&gt)]).trim(), "0.000");
}

#[test]
fn box_room_maps_to_four_walls() {
    let out = tempfile::tempdir().unwrap();
    let stdout = ok(&["slam", p(box_sequence()), "--out", p(out.path())]);
    assert!(stdout.contains("walls 4"), "{stdout}");
    let map = read_json(&out.path().join("map.json"));
    assert_eq!(map["walls"].as_array().unwrap().len(), 4);
    assert!(map["doors"].as_array().unwrap().is_empty());
    for name in ["trajectory.txt", "map.svg", "report.json", "layouts.json"] {
        assert!(out.path().join(name).is_file(), "{name} missing");
    }
    let svg = fs::read_to_string(out.path().join("map.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("red") && svg.contains("blue"));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let outs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for o in &outs {
        ok(&[
            "slam",
            p(box_sequence()),
            "--out",
            p(o.path()),
            "--seed",
            "5",
        ]);
    }
    for name in ["map.json", "trajectory.txt"] {
        let a = fs::read(outs[0].path().join(name)).unwrap();
        let b = fs::read(outs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn reported_energies_match_the_layouts() {
    let out = tempfile::tempdir().unwrap();
    ok(&["slam", p(box_sequence()), "--out", p(out.path())]);
    let report = read_json(&out.path().join("report.json"));
    let layouts: Vec<Option<SceneLayout>> =
        serde_json::from_str(&fs::read_to_string(out.path().join("layouts.json")).unwrap())
            .unwrap();
    let frames = report["frames"].as_array().unwrap();
    assert_eq!(frames.len(), layouts.len());
    for (f, layout) in frames.iter().zip(&layouts) {
        match layout {
            Some(l) => {
                let e = f["energy"].as_f64().unwrap();
                assert!(
                    (e - l.recomputed_energy()).abs() < 1e-9,
                    "frame {}",
                    f["index"]
                );
            }
            None => assert!(f["energy"].is_null()),
        }
    }
}

#[test]
fn loop_closure_lowers_reported_error_on_a_drifting_loop() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("loop");
    ok(&[
        "simulate",
        "--world",
        "loop",
        "--out",
        p(&seq),
        "--width",
        "160",
        "--height",
        "120",
        "--odometry-sigma",
        "0.03",
        "--seed",
        "3",
    ]);
    let ate = |extra: &[&str]| {
        let out = dir.path().join(format!("out{}", extra.len()));
        let mut args = vec!["slam", p(&seq), "--out", p(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        read_json(&out.join("report.json"))["ate_rmse"]
            .as_f64()
            .unwrap()
    };
    let (closed, open) = (ate(&[]), ate(&["--no-loop-closure"]));
    assert!(open > closed, "open {open} vs closed {closed}");
}

#[test]
fn parse_frame_writes_both_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("glass");
    ok(&[
        "simulate",
        "--world",
        "glass",
        "--out",
        p(&seq),
        "--width",
        "160",
        "--height",
        "120",
    ]);
    let body: Value = serde_json::from_str(&ok(&["parse-frame", p(&seq), "--frame", "3"])).unwrap();
    assert_eq!(body["frame"], 3);
    assert!(body["single_view"]["segments"].is_array());
    assert_eq!(body["temporal"]["provenance"], "Temporal");
    let out = dir.path().join("frames");
    ok(&["parse-frame", p(&seq), "--frame", "0", "--out", p(&out)]);
    assert!(out.join("frame_0.json").is_file() && out.join("frame_0.svg").is_file());
}

#[test]
fn config_file_and_overrides_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("slam.cfg");
    fs::write(&cfg, "# odometry only\nslam.loop_closure = false\n").unwrap();
    let enabled = |extra: &[&str]| {
        let out = dir.path().join("out");
        let mut args = vec![
            "slam",
            p(box_sequence()),
            "--out",
            p(&out),
            "--config",
            p(&cfg),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        let report = read_json(&out.join("report.json"));
        let on = report["loop_closure_enabled"].as_bool().unwrap();
        assert_eq!(report["loop_closures"].as_array().unwrap().is_empty(), !on);
        on
    };
    assert!(!enabled(&[]));
    // Command-line overrides win over the file.
    assert!(enabled(&["--set", "slam.loop_closure=true"]));

    fs::write(&cfg, "map.no_such_key = 1\n").unwrap();
    let bad = run(&[
        "slam",
        p(box_sequence()),
        "--out",
        p(dir.path()),
        "--config",
        p(&cfg),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(error_json(&bad)["error"], "config");
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["slam", p(&dir.path().join("nope")), "--out", p(dir.path())]);
    assert_eq!(missing.status.code(), Some(1));
    let body = error_json(&missing);
    assert_eq!(body["error"], "missing_index_file");
    assert_eq!(body["exit_code"], 1);
    assert!(body["message"].as_str().unwrap().contains("rgb.txt"));

    let usage = run(&["slam"]);
    assert_eq!(usage.status.code(), Some(1));
    assert_eq!(error_json(&usage)["error"], "usage");

    let world = run(&["simulate", "--world", "atrium", "--out", p(dir.path())]);
    assert_eq!(world.status.code(), Some(1));
    assert_eq!(error_json(&world)["error"], "unknown_world");
}

#[test]
fn unparsable_sequence_exits_with_two() {
    // Well-formed files whose depth images are empty.
    let dir = tempfile::tempdir().unwrap();
    let mut index = String::new();
    for k in 0..3 {
        let t = k as f64 * 0.1;
        let depth: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(32, 24);
        let rgb: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(32, 24);
        depth.save(dir.path().join(format!("d{k}.png"))).unwrap();
        rgb.save(dir.path().join(format!("c{k}.png"))).unwrap();
        index.push_str(&format!("{t:.6} d{k}.png\n"));
    }
    fs::write(dir.path().join("depth.txt"), &index).unwrap();
    fs::write(dir.path().join("rgb.txt"), index.replace(" d", " c")).unwrap();
    let out = run(&["slam", p(dir.path()), "--out", p(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(2));
    let body = error_json(&out);
    assert_eq!(body["error"], "no_usable_frames");
    assert_eq!(body["exit_code"], 2);
}
