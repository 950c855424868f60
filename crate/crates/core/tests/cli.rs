use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spn::experiment::ExperimentReport;
use spn::reprojection::read_depth_map;

fn spn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spn"))
        .args(args)
        .output()
        .expect("spawn spn")
}

fn ok(args: &[&str]) -> String {
    let out = spn(args);
    assert!(
        out.status.success(),
        "spn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(spn(&["synth", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(spn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        spn(&[
            "reproject",
            "--scene",
            "x",
            "--out",
            "y",
            "--variant",
            "mesh"
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn domain_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = spn(&[
        "align",
        "--scene",
        p(&dir.path().join("missing")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn synth_align_reproject_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "synth",
        "--seed",
        "5",
        "--sequences-per-class",
        "3",
        "--out",
        p(&data),
    ]);
    assert!(data.join("config.json").exists());
    let mut ids: Vec<u64> = fs::read_dir(data.join("train"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_str().unwrap().parse().unwrap())
        .collect();
    ids.sort();
    let seq = data.join("train").join(ids[0].to_string());
    assert!(seq.join("frame_0.pgm").exists() && seq.join("meta.json").exists());

    let aligned = dir.path().join("aligned");
    ok(&[
        "align",
        "--scene",
        p(&seq.join("scene")),
        "--out",
        p(&aligned),
    ]);
    let sdm = dir.path().join("frame0.sdm");
    let png = dir.path().join("frame0.png");
    ok(&[
        "reproject",
        "--scene",
        p(&aligned),
        "--variant",
        "both",
        "--frame",
        "0",
        "--out",
        p(&sdm),
        "--png-preview",
        p(&png),
    ]);
    let map = read_depth_map(&sdm).unwrap();
    assert!(map.valid_count() > 0);
    assert!(png.exists());
    // the dataset stores the same target
    assert_eq!(
        fs::read(&sdm).unwrap(),
        fs::read(seq.join("depth_0.sdm")).unwrap()
    );
}

#[test]
fn match_filtering_and_direction() {
    let dir = tempfile::tempdir().unwrap();
    let matches = dir.path().join("m.csv");
    fs::write(
        &matches,
        "ua,va,ub,vb\n100,100,102,101\n100,100,180,110\n300,200,220,190\n400,50,470,65\n",
    )
    .unwrap();
    let out = dir.path().join("kept.csv");
    ok(&[
        "filter-matches",
        "--matches",
        p(&matches),
        "--out",
        p(&out),
        "--range",
        "320:20",
    ]);
    let kept = fs::read_to_string(&out).unwrap();
    assert_eq!(
        kept,
        "ua,va,ub,vb\n100.0,100.0,180.0,110.0\n400.0,50.0,470.0,65.0\n"
    );

    let segs = dir.path().join("s.csv");
    fs::write(
        &segs,
        "ua,va,ub,vb\n0,100,200,135\n10,10,10,40\n0,300,300,353\n",
    )
    .unwrap();
    let angle: f64 = ok(&["estimate-direction", "--segments", p(&segs)])
        .trim()
        .parse()
        .unwrap();
    assert_eq!(angle, 170.0);
    let auto = dir.path().join("auto.csv");
    ok(&[
        "filter-matches",
        "--matches",
        p(&matches),
        "--out",
        p(&auto),
        "--auto-range",
        "30",
        "--segments",
        p(&segs),
    ]);
    assert_eq!(fs::read_to_string(&auto).unwrap(), kept);
}

#[test]
fn train_eval_and_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{
  "synth": {"image_size": [16, 16], "sequences_per_class": 3, "frames": [3, 4]},
  "network": {"input_width": 16, "input_height": 16,
              "trunk": [{"out_channels": 4, "pool": true}, {"out_channels": 4, "pool": true}],
              "hidden": [8], "aux": true},
  "train": {"max_epochs": 2, "batch_size": 8}
}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    fs::write(
        dir.path().join("synth.json"),
        r#"{"image_size": [16, 16], "sequences_per_class": 3, "frames": [3, 4]}"#,
    )
    .unwrap();
    ok(&[
        "synth",
        "--config",
        p(&dir.path().join("synth.json")),
        "--out",
        p(&data),
    ]);

    let run = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--epochs",
        "1",
    ]);
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let eval: serde_json::Value = serde_json::from_str(&ok(&[
        "eval",
        "--data",
        p(&data),
        "--checkpoint",
        p(&run.join("checkpoint.spn")),
    ]))
    .unwrap();
    assert_eq!(eval["sequences"], 6);

    let exp = dir.path().join("exp");
    let table = ok(&[
        "experiment",
        "--config",
        p(&cfg),
        "--seed",
        "3",
        "--out",
        p(&exp),
    ]);
    assert!(table.contains("points+lines"));
    let report: ExperimentReport =
        serde_json::from_str(&fs::read_to_string(exp.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.seed, 3);
}
