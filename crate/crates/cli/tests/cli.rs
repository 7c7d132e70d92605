use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
frame_size = 16
motion_epochs = 1
frame_epochs = 1

[synthetic]
canvas = 24
sprite_size = 6
normal_velocities = [[2, 0], [0, 2]]
clip_length = 12
train_clips = 2
test_clips = 3

[motion_net]
levels = 2
base_channels = 4

[frame_net]
levels = 2
base_channels = 4

[train]
batch_size = 4
"#;

fn vad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vad"))
        .args(args)
        .args(["--log-level", "warn"])
        .output()
        .expect("vad runs")
}

fn ok(args: &[&str]) -> String {
    let out = vad(args);
    assert!(
        out.status.success(),
        "vad {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn global_auc(summary: &str) -> f64 {
    summary
        .lines()
        .find_map(|l| l.strip_prefix("global_auc: "))
        .expect("summary has a global_auc line")
        .parse()
        .unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(vad(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(vad(&["gen-synthetic", "--bogus"]).status.code(), Some(2));
    assert_eq!(vad(&["train-frame", "--dataset", "d", "--out", "o"]).status.code(), Some(2));
    assert_eq!(vad(&["score", "--dataset", "d", "--out", "o"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_1_with_message() {
    let d = tempfile::tempdir().unwrap();
    let out = vad(&["evaluate", "--untrained", "--dataset", s(&d.path().join("nope")), "--out", s(d.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("is not a directory"));

    let cfg = d.path().join("bad.toml");
    std::fs::write(&cfg, "frame_size = \"big\"").unwrap();
    let out = vad(&["gen-synthetic", "--config", s(&cfg), "--out", s(&d.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn untrained_model_scores_near_chance() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let mut aucs = Vec::new();
    for seed in ["0", "1", "2"] {
        let data = d.path().join(format!("data{seed}"));
        ok(&["gen-synthetic", "--seed", seed, "--config", s(&cfg), "--out", s(&data)]);
        let out = d.path().join(format!("eval{seed}"));
        let summary = ok(&[
            "evaluate", "--untrained", "--seed", seed, "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out),
        ]);
        assert!(out.join("scores.csv").is_file());
        aucs.push(global_auc(&summary));
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.15, "untrained AUCs {aucs:?}");
}

#[test]
fn full_pipeline_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = d.path().join("data");
    let c = s(&cfg);
    ok(&["gen-synthetic", "--seed", "3", "--config", c, "--out", s(&data)]);
    ok(&["precompute-flow", "--dataset", s(&data), "--out", s(&d.path().join("bm")), "--radius", "3"]);
    assert!(d.path().join("bm/train_000/0000.flo").is_file());

    let motion = d.path().join("motion");
    ok(&["train-motion", "--seed", "3", "--config", c, "--dataset", s(&data), "--out", s(&motion)]);
    assert!(motion.join("motion-metrics.log").is_file());
    let mut checkpoints = Vec::new();
    for run in ["f1", "f2"] {
        let out = d.path().join(run);
        ok(&[
            "train-frame", "--seed", "3", "--config", c, "--dataset", s(&data), "--out", s(&out),
            "--motion", s(&motion.join("motion.ckpt")), "--lr", "1e-3",
        ]);
        checkpoints.push(std::fs::read(out.join("frame.ckpt")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);

    let model = d.path().join("f1");
    let eval = d.path().join("eval");
    ok(&[
        "evaluate", "--config", c, "--dataset", s(&data), "--model", s(&model), "--out", s(&eval), "--masks",
        "--patch", "4",
    ]);
    let csv = std::fs::read_to_string(eval.join("scores.csv")).unwrap();
    assert!(csv.starts_with("video_id,frame_index,psnr_db,ns,score,label\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 12);
    assert!(eval.join("summary.txt").is_file());
    assert!(eval.join("masks/test_000/0011.png").is_file());

    let score = d.path().join("score");
    ok(&["score", "--config", c, "--dataset", s(&data), "--model", s(&model), "--out", s(&score)]);
    assert_eq!(std::fs::read_to_string(score.join("scores.csv")).unwrap(), csv);

    let bench = ok(&[
        "bench", "--config", c, "--dataset", s(&data), "--model", s(&model), "--out", s(&d.path().join("bench")),
        "--frames", "10",
    ]);
    assert!(bench.contains("prediction_fps: ") && bench.contains("detection_fps: "));

    let masks = d.path().join("masks");
    ok(&[
        "mask", "--config", c, "--dataset", s(&data), "--model", s(&model), "--out", s(&masks), "--video", "test_001",
    ]);
    assert!(masks.join("test_001/0001.png").is_file());
    assert!(!masks.join("test_000").exists());
}

#[test]
fn ablate_reports_four_cells() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = d.path().join("data");
    ok(&["gen-synthetic", "--seed", "4", "--config", s(&cfg), "--out", s(&data)]);
    let out = d.path().join("ablate");
    let table = ok(&["ablate", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out), "--seed", "4"]);
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("Exp")).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("Exp1  off   off"));
    assert!(rows[3].starts_with("Exp4  on    on"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 4);
}
