use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trimodal(args: &[&str], root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trimodal"));
    cmd.args(args);
    match root {
        Some(r) => cmd.env("TRIMODAL_OUT_ROOT", r),
        None => cmd.env_remove("TRIMODAL_OUT_ROOT"),
    };
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"{
  "schema_version": 1,
  "preset": "joint_triangular",
  "train": {
    "batch_size": 8,
    "epochs": 4,
    "steps_per_epoch": 3,
    "lr_init": 0.005,
    "weight_decay": 1e-5,
    "warmup_epochs": 1,
    "inter_gate_epochs": 1,
    "loss": {
      "tau": 0.1,
      "lambda_inter": 1.0,
      "lambda_main": 1.0,
      "margin": 1.0,
      "inter_variant": "triangular_area",
      "intra_enabled": [true, true, true]
    },
    "data": {
      "family": "latent",
      "k": 4,
      "view_dims": [8, 6, 5],
      "noise_sigma": 0.05,
      "augment": { "mask_ratio": 0.2, "jitter": 0.05 }
    },
    "hidden": 8,
    "joint": 4,
    "seeds": { "params": 1, "data": 2, "aug": 3 },
    "eval_every": 2,
    "eval_batch": 16,
    "eval_seed": 5
  }
}"#;

#[test]
fn small_config_trains_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.json");
    fs::write(&cfg, SMALL).unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = trimodal(
            &[
                "train",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ],
            None,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in [
            "metrics.csv",
            "summary.json",
            "checkpoint.json",
            "config.json",
        ] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        csvs.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 3);
}

#[test]
fn preset_run_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let o = trimodal(
        &["train", "--preset", "joint_triangular", "--out", "jt"],
        Some(tmp.path()),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("jt");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["inter_combined"].is_f64());
    assert_eq!(summary["preset"], "joint_triangular");
    assert!(dir.join("metrics.csv").exists());
    assert!(dir.join("checkpoint.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        "{\n  \"schema_version\": 1,\n  \"preset\": \"intra_only\"\n  \"oops\"\n}",
    )
    .unwrap();
    let o = trimodal(&["train", bad.to_str().unwrap()], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));

    fs::write(
        &bad,
        r#"{"schema_version": 1, "preset": "intra_only", "extra": 1}"#,
    )
    .unwrap();
    assert_eq!(
        trimodal(&["train", bad.to_str().unwrap()], Some(tmp.path()))
            .status
            .code(),
        Some(2)
    );

    fs::write(&bad, r#"{"schema_version": 9, "preset": "intra_only"}"#).unwrap();
    assert_eq!(
        trimodal(&["train", bad.to_str().unwrap()], Some(tmp.path()))
            .status
            .code(),
        Some(2)
    );

    let o = trimodal(&["train", "--preset", "no_such_preset"], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_covers_every_loss_variant() {
    let o = trimodal(&["gradcheck", "--instances", "2"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    for op in [
        "nt_xent_intra",
        "nt_xent_inter_pairwise",
        "triplet_margin_inter",
        "triangular_area_loss",
        "total_objective/none",
        "total_objective/nt_xent_pairwise",
        "total_objective/triplet_margin",
        "total_objective/triangular_area",
        "encoder/graph",
        "encoder/tokens",
        "encoder/voxels",
        "encoder/continuous",
    ] {
        let line = text
            .lines()
            .find(|l| l.starts_with(&format!("{op},")))
            .unwrap_or_else(|| panic!("no row for {op}"));
        assert!(line.ends_with(",ok"), "{line}");
    }
    assert!(text.contains(",detected"));
}

#[test]
fn gradcheck_flags_corrupted_rule() {
    let o = trimodal(&["gradcheck", "--instances", "1", "--inject-fault"], None);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains(",FAIL"));
}

#[test]
fn bench_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = trimodal(
        &[
            "bench",
            "--B",
            "2,3,4",
            "--d",
            "4",
            "--reps",
            "2",
            "--out",
            "bench.csv",
        ],
        Some(tmp.path()),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("batch,d,reps,naive_secs,fast_secs"));
    assert!(stdout(&o).contains("fitted exponent"));

    let o = trimodal(&["bench", "--B", "1,4", "--d", "4"], None);
    assert_eq!(o.status.code(), Some(2));
}
