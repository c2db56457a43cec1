use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcmnet::model::checkpoint::encode_checkpoint;
use dcmnet::model::{Dcmnet, ModelConfig};
use tempfile::TempDir;

fn dcmnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn dcmnet")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dcmnet(dir, args);
    assert!(
        out.status.success(),
        "dcmnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    dcmnet(dir, args).status.code().expect("exit code")
}

const SMALL: &[&str] = &[
    "--height",
    "24",
    "--width",
    "24",
    "--tile",
    "8",
    "--train-per-class",
    "6",
    "--classes",
    "3",
];

fn small_scene(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--out", name];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(dir.path(), &args);
    dir.path().join(name)
}

#[test]
fn synth_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_scene(&dir, "a.dynf", &["--seed", "5"]);
    let b = small_scene(&dir, "b.dynf", &["--seed", "5"]);
    let c = small_scene(&dir, "c.dynf", &["--seed", "6"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());

    let out = ok(
        dir.path(),
        &[
            "synth",
            "--out",
            "six.dynf",
            "--classes",
            "6",
            "--height",
            "48",
            "--width",
            "32",
        ],
    );
    let rows = out.lines().filter(|l| {
        l.split_whitespace()
            .next()
            .is_some_and(|w| w.parse::<usize>().is_ok())
    });
    assert_eq!(rows.count(), 6);
    assert!(out.contains("prototype test OA"));
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(&dir, "s.dynf", &[]);
    ok(
        dir.path(),
        &[
            "train",
            "--data",
            "s.dynf",
            "--checkpoint",
            "m.dynm",
            "--epochs",
            "0",
            "--seed",
            "9",
        ],
    );
    let cube = dcmnet::preprocessing::load_dataset(&scene).unwrap();
    let cfg = ModelConfig::desk(cube.bands(), cube.lidar_channels(), cube.classes);
    let init = Dcmnet::new(cfg, 9).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("m.dynm")).unwrap(),
        encode_checkpoint(&init).unwrap()
    );
}

#[test]
fn modality_changes_the_loss_history() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(&dir, "s.dynf", &[]);
    let history = |modality: &str| {
        let ckpt = format!("{modality}.dynm");
        let hist = format!("{modality}.json");
        ok(
            dir.path(),
            &[
                "train",
                "--data",
                "s.dynf",
                "--checkpoint",
                &ckpt,
                "--history",
                &hist,
                "--epochs",
                "2",
                "--modality",
                modality,
            ],
        );
        let v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(&hist)).unwrap()).unwrap();
        assert_eq!(v["model"]["modality"], modality);
        v["loss_history"].clone()
    };
    let hl = history("HL");
    let h = history("H");
    assert_eq!(hl.as_array().unwrap().len(), 2);
    assert_ne!(hl, h);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(
            d,
            &["train", "--data", "absent.dynf", "--checkpoint", "m.dynm"]
        ),
        3
    );
    assert!(!d.join("m.dynm").exists());

    small_scene(&dir, "s.dynf", &[]);
    std::fs::write(d.join("bad.json"), r#"{"train": {"epochs": "many"}}"#).unwrap();
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--config",
                "bad.json",
                "--data",
                "s.dynf",
                "--checkpoint",
                "m.dynm"
            ]
        ),
        2
    );
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--data",
                "s.dynf",
                "--checkpoint",
                "m.dynm",
                "--batch-size",
                "0"
            ]
        ),
        2
    );
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--data",
                "s.dynf",
                "--checkpoint",
                "m.dynm",
                "--layers",
                "7"
            ]
        ),
        2
    );
    assert_eq!(
        code(
            d,
            &["train", "--data", "s.dynf", "--checkpoint", "no/dir/m.dynm"]
        ),
        2
    );
    assert!(!d.join("m.dynm").exists());

    std::fs::write(d.join("junk.dynm"), b"not a checkpoint").unwrap();
    assert_eq!(
        code(
            d,
            &["eval", "--data", "s.dynf", "--checkpoint", "junk.dynm"]
        ),
        4
    );
    std::fs::write(d.join("junk.dynf"), b"not a dataset").unwrap();
    assert_eq!(
        code(
            d,
            &["train", "--data", "junk.dynf", "--checkpoint", "m.dynm"]
        ),
        3
    );

    ok(
        d,
        &[
            "train",
            "--data",
            "s.dynf",
            "--checkpoint",
            "m.dynm",
            "--epochs",
            "0",
        ],
    );
    small_scene(&dir, "other.dynf", &["--bands", "10"]);
    assert_eq!(
        code(
            d,
            &["eval", "--data", "other.dynf", "--checkpoint", "m.dynm"]
        ),
        4
    );
}

#[test]
fn eval_reports_and_routes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_scene(&dir, "s.dynf", &[]);
    ok(
        d,
        &[
            "train",
            "--data",
            "s.dynf",
            "--checkpoint",
            "m.dynm",
            "--epochs",
            "1",
        ],
    );
    let out = ok(
        d,
        &[
            "eval",
            "--data",
            "s.dynf",
            "--checkpoint",
            "m.dynm",
            "--split",
            "train",
            "--report",
            "r.json",
            "--routes",
            "all.json",
            "--route-threshold",
            "0",
        ],
    );
    assert!(out.contains("OA "));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["split"], "train");
    let oa = report["evaluation"]["oa"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&oa));

    ok(
        d,
        &[
            "eval",
            "--data",
            "s.dynf",
            "--checkpoint",
            "m.dynm",
            "--routes",
            "none.json",
            "--route-threshold",
            "1.0",
        ],
    );
    let edges = |name: &str| -> usize {
        let v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(d.join(name)).unwrap()).unwrap();
        let mut n = 0;
        count_edges(&v, &mut n);
        n
    };
    assert_eq!(edges("none.json"), 0);
    assert!(edges("all.json") > 0);
    assert_eq!(
        code(
            d,
            &[
                "eval",
                "--data",
                "s.dynf",
                "--checkpoint",
                "m.dynm",
                "--route-threshold",
                "2"
            ]
        ),
        2
    );
}

fn count_edges(v: &serde_json::Value, n: &mut usize) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                match (k.as_str(), v) {
                    ("edges" | "active_edges", serde_json::Value::Array(a)) => *n += a.len(),
                    _ => count_edges(v, n),
                }
            }
        }
        serde_json::Value::Array(a) => a.iter().for_each(|v| count_edges(v, n)),
        _ => {}
    }
}

#[test]
fn ablation_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_scene(&dir, "s.dynf", &[]);
    for (suite, rows) in [("blocks", 7), ("attention", 2), ("modality", 3)] {
        let csv = format!("{suite}.csv");
        ok(
            d,
            &[
                "ablate",
                "--suite",
                suite,
                "--data",
                "s.dynf",
                "--csv",
                &csv,
                "--epochs",
                "1",
                "--no-augment",
            ],
        );
        let text = std::fs::read_to_string(d.join(&csv)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("variant,oa,aa,kappa,params,flops"));
        assert_eq!(lines.count(), rows, "{suite}");
        assert!(d.join(format!("{suite}.json")).is_file());
    }
    assert_eq!(
        code(d, &["ablate", "--suite", "nonsense", "--data", "s.dynf"]),
        2
    );
}

#[test]
fn inspect_houston() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["inspect"]);
    assert!(out.contains("parameters: 7721874"));
    assert!(out.contains("FC (1152->256)"));
    let small = ok(
        dir.path(),
        &["inspect", "--preset", "desk", "--router", "off"],
    );
    assert!(!small.contains("Router "));
}

#[test]
fn config_file_supplies_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir(d.join("reports")).unwrap();
    std::fs::write(
        d.join("run.json"),
        r#"{"preset": "desk", "dataset": "cfg.dynf", "checkpoint": "cfg.dynm", "report_dir": "reports",
            "train": {"epochs": 1}, "synthetic": {"height": 24, "width": 24, "tile": 8, "train_per_class": 4, "classes": 3}}"#,
    )
    .unwrap();
    ok(d, &["synth", "--config", "run.json"]);
    ok(d, &["train", "--config", "run.json"]);
    ok(d, &["eval", "--config", "run.json"]);
    assert!(d.join("cfg.dynm").is_file());
    assert!(d.join("reports/loss_history.json").is_file());
    assert!(d.join("reports/eval_test.json").is_file());
}
