use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_weakhoi");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Vec<Value> {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("stdout is JSON lines"))
        .collect()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write_json(p: &Path, v: &Value) {
    std::fs::write(p, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates a small planted dataset and returns the run config synth wrote.
fn small_run(dir: &Path, seed: u64) -> PathBuf {
    let cfg = dir.join("synth.json");
    write_json(
        &cfg,
        &json!({
            "seed": seed,
            "paths": {"output_dir": "data"},
            "synth": {"n_train": 24, "n_test": 8},
            "train": {"learning_rate": 0.5, "decay_epoch": null, "epochs": 3, "d": 16}
        }),
    );
    run_ok(&["synth", "--config", s(&cfg)]);
    dir.join("data/run.json")
}

/// Copy of `run` with a different config file name and edited fields.
fn variant(run: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = read_json(run);
    edit(&mut v);
    let p = run.with_file_name(name);
    write_json(&p, &v);
    p
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let run = small_run(tmp.path(), 0);
    let data = run.parent().unwrap();
    for cmd in ["extract-labels", "manifest", "prune", "build-plausibility", "train", "infer"] {
        let events = run_ok(&[cmd, "--config", s(&run)]);
        assert!(events.iter().all(|e| e["event"].is_string()), "{cmd}: {events:?}");
    }
    for f in ["labels.jsonl", "manifest.jsonl", "train.pruned.jsonl", "plausibility.json", "checkpoint.json", "detections.jsonl"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    let events = run_ok(&["train", "--config", s(&run)]);
    assert_eq!(events.iter().filter(|e| e["event"] == "epoch").count(), 3);

    for mode in ["role", "agent", "full"] {
        let events = run_ok(&["eval", "--config", s(&run), "--mode", mode]);
        let ap = events.last().unwrap()["mean_ap"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&ap));
        let report = read_json(&data.join("report.json"));
        assert_eq!(report["mode"], mode);
        assert_eq!(report["mean_ap"].as_f64().unwrap(), ap);
    }
}

#[test]
fn eval_reproduces_golden_report() {
    let fx = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/ap");
    let tmp = tempfile::tempdir().unwrap();
    for case in ["mixed", "perfect", "below_iou"] {
        let report = tmp.path().join(format!("{case}.json"));
        let cfg = tmp.path().join(format!("{case}.cfg.json"));
        write_json(
            &cfg,
            &json!({
                "seed": 0,
                "paths": {
                    "verbs": fx.join("verbs.json"),
                    "objects": fx.join("objects.json"),
                    "test": fx.join("test.jsonl"),
                    "detections": fx.join(case).join("detections.jsonl"),
                    "report": report,
                }
            }),
        );
        run_ok(&["eval", "--config", s(&cfg)]);
        assert_eq!(
            std::fs::read_to_string(&report).unwrap(),
            std::fs::read_to_string(fx.join(case).join("expected.json")).unwrap(),
            "{case}"
        );
    }
}

#[test]
fn eval_writes_curves_when_asked() {
    let tmp = tempfile::tempdir().unwrap();
    let run = small_run(tmp.path(), 0);
    run_ok(&["train", "--config", s(&run)]);
    run_ok(&["infer", "--config", s(&run)]);
    let cfg = variant(&run, "curves.json", |v| v["write_curves"] = json!(true));
    run_ok(&["eval", "--config", s(&cfg)]);
    let dir = run.parent().unwrap().join("report_curves");
    let csvs: Vec<_> = std::fs::read_dir(&dir).unwrap().collect();
    assert!(!csvs.is_empty());
}

#[test]
fn no_preposition_flag_matches_zero_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let run = small_run(tmp.path(), 3);
    let data = run.parent().unwrap();
    let flagged = variant(&run, "flag.json", |v| v["paths"]["checkpoint"] = json!("flag.ckpt"));
    let zero = variant(&run, "zero.json", |v| {
        v["paths"]["checkpoint"] = json!("zero.ckpt");
        v["train"]["lambda"] = json!(0.0);
    });
    let full = variant(&run, "full.json", |v| v["paths"]["checkpoint"] = json!("full.ckpt"));
    run_ok(&["train", "--config", s(&flagged), "--no-preposition"]);
    run_ok(&["train", "--config", s(&zero)]);
    run_ok(&["train", "--config", s(&full)]);
    let blocks = |f: &str| read_json(&data.join(f))["blocks"].clone();
    assert_eq!(blocks("flag.ckpt"), blocks("zero.ckpt"));
    assert_ne!(blocks("flag.ckpt"), blocks("full.ckpt"));
}

#[test]
fn zero_weight_checkpoint_scores_uniformly() {
    let tmp = tempfile::tempdir().unwrap();
    let run = small_run(tmp.path(), 0);
    let data = run.parent().unwrap();
    run_ok(&["train", "--config", s(&run)]);
    let ck_path = data.join("checkpoint.json");
    let mut ck = read_json(&ck_path);
    let verbs = read_json(&data.join("verbs.json")).as_array().unwrap().len() as f64;
    for b in ck["blocks"].as_array_mut().unwrap() {
        for x in b["data"].as_array_mut().unwrap() {
            *x = json!(0.0);
        }
    }
    std::fs::write(&ck_path, ck.to_string()).unwrap();
    run_ok(&["infer", "--config", s(&run), "--no-plausibility"]);

    let test: Vec<Value> = std::fs::read_to_string(data.join("test.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let dets: Vec<Value> = std::fs::read_to_string(data.join("detections.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(test.len(), dets.len());
    for (r, d) in test.iter().zip(&dets) {
        assert_eq!(r["id"], d["image_id"]);
        let humans = r["humans"].as_array().unwrap();
        let objects = r["objects"].as_array().unwrap();
        let pairs = (humans.len() * objects.len()) as f64;
        let got = d["detections"].as_array().unwrap();
        assert_eq!(got.len() as f64, pairs);
        let mut k = 0;
        for h in humans {
            for o in objects {
                let want = h["score"].as_f64().unwrap() * o["score"].as_f64().unwrap() / (verbs * pairs);
                let score = got[k]["score"].as_f64().unwrap();
                assert!((score - want).abs() < 1e-12, "{score} vs {want}");
                k += 1;
            }
        }
    }
}

#[test]
fn infer_ignores_grounding_maps_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let run = small_run(tmp.path(), 1);
    let data = run.parent().unwrap();
    run_ok(&["prune", "--config", s(&run)]);
    run_ok(&["train", "--config", s(&run)]);
    run_ok(&["infer", "--config", s(&run)]);
    let reference = std::fs::read(data.join("detections.jsonl")).unwrap();

    std::fs::rename(data.join("maps"), tmp.path().join("maps.away")).unwrap();
    run_ok(&["infer", "--config", s(&run)]);
    assert_eq!(std::fs::read(data.join("detections.jsonl")).unwrap(), reference);

    // Flagged training records give the same detections as the unflagged ones.
    let on_train = variant(&run, "on_train.json", |v| {
        v["paths"]["test"] = json!("train.jsonl");
        v["paths"]["detections"] = json!("a.jsonl");
    });
    let on_pruned = variant(&run, "on_pruned.json", |v| {
        v["paths"]["test"] = json!("train.pruned.jsonl");
        v["paths"]["detections"] = json!("b.jsonl");
    });
    run_ok(&["infer", "--config", s(&on_train)]);
    run_ok(&["infer", "--config", s(&on_pruned)]);
    assert_eq!(std::fs::read(data.join("a.jsonl")).unwrap(), std::fs::read(data.join("b.jsonl")).unwrap());
}

#[test]
fn every_toggle_combination_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let run = small_run(tmp.path(), 2);
    run_ok(&["build-plausibility", "--config", s(&run)]);
    let mut checkpoints = Vec::new();
    for bits in 0..8u8 {
        let mut args = vec![];
        if bits & 1 == 0 {
            args.push("--no-pruning");
        }
        if bits & 2 == 0 {
            args.push("--no-plausibility");
        }
        if bits & 4 == 0 {
            args.push("--no-preposition");
        }
        for cmd in ["train", "infer", "eval"] {
            let mut a = vec![cmd, "--config", s(&run)];
            a.extend(&args);
            let events = run_ok(&a);
            if cmd == "train" {
                let t = &events.last().unwrap()["toggles"];
                assert_eq!(t["pruning"], bits & 1 != 0);
                assert_eq!(t["plausibility"], bits & 2 != 0);
                assert_eq!(t["preposition"], bits & 4 != 0);
            }
        }
        checkpoints.push(read_json(&run.with_file_name("checkpoint.json"))["blocks"].clone());
    }
    // plausibility only acts at inference
    assert_eq!(checkpoints[1], checkpoints[3]);
    assert_ne!(checkpoints[0], checkpoints[1]);
}

#[test]
fn bad_invocations_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train", "--config", "x.json", "--bogus"]);
    assert!(!out.status.success());
    let out = run(&["frobnicate"]);
    assert!(!out.status.success());

    let missing = tmp.path().join("nope.json");
    let out = run(&["train", "--config", s(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let cfg = tmp.path().join("empty.json");
    write_json(&cfg, &json!({"seed": 0}));
    let out = run(&["train", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.verbs"));

    let cfg = tmp.path().join("noseed.json");
    write_json(&cfg, &json!({"paths": {}}));
    assert!(!run(&["synth", "--config", s(&cfg)]).status.success());

    let run_cfg = small_run(tmp.path(), 0);
    let broken = variant(&run_cfg, "broken.json", |v| v["paths"]["train"] = json!("missing.jsonl"));
    assert!(!run(&["train", "--config", s(&broken)]).status.success());
    let no_table = variant(&run_cfg, "no_table.json", |v| {
        v["paths"].as_object_mut().unwrap().remove("distributions");
        v["paths"]["table"] = json!("absent.json");
    });
    run_ok(&["train", "--config", s(&run_cfg)]);
    assert!(!run(&["infer", "--config", s(&no_table)]).status.success());
    run_ok(&["infer", "--config", s(&no_table), "--no-plausibility"]);
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = small_run(a.path(), 5);
    let rb = small_run(b.path(), 5);
    for r in [&ra, &rb] {
        run_ok(&["train", "--config", s(r)]);
        run_ok(&["infer", "--config", s(r)]);
        run_ok(&["eval", "--config", s(r)]);
    }
    for f in ["train.jsonl", "checkpoint.json", "detections.jsonl", "report.json"] {
        assert_eq!(
            std::fs::read(ra.with_file_name(f)).unwrap(),
            std::fs::read(rb.with_file_name(f)).unwrap(),
            "{f}"
        );
    }
    let other = variant(&ra, "other.json", |v| v["paths"]["checkpoint"] = json!("other.ckpt"));
    run_ok(&["train", "--config", s(&other), "--seed", "6"]);
    assert_ne!(
        std::fs::read(ra.with_file_name("checkpoint.json")).unwrap(),
        std::fs::read(ra.with_file_name("other.ckpt")).unwrap()
    );
}
