use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gvlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvlm")).args(args).env_remove("GVLM_SEED").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SPEC: &str = r#"[
  {"scene_id": "room_a", "extent": [3.0, 3.0, 2.0], "feature_noise": 0.05, "seed": 1,
   "objects": [
     {"label": "chair", "count": 3, "gaussians_per_object": 20, "cluster_radius": 0.1},
     {"label": "lamp", "count": 1, "gaussians_per_object": 20, "cluster_radius": 0.1},
     {"label": "wall", "count": 2, "gaussians_per_object": 30, "cluster_radius": 0.5}]},
  {"scene_id": "room_b", "extent": [3.0, 3.0, 2.0], "feature_noise": 0.05, "seed": 2,
   "objects": [
     {"label": "cup", "count": 2, "gaussians_per_object": 20, "cluster_radius": 0.1},
     {"label": "book", "count": 4, "gaussians_per_object": 20, "cluster_radius": 0.1}]}
]"#;

fn synth(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, SPEC).unwrap();
    let out = dir.join("scenes");
    let o = gvlm(&["synth", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dim", "16"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn small_config(dir: &Path, scenes: &Path, extra: serde_json::Value) -> PathBuf {
    let mut cfg = serde_json::json!({
        "scenes": [scenes], "out_dir": dir.join("out"), "epochs": 2, "batch_size": 4, "lr_max": 1e-3,
        "n_sample": 256, "dims": {"d_f": 16, "d_lm": 16, "heads": 2},
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let p = dir.join("run.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    p
}

#[test]
fn tokenize_without_scene_is_a_usage_error() {
    let o = gvlm(&["tokenize", "--prompt", "how many chairs"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn benchgen_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = synth(dir.path());
    let a = gvlm(&["benchgen", "--annotations", scenes.to_str().unwrap(), "--n", "1000", "--seed", "1"]);
    let b = gvlm(&["benchgen", "--annotations", scenes.to_str().unwrap(), "--n", "1000", "--seed", "1"]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    // chair, lamp, cup and book; walls are excluded. Ten templates each.
    assert_eq!(text.lines().count(), 40);
    assert!(!text.contains("\"label\":\"wall\""));
}

#[test]
fn benchgen_reads_seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = synth(dir.path());
    let run = |env: &str| {
        Command::new(env!("CARGO_BIN_EXE_gvlm"))
            .args(["benchgen", "--annotations", scenes.to_str().unwrap(), "--n", "5"])
            .env("GVLM_SEED", env)
            .output()
            .unwrap()
    };
    let flag = gvlm(&["benchgen", "--annotations", scenes.to_str().unwrap(), "--n", "5", "--seed", "7"]);
    assert_eq!(run("7").stdout, flag.stdout);
    assert_eq!(code(&run("seven")), 1);
}

#[test]
fn eval_writes_the_six_key_report() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = synth(dir.path());
    let qa = dir.path().join("qa.jsonl");
    let o = gvlm(&["benchgen", "--annotations", scenes.to_str().unwrap(), "--n", "6", "--seed", "3", "--out", qa.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let preds: String = std::fs::read_to_string(&qa)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            format!("{{\"qid\":{},\"prediction\":{}}}\n", v["qid"], v["answers"][0])
        })
        .collect();
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(&pred, preds).unwrap();
    let report = dir.path().join("report.json");
    let o = gvlm(&["eval", "--qa", qa.to_str().unwrap(), "--pred", pred.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let mut keys: Vec<&str> = r.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["accuracy", "bleu4", "cider", "exact_match", "n_items", "rouge_l"]);
    assert_eq!(r["accuracy"], 1.0);
    assert_eq!(r["exact_match"], 1.0);
    assert!(report.with_extension("items.jsonl").exists());
}

#[test]
fn eval_with_unknown_question_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let qa = dir.path().join("qa.jsonl");
    std::fs::write(&qa, "{\"scene_id\":\"s\",\"qid\":\"count-00000\",\"question\":\"q\",\"answers\":[\"1\",\"1\",\"1\",\"1\",\"1\"],\"label\":\"cup\",\"count\":1}\n").unwrap();
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(&pred, "{\"qid\":\"count-99999\",\"prediction\":\"1\"}\n").unwrap();
    let o = gvlm(&["eval", "--qa", qa.to_str().unwrap(), "--pred", pred.to_str().unwrap(), "--report", dir.path().join("r.json").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_config_key_names_the_valid_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"rio_radius": 0.3}"#).unwrap();
    let o = gvlm(&["train", "--config", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("roi_radius_m"), "{}", stderr(&o));
}

#[test]
fn train_then_infer_and_tokenize() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = synth(dir.path());
    let cfg = small_config(dir.path(), &scenes, serde_json::json!({"stage": "instruct", "seed": 5}));
    let o = gvlm(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let echoed = std::fs::read_to_string(out.join("effective_config.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&echoed).unwrap();
    assert_eq!(v["seed"], 5);
    assert_eq!(v["stage"], "instruct");

    let ckpt = out.join("model.gvlp");
    let scene = scenes.join("room_a.gsvl");
    let o = gvlm(&["infer", "--ckpt", ckpt.to_str().unwrap(), "--scene", scene.to_str().unwrap(), "--prompt", "how many chairs are in the scene", "--beams", "2", "--max-length", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = gvlm(&["tokenize", "--scene", scene.to_str().unwrap(), "--prompt", "what is this", "--loc", "1,1,1", "--ckpt", ckpt.to_str().unwrap(), "--variant", "no_depthwise"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dump: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(dump["variant"], "no_depthwise");
    assert_eq!(dump["scene_tokens"].as_array().unwrap().len(), 128);
    assert_eq!(dump["roi"].as_array().unwrap().len(), 4);
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = synth(dir.path());
    let mut ckpts = Vec::new();
    for run in ["a", "b"] {
        let cfg = small_config(dir.path(), &scenes, serde_json::json!({}));
        let out = dir.path().join(run);
        let o = gvlm(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--epochs", "1"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        ckpts.push(std::fs::read(out.join("model.gvlp")).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1]);
}

#[test]
fn diverging_training_exits_3_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = synth(dir.path());
    let cfg = small_config(dir.path(), &scenes, serde_json::json!({"lr_max": 1e300, "lr_min": 1e300, "weight_decay": 0.0}));
    let o = gvlm(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let diag = std::fs::read_to_string(dir.path().join("out").join("nan_diagnostics.json")).unwrap();
    assert!(diag.contains("non-finite"), "{diag}");
}

#[test]
fn pretrain_reports_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = synth(dir.path());
    let cfg = small_config(dir.path(), &scenes, serde_json::json!({"clicks": 2, "batch_size": 6}));
    let o = gvlm(&["pretrain", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["samples"], 20);
    assert!(r["train_top1"].as_f64().unwrap() >= 0.0);
}

#[test]
fn corrupt_scene_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.gsvl");
    std::fs::write(&bad, b"GSVL\x01\x00").unwrap();
    let o = gvlm(&["tokenize", "--scene", bad.to_str().unwrap(), "--prompt", "chair"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
