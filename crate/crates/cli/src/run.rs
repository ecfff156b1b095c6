use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gvlm_core::bench::{
    evaluate_run, generate_count_qa, read_jsonl, write_jsonl, BenchError, CountQAItem, CountTemplates, ExclusionRules,
};
use gvlm_core::model::{
    caption_samples, count_samples, pretrain_samples, pretrain_sparsifier, readout_eval, train_stage, GenerationConfig,
    Model, ModelConfig, ModelError, Stage, TrainSample,
};
use gvlm_core::numerics::ParamStore;
use gvlm_core::scene::{load_scene_with_width, synth_scene, GaussianScene, SceneAnnotations, SceneError, SynthSceneSpec};
use gvlm_core::sparsifier::{Location, PreparedScene, SparsifierError, TaskPrompt, TokenDump, Variant};
use gvlm_core::text::{LabelBank, EOS, LABEL_BANK_SEED};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::Failure;

pub const CHECKPOINT: &str = "model.gvlp";

fn io(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn json_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            e if e.is_numeric() => Failure::Numeric(e.to_string()),
            ModelError::Config(m) => Failure::Usage(m),
            e => Failure::Data(e.to_string()),
        }
    }
}

impl From<SparsifierError> for Failure {
    fn from(e: SparsifierError) -> Self {
        match e {
            SparsifierError::InvalidPrompt(_) | SparsifierError::EmptyTask | SparsifierError::Config(_) => {
                Failure::Usage(e.to_string())
            }
            e => ModelError::from(e).into(),
        }
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure::Data(e.to_string())
    }
}

/// Scene files named directly, plus every `.gsvl` inside named
/// directories (sorted by name).
pub fn expand_scene_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "gsvl"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn read_scene(path: &Path, width: Option<usize>) -> Result<GaussianScene, Failure> {
    let scene = if path.extension().is_some_and(|e| e == "json") {
        GaussianScene::read(path).map_err(|e| io(path, e))?
    } else {
        let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
        match width {
            Some(w) => load_scene_with_width(&bytes, w),
            None => gvlm_core::scene::load_scene(&bytes),
        }
        .map_err(|e| io(path, e))?
    };
    if let Some(w) = width {
        if scene.feature_dim != w {
            return Err(io(path, SceneError::FeatureWidth { expected: w, found: scene.feature_dim }));
        }
    }
    Ok(scene)
}

fn read_scenes(paths: &[PathBuf], width: usize) -> Result<Vec<GaussianScene>, Failure> {
    expand_scene_paths(paths)?.iter().map(|p| read_scene(p, Some(width))).collect()
}

pub fn parse_location(loc: Option<&str>, bbox: Option<&str>) -> Result<Option<Location>, Failure> {
    fn nums(s: &str, n: usize) -> Result<Vec<f64>, Failure> {
        let v: Result<Vec<f64>, _> = s.split(',').map(|x| x.trim().parse::<f64>()).collect();
        match v {
            Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(v),
            _ => Err(Failure::Usage(format!("expected {n} comma-separated numbers, got `{s}`"))),
        }
    }
    let location = match (loc, bbox) {
        (Some(_), Some(_)) => return Err(Failure::Usage("give --loc or --box, not both".into())),
        (Some(s), None) => {
            let v = nums(s, 3)?;
            Some(Location::Point([v[0], v[1], v[2]]))
        }
        (None, Some(s)) => {
            let v = nums(s, 6)?;
            Some(Location::Box { min: [v[0], v[1], v[2]], max: [v[3], v[4], v[5]] })
        }
        (None, None) => None,
    };
    if let Some(l) = &location {
        l.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(location)
}

/// Loads a checkpoint or, without one, builds fresh weights for the scene's
/// feature width.
fn model_for(ckpt: Option<&Path>, width: usize, variant: Option<Variant>, seed: u64) -> Result<(Model, ParamStore), Failure> {
    let (model, store) = match ckpt {
        Some(p) => Model::load(p).map_err(|e| match e {
            e if e.is_numeric() => Failure::Numeric(e.to_string()),
            e => io(p, e),
        })?,
        None => {
            let mut c = ModelConfig::default();
            c.dims.d_f = width;
            Model::init(c, seed)?
        }
    };
    Ok(match variant {
        Some(v) => (model.with_variant(v), store),
        None => (model, store),
    })
}

pub fn synth(spec: &Path, out: &Path, dim: usize) -> Result<Vec<PathBuf>, Failure> {
    let text = std::fs::read_to_string(spec).map_err(|e| io(spec, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| io(spec, e))?;
    let specs: Vec<SynthSceneSpec> = match value {
        serde_json::Value::Array(_) => serde_json::from_value(value),
        v => serde_json::from_value(v).map(|s| vec![s]),
    }
    .map_err(|e| io(spec, e))?;
    let bank = LabelBank::builtin(dim, LABEL_BANK_SEED).map_err(|e| Failure::Usage(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let mut written = Vec::new();
    for s in &specs {
        let scene = synth_scene(s, &bank)?;
        let path = out.join(format!("{}.gsvl", s.scene_id));
        scene.write(&path).map_err(|e| io(&path, e))?;
        let ann = out.join(format!("{}.annotations.json", s.scene_id));
        write_file(&ann, &json_pretty(&scene.annotations()))?;
        written.push(path);
    }
    Ok(written)
}

pub struct TokenizeArgs<'a> {
    pub scene: &'a Path,
    pub prompt: &'a str,
    pub location: Option<Location>,
    pub ckpt: Option<&'a Path>,
    pub variant: Option<Variant>,
    pub seed: u64,
}

pub fn tokenize(a: &TokenizeArgs) -> Result<String, Failure> {
    let scene = read_scene(a.scene, None)?;
    let (model, store) = model_for(a.ckpt, scene.feature_dim, a.variant, a.seed)?;
    if scene.feature_dim != model.config.dims.d_f {
        return Err(io(a.scene, SceneError::FeatureWidth { expected: model.config.dims.d_f, found: scene.feature_dim }));
    }
    let id = scene.scene_id.clone();
    let prepared = model.prepare(scene, a.seed)?;
    let prompt = model.prompt(a.prompt, a.location)?;
    let tokens = model.sparsifier.tokenize(&store, &prepared, &prompt)?;
    Ok(TokenDump::new(&id, model.config.variant, &tokens).to_json())
}

pub fn infer(scene: &Path, prompt: &str, location: Option<Location>, ckpt: &Path, gen: &GenerationConfig, seed: u64) -> Result<String, Failure> {
    gen.validate()?;
    let (model, store) = model_for(Some(ckpt), 0, None, seed)?;
    let scene = read_scene(scene, Some(model.config.dims.d_f))?;
    let prepared = model.prepare(scene, seed)?;
    let prompt = model.prompt(prompt, location)?;
    Ok(model.answer(&store, &prepared, &prompt, gen)?)
}

/// Annotation records from a JSON object, a JSON array, JSON lines, or a
/// directory of `*.json` files.
pub fn read_annotations(path: &Path) -> Result<Vec<SceneAnnotations>, Failure> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| f.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(read_annotations(&f)?);
        }
        return Ok(out);
    }
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
        return match v {
            serde_json::Value::Array(_) => serde_json::from_value(v),
            v => serde_json::from_value(v).map(|a| vec![a]),
        }
        .map_err(|e| io(path, e));
    }
    Ok(read_jsonl(path)?)
}

pub fn benchgen(annotations: &Path, n: usize, seed: u64, out: &mut dyn Write) -> Result<usize, Failure> {
    let ann = read_annotations(annotations)?;
    let items = generate_count_qa(&ann, n, seed, &ExclusionRules::default(), &CountTemplates::builtin())?;
    write_jsonl(&items, out)?;
    Ok(items.len())
}

pub fn eval(qa: &Path, pred: &Path, report: &Path) -> Result<String, Failure> {
    let (r, items) = evaluate_run(pred, qa)?;
    let text = json_pretty(&r);
    write_file(report, &text)?;
    let items_path = report.with_extension("items.jsonl");
    let f = File::create(&items_path).map_err(|e| io(&items_path, e))?;
    write_jsonl(&items, BufWriter::new(f))?;
    let meta = json!({
        "accuracy_rule": "an item is correct when any number extracted from the prediction equals the count",
        "cider_scale": "per-item CIDEr already includes the usual x10 factor; tables show it x10 again",
        "n_items": r.n_items,
    });
    write_file(&report.with_extension("meta.json"), &json_pretty(&meta))?;
    Ok(text)
}

fn model_and_store(cfg: &RunConfig) -> Result<(Model, ParamStore), Failure> {
    match &cfg.init_ckpt {
        Some(p) => {
            let (m, s) = Model::load(p).map_err(|e| io(p, e))?;
            if m.config.dims != cfg.dims {
                return Err(Failure::Usage(format!("{}: checkpoint dims differ from config dims", p.display())));
            }
            let mut m = m.with_variant(cfg.variant);
            m.config.roi_radius_m = cfg.roi_radius_m;
            m.sparsifier.config.roi_radius_m = cfg.roi_radius_m;
            m.config.n_sample = cfg.n_sample;
            Ok((m, s))
        }
        None => Ok(Model::init(cfg.model(), cfg.seed())?),
    }
}

fn prepare_all(model: &Model, scenes: &[GaussianScene], seed: u64) -> Result<Vec<PreparedScene>, Failure> {
    scenes.iter().map(|s| Ok(model.prepare(s.clone(), seed)?)).collect()
}

/// Writes the diagnostics file next to the run outputs for numeric
/// failures and passes the failure on.
fn with_diagnostics(cfg: &RunConfig, command: &str, f: Failure) -> Failure {
    if let Failure::Numeric(msg) = &f {
        let dump = json!({ "command": command, "error": msg, "config": cfg });
        let _ = std::fs::write(cfg.out_dir.join("nan_diagnostics.json"), json_pretty(&dump));
    }
    f
}

fn metrics_file(cfg: &RunConfig) -> Result<BufWriter<File>, Failure> {
    let p = cfg.out_dir.join("metrics.jsonl");
    Ok(BufWriter::new(File::create(&p).map_err(|e| io(&p, e))?))
}

fn instruct_from_qa(model: &Model, scenes: &[GaussianScene], qa: &Path) -> Result<Vec<TrainSample>, Failure> {
    let items: Vec<CountQAItem> = read_jsonl(qa)?;
    let index: HashMap<&str, usize> = scenes.iter().enumerate().map(|(i, s)| (s.scene_id.as_str(), i)).collect();
    let mut out = Vec::with_capacity(items.len());
    for it in &items {
        let &scene = index
            .get(it.scene_id.as_str())
            .ok_or_else(|| Failure::Data(format!("{}: question {} names unknown scene `{}`", qa.display(), it.qid, it.scene_id)))?;
        let answer = it.answers.first().ok_or_else(|| Failure::Data(format!("question {} has no answers", it.qid)))?;
        let mut target = model.vocab.encode(answer);
        target.push(EOS);
        let prompt = TaskPrompt::new(model.vocab.encode(&it.question), None)?;
        out.push(TrainSample { scene, prompt, target });
    }
    Ok(out)
}

pub fn train(cfg: &RunConfig) -> Result<serde_json::Value, Failure> {
    cfg.validate()?;
    cfg.echo()?;
    let seed = cfg.seed();
    let (model, mut store) = model_and_store(cfg)?;
    let raw = read_scenes(&cfg.scenes, cfg.dims.d_f)?;
    let rules = ExclusionRules::default();
    let data = match (cfg.stage, &cfg.qa) {
        (Stage::Align, _) => caption_samples(&model.vocab, &raw, &rules)?,
        (Stage::Instruct, Some(qa)) => instruct_from_qa(&model, &raw, qa)?,
        (Stage::Instruct, None) => count_samples(&model.vocab, &raw, &CountTemplates::builtin(), &rules)?,
    };
    let scenes = prepare_all(&model, &raw, seed)?;
    let mut metrics = metrics_file(cfg)?;
    let report = train_stage(&model, &mut store, &scenes, &data, &cfg.train(), Some(&mut metrics), None)
        .map_err(|e| with_diagnostics(cfg, "train", e.into()))?;
    metrics.flush().map_err(|e| io(&cfg.out_dir, e))?;
    let ckpt = cfg.out_dir.join(CHECKPOINT);
    model.save(&store, &ckpt)?;
    let summary = json!({
        "stage": cfg.stage,
        "seed": seed,
        "samples": data.len(),
        "steps": report.steps,
        "epoch_losses": report.losses(),
        "max_frozen_grad_norm": report.max_frozen_grad_norm,
        "checkpoint": ckpt,
    });
    write_file(&cfg.out_dir.join("train_report.json"), &json_pretty(&summary))?;
    Ok(summary)
}

pub fn pretrain(cfg: &RunConfig) -> Result<serde_json::Value, Failure> {
    cfg.validate()?;
    cfg.echo()?;
    let seed = cfg.seed();
    let (model, mut store) = model_and_store(cfg)?;
    let bank = LabelBank::builtin(cfg.dims.d_f, LABEL_BANK_SEED).map_err(|e| Failure::Usage(e.to_string()))?;
    let rules = ExclusionRules::default();
    let train_raw = read_scenes(&cfg.scenes, cfg.dims.d_f)?;
    let held_raw = read_scenes(&cfg.held_out, cfg.dims.d_f)?;
    let samples = pretrain_samples(&train_raw, &bank, &rules, cfg.clicks, seed)?;
    let held = pretrain_samples(&held_raw, &bank, &rules, 1, seed)?;
    let scenes = prepare_all(&model, &train_raw, seed)?;
    let held_scenes = prepare_all(&model, &held_raw, seed)?;
    let mut metrics = metrics_file(cfg)?;
    let report = pretrain_sparsifier(&model, &mut store, &scenes, &samples, &bank, &cfg.train(), Some(&mut metrics))
        .map_err(|e| with_diagnostics(cfg, "pretrain", e.into()))?;
    metrics.flush().map_err(|e| io(&cfg.out_dir, e))?;
    let final_train = readout_eval(&model, &store, &scenes, &samples, &bank, cfg.tau)?;
    let final_held = if held.is_empty() { None } else { Some(readout_eval(&model, &store, &held_scenes, &held, &bank, cfg.tau)?) };
    let ckpt = cfg.out_dir.join(CHECKPOINT);
    model.save(&store, &ckpt)?;
    let summary = json!({
        "seed": seed,
        "samples": samples.len(),
        "initial_loss": report.initial.loss,
        "epoch_losses": report.epochs.iter().map(|e| e.loss).collect::<Vec<_>>(),
        "train_top1": final_train.top1,
        "held_out_top1": final_held.map(|r| r.top1),
        "checkpoint": ckpt,
    });
    write_file(&cfg.out_dir.join("pretrain_report.json"), &json_pretty(&summary))?;
    Ok(summary)
}
