//! Acceptance run: one PASS/FAIL line per criterion, with timings.
//! `cargo test -p gvlm-core --test acceptance -- 3 7` runs a subset.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use gvlm_core::bench::{
    bleu4, cider, count_accuracy, exact_match, generate_count_qa, rouge_l, write_jsonl, CountTemplates, ExclusionRules,
};
use gvlm_core::model::{
    contrastive_loss_var, count_samples, counting_room_spec, pretrain_samples, pretrain_sparsifier, readout_eval,
    train_stage, EpochRecord, GenerationConfig, Model, ModelConfig, TrainConfig,
};
use gvlm_core::numerics::{grad_check, GradCheckOptions, Graph, NumericsError, ParamStore, Tensor2D, Var};
use gvlm_core::scene::{
    brute_force_radius, load_scene, roi_members, save_scene, synth_scene, InstanceLabel, ObjectGroup, SceneAnnotations,
    SynthSceneSpec,
};
use gvlm_core::sparsifier::{Location, Variant, LEVEL_CAP, ROI_STEP_M, ROI_TOKENS, SCENE_TOKENS};
use gvlm_core::text::{LabelBank, Vocab, LABEL_BANK_SEED, OBJECT_LABELS, STUFF_LABELS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_scene, random_store, random_tensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, t: Instant) -> Result<Duration, String> {
    let e = t.elapsed();
    ensure(e < limit, || format!("took {e:.1?}, limit {limit:?}"))?;
    Ok(e)
}

fn small_model(d: usize, n_sample: usize, seed: u64) -> (Model, ParamStore) {
    let mut cfg = ModelConfig::default();
    cfg.dims.d_f = d;
    cfg.dims.d_lm = d;
    cfg.dims.heads = 2;
    cfg.dims.sparsifier_heads = 2;
    cfg.dims.lora_rank = 4;
    cfg.n_sample = n_sample;
    Model::init(cfg, seed).unwrap()
}

fn room(id: &str, labels: &[&str], per_object: u32, seed: u64, bank: &LabelBank) -> gvlm_core::scene::GaussianScene {
    let objects = labels
        .iter()
        .map(|l| ObjectGroup { label: l.to_string(), count: 1, gaussians_per_object: per_object, cluster_radius: 0.15 })
        .collect();
    let spec = SynthSceneSpec { scene_id: id.into(), extent: [4.0, 4.0, 2.5], objects, feature_noise: 0.05, seed };
    synth_scene(&spec, bank).unwrap()
}

// ---------------------------------------------------------------- 1

/// Largest relative error of tape gradients against central differences
/// over every entry of every input.
fn op_error(inputs: Vec<Tensor2D>, build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut store = ParamStore::new();
    for (i, t) in inputs.into_iter().enumerate() {
        store.insert(format!("x{i}"), t);
    }
    let names: Vec<String> = store.names().map(str::to_string).collect();
    grad_check(
        &store,
        |g, s| {
            let vars: Vec<Var> = names.iter().map(|n| s.bind(g, n, true)).collect::<Result<_, _>>()?;
            Ok(build(g, &vars))
        },
        GradCheckOptions::default(),
    )
    .unwrap()
    .max_rel_error
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut r = |rows, cols| random_tensor(rows, cols, &mut rng);
    let pos = r(5, 3);
    let mut errors: Vec<(&str, f64)> = vec![
        ("matmul", op_error(vec![r(3, 4), r(4, 2)], |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            g.sum(m)
        })),
        ("matmul_nt", op_error(vec![r(3, 4), r(5, 4)], |g, v| {
            let m = g.matmul_nt(v[0], v[1]).unwrap();
            let sq = g.matmul_nt(m, m).unwrap();
            g.mean_all(sq)
        })),
        ("add+add_row", op_error(vec![r(3, 4), r(3, 4), r(1, 4)], |g, v| {
            let a = g.add(v[0], v[1]).unwrap();
            let b = g.add_row(a, v[2]).unwrap();
            let sq = g.matmul_nt(b, b).unwrap();
            g.sum(sq)
        })),
        ("scale+gelu", op_error(vec![r(4, 3)], |g, v| {
            let s = g.scale(v[0], 2.5);
            let e = g.gelu(s);
            g.sum(e)
        })),
        ("layer_norm", op_error(vec![r(3, 6), r(1, 6), r(1, 6), r(2, 6)], |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2]).unwrap();
            let w = g.matmul_nt(y, v[3]).unwrap();
            g.sum(w)
        })),
        ("attention", op_error(vec![r(4, 8), r(5, 8), r(5, 8), r(4, 8)], |g, v| {
            let a = g.attention(v[0], v[1], v[2], 2, false).unwrap();
            let w = g.matmul_nt(a, v[3]).unwrap();
            g.sum(w)
        })),
        ("causal attention", op_error(vec![r(4, 8), r(4, 8), r(4, 8), r(4, 8)], |g, v| {
            let a = g.attention(v[0], v[1], v[2], 4, true).unwrap();
            let w = g.matmul_nt(a, v[3]).unwrap();
            g.sum(w)
        })),
        ("rows", op_error(vec![r(6, 4), r(2, 4)], |g, v| {
            let gathered = g.gather_rows(v[0], &[1, 3, 3, 0]).unwrap();
            let sl = g.slice_rows(v[0], 2, 3).unwrap();
            let c = g.concat_rows(&[gathered, sl, v[1]]).unwrap();
            let m = g.mean_rows(c);
            let cc = g.concat_rows(&[m, c]).unwrap();
            let sq = g.matmul_nt(cc, cc).unwrap();
            g.mean_all(sq)
        })),
        ("fourier", op_error(vec![r(3, 4), r(2, 8)], move |g, v| {
            let f = g.fourier(&pos, v[0]).unwrap();
            let w = g.matmul_nt(f, v[1]).unwrap();
            g.sum(w)
        })),
        ("normalize+cross_entropy", op_error(vec![r(3, 4), r(5, 4)], |g, v| {
            let a = g.normalize_rows(v[0]);
            let b = g.normalize_rows(v[1]);
            let m = g.matmul_nt(a, b).unwrap();
            let s = g.scale(m, 3.0);
            g.cross_entropy(s, &[0, 4, 2]).unwrap()
        })),
    ];

    // whole pipeline, every parameter trainable
    let (model, store) = small_model(16, 600, 3);
    let bank = LabelBank::builtin(16, LABEL_BANK_SEED).unwrap();
    let scene = model.prepare(room("g", &["chair", "lamp", "cup"], 200, 4, &bank), 0).unwrap();
    let prompt = model.prompt("what is the object at this location", Some(Location::Point([1.0, 1.0, 1.0]))).unwrap();
    let target = model.vocab.encode("chair");
    let probe = GradCheckOptions { eps: 1e-5, max_entries_per_param: Some(3) };
    let lm = grad_check(
        &store,
        |g, s| Ok(model.loss_var(g, s, &scene, &prompt, &target, &|_| true).map_err(|e| NumericsError::Shape(e.to_string()))?),
        probe,
    )
    .map_err(|e| e.to_string())?;
    errors.push(("pipeline prefix-LM", lm.max_rel_error));

    let labels = bank.subset(&["chair", "lamp", "cup"]).unwrap();
    let contrastive = grad_check(
        &store,
        |g, s| {
            let sp = model.sparsifier.bind(g, s, &|_| true).map_err(|e| NumericsError::Shape(e.to_string()))?;
            let mut outs = Vec::new();
            for loc in [[1.0, 1.0, 1.0], [2.5, 0.5, 1.5]] {
                let tok = sp.encode_location(g, &scene, &Location::Point(loc)).map_err(|e| NumericsError::Shape(e.to_string()))?;
                outs.push(g.mean_rows(tok));
            }
            let out = g.concat_rows(&outs)?;
            let lv = g.constant(labels.clone());
            contrastive_loss_var(g, out, lv, &[0, 2], 0.07).map_err(|e| NumericsError::Shape(e.to_string()))
        },
        probe,
    )
    .map_err(|e| e.to_string())?;
    errors.push(("pipeline contrastive", contrastive.max_rel_error));

    let (worst, err) = errors.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    ensure(err <= 1e-4, || format!("{worst}: relative error {err:.2e} > 1e-4"))?;
    let e = within(Duration::from_secs(120), t)?;
    Ok(format!("{} checks, max rel err {err:.2e} ({worst}), {} pipeline probes, {e:.1?}", errors.len(), lm.probes + contrastive.probes))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (model, store) = small_model(16, 3000, 5);
    let bank = LabelBank::builtin(16, LABEL_BANK_SEED).unwrap();
    let words: Vec<String> = Vocab::builtin().tokens().iter().skip(4).cloned().collect();
    let mut located = 0;
    for i in 0..200 {
        let k = rng.gen_range(1..6);
        let labels: Vec<&str> = OBJECT_LABELS.choose_multiple(&mut rng, k).copied().collect();
        let per = [10, 100, 400, 900][i % 4];
        let scene = model.prepare(room(&format!("s{i}"), &labels, per, rng.gen(), &bank), rng.gen()).unwrap();
        let text: Vec<&str> = (0..rng.gen_range(1..10)).map(|_| words.choose(&mut rng).unwrap().as_str()).collect();
        let loc = rng.gen_bool(0.5).then(|| {
            if rng.gen_bool(0.5) {
                Location::Point(std::array::from_fn(|_| rng.gen_range(-1.0..5.0)))
            } else {
                let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..3.0));
                Location::Box { min: a, max: a.map(|v| v + 0.5) }
            }
        });
        located += loc.is_some() as usize;
        let prompt = model.prompt(&text.join(" "), loc).unwrap();
        let tok = model.sparsifier.tokenize(&store, &scene, &prompt).unwrap();
        ensure(tok.scene.rows() == SCENE_TOKENS, || format!("pair {i}: {} scene tokens", tok.scene.rows()))?;
        let roi = tok.roi.as_ref().map(Tensor2D::rows);
        ensure(roi == loc.map(|_| ROI_TOKENS), || format!("pair {i}: roi {roi:?} with location {loc:?}"))?;
        ensure(tok.kv_rows.iter().all(|&r| r <= LEVEL_CAP), || format!("pair {i}: level inputs {:?}", tok.kv_rows))?;
    }
    Ok(format!("200 pairs ({located} located), 0 violations"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut grown = 0;
    for i in 0..1000 {
        let n = rng.gen_range(1..400);
        let scene = random_scene(n, 2, rng.gen_range(0.5..5.0), &mut rng);
        let points: Vec<[f64; 3]> = (0..scene.len()).map(|j| scene.position(j)).collect();
        let center: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..7.0));
        for r0 in [0.15, 0.30] {
            let roi = roi_members(&scene, center, r0, ROI_STEP_M).map_err(|e| e.to_string())?;
            let tag = || format!("scene {i}, r0 {r0}, center {center:?}");
            ensure(!roi.members.is_empty(), || format!("{}: empty region", tag()))?;
            ensure(roi.radius == r0 + ROI_STEP_M * roi.steps as f64, || format!("{}: radius {} not closed form", tag(), roi.radius))?;
            ensure(brute_force_radius(&points, center, roi.radius) == roi.members, || format!("{}: members differ", tag()))?;
            if roi.steps > 0 {
                let prev = r0 + ROI_STEP_M * (roi.steps - 1) as f64;
                ensure(brute_force_radius(&points, center, prev).is_empty(), || format!("{}: radius not minimal", tag()))?;
                grown += 1;
            }
        }
    }
    Ok(format!("2000 queries over 1000 scenes ({grown} grew), 0 violations"))
}

// ---------------------------------------------------------------- 4

const PRE_DIM: usize = 48;
const PRE_SCENES: usize = 50;
const PRE_HELD_OUT: usize = 10;
const PRE_LABELS: usize = 20;
const PRE_OBJECTS: usize = 5;
const PRE_SPLATS: u32 = 150;
const PRE_CLICKS: usize = 24;

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let mut cfg = ModelConfig::default();
    cfg.dims.d_f = PRE_DIM;
    cfg.dims.d_lm = PRE_DIM;
    cfg.dims.sparsifier_heads = 1;
    cfg.n_sample = 1024;
    let (model, mut store) = Model::init(cfg, 0).unwrap();
    let labels = &OBJECT_LABELS[..PRE_LABELS];
    let bank = LabelBank::generate(labels, PRE_DIM, 7, 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let raw: Vec<_> = (0..PRE_SCENES + PRE_HELD_OUT)
        .map(|i| {
            let pick: Vec<&str> = labels.choose_multiple(&mut rng, PRE_OBJECTS).copied().collect();
            room(&format!("p{i}"), &pick, PRE_SPLATS, rng.gen(), &bank)
        })
        .collect();
    let scenes: Vec<_> = raw.iter().map(|s| model.prepare(s.clone(), 0).unwrap()).collect();
    let rules = ExclusionRules::default();
    let train: Vec<_> = pretrain_samples(&raw[..PRE_SCENES], &bank, &rules, PRE_CLICKS, 3).unwrap();
    let centroids = pretrain_samples(&raw, &bank, &rules, 1, 3).unwrap();
    let (seen, held): (Vec<_>, Vec<_>) = centroids.into_iter().partition(|s| s.scene < PRE_SCENES);
    let tc = TrainConfig { epochs: 5, batch_size: 10, lr_max: 3e-3, lr_min: 3e-5, weight_decay: 0.1, ..Default::default() };
    let report = pretrain_sparsifier(&model, &mut store, &scenes, &train, &bank, &tc, None).map_err(|e| e.to_string())?;
    let tr = readout_eval(&model, &store, &scenes, &seen, &bank, tc.tau).unwrap();
    let ho = readout_eval(&model, &store, &scenes, &held, &bank, tc.tau).unwrap();
    let elapsed = t.elapsed();
    let ln = (PRE_LABELS as f64).ln();
    let summary = format!(
        "initial loss {:.4} (ln {PRE_LABELS} = {ln:.4}), top-1 train {:.1}% / held-out {:.1}%, {elapsed:.0?}",
        report.initial.loss,
        100.0 * tr.top1,
        100.0 * ho.top1
    );
    let mut missed = Vec::new();
    if (report.initial.loss - ln).abs() > 0.05 * ln {
        missed.push("initial loss");
    }
    if tr.top1 < 0.9 {
        missed.push("train top-1 < 90%");
    }
    if ho.top1 < 0.7 {
        missed.push("held-out top-1 < 70%");
    }
    if elapsed >= Duration::from_secs(600) {
        missed.push("runtime >= 10 min");
    }
    if missed.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; missed: {}", missed.join(", ")))
    }
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let d = 32;
    let mut cfg = ModelConfig::default();
    cfg.dims.d_f = d;
    cfg.dims.d_lm = d;
    cfg.n_sample = 600;
    let (model, mut store) = Model::init(cfg, 0).unwrap();
    let bank = LabelBank::builtin(d, LABEL_BANK_SEED).unwrap();
    let raw: Vec<_> = (0..200)
        .map(|i| {
            let spec = counting_room_spec(&format!("c{i}"), &[(OBJECT_LABELS[(i / 5) % 6], (i % 5 + 1) as u32)], 600, i as u64).unwrap();
            synth_scene(&spec, &bank).unwrap()
        })
        .collect();
    let scenes: Vec<_> = raw.iter().map(|s| model.prepare(s.clone(), 0).unwrap()).collect();
    let templates = CountTemplates::builtin();
    let all = count_samples(&model.vocab, &raw, &templates, &ExclusionRules::default()).unwrap();
    // one question per scene, cycling through the templates
    let n_t = templates.questions.len();
    let data: Vec<_> = all.into_iter().enumerate().filter(|(i, _)| i % n_t == (i / n_t) % n_t).map(|(_, s)| s).collect();
    let rules = ExclusionRules::default();
    let counts: Vec<u64> = data
        .iter()
        .map(|s| raw[s.scene].annotations().instances.iter().filter(|i| !rules.excludes(&i.label)).count() as u64)
        .collect();
    let tc = TrainConfig { epochs: 30, batch_size: 8, lr_max: 1e-2, lr_min: 1e-4, weight_decay: 0.0, ..Default::default() };
    let gen = GenerationConfig::greedy(4);
    let mut accuracy = 0.0;
    let mut hook = |r: &EpochRecord, st: &ParamStore| {
        if r.epoch < 3 {
            return true;
        }
        let hits: f64 = data
            .iter()
            .zip(&counts)
            .map(|(s, &c)| count_accuracy(&model.answer(st, &scenes[s.scene], &s.prompt, &gen).unwrap(), c))
            .sum();
        accuracy = hits / data.len() as f64;
        accuracy < 0.8
    };
    let report = train_stage(&model, &mut store, &scenes, &data, &tc, None, Some(&mut hook)).map_err(|e| e.to_string())?;
    let l = report.losses();
    let summary = format!(
        "{} samples, {} epochs, count accuracy {:.3}, loss epoch 1 {:.3} -> epoch 3 {:.3} ({:.0}%), {:.0?}",
        data.len(),
        l.len(),
        accuracy,
        l[0],
        l[2],
        100.0 * l[2] / l[0],
        t.elapsed()
    );
    ensure(accuracy >= 0.8, || format!("{summary}; accuracy < 0.80"))?;
    ensure(l[2] < 0.5 * l[0], || format!("{summary}; epoch-3 loss not below half of epoch 1"))?;
    within(Duration::from_secs(1800), t).map_err(|e| format!("{summary}; {e}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 6

fn max_abs(a: &Tensor2D, b: &Tensor2D) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_6() -> Outcome {
    let (model, store) = small_model(16, 4000, 6);
    let bank = LabelBank::builtin(16, LABEL_BANK_SEED).unwrap();
    let golden = room("golden", &["chair", "table", "lamp", "sofa", "cup"], 700, 11, &bank);
    let prompt = model.prompt("how many chairs are in the scene", Some(Location::Point([2.0, 2.0, 1.0]))).unwrap();
    let run = |v: Variant, p: &gvlm_core::sparsifier::TaskPrompt| {
        let m = model.with_variant(v);
        let scene = m.prepare(golden.clone(), 0).unwrap();
        m.sparsifier.tokenize(&store, &scene, p).unwrap()
    };
    let full = run(Variant::Full, &prompt);
    let mut parts = Vec::new();
    for v in [Variant::NoDepthwise, Variant::LearnableQueries, Variant::KnnDownsample] {
        let diff = max_abs(&full.scene, &run(v, &prompt).scene);
        ensure(diff > 1e-3, || format!("full vs {v}: max-abs {diff:.2e}"))?;
        parts.push(format!("{v} {diff:.3}"));
    }
    let reference = run(Variant::LearnableQueries, &prompt).scene;
    for (text, loc) in [
        ("what is the object at this location", Some(Location::Point([0.5, 3.0, 0.2]))),
        ("lamp", None),
        ("how many cups are there", None),
    ] {
        let other = run(Variant::LearnableQueries, &model.prompt(text, loc).unwrap()).scene;
        ensure(other == reference, || format!("learnable_queries changed with prompt `{text}`"))?;
    }
    Ok(format!("full vs {}; learnable_queries identical over 4 prompts", parts.join(", ")))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let close = |name: &str, got: f64, want: f64| ensure((got - want).abs() <= 1e-6, || format!("{name}: {got} vs {want}"));
    let bleu_oracle = (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
    let b = bleu4("a b c d e", &["a b c d f"]);
    close("bleu4", b, bleu_oracle)?;
    close("rouge_l", rouge_l("a b c d", &["a c b d"]), 0.75)?;
    let corpus: BTreeMap<String, Vec<&str>> = [("q".to_string(), vec!["three chairs"])].into();
    let degenerate = cider(&[("q".to_string(), "three chairs".to_string())], &corpus).map_err(|e| e.to_string())?[0];
    close("degenerate cider", degenerate, 0.0)?;
    let same = "there are three chairs here";
    let six = "i can count six of them";
    ensure(bleu4(six, &[six]) == 1.0, || "bleu4 identical pair below 1".into())?;
    ensure(rouge_l(same, &[same]) == 1.0, || "rouge_l identical pair below 1".into())?;
    ensure(exact_match(same, &[same]) == 1.0, || "exact match identical pair below 1".into())?;
    ensure(count_accuracy(same, 3) == 1.0, || "count accuracy on matching number below 1".into())?;
    Ok(format!("bleu4 {b:.6} (oracle {bleu_oracle:.6}), rouge_l 0.75, degenerate cider 0, identical pairs at 1"))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pool: Vec<String> = OBJECT_LABELS
        .iter()
        .chain(STUFF_LABELS.iter())
        .map(|s| s.to_string())
        .chain(["chair SPLIT".to_string(), "REMOVE".to_string(), "lamp_REMOVE".to_string()])
        .collect();
    let annotations: Vec<SceneAnnotations> = (0..60)
        .map(|s| SceneAnnotations {
            scene_id: format!("scene{s:02}"),
            instances: (0..rng.gen_range(3..15))
                .map(|id| InstanceLabel { id, label: pool.choose(&mut rng).unwrap().clone() })
                .collect(),
        })
        .collect();
    let rules = ExclusionRules::default();
    let templates = CountTemplates::builtin();
    let emit = || {
        let items = generate_count_qa(&annotations, 1000, 42, &rules, &templates).unwrap();
        let mut bytes = Vec::new();
        write_jsonl(&items, &mut bytes).unwrap();
        (items, bytes)
    };
    let (items, first) = emit();
    let (_, second) = emit();
    ensure(items.len() == 1000, || format!("{} items", items.len()))?;
    for it in &items {
        ensure(!rules.excludes(&it.label), || format!("{} asks about excluded `{}`", it.qid, it.label))?;
        let ann = annotations.iter().find(|a| a.scene_id == it.scene_id).unwrap();
        let recount = ann.instances.iter().filter(|i| i.label == it.label).count() as u32;
        ensure(recount == it.count, || format!("{}: count {} but recount {recount}", it.qid, it.count))?;
        ensure(it.answers.len() == 5, || format!("{}: {} answers", it.qid, it.answers.len()))?;
    }
    ensure(first == second, || "repeated run differs".into())?;
    Ok(format!("1000 items, 0 excluded labels, 0 recount mismatches, {} identical bytes", first.len()))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut corruptions = 0;
    for i in 0..100 {
        let scene = random_scene(rng.gen_range(1..200), rng.gen_range(1..24), 3.0, &mut rng);
        let bytes = save_scene(&scene);
        let back = load_scene(&bytes).map_err(|e| format!("scene {i}: {e}"))?;
        ensure(back == scene && save_scene(&back) == bytes, || format!("scene {i} did not round-trip"))?;

        let store = random_store(&mut rng);
        let ck = store.to_bytes();
        let restored = ParamStore::from_bytes(&ck).map_err(|e| format!("checkpoint {i}: {e}"))?;
        let exact = store.names().all(|n| {
            let (a, b) = (store.value(n).unwrap(), restored.value(n).unwrap());
            a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        ensure(exact && restored.len() == store.len() && restored.to_bytes() == ck, || format!("checkpoint {i} did not round-trip"))?;

        for _ in 0..5 {
            let mut s = bytes.clone();
            let at = rng.gen_range(0..s.len());
            s[at] ^= rng.gen_range(1..=255u8);
            ensure(load_scene(&s).is_err(), || format!("scene {i}: flipped byte {at} read silently"))?;
            ensure(load_scene(&bytes[..rng.gen_range(0..bytes.len())]).is_err(), || format!("scene {i}: truncation read silently"))?;
            let mut c = ck.clone();
            let at = rng.gen_range(0..c.len());
            c[at] ^= rng.gen_range(1..=255u8);
            ensure(ParamStore::from_bytes(&c).is_err(), || format!("checkpoint {i}: flipped byte {at} read silently"))?;
            ensure(ParamStore::from_bytes(&ck[..rng.gen_range(0..ck.len())]).is_err(), || format!("checkpoint {i}: truncation read silently"))?;
            corruptions += 4;
        }
    }
    Ok(format!("100 scenes and 100 checkpoints bit-exact, {corruptions} corruptions rejected"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", criterion_1),
        ("token budget", criterion_2),
        ("ROI radius growth", criterion_3),
        ("contrastive pretraining", criterion_4),
        ("end-to-end counting run", criterion_5),
        ("ablation wiring", criterion_6),
        ("metric oracles", criterion_7),
        ("benchmark generator", criterion_8),
        ("file formats", criterion_9),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(msg) => println!("criterion {n} {name}: PASS  {msg}  [{:.1?}]", t.elapsed()),
            Err(msg) => {
                println!("criterion {n} {name}: FAIL  {msg}  [{:.1?}]", t.elapsed());
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
