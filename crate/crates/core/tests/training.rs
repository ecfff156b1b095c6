use gvlm_core::bench::{CountTemplates, ExclusionRules};
use gvlm_core::model::{count_samples, counting_room_spec, train_stage, Model, ModelConfig, TrainConfig};
use gvlm_core::numerics::ParamStore;
use gvlm_core::scene::synth_scene;
use gvlm_core::text::{LabelBank, OBJECT_LABELS};

fn run(seed: u64) -> (Vec<f64>, ParamStore, String) {
    let mut cfg = ModelConfig::default();
    cfg.dims.d_f = 16;
    cfg.dims.d_lm = 16;
    cfg.n_sample = 200;
    let (model, mut store) = Model::init(cfg, seed).unwrap();
    let bank = LabelBank::builtin(16, 3).unwrap();
    let raw: Vec<_> = (0..4)
        .map(|i| synth_scene(&counting_room_spec(&format!("r{i}"), &[(OBJECT_LABELS[i], i as u32 + 1)], 200, i as u64).unwrap(), &bank).unwrap())
        .collect();
    let scenes: Vec<_> = raw.iter().map(|s| model.prepare(s.clone(), seed).unwrap()).collect();
    let data = count_samples(&model.vocab, &raw, &CountTemplates::builtin(), &ExclusionRules::default()).unwrap();
    let tc = TrainConfig { epochs: 2, batch_size: 3, seed, ..Default::default() };
    let mut log = Vec::new();
    let report = train_stage(&model, &mut store, &scenes, &data, &tc, Some(&mut log), None).unwrap();
    (report.losses(), store, String::from_utf8(log).unwrap())
}

#[test]
fn same_seed_same_run() {
    let (la, sa, ma) = run(5);
    let (lb, sb, mb) = run(5);
    assert_eq!(la.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), lb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(sa, sb);
    assert_eq!(ma, mb);
    assert_eq!(ma.lines().count(), 2);
}

#[test]
fn seed_changes_the_run() {
    assert_ne!(run(5).0, run(6).0);
}
