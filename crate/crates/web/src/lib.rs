//! Browser bindings for the static demo page in `www/`. Each export takes
//! plain numbers or strings and returns a JSON string, so the page needs no
//! bundler. The `*_json` functions hold the logic and are callable natively.

use std::collections::BTreeMap;

use gvlm_core::bench::{bleu4, cider, count_accuracy, exact_match, extract_numbers, rouge_l};
use gvlm_core::numerics::Tensor2D;
use gvlm_core::scene::{brute_force_radius, synth_scene, ObjectGroup, SpatialGrid, SynthSceneSpec, DEFAULT_CELL_SIZE};
use gvlm_core::sparsifier::{fourier_encode, FourierPositionEncoder, ROI_STEP_M};
use gvlm_core::text::{LabelBank, LABEL_BANK_SEED, OBJECT_LABELS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const DEMO_DIM: usize = 16;

fn err(e: impl std::fmt::Display) -> String {
    json!({ "error": e.to_string() }).to_string()
}

/// Seeded room with a handful of objects, its splats (x, y, z, instance)
/// and the region picked around `center` with initial radius `r0`.
pub fn roi_json(seed: u64, objects: usize, center: [f64; 3], r0: f64) -> Result<Value, String> {
    let bank = LabelBank::builtin(DEMO_DIM, LABEL_BANK_SEED).map_err(err)?;
    let objects = (0..objects.clamp(1, 12))
        .map(|i| ObjectGroup {
            label: OBJECT_LABELS[(seed as usize + i) % OBJECT_LABELS.len()].to_string(),
            count: 1,
            gaussians_per_object: 60,
            cluster_radius: 0.2,
        })
        .collect();
    let spec = SynthSceneSpec { scene_id: "demo".into(), extent: [4.0, 4.0, 2.5], objects, feature_noise: 0.05, seed };
    let scene = synth_scene(&spec, &bank).map_err(err)?;
    let roi = SpatialGrid::new(&scene, DEFAULT_CELL_SIZE).roi_members(center, r0, ROI_STEP_M).map_err(err)?;
    let points: Vec<[f64; 3]> = (0..scene.len()).map(|i| scene.position(i)).collect();
    let brute = brute_force_radius(&points, center, roi.radius);
    let splats: Vec<Value> = scene
        .splats
        .iter()
        .zip(&points)
        .map(|(s, p)| json!([p[0], p[1], p[2], s.instance_id.map_or(-1, i64::from)]))
        .collect();
    let labels: Vec<Value> = scene
        .instance_centers()
        .iter()
        .map(|(id, label, c)| json!({ "id": id, "label": label, "center": c }))
        .collect();
    Ok(json!({
        "splats": splats,
        "instances": labels,
        "members": roi.members,
        "radius": roi.radius,
        "steps": roi.steps,
        "matches_brute_force": brute == roi.members,
    }))
}

/// Similarity `⟨γ(origin), γ(x)⟩ / (d/2)` on an `n × n` grid of the
/// z = 0 plane spanning `[-span, span]²`, with frequencies drawn at
/// standard deviation `sigma`.
pub fn kernel_json(seed: u64, dim: usize, sigma: f64, span: f64, n: usize) -> Result<Value, String> {
    if dim < 2 || dim > 512 || !(sigma > 0.0) || !(span > 0.0) || n < 2 || n > 200 {
        return Err(err("need 2 <= dim <= 512, sigma > 0, span > 0 and 2 <= n <= 200"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = FourierPositionEncoder::random(dim, &mut rng);
    let scaled: Vec<f64> = base.b.data().iter().map(|v| v * sigma).collect();
    let enc = FourierPositionEncoder::new(Tensor2D::from_vec(3, dim / 2, scaled).map_err(err)?).map_err(err)?;
    let origin = fourier_encode([0.0; 3], &enc);
    let half = (dim / 2) as f64;
    let mut grid = Vec::with_capacity(n * n);
    for r in 0..n {
        let y = span - 2.0 * span * r as f64 / (n - 1) as f64;
        for c in 0..n {
            let x = -span + 2.0 * span * c as f64 / (n - 1) as f64;
            let e = fourier_encode([x, y, 0.0], &enc);
            grid.push(origin.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / half);
        }
    }
    Ok(json!({ "n": n, "span": span, "values": grid }))
}

/// Scores one prediction against newline-separated references.
pub fn metrics_json(prediction: &str, references: &str) -> Result<Value, String> {
    let refs: Vec<&str> = references.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if refs.is_empty() {
        return Err(err("give at least one reference"));
    }
    let corpus: BTreeMap<String, Vec<&str>> = [("q".to_string(), refs.clone())].into();
    let cand = [("q".to_string(), prediction.to_string())];
    let cider = cider(&cand, &corpus).map_err(err)?[0];
    let gt = refs.iter().find_map(|r| extract_numbers(r).first().copied());
    Ok(json!({
        "bleu4": bleu4(prediction, &refs),
        "rouge_l": rouge_l(prediction, &refs),
        "cider": cider,
        "exact_match": exact_match(prediction, &refs),
        "count_accuracy": gt.map(|g| count_accuracy(prediction, g)),
    }))
}

fn reply(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => e,
    }
}

#[wasm_bindgen]
pub fn roi_explorer(seed: u32, objects: u32, x: f64, y: f64, z: f64, r0: f64) -> String {
    reply(roi_json(seed as u64, objects as usize, [x, y, z], r0))
}

#[wasm_bindgen]
pub fn fourier_kernel(seed: u32, dim: u32, sigma: f64, span: f64, n: u32) -> String {
    reply(kernel_json(seed as u64, dim as usize, sigma, span, n as usize))
}

#[wasm_bindgen]
pub fn metric_playground(prediction: &str, references: &str) -> String {
    reply(metrics_json(prediction, references))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roi_agrees_with_brute_force() {
        let v = roi_json(3, 5, [2.0, 2.0, 1.0], 0.15).unwrap();
        assert_eq!(v["matches_brute_force"], true);
        assert!(!v["members"].as_array().unwrap().is_empty());
    }

    #[test]
    fn kernel_peaks_at_origin() {
        let v = kernel_json(0, 32, 1.0, 1.0, 21).unwrap();
        let vals: Vec<f64> = v["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((vals[10 * 21 + 10] - 1.0).abs() < 1e-12);
        assert!(vals.iter().all(|x| *x <= 1.0 + 1e-12));
    }

    #[test]
    fn metrics_identical_pair() {
        let v = metrics_json("there are 3 chairs", "there are 3 chairs\n3").unwrap();
        assert_eq!(v["exact_match"], 1.0);
        assert_eq!(v["count_accuracy"], 1.0);
        assert!((v["rouge_l"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(metric_playground("x", "").contains("error"));
        assert!(fourier_kernel(0, 1, 1.0, 1.0, 10).contains("error"));
    }
}
