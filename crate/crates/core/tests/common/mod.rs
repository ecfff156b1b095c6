#![allow(dead_code)]

use std::collections::BTreeMap;

use gvlm_core::numerics::{ParamStore, Tensor2D};
use gvlm_core::scene::{GaussianScene, GaussianSplat};
use rand::Rng;

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor2D {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor2D::from_vec(rows, cols, data).unwrap()
}

fn unit_quaternion<R: Rng>(rng: &mut R) -> [f32; 4] {
    loop {
        let q: [f32; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
        if n > 0.1 {
            let u = q.map(|v| (v as f64 / n) as f32);
            let n2 = u.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
            if (n2 - 1.0).abs() <= 1e-6 {
                return u;
            }
        }
    }
}

/// Scene with uniformly random attributes inside `[0, extent]³`; some
/// splats carry instance ids.
pub fn random_scene<R: Rng>(n: usize, dim: usize, extent: f64, rng: &mut R) -> GaussianScene {
    let instances = rng.gen_range(0..5u32);
    let labels: BTreeMap<u32, String> = (0..instances).map(|i| (i, format!("thing{i}"))).collect();
    let splats = (0..n)
        .map(|_| GaussianSplat {
            position: std::array::from_fn(|_| rng.gen_range(0.0..extent) as f32),
            scale: std::array::from_fn(|_| rng.gen_range(0.001..0.1)),
            rotation: unit_quaternion(rng),
            opacity: rng.gen_range(0.0..=1.0),
            color: std::array::from_fn(|_| rng.gen()),
            language_feature: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            instance_id: if instances > 0 && rng.gen_bool(0.5) { Some(rng.gen_range(0..instances)) } else { None },
        })
        .collect();
    GaussianScene::new(format!("rand{}", rng.gen::<u32>()), dim, splats, labels).unwrap()
}

pub fn random_store<R: Rng>(rng: &mut R) -> ParamStore {
    let mut s = ParamStore::default();
    for i in 0..rng.gen_range(1..8) {
        let (r, c) = (rng.gen_range(1..6), rng.gen_range(1..6));
        s.insert(format!("p{i}.w"), random_tensor(r, c, rng));
    }
    s
}
