use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GaussianScene, SceneError};

pub const DEFAULT_SAMPLE_SIZE: usize = 40_000;

/// Draws exactly `n` splat indices. Scenes with at least `n` splats are
/// sampled without replacement (prefix of a seeded Fisher–Yates shuffle);
/// smaller scenes contribute every index once, in shuffled order, and the
/// remainder is drawn with replacement.
pub fn sample_gaussians(scene: &GaussianScene, n: usize, seed: u64) -> Result<Vec<usize>, SceneError> {
    sample_indices(scene.len(), n, seed)
}

pub(crate) fn sample_indices(total: usize, n: usize, seed: u64) -> Result<Vec<usize>, SceneError> {
    if total == 0 {
        return Err(SceneError::NoGaussians);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..total).collect();
    let shuffled = n.min(total);
    for i in 0..shuffled {
        let j = rng.gen_range(i..total);
        idx.swap(i, j);
    }
    idx.truncate(shuffled);
    while idx.len() < n {
        idx.push(rng.gen_range(0..total));
    }
    Ok(idx)
}
