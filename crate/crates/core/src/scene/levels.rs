//! Stand-in for the hidden states of a three-level point decoder.
//!
//! The finest level is the per-splat language feature of every sampled
//! splat. The two coarser levels average contiguous runs of the sample
//! along a Z-order curve, which groups spatial neighbours.

use crate::numerics::Tensor2D;

use super::{GaussianScene, SceneError};

/// Token counts of the two coarse levels.
pub const LEVEL_SIZES: [usize; 2] = [589, 2400];

#[derive(Debug, Clone, PartialEq)]
pub struct LevelTokens {
    pub features: Tensor2D,
    /// Mean position of the splats behind each token (n×3).
    pub positions: Tensor2D,
}

impl LevelTokens {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self { features: self.features.select_rows(indices), positions: self.positions.select_rows(indices) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLevels {
    /// Coarse to fine: 589, 2400 and one token per sampled splat.
    pub levels: [LevelTokens; 3],
}

/// Interleaves 21-bit quantized coordinates into a 63-bit Z-order key.
pub fn morton_code(q: [u32; 3]) -> u64 {
    fn spread(v: u32) -> u64 {
        let mut x = (v as u64) & 0x1f_ffff;
        x = (x | (x << 32)) & 0x1f00000000ffff;
        x = (x | (x << 16)) & 0x1f0000ff0000ff;
        x = (x | (x << 8)) & 0x100f00f00f00f00f;
        x = (x | (x << 4)) & 0x10c30c30c30c30c3;
        x = (x | (x << 2)) & 0x1249249249249249;
        x
    }
    spread(q[0]) | (spread(q[1]) << 1) | (spread(q[2]) << 2)
}

pub fn mock_decoder_levels(scene: &GaussianScene, sampled: &[usize]) -> Result<DecoderLevels, SceneError> {
    if sampled.is_empty() {
        return Err(SceneError::NoGaussians);
    }
    if let Some(&bad) = sampled.iter().find(|&&i| i >= scene.len()) {
        return Err(SceneError::Invalid(format!("sample index {bad} outside scene of {}", scene.len())));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in sampled {
        let p = scene.position(i);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    const MAX_Q: f64 = ((1u32 << 21) - 1) as f64;
    let key = |i: usize| {
        let p = scene.position(i);
        let mut q = [0u32; 3];
        for a in 0..3 {
            let span = hi[a] - lo[a];
            q[a] = if span > 0.0 { ((p[a] - lo[a]) / span * MAX_Q).floor() as u32 } else { 0 };
        }
        morton_code(q)
    };
    let mut order: Vec<(u64, usize)> = sampled.iter().map(|&i| (key(i), i)).collect();
    order.sort_unstable();

    let dim = scene.feature_dim;
    let n = order.len();
    let mut fine_f = Tensor2D::zeros(n, dim);
    let mut fine_p = Tensor2D::zeros(n, 3);
    for (r, &(_, i)) in order.iter().enumerate() {
        for (o, &v) in fine_f.row_mut(r).iter_mut().zip(&scene.splats[i].language_feature) {
            *o = v as f64;
        }
        fine_p.row_mut(r).copy_from_slice(&scene.position(i));
    }
    let fine = LevelTokens { features: fine_f, positions: fine_p };
    let coarse = |m: usize| if n <= m { fine.clone() } else { chunk_means(&fine, m) };
    Ok(DecoderLevels { levels: [coarse(LEVEL_SIZES[0]), coarse(LEVEL_SIZES[1]), fine.clone()] })
}

/// Averages `m` contiguous chunks `[⌊i·n/m⌋, ⌊(i+1)·n/m⌋)`.
fn chunk_means(tokens: &LevelTokens, m: usize) -> LevelTokens {
    let n = tokens.len();
    let mut features = Tensor2D::zeros(m, tokens.features.cols());
    let mut positions = Tensor2D::zeros(m, 3);
    for c in 0..m {
        let (start, end) = (c * n / m, (c + 1) * n / m);
        let inv = 1.0 / (end - start) as f64;
        for (src, dst) in [(&tokens.features, &mut features), (&tokens.positions, &mut positions)] {
            let out = dst.row_mut(c);
            for r in start..end {
                for (o, v) in out.iter_mut().zip(src.row(r)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|v| *v *= inv);
        }
    }
    LevelTokens { features, positions }
}
