use crate::numerics::Tensor2D;
use crate::scene::LevelTokens;

const LLOYD_ITERS: usize = 5;

/// `⌊i·n/target⌋` for `i < target`, or every index when `n ≤ target`.
pub fn uniform_indices(n: usize, target: usize) -> Vec<usize> {
    if n <= target {
        return (0..n).collect();
    }
    (0..target).map(|i| i * n / target).collect()
}

pub fn downsample_uniform(tokens: &LevelTokens, target: usize) -> LevelTokens {
    assert!(target >= 1, "downsampling target must be at least 1");
    if tokens.len() <= target {
        return tokens.clone();
    }
    tokens.select(&uniform_indices(tokens.len(), target))
}

/// Lloyd's k-means over 3D positions, seeded at the stride indices.
/// Returns the final group of every point and the centroids.
pub fn kmeans_groups(positions: &Tensor2D, k: usize, iters: usize) -> (Vec<usize>, Tensor2D) {
    let n = positions.rows();
    let mut centroids = positions.select_rows(&uniform_indices(n, k));
    let k = centroids.rows();
    let mut assign = vec![0usize; n];
    let assign_all = |centroids: &Tensor2D, assign: &mut [usize]| {
        for (i, a) in assign.iter_mut().enumerate() {
            let p = positions.row(i);
            let mut best = (f64::INFINITY, 0);
            for c in 0..k {
                let q = centroids.row(c);
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best.0 {
                    best = (d, c);
                }
            }
            *a = best.1;
        }
    };
    for _ in 0..iters {
        assign_all(&centroids, &mut assign);
        let mut sums = Tensor2D::zeros(k, 3);
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(positions.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    assign_all(&centroids, &mut assign);
    (assign, centroids)
}

/// Final-level reduction of the kNN ablation: tokens are grouped by their
/// nearest of `target` k-means centroids (5 Lloyd iterations) and averaged.
/// A group left empty keeps its seed token.
pub fn downsample_knn_variant(tokens: &LevelTokens, target: usize) -> LevelTokens {
    assert!(target >= 1, "downsampling target must be at least 1");
    let n = tokens.len();
    if n <= target {
        return tokens.clone();
    }
    let (assign, _) = kmeans_groups(&tokens.positions, target, LLOYD_ITERS);
    let d = tokens.features.cols();
    let mut features = Tensor2D::zeros(target, d);
    let mut positions = Tensor2D::zeros(target, 3);
    let mut counts = vec![0usize; target];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (o, v) in features.row_mut(a).iter_mut().zip(tokens.features.row(i)) {
            *o += v;
        }
        for (o, v) in positions.row_mut(a).iter_mut().zip(tokens.positions.row(i)) {
            *o += v;
        }
    }
    let seeds = uniform_indices(n, target);
    for c in 0..target {
        if counts[c] == 0 {
            features.row_mut(c).copy_from_slice(tokens.features.row(seeds[c]));
            positions.row_mut(c).copy_from_slice(tokens.positions.row(seeds[c]));
        } else {
            let inv = 1.0 / counts[c] as f64;
            features.row_mut(c).iter_mut().for_each(|v| *v *= inv);
            positions.row_mut(c).iter_mut().for_each(|v| *v *= inv);
        }
    }
    LevelTokens { features, positions }
}
