//! Uniform spatial hashing for closed-ball radius queries and the
//! growing-radius region-of-interest search.

use std::collections::HashMap;

use super::{Aabb, GaussianScene, SceneError};

/// One ROI growth step; also the default cell edge.
pub const DEFAULT_CELL_SIZE: f64 = 0.15;

#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cell_size: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    positions: Vec<[f64; 3]>,
    bounds: Aabb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiResult {
    pub members: Vec<usize>,
    pub radius: f64,
    /// Number of growth steps taken beyond the initial radius.
    pub steps: u64,
}

impl SpatialGrid {
    pub fn new(scene: &GaussianScene, cell_size: f64) -> Self {
        let positions = (0..scene.len()).map(|i| scene.position(i)).collect();
        Self::from_positions(positions, cell_size, scene.bounds())
    }

    pub fn from_points(points: &[[f64; 3]], cell_size: f64) -> Self {
        let f: Vec<[f32; 3]> = points.iter().map(|p| [p[0] as f32, p[1] as f32, p[2] as f32]).collect();
        Self::from_positions(points.to_vec(), cell_size, Aabb::around(f.iter()))
    }

    fn from_positions(positions: Vec<[f64; 3]>, cell_size: f64, bounds: Aabb) -> Self {
        assert!(cell_size > 0.0 && cell_size.is_finite(), "cell size must be positive");
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in positions.iter().enumerate() {
            cells.entry(cell_of(p, cell_size)).or_default().push(i);
        }
        Self { cell_size, cells, positions, bounds }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn cell_of(&self, p: &[f64; 3]) -> [i64; 3] {
        cell_of(p, self.cell_size)
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_members(&self, cell: &[i64; 3]) -> &[usize] {
        self.cells.get(cell).map_or(&[], Vec::as_slice)
    }

    /// Indices within Euclidean distance `r` of `center` (closed ball), in
    /// ascending order. Non-positive radii select nothing.
    pub fn radius_query(&self, center: [f64; 3], r: f64) -> Vec<usize> {
        if !(r > 0.0) {
            return Vec::new();
        }
        let lo = cell_of(&[center[0] - r, center[1] - r, center[2] - r], self.cell_size);
        let hi = cell_of(&[center[0] + r, center[1] + r, center[2] + r], self.cell_size);
        let span: i128 = (0..3).map(|a| (hi[a] - lo[a] + 1) as i128).product();
        let mut out = Vec::new();
        let test = |idx: &[usize], out: &mut Vec<usize>| {
            for &i in idx {
                if within(&self.positions[i], &center, r) {
                    out.push(i);
                }
            }
        };
        if span > self.cells.len() as i128 {
            for (cell, idx) in &self.cells {
                if (0..3).all(|a| lo[a] <= cell[a] && cell[a] <= hi[a]) {
                    test(idx, &mut out);
                }
            }
        } else {
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        if let Some(idx) = self.cells.get(&[x, y, z]) {
                            test(idx, &mut out);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Smallest radius `r0 + k·step` (k ≥ 0) whose closed ball around
    /// `center` captures at least one splat.
    pub fn roi_members(&self, center: [f64; 3], r0: f64, step: f64) -> Result<RoiResult, SceneError> {
        if self.positions.is_empty() {
            return Err(SceneError::NoGaussians);
        }
        if !(r0 > 0.0) || !(step > 0.0) {
            return Err(SceneError::Invalid(format!("radius {r0} and step {step} must be positive")));
        }
        if center.iter().any(|v| !v.is_finite()) {
            return Err(SceneError::Invalid("ROI center is not finite".into()));
        }
        // no splat is closer than the bounding box, so skip radii that cannot reach it
        let gap = self.bounds.distance_to(center);
        let mut k = if gap > r0 { (((gap - r0) / step).floor() as u64).saturating_sub(1) } else { 0 };
        loop {
            let radius = r0 + k as f64 * step;
            let members = self.radius_query(center, radius);
            if !members.is_empty() {
                return Ok(RoiResult { members, radius, steps: k });
            }
            k += 1;
        }
    }
}

fn cell_of(p: &[f64; 3], cell_size: f64) -> [i64; 3] {
    [
        (p[0] / cell_size).floor() as i64,
        (p[1] / cell_size).floor() as i64,
        (p[2] / cell_size).floor() as i64,
    ]
}

#[inline]
fn within(p: &[f64; 3], c: &[f64; 3], r: f64) -> bool {
    let dx = p[0] - c[0];
    let dy = p[1] - c[1];
    let dz = p[2] - c[2];
    dx * dx + dy * dy + dz * dz <= r * r
}

/// Linear-scan reference for [`SpatialGrid::radius_query`].
pub fn brute_force_radius(points: &[[f64; 3]], center: [f64; 3], r: f64) -> Vec<usize> {
    if !(r > 0.0) {
        return Vec::new();
    }
    (0..points.len()).filter(|&i| within(&points[i], &center, r)).collect()
}

/// [`SpatialGrid::roi_members`] over a freshly built grid with the default
/// cell size.
pub fn roi_members(scene: &GaussianScene, center: [f64; 3], r0: f64, step: f64) -> Result<RoiResult, SceneError> {
    SpatialGrid::new(scene, DEFAULT_CELL_SIZE).roi_members(center, r0, step)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::scene_from_points;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_ball_boundaries() {
        let g = SpatialGrid::from_points(&[[0.10, 0.0, 0.0], [0.151, 0.0, 0.0]], 0.15);
        assert_eq!(g.radius_query([0.0; 3], 0.15), vec![0]);
    }

    #[test]
    fn every_index_in_exactly_one_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..300).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..1.0)]).collect();
        let g = SpatialGrid::from_points(&pts, 0.3);
        let mut seen = vec![0; pts.len()];
        for (cell, idx) in &g.cells {
            for &i in idx {
                seen[i] += 1;
                assert_eq!(*cell, g.cell_of(&pts[i]));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn grid_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 3]> = (0..1000).map(|_| [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0), rng.gen_range(0.0..3.0)]).collect();
        for cell in [0.05, 0.15, 0.7, 5.0] {
            let g = SpatialGrid::from_points(&pts, cell);
            for _ in 0..50 {
                let c = [rng.gen_range(-1.0..5.0), rng.gen_range(-1.0..5.0), rng.gen_range(-1.0..4.0)];
                let r = rng.gen_range(0.01..2.0);
                assert_eq!(g.radius_query(c, r), brute_force_radius(&pts, c, r));
            }
        }
    }

    #[test]
    fn roi_first_pass() {
        let s = scene_from_points(&[[0.10, 0.0, 0.0], [1.0, 1.0, 1.0]], 2);
        let r = roi_members(&s, [0.0; 3], 0.15, 0.15).unwrap();
        assert_eq!((r.members, r.radius, r.steps), (vec![0], 0.15, 0));
    }

    #[test]
    fn roi_grows_once() {
        let s = scene_from_points(&[[0.20, 0.0, 0.0], [1.0, 1.0, 1.0]], 2);
        let r = roi_members(&s, [0.0; 3], 0.15, 0.15).unwrap();
        assert_eq!(r.members, vec![0]);
        assert_eq!(r.steps, 1);
        assert!((r.radius - 0.30).abs() < 1e-15);
    }

    #[test]
    fn roi_far_away_center_still_terminates() {
        let s = scene_from_points(&[[0.0, 0.0, 0.0]], 2);
        let r = roi_members(&s, [100.0, 0.0, 0.0], 0.15, 0.15).unwrap();
        assert_eq!(r.members, vec![0]);
        assert!(r.radius >= 100.0 && r.radius < 100.15 + 1e-9);
    }

    #[test]
    fn roi_requires_gaussians() {
        let s = scene_from_points(&[], 2);
        assert!(matches!(roi_members(&s, [0.0; 3], 0.15, 0.15), Err(SceneError::NoGaussians)));
    }
}
