use super::FeatureBackend;
use crate::rng::splitmix64;
use crate::slide::Patch;
use crate::types::{FEATURE_DIM, PATCH_SIZE};

/// Deterministic stand-in for a CNN.
///
/// The patch is split into a `g × g` grid of square cells (default `g = 8`,
/// cells of 32×32 pixels). The statistics vector is
///
/// ```text
/// s = [1, m(0,0,R), v(0,0,R), m(0,0,G), v(0,0,G), m(0,0,B), v(0,0,B), m(0,1,R), ...]
/// ```
///
/// with cells in row-major order, `m` the channel mean divided by 255 and `v`
/// the population variance divided by 255². With `S = 1 + 6g²` the output is
/// `out[i] = Σ_j W[i][j] · s[j]` where
///
/// ```text
/// W[i][j] = (2 · (splitmix64(seed + splitmix64(i·S + j)) >> 11) / 2^53 - 1) / sqrt(S)
/// ```
///
/// (wrapping addition, accumulation in `f64`, final cast to `f32`).
#[derive(Debug, Clone)]
pub struct TestBackend {
    seed: u64,
    grid: usize,
    weights: Vec<f64>,
}

impl TestBackend {
    pub fn new(seed: u64) -> Self {
        Self::with_grid(seed, 8)
    }

    /// `grid` must divide 256.
    pub fn with_grid(seed: u64, grid: usize) -> Self {
        assert!(grid > 0 && PATCH_SIZE % grid == 0, "grid {grid} does not divide {PATCH_SIZE}");
        let width = Self::stats_width_for(grid);
        let scale = (width as f64).sqrt().recip();
        let weights = (0..FEATURE_DIM * width)
            .map(|idx| {
                let z = splitmix64(seed.wrapping_add(splitmix64(idx as u64)));
                let u = (z >> 11) as f64 / (1u64 << 53) as f64;
                (2.0 * u - 1.0) * scale
            })
            .collect();
        Self { seed, grid, weights }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stats_width_for(grid: usize) -> usize {
        1 + 6 * grid * grid
    }

    pub fn stats_width(&self) -> usize {
        Self::stats_width_for(self.grid)
    }

    /// The statistics vector `s` of a patch.
    pub fn statistics(&self, patch: &Patch) -> Vec<f64> {
        let cell = PATCH_SIZE / self.grid;
        let n = (cell * cell) as f64;
        let mut stats = Vec::with_capacity(self.stats_width());
        stats.push(1.0);
        let bytes = patch.as_bytes();
        for cy in 0..self.grid {
            for cx in 0..self.grid {
                let mut sum = [0u64; 3];
                let mut sq = [0u64; 3];
                for y in cy * cell..(cy + 1) * cell {
                    let row = &bytes[(y * PATCH_SIZE + cx * cell) * 3..(y * PATCH_SIZE + (cx + 1) * cell) * 3];
                    for px in row.chunks_exact(3) {
                        for c in 0..3 {
                            let v = px[c] as u64;
                            sum[c] += v;
                            sq[c] += v * v;
                        }
                    }
                }
                for c in 0..3 {
                    let mean = sum[c] as f64 / n;
                    let var = sq[c] as f64 / n - mean * mean;
                    stats.push(mean / 255.0);
                    stats.push(var.max(0.0) / (255.0 * 255.0));
                }
            }
        }
        stats
    }

    /// Applies the projection to a statistics vector.
    pub fn project(&self, stats: &[f64]) -> Vec<f32> {
        let width = self.stats_width();
        self.weights
            .chunks_exact(width)
            .map(|w| w.iter().zip(stats).map(|(a, b)| a * b).sum::<f64>() as f32)
            .collect()
    }
}

impl FeatureBackend for TestBackend {
    fn embed(&self, patch: &Patch) -> Result<Vec<f32>, String> {
        Ok(self.project(&self.statistics(patch)))
    }
}
