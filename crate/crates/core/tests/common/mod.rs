//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use msmil::features::FeatureBag;
use msmil::{FeatureMatrix, Label, FEATURE_DIM};

/// Smallest within-cluster sum of squares over every partition of `points`
/// into exactly `k` non-empty clusters.
pub fn exhaustive_kmeans(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        if counts.iter().all(|&c| c > 0) {
            let sse: f64 = points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| {
                    p.iter()
                        .zip(&sums[l])
                        .map(|(v, s)| (v - s / counts[l] as f64).powi(2))
                        .sum::<f64>()
                })
                .sum();
            best = best.min(sse);
        }
        // Next assignment in base k.
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

/// Largest KKT violation of a soft-margin dual solution with
/// `f(x_i) = Σ_j α_j y_j K_ij + b`.
pub fn kkt_residual(kernel: &[f64], y: &[f64], alpha: &[f64], b: f64, c: f64) -> f64 {
    let n = y.len();
    let eps = 1e-9 * c;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| alpha[j] * y[j] * kernel[i * n + j]).sum::<f64>() + b;
        let m = y[i] * f;
        let r = if alpha[i] <= eps {
            (1.0 - m).max(0.0)
        } else if alpha[i] >= c - eps {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(r);
    }
    let balance: f64 = alpha.iter().zip(y).map(|(a, y)| a * y).sum();
    worst.max(balance.abs())
}

/// Fraction of slides whose mean scale-1 feature is nearer to their own
/// class's mean-of-means than to the other class's.
pub fn nearest_centroid_accuracy(bags: &[FeatureBag]) -> f64 {
    let mean = |m: &FeatureMatrix| -> Vec<f64> {
        let mut acc = vec![0.0; FEATURE_DIM];
        for r in m.iter_rows() {
            for (a, v) in acc.iter_mut().zip(r) {
                *a += *v as f64;
            }
        }
        acc.iter().map(|a| a / m.rows() as f64).collect()
    };
    let means: Vec<(Label, Vec<f64>)> = bags.iter().map(|b| (b.label, mean(&b.scales()[0]))).collect();
    let centroid = |l: Label| -> Vec<f64> {
        let members: Vec<&Vec<f64>> = means.iter().filter(|m| m.0 == l).map(|m| &m.1).collect();
        (0..FEATURE_DIM)
            .map(|c| members.iter().map(|m| m[c]).sum::<f64>() / members.len() as f64)
            .collect()
    };
    let (cf, cp) = (centroid(Label::Fn), centroid(Label::Pc));
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let correct = means
        .iter()
        .filter(|(l, m)| {
            let predicted = if dist(m, &cp) < dist(m, &cf) { Label::Pc } else { Label::Fn };
            predicted == *l
        })
        .count();
    correct as f64 / bags.len() as f64
}

/// Bag of `n` rows per scale drawn from a simple LCG, values in [0, 1).
pub fn noise_bag(id: &str, label: Label, n: usize, seed: u64) -> FeatureBag {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 40) as f32 / (1u64 << 24) as f32
    };
    let mats = std::array::from_fn(|_| {
        FeatureMatrix::new(FEATURE_DIM, (0..n * FEATURE_DIM).map(|_| next()).collect()).unwrap()
    });
    FeatureBag::new(id, label, mats).unwrap()
}
