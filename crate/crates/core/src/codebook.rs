//! k-means codebooks under the Euclidean metric.
//!
//! Fitting runs Lloyd iterations from a k-means++ initialization, in `f64`,
//! and stores the final centroids as `f32`. Ties in assignment go to the lowest
//! centroid index. The assignment step runs in parallel over points; every
//! reduction is sequential so results do not depend on the thread count.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::types::FeatureMatrix;

pub const CODEBOOK_MAGIC: &[u8; 4] = b"MSKB";
pub const CODEBOOK_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once no centroid moves by more than this.
    pub tol: f64,
    /// Independent initializations; the lowest-inertia fit wins.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-4,
            restarts: 1,
        }
    }
}

/// Per-fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Inertia after each assignment step, against the centroids of that iteration.
    pub inertia_history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Codebook {
    centroids: FeatureMatrix,
    centroids_f64: Vec<f64>,
    train_seed: u64,
    inertia: Option<f64>,
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.centroids == other.centroids && self.train_seed == other.train_seed
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Nearest centroid (lowest index on ties) and its squared distance.
#[inline]
fn nearest(point: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(d).enumerate() {
        let dist = sq_dist(point, c);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

fn assign_all(data: &[f64], centroids: &[f64], d: usize) -> Vec<(usize, f64)> {
    data.par_chunks_exact(d).map(|p| nearest(p, centroids, d)).collect()
}

fn kmeans_plus_plus<R: Rng>(data: &[f64], d: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = data.len() / d;
    let point = |i: usize| &data[i * d..(i + 1) * d];
    let mut centroids = Vec::with_capacity(k * d);
    centroids.extend_from_slice(point(rng.random_range(0..n)));
    let mut closest: Vec<f64> = data.par_chunks_exact(d).map(|p| sq_dist(p, &centroids[..d])).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Fewer distinct points than k: every remaining choice is a duplicate.
            rng.random_range(0..n)
        };
        let c = point(pick).to_vec();
        closest
            .par_iter_mut()
            .zip(data.par_chunks_exact(d))
            .for_each(|(best, p)| *best = best.min(sq_dist(p, &c)));
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn lloyd(data: &[f64], d: usize, k: usize, seed: u64, params: &KMeansParams) -> (Vec<f64>, FitTrace) {
    let n = data.len() / d;
    let mut rng = seeded(seed);
    let mut centroids = kmeans_plus_plus(data, d, k, &mut rng);
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..params.max_iters {
        let assigned = assign_all(data, &centroids, d);
        history.push(assigned.iter().map(|a| a.1).sum());
        let mut labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let mut dists: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }

        // Empty clusters take over the point farthest from its centroid.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let mut far: Option<usize> = None;
            for i in 0..n {
                if counts[labels[i]] > 1 && far.is_none_or(|f| dists[i] > dists[f]) {
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = j;
                dists[i] = 0.0;
                counts[j] = 1;
            }
        }

        let mut sums = vec![0.0f64; k * d];
        for (i, &l) in labels.iter().enumerate() {
            let row = &data[i * d..(i + 1) * d];
            for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(row) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            let new: Vec<f64> = sums[j * d..(j + 1) * d].iter().map(|s| s * inv).collect();
            shift = shift.max(sq_dist(&new, &centroids[j * d..(j + 1) * d]).sqrt());
            centroids[j * d..(j + 1) * d].copy_from_slice(&new);
        }
        if shift <= params.tol {
            converged = true;
            break;
        }
    }
    (
        centroids,
        FitTrace {
            inertia_history: history,
            converged,
        },
    )
}

/// Fits `k` centroids to the rows of `data`.
pub fn fit_kmeans(data: &FeatureMatrix, k: usize, seed: u64, params: &KMeansParams) -> Result<Codebook> {
    fit_kmeans_traced(data, k, seed, params).map(|(cb, _)| cb)
}

/// [`fit_kmeans`] plus the trace of the winning restart.
pub fn fit_kmeans_traced(
    data: &FeatureMatrix,
    k: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<(Codebook, FitTrace)> {
    let n = data.rows();
    if k == 0 || n < k {
        return Err(Error::Size(format!("k-means needs at least k = {k} points, got {n}")));
    }
    if !data.all_finite() {
        return Err(Error::Data("k-means input contains non-finite values".into()));
    }
    let d = data.dim();
    let flat: Vec<f64> = data.as_slice().iter().map(|&v| v as f64).collect();
    let mut best: Option<(Codebook, FitTrace)> = None;
    for restart in 0..params.restarts.max(1) {
        let run_seed = if restart == 0 { seed } else { derive_seed(seed, restart as u64) };
        let (centroids, trace) = lloyd(&flat, d, k, run_seed, params);
        let centroids = FeatureMatrix::new(d, centroids.iter().map(|&v| v as f32).collect())?;
        let mut cb = Codebook::from_centroids(centroids, seed)?;
        let inertia = assign_all(&flat, &cb.centroids_f64, d).iter().map(|a| a.1).sum();
        cb.inertia = Some(inertia);
        if best.as_ref().is_none_or(|(b, _)| inertia < b.inertia.unwrap()) {
            best = Some((cb, trace));
        }
    }
    Ok(best.unwrap())
}

impl Codebook {
    pub fn from_centroids(centroids: FeatureMatrix, train_seed: u64) -> Result<Self> {
        if centroids.is_empty() || !centroids.all_finite() {
            return Err(Error::Data("codebook centroids must be non-empty and finite".into()));
        }
        let centroids_f64 = centroids.as_slice().iter().map(|&v| v as f64).collect();
        Ok(Self {
            centroids,
            centroids_f64,
            train_seed,
            inertia: None,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn centroids(&self) -> &FeatureMatrix {
        &self.centroids
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    /// Sum of squared distances of the training points to their centroids;
    /// `None` for codebooks read from disk.
    pub fn inertia(&self) -> Option<f64> {
        self.inertia
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn assign(&self, v: &[f32]) -> Result<usize> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector of width {} against a codebook of width {}",
                v.len(),
                self.dim()
            )));
        }
        let p: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        Ok(nearest(&p, &self.centroids_f64, self.dim()).0)
    }

    /// Assigns every row of `data`.
    pub fn assign_rows(&self, data: &FeatureMatrix) -> Result<Vec<usize>> {
        if data.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "rows of width {} against a codebook of width {}",
                data.dim(),
                self.dim()
            )));
        }
        let d = self.dim();
        Ok(data
            .as_slice()
            .par_chunks_exact(d)
            .map(|row| {
                let p: Vec<f64> = row.iter().map(|&x| x as f64).collect();
                nearest(&p, &self.centroids_f64, d).0
            })
            .collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CODEBOOK_MAGIC);
        w.u16(CODEBOOK_VERSION);
        w.u32(self.k() as u32);
        w.u32(self.dim() as u32);
        w.u64(self.train_seed);
        w.f32s(self.centroids.as_slice());
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        Self::decode_from(&mut r).and_then(|cb| r.finish().map(|_| cb))
    }

    pub(crate) fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.magic(CODEBOOK_MAGIC)?;
        r.version(CODEBOOK_VERSION)?;
        let k = r.u32("k")? as usize;
        let d = r.u32("dimension")? as usize;
        if k == 0 || d == 0 {
            return Err(r.error("k and dimension must be positive"));
        }
        let seed = r.u64("seed")?;
        let data = r.finite_f32s(k * d, "centroids")?;
        Self::from_centroids(FeatureMatrix::new(d, data)?, seed)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::decode(&bytes).map_err(|e| e.in_file(path))
    }
}
