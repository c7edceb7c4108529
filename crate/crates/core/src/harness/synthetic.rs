//! Synthetic feature bags with controllable per-scale class signal.
//!
//! Every scale has its own random `latent_dim`-dimensional subspace of the
//! 512-wide feature space, holding a mixture of `components` Gaussian
//! clusters whose means sit about `component_spread · σ` apart, with
//! isotropic within-cluster deviation `σ`. A patch picks its cluster
//! uniformly and independently of the class. On a `Signal` scale a patch is
//! informative with probability `fraction`; informative patches are shifted
//! by `±separation · σ / 2` along a per-cluster unit direction (− for FN,
//! + for PC), so class-conditional means are `separation · σ` apart. On a
//! `Noise` scale the distribution is the same for both classes.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::FeatureBag;
use crate::rng::{derive_seed, seeded, ChaCha8Rng};
use crate::types::{FeatureMatrix, Label, FEATURE_DIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleSignal {
    Noise,
    Signal { separation: f64, fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub slides_per_class: usize,
    pub n_patches: usize,
    /// Scale order 1, 1/2, 1/4.
    pub scales: [ScaleSignal; 3],
    pub components: usize,
    pub component_spread: f64,
    pub latent_dim: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            slides_per_class: 20,
            n_patches: 50,
            scales: [ScaleSignal::Noise; 3],
            components: 4,
            component_spread: 6.0,
            latent_dim: 16,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub const PRESETS: [&'static str; 5] = ["scale1-signal", "all-signal", "all-noise", "probe-mc", "probe-mm"];

    /// Named configurations:
    ///
    /// * `scale1-signal`: 10σ signal on every scale-1 patch, other scales noise;
    /// * `all-signal`: 10σ signal on every patch of every scale;
    /// * `all-noise`: no class signal anywhere;
    /// * `probe-mc`: 2σ signal on 30% of scale-1 patches, other scales noise;
    /// * `probe-mm`: as `probe-mc` plus an independent 2σ signal on 30% of scale-1/4 patches.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let strong = ScaleSignal::Signal {
            separation: 10.0,
            fraction: 1.0,
        };
        let weak = ScaleSignal::Signal {
            separation: 2.0,
            fraction: 0.3,
        };
        let noise = ScaleSignal::Noise;
        let scales = match name {
            "scale1-signal" => [strong, noise, noise],
            "all-signal" => [strong, strong, strong],
            "all-noise" => [noise, noise, noise],
            "probe-mc" => [weak, noise, noise],
            "probe-mm" => [weak, noise, weak],
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset `{name}` (one of {})",
                    Self::PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            scales,
            seed,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.slides_per_class == 0 || self.n_patches == 0 || self.components == 0 {
            return Err(Error::Config("slides, patches and components must be positive".into()));
        }
        if self.latent_dim == 0 || self.latent_dim > FEATURE_DIM {
            return Err(Error::Config(format!("latent_dim must lie in 1..={FEATURE_DIM}")));
        }
        if !(self.sigma > 0.0 && self.component_spread >= 0.0) {
            return Err(Error::Config("sigma must be positive and spread non-negative".into()));
        }
        for s in &self.scales {
            if let ScaleSignal::Signal { separation, fraction } = *s {
                if !(separation >= 0.0 && (0.0..=1.0).contains(&fraction)) {
                    return Err(Error::Config("separation must be ≥ 0 and fraction in [0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}

/// Generative parameters of one scale; means and directions are in latent
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleModel {
    pub means: Vec<Vec<f64>>,
    /// Unit class-shift direction per cluster.
    pub directions: Vec<Vec<f64>>,
    /// Orthonormal basis of the latent subspace, `latent_dim` vectors of 512.
    pub basis: Vec<Vec<f64>>,
}

impl ScaleModel {
    /// Maps latent coordinates into feature space.
    pub fn embed(&self, latent: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; FEATURE_DIM];
        for (z, b) in latent.iter().zip(&self.basis) {
            x.iter_mut().zip(b).for_each(|(v, u)| *v += z * u);
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub bags: Vec<FeatureBag>,
    pub models: [ScaleModel; 3],
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

fn scale_model(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> ScaleModel {
    let radius = spec.component_spread * spec.sigma / std::f64::consts::SQRT_2;
    let means = (0..spec.components)
        .map(|_| {
            let mut v = gaussian_vec(rng, spec.latent_dim);
            normalize(&mut v);
            v.iter().map(|x| x * radius).collect()
        })
        .collect();
    let directions = (0..spec.components)
        .map(|_| {
            let mut v = gaussian_vec(rng, spec.latent_dim);
            normalize(&mut v);
            v
        })
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(spec.latent_dim);
    while basis.len() < spec.latent_dim {
        let mut v = gaussian_vec(rng, FEATURE_DIM);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        normalize(&mut v);
        basis.push(v);
    }
    ScaleModel {
        means,
        directions,
        basis,
    }
}

/// Slides alternate FN, PC, FN, ... with ids `syn_0000`, `syn_0001`, ...
/// Output depends only on `spec`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let models: [ScaleModel; 3] = std::array::from_fn(|s| scale_model(spec, &mut seeded(derive_seed(spec.seed, s as u64))));
    let n_slides = 2 * spec.slides_per_class;
    let bags = (0..n_slides)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Fn } else { Label::Pc };
            let mut rng = seeded(derive_seed(spec.seed, 1_000_000 + i as u64));
            let mats: [FeatureMatrix; 3] = std::array::from_fn(|s| {
                let model = &models[s];
                let mut data = Vec::with_capacity(spec.n_patches * FEATURE_DIM);
                for _ in 0..spec.n_patches {
                    let m = rng.random_range(0..spec.components);
                    let mut x = model.means[m].clone();
                    if let ScaleSignal::Signal { separation, fraction } = spec.scales[s] {
                        if rng.random::<f64>() < fraction {
                            let shift = label.sign() * separation * spec.sigma / 2.0;
                            x.iter_mut().zip(&model.directions[m]).for_each(|(v, u)| *v += shift * u);
                        }
                    }
                    for v in x.iter_mut() {
                        *v += rng.sample::<f64, _>(StandardNormal) * spec.sigma;
                    }
                    data.extend(model.embed(&x).iter().map(|&v| v as f32));
                }
                FeatureMatrix::new(FEATURE_DIM, data).expect("synthetic width")
            });
            FeatureBag::new(format!("syn_{i:04}"), label, mats)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset { bags, models })
}
