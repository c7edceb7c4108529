//! Per-patch feature extraction and the feature cache.

mod cache;
#[cfg(feature = "onnx")]
mod onnx;
mod test_backend;

use rayon::prelude::*;

pub use cache::{decode_cache, encode_cache, read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
#[cfg(feature = "onnx")]
pub use onnx::{load_cnn_backend, OnnxBackend, IMAGENET_MEAN, IMAGENET_STD};
pub use test_backend::TestBackend;

use crate::error::{Error, Result};
use crate::slide::{Patch, PatchTriple};
use crate::types::{FeatureMatrix, Label, Scale, FEATURE_DIM};

/// Maps one 256×256 patch to a 512-wide vector. Implementations must be pure
/// functions of the pixels.
pub trait FeatureBackend: Send + Sync {
    fn embed(&self, patch: &Patch) -> std::result::Result<Vec<f32>, String>;
}

impl<B: FeatureBackend + ?Sized> FeatureBackend for Box<B> {
    fn embed(&self, patch: &Patch) -> std::result::Result<Vec<f32>, String> {
        (**self).embed(patch)
    }
}

/// Feature vectors of one slide, one `nP × 512` matrix per scale. Row `i` of
/// every matrix comes from the same patch triple.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    pub slide_id: String,
    pub label: Label,
    scales: [FeatureMatrix; 3],
}

impl FeatureBag {
    pub fn new(slide_id: impl Into<String>, label: Label, scales: [FeatureMatrix; 3]) -> Result<Self> {
        let slide_id = slide_id.into();
        let rows = scales[0].rows();
        for m in &scales {
            if m.dim() != FEATURE_DIM {
                return Err(Error::Dimension(format!(
                    "bag `{slide_id}` has feature width {}, expected {FEATURE_DIM}",
                    m.dim()
                )));
            }
            if m.rows() != rows {
                return Err(Error::Dimension(format!(
                    "bag `{slide_id}` has {} and {} rows across scales",
                    rows,
                    m.rows()
                )));
            }
            if !m.all_finite() {
                return Err(Error::Data(format!("bag `{slide_id}` holds non-finite features")));
            }
        }
        Ok(Self { slide_id, label, scales })
    }

    /// Patch triples in the bag (nP).
    pub fn len(&self) -> usize {
        self.scales[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scale(&self, scale: Scale) -> &FeatureMatrix {
        &self.scales[scale.index()]
    }

    pub fn scales(&self) -> &[FeatureMatrix; 3] {
        &self.scales
    }

    /// Same bag restricted to the given patch-triple indices, applied to all scales.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            slide_id: self.slide_id.clone(),
            label: self.label,
            scales: [
                self.scales[0].select_rows(indices),
                self.scales[1].select_rows(indices),
                self.scales[2].select_rows(indices),
            ],
        }
    }
}

/// Runs `backend` over every patch of every triple. Row order follows `triples`.
pub fn extract_features<B: FeatureBackend + ?Sized>(
    backend: &B,
    slide_id: &str,
    label: Label,
    triples: &[PatchTriple],
) -> Result<FeatureBag> {
    if triples.is_empty() {
        return Err(Error::Size(format!("slide `{slide_id}` has no patches")));
    }
    let rows: Vec<[Vec<f32>; 3]> = triples
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let embed = |p: &Patch| -> Result<Vec<f32>> {
                let v = backend.embed(p).map_err(|message| Error::Backend {
                    patch_index: i,
                    message,
                })?;
                if v.len() != FEATURE_DIM || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Backend {
                        patch_index: i,
                        message: format!("backend returned {} values or non-finite output", v.len()),
                    });
                }
                Ok(v)
            };
            Ok([embed(&t.patches[0])?, embed(&t.patches[1])?, embed(&t.patches[2])?])
        })
        .collect::<Result<_>>()?;
    let matrix = |s: usize| FeatureMatrix::from_rows(FEATURE_DIM, rows.iter().map(|r| &r[s]));
    FeatureBag::new(slide_id, label, [matrix(0)?, matrix(1)?, matrix(2)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide::{sample_bag, SlideImage};

    struct Failing;

    impl FeatureBackend for Failing {
        fn embed(&self, patch: &Patch) -> std::result::Result<Vec<f32>, String> {
            if patch.pixel(0, 0)[0] > 100 {
                Err("boom".into())
            } else {
                Ok(vec![0.0; FEATURE_DIM])
            }
        }
    }

    fn triples(n: usize) -> Vec<PatchTriple> {
        let slide = SlideImage::from_fn("s", 1024, 1024, |x, y| [(x ^ y) as u8 / 2, 40, 60]);
        sample_bag(&slide, n, &mut crate::rng::seeded(2), 100).unwrap()
    }

    #[test]
    fn one_triple_gives_three_single_row_matrices() {
        let bag = extract_features(&TestBackend::new(1), "s", Label::Fn, &triples(1)).unwrap();
        assert_eq!(bag.len(), 1);
        for m in bag.scales() {
            assert_eq!((m.rows(), m.dim()), (1, FEATURE_DIM));
        }
    }

    #[test]
    fn identical_patches_give_identical_rows() {
        let mut t = triples(2);
        t[1] = t[0].clone();
        let bag = extract_features(&TestBackend::new(1), "s", Label::Pc, &t).unwrap();
        for m in bag.scales() {
            assert_eq!(m.row(0), m.row(1));
        }
    }

    #[test]
    fn backend_failure_names_the_patch() {
        let mut t = triples(3);
        t[2].patches[1] = Patch::filled([200, 0, 0]);
        match extract_features(&Failing, "s", Label::Fn, &t) {
            Err(Error::Backend { patch_index, message }) => {
                assert_eq!(patch_index, 2);
                assert_eq!(message, "boom");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_triples_are_rejected() {
        assert!(matches!(
            extract_features(&TestBackend::new(1), "s", Label::Fn, &[]),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn mismatched_rows_are_rejected() {
        let a = FeatureMatrix::zeros(2, FEATURE_DIM);
        let b = FeatureMatrix::zeros(3, FEATURE_DIM);
        assert!(FeatureBag::new("x", Label::Fn, [a.clone(), b, a]).is_err());
    }
}
