//! CNN feature extraction from an ONNX graph, run with `tract`.

use std::path::Path;

use tract_onnx::prelude::*;

use super::FeatureBackend;
use crate::error::{Error, Result};
use crate::slide::Patch;
use crate::types::{FEATURE_DIM, PATCH_SIZE};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

const FALLBACK_SIZE: usize = 224;

type Plan = Arc<TypedSimplePlan>;

/// ImageNet-normalized NCHW input, 512-wide output taken as-is.
pub struct OnnxBackend {
    plan: Plan,
    input_size: usize,
}

impl std::fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackend").field("input_size", &self.input_size).finish()
    }
}

fn shape_error(expected: &str, found: impl std::fmt::Display) -> Error {
    Error::ModelShape {
        expected: expected.to_owned(),
        found: found.to_string(),
    }
}

fn build_plan(model: &InferenceModel, size: usize) -> TractResult<(Plan, TVec<usize>)> {
    let typed = model
        .clone()
        .with_input_fact(0, f32::fact([1, 3, size, size]).into())?
        .into_optimized()?;
    let out = typed.output_fact(0)?.shape.as_concrete().map(|s| s.iter().copied().collect());
    let out: TVec<usize> = out.ok_or_else(|| tract_onnx::tract_core::internal::format_err!("symbolic output shape"))?;
    Ok((typed.into_runnable()?, out))
}

/// Loads a model taking one `1×3×S×S` input (S = 256 preferred, else 224)
/// and producing 512 outputs.
pub fn load_cnn_backend(model_file: &Path) -> Result<OnnxBackend> {
    let model = tract_onnx::onnx()
        .model_for_path(model_file)
        .map_err(|e| Error::Data(format!("cannot parse ONNX model: {e}")).in_file(model_file))?;
    if model.inputs.len() != 1 || model.outputs.len() != 1 {
        return Err(shape_error(
            "1 input and 1 output",
            format!("{} inputs and {} outputs", model.inputs.len(), model.outputs.len()),
        )
        .in_file(model_file));
    }
    let declared = model
        .input_fact(0)
        .map(|f| format!("{f:?}"))
        .unwrap_or_else(|_| "unknown input".into());
    let mut last_err = None;
    for size in [PATCH_SIZE, FALLBACK_SIZE] {
        match build_plan(&model, size) {
            Ok((plan, out)) => {
                let width: usize = out.iter().product();
                if width != FEATURE_DIM {
                    return Err(shape_error(
                        &format!("{FEATURE_DIM}-wide output"),
                        format!("output shape {out:?} ({width} values)"),
                    )
                    .in_file(model_file));
                }
                return Ok(OnnxBackend { plan, input_size: size });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(shape_error(
        "input 1×3×256×256 or 1×3×224×224",
        format!("{declared} ({})", last_err.map(|e| e.to_string()).unwrap_or_default()),
    )
    .in_file(model_file))
}

impl OnnxBackend {
    pub fn input_size(&self) -> usize {
        self.input_size
    }

    fn input_tensor(&self, patch: &Patch) -> TractResult<Tensor> {
        let bytes = patch.as_bytes();
        let plane = PATCH_SIZE * PATCH_SIZE;
        let mut planes = vec![0f32; 3 * plane];
        for (i, px) in bytes.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planes[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        let size = self.input_size;
        let mut data = Vec::with_capacity(3 * size * size);
        for c in 0..3 {
            let src = &planes[c * plane..(c + 1) * plane];
            let resized = if size == PATCH_SIZE {
                src.to_vec()
            } else {
                area_resize(src, PATCH_SIZE, size)
            };
            data.extend(resized.into_iter().map(|v| (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]));
        }
        Tensor::from_shape(&[1, 3, size, size], &data)
    }
}

impl FeatureBackend for OnnxBackend {
    fn embed(&self, patch: &Patch) -> std::result::Result<Vec<f32>, String> {
        let run = || -> TractResult<Vec<f32>> {
            let input = self.input_tensor(patch)?;
            let out = self.plan.run(tvec!(input.into()))?;
            Ok(out[0].try_as_plain_ram()?.as_slice::<f32>()?.to_vec())
        };
        run().map_err(|e| e.to_string())
    }
}

/// Box-filter resize of a square `src × src` plane to `dst × dst`, weighting
/// source pixels by their overlap with each output cell.
pub(crate) fn area_resize(plane: &[f32], src: usize, dst: usize) -> Vec<f32> {
    let weights = overlap_weights(src, dst);
    let mut rows = vec![0f32; src * dst];
    for y in 0..src {
        for (ox, taps) in weights.iter().enumerate() {
            rows[y * dst + ox] = taps.iter().map(|&(i, w)| plane[y * src + i] * w).sum();
        }
    }
    let mut out = vec![0f32; dst * dst];
    for (oy, taps) in weights.iter().enumerate() {
        for ox in 0..dst {
            out[oy * dst + ox] = taps.iter().map(|&(i, w)| rows[i * dst + ox] * w).sum();
        }
    }
    out
}

fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * ratio, (o + 1) as f64 * ratio);
            (lo.floor() as usize..(hi.ceil() as usize).min(src))
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, (overlap / ratio) as f32))
                })
                .collect()
        })
        .collect()
}
