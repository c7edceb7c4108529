//! Slide rasters and multi-scale patch sampling.
//!
//! A sample starts from a uniformly drawn scale-1 origin. The 256×256 scale-1
//! patch must pass the green-channel tissue check; the 512 and 1024 pixel
//! regions for scales 1/2 and 1/4 are centered on it and, when they stick out
//! of the slide, shifted toward the slide center by a quarter of their extent
//! per step. Every region is area-averaged down to 256×256.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{Label, Scale, PATCH_SIZE, SCALES};

/// Green-channel mean below which a scale-1 patch counts as tissue.
pub const TISSUE_GREEN_THRESHOLD: u32 = 190;

/// Default patch triples per slide.
pub const DEFAULT_PATCHES_PER_SLIDE: usize = 100;

/// Multiplied by nP for the default `max_attempts` of [`sample_bag`].
pub const DEFAULT_ATTEMPTS_PER_PATCH: usize = 1000;

/// 8-bit RGB raster, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideImage {
    pub id: String,
    pub label: Option<Label>,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl SlideImage {
    pub fn new(id: impl Into<String>, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "{} bytes cannot hold a {width}×{height} RGB raster",
                pixels.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            label: None,
            width,
            height,
            pixels,
        })
    }

    pub fn filled(id: impl Into<String>, width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            id: id.into(),
            label: None,
            width,
            height,
            pixels,
        }
    }

    pub fn from_fn(
        id: impl Into<String>,
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self {
            id: id.into(),
            label: None,
            width,
            height,
            pixels,
        }
    }

    pub fn with_label(mut self, label: Option<Label>) -> Self {
        self.label = label;
        self
    }

    /// Loads a PNG or TIFF file; the id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::from(e).in_file(path))?
            .to_rgb8();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "slide".to_owned());
        let (w, h) = img.dimensions();
        Self::new(id, w as usize, h as usize, img.into_raw())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn row(&self, y: usize, x0: usize, len: usize) -> &[u8] {
        let i = (y * self.width + x0) * 3;
        &self.pixels[i..i + len * 3]
    }
}

/// A 256×256 RGB block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pixels: Vec<u8>,
}

impl Patch {
    pub fn new(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != PATCH_SIZE * PATCH_SIZE * 3 {
            return Err(Error::Dimension(format!(
                "patch needs {} bytes, got {}",
                PATCH_SIZE * PATCH_SIZE * 3,
                pixels.len()
            )));
        }
        Ok(Self { pixels })
    }

    pub fn filled(rgb: [u8; 3]) -> Self {
        Self {
            pixels: rgb.iter().copied().cycle().take(PATCH_SIZE * PATCH_SIZE * 3).collect(),
        }
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE * 3);
        for y in 0..PATCH_SIZE {
            for x in 0..PATCH_SIZE {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self { pixels }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * PATCH_SIZE + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Interleaved RGB bytes, row-major.
    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            PATCH_SIZE as u32,
            PATCH_SIZE as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::from(e).in_file(path))
    }
}

/// Square source region at full resolution for one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchSpec {
    pub origin_x: usize,
    pub origin_y: usize,
    pub scale: Scale,
}

impl PatchSpec {
    pub fn extent(&self) -> usize {
        self.scale.extent()
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.origin_x + self.extent() <= width && self.origin_y + self.extent() <= height
    }
}

/// Three co-located patches, in scale order 1, 1/2, 1/4.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTriple {
    pub specs: [PatchSpec; 3],
    pub patches: [Patch; 3],
}

/// Uniform scale-1 origin: `x` in `[0, width-256]`, `y` in `[0, height-256]`.
pub fn sample_origin<R: Rng + ?Sized>(slide: &SlideImage, rng: &mut R) -> Result<(usize, usize)> {
    if slide.width < PATCH_SIZE || slide.height < PATCH_SIZE {
        return Err(Error::Dimension(format!(
            "slide `{}` is {}×{}, smaller than one {PATCH_SIZE}×{PATCH_SIZE} patch",
            slide.id, slide.width, slide.height
        )));
    }
    let x = rng.random_range(0..=slide.width - PATCH_SIZE);
    let y = rng.random_range(0..=slide.height - PATCH_SIZE);
    Ok((x, y))
}

/// True iff the mean green value is strictly below 190.
pub fn tissue_check(patch: &Patch) -> bool {
    let green: u64 = patch.pixels.iter().skip(1).step_by(3).map(|&g| g as u64).sum();
    green < TISSUE_GREEN_THRESHOLD as u64 * (PATCH_SIZE * PATCH_SIZE) as u64
}

/// Places one axis of a region of side `extent` centered on the scale-1 patch
/// at `origin`, then steps it toward the slide center by `extent / 4` until it
/// lies inside `[0, len)`.
fn place_axis(origin: usize, extent: usize, len: usize) -> usize {
    let step = (extent / 4) as i64;
    let mut start = origin as i64 - (extent / 2) as i64 + (PATCH_SIZE / 2) as i64;
    let (extent, len) = (extent as i64, len as i64);
    if start < 0 {
        while start < 0 {
            start += step;
        }
        // A full step can overshoot the far edge when the slide is barely larger than the region.
        start = start.min(len - extent);
    } else if start + extent > len {
        while start + extent > len {
            start -= step;
        }
        start = start.max(0);
    }
    start as usize
}

/// Scale 1, 1/2 and 1/4 regions for a scale-1 origin on a slide of `dims`.
pub fn build_multiscale_specs(origin: (usize, usize), dims: (usize, usize)) -> Result<[PatchSpec; 3]> {
    let (w, h) = dims;
    let largest = Scale::Quarter.extent();
    if w < largest || h < largest {
        return Err(Error::Dimension(format!(
            "slide {w}×{h} cannot hold a {largest}×{largest} scale-1/4 region"
        )));
    }
    if origin.0 + PATCH_SIZE > w || origin.1 + PATCH_SIZE > h {
        return Err(Error::Geometry(format!(
            "scale-1 origin ({}, {}) does not fit in {w}×{h}",
            origin.0, origin.1
        )));
    }
    Ok(SCALES.map(|scale| match scale {
        Scale::Full => PatchSpec {
            origin_x: origin.0,
            origin_y: origin.1,
            scale,
        },
        _ => PatchSpec {
            origin_x: place_axis(origin.0, scale.extent(), w),
            origin_y: place_axis(origin.1, scale.extent(), h),
            scale,
        },
    }))
}

/// Cuts the region and area-averages it to 256×256, rounding half to even.
pub fn extract_patch(slide: &SlideImage, spec: &PatchSpec) -> Result<Patch> {
    if !spec.fits(slide.width, slide.height) {
        return Err(Error::Geometry(format!(
            "region at ({}, {}) of extent {} exceeds slide `{}` ({}×{})",
            spec.origin_x,
            spec.origin_y,
            spec.extent(),
            slide.id,
            slide.width,
            slide.height
        )));
    }
    let f = spec.scale.divisor();
    let mut pixels = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE * 3);
    if f == 1 {
        for y in 0..PATCH_SIZE {
            pixels.extend_from_slice(slide.row(spec.origin_y + y, spec.origin_x, PATCH_SIZE));
        }
        return Ok(Patch { pixels });
    }
    let n = (f * f) as u32;
    let mut sums = vec![0u32; PATCH_SIZE * 3];
    for oy in 0..PATCH_SIZE {
        sums.iter_mut().for_each(|s| *s = 0);
        for dy in 0..f {
            let row = slide.row(spec.origin_y + oy * f + dy, spec.origin_x, spec.extent());
            for (ox, block) in row.chunks_exact(3 * f).enumerate() {
                for px in block.chunks_exact(3) {
                    sums[ox * 3] += px[0] as u32;
                    sums[ox * 3 + 1] += px[1] as u32;
                    sums[ox * 3 + 2] += px[2] as u32;
                }
            }
        }
        pixels.extend(sums.iter().map(|&s| round_half_even_div(s, n)));
    }
    Ok(Patch { pixels })
}

fn round_half_even_div(sum: u32, n: u32) -> u8 {
    let q = sum / n;
    let r2 = 2 * (sum % n);
    let q = if r2 > n || (r2 == n && q % 2 == 1) { q + 1 } else { q };
    q as u8
}

/// Draws `n_patches` triples whose scale-1 patch passes [`tissue_check`].
///
/// Fails once `max_attempts` consecutive draws are rejected.
pub fn sample_bag<R: Rng + ?Sized>(
    slide: &SlideImage,
    n_patches: usize,
    rng: &mut R,
    max_attempts: usize,
) -> Result<Vec<PatchTriple>> {
    if n_patches == 0 {
        return Err(Error::Size("at least one patch per slide is required".into()));
    }
    let dims = slide.dims();
    if dims.0 < Scale::Quarter.extent() || dims.1 < Scale::Quarter.extent() {
        return Err(Error::Dimension(format!(
            "slide `{}` is {}×{}; multi-scale sampling needs at least 1024×1024",
            slide.id, dims.0, dims.1
        )));
    }
    let mut triples = Vec::with_capacity(n_patches);
    let mut rejections = 0usize;
    while triples.len() < n_patches {
        let origin = sample_origin(slide, rng)?;
        let specs = build_multiscale_specs(origin, dims)?;
        let full = extract_patch(slide, &specs[0])?;
        if !tissue_check(&full) {
            rejections += 1;
            if rejections > max_attempts {
                return Err(Error::TissueScarcity {
                    slide_id: slide.id.clone(),
                    attempts: rejections,
                });
            }
            continue;
        }
        rejections = 0;
        let half = extract_patch(slide, &specs[1])?;
        let quarter = extract_patch(slide, &specs[2])?;
        triples.push(PatchTriple {
            specs,
            patches: [full, half, quarter],
        });
    }
    Ok(triples)
}

/// One row of a bag manifest.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ManifestRow {
    pub slide_id: String,
    pub patch_index: usize,
    pub scale: usize,
    pub origin_x: usize,
    pub origin_y: usize,
    pub extent: usize,
}

/// Manifest rows for a bag; `scale` is the divisor (1, 2 or 4).
pub fn manifest_rows(slide_id: &str, triples: &[PatchTriple]) -> Vec<ManifestRow> {
    triples
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            t.specs.iter().map(move |s| ManifestRow {
                slide_id: slide_id.to_owned(),
                patch_index: i,
                scale: s.scale.divisor(),
                origin_x: s.origin_x,
                origin_y: s.origin_y,
                extent: s.extent(),
            })
        })
        .collect()
}

pub fn write_manifest<W: Write>(out: W, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::from(e).in_file(path))?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: ManifestRow = row.map_err(|e| Error::from(e).in_file(path))?;
        if Scale::from_divisor(row.scale).map(Scale::extent) != Some(row.extent) {
            return Err(Error::Data(format!(
                "manifest row for `{}` patch {} has scale {} with extent {}",
                row.slide_id, row.patch_index, row.scale, row.extent
            ))
            .in_file(path));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Rebuilds patch triples from manifest rows belonging to one slide.
pub fn triples_from_manifest(slide: &SlideImage, rows: &[ManifestRow]) -> Result<Vec<PatchTriple>> {
    let mine: Vec<&ManifestRow> = rows.iter().filter(|r| r.slide_id == slide.id).collect();
    if mine.len() % 3 != 0 {
        return Err(Error::Data(format!(
            "slide `{}` has {} manifest rows, not a multiple of 3",
            slide.id,
            mine.len()
        )));
    }
    mine.chunks_exact(3)
        .enumerate()
        .map(|(i, chunk)| {
            let mut specs = [PatchSpec {
                origin_x: 0,
                origin_y: 0,
                scale: Scale::Full,
            }; 3];
            for (slot, (row, scale)) in chunk.iter().zip(SCALES).enumerate() {
                if row.patch_index != i || row.scale != scale.divisor() {
                    return Err(Error::Data(format!(
                        "manifest for `{}` is out of order at patch {i}",
                        slide.id
                    )));
                }
                specs[slot] = PatchSpec {
                    origin_x: row.origin_x,
                    origin_y: row.origin_y,
                    scale,
                };
            }
            let patches = [
                extract_patch(slide, &specs[0])?,
                extract_patch(slide, &specs[1])?,
                extract_patch(slide, &specs[2])?,
            ];
            Ok(PatchTriple { specs, patches })
        })
        .collect()
}

/// Writes `<slideid>_<patchindex>_s<1|2|4>.png` for every patch.
pub fn dump_patches(dir: &Path, slide_id: &str, triples: &[PatchTriple]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    for (i, t) in triples.iter().enumerate() {
        for (spec, patch) in t.specs.iter().zip(&t.patches) {
            let name = format!("{slide_id}_{i}_s{}.png", spec.scale.divisor());
            patch.save_png(&dir.join(name))?;
        }
    }
    Ok(())
}
