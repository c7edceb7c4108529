use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Width of every per-patch feature vector.
pub const FEATURE_DIM: usize = 512;

/// Side length of every stored patch, in pixels.
pub const PATCH_SIZE: usize = 256;

/// Slide-level ground truth. FN maps to -1 and PC to +1 in the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Fn,
    Pc,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Fn => -1.0,
            Label::Pc => 1.0,
        }
    }

    pub fn from_sign(value: f64) -> Self {
        if value >= 0.0 {
            Label::Pc
        } else {
            Label::Fn
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Label::Fn => 0,
            Label::Pc => 1,
        }
    }

    pub fn from_byte(byte: u8) -> Option<Self> {
        match byte {
            0 => Some(Label::Fn),
            1 => Some(Label::Pc),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Fn => "FN",
            Label::Pc => "PC",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FN" | "0" => Ok(Label::Fn),
            "PC" | "1" => Ok(Label::Pc),
            _ => Err(Error::Data(format!("unknown label `{s}` (expected FN or PC)"))),
        }
    }
}

/// Patch resolution relative to the full-resolution slide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scale {
    Full,
    Half,
    Quarter,
}

/// Canonical scale order used everywhere: 1, 1/2, 1/4.
pub const SCALES: [Scale; 3] = [Scale::Full, Scale::Half, Scale::Quarter];

impl Scale {
    /// Downsampling factor: 1, 2 or 4.
    pub fn divisor(self) -> usize {
        match self {
            Scale::Full => 1,
            Scale::Half => 2,
            Scale::Quarter => 4,
        }
    }

    /// Side of the full-resolution source region.
    pub fn extent(self) -> usize {
        PATCH_SIZE * self.divisor()
    }

    pub fn index(self) -> usize {
        match self {
            Scale::Full => 0,
            Scale::Half => 1,
            Scale::Quarter => 2,
        }
    }

    pub fn from_divisor(divisor: usize) -> Option<Self> {
        match divisor {
            1 => Some(Scale::Full),
            2 => Some(Scale::Half),
            4 => Some(Scale::Quarter),
            _ => None,
        }
    }
}

/// Row-major matrix of `f32` feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut data = Vec::new();
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dimension(format!(
                    "row of width {} in a matrix of width {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Dimension(format!(
                "row of width {} in a matrix of width {}",
                row.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { dim: self.dim, data }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
