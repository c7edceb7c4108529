//! Binary SVMs on bag histograms. FN is the negative class, PC the positive one.

mod grid;
pub mod smo;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use grid::{
    grid_cells, train_optimized, train_optimized_grouped, write_grid_report, GridCell, GridSearchReport, GRID_C,
    GRID_GAMMA, INNER_FOLDS,
};
pub use smo::{solve_dual, DualSolution, SmoParams};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::types::Label;

pub const MODEL_MAGIC: &[u8; 4] = b"MSVM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            Kernel::Linear => None,
            Kernel::Rbf { gamma } => Some(gamma),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Rbf { .. } => "rbf",
        }
    }

    /// Kernel matrix of `rows`, row-major.
    pub fn matrix(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        let n = rows.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = self.eval(&rows[i], &rows[j]);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Linear => f.write_str("linear"),
            Kernel::Rbf { gamma } => write!(f, "rbf(gamma={gamma})"),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Classifier choice of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassifierKind {
    Linear,
    Rbf,
    /// Inner cross-validated grid search over linear and RBF cells.
    Optimized,
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::Linear => "linear",
            ClassifierKind::Rbf => "rbf",
            ClassifierKind::Optimized => "optimized",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ClassifierKind::Linear),
            "rbf" => Ok(ClassifierKind::Rbf),
            "optimized" => Ok(ClassifierKind::Optimized),
            _ => Err(Error::Config(format!("unknown classifier `{s}` (linear, rbf, optimized)"))),
        }
    }
}

/// A trained binary SVM. Support vectors and coefficients are held at `f32`
/// precision so the model file round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    dim: usize,
    support_vectors: Vec<Vec<f64>>,
    /// Signed coefficients `y_i α_i`.
    dual_coefficients: Vec<f64>,
    pub bias: f64,
}

fn check_rows(x: &[Vec<f64>], y: &[Label]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let dim = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::Dimension("training rows of different widths".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("training rows contain non-finite values".into()));
    }
    if !(y.contains(&Label::Fn) && y.contains(&Label::Pc)) {
        return Err(Error::DegenerateLabels);
    }
    Ok(dim)
}

fn check_hyper(kernel: Kernel, c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("C must be positive, got {c}")));
    }
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
    }
    Ok(())
}

/// Trains on rows `x` with labels `y`.
pub fn train_svm(x: &[Vec<f64>], y: &[Label], kernel: Kernel, c: f64) -> Result<SvmModel> {
    let dim = check_rows(x, y)?;
    check_hyper(kernel, c)?;
    let gram = kernel.matrix(x);
    train_with_gram(x, y, &gram, kernel, c, dim, &SmoParams::default()).map(|(m, _)| m)
}

/// Like [`train_svm`] but also returns the raw dual solution.
pub fn train_svm_with_solution(
    x: &[Vec<f64>],
    y: &[Label],
    kernel: Kernel,
    c: f64,
    params: &SmoParams,
) -> Result<(SvmModel, DualSolution)> {
    let dim = check_rows(x, y)?;
    check_hyper(kernel, c)?;
    let gram = kernel.matrix(x);
    train_with_gram(x, y, &gram, kernel, c, dim, params)
}

pub(crate) fn train_with_gram(
    x: &[Vec<f64>],
    y: &[Label],
    gram: &[f64],
    kernel: Kernel,
    c: f64,
    dim: usize,
    params: &SmoParams,
) -> Result<(SvmModel, DualSolution)> {
    let signs: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let sol = solve_dual(gram, &signs, c, params)?;
    let mut support_vectors = Vec::new();
    let mut dual_coefficients = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(x[i].iter().map(|&v| v as f32 as f64).collect());
            dual_coefficients.push((signs[i] * a) as f32 as f64);
        }
    }
    if support_vectors.is_empty() {
        return Err(Error::Numerical("SVM solution has no support vectors".into()));
    }
    let model = SvmModel {
        kernel,
        c,
        dim,
        support_vectors,
        dual_coefficients,
        bias: -sol.rho,
    };
    Ok((model, sol))
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support_vectors(&self) -> &[Vec<f64>] {
        &self.support_vectors
    }

    pub fn dual_coefficients(&self) -> &[f64] {
        &self.dual_coefficients
    }

    /// `f(x) = Σ coef_i K(sv_i, x) + bias`.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!(
                "input of width {} for a model of width {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.dual_coefficients)
            .map(|(sv, a)| a * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias)
    }

    /// Label and decision value; `f(x) = 0` resolves to PC.
    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        let f = self.decision_value(x)?;
        Ok((Label::from_sign(f), f))
    }

    /// Fraction of rows predicted correctly.
    pub fn accuracy(&self, x: &[Vec<f64>], y: &[Label]) -> Result<f64> {
        let mut correct = 0usize;
        for (row, label) in x.iter().zip(y) {
            if self.predict(row)?.0 == *label {
                correct += 1;
            }
        }
        Ok(correct as f64 / x.len() as f64)
    }

    /// Model file: magic `MSVM`, `u16` version, kernel byte (0 linear, 1 RBF),
    /// gamma and C as `f64`, `u32` support-vector count, `u32` width, the
    /// support vectors and signed coefficients as `f32`, bias as `f64`;
    /// little-endian throughout.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MODEL_MAGIC);
        w.u16(MODEL_VERSION);
        w.u8(match self.kernel {
            Kernel::Linear => 0,
            Kernel::Rbf { .. } => 1,
        });
        w.f64(self.kernel.gamma().unwrap_or(0.0));
        w.f64(self.c);
        w.u32(self.support_vectors.len() as u32);
        w.u32(self.dim as u32);
        for sv in &self.support_vectors {
            for &v in sv {
                w.f32(v as f32);
            }
        }
        for &a in &self.dual_coefficients {
            w.f32(a as f32);
        }
        w.f64(self.bias);
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        r.version(MODEL_VERSION)?;
        let at = r.offset();
        let kind = r.u8("kernel")?;
        let gamma = r.f64("gamma")?;
        let c = r.f64("C")?;
        let kernel = match kind {
            0 => Kernel::Linear,
            1 => Kernel::Rbf { gamma },
            _ => {
                return Err(Error::Format {
                    offset: at,
                    message: format!("unknown kernel byte {kind}"),
                })
            }
        };
        let n = r.u32("support vector count")? as usize;
        let dim = r.u32("width")? as usize;
        let flat = r.finite_f32s(n * dim, "support vectors")?;
        let coefs = r.finite_f32s(n, "coefficients")?;
        let bias = r.f64("bias")?;
        r.finish()?;
        if n == 0 {
            return Err(Error::Format {
                offset: at,
                message: "model has no support vectors".into(),
            });
        }
        Ok(Self {
            kernel,
            c,
            dim,
            support_vectors: flat
                .chunks_exact(dim.max(1))
                .map(|r| r.iter().map(|&v| v as f64).collect())
                .collect(),
            dual_coefficients: coefs.iter().map(|&v| v as f64).collect(),
            bias,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::from(e).in_file(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::decode(&bytes).map_err(|e| e.in_file(path))
    }
}
