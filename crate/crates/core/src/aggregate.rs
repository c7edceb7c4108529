//! Bag-of-words histograms under the baseline, MC, MA and MM strategies.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::codebook::{fit_kmeans, Codebook, KMeansParams};
use crate::error::{Error, Result};
use crate::features::FeatureBag;
use crate::types::{FeatureMatrix, Label, Scale, FEATURE_DIM, SCALES};

/// Aug1 copies per training bag.
pub const AUG1_COPIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Baseline,
    /// Per-patch concatenation of the three scales.
    Mc,
    /// All scales pooled into one codebook.
    Ma,
    /// One codebook per scale, histograms concatenated.
    Mm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Mc, Method::Ma, Method::Mm];

    /// Width of the vectors each codebook is fit on.
    pub fn codebook_dim(self) -> usize {
        match self {
            Method::Mc => 3 * FEATURE_DIM,
            _ => FEATURE_DIM,
        }
    }

    pub fn codebook_count(self) -> usize {
        match self {
            Method::Mm => 3,
            _ => 1,
        }
    }

    pub fn histogram_width(self, k: usize) -> usize {
        k * self.codebook_count()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Mc => "MC",
            Method::Ma => "MA",
            Method::Mm => "MM",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Method::Baseline),
            "mc" => Ok(Method::Mc),
            "ma" => Ok(Method::Ma),
            "mm" => Ok(Method::Mm),
            _ => Err(Error::Config(format!("unknown method `{s}` (baseline, MC, MA, MM)"))),
        }
    }
}

/// The vectors each codebook of `method` sees for one bag, in codebook order.
fn method_rows(method: Method, bag: &FeatureBag) -> Vec<FeatureMatrix> {
    match method {
        Method::Baseline => vec![bag.scale(Scale::Full).clone()],
        Method::Mc => {
            let mut m = FeatureMatrix::zeros(0, 3 * FEATURE_DIM);
            let mut row = Vec::with_capacity(3 * FEATURE_DIM);
            for i in 0..bag.len() {
                row.clear();
                for s in SCALES {
                    row.extend_from_slice(bag.scale(s).row(i));
                }
                m.push_row(&row).expect("concatenated width");
            }
            vec![m]
        }
        Method::Ma => {
            let mut m = FeatureMatrix::zeros(0, FEATURE_DIM);
            for s in SCALES {
                for row in bag.scale(s).iter_rows() {
                    m.push_row(row).expect("feature width");
                }
            }
            vec![m]
        }
        Method::Mm => bag.scales().to_vec(),
    }
}

/// Fitted codebook(s) for one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationModel {
    pub method: Method,
    codebooks: Vec<Codebook>,
}

impl AggregationModel {
    pub fn new(method: Method, codebooks: Vec<Codebook>) -> Result<Self> {
        if codebooks.len() != method.codebook_count() {
            return Err(Error::Dimension(format!(
                "{method} needs {} codebook(s), got {}",
                method.codebook_count(),
                codebooks.len()
            )));
        }
        let k = codebooks[0].k();
        for cb in &codebooks {
            if cb.dim() != method.codebook_dim() || cb.k() != k {
                return Err(Error::Dimension(format!(
                    "{method} needs codebooks of width {} and equal k; got width {} and k {}",
                    method.codebook_dim(),
                    cb.dim(),
                    cb.k()
                )));
            }
        }
        Ok(Self { method, codebooks })
    }

    pub fn k(&self) -> usize {
        self.codebooks[0].k()
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub fn histogram_width(&self) -> usize {
        self.method.histogram_width(self.k())
    }

    /// Per-codebook file paths: `path` itself, or `<stem>_s1/_s2/_s4.<ext>` for MM.
    pub fn codebook_paths(method: Method, path: &Path) -> Vec<PathBuf> {
        if method != Method::Mm {
            return vec![path.to_path_buf()];
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
        SCALES
            .iter()
            .map(|s| path.with_file_name(format!("{stem}_s{}{ext}", s.divisor())))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<Vec<PathBuf>> {
        let paths = Self::codebook_paths(self.method, path);
        for (cb, p) in self.codebooks.iter().zip(&paths) {
            cb.write(p)?;
        }
        Ok(paths)
    }

    pub fn read(method: Method, path: &Path) -> Result<Self> {
        let codebooks = Self::codebook_paths(method, path)
            .iter()
            .map(|p| Codebook::read(p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(method, codebooks).map_err(|e| e.in_file(path))
    }
}

/// Fits the codebook(s) of `method` on `training_bags`. MM codebooks use seeds
/// `seed`, `seed + 1`, `seed + 2` for scales 1, 1/2, 1/4.
pub fn fit_aggregator(
    method: Method,
    training_bags: &[FeatureBag],
    k: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<AggregationModel> {
    if training_bags.is_empty() {
        return Err(Error::Size(format!("{method}: no training bags")));
    }
    let mut pooled: Vec<FeatureMatrix> = (0..method.codebook_count())
        .map(|_| FeatureMatrix::zeros(0, method.codebook_dim()))
        .collect();
    for bag in training_bags {
        for (acc, m) in pooled.iter_mut().zip(method_rows(method, bag)) {
            for row in m.iter_rows() {
                acc.push_row(row)?;
            }
        }
    }
    let codebooks = pooled
        .iter()
        .enumerate()
        .map(|(i, data)| {
            if data.rows() < k {
                return Err(Error::Size(format!(
                    "{method}: {} training vectors cannot fit k = {k}",
                    data.rows()
                )));
            }
            fit_kmeans(data, k, seed.wrapping_add(i as u64), params)
        })
        .collect::<Result<Vec<_>>>()?;
    AggregationModel::new(method, codebooks)
}

/// L1-normalized cluster-frequency vector of one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct BagHistogram {
    pub slide_id: String,
    pub label: Label,
    pub method: Method,
    pub k: usize,
    pub values: Vec<f64>,
}

/// Counts cluster assignments of the bag's vectors and normalizes once over
/// the full width (`k`, or `3k` for MM in scale order 1, 1/2, 1/4).
pub fn histogram(model: &AggregationModel, bag: &FeatureBag) -> Result<BagHistogram> {
    if bag.is_empty() {
        return Err(Error::Size(format!("bag `{}` is empty", bag.slide_id)));
    }
    let k = model.k();
    let mut counts = vec![0u64; model.histogram_width()];
    for (i, (cb, rows)) in model.codebooks.iter().zip(method_rows(model.method, bag)).enumerate() {
        for c in cb.assign_rows(&rows)? {
            counts[i * k + c] += 1;
        }
    }
    Ok(BagHistogram {
        slide_id: bag.slide_id.clone(),
        label: bag.label,
        method: model.method,
        k,
        values: normalize_counts(&counts),
    })
}

pub(crate) fn normalize_counts(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Eight random subsets of `floor(0.75 · nP)` patch triples each, drawn
/// without replacement and applied jointly to all scales.
pub fn augment_aug1<R: Rng + ?Sized>(bag: &FeatureBag, rng: &mut R) -> Result<Vec<FeatureBag>> {
    let n = bag.len();
    if n < 4 {
        return Err(Error::Size(format!(
            "Aug1 needs at least 4 patches, bag `{}` has {n}",
            bag.slide_id
        )));
    }
    let keep = 3 * n / 4;
    Ok((0..AUG1_COPIES)
        .map(|_| {
            let mut idx = rand::seq::index::sample(rng, n, keep).into_vec();
            idx.sort_unstable();
            bag.select(&idx)
        })
        .collect())
}

/// Histogram CSV: `slide_id,label,method,k,h0..h(w-1)` with 9 significant digits.
pub fn write_histograms<W: Write>(out: W, hists: &[BagHistogram]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let width = hists.first().map_or(0, |h| h.values.len());
    let mut header = vec!["slide_id".to_owned(), "label".into(), "method".into(), "k".into()];
    header.extend((0..width).map(|i| format!("h{i}")));
    w.write_record(&header)?;
    for h in hists {
        if h.values.len() != width {
            return Err(Error::Dimension("histograms of different widths in one file".into()));
        }
        let mut rec = vec![h.slide_id.clone(), h.label.to_string(), h.method.to_string(), h.k.to_string()];
        rec.extend(h.values.iter().map(|v| format!("{v:.8e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_histograms(path: &Path) -> Result<Vec<BagHistogram>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::from(e).in_file(path))?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::from(e).in_file(path))?;
        let bad = |what: &str| Error::Data(format!("row {}: bad {what}", line + 1)).in_file(path);
        if rec.len() < 5 {
            return Err(bad("column count"));
        }
        let method: Method = rec[2].parse().map_err(|_| bad("method"))?;
        let k: usize = rec[3].parse().map_err(|_| bad("k"))?;
        let values = rec
            .iter()
            .skip(4)
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("histogram value"))?;
        if values.len() != method.histogram_width(k) {
            return Err(bad("histogram width"));
        }
        out.push(BagHistogram {
            slide_id: rec[0].to_owned(),
            label: rec[1].parse().map_err(|_| bad("label"))?,
            method,
            k,
            values,
        });
    }
    Ok(out)
}
