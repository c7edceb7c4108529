//! Repeated stratified holdout experiments over feature bags.
//!
//! Each repetition draws its own seed from the master seed
//! ([`crate::rng::derive_seed`]), splits slides per class, fits the
//! aggregation codebook(s) on the training slides only, trains the SVM on
//! training histograms (plus eight Aug1 copies per slide when enabled) and
//! scores the held-out slides once each.

mod report;
mod synthetic;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

pub use report::{emit_report, read_results_csv, render_svg, write_results_csv, ReportFiles, ResultRow, Y_AXIS_FLOOR};
pub use synthetic::{generate_synthetic_dataset, ScaleModel, ScaleSignal, SyntheticDataset, SyntheticSpec};

use crate::aggregate::{augment_aug1, fit_aggregator, histogram, AggregationModel, Method};
use crate::classify::{train_optimized_grouped, train_svm, ClassifierKind, GridCell, Kernel, SvmModel};
use crate::codebook::KMeansParams;
use crate::error::{Error, Result};
use crate::features::FeatureBag;
use crate::rng::{derive_seed, seeded};
use crate::types::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub k: usize,
    pub classifier: ClassifierKind,
    /// Kernel width for `classifier = rbf`.
    pub rbf_gamma: f64,
    /// Cost factor for `classifier = linear | rbf`.
    pub c: f64,
    /// Patches per slide, recorded for the results file.
    pub n_patches: usize,
    pub repetitions: usize,
    /// Draw a fresh random subset of `n_patches` triples from every bag at the
    /// start of each repetition instead of using the bags as given.
    pub resample_patches: bool,
    pub train_fraction: f64,
    pub aug1: bool,
    pub seed: u64,
    pub kmeans: KMeansParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Baseline,
            k: 64,
            classifier: ClassifierKind::Linear,
            rbf_gamma: 1e-3,
            c: 1.0,
            n_patches: crate::slide::DEFAULT_PATCHES_PER_SLIDE,
            repetitions: 512,
            resample_patches: false,
            train_fraction: 0.8,
            aug1: true,
            seed: 0,
            kmeans: KMeansParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.resample_patches && self.n_patches == 0 {
            return Err(Error::Config("n_patches must be positive when resampling patches".into()));
        }
        if self.repetitions == 0 || self.k == 0 {
            return Err(Error::Config("repetitions and k must be positive".into()));
        }
        Ok(())
    }
}

/// Train and test slide indices of one repetition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Training slides per class: `round(fraction · n)`, kept within `[1, n − 1]`.
pub fn train_count(class_size: usize, fraction: f64) -> usize {
    ((fraction * class_size as f64).round() as usize).clamp(1, class_size - 1)
}

/// Per-class shuffle, first `train_count` slides of each class train.
pub fn stratified_split<R: Rng + ?Sized>(labels: &[Label], fraction: f64, rng: &mut R) -> Result<Split> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [Label::Fn, Label::Pc] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::Size(format!(
                "need at least 2 slides of class {class}, found {}",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        let n_train = train_count(idx.len(), fraction);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Everything one repetition fits, plus its score.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub accuracy: f64,
    pub aggregation: AggregationModel,
    pub svm: SvmModel,
    /// Grid cell selected when the classifier is `optimized`.
    pub chosen: Option<GridCell>,
}

/// Fits on `train` and scores `test`. Random draws happen in a fixed order
/// (codebook seed, Aug1 subsets, inner folds) before any test bag is read.
pub fn fit_and_evaluate<R: Rng + ?Sized>(
    train: &[&FeatureBag],
    test: &[&FeatureBag],
    config: &ExperimentConfig,
    rng: &mut R,
) -> Result<SplitOutcome> {
    let codebook_seed: u64 = rng.random();
    let owned: Vec<FeatureBag> = train.iter().map(|b| (*b).clone()).collect();
    let aggregation = fit_aggregator(config.method, &owned, config.k, codebook_seed, &config.kmeans)?;

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut groups = Vec::new();
    for (g, bag) in owned.iter().enumerate() {
        x.push(histogram(&aggregation, bag)?.values);
        y.push(bag.label);
        groups.push(g);
        if config.aug1 {
            for copy in augment_aug1(bag, rng)? {
                x.push(histogram(&aggregation, &copy)?.values);
                y.push(bag.label);
                groups.push(g);
            }
        }
    }
    let (svm, chosen) = match config.classifier {
        ClassifierKind::Linear => (train_svm(&x, &y, Kernel::Linear, config.c)?, None),
        ClassifierKind::Rbf => (
            train_svm(&x, &y, Kernel::Rbf { gamma: config.rbf_gamma }, config.c)?,
            None,
        ),
        ClassifierKind::Optimized => {
            let (m, report) = train_optimized_grouped(&x, &y, &groups, rng)?;
            (m, Some(report.chosen_cell()))
        }
    };

    let mut correct = 0usize;
    for bag in test {
        let h = histogram(&aggregation, bag)?;
        if svm.predict(&h.values)?.0 == bag.label {
            correct += 1;
        }
    }
    Ok(SplitOutcome {
        accuracy: correct as f64 / test.len() as f64,
        aggregation,
        svm,
        chosen,
    })
}

/// One repetition with the given seed.
pub fn run_split(bags: &[FeatureBag], config: &ExperimentConfig, seed: u64) -> Result<SplitOutcome> {
    let mut rng = seeded(seed);
    let resampled: Vec<FeatureBag>;
    let bags = if config.resample_patches {
        resampled = bags
            .iter()
            .map(|b| {
                if b.len() < config.n_patches {
                    return Err(Error::Size(format!(
                        "bag `{}` has {} patches, fewer than nP = {}",
                        b.slide_id,
                        b.len(),
                        config.n_patches
                    )));
                }
                let mut idx = rand::seq::index::sample(&mut rng, b.len(), config.n_patches).into_vec();
                idx.sort_unstable();
                Ok(b.select(&idx))
            })
            .collect::<Result<_>>()?;
        &resampled[..]
    } else {
        bags
    };
    let labels: Vec<Label> = bags.iter().map(|b| b.label).collect();
    let split = stratified_split(&labels, config.train_fraction, &mut rng)?;
    let train: Vec<&FeatureBag> = split.train.iter().map(|&i| &bags[i]).collect();
    let test: Vec<&FeatureBag> = split.test.iter().map(|&i| &bags[i]).collect();
    fit_and_evaluate(&train, &test, config, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub accuracies: Vec<f64>,
    pub chosen: Vec<Option<GridCell>>,
    pub mean_acc: f64,
    /// Population standard deviation over repetitions.
    pub std_acc: f64,
    pub seconds: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `config.repetitions` independent splits, run in parallel and collected in
/// repetition order.
pub fn run_experiment(bags: &[FeatureBag], config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let start = Instant::now();
    let outcomes: Vec<(f64, Option<GridCell>)> = (0..config.repetitions)
        .into_par_iter()
        .map(|r| {
            run_split(bags, config, derive_seed(config.seed, r as u64))
                .map(|o| (o.accuracy, o.chosen))
                .map_err(|e| Error::Data(format!("repetition {r}: {e}")))
        })
        .collect::<Result<_>>()?;
    let accuracies: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let (mean_acc, std_acc) = mean_std(&accuracies);
    Ok(ExperimentResult {
        config: config.clone(),
        chosen: outcomes.into_iter().map(|o| o.1).collect(),
        accuracies,
        mean_acc,
        std_acc,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Per-repetition CSV: `repetition,accuracy,kernel,gamma,C`; the last three
/// are filled only for the optimized classifier.
pub fn write_repetitions_csv<W: Write>(out: W, result: &ExperimentResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["repetition", "accuracy", "kernel", "gamma", "C"])?;
    for (r, (acc, cell)) in result.accuracies.iter().zip(&result.chosen).enumerate() {
        let (kernel, gamma, c) = match cell {
            Some(cell) => (
                cell.kernel.name().to_owned(),
                cell.kernel.gamma().map(|g| g.to_string()).unwrap_or_default(),
                cell.c.to_string(),
            ),
            None => Default::default(),
        };
        w.write_record([r.to_string(), acc.to_string(), kernel, gamma, c])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_follow_rounding() {
        let mut labels = vec![Label::Pc; 21];
        labels.extend(vec![Label::Fn; 19]);
        for seed in 0..20 {
            let s = stratified_split(&labels, 0.8, &mut seeded(seed)).unwrap();
            let pc_train = s.train.iter().filter(|&&i| labels[i] == Label::Pc).count();
            let fn_train = s.train.len() - pc_train;
            assert_eq!((pc_train, fn_train), (17, 15));
            assert_eq!(s.train.len() + s.test.len(), 40);
        }
    }

    #[test]
    fn tiny_classes_keep_one_test_slide() {
        assert_eq!(train_count(2, 0.8), 1);
        assert_eq!(train_count(3, 0.8), 2);
        assert_eq!(train_count(5, 0.8), 4);
        let labels = [Label::Pc, Label::Fn, Label::Fn];
        assert!(matches!(stratified_split(&labels, 0.8, &mut seeded(0)), Err(Error::Size(_))));
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[0.5, 1.0]);
        assert_eq!((m, s), (0.75, 0.25));
        assert_eq!(mean_std(&[0.8]), (0.8, 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default();
        assert_eq!((c.repetitions, c.train_fraction), (512, 0.8));
        c.train_fraction = 1.0;
        assert!(c.validate().is_err());
    }
}
