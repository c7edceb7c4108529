mod common;

use msmil::aggregate::Method;
use msmil::classify::ClassifierKind;
use msmil::features::FeatureBag;
use msmil::harness::{
    fit_and_evaluate, generate_synthetic_dataset, mean_std, run_experiment, run_split, stratified_split,
    ExperimentConfig, SyntheticSpec,
};
use msmil::rng::seeded;
use msmil::Label;

fn dataset(preset: &str, per_class: usize, np: usize, seed: u64) -> Vec<FeatureBag> {
    let spec = SyntheticSpec {
        slides_per_class: per_class,
        n_patches: np,
        ..SyntheticSpec::preset(preset, seed).unwrap()
    };
    generate_synthetic_dataset(&spec).unwrap().bags
}

fn config(method: Method, k: usize, reps: usize) -> ExperimentConfig {
    ExperimentConfig {
        method,
        k,
        repetitions: reps,
        n_patches: 20,
        seed: 17,
        ..ExperimentConfig::default()
    }
}

#[test]
fn separable_single_split_is_perfect_and_agrees_with_oracle() {
    let bags = dataset("scale1-signal", 10, 20, 1);
    assert_eq!(common::nearest_centroid_accuracy(&bags), 1.0);
    for method in Method::ALL {
        let out = run_split(&bags, &config(method, 8, 1), 5).unwrap();
        assert_eq!(out.accuracy, 1.0, "{method}");
    }
}

#[test]
fn repeated_runs_are_identical() {
    let bags = dataset("probe-mm", 5, 20, 2);
    let c = config(Method::Mm, 8, 6);
    let a = run_experiment(&bags, &c).unwrap();
    let b = run_experiment(&bags, &c).unwrap();
    assert_eq!(a.accuracies, b.accuracies);
    assert_eq!(run_split(&bags, &c, 9).unwrap().accuracy, run_split(&bags, &c, 9).unwrap().accuracy);
}

#[test]
fn statistics_recompute_from_repetitions() {
    let bags = dataset("probe-mc", 5, 20, 3);
    let r = run_experiment(&bags, &config(Method::Baseline, 8, 10)).unwrap();
    assert_eq!(r.accuracies.len(), 10);
    assert!(r.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
    let mean = r.accuracies.iter().sum::<f64>() / 10.0;
    assert!((mean - r.mean_acc).abs() <= 1e-12);
    let (m, s) = mean_std(&r.accuracies);
    assert!((m - r.mean_acc).abs() <= 1e-12 && (s - r.std_acc).abs() <= 1e-12);

    let one = run_experiment(&bags, &config(Method::Baseline, 8, 1)).unwrap();
    assert_eq!(one.std_acc, 0.0);
}

#[test]
fn test_bags_never_touch_the_fitted_models() {
    let bags = dataset("probe-mm", 6, 20, 4);
    let labels: Vec<Label> = bags.iter().map(|b| b.label).collect();
    for classifier in [ClassifierKind::Linear, ClassifierKind::Optimized] {
        let c = ExperimentConfig {
            classifier,
            ..config(Method::Mm, 6, 1)
        };
        let mut rng = seeded(31);
        let split = stratified_split(&labels, 0.8, &mut rng).unwrap();
        let train: Vec<&FeatureBag> = split.train.iter().map(|&i| &bags[i]).collect();
        let test: Vec<&FeatureBag> = split.test.iter().map(|&i| &bags[i]).collect();
        let full = fit_and_evaluate(&train, &test, &c, &mut rng.clone()).unwrap();
        for drop in 0..test.len() {
            let mut fewer = test.clone();
            fewer.remove(drop);
            let partial = fit_and_evaluate(&train, &fewer, &c, &mut rng.clone()).unwrap();
            assert_eq!(partial.aggregation, full.aggregation);
            assert_eq!(partial.svm, full.svm);
            assert_eq!(partial.chosen, full.chosen);
        }
    }
}

#[test]
fn optimized_classifier_records_chosen_cells() {
    let bags = dataset("scale1-signal", 5, 20, 5);
    let c = ExperimentConfig {
        classifier: ClassifierKind::Optimized,
        aug1: false,
        ..config(Method::Baseline, 4, 3)
    };
    let r = run_experiment(&bags, &c).unwrap();
    assert_eq!(r.chosen.len(), 3);
    assert!(r.chosen.iter().all(Option::is_some));
}

#[test]
fn resampled_patches_are_reproducible_and_bounded() {
    let bags = dataset("scale1-signal", 5, 30, 6);
    let c = ExperimentConfig {
        resample_patches: true,
        aug1: false,
        ..config(Method::Baseline, 8, 4)
    };
    let a = run_experiment(&bags, &c).unwrap();
    assert_eq!(a.accuracies, run_experiment(&bags, &c).unwrap().accuracies);
    assert!(a.mean_acc >= 0.9, "{}", a.mean_acc);

    // Each repetition sees a different subset, so single splits differ from
    // the first-20 truncation under the same seed.
    let first: Vec<FeatureBag> = bags.iter().map(|b| b.select(&(0..20).collect::<Vec<_>>())).collect();
    let fixed = ExperimentConfig { resample_patches: false, ..c.clone() };
    let drawn = run_split(&bags, &c, 3).unwrap();
    let truncated = run_split(&first, &fixed, 3).unwrap();
    assert_ne!(drawn.aggregation, truncated.aggregation);

    let too_many = ExperimentConfig { n_patches: 31, ..c };
    assert!(run_experiment(&bags, &too_many).is_err());
}
