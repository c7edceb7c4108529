//! Acceptance criteria, one line per criterion. Exits non-zero if any fails.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use msmil::aggregate::{augment_aug1, fit_aggregator, histogram, Method, AUG1_COPIES};
use msmil::classify::{grid_cells, train_optimized, train_svm, train_svm_with_solution, Kernel, GRID_C, GRID_GAMMA};
use msmil::classify::smo::SmoParams;
use msmil::codebook::{fit_kmeans, fit_kmeans_traced, KMeansParams};
use msmil::features::{write_cache, FeatureBag};
use msmil::harness::{generate_synthetic_dataset, run_experiment, ExperimentConfig, ExperimentResult, SyntheticSpec};
use msmil::rng::seeded;
use msmil::slide::{build_multiscale_specs, PatchSpec};
use msmil::{FeatureMatrix, Label, Scale, PATCH_SIZE};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, budget: Duration) -> std::result::Result<(), String> {
    ensure(elapsed < budget, || format!("took {:.1} s, budget {} s", elapsed.as_secs_f64(), budget.as_secs()))
}

fn geometry() -> Check {
    let start = Instant::now();
    let spec = |x, y, scale| PatchSpec {
        origin_x: x,
        origin_y: y,
        scale,
    };
    let cases = [
        (
            (1920, 1920),
            (4096, 4096),
            [spec(1920, 1920, Scale::Full), spec(1792, 1792, Scale::Half), spec(1536, 1536, Scale::Quarter)],
        ),
        (
            (0, 0),
            (4096, 4096),
            [spec(0, 0, Scale::Full), spec(0, 0, Scale::Half), spec(128, 128, Scale::Quarter)],
        ),
        (
            (3840, 3840),
            (4096, 4096),
            [spec(3840, 3840, Scale::Full), spec(3584, 3584, Scale::Half), spec(2944, 2944, Scale::Quarter)],
        ),
    ];
    for (origin, dims, expected) in cases {
        let got = build_multiscale_specs(origin, dims).map_err(|e| e.to_string())?;
        ensure(got == expected, || format!("origin {origin:?}: got {got:?}"))?;
    }
    let mut rng = seeded(2024);
    for _ in 0..10_000 {
        let dims = (rng.random_range(1024..=6000), rng.random_range(1024..=6000));
        let origin = (
            rng.random_range(0..=dims.0 - PATCH_SIZE),
            rng.random_range(0..=dims.1 - PATCH_SIZE),
        );
        let specs = build_multiscale_specs(origin, dims).map_err(|e| e.to_string())?;
        for (s, scale) in specs.iter().zip([Scale::Full, Scale::Half, Scale::Quarter]) {
            ensure(s.scale == scale && s.extent() == 256 * scale.divisor(), || format!("{s:?}"))?;
            ensure(s.fits(dims.0, dims.1), || format!("{s:?} outside {dims:?}"))?;
        }
        ensure(specs[0].origin_x == origin.0 && specs[0].origin_y == origin.1, || "scale 1 moved".into())?;
    }
    within_budget(start.elapsed(), Duration::from_secs(5))?;
    Ok("3 hand-derived cases exact, 10^4 random origins in bounds".into())
}

fn kmeans_oracle() -> Check {
    let start = Instant::now();
    let mut rng = seeded(7);
    let mut worst: f64 = 0.0;
    for inst in 0..50 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=3);
        let k = rng.random_range(1..=3usize.min(n));
        let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-5.0f32..5.0)).collect();
        let points: Vec<Vec<f64>> = data.chunks(d).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let m = FeatureMatrix::new(d, data).unwrap();
        let best = (0..20u64)
            .map(|s| fit_kmeans(&m, k, s, &KMeansParams::default()).unwrap().inertia().unwrap())
            .fold(f64::INFINITY, f64::min);
        let optimum = common::exhaustive_kmeans(&points, k);
        worst = worst.max((best - optimum).abs());
        ensure((best - optimum).abs() <= 1e-9, || {
            format!("instance {inst} (n={n} d={d} k={k}): lloyd {best} vs optimum {optimum}")
        })?;
    }
    for inst in 0..100 {
        let n = rng.random_range(30..200);
        let d = rng.random_range(2..16);
        let k = rng.random_range(2..10);
        let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let m = FeatureMatrix::new(d, data).unwrap();
        let (_, trace) = fit_kmeans_traced(&m, k, inst, &KMeansParams::default()).unwrap();
        for w in trace.inertia_history.windows(2) {
            ensure(w[1] <= w[0] * (1.0 + 1e-6), || format!("instance {inst}: inertia rose {} → {}", w[0], w[1]))?;
        }
    }
    within_budget(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("50 exhaustive optima matched (max gap {worst:.1e}), 100 monotone traces"))
}

fn svm_oracle() -> Check {
    let start = Instant::now();
    // Two points: w = 2(x₊ − x₋)/‖x₊ − x₋‖² and the boundary passes through the midpoint.
    let x = vec![vec![1.0, 1.0], vec![3.0, 2.0]];
    let y = vec![Label::Fn, Label::Pc];
    let model = train_svm(&x, &y, Kernel::Linear, 100.0).map_err(|e| e.to_string())?;
    let (dx, dy) = (2.0, 1.0);
    let norm2 = dx * dx + dy * dy;
    let w_expected = [2.0 * dx / norm2, 2.0 * dy / norm2];
    let mid = [2.0, 1.5];
    let b_expected = -(w_expected[0] * mid[0] + w_expected[1] * mid[1]);
    let mut w = [0.0; 2];
    for (sv, a) in model.support_vectors().iter().zip(model.dual_coefficients()) {
        w[0] += a * sv[0];
        w[1] += a * sv[1];
    }
    let err = (w[0] - w_expected[0])
        .abs()
        .max((w[1] - w_expected[1]).abs())
        .max((model.bias - b_expected).abs());
    ensure(err <= 1e-4, || format!("2-point max margin off by {err}"))?;

    let mut rng = seeded(11);
    let mut worst_kkt: f64 = 0.0;
    for set in 0..100 {
        let n = rng.random_range(4..30);
        let d = rng.random_range(1..6);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut y: Vec<Label> = (0..n).map(|_| if rng.random::<bool>() { Label::Pc } else { Label::Fn }).collect();
        y[0] = Label::Fn;
        y[1] = Label::Pc;
        let kernel = if set % 2 == 0 { Kernel::Linear } else { Kernel::Rbf { gamma: rng.random_range(0.1..2.0) } };
        let c = [0.5, 1.0, 10.0][set % 3];
        let (_, sol) = train_svm_with_solution(&x, &y, kernel, c, &SmoParams::default()).map_err(|e| e.to_string())?;
        let signs: Vec<f64> = y.iter().map(|l| l.sign()).collect();
        let r = common::kkt_residual(&kernel.matrix(&x), &signs, &sol.alpha, -sol.rho, c);
        worst_kkt = worst_kkt.max(r);
        ensure(r <= 1e-3, || format!("set {set}: KKT residual {r}"))?;
    }

    let xor = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let xor_y = vec![Label::Fn, Label::Fn, Label::Pc, Label::Pc];
    let m = train_svm(&xor, &xor_y, Kernel::Rbf { gamma: 1.0 }, 100.0).map_err(|e| e.to_string())?;
    let acc = m.accuracy(&xor, &xor_y).map_err(|e| e.to_string())?;
    ensure(acc == 1.0, || format!("XOR accuracy {acc}"))?;

    let mut worst_dup: f64 = 0.0;
    for set in 0..20u64 {
        let mut rng = seeded(100 + set);
        let n = rng.random_range(2..6);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..2 * n {
            let label = if i % 2 == 0 { Label::Fn } else { Label::Pc };
            let shift = 2.0 * label.sign();
            x.push(vec![shift + rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0)]);
            y.push(label);
        }
        let once = train_svm(&x, &y, Kernel::Linear, 1000.0).map_err(|e| e.to_string())?;
        let x2: Vec<Vec<f64>> = x.iter().flat_map(|r| [r.clone(), r.clone()]).collect();
        let y2: Vec<Label> = y.iter().flat_map(|&l| [l, l]).collect();
        let twice = train_svm(&x2, &y2, Kernel::Linear, 1000.0).map_err(|e| e.to_string())?;
        for row in &x {
            let d = (once.decision_value(row).unwrap() - twice.decision_value(row).unwrap()).abs();
            worst_dup = worst_dup.max(d);
        }
    }
    ensure(worst_dup <= 1e-6, || format!("duplication changed a decision value by {worst_dup:.3e}"))?;
    within_budget(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "2-point error {err:.1e}, max KKT residual {worst_kkt:.1e}, XOR 1.0, duplication drift {worst_dup:.1e}"
    ))
}

fn aggregation_contracts() -> Check {
    let start = Instant::now();
    let bags: Vec<FeatureBag> = (0..8)
        .map(|i| common::noise_bag(&format!("s{i}"), if i % 2 == 0 { Label::Fn } else { Label::Pc }, 80, i))
        .collect();
    let quick = KMeansParams {
        max_iters: 3,
        ..KMeansParams::default()
    };
    let mut worst_sum: f64 = 0.0;
    for k in [32, 64, 128, 256, 512] {
        for method in Method::ALL {
            let model = fit_aggregator(method, &bags, k, 5, &quick).map_err(|e| e.to_string())?;
            let expected = if method == Method::Mm { 3 * k } else { k };
            for bag in &bags[..2] {
                let h = histogram(&model, bag).map_err(|e| e.to_string())?;
                ensure(h.values.len() == expected, || format!("{method} k={k}: width {}", h.values.len()))?;
                let s: f64 = h.values.iter().sum();
                worst_sum = worst_sum.max((s - 1.0).abs());
                ensure((s - 1.0).abs() <= 1e-9, || format!("{method} k={k}: L1 sum {s}"))?;
            }
        }
    }
    let mut rng = seeded(3);
    for method in Method::ALL {
        let model = fit_aggregator(method, &bags, 32, 9, &KMeansParams::default()).map_err(|e| e.to_string())?;
        for bag in &bags {
            let h = histogram(&model, bag).unwrap().values;
            let mut order: Vec<usize> = (0..bag.len()).collect();
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
            let permuted = histogram(&model, &bag.select(&order)).unwrap().values;
            ensure(h == permuted, || format!("{method}: permutation changed `{}`", bag.slide_id))?;
        }
    }
    let base = fit_aggregator(Method::Baseline, &bags, 32, 21, &KMeansParams::default()).map_err(|e| e.to_string())?;
    let mm = fit_aggregator(Method::Mm, &bags, 32, 21, &KMeansParams::default()).map_err(|e| e.to_string())?;
    for bag in &bags {
        let hb = histogram(&base, bag).unwrap().values;
        let hm = histogram(&mm, bag).unwrap().values;
        for (b, m) in hb.iter().zip(&hm[..32]) {
            ensure((3.0 * m - b).abs() <= 1e-12, || format!("MM scale-1 block {m} vs baseline {b}"))?;
        }
    }
    for n in [4, 10, 50, 100, 101] {
        let bag = common::noise_bag("a", Label::Pc, n, 1);
        let copies = augment_aug1(&bag, &mut rng).map_err(|e| e.to_string())?;
        ensure(copies.len() == AUG1_COPIES && AUG1_COPIES == 8, || "copy count".into())?;
        for c in &copies {
            ensure(c.len() == 3 * n / 4, || format!("nP {n}: copy of {}", c.len()))?;
        }
    }
    within_budget(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("widths k/k/k/3k for k ∈ 32..512, max |Σh − 1| {worst_sum:.1e}, permutation, MM block, Aug1"))
}

fn synthetic(preset: &str, seed: u64, n_patches: usize) -> Vec<FeatureBag> {
    let spec = SyntheticSpec {
        slides_per_class: 20,
        n_patches,
        ..SyntheticSpec::preset(preset, seed).unwrap()
    };
    generate_synthetic_dataset(&spec).unwrap().bags
}

fn experiment(bags: &[FeatureBag], method: Method, k: usize, reps: usize, seed: u64) -> std::result::Result<ExperimentResult, String> {
    let config = ExperimentConfig {
        method,
        k,
        repetitions: reps,
        n_patches: bags[0].len(),
        seed,
        ..ExperimentConfig::default()
    };
    run_experiment(bags, &config).map_err(|e| format!("{method}: {e}"))
}

fn end_to_end_separable() -> Check {
    let start = Instant::now();
    let bags = synthetic("scale1-signal", 1, 50);
    let oracle = common::nearest_centroid_accuracy(&bags);
    ensure(oracle == 1.0, || format!("nearest-centroid oracle only reaches {oracle}"))?;
    let mut parts = Vec::new();
    for method in Method::ALL {
        let r = experiment(&bags, method, 32, 32, 100)?;
        parts.push(format!("{method} {:.3}±{:.3}", r.mean_acc, r.std_acc));
        ensure(r.mean_acc >= 0.95, || format!("{method} mean accuracy {}", r.mean_acc))?;
    }
    within_budget(start.elapsed(), Duration::from_secs(300))?;
    Ok(parts.join(", "))
}

fn chance_level() -> Check {
    let bags = synthetic("all-noise", 2, 20);
    let reps = 64;
    let mut parts = Vec::new();
    for method in Method::ALL {
        let r = experiment(&bags, method, 32, reps, 200)?;
        let bound = 3.0 * r.std_acc / (reps as f64).sqrt();
        parts.push(format!("{method} {:.3}±{:.3}", r.mean_acc, r.std_acc));
        ensure((r.mean_acc - 0.5).abs() <= bound, || {
            format!("{method}: |{:.4} − 0.5| > {bound:.4}", r.mean_acc)
        })?;
    }
    Ok(parts.join(", "))
}

fn directional_probes() -> Check {
    let seed = 300;
    let a = synthetic("probe-mc", 3, 50);
    let base_a = experiment(&a, Method::Baseline, 32, 64, seed)?;
    let mc = experiment(&a, Method::Mc, 32, 64, seed)?;
    let b = synthetic("probe-mm", 4, 50);
    let base_b = experiment(&b, Method::Baseline, 32, 64, seed)?;
    let mm = experiment(&b, Method::Mm, 32, 64, seed)?;
    let summary = format!(
        "(a) data seed 3: MC {:.3}±{:.3} vs baseline {:.3}±{:.3}; (b) data seed 4: MM {:.3}±{:.3} vs baseline {:.3}±{:.3}; split seed {seed}",
        mc.mean_acc, mc.std_acc, base_a.mean_acc, base_a.std_acc, mm.mean_acc, mm.std_acc, base_b.mean_acc, base_b.std_acc
    );
    ensure(mc.mean_acc <= base_a.mean_acc, || format!("MC above baseline: {summary}"))?;
    ensure(mm.mean_acc >= base_b.mean_acc, || format!("MM below baseline: {summary}"))?;
    Ok(summary)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache = dir.path().join("synth.msml");
    let spec = SyntheticSpec {
        slides_per_class: 6,
        n_patches: 20,
        ..SyntheticSpec::preset("probe-mm", 5).unwrap()
    };
    write_cache(&cache, &generate_synthetic_dataset(&spec).unwrap().bags).map_err(|e| e.to_string())?;
    let run = |threads: &str, name: &str| -> std::result::Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_msmil"))
            .args(["experiment", "--cache"])
            .arg(&cache)
            .args(["--method", "baseline,MC,MA,MM", "--k", "8", "--classifier", "linear,optimized"])
            .args(["--reps", "6", "--seed", "99", "--threads", threads, "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    let first = run("1", "a.csv")?;
    let second = run("1", "b.csv")?;
    let parallel = run("8", "c.csv")?;
    ensure(first == second, || "two runs differ".into())?;
    ensure(first == parallel, || "--threads 1 and --threads 8 differ".into())?;
    Ok(format!("{} bytes identical across runs and thread counts", first.len()))
}

fn grid_contract() -> Check {
    let cells = grid_cells();
    let linear = cells.iter().filter(|c| c.kernel == Kernel::Linear).count();
    let rbf = cells.len() - linear;
    ensure(cells.len() == 21 && linear == 7 && rbf == 14, || format!("{linear} linear + {rbf} rbf"))?;
    for g in GRID_GAMMA {
        for c in GRID_C {
            ensure(cells.iter().any(|x| x.kernel == Kernel::Rbf { gamma: g } && x.c == c), || {
                format!("missing rbf γ={g} C={c}")
            })?;
        }
    }
    let mut rng = seeded(8);
    let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 2) as f64 * 2.0 + rng.random_range(-0.5..0.5), rng.random::<f64>()]).collect();
    let y: Vec<Label> = (0..30).map(|i| if i % 2 == 0 { Label::Fn } else { Label::Pc }).collect();
    let (_, report) = train_optimized(&x, &y, &mut rng).map_err(|e| e.to_string())?;
    ensure(report.cells.len() == 21, || format!("report has {} rows", report.cells.len()))?;
    Ok("7 linear + 14 RBF cells evaluated".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("geometry suite", geometry),
        ("k-means oracle", kmeans_oracle),
        ("SVM oracle", svm_oracle),
        ("aggregation contracts", aggregation_contracts),
        ("end-to-end separable synthetic", end_to_end_separable),
        ("chance-level control", chance_level),
        ("directional probes", directional_probes),
        ("determinism", determinism),
        ("grid contract", grid_contract),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} [{secs:.1} s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1} s]: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
