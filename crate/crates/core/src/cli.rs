//! Command-line front end: one subcommand per pipeline stage plus
//! experiment, synthetic-data and report commands.
//!
//! Values are resolved as flag, then `--config` file, then built-in default.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::aggregate::{augment_aug1, fit_aggregator, histogram, read_histograms, write_histograms, AggregationModel, Method};
use crate::classify::{train_optimized_grouped, train_svm, write_grid_report, ClassifierKind, Kernel, SvmModel};
use crate::codebook::KMeansParams;
use crate::error::{Error, Result};
use crate::features::{extract_features, read_cache, write_cache, FeatureBackend, FeatureBag, TestBackend};
use crate::harness::{
    emit_report, generate_synthetic_dataset, read_results_csv, run_experiment, write_repetitions_csv,
    write_results_csv, ExperimentConfig, ResultRow, SyntheticSpec,
};
use crate::rng::{derive_seed, seeded};
use crate::slide::{
    dump_patches, manifest_rows, read_manifest, sample_bag, triples_from_manifest, write_manifest, SlideImage,
    DEFAULT_ATTEMPTS_PER_PATCH, DEFAULT_PATCHES_PER_SLIDE,
};
use crate::types::{Label, FEATURE_DIM};

/// Keys accepted in a `--config` file, with their meaning.
pub const CONFIG_KEYS: [(&str, &str); 16] = [
    ("seed", "master seed"),
    ("threads", "worker threads"),
    ("method", "baseline | MC | MA | MM (comma list for experiment)"),
    ("k", "clusters per codebook (comma list for experiment)"),
    ("classifier", "linear | rbf | optimized (comma list for experiment)"),
    ("gamma", "RBF kernel width for classifier = rbf"),
    ("c", "SVM cost for classifier = linear | rbf"),
    ("np", "patches per slide"),
    ("reps", "experiment repetitions"),
    ("train_fraction", "training share of each class"),
    ("aug1", "true | false"),
    ("kmeans_max_iters", "Lloyd iteration cap"),
    ("kmeans_tol", "stop once no centroid moves farther than this"),
    ("max_attempts", "consecutive tissue rejections tolerated per slide (default 1000·np)"),
    ("resample_patches", "true | false: draw nP of each bag's patches anew per repetition"),
    ("slides_per_class", "synthetic slides per class"),
];

const CONFIG_HELP: &str = "Config file: one `key = value` per line, `#` starts a comment. Keys:
  seed, threads, method, k, classifier, gamma, c, np, reps, train_fraction,
  aug1, kmeans_max_iters, kmeans_tol, max_attempts, resample_patches,
  slides_per_class
Command-line flags take precedence over the config file.

Exit codes: 0 success, 2 usage or config, 3 data or format, 4 numerical failure.";

#[derive(Debug, Parser)]
#[command(name = "msmil", version, about = "Multi-scale patch histograms and SVMs for slide classification", after_help = CONFIG_HELP)]
struct Cli {
    /// Master seed; all randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (or directory for `report`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample multi-scale patch triples and write a bag manifest.
    Sample(SampleArgs),
    /// Embed manifest patches into a feature cache.
    Featurize(FeaturizeArgs),
    /// Fit the codebook(s) of a method on a feature cache.
    FitCodebook(FitCodebookArgs),
    /// Encode feature bags as histograms.
    Aggregate(AggregateArgs),
    /// Train an SVM on histograms.
    Train(TrainArgs),
    /// Score an SVM on histograms.
    Evaluate(EvaluateArgs),
    /// Repeated-holdout experiments over a feature cache.
    Experiment(ExperimentArgs),
    /// Write a synthetic feature cache.
    Synth(SynthArgs),
    /// Results table and bar chart from result files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    np: Option<usize>,
    #[arg(long)]
    max_attempts: Option<usize>,
    /// Also write every patch as PNG into this directory.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    #[arg(required = true)]
    slides: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// CSV with columns slide_id,label (FN or PC).
    #[arg(long)]
    labels: PathBuf,
    /// ONNX model producing 512 features per patch.
    #[arg(long, conflicts_with = "test_backend")]
    model: Option<PathBuf>,
    /// Deterministic stand-in extractor with this seed.
    #[arg(long)]
    test_backend: Option<u64>,
    #[arg(required = true)]
    slides: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct FitCodebookArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    k: Option<String>,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    method: Option<String>,
    /// Codebook path as given to fit-codebook.
    #[arg(long)]
    codebook: PathBuf,
    /// Expected k; checked against the codebook.
    #[arg(long)]
    k: Option<String>,
    /// Append eight Aug1 copies after each slide's histogram.
    #[arg(long)]
    aug1: Option<bool>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    hist: PathBuf,
    #[arg(long)]
    classifier: Option<String>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Grid search table for classifier = optimized.
    #[arg(long)]
    grid_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    hist: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    classifier: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    /// Patches per slide: the first nP of each bag, or a fresh random nP
    /// per repetition with --resample-patches.
    #[arg(long)]
    np: Option<usize>,
    #[arg(long)]
    resample_patches: Option<bool>,
    #[arg(long)]
    aug1: Option<bool>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Directory for per-repetition CSVs.
    #[arg(long)]
    per_rep: Option<PathBuf>,
    /// Fill the `seconds` column (makes the file run-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// scale1-signal, all-signal, all-noise, probe-mc or probe-mm.
    #[arg(long)]
    preset: String,
    #[arg(long)]
    slides_per_class: Option<usize>,
    #[arg(long)]
    np: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    /// Draw a horizontal rule at this accuracy.
    #[arg(long)]
    baseline: Option<f64>,
}

/// Parses a flat `key = value` file, rejecting unknown keys.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = key.trim().to_ascii_lowercase();
        if !CONFIG_KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("line {}: unknown config key `{key}`", n + 1)));
        }
        map.insert(key, value.trim().to_owned());
    }
    Ok(map)
}

struct Settings {
    config: BTreeMap<String, String>,
    seed: u64,
    out: Option<PathBuf>,
}

impl Settings {
    fn value<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.config.get(key) {
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("config key `{key}`: cannot parse `{s}`"))),
            None => Ok(default),
        }
    }

    fn text(&self, flag: Option<String>, key: &str, default: &str) -> String {
        flag.or_else(|| self.config.get(key).cloned()).unwrap_or_else(|| default.to_owned())
    }

    fn list<T: FromStr>(&self, flag: Option<String>, key: &str, default: &str) -> Result<Vec<T>> {
        let s = self.text(flag, key, default);
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{}`", p.trim())))
            })
            .collect()
    }

    fn single<T: FromStr>(&self, flag: Option<String>, key: &str, default: &str) -> Result<T> {
        let mut v = self.list(flag, key, default)?;
        if v.len() != 1 {
            return Err(Error::Config(format!("`{key}` takes a single value here")));
        }
        Ok(v.remove(0))
    }

    fn kmeans(&self) -> Result<KMeansParams> {
        let d = KMeansParams::default();
        Ok(KMeansParams {
            max_iters: self.value(None, "kmeans_max_iters", d.max_iters)?,
            tol: self.value(None, "kmeans_tol", d.tol)?,
            ..d
        })
    }

    fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))
    }
}

/// Provenance sidecar written next to every output as `<out>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// SHA-256 over version, arguments (without `--threads`), config and seed.
    pub manifest_hash: String,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn manifest_hash(args: &[String], config: &BTreeMap<String, String>, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION"));
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
            continue;
        }
        if a == "--threads" {
            skip = true;
            continue;
        }
        if a.starts_with("--threads=") {
            continue;
        }
        h.update([0u8]);
        h.update(a);
    }
    for (k, v) in config.iter().filter(|(k, _)| k.as_str() != "threads") {
        h.update([1u8]);
        h.update(format!("{k}={v}"));
    }
    h.update(seed.to_le_bytes());
    hex::encode(h.finalize())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::from(e).in_file(parent))?;
    }
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::from(e).in_file(path))
}

/// What a command read and wrote, for the run manifest.
#[derive(Default)]
struct Io {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let arg_strings: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, arg_strings) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let started = unix_now();
    let config = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => BTreeMap::new(),
    };
    let mut settings = Settings {
        config,
        seed: 0,
        out: cli.out.clone(),
    };
    settings.seed = settings.value(cli.seed, "seed", 0)?;
    let threads: usize = settings.value(cli.threads, "threads", 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;

    let command_name = args
        .iter()
        .find(|a| {
            [
                "sample",
                "featurize",
                "fit-codebook",
                "aggregate",
                "train",
                "evaluate",
                "experiment",
                "synth",
                "report",
            ]
            .contains(&a.as_str())
        })
        .cloned()
        .unwrap_or_default();

    let io = pool.install(|| match cli.command {
        Command::Sample(a) => cmd_sample(&settings, a),
        Command::Featurize(a) => cmd_featurize(&settings, a),
        Command::FitCodebook(a) => cmd_fit_codebook(&settings, a),
        Command::Aggregate(a) => cmd_aggregate(&settings, a),
        Command::Train(a) => cmd_train(&settings, a),
        Command::Evaluate(a) => cmd_evaluate(&settings, a),
        Command::Experiment(a) => cmd_experiment(&settings, a),
        Command::Synth(a) => cmd_synth(&settings, a),
        Command::Report(a) => cmd_report(&settings, a),
    })?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        command: command_name,
        manifest_hash: manifest_hash(&args, &settings.config, settings.seed),
        args,
        config_path: cli.config,
        config: settings.config.clone(),
        inputs: io.inputs,
        outputs: io.outputs.clone(),
        seed: settings.seed,
        started_unix: started,
        finished_unix: unix_now(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    for out in &io.outputs {
        let side = sidecar_path(out);
        std::fs::write(&side, &json).map_err(|e| Error::from(e).in_file(&side))?;
    }
    Ok(())
}

fn cmd_sample(s: &Settings, a: SampleArgs) -> Result<Io> {
    let out = s.out()?;
    let np = s.value(a.np, "np", DEFAULT_PATCHES_PER_SLIDE)?;
    let max_attempts = s.value(a.max_attempts, "max_attempts", DEFAULT_ATTEMPTS_PER_PATCH * np)?;
    let mut rows = Vec::new();
    for (i, path) in a.slides.iter().enumerate() {
        let slide = SlideImage::load(path)?;
        let mut rng = seeded(derive_seed(s.seed, i as u64));
        let triples = sample_bag(&slide, np, &mut rng, max_attempts).map_err(|e| e.in_file(path))?;
        if let Some(dir) = &a.dump_dir {
            dump_patches(dir, &slide.id, &triples)?;
        }
        rows.extend(manifest_rows(&slide.id, &triples));
    }
    write_manifest(create(out)?, &rows).map_err(|e| e.in_file(out))?;
    Ok(Io {
        inputs: a.slides,
        outputs: vec![out.to_path_buf()],
    })
}

fn read_labels(path: &Path) -> Result<HashMap<String, Label>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::from(e).in_file(path))?;
    let mut map = HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::from(e).in_file(path))?;
        if rec.len() != 2 {
            return Err(Error::Data(format!("row {}: expected slide_id,label", i + 1)).in_file(path));
        }
        let label: Label = rec[1].parse().map_err(|e: Error| e.in_file(path))?;
        map.insert(rec[0].to_owned(), label);
    }
    Ok(map)
}

fn cmd_featurize(s: &Settings, a: FeaturizeArgs) -> Result<Io> {
    let out = s.out()?;
    let rows = read_manifest(&a.manifest)?;
    let labels = read_labels(&a.labels)?;
    let backend: Box<dyn FeatureBackend> = match (&a.model, a.test_backend) {
        (Some(_model), _) => {
            #[cfg(feature = "onnx")]
            {
                Box::new(crate::features::load_cnn_backend(_model)?)
            }
            #[cfg(not(feature = "onnx"))]
            {
                return Err(Error::Config("built without ONNX support".into()));
            }
        }
        (None, Some(seed)) => Box::new(TestBackend::new(seed)),
        (None, None) => return Err(Error::Config("one of --model or --test-backend is required".into())),
    };
    let mut bags = Vec::new();
    for path in &a.slides {
        let slide = SlideImage::load(path)?;
        let label = *labels
            .get(&slide.id)
            .ok_or_else(|| Error::Data(format!("no label for slide `{}`", slide.id)).in_file(&a.labels))?;
        let triples = triples_from_manifest(&slide, &rows).map_err(|e| e.in_file(&a.manifest))?;
        bags.push(extract_features(backend.as_ref(), &slide.id, label, &triples).map_err(|e| e.in_file(path))?);
    }
    write_cache(out, &bags)?;
    let mut inputs = vec![a.manifest, a.labels];
    inputs.extend(a.model);
    inputs.extend(a.slides);
    Ok(Io {
        inputs,
        outputs: vec![out.to_path_buf()],
    })
}

fn cmd_fit_codebook(s: &Settings, a: FitCodebookArgs) -> Result<Io> {
    let out = s.out()?;
    let method: Method = s.single(a.method, "method", "baseline")?;
    let k: usize = s.single(a.k, "k", "64")?;
    let bags = read_cache(&a.cache)?;
    let model = fit_aggregator(method, &bags, k, s.seed, &s.kmeans()?).map_err(|e| e.in_file(&a.cache))?;
    let outputs = model.write(out)?;
    Ok(Io {
        inputs: vec![a.cache],
        outputs,
    })
}

fn cmd_aggregate(s: &Settings, a: AggregateArgs) -> Result<Io> {
    let out = s.out()?;
    let method: Method = s.single(a.method, "method", "baseline")?;
    let model = AggregationModel::read(method, &a.codebook)?;
    if a.k.is_some() || s.config.contains_key("k") {
        let k: usize = s.single(a.k, "k", "0")?;
        if k != model.k() {
            return Err(Error::Dimension(format!("--k {k} but the codebook has k = {}", model.k())).in_file(&a.codebook));
        }
    }
    let aug1 = s.value(a.aug1, "aug1", false)?;
    let bags = read_cache(&a.cache)?;
    let mut rng = seeded(s.seed);
    let mut hists = Vec::new();
    for bag in &bags {
        hists.push(histogram(&model, bag)?);
        if aug1 {
            for copy in augment_aug1(bag, &mut rng)? {
                hists.push(histogram(&model, &copy)?);
            }
        }
    }
    write_histograms(create(out)?, &hists).map_err(|e| e.in_file(out))?;
    let mut inputs = vec![a.cache];
    inputs.extend(AggregationModel::codebook_paths(method, &a.codebook));
    Ok(Io {
        inputs,
        outputs: vec![out.to_path_buf()],
    })
}

fn cmd_train(s: &Settings, a: TrainArgs) -> Result<Io> {
    let out = s.out()?;
    let classifier: ClassifierKind = s.single(a.classifier, "classifier", "linear")?;
    let c = s.value(a.c, "c", 1.0)?;
    let gamma = s.value(a.gamma, "gamma", 1e-3)?;
    let hists = read_histograms(&a.hist)?;
    let x: Vec<Vec<f64>> = hists.iter().map(|h| h.values.clone()).collect();
    let y: Vec<Label> = hists.iter().map(|h| h.label).collect();
    let mut outputs = vec![out.to_path_buf()];
    let model = match classifier {
        ClassifierKind::Linear => train_svm(&x, &y, Kernel::Linear, c)?,
        ClassifierKind::Rbf => train_svm(&x, &y, Kernel::Rbf { gamma }, c)?,
        ClassifierKind::Optimized => {
            let mut ids: HashMap<&str, usize> = HashMap::new();
            let groups: Vec<usize> = hists
                .iter()
                .map(|h| {
                    let next = ids.len();
                    *ids.entry(h.slide_id.as_str()).or_insert(next)
                })
                .collect();
            let (model, report) = train_optimized_grouped(&x, &y, &groups, &mut seeded(s.seed))?;
            if let Some(p) = &a.grid_report {
                write_grid_report(create(p)?, &report).map_err(|e| e.in_file(p))?;
                outputs.push(p.clone());
            }
            model
        }
    };
    model.write(out)?;
    Ok(Io {
        inputs: vec![a.hist],
        outputs,
    })
}

fn cmd_evaluate(s: &Settings, a: EvaluateArgs) -> Result<Io> {
    let hists = read_histograms(&a.hist)?;
    let model = SvmModel::read(&a.model)?;
    let mut correct = 0usize;
    let mut preds = Vec::with_capacity(hists.len());
    for h in &hists {
        let (label, f) = model.predict(&h.values).map_err(|e| e.in_file(&a.hist))?;
        correct += usize::from(label == h.label);
        preds.push((h, label, f));
    }
    if hists.is_empty() {
        return Err(Error::Data("no histograms to evaluate".into()).in_file(&a.hist));
    }
    let accuracy = correct as f64 / hists.len() as f64;
    println!("accuracy {accuracy}");
    let mut outputs = Vec::new();
    if let Some(out) = &s.out {
        let mut w = csv::Writer::from_writer(create(out)?);
        w.write_record(["slide_id", "label", "predicted", "decision_value"])?;
        for (h, label, f) in preds {
            w.write_record([h.slide_id.clone(), h.label.to_string(), label.to_string(), f.to_string()])?;
        }
        w.flush()?;
        outputs.push(out.clone());
    }
    Ok(Io {
        inputs: vec![a.hist, a.model],
        outputs,
    })
}

fn truncate_bags(bags: Vec<FeatureBag>, np: usize) -> Result<Vec<FeatureBag>> {
    bags.into_iter()
        .map(|b| {
            if b.len() < np {
                return Err(Error::Size(format!("bag `{}` has {} patches, fewer than nP = {np}", b.slide_id, b.len())));
            }
            Ok(if b.len() == np {
                b
            } else {
                b.select(&(0..np).collect::<Vec<_>>())
            })
        })
        .collect()
}

fn cmd_experiment(s: &Settings, a: ExperimentArgs) -> Result<Io> {
    let out = s.out()?;
    let methods: Vec<Method> = s.list(a.method, "method", "baseline")?;
    let ks: Vec<usize> = s.list(a.k, "k", "64")?;
    let classifiers: Vec<ClassifierKind> = s.list(a.classifier, "classifier", "linear")?;
    let defaults = ExperimentConfig::default();
    let mut bags = read_cache(&a.cache)?;
    let bag_np = bags.first().map_or(0, FeatureBag::len);
    let np = s.value(a.np, "np", bag_np)?;
    let resample_patches = s.value(a.resample_patches, "resample_patches", false)?;
    if !resample_patches {
        bags = truncate_bags(bags, np).map_err(|e| e.in_file(&a.cache))?;
    }
    let base = ExperimentConfig {
        resample_patches,
        repetitions: s.value(a.reps, "reps", defaults.repetitions)?,
        n_patches: np,
        aug1: s.value(a.aug1, "aug1", defaults.aug1)?,
        train_fraction: s.value(a.train_fraction, "train_fraction", defaults.train_fraction)?,
        c: s.value(a.c, "c", defaults.c)?,
        rbf_gamma: s.value(a.gamma, "gamma", defaults.rbf_gamma)?,
        seed: s.seed,
        kmeans: s.kmeans()?,
        ..defaults
    };
    base.validate()?;
    let mut rows = Vec::new();
    let mut outputs = vec![out.to_path_buf()];
    for &classifier in &classifiers {
        for &k in &ks {
            for &method in &methods {
                let config = ExperimentConfig {
                    method,
                    k,
                    classifier,
                    ..base.clone()
                };
                let result = run_experiment(&bags, &config)?;
                eprintln!(
                    "{method} k={k} {classifier}: mean {:.4} std {:.4} over {} repetitions",
                    result.mean_acc, result.std_acc, config.repetitions
                );
                if let Some(dir) = &a.per_rep {
                    let p = dir.join(format!("{method}_k{k}_{classifier}.csv"));
                    write_repetitions_csv(create(&p)?, &result).map_err(|e| e.in_file(&p))?;
                    outputs.push(p);
                }
                rows.push(ResultRow::from_result(&result, a.timing));
            }
        }
    }
    write_results_csv(create(out)?, &rows).map_err(|e| e.in_file(out))?;
    Ok(Io {
        inputs: vec![a.cache],
        outputs,
    })
}

fn cmd_synth(s: &Settings, a: SynthArgs) -> Result<Io> {
    let out = s.out()?;
    let preset = SyntheticSpec::preset(&a.preset, s.seed)?;
    let spec = SyntheticSpec {
        slides_per_class: s.value(a.slides_per_class, "slides_per_class", preset.slides_per_class)?,
        n_patches: s.value(a.np, "np", preset.n_patches)?,
        ..preset
    };
    let ds = generate_synthetic_dataset(&spec)?;
    debug_assert!(ds.bags.iter().all(|b| b.scales()[0].dim() == FEATURE_DIM));
    write_cache(out, &ds.bags)?;
    Ok(Io {
        inputs: Vec::new(),
        outputs: vec![out.to_path_buf()],
    })
}

fn cmd_report(s: &Settings, a: ReportArgs) -> Result<Io> {
    let dir = s.out()?;
    let mut rows = Vec::new();
    for p in &a.results {
        let f = std::fs::File::open(p).map_err(|e| Error::from(e).in_file(p))?;
        rows.extend(read_results_csv(f).map_err(|e| e.in_file(p))?);
    }
    let files = emit_report(&rows, a.baseline, dir)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{}\n{}", files.csv.display(), files.svg.display());
    Ok(Io {
        inputs: a.results,
        outputs: vec![files.csv, files.svg],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let m = parse_config("# comment\nk = 32\nmethod=MM  # trailing\n\n").unwrap();
        assert_eq!(m["k"], "32");
        assert_eq!(m["method"], "MM");
        let err = parse_config("kk = 3").unwrap_err();
        assert!(err.to_string().contains("`kk`"));
        assert_eq!(err.exit_code(), 2);
        assert!(parse_config("k 3").is_err());
    }

    #[test]
    fn help_lists_every_key() {
        for (k, _) in CONFIG_KEYS {
            assert!(CONFIG_HELP.contains(k), "{k}");
        }
    }

    #[test]
    fn hash_ignores_threads() {
        let cfg = BTreeMap::new();
        let a: Vec<String> = ["experiment", "--threads", "1", "--reps", "2"].map(String::from).to_vec();
        let b: Vec<String> = ["experiment", "--threads", "8", "--reps", "2"].map(String::from).to_vec();
        let c: Vec<String> = ["experiment", "--reps", "3"].map(String::from).to_vec();
        assert_eq!(manifest_hash(&a, &cfg, 1), manifest_hash(&b, &cfg, 1));
        assert_ne!(manifest_hash(&a, &cfg, 1), manifest_hash(&c, &cfg, 1));
        assert_ne!(manifest_hash(&a, &cfg, 1), manifest_hash(&a, &cfg, 2));
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("a/r.csv")), PathBuf::from("a/r.csv.manifest.json"));
    }
}
