//! Command-line front end: synthesize data, extract descriptors, train,
//! predict, evaluate and run the numerical self-checks.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;
use thiserror::Error;

use densegp::features::{features_csv, Extractor};
use densegp::imagekit::{
    generate_synthetic_dataset, load_dataset, load_image, write_dataset, Dataset, ImageTensor,
    Manifest, Preprocess, MANIFEST_FILE,
};
use densegp::pipeline::{
    evaluate, export_report, split_dataset, train_densenet_gp, train_feature_gp, FeatureGpConfig,
    Metrics, TrainedModel,
};
use densegp::verify::{run_verification, Family, VerifyOptions};
use densegp::ErrorKind;

use config::{ConfigError, Settings};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] densegp::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("output directory {0} is not empty; pass --force to replace it")]
    OutputExists(PathBuf),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} of {total} images could not be read")]
    Unreadable { failed: usize, total: usize },
    #[error("{failed} of {total} oracles failed: {names}")]
    OraclesFailed {
        failed: usize,
        total: usize,
        names: String,
    },
    #[error("cannot configure worker threads: {0}")]
    Threads(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Io => 3,
                ErrorKind::Numerical => 4,
            },
            CliError::Config(ConfigError::Io { .. }) => 3,
            CliError::Config(_) | CliError::OutputExists(_) | CliError::Threads(_) => 2,
            CliError::Write { .. } | CliError::Unreadable { .. } => 3,
            CliError::OraclesFailed { .. } => 4,
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

/// Coal vs. waste texture classification: a densely connected CNN whose
/// features feed a Gaussian-process classifier.
#[derive(Parser, Debug)]
#[command(name = "densegp", version)]
struct Cli {
    /// Maximum number of worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Settings file with dotted `key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic two-class texture dataset.
    Synth(SynthArgs),
    /// Compute a classical texture descriptor for every image, as CSV.
    Extract(ExtractArgs),
    /// Train a model and write it with its metrics and curves.
    Train(TrainArgs),
    /// Print per-image class probabilities as CSV.
    Predict(PredictArgs),
    /// Report a saved model's accuracy on a dataset split.
    Evaluate(EvaluateArgs),
    /// Run the numerical self-checks.
    Verify(VerifyArgs),
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must be in [0, 1], got {v}"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Images per class across both splits.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Fraction of each class rendered as the darkened test split.
    #[arg(long, value_parser = unit_interval)]
    test_fraction: Option<f64>,
    /// Probability of flipping each training label.
    #[arg(long, value_parser = unit_interval)]
    label_flip: Option<f64>,
    /// Brightness multiplier applied to test images.
    #[arg(long, value_parser = positive)]
    brightness_shift: Option<f64>,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    data: PathBuf,
    /// Descriptor: lbp, glcm or msws.
    #[arg(long)]
    method: Extractor,
    /// Side of the center crop the descriptor is computed on.
    #[arg(long, default_value_t = 32)]
    input_size: usize,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelKind {
    Densenet,
    Lbp,
    Glcm,
    Msws,
}

#[derive(Args, Debug, Default)]
struct SplitArgs {
    /// Training share of untagged samples per class.
    #[arg(long, value_parser = unit_interval)]
    train_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory for the model files, metrics.json and curves.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Densenet)]
    model: ModelKind,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = positive)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Refit kernel hyperparameters every N epochs (0 = only before and after training).
    #[arg(long)]
    refit_gp_every: Option<usize>,
    /// Disable random flips during training.
    #[arg(long)]
    no_augment: bool,
    /// Keep the configured kernel hyperparameters instead of fitting them.
    #[arg(long)]
    no_fit_kernel: bool,
    #[command(flatten)]
    split: SplitArgs,
    /// Store the elapsed time in metrics.json (makes the file run-dependent).
    #[arg(long)]
    record_wall_time: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory to score.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Individual image files to score.
    images: Vec<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    split: SplitChoice,
    #[command(flatten)]
    split_policy: SplitArgs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Comma-separated oracle families: gp, laplace, probit, cnn, features, adam.
    #[arg(long, value_delimiter = ',')]
    only: Vec<Family>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Deliberately corrupt one family's results to exercise failure reporting.
    #[arg(long, hide = true)]
    perturb: Option<Family>,
}

fn settings(cli: &Cli) -> Result<Settings> {
    Ok(match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    })
}

fn apply_split(s: &mut Settings, a: &SplitArgs) {
    if let Some(f) = a.train_fraction {
        s.split.train_fraction = f;
    }
    if let Some(seed) = a.split_seed {
        s.split.seed = seed;
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn is_nonempty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).is_ok_and(|mut d| d.next().is_some())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.into(),
        source,
    })
}

fn cmd_synth(mut s: Settings, a: &SynthArgs) -> Result<()> {
    let c = &mut s.synth;
    set(&mut c.seed, a.seed);
    set(&mut c.samples_per_class, a.per_class);
    set(&mut c.image_size, a.image_size);
    set(&mut c.test_fraction, a.test_fraction);
    set(&mut c.label_flip_rate, a.label_flip);
    set(&mut c.brightness_shift, a.brightness_shift);
    c.validate()?;
    if is_nonempty_dir(&a.out) {
        if !a.force {
            return Err(CliError::OutputExists(a.out.clone()));
        }
        std::fs::remove_dir_all(&a.out).map_err(|source| CliError::Write {
            path: a.out.clone(),
            source,
        })?;
    }
    let ds = generate_synthetic_dataset::<f64>(c)?;
    write_dataset(&ds, &a.out, Some(c.seed))?;
    let count = |split| ds.samples.iter().filter(|x| x.split == split).count();
    println!(
        "wrote {} images to {} (train {}, test {}, {} training labels flipped)",
        ds.len(),
        a.out.display(),
        count(densegp::imagekit::SplitTag::Train),
        count(densegp::imagekit::SplitTag::Test),
        ds.flipped_count()
    );
    Ok(())
}

fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    let ds = load_dataset::<f64>(&a.data)?;
    let preprocess = Preprocess::for_input_size(a.input_size);
    let rows = ds
        .samples
        .par_iter()
        .map(|s| Ok((s, a.method.extract(&preprocess.geometry(&s.image)?)?)))
        .collect::<densegp::Result<Vec<_>>>()?;
    let csv = features_csv(&rows);
    match &a.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    info!("extracted {} {} descriptors", rows.len(), a.method.name());
    Ok(())
}

fn cmd_train(mut s: Settings, a: &TrainArgs) -> Result<()> {
    let t = &mut s.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.learning_rate, a.lr);
    set(&mut t.weight_decay, a.weight_decay);
    set(&mut t.seed, a.seed);
    set(&mut t.refit_gp_every, a.refit_gp_every);
    if a.no_augment {
        t.augment = false;
    }
    if a.no_fit_kernel {
        t.fit_kernel = false;
    }
    apply_split(&mut s, &a.split);

    let start = Instant::now();
    let ds = load_dataset::<f64>(&a.data)?;
    let split = split_dataset(&ds, &s.split)?;
    let t = &s.train;
    let (model, mut metrics): (TrainedModel<f64>, Metrics) = match a.model {
        ModelKind::Densenet => {
            let (m, metrics) = train_densenet_gp(&split, t)?;
            (TrainedModel::DenseGp(m), metrics)
        }
        kind => {
            let name = format!("{kind:?}").to_ascii_lowercase();
            let cfg = FeatureGpConfig {
                gp: t.gp,
                fit_kernel: t.fit_kernel,
                input_size: t.network.input_size,
                seed: t.seed,
                laplace_tol: t.laplace_tol,
                laplace_max_iter: t.laplace_max_iter,
                ..FeatureGpConfig::new(name.parse()?)
            };
            let (m, metrics) = train_feature_gp(&split, &cfg)?;
            (TrainedModel::FeatureGp(m), metrics)
        }
    };
    if a.record_wall_time {
        metrics.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    model.save(&a.out)?;
    export_report(&metrics, &a.out)?;
    println!(
        "{}: train accuracy {:.4}, test accuracy {:.4}, {} skipped batches",
        metrics.model, metrics.train_accuracy, metrics.test_accuracy, metrics.skipped_batches
    );
    Ok(())
}

/// Image id, pixels and known label (empty when unknown).
type ScoredInput = (String, ImageTensor<f64>, String);

/// Images to score with their ids and known labels; unreadable files are
/// reported and counted.
fn predict_inputs(a: &PredictArgs) -> Result<(Vec<ScoredInput>, usize)> {
    let mut items = Vec::new();
    let mut failed = 0;
    let mut load = |items: &mut Vec<_>, id: String, path: &Path, label: String| match load_image::<
        f64,
    >(path)
    {
        Ok(img) => items.push((id, img, label)),
        Err(e) => {
            eprintln!("error: {e}");
            failed += 1;
        }
    };
    if let Some(root) = &a.data {
        let manifest_path = root.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let text =
                std::fs::read_to_string(&manifest_path).map_err(|source| densegp::Error::Io {
                    path: manifest_path.clone(),
                    source,
                })?;
            let manifest: Manifest =
                serde_json::from_str(&text).map_err(|e| densegp::Error::Corrupt {
                    path: manifest_path.clone(),
                    reason: e.to_string(),
                })?;
            for e in manifest.samples {
                let id = e.file.strip_suffix(".png").unwrap_or(&e.file).to_string();
                load(
                    &mut items,
                    id,
                    &root.join(&e.file),
                    e.label.dir_name().into(),
                );
            }
        } else {
            let ds: Dataset<f64> = load_dataset(root)?;
            for s in ds.samples {
                items.push((s.id, s.image, s.label.dir_name().into()));
            }
        }
    }
    for path in &a.images {
        let id = path.file_stem().map_or_else(
            || path.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        load(&mut items, id, path, String::new());
    }
    Ok((items, failed))
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = TrainedModel::<f64>::load(&a.model)?;
    let (items, failed) = predict_inputs(a)?;
    let images: Vec<&ImageTensor<f64>> = items.iter().map(|(_, img, _)| img).collect();
    let probs = model.predict_images(&images)?;
    let mut out = String::from("image_id,probability,label\n");
    for ((id, _, label), p) in items.iter().zip(&probs) {
        writeln!(out, "{id},{p},{label}").unwrap();
    }
    print!("{out}");
    if failed > 0 {
        return Err(CliError::Unreadable {
            failed,
            total: failed + items.len(),
        });
    }
    Ok(())
}

fn cmd_evaluate(mut s: Settings, a: &EvaluateArgs) -> Result<()> {
    apply_split(&mut s, &a.split_policy);
    let model = TrainedModel::<f64>::load(&a.model)?;
    let ds = load_dataset::<f64>(&a.data)?;
    let all: Vec<_> = ds.samples.iter().collect();
    let split;
    let samples = match a.split {
        SplitChoice::All => &all[..],
        choice => {
            split = split_dataset(&ds, &s.split)?;
            if choice == SplitChoice::Train {
                split.train.samples()
            } else {
                split.test.samples()
            }
        }
    };
    let eval = evaluate(&model, samples)?;
    let report = serde_json::json!({
        "model": model.name(),
        "split": format!("{:?}", a.split).to_ascii_lowercase(),
        "samples": samples.len(),
        "accuracy": eval.accuracy,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<()> {
    let reports = run_verification(&VerifyOptions {
        only: a.only.clone(),
        perturb: a.perturb,
        seed: a.seed,
    });
    println!(
        "{:<9} {:<30} {:<6} {:>11} {:>9} {:>7}  detail",
        "family", "oracle", "status", "measured", "limit", "time"
    );
    for r in &reports {
        println!(
            "{:<9} {:<30} {:<6} {:>11.3e} {:>9.1e} {:>6.2}s  {}",
            r.family.name(),
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.measured,
            r.threshold,
            r.seconds,
            r.detail
        );
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name)
        .collect();
    if failed.is_empty() {
        println!("all {} oracles passed", reports.len());
        Ok(())
    } else {
        Err(CliError::OraclesFailed {
            failed: failed.len(),
            total: reports.len(),
            names: failed.join(", "),
        })
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Threads(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(settings(cli)?, a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(settings(cli)?, a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(settings(cli)?, a),
        Command::Verify(a) => cmd_verify(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 success, 2 usage, 3 I/O or format, 4 numerical.
pub fn run_with_args<I, A>(args: I) -> u8
where
    I: IntoIterator<Item = A>,
    A: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
