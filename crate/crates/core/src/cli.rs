//! `mass` command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::load_checkpoint;
use crate::cropping::{make_two_views, make_views, sample_crop, CropStrategy};
use crate::datasets::{generate_shapes, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{finetune_fraction, linear_eval, SgdConfig};
use crate::image::Image;
use crate::model::{build_default_nets, ModelConfig, ModelParams};
use crate::policy::{load_policy_file, magnitude_to_params, PolicySource, RandAugmentConfig};
use crate::ppm::{encode_ppm, read_ppm, write_ppm};
use crate::rng::{derive_seed, Rng};
use crate::trainer::{DataSource, TrainConfig, Trainer};
use crate::transforms::{resize_bilinear, TransformKind};

#[derive(Debug, Parser)]
#[command(name = "mass", version, about = "Deterministic augmentation and self-supervised pre-training toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write augmented views of each input image as PPM files.
    Augment(AugmentArgs),
    /// Summarize sampled crop sizes.
    Cropstats(CropstatsArgs),
    /// Run two-view pre-training.
    Pretrain(PretrainArgs),
    /// Linear probe on frozen encoder features.
    Lineval(EvalArgs),
    /// Fine-tune encoder and head on a labeled fraction.
    Finetune(FinetuneArgs),
    /// Time the crop and augmentation pipeline.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Directory of .ppm images.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Render this many synthetic shapes per class instead of reading files.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side of synthetic images.
    #[arg(long, default_value_t = 32)]
    pub image_side: usize,
    #[arg(long)]
    pub output: PathBuf,
    /// Ops applied per view.
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    /// Magnitude in [0, 10]; 0 disables augmentation.
    #[arg(long, default_value_t = 9.0)]
    pub m: f64,
    #[arg(long, default_value_t = 2)]
    pub views: usize,
    #[arg(long, default_value = "uniform")]
    pub strategy: CropStrategy,
    /// Output view side.
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    /// Use the whole image instead of sampling a crop.
    #[arg(long)]
    pub full_crop: bool,
    /// Sub-policy JSON file replacing RandAugment.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct CropstatsArgs {
    #[arg(long, default_value = "uniform")]
    pub strategy: CropStrategy,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 224)]
    pub height: usize,
    #[arg(long, default_value_t = 224)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// JSON training config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub view_side: Option<usize>,
    #[arg(long)]
    pub strategy: Option<CropStrategy>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Labeled image directory (`<root>/<class>/*.ppm`).
    #[arg(long, conflicts_with = "synthetic")]
    pub data_dir: Option<PathBuf>,
    /// Synthetic shapes per class.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Continue from a checkpoint written by an earlier run of the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pre-training checkpoint holding the encoder.
    #[arg(long, required_unless_present = "random_init", conflicts_with = "random_init")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a freshly initialized encoder instead.
    #[arg(long)]
    pub random_init: bool,
    /// JSON evaluation config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub view_side: Option<usize>,
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    #[arg(long)]
    pub test_dir: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Labeled fraction of the training set, in (0, 1].
    #[arg(long)]
    pub fraction: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "crop+augment")]
    pub pipeline: String,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Side of the random source images.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// View side.
    #[arg(long, default_value_t = 32)]
    pub side: usize,
}

/// Settings shared by `lineval` and `finetune`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub train: DataSource,
    pub test: DataSource,
    pub view_side: usize,
    pub model: ModelConfig,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train: DataSource::Synthetic { n_per_class: 500, image_side: 32, seed: 0 },
            test: DataSource::Synthetic { n_per_class: 125, image_side: 32, seed: 1 },
            view_side: 32,
            model: ModelConfig::default(),
            sgd: SgdConfig::default(),
            seed: 0,
            output: None,
        }
    }
}

/// Overlay `over` onto `base`. Objects merge key by key, except tagged
/// objects (with a `"type"` key) which replace wholesale.
pub fn merge_json(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) if !o.contains_key("type") => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, o) => *slot = o,
    }
}

/// Defaults, then the config file, then flag overrides. Unknown keys are
/// rejected when the merged document is deserialized.
pub fn layered_config<T>(file: Option<&Path>, overrides: Vec<(&[&str], Value)>) -> Result<(T, Value)>
where
    T: Default + Serialize + for<'de> Deserialize<'de>,
{
    let mut doc = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)?;
        let parsed: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !parsed.is_object() {
            return Err(Error::Config(format!("{} must hold a JSON object", path.display())));
        }
        merge_json(&mut doc, parsed);
    }
    for (path, value) in overrides {
        let mut nested = value;
        for key in path.iter().rev() {
            nested = json!({ *key: nested });
        }
        merge_json(&mut doc, nested);
    }
    let cfg = serde_json::from_value(doc.clone()).map_err(|e| Error::Config(e.to_string()))?;
    let echo = serde_json::to_value(&cfg)?;
    Ok((cfg, echo))
}

fn push<T: Serialize>(list: &mut Vec<(&'static [&'static str], Value)>, path: &'static [&'static str], v: Option<T>) {
    if let Some(v) = v {
        list.push((path, serde_json::to_value(v).expect("flag values serialize")));
    }
}

fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(f)
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn ppm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    Ok(files)
}

pub fn cmd_augment(args: &AugmentArgs) -> Result<Value> {
    let sources: Vec<(String, Image)> = match (&args.input, args.synthetic) {
        (Some(dir), _) => ppm_files(dir)?
            .into_iter()
            .map(|p| {
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                read_ppm(&p).map(|img| (stem, img))
            })
            .collect::<Result<_>>()?,
        (None, Some(n)) => generate_shapes(args.seed, n, args.image_side)?
            .items
            .into_iter()
            .enumerate()
            .map(|(i, it)| (format!("shape{i:05}"), it.image))
            .collect(),
        (None, None) => return Err(Error::Config("either --input or --synthetic is required".into())),
    };
    let policy = match (&args.policy, args.m) {
        (Some(path), _) => PolicySource::SubPolicies(load_policy_file(path)?),
        (None, 0.0) => PolicySource::Identity,
        (None, m) => PolicySource::RandAugment(RandAugmentConfig::new(args.n, m)?),
    };
    let strategy = if args.full_crop { CropStrategy::Full } else { args.strategy };
    std::fs::create_dir_all(&args.output)?;
    let written = with_threads(args.threads, || {
        sources
            .par_iter()
            .enumerate()
            .map(|(i, (stem, img))| -> Result<usize> {
                let mut rng = Rng::new(derive_seed(args.seed, i as u64));
                let views = make_views(img, args.views, strategy, &policy, args.side, &mut rng)?;
                for (v, view) in views.iter().enumerate() {
                    write_ppm(args.output.join(format!("{stem}_view{v}.ppm")), view)?;
                }
                Ok(views.len())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(json!({
        "count": written.iter().sum::<usize>(),
        "images": sources.len(),
        "seed": args.seed,
        "strategy": strategy,
        "policy": policy.describe(),
    }))
}

/// Linear side ratio for uniform crops, area fraction otherwise.
pub fn cmd_cropstats(args: &CropstatsArgs) -> Result<Value> {
    if args.samples == 0 {
        return Err(Error::Config("--samples must be at least 1".into()));
    }
    let mut rng = Rng::new(args.seed);
    let (h, w) = (args.height as f64, args.width as f64);
    let mut values = Vec::with_capacity(args.samples);
    let mut aspect = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..args.samples {
        let r = sample_crop(args.strategy, &mut rng, args.height, args.width)?;
        let v = match args.strategy {
            CropStrategy::Uniform => ((r.h as f64 / h) + (r.w as f64 / w)) / 2.0,
            _ => (r.h * r.w) as f64 / (h * w),
        };
        let a = r.w as f64 / r.h as f64;
        aspect = (aspect.0.min(a), aspect.1.max(a));
        values.push(v);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "strategy": args.strategy,
        "statistic": if args.strategy == CropStrategy::Uniform { "linear_ratio" } else { "area_fraction" },
        "samples": args.samples,
        "min": min,
        "max": max,
        "mean": mean,
        "std": std,
        "aspect_min": aspect.0,
        "aspect_max": aspect.1,
        "seed": args.seed,
    }))
}

pub fn pretrain_config(args: &PretrainArgs) -> Result<(TrainConfig, Value)> {
    let mut ov = Vec::new();
    push(&mut ov, &["epochs"], args.epochs);
    push(&mut ov, &["batch_size"], args.batch_size);
    push(&mut ov, &["seed"], args.seed);
    push(&mut ov, &["view_side"], args.view_side);
    push(&mut ov, &["crop_strategy"], args.strategy);
    push(&mut ov, &["randaugment", "N"], args.n);
    push(&mut ov, &["randaugment", "M"], args.m);
    push(&mut ov, &["optimizer", "base_lr"], args.base_lr);
    push(&mut ov, &["checkpoint_path"], args.checkpoint.clone());
    push(&mut ov, &["checkpoint_every"], args.checkpoint_every);
    push(&mut ov, &["log_path"], args.log.clone());
    if let Some(dir) = &args.data_dir {
        ov.push((&["data"], serde_json::to_value(DataSource::Directory { path: dir.clone() })?));
    }
    push(&mut ov, &["data", "n_per_class"], args.synthetic);
    layered_config(args.config.as_deref(), ov)
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<Value> {
    let (cfg, echo) = pretrain_config(args)?;
    with_threads(args.threads, || {
        let ds = cfg.data.load()?;
        let mut trainer = match &args.resume {
            Some(path) => Trainer::resume(cfg.clone(), ds.len(), path)?,
            None => Trainer::new(cfg.clone(), ds.len())?,
        };
        let start_epoch = trainer.epoch;
        let metrics = trainer.run_until(&ds, cfg.epochs)?;
        Ok(json!({
            "start_epoch": start_epoch,
            "epochs_run": metrics.len(),
            "steps": trainer.state.step,
            "final": metrics.last(),
            "checkpoint": cfg.checkpoint_path,
            "log": cfg.log_path,
            "config": echo,
        }))
    })
}

pub fn eval_config(args: &EvalArgs, fraction: Option<f64>) -> Result<(EvalConfig, Value)> {
    let mut ov = Vec::new();
    push(&mut ov, &["sgd", "epochs"], args.epochs);
    push(&mut ov, &["sgd", "lr"], args.lr);
    push(&mut ov, &["sgd", "batch_size"], args.batch_size);
    push(&mut ov, &["sgd", "seed"], args.seed);
    push(&mut ov, &["seed"], args.seed);
    push(&mut ov, &["view_side"], args.view_side);
    push(&mut ov, &["output"], args.output.clone());
    if let Some(dir) = &args.train_dir {
        ov.push((&["train"], serde_json::to_value(DataSource::Directory { path: dir.clone() })?));
    }
    if let Some(dir) = &args.test_dir {
        ov.push((&["test"], serde_json::to_value(DataSource::Directory { path: dir.clone() })?));
    }
    if fraction.is_some() && args.config.is_none() && args.epochs.is_none() {
        // Fine-tuning has its own schedule unless a file or flag says otherwise.
        ov.insert(0, (&["sgd"], serde_json::to_value(SgdConfig::finetune_default())?));
    }
    layered_config(args.config.as_deref(), ov)
}

fn load_encoder(args: &EvalArgs, cfg: &EvalConfig) -> Result<crate::nn::Network<f32>> {
    let specs = build_default_nets(cfg.view_side, &cfg.model)?;
    Ok(match &args.checkpoint {
        Some(path) => ModelParams::import(&specs, &load_checkpoint(path)?)?.encoder,
        None => ModelParams::init(&specs, cfg.seed)?.encoder,
    })
}

fn finish_report(mut report: Value, echo: Value, output: Option<&Path>) -> Result<Value> {
    report["config"] = echo;
    if let Some(path) = output {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

fn load_pair(cfg: &EvalConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    Ok((cfg.train.load()?, cfg.test.load()?))
}

pub fn cmd_lineval(args: &EvalArgs) -> Result<Value> {
    let (cfg, echo) = eval_config(args, None)?;
    with_threads(args.threads, || {
        let encoder = load_encoder(args, &cfg)?;
        let (train, test) = load_pair(&cfg)?;
        let report = linear_eval(&encoder, &train, &test, cfg.view_side, &cfg.sgd)?;
        finish_report(serde_json::to_value(report)?, echo, cfg.output.as_deref())
    })
}

pub fn cmd_finetune(args: &FinetuneArgs) -> Result<Value> {
    if !(args.fraction > 0.0 && args.fraction <= 1.0) {
        return Err(Error::BadFraction(args.fraction));
    }
    let (cfg, echo) = eval_config(&args.eval, Some(args.fraction))?;
    with_threads(args.eval.threads, || {
        let encoder = load_encoder(&args.eval, &cfg)?;
        let (train, test) = load_pair(&cfg)?;
        let report = finetune_fraction(&encoder, &train, &test, args.fraction, cfg.view_side, &cfg.sgd)?;
        finish_report(serde_json::to_value(report)?, echo, cfg.output.as_deref())
    })
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

pub fn cmd_bench(args: &BenchArgs) -> Result<Value> {
    if args.iters == 0 {
        return Err(Error::Config("--iters must be at least 1".into()));
    }
    if args.pipeline != "crop+augment" {
        return Err(Error::Config(format!("unknown pipeline {:?} (expected crop+augment)", args.pipeline)));
    }
    let sources: Vec<Image> = (0..args.iters)
        .map(|i| {
            let mut rng = Rng::new(derive_seed(args.seed, i as u64));
            Image::from_fn(args.size, args.size, |_, _| {
                [rng.range(256) as u8, rng.range(256) as u8, rng.range(256) as u8]
            })
        })
        .collect();
    let policy = PolicySource::RandAugment(RandAugmentConfig::default());
    let start = Instant::now();
    let views = with_threads(args.threads, || {
        sources
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let mut rng = Rng::new(derive_seed(derive_seed(args.seed, u64::MAX), i as u64));
                make_two_views(img, CropStrategy::Uniform, &policy, args.side, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    let digest = views.iter().fold(FNV_OFFSET, |h, (a, b)| fnv1a(&encode_ppm(b), fnv1a(&encode_ppm(a), h)));

    let mut per_op = BTreeMap::new();
    let probe = &sources[0];
    let time = |f: &mut dyn FnMut() -> Result<()>| -> Result<f64> {
        let t = Instant::now();
        for _ in 0..args.iters {
            f()?;
        }
        Ok(t.elapsed().as_secs_f64() * 1e6 / args.iters as f64)
    };
    let mut rng = Rng::new(args.seed);
    for kind in TransformKind::ALL {
        let micros = time(&mut || {
            magnitude_to_params(kind, 9.0, &mut rng)?.apply(probe)?;
            Ok(())
        })?;
        per_op.insert(kind.name().to_string(), micros);
    }
    let mut crop_rng = Rng::new(args.seed);
    per_op.insert(
        "crop".into(),
        time(&mut || {
            sample_crop(CropStrategy::Uniform, &mut crop_rng, probe.height(), probe.width())?.extract(probe)?;
            Ok(())
        })?,
    );
    per_op.insert(
        "resize".into(),
        time(&mut || {
            resize_bilinear(probe, args.side, args.side)?;
            Ok(())
        })?,
    );
    Ok(json!({
        "pipeline": args.pipeline,
        "iters": args.iters,
        "size": args.size,
        "threads": args.threads,
        "seed": args.seed,
        "images_per_sec": args.iters as f64 / elapsed.max(1e-9),
        "per_op_micros": per_op,
        "digest": format!("{digest:016x}"),
    }))
}

pub fn run(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Augment(a) => cmd_augment(a),
        Command::Cropstats(a) => cmd_cropstats(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Lineval(a) => cmd_lineval(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli).and_then(|v| print_json(&v)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
