//! Batch front end: train models, evaluate baselines, run guided-perturbation
//! refinement, and emit ablation artifacts as CSV files.
//!
//! Every command writes a `manifest.json` that pins the full argument vector,
//! seeds, dataset fingerprint, and model hash; `rerun` replays a manifest
//! into a fresh output directory and reproduces all data CSVs byte for byte.
//! Measured wall times go to separate `*timings*.csv` files, which are the
//! only non-deterministic outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench;
use crate::data::{self, ClsSample, SegSample, SynthConfig};
use crate::error::{GpError, Result};
use crate::gp::{PerturbConfig, PerturbVariant};
use crate::knn;
use crate::model_io;
use crate::network::Network;
use crate::trainer::{self, ArchId, TrainConfig, TrainSet};

#[derive(Parser, Debug)]
#[command(name = "gpnet", about = "Guided-perturbation test-time refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded digit dataset as IDX files (MNIST layout).
    GenData(GenDataArgs),
    /// Train a baseline model and write a GPN1 model file.
    Train(TrainArgs),
    /// Evaluate a segmentation model with and without guided perturbation.
    Eval(EvalArgs),
    /// Sweep epsilon over a grid and emit the mIoU curve.
    SweepEpsilon(SweepArgs),
    /// Compare pseudo-label variants at their best epsilon.
    AblateVariants(AblateArgs),
    /// Truncated-refinement trade-off: mIoU and wall time per layer.
    TruncateBench(TruncateArgs),
    /// Guided-perturbation k-NN classification evaluation.
    KnnEval(KnnEvalArgs),
    /// Replay a previous run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10000)]
    pub train_count: usize,
    #[arg(long, default_value_t = 2000)]
    pub test_count: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// mnist_20_50_500_10 | cifar_64x2_128x4_10 | toyfcn
    #[arg(long)]
    pub arch: String,
    /// synth:seed=..,count=..,size=..,classes=..,sigma=..  or  idx:images=..,labels=..
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Build a feature index over the training set (classifier models).
    #[arg(long, default_value_t = false)]
    pub with_index: bool,
    /// Feature layer for the index; defaults to the last hidden layer.
    #[arg(long)]
    pub feature_layer: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub eps: f64,
    #[arg(long, default_value = "gp_onehot")]
    pub variant: String,
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    #[arg(long, default_value = "INPUT")]
    pub truncate_at: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: String,
    /// "lo:step:hi" or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    pub eps_grid: String,
    #[arg(long, default_value = "gp_onehot")]
    pub variant: String,
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: String,
    #[arg(long, allow_hyphen_values = true)]
    pub eps_grid: String,
    /// Comma-separated variant names; defaults to all five.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TruncateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: String,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    /// Comma-separated truncation points, e.g. "INPUT,pool1,pool2".
    /// Naming a pooling layer perturbs that pool's output.
    #[arg(long)]
    pub layers: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct KnnEvalArgs {
    /// Model file with an embedded feature index.
    #[arg(long)]
    pub model: PathBuf,
    /// Test set: idx:images=..,labels=..
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Single epsilon, or a grid via --eps-grid.
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub eps_grid: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Everything needed to re-run a command bit-identically.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub rng_seed: u64,
    pub dataset_fingerprint: Option<String>,
    pub model_hash: Option<String>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: BTreeMap<String, f64>,
}

/// Entry point used by the binary and by tests. `args` excludes the binary
/// name.
pub fn run<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(std::iter::once("gpnet".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| GpError::InvalidArgument(e.to_string()))?;
    dispatch(cli.command, argv)
}

fn dispatch(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::GenData(a) => cmd_gen_data(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Eval(a) => cmd_eval(a, argv),
        Command::SweepEpsilon(a) => cmd_sweep_epsilon(a, argv),
        Command::AblateVariants(a) => cmd_ablate_variants(a, argv),
        Command::TruncateBench(a) => cmd_truncate_bench(a, argv),
        Command::KnnEval(a) => cmd_knn_eval(a, argv),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

// ---------------------------------------------------------------------------
// dataset specs

#[derive(Debug, Clone)]
pub enum DatasetSpec {
    Synth(SynthConfig),
    Idx { images: PathBuf, labels: PathBuf },
}

pub fn parse_dataset(spec: &str) -> Result<DatasetSpec> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| GpError::InvalidArgument(format!("dataset spec `{spec}` has no kind")))?;
    let mut fields = BTreeMap::new();
    for pair in rest.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            GpError::InvalidArgument(format!("bad dataset field `{pair}` in `{spec}`"))
        })?;
        fields.insert(k.to_string(), v.to_string());
    }
    match kind {
        "synth" => {
            let mut cfg = SynthConfig::default();
            for (k, v) in &fields {
                match k.as_str() {
                    "seed" => cfg.seed = parse_num(v)?,
                    "count" => cfg.count = parse_num(v)?,
                    "size" => cfg.size = parse_num(v)?,
                    "classes" => cfg.num_classes = parse_num(v)?,
                    "sigma" => cfg.sigma = parse_num(v)?,
                    _ => {
                        return Err(GpError::InvalidArgument(format!(
                            "unknown synth field `{k}`"
                        )))
                    }
                }
            }
            Ok(DatasetSpec::Synth(cfg))
        }
        "idx" => {
            let images = fields
                .get("images")
                .ok_or_else(|| GpError::InvalidArgument("idx spec needs images=".into()))?;
            let labels = fields
                .get("labels")
                .ok_or_else(|| GpError::InvalidArgument("idx spec needs labels=".into()))?;
            Ok(DatasetSpec::Idx {
                images: images.into(),
                labels: labels.into(),
            })
        }
        other => Err(GpError::InvalidArgument(format!(
            "unknown dataset kind `{other}`"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| GpError::InvalidArgument(format!("bad number `{s}`")))
}

fn dataset_fingerprint(spec: &DatasetSpec) -> Result<String> {
    match spec {
        DatasetSpec::Synth(cfg) => Ok(format!(
            "synth:seed={},count={},size={},classes={},sigma={}",
            cfg.seed, cfg.count, cfg.size, cfg.num_classes, cfg.sigma
        )),
        DatasetSpec::Idx { images, labels } => {
            Ok(format!("idx:{}+{}", file_sha256(images)?, file_sha256(labels)?))
        }
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex_digest(&bytes))
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_seg_dataset(spec: &DatasetSpec) -> Result<Vec<SegSample>> {
    match spec {
        DatasetSpec::Synth(cfg) => data::gen_synthetic_seg(cfg),
        DatasetSpec::Idx { .. } => Err(GpError::InvalidArgument(
            "this command needs a segmentation dataset (synth:...)".into(),
        )),
    }
}

fn load_cls_dataset(spec: &DatasetSpec, mean: Option<f64>) -> Result<Vec<ClsSample>> {
    match spec {
        DatasetSpec::Idx { images, labels } => match mean {
            Some(m) => data::load_mnist_normalized(images, labels, m),
            None => data::load_mnist(images, labels),
        },
        DatasetSpec::Synth(_) => Err(GpError::InvalidArgument(
            "this command needs a classification dataset (idx:...)".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// commands

fn cmd_gen_data(a: GenDataArgs, argv: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    fs::create_dir_all(&a.out_dir)?;
    let (train_images, train_labels) = data::gen_digits(a.seed, a.train_count);
    let (test_images, test_labels) = data::gen_digits(a.seed.wrapping_add(1), a.test_count);
    data::write_idx_images(&a.out_dir.join("train-images.idx"), &train_images, 28, 28)?;
    data::write_idx_labels(&a.out_dir.join("train-labels.idx"), &train_labels)?;
    data::write_idx_images(&a.out_dir.join("test-images.idx"), &test_images, 28, 28)?;
    data::write_idx_labels(&a.out_dir.join("test-labels.idx"), &test_labels)?;
    let mut manifest = manifest_for("gen-data", argv, a.seed);
    manifest.outputs = vec![
        "train-images.idx".into(),
        "train-labels.idx".into(),
        "test-images.idx".into(),
        "test-labels.idx".into(),
    ];
    manifest
        .wall_time_seconds
        .insert("total".into(), t0.elapsed().as_secs_f64());
    write_manifest(&a.out_dir, &manifest)
}

fn cmd_train(a: TrainArgs, argv: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    fs::create_dir_all(&a.out_dir)?;
    let arch = ArchId::parse(&a.arch)?;
    let spec = parse_dataset(&a.dataset)?;
    let mut cfg = TrainConfig::defaults_for(arch);
    cfg.rng_seed = a.seed;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }

    let mut net = trainer::build_arch(arch, a.seed)?;
    let mut index = None;
    let report;
    match (&spec, arch) {
        (DatasetSpec::Synth(_), ArchId::ToyFcn) => {
            let mut samples = load_seg_dataset(&spec)?;
            let means = data::channel_means(samples.iter().map(|s| &s.image));
            for s in &mut samples {
                s.image = data::normalize(&s.image, &means)?;
            }
            net.channel_means = means;
            report = trainer::train(&mut net, &TrainSet::Segmentation(&samples), &cfg)?;
        }
        (DatasetSpec::Idx { images, labels }, _) => {
            let raw = data::read_idx_images(images)?;
            let mean = data::channel_means(raw.iter())[0];
            let samples = data::load_mnist_normalized(images, labels, mean)?;
            net.channel_means = vec![mean];
            report = trainer::train(&mut net, &TrainSet::Classification(&samples), &cfg)?;
            if a.with_index {
                let feature_layer = match &a.feature_layer {
                    Some(l) => l.clone(),
                    None => default_feature_layer(&net)?,
                };
                index = Some(knn::build_index(&net, &samples, &feature_layer)?);
            }
        }
        _ => {
            return Err(GpError::InvalidArgument(format!(
                "architecture {} does not match dataset `{}`",
                arch.as_str(),
                a.dataset
            )))
        }
    }

    let model_path = a.out_dir.join("model.gpn");
    model_io::save_model(&model_path, &net, index.as_ref())?;
    let mut loss_csv = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        loss_csv.push_str(&format!("{i},{l:.12}\n"));
    }
    fs::write(a.out_dir.join("loss.csv"), loss_csv)?;

    let mut manifest = manifest_for("train", argv, a.seed);
    manifest.dataset_fingerprint = Some(dataset_fingerprint(&spec)?);
    manifest.model_hash = Some(file_sha256(&model_path)?);
    manifest.outputs = vec!["model.gpn".into(), "loss.csv".into()];
    manifest
        .wall_time_seconds
        .insert("total".into(), t0.elapsed().as_secs_f64());
    write_manifest(&a.out_dir, &manifest)
}

/// Last hidden layer before the classifier output: the layer feeding the
/// final linear layer, skipping activations.
fn default_feature_layer(net: &Network) -> Result<String> {
    use crate::layers::LayerKind;
    let n = net.layers().len();
    for layer in net.layers()[..n.saturating_sub(1)].iter().rev() {
        if matches!(layer.kind, LayerKind::Linear { .. } | LayerKind::Conv2d { .. }) {
            return Ok(layer.name.clone());
        }
    }
    Err(GpError::InvalidArgument(
        "no hidden layer available as feature layer".into(),
    ))
}

fn gp_config(eps: f64, variant: &str, iterations: usize, truncate_at: &str, seed: u64, net: &Network) -> Result<PerturbConfig> {
    Ok(PerturbConfig {
        epsilon: eps,
        variant: PerturbVariant::parse(variant)?,
        iterations,
        truncate_at: bench::resolve_truncation(net, truncate_at)?,
        rng_seed: seed,
    })
}

fn cmd_eval(a: EvalArgs, argv: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    fs::create_dir_all(&a.out_dir)?;
    let (net, _) = model_io::load_model(&a.model)?;
    let spec = parse_dataset(&a.dataset)?;
    let samples = load_seg_dataset(&spec)?;
    let cfg = gp_config(a.eps, &a.variant, a.iterations, &a.truncate_at, a.seed, &net)?;
    let eval = bench::seg_eval(&net, &samples, &cfg)?;

    let mut csv = String::from("metric,value\n");
    csv.push_str(&format!("baseline_miou,{:.12}\n", eval.baseline_miou));
    csv.push_str(&format!("baseline_accuracy,{:.12}\n", eval.baseline_accuracy));
    csv.push_str(&format!("gp_miou,{:.12}\n", eval.gp_miou));
    csv.push_str(&format!("gp_accuracy,{:.12}\n", eval.gp_accuracy));
    csv.push_str(&format!("corrected_pixels,{}\n", eval.corrected_pixels));
    csv.push_str(&format!("corrupted_pixels,{}\n", eval.corrupted_pixels));
    fs::write(a.out_dir.join("metrics.csv"), csv)?;

    let mut per_class = String::from("class,baseline_iou,gp_iou\n");
    let base = eval.baseline_cm.per_class_iou();
    let gp = eval.gp_cm.per_class_iou();
    for (i, (b, g)) in base.iter().zip(&gp).enumerate() {
        per_class.push_str(&format!("{i},{},{}\n", fmt_opt(b), fmt_opt(g)));
    }
    fs::write(a.out_dir.join("per_class_iou.csv"), per_class)?;

    let mut timings = String::from("phase,seconds\n");
    timings.push_str(&format!("forward,{:.6}\n", eval.timings.forward));
    timings.push_str(&format!("backward,{:.6}\n", eval.timings.backward));
    timings.push_str(&format!("reforward,{:.6}\n", eval.timings.reforward));
    timings.push_str(&format!("total,{:.6}\n", eval.timings.total()));
    fs::write(a.out_dir.join("timings.csv"), timings)?;

    let mut manifest = manifest_for("eval", argv, a.seed);
    manifest.dataset_fingerprint = Some(dataset_fingerprint(&spec)?);
    manifest.model_hash = Some(file_sha256(&a.model)?);
    manifest.outputs = vec![
        "metrics.csv".into(),
        "per_class_iou.csv".into(),
        "timings.csv".into(),
    ];
    manifest
        .wall_time_seconds
        .insert("total".into(), t0.elapsed().as_secs_f64());
    write_manifest(&a.out_dir, &manifest)
}

fn fmt_opt(v: &Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.12}"))
}

pub fn parse_eps_grid(s: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = if let Some((lo, rest)) = s.split_once(':') {
        let (step, hi) = rest
            .split_once(':')
            .ok_or_else(|| GpError::InvalidArgument(format!("bad grid `{s}`")))?;
        bench::epsilon_grid(parse_num(lo)?, parse_num(step)?, parse_num(hi)?)
    } else {
        s.split(',')
            .filter(|p| !p.is_empty())
            .map(parse_num)
            .collect::<Result<_>>()?
    };
    if grid.is_empty() {
        return Err(GpError::InvalidArgument("empty epsilon grid".into()));
    }
    Ok(grid)
}

fn cmd_sweep_epsilon(a: SweepArgs, argv: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    fs::create_dir_all(&a.out_dir)?;
    let (net, _) = model_io::load_model(&a.model)?;
    let spec = parse_dataset(&a.dataset)?;
    let samples = load_seg_dataset(&spec)?;
    let grid = parse_eps_grid(&a.eps_grid)?;
    let cfg = gp_config(0.0, &a.variant, a.iterations, "INPUT", a.seed, &net)?;
    let points = bench::sweep_epsilon(&net, &samples, &grid, &cfg)?;

    let mut csv = String::from("epsilon,miou,accuracy\n");
    for p in &points {
        csv.push_str(&format!("{:.6},{:.12},{:.12}\n", p.epsilon, p.miou, p.accuracy));
    }
    fs::write(a.out_dir.join("sweep.csv"), csv)?;
    let svg = svg_line_plot(
        &points
            .iter()
            .map(|p| (p.epsilon, p.miou))
            .collect::<Vec<_>>(),
        "epsilon",
        "mIoU",
    );
    fs::write(a.out_dir.join("sweep.svg"), svg)?;

    let mut manifest = manifest_for("sweep-epsilon", argv, a.seed);
    manifest.dataset_fingerprint = Some(dataset_fingerprint(&spec)?);
    manifest.model_hash = Some(file_sha256(&a.model)?);
    manifest.outputs = vec!["sweep.csv".into(), "sweep.svg".into()];
    manifest
        .wall_time_seconds
        .insert("total".into(), t0.elapsed().as_secs_f64());
    write_manifest(&a.out_dir, &manifest)
}

fn cmd_ablate_variants(a: AblateArgs, argv: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    fs::create_dir_all(&a.out_dir)?;
    let (net, _) = model_io::load_model(&a.model)?;
    let spec = parse_dataset(&a.dataset)?;
    let samples = load_seg_dataset(&spec)?;
    let grid = parse_eps_grid(&a.eps_grid)?;
    let variants: Vec<PerturbVariant> = match &a.variants {
        None => PerturbVariant::ALL.to_vec(),
        Some(s) => s
            .split(',')
            .filter(|p| !p.is_empty())
            .map(PerturbVariant::parse)
            .collect::<Result<_>>()?,
    };
    let cfg = gp_config(0.0, "gp_onehot", 1, "INPUT", a.seed, &net)?;
    let results = bench::ablate_variants(&net, &samples, &variants, &grid, &cfg)?;

    let mut csv = String::from("variant,best_epsilon,best_miou\n");
    for r in &results {
        csv.push_str(&format!(
            "{},{:.6},{:.12}\n",
            r.variant, r.best_epsilon, r.best_miou
        ));
    }
    fs::write(a.out_dir.join("variants.csv"), csv)?;

    let mut manifest = manifest_for("ablate-variants", argv, a.seed);
    manifest.dataset_fingerprint = Some(dataset_fingerprint(&spec)?);
    manifest.model_hash = Some(file_sha256(&a.model)?);
    manifest.outputs = vec!["variants.csv".into()];
    manifest
        .wall_time_seconds
        .insert("total".into(), t0.elapsed().as_secs_f64());
    write_manifest(&a.out_dir, &manifest)
}

fn cmd_truncate_bench(a: TruncateArgs, argv: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    fs::create_dir_all(&a.out_dir)?;
    let (net, _) = model_io::load_model(&a.model)?;
    let spec = parse_dataset(&a.dataset)?;
    let samples = load_seg_dataset(&spec)?;
    let layers: Vec<String> = a
        .layers
        .split(',')
        .filter(|p| !p.is_empty())
        .map(String::from)
        .collect();
    let cfg = gp_config(a.eps, "gp_onehot", 1, "INPUT", a.seed, &net)?;
    let rows = bench::truncate_bench(&net, &samples, &layers, &cfg)?;

    let mut csv = String::from("layer,miou\n");
    let mut timings = String::from("layer,mean_seconds_per_image\n");
    for r in &rows {
        csv.push_str(&format!("{},{:.12}\n", r.label, r.miou));
        timings.push_str(&format!("{},{:.6}\n", r.label, r.mean_seconds_per_image));
    }
    fs::write(a.out_dir.join("truncate.csv"), csv)?;
    fs::write(a.out_dir.join("truncate_timings.csv"), timings)?;

    let mut manifest = manifest_for("truncate-bench", argv, a.seed);
    manifest.dataset_fingerprint = Some(dataset_fingerprint(&spec)?);
    manifest.model_hash = Some(file_sha256(&a.model)?);
    manifest.outputs = vec!["truncate.csv".into(), "truncate_timings.csv".into()];
    manifest
        .wall_time_seconds
        .insert("total".into(), t0.elapsed().as_secs_f64());
    write_manifest(&a.out_dir, &manifest)
}

fn cmd_knn_eval(a: KnnEvalArgs, argv: Vec<String>) -> Result<()> {
    let t0 = Instant::now();
    fs::create_dir_all(&a.out_dir)?;
    let (net, index) = model_io::load_model(&a.model)?;
    let index = index.ok_or_else(|| {
        GpError::InvalidArgument("model file carries no feature index; train with --with-index".into())
    })?;
    let spec = parse_dataset(&a.dataset)?;
    let mean = *net.channel_means.first().ok_or_else(|| {
        GpError::InvalidArgument("model carries no channel means".into())
    })?;
    let test_set = load_cls_dataset(&spec, Some(mean))?;
    let grid = match (&a.eps, &a.eps_grid) {
        (Some(e), None) => vec![*e],
        (None, Some(g)) => parse_eps_grid(g)?,
        _ => {
            return Err(GpError::InvalidArgument(
                "pass exactly one of --eps or --eps-grid".into(),
            ))
        }
    };

    let mut csv = String::from(
        "epsilon,baseline_accuracy,gp_accuracy,corrected,corrupted,samples\n",
    );
    let mut best: Option<(f64, bench::KnnEval)> = None;
    for &eps in &grid {
        let eval = bench::knn_eval(&net, &index, &test_set, a.k, eps, knn::GradientSite::TestImage)?;
        csv.push_str(&format!(
            "{:.6},{:.12},{:.12},{},{},{}\n",
            eps, eval.baseline_accuracy, eval.gp_accuracy, eval.corrected, eval.corrupted,
            eval.samples
        ));
        if best
            .as_ref()
            .map_or(true, |(_, b)| eval.gp_accuracy > b.gp_accuracy)
        {
            best = Some((eps, eval));
        }
    }
    fs::write(a.out_dir.join("knn.csv"), csv)?;
    let (_, best_eval) = best.unwrap();
    let mut ids = String::from("corrected_id\n");
    for id in &best_eval.corrected_ids {
        ids.push_str(&format!("{id}\n"));
    }
    fs::write(a.out_dir.join("corrected_ids.csv"), ids)?;

    let mut manifest = manifest_for("knn-eval", argv, 0);
    manifest.dataset_fingerprint = Some(dataset_fingerprint(&spec)?);
    manifest.model_hash = Some(file_sha256(&a.model)?);
    manifest.outputs = vec!["knn.csv".into(), "corrected_ids.csv".into()];
    manifest
        .wall_time_seconds
        .insert("total".into(), t0.elapsed().as_secs_f64());
    write_manifest(&a.out_dir, &manifest)
}

fn cmd_rerun(a: RerunArgs) -> Result<()> {
    let bytes = fs::read(&a.manifest)?;
    let manifest: RunManifest = serde_json::from_slice(&bytes)
        .map_err(|e| GpError::Format(format!("bad manifest: {e}")))?;
    let mut argv = manifest.argv.clone();
    let mut replaced = false;
    for i in 0..argv.len() {
        if argv[i] == "--out-dir" && i + 1 < argv.len() {
            argv[i + 1] = a.out_dir.display().to_string();
            replaced = true;
        }
    }
    if !replaced {
        return Err(GpError::InvalidArgument(
            "manifest argv has no --out-dir to redirect".into(),
        ));
    }
    run(argv)
}

// ---------------------------------------------------------------------------
// manifest and plot helpers

fn manifest_for(command: &str, argv: Vec<String>, seed: u64) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        argv,
        rng_seed: seed,
        dataset_fingerprint: None,
        model_hash: None,
        outputs: Vec::new(),
        wall_time_seconds: BTreeMap::new(),
    }
}

fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| GpError::Format(format!("manifest serialization: {e}")))?;
    fs::write(out_dir.join("manifest.json"), json)?;
    Ok(())
}

/// Minimal SVG polyline rendering of a curve; the CSV stays the artifact of
/// record.
fn svg_line_plot(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let (w, h, margin) = (640.0, 400.0, 50.0);
    let (x_min, x_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
    let (y_min, y_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    let x_span = (x_max - x_min).max(1e-12);
    let y_span = (y_max - y_min).max(1e-12);
    let path: String = points
        .iter()
        .map(|&(x, y)| {
            let px = margin + (x - x_min) / x_span * (w - 2.0 * margin);
            let py = h - margin - (y - y_min) / y_span * (h - 2.0 * margin);
            format!("{px:.1},{py:.1}")
        })
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">
<rect width="{w}" height="{h}" fill="white"/>
<polyline points="{path}" fill="none" stroke="steelblue" stroke-width="2"/>
<text x="{:.0}" y="{:.0}" text-anchor="middle">{x_label}</text>
<text x="16" y="{:.0}" transform="rotate(-90 16 {:.0})" text-anchor="middle">{y_label}</text>
</svg>
"#,
        w / 2.0,
        h - 12.0,
        h / 2.0,
        h / 2.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_spec_parsing() {
        let spec = parse_dataset("synth:seed=3,count=10,size=32,classes=4,sigma=0.2").unwrap();
        match spec {
            DatasetSpec::Synth(cfg) => {
                assert_eq!(cfg.seed, 3);
                assert_eq!(cfg.count, 10);
                assert_eq!(cfg.size, 32);
                assert_eq!(cfg.sigma, 0.2);
            }
            _ => panic!("wrong kind"),
        }
        assert!(parse_dataset("bogus").is_err());
        assert!(parse_dataset("synth:zzz=1").is_err());
        assert!(parse_dataset("idx:images=a").is_err());
    }

    #[test]
    fn eps_grid_parsing() {
        let g = parse_eps_grid("-0.2:0.1:0.2").unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[0] + 0.2).abs() < 1e-12);
        assert!((g[4] - 0.2).abs() < 1e-12);
        let g = parse_eps_grid("0.1,0.5").unwrap();
        assert_eq!(g, vec![0.1, 0.5]);
        assert!(parse_eps_grid("").is_err());
    }

    #[test]
    fn missing_dataset_is_usage_error() {
        let err = run(["train", "--arch", "mnist", "--out-dir", "/tmp/x"]).unwrap_err();
        assert!(matches!(err, GpError::InvalidArgument(_)));
    }
}
