//! `dilacount` command-line driver.
//!
//! Every subcommand prints its fully resolved configuration as a single
//! `config {...}` JSON line before doing any work. Exit status is 0 on
//! success, 1 on runtime failure and 2 on a usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dilacount_core::augmentation::make_patches;
use dilacount_core::ga::{run_ga_with, write_best_json, write_ga_log, GaConfig, TrainingFitness};
use dilacount_core::ground_truth::{generate_density_map, downsample_density, DensityMap, GtConfig};
use dilacount_core::io::checkpoint::{read_checkpoint, write_checkpoint};
use dilacount_core::io::manifest::{load_samples, ANNOTATIONS_DIR, DENSITY_DIR, IMAGES_DIR};
use dilacount_core::io::{write_annotation_csv, write_dmap, DatasetManifest, GrayImage, Split};
use dilacount_core::metrics::{count_from_map, evaluate};
use dilacount_core::network::{init_weights_with, make_desk_config, InitScheme, Model, ModelConfig, OUTPUT_STRIDE};
use dilacount_core::synthetic::{generate_synthetic_dataset, SyntheticSceneSpec};
use dilacount_core::training::{train_with, write_epoch_log, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "dilacount", version, about = "Crowd counting with dilated convolutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Shared {
    /// Seed for every random stream of the run.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset root (contains train/, val/, test/).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output path (directory or file, depending on the command).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic crowd dataset.
    Synth(SynthArgs),
    /// Write ground-truth density maps for a dataset.
    GenGt(GenGtArgs),
    /// Cut training images into quarter and random patches, plus mirrors.
    Augment(AugmentArgs),
    /// Train the desk-scale network.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Predict the density map and count for one image.
    Predict(PredictArgs),
    /// Search back-end dilation rates with the genetic algorithm.
    GaSearch(GaArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long, default_value_t = 160)]
    train: usize,
    #[arg(long, default_value_t = 40)]
    val: usize,
    #[arg(long, default_value_t = 0)]
    test: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 5)]
    min_heads: usize,
    #[arg(long, default_value_t = 20)]
    max_heads: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

#[derive(Debug, Args)]
struct GenGtArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    downsample: usize,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[command(flatten)]
    shared: Shared,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f32,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    /// Model configuration JSON; defaults to the desk network with `--genes`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Back-end dilation rates for the desk network.
    #[arg(long, value_delimiter = ',', default_value = "2,2,2,2")]
    genes: Vec<usize>,
    /// Weight init: `fan-in` or `gaussian` (N(0, 0.01²) everywhere).
    #[arg(long, default_value = "fan-in", value_parser = parse_init)]
    init: InitScheme,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    /// Also write per-image counts to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Debug, Args)]
struct GaArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long, default_value_t = 7)]
    generations: usize,
    #[arg(long, default_value_t = 7)]
    population: usize,
    #[arg(long, default_value_t = 0.4)]
    retain: f64,
    #[arg(long, default_value_t = 0.2)]
    mutation: f64,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    rates: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    epochs_per_candidate: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f32,
    /// Weight init: `fan-in` or `gaussian` (N(0, 0.01²) everywhere).
    #[arg(long, default_value = "fan-in", value_parser = parse_init)]
    init: InitScheme,
}

fn parse_init(s: &str) -> Result<InitScheme, String> {
    match s {
        "fan-in" => Ok(InitScheme::FanIn),
        "gaussian" => Ok(InitScheme::GAUSSIAN),
        _ => Err(format!("unknown init `{s}` (expected fan-in or gaussian)")),
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::GenGt(a) => gen_gt(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::GaSearch(a) => ga_search(a),
    }
}

fn print_config(command: &str, value: serde_json::Value) {
    println!("config {}", json!({ "command": command, "settings": value }));
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref().with_context(|| format!("--{flag} is required"))
}

fn existing_splits(root: &Path) -> Vec<Split> {
    [Split::Train, Split::Val, Split::Test]
        .into_iter()
        .filter(|s| DatasetManifest::split_dir(root, *s).join(IMAGES_DIR).is_dir())
        .collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let out = required(&a.shared.out, "out")?;
    let spec = SyntheticSceneSpec {
        size: a.size,
        min_heads: a.min_heads,
        max_heads: a.max_heads,
        noise: a.noise,
        seed: a.shared.seed,
        ..Default::default()
    };
    print_config(
        "synth",
        json!({ "out": out, "train": a.train, "val": a.val, "test": a.test, "scene": spec }),
    );
    // Scene indices are disjoint across splits.
    let mut first = 0u64;
    for (split, n) in [(Split::Train, a.train), (Split::Val, a.val), (Split::Test, a.test)] {
        if n > 0 {
            generate_synthetic_dataset(&spec, n, first, out, split)?;
            println!("{split}: {n} images");
        }
        first += n as u64;
    }
    Ok(())
}

fn gen_gt(a: GenGtArgs) -> Result<()> {
    let root = required(&a.shared.dataset, "dataset")?;
    let config = GtConfig {
        beta: a.beta,
        k: a.k,
        downsample: a.downsample,
        ..Default::default()
    };
    print_config("gen-gt", json!({ "dataset": root, "gt": config }));
    config.validate()?;
    for split in existing_splits(root) {
        let manifest = DatasetManifest::scan(root, split)?;
        let dir = DatasetManifest::split_dir(root, split).join(DENSITY_DIR);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut total = 0.0;
        for entry in &manifest.entries {
            let image = entry.load_image()?;
            let annotation = entry.load_annotation(&image)?;
            let map = downsample_density(&generate_density_map(&annotation, &config)?, config.downsample)?;
            total += map.sum();
            write_dmap(dir.join(format!("{}.dmap", entry.stem)), &map)?;
        }
        println!("{split}: {} maps, total count {total:.3}", manifest.len());
    }
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let root = required(&a.shared.dataset, "dataset")?;
    let out = required(&a.shared.out, "out")?;
    print_config("augment", json!({ "dataset": root, "out": out, "seed": a.shared.seed }));
    let splits = existing_splits(root);
    if !splits.contains(&Split::Train) {
        bail!("{} has no train split", root.display());
    }
    for split in splits {
        let manifest = DatasetManifest::scan(root, split)?;
        let dir = DatasetManifest::split_dir(out, split);
        for sub in [IMAGES_DIR, ANNOTATIONS_DIR] {
            std::fs::create_dir_all(dir.join(sub)).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut written = 0;
        for (i, entry) in manifest.entries.iter().enumerate() {
            let image = entry.load_image()?;
            let annotation = entry.load_annotation(&image)?;
            if split != Split::Train {
                // Evaluation splits are copied unchanged.
                image.write(dir.join(IMAGES_DIR).join(format!("{}.pgm", entry.stem)))?;
                write_annotation_csv(dir.join(ANNOTATIONS_DIR).join(format!("{}.csv", entry.stem)), &annotation.points)?;
                written += 1;
                continue;
            }
            let seed = dilacount_core::rng::derive_seed(a.shared.seed, "augment", &[i as u64]);
            for (j, patch) in make_patches(&image, &annotation, &entry.stem, seed)?.into_iter().enumerate() {
                let stem = format!("{}_p{j:02}", entry.stem);
                patch.image.write(dir.join(IMAGES_DIR).join(format!("{stem}.pgm")))?;
                write_annotation_csv(dir.join(ANNOTATIONS_DIR).join(format!("{stem}.csv")), &patch.annotation.points)?;
                written += 1;
            }
        }
        println!("{split}: wrote {written} images");
    }
    Ok(())
}

fn load_split(root: &Path, split: Split) -> Result<Vec<dilacount_core::Sample>> {
    let manifest = DatasetManifest::scan(root, split)?;
    Ok(load_samples(&manifest, &GtConfig::default())?)
}

fn train(a: TrainArgs) -> Result<()> {
    let root = required(&a.shared.dataset, "dataset")?;
    let out = required(&a.shared.out, "out")?;
    let config: ModelConfig = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => make_desk_config(&a.genes)?,
    };
    config.validate()?;
    let tc = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.shared.seed,
        shuffle: true,
    };
    print_config(
        "train",
        json!({ "dataset": root, "out": out, "train": tc, "init": a.init, "model": config }),
    );
    tc.validate()?;
    let train_set = load_split(root, Split::Train)?;
    let val_set = load_split(root, Split::Val)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let weights = init_weights_with(&config, a.shared.seed, a.init);
    let (weights, logs) = train_with(&config, weights, &train_set, &val_set, &tc, |l| {
        println!(
            "epoch {:>4}  loss {:>12.6}  val_mae {:>9.4}  val_mse {:>9.4}  {:.2}s",
            l.epoch, l.loss, l.val_mae, l.val_mse, l.seconds
        );
    })?;
    write_epoch_log(out.join("epochs.csv"), &logs)?;
    write_checkpoint(out.join("model.ckpt"), &Model::new(config, weights)?)?;
    println!("wrote {}", out.join("model.ckpt").display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let root = required(&a.shared.dataset, "dataset")?;
    let split: Split = a.split.parse()?;
    print_config(
        "eval",
        json!({ "dataset": root, "checkpoint": a.checkpoint, "split": split, "csv": a.csv }),
    );
    let model = read_checkpoint(&a.checkpoint)?;
    let manifest = DatasetManifest::scan(root, split)?;
    let samples = load_samples(&manifest, &GtConfig::default())?;
    let mut pred = Vec::with_capacity(samples.len());
    let mut gt = Vec::with_capacity(samples.len());
    for s in &samples {
        pred.push(count_from_map(model.forward(&s.image)?.data())?);
        gt.push(s.count());
    }
    let report = evaluate(&pred, &gt)?;
    println!("images {}", report.len());
    println!("MAE {:.3}", report.mae);
    println!("MSE {:.3}", report.mse);
    if let Some(path) = &a.csv {
        let mut text = String::from("image,predicted,ground_truth\n");
        for (entry, (p, g)) in manifest.entries.iter().zip(&report.counts) {
            text.push_str(&format!("{},{p:?},{g:?}\n", entry.stem));
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let out = required(&a.shared.out, "out")?;
    print_config("predict", json!({ "checkpoint": a.checkpoint, "image": a.image, "out": out }));
    let model = read_checkpoint(&a.checkpoint)?;
    let image = GrayImage::read(&a.image)?;
    let pred = model.forward(&image.to_tensor())?;
    let count = count_from_map(pred.data())?;
    let s = pred.shape();
    let map = DensityMap::new(s.height, s.width, OUTPUT_STRIDE, pred.data().iter().map(|v| v.max(0.0)).collect())?;
    write_dmap(out, &map)?;
    println!("count {count:.3}");
    Ok(())
}

fn ga_search(a: GaArgs) -> Result<()> {
    let root = required(&a.shared.dataset, "dataset")?;
    let out = required(&a.shared.out, "out")?;
    let config = GaConfig {
        generations: a.generations,
        population: a.population,
        retain_rate: a.retain,
        mutation_rate: a.mutation,
        rates: a.rates,
        epochs_per_candidate: a.epochs_per_candidate,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        init: a.init,
        seed: a.shared.seed,
        ..Default::default()
    };
    print_config("ga-search", json!({ "dataset": root, "out": out, "ga": config }));
    config.validate()?;
    let train_set = load_split(root, Split::Train)?;
    let val_set = load_split(root, Split::Val)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let evaluator = TrainingFitness::new(&config, &train_set, &val_set);
    let outcome = run_ga_with(&evaluator, &config, |log| {
        let (i, score) = log.best();
        println!(
            "generation {}  best {} (val_mae {:.4})",
            log.generation,
            log.candidates[i].0.label(),
            score
        );
    })?;
    write_ga_log(out.join("ga_log.csv"), &outcome.logs)?;
    write_best_json(out.join("best.json"), &outcome)?;
    println!("best {} val_mae {:.4}", outcome.best.label(), outcome.best_score);
    Ok(())
}
