use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dermgan_core::codec::dataset::{
    self, discover_mask_ids, discover_packed_ids, read_isic_masks, read_packed_masks, read_rgb, write_isic_masks,
    write_packed, write_png, MASKS_DIR, PACKED_DIR,
};
use dermgan_core::codec::{self, split_ids, synth_dataset, to_model_space};
use dermgan_core::evaluation::{check_generator_params, predict_masks, render_grid};
use dermgan_core::gradcheck::{self, GradCheckOptions, Suite};
use dermgan_core::nn::checkpoint;
use dermgan_core::objectives::{train as run_training, RunOutputs};
use dermgan_core::{evaluate, Error, EvalOptions, NetConfig, SamplePair, TrainConfig};

use crate::manifest::{DataSource, RunManifest};
use crate::{
    EvalArgs, GradcheckArgs, PackArgs, Part, PredictArgs, Preset, TrainArgs, EXIT_INTEGRITY, EXIT_IO, EXIT_NUMERIC,
    EXIT_USAGE,
};

const DEFAULT_SPLIT: f64 = 0.75;
const SYNTH_SPLIT: f64 = 1.0;
const SYNTH_DIR: &str = "data";

/// Some files of a batch command failed; each was logged.
#[derive(Debug)]
struct BatchFailed {
    failed: usize,
    total: usize,
}

impl fmt::Display for BatchFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} samples failed", self.failed, self.total)
    }
}

impl std::error::Error for BatchFailed {}

#[derive(Debug)]
struct GradcheckFailed {
    failed: usize,
    total: usize,
}

impl fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} gradient checks failed", self.failed, self.total)
    }
}

impl std::error::Error for GradcheckFailed {}

#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Maps the first recognised cause in the chain to a process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::ShapeMismatch { .. } | Error::UnknownParameter(_) => EXIT_USAGE,
                Error::NonFinite { .. } | Error::Degenerate { .. } => EXIT_NUMERIC,
                Error::CorruptCheckpoint { .. } => EXIT_INTEGRITY,
                Error::EmptyDataset | Error::NoInput(_) | Error::Io { .. } | Error::Image { .. } | Error::Json(_) => {
                    EXIT_IO
                }
                Error::NonScalarRoot(_) | Error::MissingGradient(_) => 1,
            };
        }
        if cause.is::<UsageError>() || cause.is::<serde_json::Error>() {
            return EXIT_USAGE;
        }
        if cause.is::<GradcheckFailed>() {
            return EXIT_NUMERIC;
        }
        if cause.is::<BatchFailed>() || cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    1
}

pub fn train(args: TrainArgs) -> Result<()> {
    let manifest = match &args.manifest {
        Some(path) => RunManifest::read(path)?,
        None => resolve_manifest(&args)?,
    };
    manifest.net.validate()?;
    manifest.train.validate()?;
    let out = &args.out;

    let (train_ids, test_ids, samples) = load_training_data(&manifest, out)?;
    if args.manifest.is_some() && (train_ids != manifest.train_ids || test_ids != manifest.test_ids) {
        bail!(usage(
            "the dataset no longer matches the manifest (sample ids differ); cannot replay the run"
        ));
    }
    let manifest = RunManifest {
        train_ids,
        test_ids,
        ..manifest
    };
    if samples.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    manifest.write(out)?;
    log::info!(
        "training on {} samples ({} held out), image size {}, discriminator channels {}",
        samples.len(),
        manifest.test_ids.len(),
        manifest.net.image_size,
        manifest.net.disc_out_channels
    );

    let data: Vec<_> = samples.iter().map(to_model_space).collect();
    drop(samples);
    let outputs = RunOutputs { dir: out.clone() };
    let outcome = run_training(&data, &manifest.train, manifest.net, Some(&outputs))?;
    if let Some(last) = outcome.log.last() {
        log::info!(
            "done: loss_d {:.4}, loss_g {:.4} (l1 {:.4}); checkpoint {}",
            last.loss_d,
            last.loss_g_total,
            last.loss_g_l1,
            outputs.checkpoint_path().display()
        );
    }
    Ok(())
}

fn resolve_manifest(args: &TrainArgs) -> Result<RunManifest> {
    let defaults = TrainConfig::default();
    let net_defaults = NetConfig::default();
    let disc = args.disc_channels.unwrap_or(match args.preset {
        Some(Preset::Exp2) => 6,
        Some(Preset::Exp1) | None => 1,
    });
    let net = NetConfig {
        image_size: args.image_size.unwrap_or(net_defaults.image_size),
        base_width: args.base_width.unwrap_or(net_defaults.base_width),
        disc_out_channels: disc,
        ..net_defaults
    };
    let train = TrainConfig {
        lambda_l1: args.lambda_l1.unwrap_or(defaults.lambda_l1),
        lr: args.lr.unwrap_or(defaults.lr),
        beta1: args.beta1.unwrap_or(defaults.beta1),
        beta2: args.beta2.unwrap_or(defaults.beta2),
        epochs: args.epochs.unwrap_or(defaults.epochs),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        seed: args.seed.unwrap_or(defaults.seed),
        d_loss_weight: args.d_loss_weight.unwrap_or(defaults.d_loss_weight),
        checkpoint_every: args.checkpoint_every.map(|k| k as usize),
        ..defaults
    };
    let (data, split) = match (&args.data_dir, args.synth) {
        (Some(path), None) => {
            if !path.is_dir() {
                bail!(usage(format!("--data-dir {} is not a directory", path.display())));
            }
            let path = path.canonicalize().with_context(|| format!("cannot resolve {}", path.display()))?;
            (DataSource::Dir { path }, args.split.unwrap_or(DEFAULT_SPLIT))
        }
        (None, Some(count)) => (
            DataSource::Synth {
                count: count as usize,
                seed: args.synth_seed.unwrap_or(train.seed),
            },
            args.split.unwrap_or(SYNTH_SPLIT),
        ),
        _ => bail!(usage("exactly one of --data-dir and --synth is required")),
    };
    Ok(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        split_seed: train.seed,
        net,
        train,
        data,
        split,
        train_ids: Vec::new(),
        test_ids: Vec::new(),
    })
}

/// Returns the train ids, test ids and training samples (in id order).
fn load_training_data(m: &RunManifest, out: &Path) -> Result<(Vec<String>, Vec<String>, Vec<SamplePair>)> {
    let size = m.net.image_size as u32;
    match &m.data {
        DataSource::Synth { count, seed } => {
            let dir = out.join(SYNTH_DIR);
            let samples = synth_dataset(*count, size, *seed, &dir)?;
            let ids: Vec<String> = samples.iter().map(|s| s.id().to_string()).collect();
            let (train_ids, test_ids) = split_ids(&ids, m.split, m.split_seed)?;
            let train = samples
                .into_iter()
                .filter(|s| train_ids.binary_search_by(|id| id.as_str().cmp(s.id())).is_ok())
                .collect();
            Ok((train_ids, test_ids, train))
        }
        DataSource::Dir { path } => {
            let split = dataset::load_dataset(path, size, m.split, m.split_seed)?;
            let ids = |v: &[SamplePair]| v.iter().map(|s| s.id().to_string()).collect::<Vec<_>>();
            Ok((ids(&split.train), ids(&split.test), split.train))
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<(dermgan_core::ParamStore, NetConfig)> {
    let params = checkpoint::load(path)?;
    let net = checkpoint::infer_config(&params)
        .with_context(|| format!("{} does not hold a supported network", path.display()))?;
    Ok((params, net))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let (params, net) = load_checkpoint(&args.checkpoint)?;
    let size = net.image_size as u32;
    let samples = match args.part {
        Part::All => dataset::load_dataset(&args.data_dir, size, 1.0, args.split_seed)?.train,
        Part::Train => dataset::load_dataset(&args.data_dir, size, args.split, args.split_seed)?.train,
        Part::Test => dataset::load_dataset(&args.data_dir, size, args.split, args.split_seed)?.test,
    };
    if samples.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let opts = EvalOptions {
        empty_policy: args.empty_policy.into(),
        pooled: args.pooled,
        eval_samples: args.eval_samples as usize,
        eval_seed: args.eval_seed,
    };
    let report = evaluate(&params, &samples, &net, &opts)?;

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let json = args.out.join("metrics.json");
    fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", json.display()))?;
    let table = report.to_table();
    let txt = args.out.join("metrics.txt");
    fs::write(&txt, &table).with_context(|| format!("cannot write {}", txt.display()))?;
    if args.grid {
        let generator = check_generator_params(&net, &params)?;
        let predictions = samples
            .iter()
            .enumerate()
            .map(|(i, s)| predict_masks(&generator, &params, i, &s.image, s.id(), &opts))
            .collect::<dermgan_core::Result<Vec<_>>>()?;
        write_png(&render_grid(&samples, &predictions)?, &args.out.join("grid.png"))?;
    }
    print!("{table}");
    log::info!("{} samples, mean Jaccard {:.4}", report.sample_count, report.mean_jaccard());
    Ok(())
}

fn require_dir(dir: PathBuf) -> Result<PathBuf> {
    let has_files = fs::read_dir(&dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if has_files {
        Ok(dir)
    } else {
        Err(Error::NoInput(dir).into())
    }
}

/// Runs `job` on every id, logging failures; fails if any id failed.
fn run_batch(ids: &[String], mut job: impl FnMut(&str) -> Result<()>) -> Result<()> {
    let mut failed = 0;
    for id in ids {
        if let Err(e) = job(id) {
            log::error!("ISIC_{id}: {e:#}");
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(BatchFailed {
            failed,
            total: ids.len(),
        }
        .into());
    }
    Ok(())
}

pub fn pack(args: PackArgs) -> Result<()> {
    let dir = require_dir(args.data_dir.join(MASKS_DIR))?;
    let ids = discover_mask_ids(&args.data_dir)?;
    if ids.is_empty() {
        return Err(Error::NoInput(dir).into());
    }
    run_batch(&ids, |id| {
        let loaded = read_isic_masks(&args.data_dir, id)?.ok_or_else(|| Error::NoInput(dir.clone()))?;
        for attr in &loaded.missing {
            log::warn!("ISIC_{id}: no {} mask, writing an empty channel", attr.label());
        }
        write_packed(&args.out, &loaded.masks)?;
        Ok(())
    })?;
    log::info!("packed {} samples into {}", ids.len(), args.out.join(PACKED_DIR).display());
    Ok(())
}

pub fn unpack(args: PackArgs) -> Result<()> {
    let dir = require_dir(args.data_dir.join(PACKED_DIR))?;
    let ids = discover_packed_ids(&args.data_dir)?;
    if ids.is_empty() {
        return Err(Error::NoInput(dir).into());
    }
    run_batch(&ids, |id| {
        let masks = read_packed_masks(&args.data_dir, id)?.ok_or_else(|| Error::NoInput(dir.clone()))?;
        write_isic_masks(&args.out, &masks)?;
        Ok(())
    })?;
    log::info!("unpacked {} samples into {}", ids.len(), args.out.join(MASKS_DIR).display());
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let suites: Vec<Suite> = if args.all {
        Suite::ALL.to_vec()
    } else {
        args.ops
            .iter()
            .map(|name| {
                Suite::from_name(name).ok_or_else(|| {
                    let valid: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
                    usage(format!("unknown op `{name}`; expected one of: {}", valid.join(", ")))
                })
            })
            .collect::<Result<_>>()?
    };
    let opts = GradCheckOptions {
        eps: args.eps,
        seed: args.seed,
    };
    dermgan_core::graph::fault::break_tanh_derivative(args.break_tanh);
    let mut reports = Vec::new();
    for precision in args.precision.list() {
        for suite in &suites {
            for report in gradcheck::check_suite(*suite, precision, &opts)? {
                println!("{report}");
                reports.push(report);
            }
        }
    }
    dermgan_core::graph::fault::break_tanh_derivative(false);
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} of {} checks passed", reports.len() - failed, reports.len());
    if failed > 0 {
        return Err(GradcheckFailed {
            failed,
            total: reports.len(),
        }
        .into());
    }
    Ok(())
}

/// `ISIC_0012345.jpg` -> `0012345`; other names keep their stem.
fn image_id(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    stem.strip_prefix("ISIC_").unwrap_or(stem).to_string()
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let (params, net) = load_checkpoint(&args.checkpoint)?;
    let generator = check_generator_params(&net, &params)?;
    let image = read_rgb(&args.image)?;
    let id = image_id(&args.image);
    let opts = EvalOptions {
        eval_samples: args.eval_samples as usize,
        eval_seed: args.eval_seed,
        ..EvalOptions::default()
    };
    let masks = predict_masks(&generator, &params, 0, &image, &id, &opts)?;
    let (a, b) = codec::pack(&masks);
    let pa = args.out.join(format!("ISIC_{id}_packA.png"));
    let pb = args.out.join(format!("ISIC_{id}_packB.png"));
    write_png(&a, &pa)?;
    write_png(&b, &pb)?;
    for attr in dermgan_core::Attribute::ALL {
        log::info!("{:<18} {} px", attr.label(), masks.get(attr).count());
    }
    log::info!("wrote {} and {}", pa.display(), pb.display());
    Ok(())
}
