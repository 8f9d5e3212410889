//! Command line surface. Every command that writes files also writes a
//! manifest next to them; `xcat rerun --manifest <file>` replays it.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use xcat_core::eval::{challenge_score, evaluate, ImagePair, PsnrMode};
use xcat_core::model::{mac_count, param_count_for, presets};
use xcat_core::quant::{calibrate, qforward, quantize_model, score_candidate, select_best};
use xcat_core::train::{train, TrainConfig};
use xcat_core::{Model, Tensor};

use crate::dataset::{load_hr_dir, load_images, load_paired_dirs};
use crate::format::{load_qmodel, load_weights, save_qmodel, save_weights};
use crate::image_io::{load_png, load_png_f32, save_png, save_png_f32};
use crate::manifest::{manifest_path_for, RunManifest};
use crate::report::{
    ablation_rows, unknown_config, write_ablation, write_eval_report, write_search_report, TrainLog,
};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "xcat",
    version,
    about = "Train, quantize and evaluate the xcat x3 super-resolution network"
)]
pub struct Cli {
    /// Seed for every random draw (initialization, sampling, augmentation).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Run single-threaded so results do not depend on scheduling.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Train from scratch (stage one) and optionally fine-tune (stage two).
    Train(TrainArgs),
    /// Super-resolve one PNG.
    Infer(InferArgs),
    /// Quantize a float model calibrated on representative images.
    Quantize(QuantizeArgs),
    /// Pick the representative image that gives the best quantized model.
    SearchRep(SearchArgs),
    /// PSNR report of a float and/or quantized model on a dataset.
    Eval(EvalArgs),
    /// Parameter and MAC table of named configurations.
    Ablate(AblateArgs),
    /// Parameter and MAC counts of one configuration.
    Count(CountArgs),
    /// Replay the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rgb,
    Y,
}

impl From<Metric> for PsnrMode {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Rgb => PsnrMode::Rgb,
            Metric::Y => PsnrMode::Y,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory of HR PNG images; LR inputs are derived by bicubic downsampling.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints, logs and the manifest.
    #[arg(long, default_value = "xcat-run")]
    pub out: PathBuf,
    /// Named architecture (see `ablate` for the list).
    #[arg(long, default_value = presets::BASELINE)]
    pub config: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub minibatches: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// HR patch size; must be a multiple of the scale.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Run the MSE fine-tuning stage after stage one, or alone with `--from`.
    #[arg(long)]
    pub stage2: bool,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub from: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    /// Float weights, or a quantized model with `--quantized`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Run integer inference on a quantized model file.
    #[arg(long)]
    pub quantized: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Representative LR image(s) used for calibration.
    #[arg(long, required = true, num_args = 1..)]
    pub representative: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of candidate representative images.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Directory of HR validation images.
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::Rgb)]
    pub metric: Metric,
    /// Quantized model built from the best candidate.
    #[arg(long)]
    pub output: PathBuf,
    /// CSV table of candidate scores.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub qmodel: Option<PathBuf>,
    /// Directory of HR images.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of LR images with the same file names; derived by bicubic
    /// downsampling when absent.
    #[arg(long)]
    pub lr_data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Metric::Rgb)]
    pub metric: Metric,
    /// Measured runtime; adds the challenge score to the summary.
    #[arg(long)]
    pub runtime_ms: Option<f64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    /// Comma-separated names or ablation letters; every preset when absent.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<String>>,
    /// LR height used for the total MAC column.
    #[arg(long, default_value_t = 360)]
    pub height: usize,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CountArgs {
    #[arg(long, default_value = presets::BASELINE)]
    pub config: String,
    #[arg(long, default_value_t = 360)]
    pub height: usize,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run_from<I, S>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv)?;
    execute(&cli, &argv)
}

pub fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    let ctx = Ctx { cli, argv };
    match &cli.command {
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Infer(a) => cmd_infer(&ctx, a),
        Command::Quantize(a) => cmd_quantize(&ctx, a),
        Command::SearchRep(a) => cmd_search_rep(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::Count(a) => cmd_count(a),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    argv: &'a [String],
}

impl Ctx<'_> {
    fn manifest(
        &self,
        command: &str,
        config: impl Serialize,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        at: &Path,
    ) -> Result<()> {
        RunManifest {
            command: command.into(),
            argv: self.argv.to_vec(),
            config: serde_json::to_value(config)?,
            seed: self.cli.seed,
            deterministic: self.cli.deterministic,
            inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
        .write(at)
    }
}

fn preset(name: &str) -> Result<xcat_core::XcatConfig> {
    presets::preset(name).ok_or_else(|| unknown_config(name))
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    load_weights(path).with_context(|| format!("loading weights {}", path.display()))
}

#[derive(Serialize)]
struct TrainManifestConfig<'a> {
    args: &'a TrainArgs,
    architecture: xcat_core::XcatConfig,
    stage_one: Option<TrainConfig>,
    stage_two: Option<TrainConfig>,
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let seed = ctx.cli.seed;
    if let Some(from) = &a.from {
        if !from.is_file() {
            bail!("checkpoint {} does not exist", from.display());
        }
    }
    let mut model = match &a.from {
        Some(p) => load_model(p)?,
        None => Model::build_residual(preset(&a.config)?, seed)?,
    };
    let data = load_hr_dir(&a.data, model.config().scale)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let apply = |mut c: TrainConfig, seed: u64| {
        c.epochs = a.epochs.unwrap_or(c.epochs);
        c.minibatches_per_epoch = a.minibatches.unwrap_or(c.minibatches_per_epoch);
        c.batch_size = a.batch.unwrap_or(c.batch_size);
        c.crop_hr = a.crop.unwrap_or(c.crop_hr);
        c.seed = seed;
        c
    };
    let run_one = !(a.stage2 && a.from.is_some());
    let stage_one = run_one.then(|| apply(TrainConfig::stage_one(), seed));
    let stage_two = a
        .stage2
        .then(|| apply(TrainConfig::stage_two(), seed.wrapping_add(1)));

    let mut outputs = Vec::new();
    let run_stage =
        |model: &mut Model<f32>, cfg: &TrainConfig, log_name: &str| -> Result<PathBuf> {
            let log_path = a.out.join(log_name);
            let mut log = TrainLog::create(&log_path)?;
            let start = Instant::now();
            let mut log_err = None;
            train(model, cfg, &data, |s| {
                info!(
                    "{:?} epoch {}: lr {:.6} loss {:.6}",
                    cfg.stage, s.epoch, s.lr, s.mean_loss
                );
                if let Err(e) = log.append(s, start.elapsed().as_secs_f64()) {
                    log_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = log_err {
                return Err(e);
            }
            Ok(log_path)
        };
    if let Some(cfg) = &stage_one {
        outputs.push(run_stage(&mut model, cfg, "train_log.csv")?);
        if stage_two.is_some() {
            let p = a.out.join("stage1.hxsr");
            save_weights(&model, &p)?;
            outputs.push(p);
        }
    }
    if let Some(cfg) = &stage_two {
        outputs.push(run_stage(&mut model, cfg, "train_log_stage2.csv")?);
    }
    let ckpt = a.out.join("model.hxsr");
    save_weights(&model, &ckpt)?;
    outputs.push(ckpt);

    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.from.clone());
    let config = TrainManifestConfig {
        args: a,
        architecture: *model.config(),
        stage_one,
        stage_two,
    };
    ctx.manifest(
        "train",
        config,
        inputs,
        outputs,
        &a.out.join("train.manifest.json"),
    )
}

fn cmd_infer(ctx: &Ctx, a: &InferArgs) -> Result<()> {
    if a.quantized {
        let qm = load_qmodel(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
        let lr = load_png(&a.input)?;
        save_png(&qforward(&qm, &lr)?, &a.output)?;
    } else {
        let m = load_model(&a.model)?;
        let lr = load_png_f32(&a.input)?;
        save_png_f32(&m.forward(&lr)?, &a.output)?;
    }
    ctx.manifest(
        "infer",
        a,
        vec![a.model.clone(), a.input.clone()],
        vec![a.output.clone()],
        &manifest_path_for(&a.output),
    )
}

fn cmd_quantize(ctx: &Ctx, a: &QuantizeArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let images = a
        .representative
        .iter()
        .map(|p| load_png_f32(p))
        .collect::<Result<Vec<_>, _>>()?;
    let qm = quantize_model(&m, &calibrate(&m, &images)?)?;
    save_qmodel(&qm, &a.output)?;
    let mut inputs = vec![a.model.clone()];
    inputs.extend(a.representative.iter().cloned());
    ctx.manifest(
        "quantize",
        a,
        inputs,
        vec![a.output.clone()],
        &manifest_path_for(&a.output),
    )
}

fn cmd_search_rep(ctx: &Ctx, a: &SearchArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let candidates = load_images(&a.candidates)?;
    let val: Vec<ImagePair> = load_hr_dir(&a.val, m.config().scale)?;
    let mode = PsnrMode::from(a.metric);
    let score = |(_, img): &(String, Tensor<f32>)| score_candidate(&m, img, &val, mode);
    let scores: Vec<f64> = if ctx.cli.deterministic {
        candidates.iter().map(score).collect()
    } else {
        candidates.par_iter().map(score).collect()
    };
    let best = select_best(&scores).expect("candidate list is non-empty");
    if !scores[best].is_finite() {
        bail!("no candidate produced a usable quantized model");
    }
    let ids: Vec<String> = candidates.iter().map(|(id, _)| id.clone()).collect();
    info!("selected {} ({:.4} dB)", ids[best], scores[best]);
    let qm = quantize_model(
        &m,
        &calibrate(&m, std::slice::from_ref(&candidates[best].1))?,
    )?;
    save_qmodel(&qm, &a.output)?;
    write_search_report(
        std::fs::File::create(&a.report)
            .with_context(|| format!("creating {}", a.report.display()))?,
        &ids,
        &scores,
        best,
    )?;
    ctx.manifest(
        "search-rep",
        a,
        vec![a.model.clone(), a.candidates.clone(), a.val.clone()],
        vec![a.output.clone(), a.report.clone()],
        &manifest_path_for(&a.output),
    )
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    if a.model.is_none() && a.qmodel.is_none() {
        bail!("eval needs --model and/or --qmodel");
    }
    let model = a.model.as_deref().map(load_model).transpose()?;
    let qmodel = a
        .qmodel
        .as_deref()
        .map(|p| load_qmodel(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let scale = model
        .as_ref()
        .map(|m| m.config().scale)
        .or(qmodel.as_ref().map(|q| q.config().scale))
        .unwrap_or(3);
    let pairs = match &a.lr_data {
        Some(lr) => load_paired_dirs(&a.data, lr)?,
        None => load_hr_dir(&a.data, scale)?,
    };
    let report = evaluate(model.as_ref(), qmodel.as_ref(), &pairs, a.metric.into())?;
    for (id, reason) in &report.skipped {
        warn!("skipped {id}: {reason}");
    }
    let score = match a.runtime_ms {
        Some(ms) => {
            let psnr = match report.mean_uint8() {
                Some(p) => p,
                None => {
                    warn!("no quantized model given; scoring the float PSNR");
                    report.mean_fp32().context("no image could be evaluated")?
                }
            };
            Some(challenge_score(psnr.as_f64(), ms)?)
        }
        None => None,
    };
    match &a.report {
        Some(path) => {
            let mut f = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            write_eval_report(&mut f, &report, score)?;
            let mut inputs: Vec<PathBuf> = a.model.iter().chain(&a.qmodel).cloned().collect();
            inputs.push(a.data.clone());
            inputs.extend(a.lr_data.clone());
            ctx.manifest(
                "eval",
                a,
                inputs,
                vec![path.clone()],
                &manifest_path_for(path),
            )?;
        }
        None => write_eval_report(&mut std::io::stdout().lock(), &report, score)?,
    }
    Ok(())
}

fn resolve_rows(rows: &Option<Vec<String>>) -> Vec<String> {
    match rows {
        Some(r) => r
            .iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        None => presets::names(),
    }
}

fn cmd_ablate(ctx: &Ctx, a: &AblateArgs) -> Result<()> {
    let names = resolve_rows(&a.rows);
    let rows = ablation_rows(&names, a.height, a.width)?;
    match &a.out {
        Some(path) => {
            write_ablation(
                std::fs::File::create(path)
                    .with_context(|| format!("creating {}", path.display()))?,
                &rows,
            )?;
            ctx.manifest(
                "ablate",
                a,
                vec![],
                vec![path.clone()],
                &manifest_path_for(path),
            )?;
        }
        None => write_ablation(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn cmd_count(a: &CountArgs) -> Result<()> {
    let cfg = preset(&a.config)?;
    let p = param_count_for(&cfg);
    let mut out = std::io::stdout().lock();
    writeln!(out, "config {}", a.config)?;
    writeln!(out, "trainable {}", p.trainable)?;
    writeln!(out, "fixed {}", p.fixed)?;
    writeln!(out, "macs_per_pixel {}", mac_count(&cfg, 1, 1))?;
    writeln!(
        out,
        "macs {} at {}x{}",
        mac_count(&cfg, a.height, a.width),
        a.height,
        a.width
    )?;
    Ok(())
}

fn cmd_rerun(a: &RerunArgs) -> Result<()> {
    let m = RunManifest::read(&a.manifest)?;
    if m.argv.get(1).map(String::as_str) == Some("rerun") {
        bail!("manifest {} records a rerun", a.manifest.display());
    }
    info!("replaying: {}", m.argv.join(" "));
    run_from(m.argv)
}
