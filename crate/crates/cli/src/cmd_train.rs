//! The three training commands. Every run is a pure function of
//! (config, seed, input files): model initialization and each phase
//! draw from named splits of one root generator, so `--resume` simply
//! replays the whole trajectory and appends the trace records the
//! interrupted run had not yet written — the result is bit-identical
//! to an uninterrupted run.

use crate::checkpoint::Checkpoint;
use crate::config::{Overrides, PhaseKind, RunConfig};
use crate::error::{CliError, Result};
use crate::prep;
use crate::trace::{self, Manifest};
use attwarp_core::attention::AttentionModel;
use attwarp_core::data::Split;
use attwarp_core::encoder::SiameseEncoder;
use attwarp_core::rng::Rng;
use attwarp_core::train::{
    run_contrastive, run_plugin_three_step, run_pretrain, Phase, TraceRecord,
};
use clap::Args;
use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

#[derive(Debug, Args)]
pub struct CommonTrainArgs {
    /// Run config file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Override the phase's iteration budget (plug-in: all three steps).
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Override the phase's learning rate (plug-in: all three steps,
    /// replacing any configured grid).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Override the primary dataset path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Continue an interrupted run in the same output directory.
    #[arg(long)]
    pub resume: bool,
}

impl CommonTrainArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            max_iter: self.max_iter,
            lr: self.lr,
            data: self.data.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonTrainArgs,
    /// Start the attention module from this pre-training checkpoint
    /// instead of a fresh initialization.
    #[arg(long)]
    pub from_pretrain: Option<PathBuf>,
}

/// Run directory bookkeeping shared by the three commands: resolved
/// config written (and on resume, checked against the original),
/// existing trace length counted.
struct RunDir {
    out_dir: PathBuf,
    trace_path: PathBuf,
    skip: usize,
}

fn open_run_dir(cfg: &RunConfig, resume: bool) -> Result<RunDir> {
    let out_dir = cfg.resolved_out_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::data(format!("{}: {e}", out_dir.display())))?;
    let trace_path = out_dir.join("trace.jsonl");
    let resolved_path = out_dir.join("config.resolved.toml");
    let skip = if resume {
        if resolved_path.exists() {
            let existing = fs::read_to_string(&resolved_path)
                .map_err(|e| CliError::data(format!("{}: {e}", resolved_path.display())))?;
            if existing != cfg.canonical_toml()? {
                return Err(CliError::data(format!(
                    "cannot resume: this invocation resolves to a different config than {}",
                    resolved_path.display()
                )));
            }
        }
        trace::existing_records(&trace_path)?
    } else {
        if trace_path.exists() {
            return Err(CliError::data(format!(
                "{} already exists; pass --resume to continue it or pick a fresh --out-dir",
                trace_path.display()
            )));
        }
        0
    };
    cfg.write_resolved(&out_dir)?;
    Ok(RunDir {
        out_dir,
        trace_path,
        skip,
    })
}

fn min_validation(trace: &[TraceRecord], phase: Option<Phase>) -> Option<f64> {
    trace
        .iter()
        .filter(|r| phase.map_or(true, |p| r.phase == p))
        .filter_map(|r| r.validation)
        .fold(None, |best: Option<f64>, v| {
            Some(best.map_or(v, |b| b.min(v)))
        })
}

/// Writes trace/checkpoint/manifest and prints the metric summary.
fn finish_run(
    cfg: &RunConfig,
    dir: &RunDir,
    split: &Split,
    trace: &[TraceRecord],
    checkpoint: &Checkpoint,
    mut metrics: BTreeMap<String, f64>,
) -> Result<()> {
    let appended = trace::append_records(&dir.trace_path, trace, dir.skip)?;
    let ckpt_path = dir.out_dir.join(format!("{}.ckpt", checkpoint.phase));
    checkpoint.save(&ckpt_path)?;

    metrics.insert("iterations".into(), trace.len() as f64);
    if let Some(last) = trace.last() {
        metrics.insert("loss_final".into(), last.loss);
    }

    let mut manifest = Manifest::new(&cfg.name, cfg.seed, cfg.digest()?);
    manifest
        .data
        .insert("train".into(), cfg.data.path.clone());
    if let Some(p) = &cfg.data.val_path {
        manifest.data.insert("val".into(), p.clone());
    }
    if let Some(p) = &cfg.data.test_path {
        manifest.data.insert("test".into(), p.clone());
    }
    manifest
        .checkpoints
        .insert(checkpoint.phase.clone(), ckpt_path.clone());
    manifest.metrics = metrics.clone();
    manifest.write(&dir.out_dir)?;

    trace::print_metrics(&metrics);
    eprintln!(
        "{}: {} samples train / {} val; {} iterations ({} trace records appended); checkpoint {}",
        checkpoint.phase,
        split.train.len(),
        split.val.len(),
        trace.len(),
        appended,
        ckpt_path.display()
    );
    Ok(())
}

pub fn run_pretrain_cmd(common: &CommonTrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&common.config, &common.overrides(), PhaseKind::Pretrain)?;
    let dir = open_run_dir(&cfg, common.resume)?;
    let split = prep::prepare(&cfg.data, cfg.seed)?;
    let root = Rng::new(cfg.seed);
    let mut model = AttentionModel::new(
        cfg.arch.to_arch(split.train.dim()),
        &mut root.split("init-attention"),
    )?;
    let trace = run_pretrain(
        &mut model,
        &split.train,
        &split.val,
        &cfg.pretrain.to_config(),
        &mut root.split("pretrain"),
    )?;

    let mut metrics = BTreeMap::new();
    if let Some(v) = min_validation(&trace, None) {
        metrics.insert("val_best".into(), v);
    }
    let checkpoint = Checkpoint {
        phase: "pretrain".into(),
        iteration: trace.last().map_or(0, |r| r.iteration as u64),
        seed: cfg.seed,
        model,
        encoder: None,
    };
    finish_run(&cfg, &dir, &split, &trace, &checkpoint, metrics)
}

pub fn run_train_cmd(args: &TrainArgs) -> Result<()> {
    let common = &args.common;
    let cfg = RunConfig::load(&common.config, &common.overrides(), PhaseKind::Contrastive)?;
    let dir = open_run_dir(&cfg, common.resume)?;
    let split = prep::prepare(&cfg.data, cfg.seed)?;
    let arch = cfg.arch.to_arch(split.train.dim());
    let root = Rng::new(cfg.seed);
    let mut model = match &args.from_pretrain {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.model.arch() != &arch {
                return Err(CliError::data(format!(
                    "checkpoint architecture {:?} does not match configured {:?}",
                    ckpt.model.arch(),
                    arch
                )));
            }
            ckpt.model
        }
        None => AttentionModel::new(arch, &mut root.split("init-attention"))?,
    };
    let trace = run_contrastive(
        &mut model,
        &split.train,
        &split.val,
        &cfg.contrastive.to_config(),
        &mut root.split("contrastive"),
    )?;

    let mut metrics = BTreeMap::new();
    if let Some(v) = min_validation(&trace, None) {
        metrics.insert("val_best".into(), v);
    }
    if let Some(last) = trace.last() {
        if let Some(v) = last.loss_same {
            metrics.insert("loss_same_final".into(), v);
        }
        if let Some(v) = last.loss_diff {
            metrics.insert("loss_diff_final".into(), v);
        }
    }
    let checkpoint = Checkpoint {
        phase: "contrastive".into(),
        iteration: trace.last().map_or(0, |r| r.iteration as u64),
        seed: cfg.seed,
        model,
        encoder: None,
    };
    finish_run(&cfg, &dir, &split, &trace, &checkpoint, metrics)
}

pub fn run_plugin_cmd(common: &CommonTrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&common.config, &common.overrides(), PhaseKind::Plugin)?;
    let dir = open_run_dir(&cfg, common.resume)?;
    let split = prep::prepare(&cfg.data, cfg.seed)?;
    let enc_cfg = cfg.encoder.to_config(split.train.dim());
    let arch = cfg.arch.to_arch(enc_cfg.out_dim());

    // Each grid candidate replays the identical initialization and pair
    // streams, so candidates differ only in their learning rates. Ties
    // keep the earliest candidate.
    let candidates: Vec<[f64; 3]> = if cfg.plugin.lr_grid.is_empty() {
        vec![cfg.plugin.lrs]
    } else {
        cfg.plugin
            .lr_grid
            .iter()
            .map(|&g| [g, cfg.plugin.lrs[1], g])
            .collect()
    };

    struct Candidate {
        score: f64,
        lrs: [f64; 3],
        encoder: SiameseEncoder,
        model: AttentionModel,
        trace: Vec<TraceRecord>,
    }
    let mut best: Option<Candidate> = None;
    for lrs in candidates {
        let root = Rng::new(cfg.seed);
        let mut encoder = SiameseEncoder::new(enc_cfg.clone(), &mut root.split("init-encoder"))?;
        let mut model = AttentionModel::new(arch.clone(), &mut root.split("init-attention"))?;
        let mut pcfg = cfg.plugin.to_config();
        pcfg.lrs = lrs;
        let trace = run_plugin_three_step(
            &mut encoder,
            &mut model,
            &split.train,
            &split.val,
            &pcfg,
            &mut root.split("plugin"),
        )?;
        let score =
            min_validation(&trace, Some(Phase::PluginStep3)).unwrap_or(f64::INFINITY);
        if best.as_ref().map_or(true, |b| score < b.score) {
            best = Some(Candidate {
                score,
                lrs,
                encoder,
                model,
                trace,
            });
        }
    }
    let won = best.expect("at least one learning-rate candidate runs");

    let mut metrics = BTreeMap::new();
    for (key, phase) in [
        ("val_step1", Phase::PluginStep1),
        ("val_step2", Phase::PluginStep2),
        ("val_step3", Phase::PluginStep3),
    ] {
        if let Some(v) = min_validation(&won.trace, Some(phase)) {
            metrics.insert(key.into(), v);
        }
    }
    metrics.insert("lr_step1".into(), won.lrs[0]);
    metrics.insert("lr_step3".into(), won.lrs[2]);
    let checkpoint = Checkpoint {
        phase: "plugin".into(),
        iteration: won.trace.last().map_or(0, |r| r.iteration as u64),
        seed: cfg.seed,
        model: won.model,
        encoder: Some(won.encoder),
    };
    finish_run(&cfg, &dir, &split, &won.trace, &checkpoint, metrics)
}
