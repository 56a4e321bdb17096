use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use brt_core::align::{align_burst, PyramidConfig};
use brt_core::proxnet::NetConfig;
use brt_core::train::{evaluate, AmsGradConfig, TrainConfig, Trainer, TrainingSample};
use clap::{Args, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synthesize::DatasetInfo;
use super::Status;
use crate::burst_io::{read_sample, sample_dirs, TaskName, DATASET_FILE};
use crate::config::resolve;
use crate::manifest::{sibling, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum WarpMode {
    /// Transforms recorded at synthesis.
    Oracle,
    /// ECC estimates; samples with a failed frame are dropped.
    Estimated,
}

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Checkpoint path; rewritten after every epoch.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    /// Expected dataset task; checked against the dataset.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskName>,
    /// Samples held out from the end of the dataset for validation.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_count: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warps: Option<WarpMode>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_decay_every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_decay_factor: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_min: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz_safety: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainCommandConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub task: Option<TaskName>,
    pub val_count: Option<usize>,
    pub warps: WarpMode,
    pub depth: usize,
    pub filters: usize,
    pub iterations: usize,
    pub truncation: usize,
    pub learning_rate: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub s_max: f64,
    pub s_min: f64,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lipschitz_safety: bool,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let n = NetConfig::default();
        Self {
            dataset: None,
            out: None,
            resume: None,
            task: None,
            val_count: None,
            warps: WarpMode::Oracle,
            depth: n.depth,
            filters: n.filters,
            iterations: t.iterations,
            truncation: t.truncation,
            learning_rate: t.learning_rate,
            lr_decay_every: t.lr_decay_every,
            lr_decay_factor: t.lr_decay_factor,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            s_max: t.s_max,
            s_min: t.s_min,
            pretrain_epochs: t.pretrain_epochs,
            pretrain_learning_rate: t.pretrain_learning_rate,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            eps: t.optimizer.eps,
            lipschitz_safety: t.lipschitz_safety,
        }
    }
}

impl TrainCommandConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            truncation: self.truncation,
            learning_rate: self.learning_rate,
            lr_decay_every: self.lr_decay_every,
            lr_decay_factor: self.lr_decay_factor,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            s_max: self.s_max,
            s_min: self.s_min,
            pretrain_epochs: self.pretrain_epochs,
            pretrain_learning_rate: self.pretrain_learning_rate,
            optimizer: AmsGradConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps },
            lipschitz_safety: self.lipschitz_safety,
        }
    }

    fn net_config(&self) -> NetConfig {
        NetConfig { depth: self.depth, filters: self.filters, ..NetConfig::default() }
    }
}

fn load_dataset(dir: &Path, expected: Option<TaskName>, warps: WarpMode) -> Result<(Vec<TrainingSample>, Vec<PathBuf>)> {
    let info_path = dir.join(DATASET_FILE);
    let info: DatasetInfo = serde_json::from_str(
        &std::fs::read_to_string(&info_path).with_context(|| format!("{} is not a synthesized dataset", dir.display()))?,
    )
    .with_context(|| format!("parsing {}", info_path.display()))?;
    if let Some(t) = expected {
        if t != info.task {
            bail!("config expects a {t:?} dataset but {} holds {:?} samples", dir.display(), info.task);
        }
    }
    let dirs = sample_dirs(dir)?;
    if dirs.is_empty() {
        bail!("no samples in {}", dir.display());
    }
    let loaded: Vec<Option<TrainingSample>> = dirs
        .par_iter()
        .map(|d| {
            let (sample, task) = read_sample(d)?;
            if task != info.task {
                bail!("{} is a {task:?} sample in a {:?} dataset", d.display(), info.task);
            }
            if warps == WarpMode::Oracle {
                return Ok(Some(sample));
            }
            let results = align_burst(&sample.burst, &PyramidConfig::default())?;
            if results.iter().any(|r| !r.converged) {
                warn!("{}: alignment failed, sample dropped", d.display());
                return Ok(None);
            }
            let transforms = results.iter().map(|r| r.frame_transform()).collect();
            Ok(Some(TrainingSample::new(sample.burst, transforms, sample.gt, sample.op, sample.sigma)?))
        })
        .collect::<Result<_>>()?;
    Ok((loaded.into_iter().flatten().collect(), dirs))
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

pub fn run(config: Option<&Path>, args: &TrainArgs) -> Result<Status> {
    let started = Instant::now();
    let cfg: TrainCommandConfig = resolve(config, args)?;
    let dataset = cfg.dataset.clone().context("--dataset is required")?;
    let out = cfg.out.clone().context("--out is required")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    cfg.net_config().validate()?;

    let (samples, dirs) = load_dataset(&dataset, cfg.task, cfg.warps)?;
    let n = samples.len();
    if n == 0 {
        bail!("every sample was dropped");
    }
    let val_count = cfg.val_count.unwrap_or(if n >= 2 { (n / 10).max(1) } else { 0 });
    if val_count >= n {
        bail!("--val-count {val_count} leaves no training samples out of {n}");
    }
    let mut train = samples;
    let mut val = train.split_off(n - val_count);
    if val.is_empty() {
        warn!("no held-out samples; validation PSNR is measured on the training set");
        val = train.clone();
    }

    let mut trainer = match &cfg.resume {
        Some(path) => {
            let t = Trainer::resume(train_cfg.clone(), path).with_context(|| format!("resuming from {}", path.display()))?;
            if t.params.config != cfg.net_config() {
                bail!("checkpoint network {:?} differs from the configured one", t.params.config);
            }
            info!("resumed at epoch {}", t.epoch);
            t
        }
        None => {
            let mut t = Trainer::new(train_cfg.clone(), cfg.net_config())?;
            t.pretrain(&train, train_cfg.pretrain_epochs)?;
            t
        }
    };

    let log_path = sibling(&out, "log.csv");
    let append = cfg.resume.is_some() && log_path.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    if !append {
        writeln!(log, "epoch,loss,final_loss,learning_rate,val_psnr,seconds")?;
    }
    trainer.save(&out)?;
    while trainer.epoch < train_cfg.epochs {
        let t = Instant::now();
        let stats = trainer.train_epoch(&train)?;
        let val_psnr = evaluate(&trainer.params, &val)?;
        info!("epoch {}: validation PSNR {val_psnr:.2} dB", stats.epoch);
        writeln!(
            log,
            "{},{:e},{:e},{:e},{},{:.3}",
            stats.epoch,
            stats.loss,
            stats.final_loss,
            stats.learning_rate,
            fmt_db(val_psnr),
            t.elapsed().as_secs_f64()
        )?;
        trainer.save(&out)?;
    }

    let mut manifest = RunManifest::new("train", &cfg, Some(cfg.seed))?;
    manifest.inputs = dirs;
    manifest.inputs.extend(cfg.resume.clone());
    manifest.outputs = vec![out.clone(), out.with_extension("json"), brt_core::train::optimizer_path(&out), log_path];
    manifest.write(&sibling(&out, "run.json"), started)?;
    Ok(Status::Ok)
}
