use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use brt_core::train::{
    Augment, Dataset, DatasetConfig, GroundTruthSource, NoiseModel, NoiseSpec, SyntheticBurstSpec, WarpSource,
};
use clap::{Args, ValueEnum};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Status;
use crate::burst_io::{images_by_stem, write_sample, TaskName, DATASET_FILE};
use crate::config::{resolve, Level};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    Heteroskedastic,
    /// Gaussian level drawn per sample from 5/255 to 25/255.
    SampledGaussian,
    /// Shot and read noise drawn per sample.
    SampledHeteroskedastic,
}

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthesizeArgs {
    /// Directory of ground-truth images; procedural scenes when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Number of samples; defaults to one per ground-truth image.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burst_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_translation: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rotation_deg: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskName>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseKind>,
    /// Gaussian standard deviation, e.g. `25/255`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Level>,
    /// Signal-dependent variance coefficient.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Level>,
    /// Signal-independent standard deviation.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Level>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flips: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color_jitter: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_motion: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthesizeConfig {
    pub gt_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub count: Option<usize>,
    pub burst_size: usize,
    pub crop: usize,
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub task: TaskName,
    pub noise: NoiseKind,
    pub sigma: Level,
    pub alpha: Level,
    pub beta: Level,
    pub flips: bool,
    pub color_jitter: bool,
    pub zero_motion: bool,
    pub seed: u64,
}

impl Default for SynthesizeConfig {
    fn default() -> Self {
        let spec = SyntheticBurstSpec::default();
        Self {
            gt_dir: None,
            out_dir: None,
            count: None,
            burst_size: spec.burst_size,
            crop: spec.crop,
            max_translation: spec.max_translation,
            max_rotation_deg: spec.max_rotation_deg,
            task: TaskName::Denoise,
            noise: NoiseKind::Gaussian,
            sigma: Level(25.0 / 255.0),
            alpha: Level(1e-3),
            beta: Level(1e-2),
            flips: false,
            color_jitter: false,
            zero_motion: false,
            seed: 0,
        }
    }
}

/// Dataset-level metadata consumed by `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub task: TaskName,
    pub samples: usize,
    pub config: SynthesizeConfig,
}

impl SynthesizeConfig {
    fn noise_spec(&self) -> NoiseSpec {
        match self.noise {
            NoiseKind::Gaussian => NoiseSpec::Fixed { model: NoiseModel::Gaussian { sigma: self.sigma.0 } },
            NoiseKind::Heteroskedastic => NoiseSpec::Fixed {
                model: NoiseModel::Heteroskedastic { alpha: self.alpha.0, beta: self.beta.0 },
            },
            NoiseKind::SampledGaussian => NoiseSpec::SampledGaussian,
            NoiseKind::SampledHeteroskedastic => NoiseSpec::SampledHeteroskedastic,
        }
    }

    fn spec(&self) -> SyntheticBurstSpec {
        SyntheticBurstSpec {
            burst_size: self.burst_size,
            max_translation: self.max_translation,
            max_rotation_deg: self.max_rotation_deg,
            crop: self.crop,
            task: self.task.task(),
            augment: Augment { flips: self.flips, color_jitter: self.color_jitter },
            zero_motion: self.zero_motion,
        }
    }
}

pub fn sample_dir(out: &Path, i: usize) -> PathBuf {
    out.join(format!("sample_{i:05}"))
}

pub fn run(config: Option<&Path>, args: &SynthesizeArgs) -> Result<Status> {
    let started = Instant::now();
    let cfg: SynthesizeConfig = resolve(config, args)?;
    let out = cfg.out_dir.clone().context("--out-dir is required")?;
    let (source, count) = match &cfg.gt_dir {
        Some(dir) => {
            let images = images_by_stem(dir)?;
            if images.is_empty() {
                bail!("no .png or .brt images in {}", dir.display());
            }
            (GroundTruthSource::Directory { path: dir.clone() }, cfg.count.unwrap_or(images.len()))
        }
        None => (GroundTruthSource::Procedural, cfg.count.unwrap_or(10)),
    };
    if let NoiseSpec::Fixed { model } = cfg.noise_spec() {
        model.validate()?;
    }
    let dataset = Dataset::synthesize(&DatasetConfig {
        source,
        count,
        spec: cfg.spec(),
        noise: cfg.noise_spec(),
        warps: WarpSource::Oracle,
        seed: cfg.seed,
    })?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let written: Vec<Vec<PathBuf>> = dataset
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| write_sample(&sample_dir(&out, i), s, cfg.task))
        .collect::<Result<_>>()?;
    let info_path = out.join(DATASET_FILE);
    let info = DatasetInfo { task: cfg.task, samples: dataset.samples.len(), config: cfg.clone() };
    fs::write(&info_path, serde_json::to_string_pretty(&info)?)?;
    info!("wrote {} samples to {}", dataset.samples.len(), out.display());

    let mut manifest = RunManifest::new("synthesize", &cfg, Some(cfg.seed))?;
    manifest.inputs.extend(cfg.gt_dir.clone());
    manifest.outputs.push(info_path);
    manifest.outputs.extend(written.into_iter().flatten());
    manifest.write(&out.join("run.json"), started)?;
    Ok(Status::Ok)
}
