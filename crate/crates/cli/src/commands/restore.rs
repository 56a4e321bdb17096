use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use brt_core::align::PyramidConfig;
use brt_core::image::{load_image, psnr, psnr_srgb, save_native, save_png, save_png16};
use brt_core::ops::{build_warp, Interpolation};
use brt_core::proxnet::ProxNetParams;
use brt_core::solver::{self, IterationTrace, ProxKind, SolverConfig, SolverOptions};
use brt_core::{Burst, Image, PixelSpace};
use clap::{Args, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use super::align::pyramid;
use super::Status;
use crate::burst_io::{LoadedBurst, TaskName, TransformsFile, GT_FILE};
use crate::config::{parse_frames, resolve, Level};
use crate::manifest::{sibling, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProxName {
    Network,
    Identity,
    SoftThreshold,
}

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RestoreArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burst: Option<PathBuf>,
    /// Output path; `.brt`, `.linrgb.png`, `.srgb.png` and `.trace.csv`
    /// files are written next to it.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prox: Option<ProxName>,
    /// Soft-threshold weight.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Iteration count for classical priors; networks use their own.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Noise level, e.g. `25/255`; defaults to the burst metadata.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Level>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskName>,
    /// Known frame warps; frames are aligned with ECC when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transforms: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<usize>,
    /// Burst-size sweep such as `2..16` or `2,4,8`; needs ground truth.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<String>,
    /// Ground truth for PSNR; defaults to `gt.brt` in the burst directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz_safety: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search_radius: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RestoreConfig {
    pub burst: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub prox: ProxName,
    pub lambda: f64,
    pub iterations: Option<usize>,
    pub sigma: Option<Level>,
    pub task: Option<TaskName>,
    pub transforms: Option<PathBuf>,
    pub reference: Option<usize>,
    pub frames: Option<String>,
    pub gt: Option<PathBuf>,
    pub lipschitz_safety: bool,
    pub levels: usize,
    pub max_iterations: usize,
    pub acceptance_threshold: f64,
    pub search_radius: usize,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        let p = PyramidConfig::default();
        Self {
            burst: None,
            out: None,
            checkpoint: None,
            prox: ProxName::Network,
            lambda: 0.5,
            iterations: None,
            sigma: None,
            task: None,
            transforms: None,
            reference: None,
            frames: None,
            gt: None,
            lipschitz_safety: false,
            levels: p.levels,
            max_iterations: p.max_iterations_per_level,
            acceptance_threshold: p.acceptance_threshold,
            search_radius: p.search_radius,
        }
    }
}

struct Restorer {
    solver: SolverConfig,
    op: brt_core::ops::DegradationOp,
    oracle: Option<TransformsFile>,
    pyramid: PyramidConfig,
}

impl Restorer {
    /// Restores the frames at `keep`; the burst reference must be among them.
    fn restore(&self, burst: &Burst, keep: &[usize]) -> Result<(Image, IterationTrace)> {
        let subset = burst.select(keep)?;
        match &self.oracle {
            Some(file) => {
                let (h, w, _) = burst.dims();
                let all = file.transforms(h, w);
                let warps = keep
                    .iter()
                    .map(|&i| build_warp(&all[i], burst.dims(), Interpolation::Bilinear))
                    .collect::<brt_core::Result<Vec<_>>>()?;
                Ok(solver::run(&subset, &warps, self.op, &self.solver)?)
            }
            None => {
                let (img, _, trace) = solver::run_with_alignment(&subset, self.op, &self.solver, &self.pyramid)?;
                Ok((img, trace))
            }
        }
    }
}

/// Reference plus the first `n - 1` other frames, in burst order.
fn first_frames(burst: &Burst, n: usize) -> Vec<usize> {
    let r = burst.reference_index();
    let mut keep: Vec<usize> = (0..burst.len()).filter(|&i| i != r).take(n - 1).collect();
    keep.push(r);
    keep.sort_unstable();
    keep
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn run(config: Option<&Path>, args: &RestoreArgs) -> Result<Status> {
    let started = Instant::now();
    let cfg: RestoreConfig = resolve(config, args)?;
    let dir = cfg.burst.clone().context("--burst is required")?;
    let out = cfg.out.clone().context("--out is required")?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let loaded = LoadedBurst::read(&dir, cfg.task)?;
    let burst = loaded.burst(cfg.reference)?;
    let task = loaded.task();
    let sigma = cfg
        .sigma
        .map(|l| l.0)
        .or(loaded.meta.as_ref().and_then(|m| m.sigma))
        .unwrap_or(25.0 / 255.0);

    let network = match (&cfg.checkpoint, cfg.prox) {
        (Some(path), ProxName::Network) => {
            let (params, _) = ProxNetParams::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            Some(Arc::new(params))
        }
        (None, ProxName::Network) => bail!("--prox network needs --checkpoint"),
        _ => None,
    };
    let options = SolverOptions {
        iterations: cfg.iterations,
        sigma,
        prox: match cfg.prox {
            ProxName::Network => ProxKind::Network,
            ProxName::Identity => ProxKind::Identity,
            ProxName::SoftThreshold => ProxKind::SoftThreshold { lambda: cfg.lambda },
        },
        lipschitz_safety: cfg.lipschitz_safety,
    };
    let oracle = cfg.transforms.as_ref().map(|p| TransformsFile::read(p)).transpose()?;
    if let Some(o) = &oracle {
        if o.frames.len() != burst.len() {
            bail!("{} transforms for {} frames", o.frames.len(), burst.len());
        }
    }
    let restorer = Restorer {
        solver: options.build(network)?,
        op: task.task().degradation(),
        oracle,
        pyramid: pyramid(cfg.levels, cfg.max_iterations, cfg.acceptance_threshold, cfg.search_radius),
    };

    let mut manifest = RunManifest::new("restore", &cfg, None)?;
    manifest.inputs = loaded.files.clone();
    manifest.inputs.extend(cfg.checkpoint.clone());
    manifest.inputs.extend(cfg.transforms.clone());

    if let Some(spec) = &cfg.frames {
        let sizes = parse_frames(spec)?;
        if let Some(&b) = sizes.iter().find(|&&b| b > burst.len()) {
            bail!("sweep asks for {b} frames but the burst has {}", burst.len());
        }
        let gt_path = cfg.gt.clone().unwrap_or_else(|| dir.join(GT_FILE));
        let gt = load_image(&gt_path, PixelSpace::LinearRgb).with_context(|| format!("sweep needs ground truth at {}", gt_path.display()))?;
        manifest.inputs.push(gt_path);
        let mut csv = String::from("frames,psnr_linrgb,psnr_srgb\n");
        for b in sizes {
            let (img, trace) = restorer.restore(&burst, &first_frames(&burst, b))?;
            manifest.warnings.extend(trace.warnings.iter().map(|w| format!("B={b}: {w}")));
            let (lin, srgb) = (psnr(&img, &gt, 1.0)?, psnr_srgb(&img, &gt)?);
            info!("B={b}: {lin:.2} dB linear, {srgb:.2} dB sRGB");
            writeln!(csv, "{b},{},{}", fmt_db(lin), fmt_db(srgb))?;
        }
        let path = sibling(&out, "sweep.csv");
        std::fs::write(&path, csv)?;
        manifest.outputs.push(path);
    } else {
        let (img, trace) = restorer.restore(&burst, &(0..burst.len()).collect::<Vec<_>>())?;
        manifest.warnings.extend(trace.warnings.iter().cloned());
        let native = sibling(&out, "brt");
        let linear = sibling(&out, "linrgb.png");
        let srgb = sibling(&out, "srgb.png");
        let csv = sibling(&out, "trace.csv");
        save_native(&img, &native)?;
        save_png16(&img, &linear)?;
        save_png(&img.linrgb_to_srgb()?, &srgb)?;
        std::fs::write(&csv, trace.to_csv())?;
        if let Some(gt_path) = &cfg.gt {
            let gt = load_image(gt_path, PixelSpace::LinearRgb)?;
            info!("PSNR {:.2} dB linear, {:.2} dB sRGB", psnr(&img, &gt, 1.0)?, psnr_srgb(&img, &gt)?);
            manifest.inputs.push(gt_path.clone());
        }
        manifest.outputs.extend([native, linear, srgb, csv]);
    }
    let status = if manifest.warnings.is_empty() { Status::Ok } else { Status::AlignmentDegraded };
    manifest.write(&sibling(&out, "run.json"), started)?;
    Ok(status)
}
