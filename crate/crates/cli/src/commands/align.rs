use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use brt_core::align::{align_burst, PyramidConfig};
use clap::Args;
use log::warn;
use serde::{Deserialize, Serialize};

use super::Status;
use crate::burst_io::{LoadedBurst, TaskName, TransformsFile};
use crate::config::resolve;
use crate::manifest::{sibling, RunManifest};

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AlignArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burst: Option<PathBuf>,
    /// Output transforms file; defaults to `estimated_transforms.json` in
    /// the burst directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<usize>,
    /// Space of PNG frames; native frames carry their own.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskName>,
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

pub fn pyramid(levels: usize, max_iterations: usize, acceptance_threshold: f64, search_radius: usize) -> PyramidConfig {
    PyramidConfig {
        levels,
        max_iterations_per_level: max_iterations,
        acceptance_threshold,
        search_radius,
        ..PyramidConfig::default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AlignConfig {
    pub burst: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub reference: Option<usize>,
    pub task: Option<TaskName>,
    pub levels: usize,
    pub max_iterations: usize,
    pub acceptance_threshold: f64,
    pub search_radius: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        let p = PyramidConfig::default();
        Self {
            burst: None,
            out: None,
            reference: None,
            task: None,
            levels: p.levels,
            max_iterations: p.max_iterations_per_level,
            acceptance_threshold: p.acceptance_threshold,
            search_radius: p.search_radius,
        }
    }
}

pub fn run(config: Option<&Path>, args: &AlignArgs) -> Result<Status> {
    let started = Instant::now();
    let cfg: AlignConfig = resolve(config, args)?;
    let dir = cfg.burst.clone().context("--burst is required")?;
    let out = cfg.out.clone().unwrap_or_else(|| dir.join("estimated_transforms.json"));
    let loaded = LoadedBurst::read(&dir, cfg.task)?;
    let burst = loaded.burst(cfg.reference)?;
    let results = align_burst(&burst, &pyramid(cfg.levels, cfg.max_iterations, cfg.acceptance_threshold, cfg.search_radius))?;
    let mut manifest = RunManifest::new("align", &cfg, None)?;
    for (i, r) in results.iter().enumerate() {
        if !r.converged {
            let msg = format!("frame {i} failed alignment (ECC {:.4})", r.final_ecc);
            warn!("{msg}");
            manifest.warnings.push(msg);
        }
    }
    TransformsFile {
        reference_index: burst.reference_index(),
        task: Some(loaded.task()),
        sigma: loaded.meta.as_ref().and_then(|m| m.sigma),
        frames: results.iter().map(|r| r.to_record()).collect(),
    }
    .write(&out)?;
    let status = if manifest.warnings.is_empty() { Status::Ok } else { Status::AlignmentDegraded };
    manifest.inputs = loaded.files;
    manifest.outputs.push(out.clone());
    manifest.write(&sibling(&out, "run.json"), started)?;
    Ok(status)
}
