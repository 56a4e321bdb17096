use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use brt_core::image::{load_image, psnr, psnr_srgb};
use brt_core::{Image, PixelSpace};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Status;
use crate::burst_io::images_by_stem;
use crate::config::resolve;
use crate::manifest::{sibling, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PngSpace {
    Linear,
    Srgb,
}

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    /// Metrics CSV; defaults to `metrics.csv` in the working directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Encoding of PNG inputs; native files are always linear.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub png_space: Option<PngSpace>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateConfig {
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out: PathBuf,
    pub png_space: PngSpace,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { pred: None, gt: None, out: PathBuf::from("metrics.csv"), png_space: PngSpace::Linear }
    }
}

fn load_linear(path: &Path, png_space: PngSpace) -> Result<Image> {
    let native = path.extension().and_then(|e| e.to_str()) == Some("brt");
    let img = if native || png_space == PngSpace::Linear {
        load_image(path, PixelSpace::LinearRgb)?
    } else {
        load_image(path, PixelSpace::Srgb)?.srgb_to_linrgb()?
    };
    if img.channels() != 3 {
        bail!("{} has {} channels, expected 3", path.display(), img.channels());
    }
    Ok(img)
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn run(config: Option<&Path>, args: &EvaluateArgs) -> Result<Status> {
    let started = Instant::now();
    let cfg: EvaluateConfig = resolve(config, args)?;
    let pred_dir = cfg.pred.clone().context("--pred is required")?;
    let gt_dir = cfg.gt.clone().context("--gt is required")?;
    let preds = images_by_stem(&pred_dir)?;
    let gts = images_by_stem(&gt_dir)?;
    let pred_names: Vec<&String> = preds.iter().map(|(n, _)| n).collect();
    let gt_names: Vec<&String> = gts.iter().map(|(n, _)| n).collect();
    if pred_names != gt_names {
        let missing: Vec<&&String> = pred_names.iter().filter(|n| !gt_names.contains(n)).chain(gt_names.iter().filter(|n| !pred_names.contains(n))).collect();
        bail!("unmatched files between {} and {}: {missing:?}", pred_dir.display(), gt_dir.display());
    }
    if preds.is_empty() {
        bail!("no images in {}", pred_dir.display());
    }
    let rows: Vec<(f64, f64)> = preds
        .par_iter()
        .zip(&gts)
        .map(|((_, p), (_, g))| {
            let (a, b) = (load_linear(p, cfg.png_space)?, load_linear(g, cfg.png_space)?);
            if a.dims() != b.dims() {
                bail!("{} is {:?} but {} is {:?}", p.display(), a.dims(), g.display(), b.dims());
            }
            Ok((psnr(&a, &b, 1.0)?, psnr_srgb(&a, &b)?))
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("image,psnr_linrgb,psnr_srgb\n");
    for ((name, _), (lin, srgb)) in preds.iter().zip(&rows) {
        writeln!(csv, "{name},{},{}", fmt_db(*lin), fmt_db(*srgb))?;
    }
    let n = rows.len() as f64;
    let mean_lin = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let mean_srgb = rows.iter().map(|r| r.1).sum::<f64>() / n;
    writeln!(csv, "mean,{},{}", fmt_db(mean_lin), fmt_db(mean_srgb))?;
    std::fs::write(&cfg.out, &csv).with_context(|| format!("writing {}", cfg.out.display()))?;

    let mut manifest = RunManifest::new("evaluate", &cfg, None)?;
    manifest.inputs = preds.into_iter().chain(gts).map(|(_, p)| p).collect();
    manifest.outputs.push(cfg.out.clone());
    manifest.write(&sibling(&cfg.out, "run.json"), started)?;
    Ok(Status::Ok)
}
