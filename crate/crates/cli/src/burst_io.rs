//! On-disk layout shared by the commands.
//!
//! A burst directory holds `frame_*.brt` or `frame_*.png` files (sorted by
//! name) and optionally `transforms.json` and `gt.brt`. A dataset directory
//! holds `dataset.json` and one burst directory per sample.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use brt_core::image::{load_image, load_native, save_native};
use brt_core::ops::{AffineTransform, BayerPattern, TransformRecord};
use brt_core::train::{Task, TrainingSample};
use brt_core::{Burst, Image, PixelSpace};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

pub const TRANSFORMS_FILE: &str = "transforms.json";
pub const GT_FILE: &str = "gt.brt";
pub const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    Denoise,
    /// RGGB mosaic.
    Demosaick,
}

impl TaskName {
    pub fn task(self) -> Task {
        match self {
            TaskName::Denoise => Task::Denoise,
            TaskName::Demosaick => Task::Demosaick { pattern: BayerPattern::RGGB },
        }
    }

    pub fn frame_space(self) -> PixelSpace {
        match self {
            TaskName::Denoise => PixelSpace::LinearRgb,
            TaskName::Demosaick => PixelSpace::MosaickedLinear,
        }
    }

    pub fn from_space(space: PixelSpace) -> Self {
        if space == PixelSpace::MosaickedLinear {
            TaskName::Demosaick
        } else {
            TaskName::Denoise
        }
    }
}

/// Per-burst metadata: reference index and one frame warp per frame, in the
/// forward-model convention about the frame centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformsFile {
    pub reference_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskName>,
    /// Noise level handed to the prox, in `[0, 1]` units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub frames: Vec<TransformRecord>,
}

impl TransformsFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn transforms(&self, height: usize, width: usize) -> Vec<AffineTransform> {
        self.frames.iter().map(|r| r.to_transform(height, width)).collect()
    }
}

pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading burst directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
            name.starts_with("frame") && matches!(ext, "brt" | "png")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no frame_* images in {}", dir.display());
    }
    Ok(files)
}

/// Burst directory contents. `task` picks the space of PNG frames; native
/// frames carry their own.
pub struct LoadedBurst {
    pub frames: Vec<Image>,
    pub files: Vec<PathBuf>,
    pub meta: Option<TransformsFile>,
}

impl LoadedBurst {
    pub fn read(dir: &Path, task: Option<TaskName>) -> Result<Self> {
        let files = frame_files(dir)?;
        let meta_path = dir.join(TRANSFORMS_FILE);
        let meta = if meta_path.exists() { Some(TransformsFile::read(&meta_path)?) } else { None };
        let task = task.or(meta.as_ref().and_then(|m| m.task));
        let frames = files
            .iter()
            .map(|f| {
                let img = if is_native(f) {
                    load_native(f)?
                } else {
                    load_image(f, task.map_or(PixelSpace::LinearRgb, TaskName::frame_space))?
                };
                match task {
                    Some(t) if t.frame_space() != img.space() => Ok(img.with_space(t.frame_space())?),
                    _ => Ok(img),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { frames, files, meta })
    }

    pub fn task(&self) -> TaskName {
        TaskName::from_space(self.frames[0].space())
    }

    pub fn burst(&self, reference: Option<usize>) -> Result<Burst> {
        let r = reference.or(self.meta.as_ref().map(|m| m.reference_index)).unwrap_or(0);
        Ok(Burst::new(self.frames.clone(), r)?)
    }
}

fn is_native(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("brt")
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:02}.brt")
}

pub fn write_sample(dir: &Path, sample: &TrainingSample, task: TaskName) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for (i, frame) in sample.burst.frames().iter().enumerate() {
        let path = dir.join(frame_name(i));
        save_native(frame, &path)?;
        written.push(path);
    }
    let gt = dir.join(GT_FILE);
    save_native(&sample.gt, &gt)?;
    written.push(gt);
    let meta = TransformsFile {
        reference_index: sample.burst.reference_index(),
        task: Some(task),
        sigma: Some(sample.sigma),
        frames: sample.transforms.iter().map(|t| TransformRecord::from_transform(t, 1.0, true)).collect(),
    };
    let path = dir.join(TRANSFORMS_FILE);
    meta.write(&path)?;
    written.push(path);
    Ok(written)
}

/// Loads a sample written by [`write_sample`]; oracle transforms come from
/// its metadata.
pub fn read_sample(dir: &Path) -> Result<(TrainingSample, TaskName)> {
    let loaded = LoadedBurst::read(dir, None)?;
    let meta = loaded.meta.clone().with_context(|| format!("{} has no {TRANSFORMS_FILE}", dir.display()))?;
    let task = meta.task.unwrap_or_else(|| loaded.task());
    let sigma = meta.sigma.with_context(|| format!("{} does not record a noise level", dir.display()))?;
    let burst = loaded.burst(None)?;
    let (h, w, _) = burst.dims();
    if meta.frames.len() != burst.len() {
        bail!("{}: {} transforms for {} frames", dir.display(), meta.frames.len(), burst.len());
    }
    let gt = load_image(dir.join(GT_FILE), PixelSpace::LinearRgb)?;
    let sample = TrainingSample::new(burst, meta.transforms(h, w), gt, task.task().degradation(), sigma)?;
    Ok((sample, task))
}

pub fn sample_dirs(dataset: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dataset)
        .with_context(|| format!("reading dataset {}", dataset.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(TRANSFORMS_FILE).exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Images (`.png`, `.brt`) in a directory keyed by file stem.
pub fn images_by_stem(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "brt")))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    out.sort();
    for pair in out.windows(2) {
        if pair[0].0 == pair[1].0 {
            bail!("{} and {} share a name", pair[0].1.display(), pair[1].1.display());
        }
    }
    Ok(out)
}
