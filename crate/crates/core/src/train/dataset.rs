use std::borrow::Cow;
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::noise::NoiseModel;
use super::scene::random_scene;
use super::synth::{synthesize_burst, SyntheticBurstSpec};
use crate::align::{align_burst, PyramidConfig};
use crate::error::{Error, Result};
use crate::image::{load_image, Burst, Image, PixelSpace};
use crate::ops::{build_warp, AffineTransform, DegradationOp, Interpolation, SparseWarp};

/// One training example: a degraded burst, the warps handed to the solver,
/// and the ground truth on the reference grid.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub burst: Burst,
    /// Frame warps in the forward-model convention, one per frame.
    pub transforms: Vec<AffineTransform>,
    pub warps: Vec<SparseWarp>,
    pub gt: Image,
    pub op: DegradationOp,
    /// Noise level handed to the prox.
    pub sigma: f64,
}

impl TrainingSample {
    pub fn new(burst: Burst, transforms: Vec<AffineTransform>, gt: Image, op: DegradationOp, sigma: f64) -> Result<Self> {
        if transforms.len() != burst.len() {
            return Err(Error::dims(burst.len(), transforms.len()));
        }
        if gt.dims() != (burst.dims().0, burst.dims().1, 3) {
            return Err(Error::dims(burst.dims(), gt.dims()));
        }
        let warps = transforms
            .iter()
            .map(|t| build_warp(t, burst.dims(), Interpolation::Bilinear))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            burst,
            transforms,
            warps,
            gt,
            op,
            sigma,
        })
    }

    /// Keeps the first `n` non-reference frames plus the reference.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let r = self.burst.reference_index();
        let mut keep: Vec<usize> = (0..self.burst.len()).filter(|&i| i != r).take(n.saturating_sub(1)).collect();
        keep.push(r);
        keep.sort_unstable();
        let transforms = keep.iter().map(|&i| self.transforms[i]).collect();
        Ok(Self {
            burst: self.burst.select(&keep)?,
            transforms,
            warps: keep.iter().map(|&i| self.warps[i].clone()).collect(),
            gt: self.gt.clone(),
            op: self.op,
            sigma: self.sigma,
        })
    }
}

/// Indexed access to training samples.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Result<Cow<'_, TrainingSample>>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [TrainingSample] {
    fn len(&self) -> usize {
        <[TrainingSample]>::len(self)
    }

    fn sample(&self, index: usize) -> Result<Cow<'_, TrainingSample>> {
        self.get(index)
            .map(Cow::Borrowed)
            .ok_or_else(|| Error::invalid(format!("sample {index} out of range")))
    }
}

impl SampleSource for Vec<TrainingSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize) -> Result<Cow<'_, TrainingSample>> {
        self.as_slice().sample(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruthSource {
    /// Procedurally generated scenes.
    Procedural,
    /// PNG or native images; each sample takes a random window of image
    /// `index mod count`. Files are read as sRGB and linearised.
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Fixed { model: NoiseModel },
    /// Gaussian level drawn per sample from the discrete training grid.
    SampledGaussian,
    /// Heteroskedastic parameters drawn per sample.
    SampledHeteroskedastic,
}

impl NoiseSpec {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseModel {
        match self {
            NoiseSpec::Fixed { model } => *model,
            NoiseSpec::SampledGaussian => NoiseModel::sample_gaussian(rng),
            NoiseSpec::SampledHeteroskedastic => NoiseModel::sample_heteroskedastic(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WarpSource {
    /// Ground-truth transforms from synthesis.
    Oracle,
    /// ECC estimates; bursts with any failed frame are dropped.
    Estimated { pyramid: PyramidConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: GroundTruthSource,
    pub count: usize,
    pub spec: SyntheticBurstSpec,
    pub noise: NoiseSpec,
    pub warps: WarpSource,
    pub seed: u64,
}

/// Deterministic per-sample stream derived from `(seed, index)`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "brt"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no .png or .brt images in {}", dir.display())));
    }
    Ok(files)
}

fn ground_truth(source: &GroundTruthSource, files: &[PathBuf], index: usize, side: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    match source {
        GroundTruthSource::Procedural => Ok(random_scene(side, side, rng)),
        GroundTruthSource::Directory { .. } => {
            let path = &files[index % files.len()];
            let img = load_image(path, PixelSpace::Srgb)?;
            let img = if img.channels() == 1 {
                let d = img.data().iter().flat_map(|&v| [v, v, v]).collect();
                Image::new(img.height(), img.width(), 3, d, PixelSpace::Srgb)?
            } else {
                img
            };
            if img.height() < side || img.width() < side {
                return Err(Error::invalid(format!(
                    "{} is {}x{}, need at least {side}x{side}",
                    path.display(),
                    img.height(),
                    img.width()
                )));
            }
            let top = rng.random_range(0..=img.height() - side);
            let left = rng.random_range(0..=img.width() - side);
            img.crop(top, left, side, side)?.srgb_to_linrgb()
        }
    }
}

/// Result of dataset synthesis.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<TrainingSample>,
    /// Indices dropped because alignment failed.
    pub dropped: Vec<usize>,
}

impl Dataset {
    /// Synthesises `cfg.count` samples in parallel. Sample `i` depends only
    /// on `(cfg.seed, i)`.
    pub fn synthesize(cfg: &DatasetConfig) -> Result<Self> {
        let files = match &cfg.source {
            GroundTruthSource::Directory { path } => list_images(path)?,
            GroundTruthSource::Procedural => Vec::new(),
        };
        let side = cfg.spec.min_source_size();
        let op = cfg.spec.task.degradation();
        let built: Vec<Result<Option<TrainingSample>>> = (0..cfg.count)
            .into_par_iter()
            .map(|i| {
                let mut rng = sample_rng(cfg.seed, i as u64);
                let gt = ground_truth(&cfg.source, &files, i, side, &mut rng)?;
                let noise = cfg.noise.draw(&mut rng);
                let syn = synthesize_burst(&gt, &cfg.spec, &noise, &mut rng)?;
                let transforms = match &cfg.warps {
                    WarpSource::Oracle => syn.transforms,
                    WarpSource::Estimated { pyramid } => {
                        let results = align_burst(&syn.burst, pyramid)?;
                        if results.iter().any(|r| !r.converged) {
                            warn!("sample {i}: alignment failed, dropped");
                            return Ok(None);
                        }
                        results.iter().map(|r| r.frame_transform()).collect()
                    }
                };
                TrainingSample::new(syn.burst, transforms, syn.gt, op, noise.prox_sigma()).map(Some)
            })
            .collect();
        let mut samples = Vec::with_capacity(cfg.count);
        let mut dropped = Vec::new();
        for (i, r) in built.into_iter().enumerate() {
            match r? {
                Some(s) => samples.push(s),
                None => dropped.push(i),
            }
        }
        Ok(Self { samples, dropped })
    }
}
