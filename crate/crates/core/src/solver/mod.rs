//! Unrolled proximal gradient descent with extrapolation and continuation.
//!
//! Each iteration forms `u = x_t + w_t (x_t - x_{t-1})`, takes a gradient
//! step on the data term evaluated at `u` but anchored at `x_t`, and applies
//! the proximal map with continuation parameter `s_t`.

mod baseline;

pub use baseline::aligned_average;

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{align_burst, AlignmentResult, PyramidConfig};
use crate::error::{Error, Result};
use crate::image::{Burst, Image, PixelSpace};
use crate::ops::{build_warp, demosaick_bilinear, estimate_operator_norm, DegradationOp, ForwardModel, Interpolation, SparseWarp};
use crate::proxnet::{self, ProxNetParams};

/// Power-iteration steps used when `lipschitz_safety` is on.
const NORM_ITERATIONS: usize = 50;

#[derive(Debug, Clone)]
pub enum Prox {
    Identity,
    Network(Arc<ProxNetParams>),
    /// Elementwise shrinkage by `lambda * sigma^2`.
    SoftThreshold(f64),
}

impl Prox {
    fn apply(&self, v: Vec<f32>, dims: (usize, usize, usize), sigma: f64, s_t: f32) -> Result<Vec<f32>> {
        match self {
            Prox::Identity => Ok(v),
            Prox::SoftThreshold(lambda) => {
                let tau = (lambda * sigma * sigma) as f32;
                Ok(v.into_iter().map(|x| x.signum() * (x.abs() - tau).max(0.0)).collect())
            }
            Prox::Network(p) => {
                let (h, w, c) = dims;
                let img = Image::new(h, w, c, v, PixelSpace::LinearRgb)?;
                Ok(proxnet::forward(p, &img, sigma, s_t as f64)?.into_data())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub iterations: usize,
    pub sigma: f64,
    pub s: Vec<f32>,
    pub w: Vec<f32>,
    pub prox: Prox,
    pub lipschitz_safety: bool,
    /// Keep every iterate in the trace.
    pub keep_snapshots: bool,
}

impl SolverConfig {
    /// Classical configuration: `w_t = (t-1)/(t+2)`, `s_t = 0`.
    pub fn classical(iterations: usize, sigma: f64, prox: Prox) -> Self {
        Self {
            iterations,
            sigma,
            s: vec![0.0; iterations],
            w: (1..=iterations).map(proxnet::extrapolation_weight).collect(),
            prox,
            lipschitz_safety: false,
            keep_snapshots: false,
        }
    }

    /// Uses the network as prox together with its learned `s` and `w`.
    pub fn from_network(params: Arc<ProxNetParams>, sigma: f64) -> Self {
        Self {
            iterations: params.iterations(),
            sigma,
            s: params.s.clone(),
            w: params.w.clone(),
            prox: Prox::Network(params),
            lipschitz_safety: false,
            keep_snapshots: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("solver needs at least one iteration"));
        }
        if self.s.len() != self.iterations || self.w.len() != self.iterations {
            return Err(Error::dims(
                self.iterations,
                format!("s has {}, w has {}", self.s.len(), self.w.len()),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("noise level must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Serializable solver settings, e.g. from a TOML or JSON file. The
/// network itself is supplied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub iterations: Option<usize>,
    pub sigma: f64,
    pub prox: ProxKind,
    pub lipschitz_safety: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxKind {
    Identity,
    Network,
    SoftThreshold { lambda: f64 },
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            iterations: None,
            sigma: 25.0 / 255.0,
            prox: ProxKind::Network,
            lipschitz_safety: false,
        }
    }
}

impl SolverOptions {
    pub fn build(&self, network: Option<Arc<ProxNetParams>>) -> Result<SolverConfig> {
        let mut cfg = match (&self.prox, network) {
            (ProxKind::Network, Some(p)) => {
                let cfg = SolverConfig::from_network(p, self.sigma);
                if self.iterations.is_some_and(|k| k != cfg.iterations) {
                    return Err(Error::invalid(format!(
                        "network was trained for {} iterations",
                        cfg.iterations
                    )));
                }
                cfg
            }
            (ProxKind::Network, None) => return Err(Error::invalid("network prox selected but no checkpoint given")),
            (ProxKind::Identity, _) => SolverConfig::classical(self.iterations.unwrap_or(10), self.sigma, Prox::Identity),
            (ProxKind::SoftThreshold { lambda }, _) => {
                SolverConfig::classical(self.iterations.unwrap_or(10), self.sigma, Prox::SoftThreshold(*lambda))
            }
        };
        cfg.lipschitz_safety = self.lipschitz_safety;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    /// Data fidelity of the new iterate.
    pub fidelity: f64,
    /// Norm of the data-term gradient at the extrapolated point.
    pub grad_norm: f64,
    pub snapshot: Option<Image>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn fidelity(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.fidelity).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,fidelity,grad_norm\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:e},{:e}", r.iteration, r.fidelity, r.grad_norm);
        }
        out
    }
}

/// `x^1` from the reference frame: a copy, or a bilinear demosaick for CFA
/// observations.
pub fn initialize_estimate(burst: &Burst, op: DegradationOp) -> Result<Image> {
    let reference = burst.reference();
    match op {
        DegradationOp::Identity => reference.clone().with_space(PixelSpace::LinearRgb),
        DegradationOp::Cfa(pattern) => demosaick_bilinear(reference, pattern),
    }
}

/// Frame order used for every reduction over the burst: sorted by a content
/// hash of each frame and its warp, so the result does not depend on how the
/// caller ordered the frames.
pub(crate) fn canonical_order(frames: &[&[f32]], warps: &[SparseWarp]) -> Vec<usize> {
    let keys: Vec<u64> = frames
        .iter()
        .zip(warps)
        .map(|(f, w)| {
            let mut h = DefaultHasher::new();
            f.iter().for_each(|v| v.to_bits().hash(&mut h));
            w.hash_into(&mut h);
            h.finish()
        })
        .collect();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    order
}

/// Gradient-step scale `1 / (B max(1, lambda))`.
pub(crate) fn step_scale(warps: &[SparseWarp], op: DegradationOp, lipschitz_safety: bool) -> Result<f32> {
    let b = warps.len() as f64;
    let lambda = if lipschitz_safety {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        estimate_operator_norm(warps, op, NORM_ITERATIONS, &mut rng)?.max(1.0)
    } else {
        1.0
    };
    Ok((1.0 / (b * lambda)) as f32)
}

/// One data step: returns `(u, v)` with `u = x_t + w (x_t - x_prev)` and
/// `v = x_t - step * sum_i S_i^T H^T (H S_i u - y_i)`.
pub(crate) fn data_step(
    model: &ForwardModel,
    obs: &[&[f32]],
    x_t: &[f32],
    x_prev: &[f32],
    w: f32,
    step: f32,
) -> (Vec<f32>, Vec<f32>) {
    let u: Vec<f32> = x_t.iter().zip(x_prev).map(|(a, b)| a + w * (a - b)).collect();
    let z = model.residual_sum(&u, obs);
    let v = x_t.iter().zip(&z).map(|(a, g)| a - step * g).collect();
    (u, v)
}

fn check_inputs(burst: &Burst, warps: &[SparseWarp], op: DegradationOp, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    if warps.len() != burst.len() {
        return Err(Error::dims(burst.len(), warps.len()));
    }
    if let Some(w) = warps.iter().find(|w| w.dims() != burst.dims()) {
        return Err(Error::dims(burst.dims(), w.dims()));
    }
    op.check_channels(burst.dims().2)
}

pub fn run(burst: &Burst, warps: &[SparseWarp], op: DegradationOp, cfg: &SolverConfig) -> Result<(Image, IterationTrace)> {
    check_inputs(burst, warps, op, cfg)?;
    let frames: Vec<&[f32]> = burst.frames().iter().map(|f| f.data()).collect();
    let order = canonical_order(&frames, warps);
    let warps: Vec<SparseWarp> = order.iter().map(|&i| warps[i].clone()).collect();
    let obs: Vec<&[f32]> = order.iter().map(|&i| frames[i]).collect();
    let model = ForwardModel::new(&warps, op)?;
    let dims = model.dims();
    let step = step_scale(&warps, op, cfg.lipschitz_safety)?;
    let grad_scale = 1.0 / (cfg.sigma * cfg.sigma * warps.len() as f64);

    let mut x_prev = vec![0.0f32; model.sample_count()];
    let mut x = initialize_estimate(burst, op)?.into_data();
    let mut trace = IterationTrace::default();
    for t in 0..cfg.iterations {
        let (u, v) = data_step(&model, &obs, &x, &x_prev, cfg.w[t], step);
        let grad_norm = v
            .iter()
            .zip(&x)
            .map(|(a, b)| ((b - a) as f64 / step as f64 * grad_scale).powi(2))
            .sum::<f64>()
            .sqrt();
        drop(u);
        let next = cfg.prox.apply(v, dims, cfg.sigma, cfg.s[t])?;
        x_prev = std::mem::replace(&mut x, next);
        trace.records.push(IterationRecord {
            iteration: t + 1,
            fidelity: model.value(&x, &obs, cfg.sigma),
            grad_norm,
            snapshot: cfg
                .keep_snapshots
                .then(|| Image::from_raw(dims.0, dims.1, dims.2, x.clone(), PixelSpace::LinearRgb)),
        });
    }
    let out = Image::from_raw(dims.0, dims.1, dims.2, x, PixelSpace::LinearRgb).clamp01();
    Ok((out, trace))
}

/// Aligns the burst, drops frames whose alignment failed, and restores.
pub fn run_with_alignment(
    burst: &Burst,
    op: DegradationOp,
    cfg: &SolverConfig,
    pyramid: &PyramidConfig,
) -> Result<(Image, Vec<AlignmentResult>, IterationTrace)> {
    let alignments = align_burst(burst, pyramid)?;
    let keep: Vec<usize> = (0..burst.len())
        .filter(|&i| i == burst.reference_index() || alignments[i].converged)
        .collect();
    let mut warnings = Vec::new();
    for (i, a) in alignments.iter().enumerate() {
        if !a.converged {
            warnings.push(format!("frame {i} dropped: alignment ECC {:.4}", a.final_ecc));
        }
    }
    if keep.len() == 1 && burst.len() > 1 {
        warnings.push("all non-reference frames failed alignment; restoring from the reference alone".into());
    }
    for w in &warnings {
        warn!("{w}");
    }
    let subset = burst.select(&keep)?;
    let warps = keep
        .iter()
        .map(|&i| build_warp(&alignments[i].frame_transform(), burst.dims(), Interpolation::Bilinear))
        .collect::<Result<Vec<_>>>()?;
    let (img, mut trace) = run(&subset, &warps, op, cfg)?;
    trace.warnings = warnings;
    Ok((img, alignments, trace))
}
