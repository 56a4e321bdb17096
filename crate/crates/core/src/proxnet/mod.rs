//! Residual convolutional denoiser used as the learned proximal map.
//!
//! The network predicts a noise residual, projects it onto an ℓ2 ball whose
//! radius is tied to the noise level, and subtracts it from its input.

mod conv;
mod net;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::TensorArchive;
use crate::error::{Error, Result};

pub use conv::Conv2d;
pub use net::{backward, forward, forward_cached, project_l2, projection_radius, ForwardCache, ProxGradients, ProxNetTape};

pub(crate) use net::{backward_raw, forward_raw};

/// Initial PReLU slope.
pub const PRELU_INIT: f32 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub depth: usize,
    pub filters: usize,
    pub kernel_input: usize,
    pub kernel_block: usize,
    pub kernel_output: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            filters: 64,
            kernel_input: 5,
            kernel_block: 3,
            kernel_output: 5,
        }
    }
}

impl NetConfig {
    /// Small configuration for CPU-scale training and tests.
    pub fn tiny() -> Self {
        Self {
            depth: 2,
            filters: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::invalid("network depth must be at least 1"));
        }
        if self.filters < 4 {
            return Err(Error::invalid("network needs at least 4 filters"));
        }
        for k in [self.kernel_input, self.kernel_block, self.kernel_output] {
            if k % 2 == 0 {
                return Err(Error::invalid(format!("kernel size {k} must be odd")));
            }
        }
        Ok(())
    }

    /// Number of trainable network weights, excluding `s` and `w`.
    pub fn parameter_count(&self) -> usize {
        let f = self.filters;
        let conv = |i: usize, o: usize, k: usize| o * i * k * k + o;
        conv(3, f, self.kernel_input)
            + f
            + self.depth * 2 * (conv(f, f, self.kernel_block) + f)
            + conv(f, 3, self.kernel_output)
    }

    /// Smallest spatial size the reflect padding supports.
    pub fn min_size(&self) -> usize {
        self.kernel_input.max(self.kernel_block).max(self.kernel_output) / 2 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub slope1: Vec<f32>,
    pub conv2: Conv2d,
    pub slope2: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxNetParams {
    pub config: NetConfig,
    pub input: Conv2d,
    /// Per-channel PReLU slopes after the input convolution.
    pub input_slope: Vec<f32>,
    pub blocks: Vec<ResBlock>,
    pub output: Conv2d,
    /// Per-iteration log-scale of the projection radius.
    pub s: Vec<f32>,
    /// Per-iteration extrapolation weights.
    pub w: Vec<f32>,
}

/// Extrapolation weight for 1-based iteration `t`.
pub fn extrapolation_weight(t: usize) -> f32 {
    (t as f64 - 1.0) as f32 / (t as f64 + 2.0) as f32
}

/// `k` values geometrically spaced from `max` down to `min`.
pub fn log_spaced(max: f64, min: f64, k: usize) -> Vec<f32> {
    if k == 1 {
        return vec![max as f32];
    }
    let (lmax, lmin) = (max.ln(), min.ln());
    (0..k)
        .map(|i| {
            let frac = i as f64 / (k - 1) as f64;
            (lmax + frac * (lmin - lmax)).exp() as f32
        })
        .collect()
}

pub fn init_params<R: Rng + ?Sized>(cfg: NetConfig, k: usize, s_max: f64, s_min: f64, rng: &mut R) -> Result<ProxNetParams> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::invalid("iteration count must be positive"));
    }
    if !(s_min > 0.0 && s_max > s_min && s_max.is_finite()) {
        return Err(Error::invalid(format!("need s_max > s_min > 0, got {s_max} and {s_min}")));
    }
    let f = cfg.filters;
    let a = PRELU_INIT as f64;
    let input = Conv2d::init(3, f, cfg.kernel_input, a, rng);
    let blocks = (0..cfg.depth)
        .map(|_| ResBlock {
            conv1: Conv2d::init(f, f, cfg.kernel_block, a, rng),
            slope1: vec![PRELU_INIT; f],
            conv2: Conv2d::init(f, f, cfg.kernel_block, a, rng),
            slope2: vec![PRELU_INIT; f],
        })
        .collect();
    let output = Conv2d::init(f, 3, cfg.kernel_output, a, rng);
    Ok(ProxNetParams {
        config: cfg,
        input,
        input_slope: vec![PRELU_INIT; f],
        blocks,
        output,
        s: log_spaced(s_max, s_min, k),
        w: (1..=k).map(extrapolation_weight).collect(),
    })
}

impl ProxNetParams {
    /// All-zero parameters with the shapes implied by `cfg` and `k`.
    pub fn zeros(cfg: NetConfig, k: usize) -> Self {
        let f = cfg.filters;
        Self {
            config: cfg,
            input: Conv2d::zeros(3, f, cfg.kernel_input),
            input_slope: vec![0.0; f],
            blocks: (0..cfg.depth)
                .map(|_| ResBlock {
                    conv1: Conv2d::zeros(f, f, cfg.kernel_block),
                    slope1: vec![0.0; f],
                    conv2: Conv2d::zeros(f, f, cfg.kernel_block),
                    slope2: vec![0.0; f],
                })
                .collect(),
            output: Conv2d::zeros(f, 3, cfg.kernel_output),
            s: vec![0.0; k],
            w: vec![0.0; k],
        }
    }

    pub fn iterations(&self) -> usize {
        self.s.len()
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config, self.iterations())
    }

    /// Visits every tensor in a fixed order with a stable name.
    pub fn for_each(&self, mut f: impl FnMut(&str, &[f32])) {
        f("input.weight", &self.input.weight);
        f("input.bias", &self.input.bias);
        f("input.slope", &self.input_slope);
        for (i, b) in self.blocks.iter().enumerate() {
            f(&format!("block{i}.conv1.weight"), &b.conv1.weight);
            f(&format!("block{i}.conv1.bias"), &b.conv1.bias);
            f(&format!("block{i}.slope1"), &b.slope1);
            f(&format!("block{i}.conv2.weight"), &b.conv2.weight);
            f(&format!("block{i}.conv2.bias"), &b.conv2.bias);
            f(&format!("block{i}.slope2"), &b.slope2);
        }
        f("output.weight", &self.output.weight);
        f("output.bias", &self.output.bias);
        f("s", &self.s);
        f("w", &self.w);
    }

    /// Mutable counterpart of [`for_each`](Self::for_each), same order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut [f32])) {
        f("input.weight", &mut self.input.weight);
        f("input.bias", &mut self.input.bias);
        f("input.slope", &mut self.input_slope);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("block{i}.conv1.weight"), &mut b.conv1.weight);
            f(&format!("block{i}.conv1.bias"), &mut b.conv1.bias);
            f(&format!("block{i}.slope1"), &mut b.slope1);
            f(&format!("block{i}.conv2.weight"), &mut b.conv2.weight);
            f(&format!("block{i}.conv2.bias"), &mut b.conv2.bias);
            f(&format!("block{i}.slope2"), &mut b.slope2);
        }
        f("output.weight", &mut self.output.weight);
        f("output.bias", &mut self.output.bias);
        f("s", &mut self.s);
        f("w", &mut self.w);
    }

    /// All tensors flattened in visiting order.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::new();
        self.for_each(|_, t| out.extend_from_slice(t));
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(&mut self, flat: &[f32]) -> Result<()> {
        let total: usize = {
            let mut n = 0;
            self.for_each(|_, t| n += t.len());
            n
        };
        if flat.len() != total {
            return Err(Error::dims(total, flat.len()));
        }
        let mut offset = 0;
        self.for_each_mut(|_, t| {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        });
        Ok(())
    }

    /// `self += alpha * other`; shapes must agree.
    pub fn add_scaled(&mut self, other: &ProxNetParams, alpha: f32) -> Result<()> {
        let flat = other.flatten();
        let mut mine = self.flatten();
        if flat.len() != mine.len() {
            return Err(Error::dims(mine.len(), flat.len()));
        }
        mine.iter_mut().zip(&flat).for_each(|(a, b)| *a += alpha * b);
        self.unflatten(&mine)
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: serde_json::Value) -> Result<()> {
        let path = path.as_ref();
        let mut archive = TensorArchive::new();
        let mut result = Ok(());
        self.for_each(|name, t| {
            if result.is_ok() {
                result = archive.push_f32(name, t);
            }
        });
        result?;
        archive.write(path)?;
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config,
            iterations: self.iterations(),
            s: self.s.clone(),
            w: self.w.clone(),
            parameter_count: self.config.parameter_count(),
            metadata,
        };
        fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, CheckpointManifest)> {
        let path = path.as_ref();
        let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(manifest_path(path))?)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {}", manifest.format)));
        }
        manifest.config.validate()?;
        let archive = TensorArchive::read(path)?;
        if manifest.iterations == 0 {
            return Err(Error::Format("checkpoint has zero iterations".into()));
        }
        let mut params = Self::zeros(manifest.config, manifest.iterations);
        let mut result = Ok(());
        params.for_each_mut(|name, t| {
            if result.is_err() {
                return;
            }
            result = archive.f32(name).and_then(|src| {
                if src.len() != t.len() {
                    return Err(Error::Format(format!("tensor {name}: expected {} values, found {}", t.len(), src.len())));
                }
                t.copy_from_slice(src);
                Ok(())
            });
        });
        result?;
        if !params.is_finite() {
            return Err(Error::Format("checkpoint contains non-finite values".into()));
        }
        Ok((params, manifest))
    }
}

const CHECKPOINT_FORMAT: &str = "brt-proxnet-1";

/// JSON sidecar written next to every checkpoint archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: NetConfig,
    pub iterations: usize,
    pub s: Vec<f32>,
    pub w: Vec<f32>,
    pub parameter_count: usize,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// `model.brtc` -> `model.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn extrapolation_weights() {
        let p = init_params(NetConfig::tiny(), 10, 1.0, 0.1, &mut rng()).unwrap();
        assert_eq!(p.w[0], 0.0);
        assert_eq!(p.w[3], 0.5);
        assert_eq!(p.w[9], 0.75);
    }

    #[test]
    fn continuation_endpoints() {
        let p = init_params(NetConfig::tiny(), 2, 1.0, 0.25, &mut rng()).unwrap();
        assert_eq!(p.s, vec![1.0, 0.25]);
        let p = init_params(NetConfig::tiny(), 5, 1.0, 0.0625, &mut rng()).unwrap();
        for (a, b) in p.s.iter().zip([1.0, 0.5, 0.25, 0.125, 0.0625]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(init_params(NetConfig::tiny(), 10, 0.1, 1.0, &mut rng()).is_err());
        assert!(init_params(NetConfig::tiny(), 10, 1.0, 0.0, &mut rng()).is_err());
        assert!(init_params(NetConfig::tiny(), 0, 1.0, 0.1, &mut rng()).is_err());
        let bad = NetConfig { filters: 3, ..NetConfig::tiny() };
        assert!(init_params(bad, 10, 1.0, 0.1, &mut rng()).is_err());
    }

    #[test]
    fn default_size_is_about_380k() {
        let n = NetConfig::default().parameter_count();
        assert!((370_000..390_000).contains(&n), "{n}");
        let p = init_params(NetConfig::default(), 10, 1.0, 0.1, &mut rng()).unwrap();
        assert_eq!(p.flatten().len(), n + 20);
    }

    #[test]
    fn flatten_round_trip() {
        let p = init_params(NetConfig::tiny(), 4, 1.0, 0.1, &mut rng()).unwrap();
        let mut q = p.zeros_like();
        q.unflatten(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.unflatten(&[0.0; 3]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.brtc");
        let p = init_params(NetConfig::tiny(), 6, 1.0, 0.1, &mut rng()).unwrap();
        p.save(&path, serde_json::json!({"epoch": 3})).unwrap();
        let (q, manifest) = ProxNetParams::load(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(manifest.iterations, 6);
        assert_eq!(manifest.metadata["epoch"], 3);
    }
}
