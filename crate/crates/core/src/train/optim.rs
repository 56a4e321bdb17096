use serde::{Deserialize, Serialize};

use crate::container::TensorArchive;
use crate::error::{Error, Result};
use crate::proxnet::ProxNetParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmsGradConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AmsGradConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AmsGradState {
    pub config: AmsGradConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Running elementwise maximum of `v`.
    pub v_max: Vec<f64>,
}

impl AmsGradState {
    pub fn new(params: &ProxNetParams, config: AmsGradConfig) -> Self {
        let n = params.flatten().len();
        Self {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            v_max: vec![0.0; n],
        }
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        a.push_u32("m", &f64_bits(&self.m))?;
        a.push_u32("v", &f64_bits(&self.v))?;
        a.push_u32("v_max", &f64_bits(&self.v_max))?;
        a.push_u32("step", &f64_bits(&[self.step as f64]))?;
        a.push_u32("config", &f64_bits(&[self.config.beta1, self.config.beta2, self.config.eps]))?;
        Ok(a)
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        let step = bits_f64(a.u32("step")?)?;
        let cfg = bits_f64(a.u32("config")?)?;
        if step.len() != 1 || cfg.len() != 3 {
            return Err(Error::Format("malformed optimizer state".into()));
        }
        let s = Self {
            config: AmsGradConfig {
                beta1: cfg[0],
                beta2: cfg[1],
                eps: cfg[2],
            },
            step: step[0] as u64,
            m: bits_f64(a.u32("m")?)?,
            v: bits_f64(a.u32("v")?)?,
            v_max: bits_f64(a.u32("v_max")?)?,
        };
        if s.v.len() != s.m.len() || s.v_max.len() != s.m.len() {
            return Err(Error::Format("optimizer moments disagree in length".into()));
        }
        Ok(s)
    }
}

/// Lossless f64 storage as (low, high) u32 word pairs.
fn f64_bits(v: &[f64]) -> Vec<u32> {
    v.iter()
        .flat_map(|x| {
            let b = x.to_bits();
            [b as u32, (b >> 32) as u32]
        })
        .collect()
}

fn bits_f64(words: &[u32]) -> Result<Vec<f64>> {
    if words.len() % 2 != 0 {
        return Err(Error::Format("odd word count for f64 tensor".into()));
    }
    Ok(words
        .chunks_exact(2)
        .map(|w| f64::from_bits(w[0] as u64 | (w[1] as u64) << 32))
        .collect())
}

/// One AMSGrad update with bias-corrected moments. A gradient that stays
/// constant yields steps of magnitude `lr * |g| / (|g| + eps)`.
pub fn optimizer_step(params: &mut ProxNetParams, grads: &ProxNetParams, state: &mut AmsGradState, lr: f64) -> Result<()> {
    let g = grads.flatten();
    let mut p = params.flatten();
    if g.len() != p.len() || state.m.len() != p.len() {
        return Err(Error::dims(p.len(), format!("grads {}, state {}", g.len(), state.m.len())));
    }
    let AmsGradConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2_sqrt = (1.0 - beta2.powi(t)).sqrt();
    for i in 0..p.len() {
        let gi = g[i] as f64;
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * gi;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * gi * gi;
        state.v_max[i] = state.v_max[i].max(state.v[i]);
        let denom = state.v_max[i].sqrt() / bc2_sqrt + eps;
        p[i] = (p[i] as f64 - lr * state.m[i] / bc1 / denom) as f32;
    }
    params.unflatten(&p)
}
