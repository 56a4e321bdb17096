use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{sample_rng, SampleSource, TrainingSample};
use super::loss::l1_raw;
use super::noise::{add_noise, NoiseModel};
use super::optim::{optimizer_step, AmsGradConfig, AmsGradState};
use crate::container::TensorArchive;
use crate::error::{Error, Result};
use crate::image::{psnr, PixelSpace};
use crate::ops::ForwardModel;
use crate::proxnet::{backward_raw, forward_raw, init_params, ForwardCache, NetConfig, ProxNetParams};
use crate::solver::{self, initialize_estimate, step_scale, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Unrolled iterations `K`.
    pub iterations: usize,
    /// Chunk length `k`; parameters are updated after every chunk.
    pub truncation: usize,
    pub learning_rate: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub s_max: f64,
    pub s_min: f64,
    /// Epochs of single-image denoising before unrolled training.
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub optimizer: AmsGradConfig,
    pub lipschitz_safety: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            truncation: 5,
            learning_rate: 1e-3,
            lr_decay_every: 100,
            lr_decay_factor: 0.1,
            batch_size: 1,
            epochs: 1,
            seed: 0,
            s_max: 1.0,
            s_min: 0.1,
            pretrain_epochs: 0,
            pretrain_learning_rate: 1e-3,
            optimizer: AmsGradConfig::default(),
            lipschitz_safety: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.truncation == 0 {
            return Err(Error::invalid("iterations and truncation must be positive"));
        }
        if self.truncation > self.iterations || self.iterations % self.truncation != 0 {
            return Err(Error::invalid(format!(
                "truncation {} must divide iterations {}",
                self.truncation, self.iterations
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) || self.lr_decay_every == 0 {
            return Err(Error::invalid("learning rate and decay period must be positive"));
        }
        Ok(())
    }

    /// Step-decayed rate for a 0-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }

    pub fn updates_per_batch(&self) -> usize {
        self.iterations / self.truncation
    }
}

/// Iterate pair carried between chunks; treated as constant by backprop.
#[derive(Debug, Clone)]
pub(crate) struct UnrollState {
    pub x: Vec<f32>,
    pub x_prev: Vec<f32>,
    pub t: usize,
}

struct Step {
    x_t: Vec<f32>,
    x_prev: Vec<f32>,
    cache: ForwardCache,
}

/// Problem data shared by all chunks of one sample.
pub(crate) struct Unroll<'a> {
    sample: &'a TrainingSample,
    model: ForwardModel<'a>,
    obs: Vec<&'a [f32]>,
    step: f32,
}

impl<'a> Unroll<'a> {
    pub fn new(sample: &'a TrainingSample, lipschitz_safety: bool) -> Result<Self> {
        let (h, w, c) = sample.burst.dims();
        if c != 3 || sample.gt.dims() != (h, w, 3) {
            return Err(Error::dims((h, w, 3), sample.gt.dims()));
        }
        Ok(Self {
            sample,
            model: ForwardModel::new(&sample.warps, sample.op)?,
            obs: sample.burst.frames().iter().map(|f| f.data()).collect(),
            step: step_scale(&sample.warps, sample.op, lipschitz_safety)?,
        })
    }

    pub fn start(&self) -> Result<UnrollState> {
        let x = initialize_estimate(&self.sample.burst, self.sample.op)?.into_data();
        Ok(UnrollState {
            x_prev: vec![0.0; x.len()],
            x,
            t: 0,
        })
    }

    /// Runs `len` iterations from `state`, returns the chunk's ℓ1 loss, and
    /// adds `scale * dLoss/dParams` to `grads`.
    pub fn chunk(&self, params: &ProxNetParams, state: &mut UnrollState, len: usize, grads: &mut ProxNetParams, scale: f32) -> Result<f64> {
        let (h, w, _) = self.model.dims();
        let sigma = self.sample.sigma;
        let mut tape = Vec::with_capacity(len);
        let t0 = state.t;
        for t in t0..t0 + len {
            let (_, v) = solver::data_step(&self.model, &self.obs, &state.x, &state.x_prev, params.w[t], self.step);
            let (next, cache) = forward_raw(params, &v, h, w, sigma, params.s[t] as f64);
            let x_t = std::mem::replace(&mut state.x, next);
            let x_prev = std::mem::replace(&mut state.x_prev, x_t.clone());
            tape.push(Step { x_t, x_prev, cache });
        }
        state.t = t0 + len;

        let (loss, g_end) = l1_raw(&state.x, self.sample.gt.data());
        let mut g_next: Vec<f32> = g_end.iter().map(|g| g * scale).collect();
        let mut g_cur = vec![0.0f32; g_next.len()];
        for (offset, step) in tape.iter().enumerate().rev() {
            let t = t0 + offset;
            let (g_v, g_s) = backward_raw(params, &step.cache, &g_next, grads);
            grads.s[t] += g_s as f32;
            // v = x_t - step * (A u - b), u = x_t + w (x_t - x_prev)
            let a_gv = self.model.normal_apply(&g_v);
            let wt = params.w[t];
            let mut g_w = 0.0f64;
            let mut g_prev = vec![0.0f32; g_v.len()];
            for i in 0..g_v.len() {
                let g_u = -self.step * a_gv[i];
                g_w += g_u as f64 * (step.x_t[i] - step.x_prev[i]) as f64;
                g_cur[i] += g_v[i] + (1.0 + wt) * g_u;
                g_prev[i] = -wt * g_u;
            }
            grads.w[t] += g_w as f32;
            g_next = std::mem::replace(&mut g_cur, g_prev);
        }
        Ok(loss)
    }
}

/// Loss and gradient of one sample unrolled through all `K` iterations with
/// a single loss at the end.
pub fn unrolled_gradient(params: &ProxNetParams, sample: &TrainingSample, lipschitz_safety: bool) -> Result<(f64, ProxNetParams)> {
    let unroll = Unroll::new(sample, lipschitz_safety)?;
    let mut state = unroll.start()?;
    let mut grads = params.zeros_like();
    let loss = unroll.chunk(params, &mut state, params.iterations(), &mut grads, 1.0)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean chunk loss over the epoch.
    pub loss: f64,
    /// Mean loss of the final chunk only.
    pub final_loss: f64,
    pub updates: usize,
    pub learning_rate: f64,
}

/// Owns parameters and optimizer state across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ProxNetParams,
    pub optimizer: AmsGradState,
    /// Completed unrolled-training epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, net: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = init_params(net, config.iterations, config.s_max, config.s_min, &mut rng)?;
        Ok(Self::from_params(config, params))
    }

    pub fn from_params(config: TrainConfig, params: ProxNetParams) -> Self {
        let optimizer = AmsGradState::new(&params, config.optimizer);
        Self {
            config,
            params,
            optimizer,
            epoch: 0,
        }
    }

    fn epoch_order(&self, n: usize, salt: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut sample_rng(self.config.seed ^ salt, self.epoch as u64));
        order
    }

    /// Single-image ℓ1 denoising of ground-truth crops at each sample's
    /// noise level, with `s = 0`. Uses its own optimizer state.
    pub fn pretrain(&mut self, data: &dyn SampleSource, epochs: usize) -> Result<Vec<f64>> {
        let mut opt = AmsGradState::new(&self.params, self.config.optimizer);
        let mut losses = Vec::with_capacity(epochs);
        for e in 0..epochs {
            let mut rng = sample_rng(self.config.seed ^ 0x5eed, e as u64);
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(self.config.batch_size) {
                let mut grads = self.params.zeros_like();
                let scale = 1.0 / batch.len() as f32;
                for &i in batch {
                    let s = data.sample(i)?;
                    let (h, w, _) = s.gt.dims();
                    let noisy = add_noise(&s.gt, &NoiseModel::Gaussian { sigma: s.sigma.min(1.0) }, &mut rng);
                    let (out, cache) = forward_raw(&self.params, noisy.data(), h, w, s.sigma, 0.0);
                    let (loss, g) = l1_raw(&out, s.gt.data());
                    let g: Vec<f32> = g.iter().map(|v| v * scale).collect();
                    backward_raw(&self.params, &cache, &g, &mut grads);
                    total += loss;
                }
                grads.s.fill(0.0);
                optimizer_step(&mut self.params, &grads, &mut opt, self.config.pretrain_learning_rate)?;
            }
            let mean = total / data.len().max(1) as f64;
            info!("pretrain epoch {}: l1 {mean:.5}", e + 1);
            losses.push(mean);
        }
        Ok(losses)
    }

    /// One epoch of truncated backpropagation through the unrolled solver.
    pub fn train_epoch(&mut self, data: &dyn SampleSource) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let cfg = self.config.clone();
        if self.params.iterations() != cfg.iterations {
            return Err(Error::dims(cfg.iterations, self.params.iterations()));
        }
        let lr = cfg.learning_rate_at(self.epoch);
        let order = self.epoch_order(data.len(), 0);
        let (mut total, mut final_total, mut chunks, mut updates) = (0.0, 0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let samples = batch.iter().map(|&i| data.sample(i)).collect::<Result<Vec<_>>>()?;
            let unrolls = samples
                .iter()
                .map(|s| Unroll::new(s, cfg.lipschitz_safety))
                .collect::<Result<Vec<_>>>()?;
            let mut states = unrolls.iter().map(|u| u.start()).collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f32;
            for c in 0..cfg.updates_per_batch() {
                let mut grads = self.params.zeros_like();
                for (u, st) in unrolls.iter().zip(states.iter_mut()) {
                    let loss = u.chunk(&self.params, st, cfg.truncation, &mut grads, scale)?;
                    total += loss;
                    chunks += 1;
                    if c + 1 == cfg.updates_per_batch() {
                        final_total += loss;
                    }
                }
                optimizer_step(&mut self.params, &grads, &mut self.optimizer, lr)?;
                updates += 1;
            }
        }
        self.epoch += 1;
        let stats = EpochStats {
            epoch: self.epoch,
            loss: total / chunks as f64,
            final_loss: final_total / data.len() as f64,
            updates,
            learning_rate: lr,
        };
        info!(
            "epoch {}: chunk l1 {:.5}, final l1 {:.5}, lr {:.1e}",
            stats.epoch, stats.loss, stats.final_loss, lr
        );
        Ok(stats)
    }

    /// Writes `path` (parameters, with a JSON manifest next to it) and
    /// `path.opt` (optimizer state).
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "epoch": self.epoch,
            "train_config": self.config,
        });
        self.params.save(path, meta)?;
        let mut a = self.optimizer.to_archive()?;
        a.push_u32("epoch", &[self.epoch as u32])?;
        a.write(optimizer_path(path))
    }

    /// Restores a trainer written by [`save`](Self::save).
    pub fn resume(config: TrainConfig, path: &Path) -> Result<Self> {
        config.validate()?;
        let (params, _) = ProxNetParams::load(path)?;
        let a = TensorArchive::read(optimizer_path(path))?;
        let optimizer = AmsGradState::from_archive(&a)?;
        if optimizer.m.len() != params.flatten().len() {
            return Err(Error::Format("optimizer state does not match checkpoint".into()));
        }
        let epoch = a.u32("epoch")?.first().copied().unwrap_or(0) as usize;
        Ok(Self {
            config,
            params,
            optimizer,
            epoch,
        })
    }
}

pub fn optimizer_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("opt")
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ProxNetParams,
    pub pretrain_losses: Vec<f64>,
    pub epochs: Vec<EpochStats>,
}

/// Initialises, optionally pretrains, and runs `cfg.epochs` epochs.
pub fn tbptt_train(dataset: &dyn SampleSource, cfg: &TrainConfig, net: NetConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), net)?;
    let pretrain_losses = trainer.pretrain(dataset, cfg.pretrain_epochs)?;
    let epochs = (0..cfg.epochs)
        .map(|_| trainer.train_epoch(dataset))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutcome {
        params: trainer.params,
        pretrain_losses,
        epochs,
    })
}

/// Mean PSNR (linear RGB, peak 1) of the network-driven solver over `data`.
pub fn evaluate(params: &ProxNetParams, data: &dyn SampleSource) -> Result<f64> {
    let params = std::sync::Arc::new(params.clone());
    let mut total = 0.0;
    for i in 0..data.len() {
        let s = data.sample(i)?;
        let cfg = SolverConfig::from_network(params.clone(), s.sigma);
        let (x, _) = solver::run(&s.burst, &s.warps, s.op, &cfg)?;
        total += psnr(&x, &s.gt, 1.0)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Mean PSNR of the (clamped) reference frame against ground truth.
pub fn reference_psnr(data: &dyn SampleSource) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let s = data.sample(i)?;
        let x = initialize_estimate(&s.burst, s.op)?.clamp01();
        total += psnr(&x.with_space(PixelSpace::LinearRgb)?, &s.gt, 1.0)?;
    }
    Ok(total / data.len().max(1) as f64)
}
