//! Two-stage optimization: spatial weights on single frames, then temporal
//! weights on clips with the spatial weights frozen.

use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecConfig};
use crate::dataset::VideoSample;
use crate::denoiser::{
    embed_text, prepare_depth, Bound, Conditioning, Denoiser, DenoiserConfig, Partition, TemporalMode, Trainable,
};
use crate::error::{Error, Result};
use crate::mask::AttentionMask;
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::scalar::Scalar;
use crate::schedule::{loss_var, q_sample_at, NoiseSchedule};
use crate::tensor::Tensor;

pub const SMOOTHING_WINDOW: usize = 100;
pub const TEXT_SEED: u64 = 0x7e47;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Single frames as images; temporal modules inert.
    Image,
    /// Clips of `train_frames` frames.
    Video,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    TemporalOnly,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_frames: usize,
    pub p_uncond: f64,
    pub seed: u64,
    pub trainable_scope: TrainableScope,
    pub use_cam: bool,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Video,
            steps: 2000,
            learning_rate: 1e-4,
            batch_size: 8,
            train_frames: 16,
            p_uncond: 0.1,
            seed: 0,
            trainable_scope: TrainableScope::TemporalOnly,
            use_cam: true,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("train.batch_size must be >= 1".into());
        }
        if self.train_frames == 0 {
            bad.push("train.train_frames must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bad.push(format!("train.learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            bad.push(format!("train.p_uncond must lie in [0, 1], got {}", self.p_uncond));
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            bad.push("train.adam needs 0 <= beta1, beta2 < 1 and eps > 0".into());
        }
        bad
    }

    pub fn trainable(&self) -> Trainable {
        match (self.stage, self.trainable_scope) {
            (Stage::Image, _) => Trainable::SPATIAL,
            (Stage::Video, TrainableScope::TemporalOnly) => Trainable::TEMPORAL,
            (Stage::Video, TrainableScope::Full) => Trainable::ALL,
        }
    }
}

/// One video prepared for diffusion: latent, latent-resolution depth, text.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub z0: Tensor<T>,
    pub depth_lat: Tensor<T>,
    pub text_ctx: Tensor<T>,
}

pub fn prepare_examples<T: Scalar>(
    samples: &[VideoSample<T>],
    codec_cfg: &CodecConfig,
    model: &DenoiserConfig,
) -> Result<Vec<Example<T>>> {
    samples
        .iter()
        .map(|s| {
            let z0 = codec::encode(&s.frames, codec_cfg)?.z;
            if z0.dim(1) != model.latent_channels {
                return Err(Error::Config(vec![format!(
                    "model.latent_channels is {} but the codec produces {}",
                    model.latent_channels,
                    z0.dim(1)
                )]));
            }
            Ok(Example {
                z0,
                depth_lat: prepare_depth(&s.depth, codec_cfg.factor())?,
                text_ctx: embed_text(&s.caption, model.context_dim, model.context_tokens, TEXT_SEED),
            })
        })
        .collect()
}

/// Fully drawn mini-batch: clean latents, noise, timesteps, conditioning.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub z0: Tensor<T>,
    pub eps: Tensor<T>,
    pub timesteps: Vec<usize>,
    pub cond: Vec<Conditioning<T>>,
}

/// Draw the batch for `step`. Randomness depends only on `(seed, step)`, so an
/// interrupted run resumes on the same sequence.
pub fn draw_batch<T: Scalar>(examples: &[Example<T>], cfg: &TrainConfig, timesteps: usize, step: usize) -> Result<Batch<T>> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    let mut r = rng::stream(cfg.seed, &[step as u64]);
    let clip = match cfg.stage {
        Stage::Image => 1,
        Stage::Video => cfg.train_frames,
    };
    let mut z0 = Vec::new();
    let mut conds = Vec::with_capacity(cfg.batch_size);
    let mut ts = Vec::with_capacity(cfg.batch_size);
    let mut shape = None;
    for _ in 0..cfg.batch_size {
        let ex = &examples[r.random_range(0..examples.len())];
        let l = ex.z0.dim(0);
        if l < clip {
            return Err(Error::InvalidArgument(format!("video has {l} frames, training needs {clip}")));
        }
        let start = r.random_range(0..=l - clip);
        let frame = ex.z0.len() / l;
        let plane = ex.depth_lat.len() / l;
        z0.extend_from_slice(&ex.z0.data()[start * frame..(start + clip) * frame]);
        let depth = Tensor::new(
            vec![clip, 1, ex.depth_lat.dim(2), ex.depth_lat.dim(3)],
            ex.depth_lat.data()[start * plane..(start + clip) * plane].to_vec(),
        )?;
        let text = if r.random::<f64>() < cfg.p_uncond { Tensor::zeros(ex.text_ctx.shape()) } else { ex.text_ctx.clone() };
        conds.push(Conditioning::new(text, depth)?);
        ts.push(r.random_range(1..=timesteps));
        let s = ex.z0.shape();
        match shape {
            None => shape = Some([s[1], s[2], s[3]]),
            Some(prev) if prev != [s[1], s[2], s[3]] => {
                return Err(Error::Shape(format!("mixed latent shapes {prev:?} and {:?}", &s[1..])))
            }
            _ => {}
        }
    }
    let [c, h, w] = shape.expect("batch_size >= 1");
    let z0 = Tensor::new(vec![cfg.batch_size, clip, c, h, w], z0)?;
    let eps = Tensor::randn(z0.shape(), &mut r);
    Ok(Batch { z0, eps, timesteps: ts, cond: conds })
}

/// Subset of examples used to report losses comparably across runs.
pub fn pick_subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, &[0x5b5e7]);
    let mut v = sample_indices(&mut r, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

/// Noise every clip at its own timestep.
pub fn noisy_latents<T: Scalar>(batch: &Batch<T>, schedule: &NoiseSchedule) -> Result<Tensor<T>> {
    let b = batch.timesteps.len();
    let per = batch.z0.len() / b;
    let mut out = Vec::with_capacity(batch.z0.len());
    for (i, &t) in batch.timesteps.iter().enumerate() {
        let z0 = Tensor::new(vec![per], batch.z0.data()[i * per..(i + 1) * per].to_vec())?;
        let eps = Tensor::new(vec![per], batch.eps.data()[i * per..(i + 1) * per].to_vec())?;
        out.extend(q_sample_at(&z0, &eps, schedule.alpha_bar(t)?)?.into_data());
    }
    Tensor::new(batch.z0.shape().to_vec(), out)
}

/// Mask used by the video stage: causal when CAM is on, unmasked otherwise.
pub fn training_mask(len: usize, use_cam: bool) -> Result<AttentionMask> {
    if use_cam {
        AttentionMask::train(len)
    } else {
        AttentionMask::full(len)
    }
}

fn temporal_mode<'a>(cfg: &TrainConfig, mask: &'a AttentionMask) -> TemporalMode<'a> {
    match cfg.stage {
        Stage::Image => TemporalMode::Disabled,
        Stage::Video => TemporalMode::Masked(mask),
    }
}

/// Loss of the current model on a batch without updating anything.
pub fn batch_loss<T: Scalar>(model: &Denoiser<T>, batch: &Batch<T>, cfg: &TrainConfig, schedule: &NoiseSchedule) -> Result<f64> {
    let z_t = noisy_latents(batch, schedule)?;
    let mask = training_mask(batch.z0.dim(1), cfg.use_cam)?;
    let eps_hat = model.denoise(&z_t, &batch.timesteps, &batch.cond, temporal_mode(cfg, &mask))?;
    Ok(crate::schedule::loss_video(&batch.eps, &eps_hat)?.to_f64_lossy())
}

/// Forward, backward and one optimizer update of the parameters in scope.
/// Returns the loss before the update.
pub fn train_step<T: Scalar>(
    model: &mut Denoiser<T>,
    opt: &mut Adam<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let z_t = noisy_latents(batch, schedule)?;
    let mask = training_mask(batch.z0.dim(1), cfg.use_cam)?;
    let grads = {
        let bound = Bound::new(&model.params, cfg.trainable());
        let eps_hat = model.forward(&bound, &z_t, &batch.timesteps, &batch.cond, temporal_mode(cfg, &mask))?;
        let loss = loss_var(&batch.eps, &eps_hat)?;
        let value = loss.value().data()[0].to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {value} at optimizer step {}", opt.step + 1)));
        }
        (value, bound.gradients(&mut loss.backward()))
    };
    let (value, grads) = grads;
    opt.update(&mut model.params, &grads, cfg.learning_rate)?;
    Ok(value)
}

/// Trailing mean over `window` losses.
pub fn smooth(losses: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut acc = 0.0;
    losses
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            acc += l;
            if i >= w {
                acc -= losses[i - w];
            }
            acc / (i + 1).min(w) as f64
        })
        .collect()
}

/// Mean of the first and last `window` losses.
pub fn initial_final(losses: &[f64], window: usize) -> (f64, f64) {
    let w = window.min(losses.len()).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    (mean(&losses[..w.min(losses.len())]), mean(&losses[losses.len().saturating_sub(w)..]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub losses: Vec<f64>,
    pub config: TrainConfig,
}

/// Model, optimizer and loss history of one stage.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: Denoiser<T>,
    pub optimizer: Adam<T>,
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub step: usize,
    pub losses: Vec<f64>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Denoiser<T>, config: TrainConfig, schedule: NoiseSchedule) -> Result<Self> {
        let bad = config.validate();
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        if config.stage == Stage::Video && config.train_frames > model.config.train_frames * 4 {
            return Err(Error::Config(vec![format!(
                "train.train_frames ({}) is far beyond model.train_frames ({})",
                config.train_frames, model.config.train_frames
            )]));
        }
        let optimizer = Adam::new(config.adam);
        Ok(Self { model, optimizer, config, schedule, step: 0, losses: Vec::new() })
    }

    /// Stage-B start: spatial weights from a stage-A model, temporal weights
    /// freshly zero-initialized.
    pub fn video_from_image(image: &Denoiser<T>, model_cfg: DenoiserConfig, config: TrainConfig, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        let mut model = Denoiser::new(model_cfg, seed)?;
        for name in model.params.names(Partition::Spatial).cloned().collect::<Vec<_>>() {
            let src = image
                .params
                .get(&name)
                .filter(|p| p.partition == Partition::Spatial)
                .ok_or_else(|| Error::Checkpoint(format!("image checkpoint lacks spatial parameter {name}")))?;
            let dst = model.params.get_mut(&name).expect("listed name");
            if src.tensor.shape() != dst.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: checkpoint shape {:?}, model expects {:?}",
                    src.tensor.shape(),
                    dst.tensor.shape()
                )));
            }
            dst.tensor = src.tensor.clone();
        }
        Self::new(model, config, schedule)
    }

    pub fn step_once(&mut self, examples: &[Example<T>]) -> Result<f64> {
        let batch = draw_batch(examples, &self.config, self.schedule.timesteps(), self.step)?;
        let loss = train_step(&mut self.model, &mut self.optimizer, &batch, &self.config, &self.schedule)?;
        self.step += 1;
        self.losses.push(loss);
        Ok(loss)
    }

    /// Train until `config.steps`, checkpointing into `out` when given.
    pub fn run(&mut self, examples: &[Example<T>], out: Option<&Path>) -> Result<()> {
        while self.step < self.config.steps {
            self.step_once(examples)?;
            let every = self.config.checkpoint_every;
            if let Some(dir) = out {
                if every > 0 && self.step % every == 0 && self.step < self.config.steps {
                    self.save(dir)?;
                }
            }
        }
        if let Some(dir) = out {
            self.save(dir)?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.save(dir)?;
        self.optimizer.save(&dir.join("optimizer"))?;
        let state = TrainState { step: self.step, losses: self.losses.clone(), config: self.config.clone() };
        let json = serde_json::to_string_pretty(&state).expect("state serializes");
        crate::vtf::write_atomic(&dir.join("train_state.json"), json.as_bytes())
    }

    /// Resume from a checkpoint written by [`Trainer::save`]. `steps` may be
    /// raised to continue past the original target.
    pub fn resume(dir: &Path, schedule: NoiseSchedule, steps: Option<usize>) -> Result<Self> {
        let model = Denoiser::load(dir)?;
        let optimizer = Adam::load(&dir.join("optimizer"))?;
        let path = dir.join("train_state.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut state: TrainState =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if let Some(s) = steps {
            state.config.steps = s;
        }
        Ok(Self { model, optimizer, config: state.config, schedule, step: state.step, losses: state.losses })
    }
}
