//! DDIM sampling with classifier-free guidance, including clips longer than
//! the training length under a banded causal mask.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{self, CodecConfig, LatentVideo};
use crate::denoiser::{embed_text, prepare_depth, Conditioning, Denoiser, TemporalMode};
use crate::error::{Error, Result};
use crate::mask::inference_mask;
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;
use crate::training::TEXT_SEED;

/// Longest clip, as a multiple of the training length, the sampler accepts.
pub const MAX_LENGTH_FACTOR: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub eta: f64,
    pub guidance_weight: f64,
    pub frames: usize,
    /// Banded window; `None` uses the model's training length.
    #[serde(default)]
    pub window: Option<usize>,
    pub seed: u64,
    /// Apply the causal/banded mask; off reproduces the unmasked variant.
    pub use_cam: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { num_steps: 50, eta: 0.0, guidance_weight: 7.5, frames: 16, window: None, seed: 0, use_cam: true }
    }
}

impl SamplerConfig {
    pub fn validate(&self, timesteps: usize) -> Vec<String> {
        let mut bad = Vec::new();
        if self.num_steps == 0 || self.num_steps > timesteps {
            bad.push(format!("sampler.num_steps must lie in 1..={timesteps}, got {}", self.num_steps));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            bad.push(format!("sampler.eta must lie in [0, 1], got {}", self.eta));
        }
        if !self.guidance_weight.is_finite() {
            bad.push("sampler.guidance_weight must be finite".into());
        }
        if self.frames == 0 {
            bad.push("sampler.frames must be >= 1".into());
        }
        if let Some(w) = self.window {
            if w == 0 || w > self.frames {
                bad.push(format!("sampler.window must lie in 1..=sampler.frames, got {w}"));
            }
        }
        bad
    }
}

/// Descending timesteps `t_s = floor((s+1) T / S)` for `s = S-1, ..., 0`.
pub fn ddim_timesteps(timesteps: usize, steps: usize) -> Vec<usize> {
    (0..steps).rev().map(|s| (s + 1) * timesteps / steps).collect()
}

/// One DDIM update from `t` to `t_prev` (`t_prev = 0` is the clean end).
pub fn ddim_step<T: Scalar>(
    z_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    eta: f64,
    noise_rng: &mut Rng,
) -> Result<Tensor<T>> {
    if t_prev >= t {
        return Err(Error::InvalidArgument(format!("ddim_step needs t > t_prev, got {t} -> {t_prev}")));
    }
    ddim_step_at(z_t, eps_hat, schedule.alpha_bar(t)?, schedule.alpha_bar(t_prev)?, eta, noise_rng)
}

/// [`ddim_step`] at explicit cumulative products.
pub fn ddim_step_at<T: Scalar>(
    z_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    ab_t: f64,
    ab_prev: f64,
    eta: f64,
    noise_rng: &mut Rng,
) -> Result<Tensor<T>> {
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).max(0.0).sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let (sa, s1a) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let sp = ab_prev.sqrt();
    let [sa, s1a, sp, dir] = [sa, s1a, sp, dir].map(T::from_f64_lossy);
    let mut out = z_t.zip_map(eps_hat, |z, e| {
        let x0 = (z - s1a * e) / sa;
        sp * x0 + dir * e
    })?;
    if sigma > 0.0 {
        let noise = Tensor::<T>::randn(z_t.shape(), noise_rng);
        let s = T::from_f64_lossy(sigma);
        for (o, n) in out.data_mut().iter_mut().zip(noise.data()) {
            *o += s * *n;
        }
    }
    Ok(out)
}

/// `x0` implied by a noise prediction.
pub fn predict_x0<T: Scalar>(z_t: &Tensor<T>, eps_hat: &Tensor<T>, alpha_bar: f64) -> Result<Tensor<T>> {
    let (sa, s1a) = (T::from_f64_lossy(alpha_bar.sqrt()), T::from_f64_lossy((1.0 - alpha_bar).sqrt()));
    z_t.zip_map(eps_hat, |z, e| (z - s1a * e) / sa)
}

/// `eps_uncond + w (eps_cond - eps_uncond)`.
pub fn guide<T: Scalar>(eps_cond: &Tensor<T>, eps_uncond: &Tensor<T>, w: f64) -> Result<Tensor<T>> {
    let w = T::from_f64_lossy(w);
    let v = T::one() - w;
    eps_cond.zip_map(eps_uncond, |c, u| v * u + w * c)
}

/// Run the reverse process from `z_T` with an arbitrary noise predictor.
pub fn ddim_loop<T: Scalar>(
    z_t: Tensor<T>,
    schedule: &NoiseSchedule,
    steps: usize,
    eta: f64,
    noise_rng: &mut Rng,
    mut predict: impl FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let ts = ddim_timesteps(schedule.timesteps(), steps);
    let mut z = z_t;
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        let eps = predict(&z, t)?;
        z = ddim_step(&z, &eps, t, t_prev, schedule, eta, noise_rng)?;
    }
    Ok(z)
}

/// Sample latents `(L, C, H', W')` for one conditioning.
pub fn sample_latent<T: Scalar>(
    model: &Denoiser<T>,
    cond: &Conditioning<T>,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    temporal: bool,
) -> Result<Tensor<T>> {
    let bad = cfg.validate(schedule.timesteps());
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }
    let l = cond.frames();
    let train_len = model.config.train_frames;
    if l != cfg.frames {
        return Err(Error::Shape(format!("depth has {l} frames, sampler.frames is {}", cfg.frames)));
    }
    if l > MAX_LENGTH_FACTOR * train_len {
        return Err(Error::InvalidArgument(format!(
            "{l} frames exceeds {MAX_LENGTH_FACTOR} x the training length {train_len}"
        )));
    }
    let window = cfg.window.unwrap_or(train_len).min(l);
    let mask = inference_mask(l, train_len, window, cfg.use_cam)?;
    let mode = if temporal { TemporalMode::Masked(&mask) } else { TemporalMode::Disabled };
    let (h, w) = (cond.depth_lat.dim(2), cond.depth_lat.dim(3));
    let c = model.config.latent_channels;
    let z_t = Tensor::<T>::randn(&[1, l, c, h, w], &mut rng::stream(cfg.seed, &[0x2e70]));
    let mut noise_rng = rng::stream(cfg.seed, &[0x2e71]);
    let pair = [cond.clone(), cond.unconditional()];
    let z0 = ddim_loop(z_t, schedule, cfg.num_steps, cfg.eta, &mut noise_rng, |z, t| {
        // conditional and unconditional branches share one batched pass
        let mut shape = z.shape().to_vec();
        shape[0] = 2;
        let both = Tensor::new(shape, [z.data(), z.data()].concat())?;
        let eps = model.denoise(&both, &[t, t], &pair, mode)?;
        let halves = eps.unstack();
        guide(&halves[0], &halves[1], cfg.guidance_weight)?.reshape(z.shape())
    })?;
    z0.reshape(&[l, c, h, w])
}

/// Caption and raw depth `(L, 1, H, W)` to a pixel video `(L, 3, H, W)`.
pub fn sample<T: Scalar>(
    caption: &str,
    depth: &Tensor<T>,
    model: &Denoiser<T>,
    codec_cfg: &CodecConfig,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Tensor<T>> {
    let cond = Conditioning::new(
        embed_text(caption, model.config.context_dim, model.config.context_tokens, TEXT_SEED),
        prepare_depth(depth, codec_cfg.factor())?,
    )?;
    let z0 = sample_latent(model, &cond, schedule, cfg, true)?;
    codec::decode(&LatentVideo::new(z0)?, codec_cfg)
}

/// Binary portable pixmap of frame `index` of `(L, 3, H, W)` pixels in `[0, 1]`.
pub fn frame_ppm<T: Scalar>(video: &Tensor<T>, index: usize) -> Vec<u8> {
    let (h, w) = (video.dim(2), video.dim(3));
    let f = video.slab(index);
    let mut header = String::new();
    write!(header, "P6\n{w} {h}\n255\n").expect("string write");
    let mut out = header.into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = f[(c * h + y) * w + x].to_f64_lossy().clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn write_ppm_frames<T: Scalar>(dir: &Path, video: &Tensor<T>) -> Result<()> {
    for i in 0..video.dim(0) {
        crate::vtf::write_atomic(&dir.join(format!("frame_{i:03}.ppm")), &frame_ppm(video, i))?;
    }
    Ok(())
}
