//! The spatio-temporal denoiser `eps_{theta,phi}(z_t; c, s, t)`.
//!
//! Spatial layers run on frames folded into the batch axis. Temporal modules
//! (residual temporal convolutions and temporal transformers) are interleaved
//! after each spatial residual block and spatial transformer, and start as
//! exact identities.

mod checkpoint;
mod conditioning;
mod config;
mod layers;
mod params;
mod temporal;
mod unet;

use std::fs;
use std::path::Path;

pub use checkpoint::{load_store, save_store, IndexEntry, INDEX_FILE};
pub use conditioning::{embed_text, prepare_depth, reshape_frames_to_video, reshape_video_to_frames, Conditioning};
pub use config::{DenoiserConfig, TemporalVariant};
pub use layers::attention;
pub use params::{Bound, Init, Param, ParamSpec, ParamStore, Partition, Registry, Trainable};
pub use temporal::{SpatioTemporalBlock, TemporalTransformer};

use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::mask::{AttentionMask, MaskMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MODEL_FILE: &str = "model.json";

/// How the temporal modules participate in a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum TemporalMode<'a> {
    /// Skip every temporal module: the per-frame image model.
    Disabled,
    /// Run temporal modules with this attention mask.
    Masked(&'a AttentionMask),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser<T> {
    pub config: DenoiserConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Denoiser<T> {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        let bad = config.validate();
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        let params = ParamStore::initialize(&Self::registry(&config), seed);
        Ok(Self { config, params })
    }

    pub fn from_params(config: DenoiserConfig, params: ParamStore<T>) -> Result<Self> {
        let bad = config.validate();
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        params.check_against(&Self::registry(&config))?;
        Ok(Self { config, params })
    }

    pub fn registry(config: &DenoiserConfig) -> Registry {
        unet::declare(config)
    }

    /// Reset the temporal partition to its (zero-output) initial state.
    pub fn reset_temporal(&mut self, seed: u64) {
        self.params.reinitialize(&Self::registry(&self.config), Partition::Temporal, seed);
    }

    /// Full differentiable forward pass. `z_t` is `(B, L, C, H', W')`, one
    /// timestep and one conditioning per video. Returns `(B, L, C, H', W')`.
    pub fn forward(
        &self,
        bound: &Bound<'_, T>,
        z_t: &Tensor<T>,
        timesteps: &[usize],
        cond: &[Conditioning<T>],
        temporal: TemporalMode<'_>,
    ) -> Result<Var<T>> {
        let cfg = &self.config;
        let [b, l, c, h, w] = match *z_t.shape() {
            [b, l, c, h, w] => [b, l, c, h, w],
            _ => return Err(Error::Shape(format!("z_t must be (B, L, C, H', W'), got {:?}", z_t.shape()))),
        };
        if c != cfg.latent_channels {
            return Err(Error::Shape(format!("z_t has {c} channels, model expects {}", cfg.latent_channels)));
        }
        let div = cfg.spatial_divisor();
        if h % div != 0 || w % div != 0 || b == 0 || l == 0 {
            return Err(Error::Shape(format!("latent size {h}x{w} must be nonzero and divisible by {div}")));
        }
        if timesteps.len() != b || cond.len() != b {
            return Err(Error::Shape(format!("{b} videos need {b} timesteps and conditionings, got {} and {}", timesteps.len(), cond.len())));
        }
        for (i, cd) in cond.iter().enumerate() {
            if cd.depth_lat.shape() != [l, 1, h, w] {
                return Err(Error::Shape(format!("conditioning {i}: depth {:?}, expected {:?}", cd.depth_lat.shape(), [l, 1, h, w])));
            }
            if cd.text_ctx.shape() != [cfg.context_tokens, cfg.context_dim] {
                return Err(Error::Shape(format!(
                    "conditioning {i}: text context {:?}, expected {:?}",
                    cd.text_ctx.shape(),
                    [cfg.context_tokens, cfg.context_dim]
                )));
            }
        }
        let temporal = match temporal {
            TemporalMode::Disabled => None,
            TemporalMode::Masked(m) => {
                if m.len() != l {
                    return Err(Error::Shape(format!("mask length {} does not match {l} frames", m.len())));
                }
                Some((m.mode() != MaskMode::Full).then(|| Var::constant(m.additive())))
            }
        };

        let n = b * l;
        let frame = c * h * w;
        let plane = h * w;
        let mut input = Vec::with_capacity(n * (c + 1) * plane);
        for (bi, cd) in cond.iter().enumerate() {
            for li in 0..l {
                let f = (bi * l + li) * frame;
                input.extend_from_slice(&z_t.data()[f..f + frame]);
                input.extend_from_slice(&cd.depth_lat.data()[li * plane..(li + 1) * plane]);
            }
        }
        let x = Var::constant(Tensor::from_parts(vec![n, c + 1, h, w], input));

        let per_frame_t: Vec<usize> = timesteps.iter().flat_map(|&t| std::iter::repeat_n(t, l)).collect();
        let temb = unet::time_mlp(bound, unet::timestep_embedding(&per_frame_t, cfg.base_width));
        let ctx_len = cfg.context_tokens * cfg.context_dim;
        let mut ctx = Vec::with_capacity(n * ctx_len);
        for cd in cond {
            for _ in 0..l {
                ctx.extend_from_slice(cd.text_ctx.data());
            }
        }
        let ctx = Var::constant(Tensor::from_parts(vec![n, cfg.context_tokens, cfg.context_dim], ctx));

        let pass = unet::Pass { b: bound, cfg, frames: l, temb, ctx, temporal };
        let out = pass.run(&x);
        Ok(ag::reshape(&out, &[b, l, c, h, w]))
    }

    /// Inference-only prediction of the noise.
    pub fn denoise(
        &self,
        z_t: &Tensor<T>,
        timesteps: &[usize],
        cond: &[Conditioning<T>],
        temporal: TemporalMode<'_>,
    ) -> Result<Tensor<T>> {
        let bound = Bound::new(&self.params, Trainable::NONE);
        Ok(self.forward(&bound, z_t, timesteps, cond, temporal)?.value().clone())
    }

    /// Apply the model frame by frame as independent one-frame clips with
    /// temporal modules disabled.
    pub fn denoise_per_frame(&self, z_t: &Tensor<T>, timesteps: &[usize], cond: &[Conditioning<T>]) -> Result<Tensor<T>> {
        let s = z_t.shape().to_vec();
        if s.len() != 5 || cond.len() != s[0] || timesteps.len() != s[0] {
            return Err(Error::Shape(format!("z_t {s:?} does not match {} conditionings", cond.len())));
        }
        let l = s[1];
        let frames = reshape_video_to_frames(z_t.clone())?.reshape(&[s[0] * l, 1, s[2], s[3], s[4]])?;
        let mut fc = Vec::with_capacity(s[0] * l);
        let mut ft = Vec::with_capacity(s[0] * l);
        for (cd, &t) in cond.iter().zip(timesteps) {
            for d in cd.depth_lat.unstack() {
                fc.push(Conditioning { text_ctx: cd.text_ctx.clone(), depth_lat: d.reshape(&[1, 1, s[3], s[4]])? });
                ft.push(t);
            }
        }
        self.denoise(&frames, &ft, &fc, TemporalMode::Disabled)?.reshape(&s)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_store(&dir.join("params"), &self.params)?;
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        crate::vtf::write_atomic(&dir.join(MODEL_FILE), json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config: DenoiserConfig =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_params(config, load_store(&dir.join("params"))?)
    }
}
