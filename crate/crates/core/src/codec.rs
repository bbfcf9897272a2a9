//! Parameter-free, lossless frame codec standing in for a learned
//! autoencoder. Diffusion runs on its latents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    /// Latent equals pixels.
    Identity,
    /// Fold each `f x f` pixel block into channels, then map `[0,1]` to `[-1,1]`.
    SpaceToDepth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub kind: CodecKind,
    pub factor: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { kind: CodecKind::SpaceToDepth, factor: 2 }
    }
}

impl CodecConfig {
    pub fn identity() -> Self {
        Self { kind: CodecKind::Identity, factor: 1 }
    }

    pub fn space_to_depth(factor: usize) -> Self {
        Self { kind: CodecKind::SpaceToDepth, factor }
    }

    pub fn factor(&self) -> usize {
        match self.kind {
            CodecKind::Identity => 1,
            CodecKind::SpaceToDepth => self.factor,
        }
    }

    pub fn latent_channels(&self, pixel_channels: usize) -> usize {
        pixel_channels * self.factor() * self.factor()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.kind == CodecKind::SpaceToDepth && self.factor == 0 {
            bad.push("codec.factor must be >= 1".to_string());
        }
        if self.kind == CodecKind::Identity && self.factor != 1 {
            bad.push(format!("codec.factor must be 1 for the identity codec, got {}", self.factor));
        }
        bad
    }
}

/// Latent clip `(L, C, H', W')`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo<T> {
    pub z: Tensor<T>,
}

impl<T: Scalar> LatentVideo<T> {
    pub fn new(z: Tensor<T>) -> Result<Self> {
        if z.rank() != 4 {
            return Err(Error::Shape(format!("latent must be (L, C, H', W'), got {:?}", z.shape())));
        }
        if !z.is_finite() {
            return Err(Error::NonFinite("latent contains non-finite values".into()));
        }
        Ok(Self { z })
    }

    pub fn frames(&self) -> usize {
        self.z.dim(0)
    }

    pub fn channels(&self) -> usize {
        self.z.dim(1)
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.z.dim(2), self.z.dim(3))
    }
}

pub fn encode<T: Scalar>(frames: &Tensor<T>, config: &CodecConfig) -> Result<LatentVideo<T>> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("frames must be (L, C, H, W), got {s:?}")));
    }
    let f = config.factor();
    if f == 0 || s[2] % f != 0 || s[3] % f != 0 {
        return Err(Error::Shape(format!("spatial size {}x{} not divisible by codec factor {f}", s[2], s[3])));
    }
    if config.kind == CodecKind::Identity {
        return LatentVideo::new(frames.clone());
    }
    let (l, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (lh, lw) = (h / f, w / f);
    let two = T::from_f64_lossy(2.0);
    let mut out = Vec::with_capacity(frames.len());
    let d = frames.data();
    for li in 0..l {
        for ci in 0..c {
            for dy in 0..f {
                for dx in 0..f {
                    for y in 0..lh {
                        for x in 0..lw {
                            let v = d[((li * c + ci) * h + y * f + dy) * w + x * f + dx];
                            out.push(two * v - T::one());
                        }
                    }
                }
            }
        }
    }
    LatentVideo::new(Tensor::from_parts(vec![l, c * f * f, lh, lw], out))
}

/// Inverse of [`encode`] without the final clamp.
pub fn decode_unclamped<T: Scalar>(latent: &LatentVideo<T>, config: &CodecConfig, pixel_channels: usize) -> Result<Tensor<T>> {
    let s = latent.z.shape();
    let f = config.factor();
    if s[1] != config.latent_channels(pixel_channels) {
        return Err(Error::Shape(format!(
            "latent has {} channels, codec expects {}",
            s[1],
            config.latent_channels(pixel_channels)
        )));
    }
    if config.kind == CodecKind::Identity {
        return Ok(latent.z.clone());
    }
    let (l, c, lh, lw) = (s[0], pixel_channels, s[2], s[3]);
    let (h, w) = (lh * f, lw * f);
    let half = T::from_f64_lossy(0.5);
    let mut out = vec![T::zero(); l * c * h * w];
    let d = latent.z.data();
    let mut i = 0;
    for li in 0..l {
        for ci in 0..c {
            for dy in 0..f {
                for dx in 0..f {
                    for y in 0..lh {
                        for x in 0..lw {
                            out[((li * c + ci) * h + y * f + dy) * w + x * f + dx] = (d[i] + T::one()) * half;
                            i += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![l, c, h, w], out))
}

/// Latent to RGB pixels, clamped to `[0, 1]`.
pub fn decode<T: Scalar>(latent: &LatentVideo<T>, config: &CodecConfig) -> Result<Tensor<T>> {
    Ok(decode_unclamped(latent, config, 3)?.map(|v| v.max(T::zero()).min(T::one())))
}
