//! The U-Net: declaration of every parameter and the forward pass over
//! frames-as-batch activations.

use crate::autograd::{self as ag, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::DenoiserConfig;
use super::layers::{self, attention};
use super::params::{Bound, Partition, Registry};
use super::temporal;

const THETA: Partition = Partition::Spatial;

pub(crate) fn declare(cfg: &DenoiserConfig) -> Registry {
    let mut reg = Registry::default();
    let c0 = cfg.base_width;
    let temb = 4 * c0;
    layers::declare_linear(&mut reg, "time.fc1", c0, temb, true, THETA, false);
    layers::declare_linear(&mut reg, "time.fc2", temb, temb, true, THETA, false);
    layers::declare_conv(&mut reg, "conv_in", cfg.latent_channels + 1, c0, 3, THETA, false);

    let levels = cfg.level_multipliers.len();
    let mut prev = c0;
    for i in 0..levels {
        let w = cfg.level_width(i);
        declare_unit(&mut reg, cfg, &format!("down.{i}"), prev, w);
        if i + 1 < levels {
            layers::declare_conv(&mut reg, &format!("downsample.{i}"), w, w, 3, THETA, false);
        }
        prev = w;
    }
    declare_unit(&mut reg, cfg, "mid", prev, prev);
    for i in (0..levels).rev() {
        let w = cfg.level_width(i);
        declare_unit(&mut reg, cfg, &format!("up.{i}"), 2 * w, w);
        if i > 0 {
            layers::declare_conv(&mut reg, &format!("upsample.{i}"), w, cfg.level_width(i - 1), 3, THETA, false);
        }
    }
    layers::declare_norm(&mut reg, "out.norm", c0, THETA);
    layers::declare_conv(&mut reg, "out.conv", c0, cfg.latent_channels, 3, THETA, false);
    reg
}

/// One unit per level: ResBlock, STRB, spatial transformer, temporal transformer.
fn declare_unit(reg: &mut Registry, cfg: &DenoiserConfig, p: &str, cin: usize, w: usize) {
    declare_res(reg, cfg, &format!("{p}.res"), cin, w);
    let variant = cfg.temporal_variant;
    if variant.has_temporal_conv() {
        temporal::declare_strb(reg, &format!("{p}.strb"), w, variant);
    }
    declare_spatial_transformer(reg, cfg, &format!("{p}.st"), w);
    if variant.has_transformer() {
        temporal::declare_tt(reg, &format!("{p}.tt"), w, cfg.heads_for(w), cfg.rel_clip(), cfg.ff_mult);
    }
}

fn declare_res(reg: &mut Registry, cfg: &DenoiserConfig, p: &str, cin: usize, cout: usize) {
    layers::declare_norm(reg, &format!("{p}.norm1"), cin, THETA);
    layers::declare_conv(reg, &format!("{p}.conv1"), cin, cout, 3, THETA, false);
    layers::declare_linear(reg, &format!("{p}.temb"), 4 * cfg.base_width, cout, true, THETA, false);
    layers::declare_norm(reg, &format!("{p}.norm2"), cout, THETA);
    layers::declare_conv(reg, &format!("{p}.conv2"), cout, cout, 3, THETA, false);
    if cin != cout {
        layers::declare_conv(reg, &format!("{p}.skip"), cin, cout, 1, THETA, false);
    }
}

fn declare_spatial_transformer(reg: &mut Registry, cfg: &DenoiserConfig, p: &str, w: usize) {
    layers::declare_norm(reg, &format!("{p}.norm"), w, THETA);
    layers::declare_linear(reg, &format!("{p}.proj_in"), w, w, true, THETA, false);
    layers::declare_norm(reg, &format!("{p}.norm1"), w, THETA);
    for name in ["q1", "k1", "v1", "q2"] {
        layers::declare_linear(reg, &format!("{p}.{name}"), w, w, false, THETA, false);
    }
    layers::declare_linear(reg, &format!("{p}.out1"), w, w, true, THETA, false);
    layers::declare_norm(reg, &format!("{p}.norm2"), w, THETA);
    for name in ["k2", "v2"] {
        layers::declare_linear(reg, &format!("{p}.{name}"), cfg.context_dim, w, false, THETA, false);
    }
    layers::declare_linear(reg, &format!("{p}.out2"), w, w, true, THETA, false);
    layers::declare_norm(reg, &format!("{p}.norm3"), w, THETA);
    layers::declare_linear(reg, &format!("{p}.ff1"), w, w * cfg.ff_mult, true, THETA, false);
    layers::declare_linear(reg, &format!("{p}.ff2"), w * cfg.ff_mult, w, true, THETA, false);
    layers::declare_linear(reg, &format!("{p}.proj_out"), w, w, true, THETA, false);
}

/// Sinusoidal embedding of one timestep per row.
pub(crate) fn timestep_embedding<T: Scalar>(timesteps: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(timesteps.len() * dim);
    for &t in timesteps {
        let mut row = vec![0.0f64; dim];
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            row[i] = (t as f64 * freq).sin();
            row[half + i] = (t as f64 * freq).cos();
        }
        data.extend(row.into_iter().map(T::from_f64_lossy));
    }
    Tensor::from_parts(vec![timesteps.len(), dim], data)
}

/// Inputs shared by every block of one forward pass.
pub(crate) struct Pass<'a, T: Scalar> {
    pub b: &'a Bound<'a, T>,
    pub cfg: &'a DenoiserConfig,
    pub frames: usize,
    /// `silu(temb)`, `[N, 4c]`.
    pub temb: Var<T>,
    /// Text context repeated per frame, `[N, N_ctx, d_ctx]`.
    pub ctx: Var<T>,
    /// `None` disables the temporal modules; `Some(None)` runs them unmasked.
    pub temporal: Option<Option<Var<T>>>,
}

impl<T: Scalar> Pass<'_, T> {
    fn res(&self, p: &str, x: &Var<T>) -> Var<T> {
        let g = self.cfg.norm_groups;
        let h = layers::group_norm(self.b, &format!("{p}.norm1"), x, g);
        let h = layers::conv(self.b, &format!("{p}.conv1"), &ag::silu(&h), 1);
        let h = ag::add_channel(&h, &layers::linear(self.b, &format!("{p}.temb"), &self.temb, true));
        let h = layers::group_norm(self.b, &format!("{p}.norm2"), &h, g);
        let h = layers::conv(self.b, &format!("{p}.conv2"), &ag::silu(&h), 1);
        let skip = if x.shape()[1] != h.shape()[1] { layers::conv(self.b, &format!("{p}.skip"), x, 1) } else { x.clone() };
        ag::add(&h, &skip)
    }

    fn spatial_transformer(&self, p: &str, x: &Var<T>) -> Var<T> {
        let s = x.shape().to_vec();
        let (n, w, pos) = (s[0], s[1], s[2] * s[3]);
        let heads = self.cfg.heads_for(w);
        let b = self.b;
        let h = layers::group_norm(b, &format!("{p}.norm"), x, self.cfg.norm_groups);
        let tok = ag::permute(&ag::reshape(&h, &[n, w, pos]), &[0, 2, 1]);
        let tok = layers::linear(b, &format!("{p}.proj_in"), &tok, true);

        let a = layers::layer_norm(b, &format!("{p}.norm1"), &tok);
        let q = layers::linear(b, &format!("{p}.q1"), &a, false);
        let k = layers::linear(b, &format!("{p}.k1"), &a, false);
        let v = layers::linear(b, &format!("{p}.v1"), &a, false);
        let tok = ag::add(&tok, &layers::linear(b, &format!("{p}.out1"), &attention(&q, &k, &v, heads, None, None), true));

        let a = layers::layer_norm(b, &format!("{p}.norm2"), &tok);
        let q = layers::linear(b, &format!("{p}.q2"), &a, false);
        let k = layers::linear(b, &format!("{p}.k2"), &self.ctx, false);
        let v = layers::linear(b, &format!("{p}.v2"), &self.ctx, false);
        let tok = ag::add(&tok, &layers::linear(b, &format!("{p}.out2"), &attention(&q, &k, &v, heads, None, None), true));

        let a = layers::layer_norm(b, &format!("{p}.norm3"), &tok);
        let f = ag::silu(&layers::linear(b, &format!("{p}.ff1"), &a, true));
        let tok = ag::add(&tok, &layers::linear(b, &format!("{p}.ff2"), &f, true));

        let tok = layers::linear(b, &format!("{p}.proj_out"), &tok, true);
        let h = ag::reshape(&ag::permute(&tok, &[0, 2, 1]), &s);
        ag::add(x, &h)
    }

    fn unit(&self, p: &str, x: &Var<T>) -> Var<T> {
        let variant = self.cfg.temporal_variant;
        let mut h = self.res(&format!("{p}.res"), x);
        if let Some(mask) = &self.temporal {
            if variant.has_temporal_conv() {
                h = temporal::strb(self.b, &format!("{p}.strb"), &h, self.frames, variant);
            }
            h = self.spatial_transformer(&format!("{p}.st"), &h);
            if variant.has_transformer() {
                let heads = self.cfg.heads_for(h.shape()[1]);
                h = temporal::temporal_transformer(self.b, &format!("{p}.tt"), &h, self.frames, heads, self.cfg.rel_clip(), mask.as_ref());
            }
        } else {
            h = self.spatial_transformer(&format!("{p}.st"), &h);
        }
        h
    }

    /// `x` is `[N, C + 1, H', W']`; returns `[N, C, H', W']`.
    pub fn run(&self, x: &Var<T>) -> Var<T> {
        let levels = self.cfg.level_multipliers.len();
        let mut h = layers::conv(self.b, "conv_in", x, 1);
        let mut skips = Vec::with_capacity(levels);
        for i in 0..levels {
            h = self.unit(&format!("down.{i}"), &h);
            skips.push(h.clone());
            if i + 1 < levels {
                h = layers::conv(self.b, &format!("downsample.{i}"), &h, 2);
            }
        }
        h = self.unit("mid", &h);
        for i in (0..levels).rev() {
            let skip = skips.pop().expect("one skip per level");
            h = self.unit(&format!("up.{i}"), &ag::concat_channels(&h, &skip));
            if i > 0 {
                h = layers::conv(self.b, &format!("upsample.{i}"), &ag::upsample_nearest2(&h), 1);
            }
        }
        let h = layers::group_norm(self.b, "out.norm", &h, self.cfg.norm_groups);
        layers::conv(self.b, "out.conv", &ag::silu(&h), 1)
    }
}

pub(crate) fn time_mlp<T: Scalar>(b: &Bound<'_, T>, emb: Tensor<T>) -> Var<T> {
    let h = layers::linear(b, "time.fc1", &Var::constant(emb), true);
    let h = layers::linear(b, "time.fc2", &ag::silu(&h), true);
    ag::silu(&h)
}
