//! Temporal modules: the spatio-temporal residual block and the temporal
//! transformer. Both take frames-as-batch activations `[B·L, ch, H, W]`.

use crate::autograd::{self as ag, Var};
use crate::error::{Error, Result};
use crate::mask::AttentionMask;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::TemporalVariant;
use super::layers::{self, attention};
use super::params::{Bound, Init, ParamStore, Partition, Registry, Trainable};

const PHI: Partition = Partition::Temporal;

pub(crate) fn declare_strb(reg: &mut Registry, p: &str, ch: usize, variant: TemporalVariant) {
    if variant.has_p3d_spatial_conv() {
        layers::declare_conv(reg, &format!("{p}.spatial"), ch, ch, 3, PHI, false);
    }
    reg.add(format!("{p}.temporal.weight"), &[ch, ch, 3], PHI, Init::Zeros);
    reg.add(format!("{p}.temporal.bias"), &[ch], PHI, Init::Zeros);
}

/// `h + tconv(silu([conv3x3](h)))`.
pub(crate) fn strb<T: Scalar>(b: &Bound<'_, T>, p: &str, h: &Var<T>, frames: usize, variant: TemporalVariant) -> Var<T> {
    let g = if variant.has_p3d_spatial_conv() { layers::conv(b, &format!("{p}.spatial"), h, 1) } else { h.clone() };
    let g = ag::silu(&g);
    let g = ag::temporal_conv(&g, &b.get(&format!("{p}.temporal.weight")), &b.get(&format!("{p}.temporal.bias")), frames);
    ag::add(h, &g)
}

pub(crate) fn declare_tt(reg: &mut Registry, p: &str, ch: usize, heads: usize, clip: usize, ff_mult: usize) {
    layers::declare_norm(reg, &format!("{p}.norm1"), ch, PHI);
    for name in ["q", "k", "v"] {
        layers::declare_linear(reg, &format!("{p}.{name}"), ch, ch, false, PHI, false);
    }
    layers::declare_linear(reg, &format!("{p}.out"), ch, ch, true, PHI, true);
    reg.add(format!("{p}.rel_pos"), &[heads, 2 * clip + 1], PHI, Init::Zeros);
    layers::declare_norm(reg, &format!("{p}.norm2"), ch, PHI);
    layers::declare_linear(reg, &format!("{p}.ff1"), ch, ch * ff_mult, true, PHI, false);
    layers::declare_linear(reg, &format!("{p}.ff2"), ch * ff_mult, ch, true, PHI, true);
}

/// Self-attention across frames at each spatial location, followed by a
/// feed-forward sublayer. `mask` is the additive `[L, L]` matrix.
pub(crate) fn temporal_transformer<T: Scalar>(
    b: &Bound<'_, T>,
    p: &str,
    h: &Var<T>,
    frames: usize,
    heads: usize,
    clip: usize,
    mask: Option<&Var<T>>,
) -> Var<T> {
    let s = h.shape().to_vec();
    let (n, ch, hh, ww) = (s[0], s[1], s[2], s[3]);
    let (batch, pos) = (n / frames, hh * ww);
    let x = ag::reshape(h, &[batch, frames, ch, pos]);
    let x = ag::reshape(&ag::permute(&x, &[0, 3, 1, 2]), &[batch * pos, frames, ch]);

    let a = layers::layer_norm(b, &format!("{p}.norm1"), &x);
    let q = layers::linear(b, &format!("{p}.q"), &a, false);
    let k = layers::linear(b, &format!("{p}.k"), &a, false);
    let v = layers::linear(b, &format!("{p}.v"), &a, false);
    let bias = ag::relative_bias(&b.get(&format!("{p}.rel_pos")), frames, clip);
    let att = attention(&q, &k, &v, heads, Some(&bias), mask);
    let x = ag::add(&x, &layers::linear(b, &format!("{p}.out"), &att, true));

    let f = layers::layer_norm(b, &format!("{p}.norm2"), &x);
    let f = ag::silu(&layers::linear(b, &format!("{p}.ff1"), &f, true));
    let x = ag::add(&x, &layers::linear(b, &format!("{p}.ff2"), &f, true));

    let x = ag::permute(&ag::reshape(&x, &[batch, pos, frames, ch]), &[0, 2, 3, 1]);
    ag::reshape(&x, &s)
}

fn check_video(h: &Tensor<impl Scalar>, width: usize) -> Result<[usize; 5]> {
    match *h.shape() {
        [b, l, c, hh, ww] if c == width && l > 0 => Ok([b, l, c, hh, ww]),
        _ => Err(Error::Shape(format!("expected (B, L, {width}, H, W), got {:?}", h.shape()))),
    }
}

/// A standalone temporal transformer over `(B, L, ch, H, W)` activations.
#[derive(Clone, Debug)]
pub struct TemporalTransformer<T> {
    pub width: usize,
    pub heads: usize,
    pub clip: usize,
    pub params: ParamStore<T>,
}

impl<T: Scalar> TemporalTransformer<T> {
    pub fn new(width: usize, heads: usize, clip: usize, ff_mult: usize, seed: u64) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::InvalidArgument(format!("{heads} heads do not divide width {width}")));
        }
        let mut reg = Registry::default();
        declare_tt(&mut reg, "tt", width, heads, clip, ff_mult);
        Ok(Self { width, heads, clip, params: ParamStore::initialize(&reg, seed) })
    }

    pub fn forward(&self, h: &Tensor<T>, mask: &AttentionMask) -> Result<Tensor<T>> {
        let [bsz, l, c, hh, ww] = check_video(h, self.width)?;
        if mask.len() != l {
            return Err(Error::Shape(format!("mask length {} does not match {l} frames", mask.len())));
        }
        let b = Bound::new(&self.params, Trainable::NONE);
        let x = Var::constant(h.clone().reshape(&[bsz * l, c, hh, ww])?);
        let m = Var::constant(mask.additive());
        let y = temporal_transformer(&b, "tt", &x, l, self.heads, self.clip, Some(&m));
        y.value().clone().reshape(h.shape())
    }
}

/// A standalone spatio-temporal residual block over `(B, L, ch, H, W)`.
#[derive(Clone, Debug)]
pub struct SpatioTemporalBlock<T> {
    pub width: usize,
    pub variant: TemporalVariant,
    pub params: ParamStore<T>,
}

impl<T: Scalar> SpatioTemporalBlock<T> {
    pub fn new(width: usize, variant: TemporalVariant, seed: u64) -> Result<Self> {
        if !variant.has_temporal_conv() {
            return Err(Error::InvalidArgument(format!("variant {variant:?} has no temporal convolution")));
        }
        let mut reg = Registry::default();
        declare_strb(&mut reg, "strb", width, variant);
        Ok(Self { width, variant, params: ParamStore::initialize(&reg, seed) })
    }

    pub fn forward(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        let [bsz, l, c, hh, ww] = check_video(h, self.width)?;
        let b = Bound::new(&self.params, Trainable::NONE);
        let x = Var::constant(h.clone().reshape(&[bsz * l, c, hh, ww])?);
        strb(&b, "strb", &x, l, self.variant).value().clone().reshape(h.shape())
    }
}
