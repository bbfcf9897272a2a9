//! Parameterized building blocks. Each layer has a `declare` side that
//! registers its parameters and a forward side that reads them back by name.

use crate::autograd::{self as ag, Var};
use crate::scalar::Scalar;

use super::params::{Bound, Init, Partition, Registry};

const NORM_EPS: f64 = 1e-5;

pub(crate) fn declare_conv(reg: &mut Registry, p: &str, cin: usize, cout: usize, k: usize, part: Partition, zero: bool) {
    let init = if zero { Init::Zeros } else { Init::FanIn(cin * k * k) };
    reg.add(format!("{p}.weight"), &[cout, cin, k, k], part, init);
    reg.add(format!("{p}.bias"), &[cout], part, Init::Zeros);
}

pub(crate) fn conv<T: Scalar>(b: &Bound<'_, T>, p: &str, x: &Var<T>, stride: usize) -> Var<T> {
    let w = b.get(&format!("{p}.weight"));
    let pad = w.shape()[2] / 2;
    ag::conv2d(x, &w, &b.get(&format!("{p}.bias")), stride, pad)
}

pub(crate) fn declare_linear(reg: &mut Registry, p: &str, cin: usize, cout: usize, bias: bool, part: Partition, zero: bool) {
    let init = if zero { Init::Zeros } else { Init::FanIn(cin) };
    reg.add(format!("{p}.weight"), &[cout, cin], part, init);
    if bias {
        reg.add(format!("{p}.bias"), &[cout], part, Init::Zeros);
    }
}

pub(crate) fn linear<T: Scalar>(b: &Bound<'_, T>, p: &str, x: &Var<T>, bias: bool) -> Var<T> {
    let w = b.get(&format!("{p}.weight"));
    if bias {
        ag::linear(x, &w, Some(&b.get(&format!("{p}.bias"))))
    } else {
        ag::linear(x, &w, None)
    }
}

pub(crate) fn declare_norm(reg: &mut Registry, p: &str, c: usize, part: Partition) {
    reg.add(format!("{p}.gamma"), &[c], part, Init::Ones);
    reg.add(format!("{p}.beta"), &[c], part, Init::Zeros);
}

pub(crate) fn group_norm<T: Scalar>(b: &Bound<'_, T>, p: &str, x: &Var<T>, groups: usize) -> Var<T> {
    let eps = T::from_f64_lossy(NORM_EPS);
    ag::group_norm(x, groups, &b.get(&format!("{p}.gamma")), &b.get(&format!("{p}.beta")), eps)
}

pub(crate) fn layer_norm<T: Scalar>(b: &Bound<'_, T>, p: &str, x: &Var<T>) -> Var<T> {
    let eps = T::from_f64_lossy(NORM_EPS);
    ag::layer_norm(x, &b.get(&format!("{p}.gamma")), &b.get(&format!("{p}.beta")), eps)
}

/// Split `[g, len, heads * d]` into `[g * heads, len, d]`.
fn split_heads<T: Scalar>(x: &Var<T>, heads: usize) -> Var<T> {
    let s = x.shape();
    let (g, len, d) = (s[0], s[1], s[2] / heads);
    let x = ag::reshape(x, &[g, len, heads, d]);
    let x = ag::permute(&x, &[0, 2, 1, 3]);
    ag::reshape(&x, &[g * heads, len, d])
}

fn merge_heads<T: Scalar>(x: &Var<T>, heads: usize) -> Var<T> {
    let s = x.shape();
    let (g, len, d) = (s[0] / heads, s[1], s[2]);
    let x = ag::reshape(x, &[g, heads, len, d]);
    let x = ag::permute(&x, &[0, 2, 1, 3]);
    ag::reshape(&x, &[g, len, heads * d])
}

/// Multi-head scaled dot-product attention.
///
/// `q` is `[g, lq, heads * d]`, `k` and `v` are `[g, lk, heads * d]`. `bias`
/// is `[heads, lq, lk]` and `mask` is `[lq, lk]`; both are added to the
/// logits before the softmax.
pub fn attention<T: Scalar>(
    q: &Var<T>,
    k: &Var<T>,
    v: &Var<T>,
    heads: usize,
    bias: Option<&Var<T>>,
    mask: Option<&Var<T>>,
) -> Var<T> {
    let (g, lq, width) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let lk = k.shape()[1];
    let d = width / heads;
    let (qh, kh, vh) = (split_heads(q, heads), split_heads(k, heads), split_heads(v, heads));
    let qh = ag::scale(&qh, T::one() / T::from_usize_lossy(d).sqrt());
    let mut logits = ag::reshape(&ag::bmm(&qh, &kh, false, true), &[g, heads, lq, lk]);
    if let Some(bias) = bias {
        logits = ag::add_bcast(&logits, bias);
    }
    if let Some(mask) = mask {
        logits = ag::add_bcast(&logits, mask);
    }
    let weights = ag::reshape(&ag::softmax_last(&logits), &[g * heads, lq, lk]);
    merge_heads(&ag::bmm(&weights, &vh, false, false), heads)
}
