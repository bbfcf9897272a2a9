use super::{BackCtx, Var};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{inverse_permutation, numel, Tensor};

fn grad_if<T: Scalar>(c: &BackCtx<'_, T>, i: usize, f: impl FnOnce() -> Tensor<T>) -> Option<Tensor<T>> {
    c.needs(i).then(f)
}

pub fn add<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = a.value().zip_map(b.value(), |x, y| x + y).expect("add: shape mismatch");
    Var::from_op(value, vec![a.clone(), b.clone()], |c| {
        vec![grad_if(c, 0, || c.grad.clone()), grad_if(c, 1, || c.grad.clone())]
    })
}

pub fn sub<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = a.value().zip_map(b.value(), |x, y| x - y).expect("sub: shape mismatch");
    Var::from_op(value, vec![a.clone(), b.clone()], |c| {
        vec![grad_if(c, 0, || c.grad.clone()), grad_if(c, 1, || c.grad.map(|g| -g))]
    })
}

pub fn mul<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = a.value().zip_map(b.value(), |x, y| x * y).expect("mul: shape mismatch");
    Var::from_op(value, vec![a.clone(), b.clone()], |c| {
        vec![
            grad_if(c, 0, || c.grad.zip_map(c.input(1), |g, y| g * y).unwrap()),
            grad_if(c, 1, || c.grad.zip_map(c.input(0), |g, x| g * x).unwrap()),
        ]
    })
}

pub fn scale<T: Scalar>(a: &Var<T>, s: T) -> Var<T> {
    let value = a.value().map(|x| x * s);
    Var::from_op(value, vec![a.clone()], move |c| vec![grad_if(c, 0, || c.grad.map(|g| g * s))])
}

/// `x + y` where `y`'s shape equals the trailing dimensions of `x`.
pub fn add_bcast<T: Scalar>(x: &Var<T>, y: &Var<T>) -> Var<T> {
    let (xs, ys) = (x.shape(), y.shape());
    assert!(
        ys.len() <= xs.len() && xs[xs.len() - ys.len()..] == *ys,
        "add_bcast: {ys:?} is not a suffix of {xs:?}"
    );
    let inner = numel(ys);
    let mut value = x.value().clone();
    let yd = y.value().data();
    for chunk in value.data_mut().chunks_exact_mut(inner) {
        for (v, &b) in chunk.iter_mut().zip(yd) {
            *v += b;
        }
    }
    Var::from_op(value, vec![x.clone(), y.clone()], move |c| {
        vec![
            grad_if(c, 0, || c.grad.clone()),
            grad_if(c, 1, || {
                let mut acc = Tensor::zeros(c.input(1).shape());
                for chunk in c.grad.data().chunks_exact(inner) {
                    for (a, &g) in acc.data_mut().iter_mut().zip(chunk) {
                        *a += g;
                    }
                }
                acc
            }),
        ]
    })
}

/// `x[n, c, ...] + y[n, c]`, broadcasting `y` over trailing axes.
pub fn add_channel<T: Scalar>(x: &Var<T>, y: &Var<T>) -> Var<T> {
    let xs = x.shape();
    assert!(xs.len() >= 2 && y.shape() == &xs[..2], "add_channel: {:?} vs {xs:?}", y.shape());
    let inner = numel(&xs[2..]);
    let mut value = x.value().clone();
    let yd = y.value().data();
    for (chunk, &b) in value.data_mut().chunks_exact_mut(inner).zip(yd) {
        for v in chunk {
            *v += b;
        }
    }
    Var::from_op(value, vec![x.clone(), y.clone()], move |c| {
        vec![
            grad_if(c, 0, || c.grad.clone()),
            grad_if(c, 1, || {
                let data = c.grad.data().chunks_exact(inner).map(|ch| ch.iter().fold(T::zero(), |a, &g| a + g)).collect();
                Tensor::from_parts(c.input(1).shape().to_vec(), data)
            }),
        ]
    })
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Scalar>(x: &Var<T>) -> Var<T> {
    let value = x.value().map(|v| v * sigmoid(v));
    Var::from_op(value, vec![x.clone()], |c| {
        vec![grad_if(c, 0, || {
            c.grad
                .zip_map(c.input(0), |g, v| {
                    let s = sigmoid(v);
                    g * s * (T::one() + v * (T::one() - s))
                })
                .unwrap()
        })]
    })
}

/// `x[..., k] @ w[o, k]^T + b[o]`.
pub fn linear<T: Scalar>(x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Var<T> {
    let xs = x.shape();
    let (o, k) = (w.shape()[0], w.shape()[1]);
    assert_eq!(*xs.last().expect("linear on scalar"), k, "linear: input width");
    let m = numel(xs) / k;
    let mut out_shape = xs.to_vec();
    *out_shape.last_mut().unwrap() = o;
    let mut out = vec![T::zero(); m * o];
    gemm(false, true, m, o, k, T::one(), x.value().data(), w.value().data(), T::zero(), &mut out);
    if let Some(b) = b {
        assert_eq!(b.shape(), &[o], "linear: bias shape");
        let bd = b.value().data();
        for row in out.chunks_exact_mut(o) {
            for (v, &bb) in row.iter_mut().zip(bd) {
                *v += bb;
            }
        }
    }
    let mut parents = vec![x.clone(), w.clone()];
    parents.extend(b.cloned());
    Var::from_op(Tensor::from_parts(out_shape, out), parents, move |c| {
        let g = c.grad.data();
        let mut grads = vec![
            grad_if(c, 0, || {
                let mut dx = vec![T::zero(); m * k];
                gemm(false, false, m, k, o, T::one(), g, c.input(1).data(), T::zero(), &mut dx);
                Tensor::from_parts(c.input(0).shape().to_vec(), dx)
            }),
            grad_if(c, 1, || {
                let mut dw = vec![T::zero(); o * k];
                gemm(true, false, o, k, m, T::one(), g, c.input(0).data(), T::zero(), &mut dw);
                Tensor::from_parts(vec![o, k], dw)
            }),
        ];
        if c.parents.len() == 3 {
            grads.push(grad_if(c, 2, || {
                let mut db = vec![T::zero(); o];
                for row in g.chunks_exact(o) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                Tensor::from_parts(vec![o], db)
            }));
        }
        grads
    })
}

/// Batched product `op(a[g]) @ op(b[g])` for rank-3 operands.
pub fn bmm<T: Scalar>(a: &Var<T>, b: &Var<T>, trans_a: bool, trans_b: bool) -> Var<T> {
    let (sa, sb) = (a.shape(), b.shape());
    assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0], "bmm: {sa:?} x {sb:?}");
    let g = sa[0];
    let (m, k) = if trans_a { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
    let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
    assert_eq!(k, kb, "bmm: inner dimension");
    let mut out = vec![T::zero(); g * m * n];
    let (ad, bd) = (a.value().data(), b.value().data());
    for i in 0..g {
        gemm(
            trans_a,
            trans_b,
            m,
            n,
            k,
            T::one(),
            &ad[i * m * k..(i + 1) * m * k],
            &bd[i * k * n..(i + 1) * k * n],
            T::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Var::from_op(Tensor::from_parts(vec![g, m, n], out), vec![a.clone(), b.clone()], move |c| {
        let gd = c.grad.data();
        let (ad, bd) = (c.input(0).data(), c.input(1).data());
        let da = grad_if(c, 0, || {
            let mut da = vec![T::zero(); g * m * k];
            for i in 0..g {
                let dc = &gd[i * m * n..(i + 1) * m * n];
                let bb = &bd[i * k * n..(i + 1) * k * n];
                let dst = &mut da[i * m * k..(i + 1) * m * k];
                if trans_a {
                    gemm(trans_b, true, k, m, n, T::one(), bb, dc, T::zero(), dst);
                } else {
                    gemm(false, !trans_b, m, k, n, T::one(), dc, bb, T::zero(), dst);
                }
            }
            Tensor::from_parts(c.input(0).shape().to_vec(), da)
        });
        let db = grad_if(c, 1, || {
            let mut db = vec![T::zero(); g * k * n];
            for i in 0..g {
                let dc = &gd[i * m * n..(i + 1) * m * n];
                let aa = &ad[i * m * k..(i + 1) * m * k];
                let dst = &mut db[i * k * n..(i + 1) * k * n];
                if trans_b {
                    gemm(true, trans_a, n, k, m, T::one(), dc, aa, T::zero(), dst);
                } else {
                    gemm(!trans_a, false, k, n, m, T::one(), aa, dc, T::zero(), dst);
                }
            }
            Tensor::from_parts(c.input(1).shape().to_vec(), db)
        });
        vec![da, db]
    })
}

/// Softmax over the last axis.
pub fn softmax_last<T: Scalar>(x: &Var<T>) -> Var<T> {
    let n = *x.shape().last().expect("softmax on scalar");
    let mut value = x.value().clone();
    for row in value.data_mut().chunks_exact_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Var::from_op(value, vec![x.clone()], move |c| {
        vec![grad_if(c, 0, || {
            let mut dx = c.grad.clone();
            for (drow, yrow) in dx.data_mut().chunks_exact_mut(n).zip(c.out.data().chunks_exact(n)) {
                let dot = drow.iter().zip(yrow).fold(T::zero(), |a, (&g, &y)| a + g * y);
                for (d, &y) in drow.iter_mut().zip(yrow) {
                    *d = y * (*d - dot);
                }
            }
            dx
        })]
    })
}

/// Mean and reciprocal standard deviation of each contiguous block.
fn norm_stats<T: Scalar>(data: &[T], block: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = T::from_usize_lossy(block);
    data.chunks_exact(block)
        .map(|chunk| {
            let mean = chunk.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = chunk.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
            (mean, T::one() / (var + eps).sqrt())
        })
        .unzip()
}

/// Layer normalization over the last axis with affine parameters.
pub fn layer_norm<T: Scalar>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Var<T> {
    let c = *x.shape().last().expect("layer_norm on scalar");
    assert!(gamma.shape() == [c] && beta.shape() == [c], "layer_norm: affine shape");
    let rows = numel(x.shape()) / c;
    let (means, rstds) = norm_stats(x.value().data(), c, eps);
    let (gd, bd) = (gamma.value().data(), beta.value().data());
    let mut out = x.value().clone();
    for (r, row) in out.data_mut().chunks_exact_mut(c).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - means[r]) * rstds[r] * gd[j] + bd[j];
        }
    }
    Var::from_op(out, vec![x.clone(), gamma.clone(), beta.clone()], move |ctx| {
        let xd = ctx.input(0).data();
        let gam = ctx.input(1).data();
        let g = ctx.grad.data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let mut dx = if ctx.needs(0) { vec![T::zero(); rows * c] } else { Vec::new() };
        let cn = T::from_usize_lossy(c);
        for r in 0..rows {
            let (mean, rstd) = (means[r], rstds[r]);
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for j in 0..c {
                let xhat = (xd[r * c + j] - mean) * rstd;
                let gv = g[r * c + j];
                dgamma[j] += gv * xhat;
                dbeta[j] += gv;
                let dxhat = gv * gam[j];
                sum_d += dxhat;
                sum_dx += dxhat * xhat;
            }
            if ctx.needs(0) {
                for j in 0..c {
                    let xhat = (xd[r * c + j] - mean) * rstd;
                    let dxhat = g[r * c + j] * gam[j];
                    dx[r * c + j] = rstd * (dxhat - sum_d / cn - xhat * sum_dx / cn);
                }
            }
        }
        vec![
            ctx.needs(0).then(|| Tensor::from_parts(ctx.input(0).shape().to_vec(), dx)),
            ctx.needs(1).then(|| Tensor::from_parts(vec![c], dgamma)),
            ctx.needs(2).then(|| Tensor::from_parts(vec![c], dbeta)),
        ]
    })
}

/// Group normalization of `x[n, c, ...]` with per-channel affine parameters.
pub fn group_norm<T: Scalar>(x: &Var<T>, groups: usize, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Var<T> {
    let xs = x.shape().to_vec();
    let (n, ch) = (xs[0], xs[1]);
    assert!(ch % groups == 0, "group_norm: {ch} channels not divisible by {groups}");
    assert!(gamma.shape() == [ch] && beta.shape() == [ch], "group_norm: affine shape");
    let spatial = numel(&xs[2..]);
    let cpg = ch / groups;
    let group_len = cpg * spatial;
    // channels of a group are adjacent, so each group is one contiguous block
    let (means, rstds) = norm_stats(x.value().data(), group_len, eps);
    let (gd, bd) = (gamma.value().data(), beta.value().data());
    let mut out = x.value().clone();
    for (gi, block) in out.data_mut().chunks_exact_mut(group_len).enumerate() {
        let c0 = (gi % groups) * cpg;
        for (e, v) in block.iter_mut().enumerate() {
            let chan = c0 + e / spatial;
            *v = (*v - means[gi]) * rstds[gi] * gd[chan] + bd[chan];
        }
    }
    Var::from_op(out, vec![x.clone(), gamma.clone(), beta.clone()], move |ctx| {
        let xd = ctx.input(0).data();
        let gam = ctx.input(1).data();
        let g = ctx.grad.data();
        let mut dgamma = vec![T::zero(); ch];
        let mut dbeta = vec![T::zero(); ch];
        let mut dx = if ctx.needs(0) { vec![T::zero(); xd.len()] } else { Vec::new() };
        let len = T::from_usize_lossy(group_len);
        for gi in 0..n * groups {
            let c0 = (gi % groups) * cpg;
            let base = gi * group_len;
            let (mean, rstd) = (means[gi], rstds[gi]);
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for e in 0..group_len {
                let chan = c0 + e / spatial;
                let xhat = (xd[base + e] - mean) * rstd;
                let gv = g[base + e];
                dgamma[chan] += gv * xhat;
                dbeta[chan] += gv;
                let dxhat = gv * gam[chan];
                sum_d += dxhat;
                sum_dx += dxhat * xhat;
            }
            if ctx.needs(0) {
                for e in 0..group_len {
                    let chan = c0 + e / spatial;
                    let xhat = (xd[base + e] - mean) * rstd;
                    let dxhat = g[base + e] * gam[chan];
                    dx[base + e] = rstd * (dxhat - sum_d / len - xhat * sum_dx / len);
                }
            }
        }
        vec![
            ctx.needs(0).then(|| Tensor::from_parts(ctx.input(0).shape().to_vec(), dx)),
            ctx.needs(1).then(|| Tensor::from_parts(vec![ch], dgamma)),
            ctx.needs(2).then(|| Tensor::from_parts(vec![ch], dbeta)),
        ]
    })
}

pub fn permute<T: Scalar>(x: &Var<T>, perm: &[usize]) -> Var<T> {
    let value = x.value().permute(perm);
    let inv = inverse_permutation(perm);
    Var::from_op(value, vec![x.clone()], move |c| vec![grad_if(c, 0, || c.grad.permute(&inv))])
}

pub fn reshape<T: Scalar>(x: &Var<T>, shape: &[usize]) -> Var<T> {
    let value = x.value().clone().reshape(shape).expect("reshape: element count");
    Var::from_op(value, vec![x.clone()], |c| {
        vec![grad_if(c, 0, || c.grad.clone().reshape(c.input(0).shape()).unwrap())]
    })
}

/// Concatenate `a[n, c1, ...]` and `b[n, c2, ...]` along axis 1.
pub fn concat_channels<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    assert!(sa[0] == sb[0] && sa[2..] == sb[2..], "concat_channels: {sa:?} vs {sb:?}");
    let n = sa[0];
    let la = numel(&sa[1..]);
    let lb = numel(&sb[1..]);
    let mut data = Vec::with_capacity(n * (la + lb));
    for i in 0..n {
        data.extend_from_slice(a.value().slab(i));
        data.extend_from_slice(b.value().slab(i));
    }
    let mut shape = sa.clone();
    shape[1] += sb[1];
    Var::from_op(Tensor::from_parts(shape, data), vec![a.clone(), b.clone()], move |c| {
        let g = c.grad.data();
        let split = |first: bool| {
            let mut out = Vec::with_capacity(n * if first { la } else { lb });
            for i in 0..n {
                let row = &g[i * (la + lb)..(i + 1) * (la + lb)];
                out.extend_from_slice(if first { &row[..la] } else { &row[la..] });
            }
            out
        };
        vec![
            grad_if(c, 0, || Tensor::from_parts(sa.clone(), split(true))),
            grad_if(c, 1, || Tensor::from_parts(sb.clone(), split(false))),
        ]
    })
}

/// Nearest-neighbour 2x spatial upsampling of `x[n, c, h, w]`.
pub fn upsample_nearest2<T: Scalar>(x: &Var<T>) -> Var<T> {
    let s = x.shape().to_vec();
    let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
    let xd = x.value().data();
    let mut out = vec![T::zero(); nc * 4 * h * w];
    for p in 0..nc {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out[p * 4 * h * w + y * 2 * w + xx] = xd[p * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    Var::from_op(Tensor::from_parts(vec![s[0], s[1], 2 * h, 2 * w], out), vec![x.clone()], move |c| {
        vec![grad_if(c, 0, || {
            let g = c.grad.data();
            let mut dx = vec![T::zero(); nc * h * w];
            for p in 0..nc {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dx[p * h * w + (y / 2) * w + xx / 2] += g[p * 4 * h * w + y * 2 * w + xx];
                    }
                }
            }
            Tensor::from_parts(s.clone(), dx)
        })]
    })
}

/// Expand a relative-position table `[heads, 2k+1]` into logits bias
/// `[heads, len, len]` with entry `(i, j)` reading offset `clamp(i-j, -k, k)`.
pub fn relative_bias<T: Scalar>(table: &Var<T>, len: usize, clip: usize) -> Var<T> {
    let ts = table.shape().to_vec();
    assert!(ts.len() == 2 && ts[1] == 2 * clip + 1, "relative_bias: table {ts:?} for clip {clip}");
    let heads = ts[0];
    let index = move |i: usize, j: usize| {
        let d = (i as i64 - j as i64).clamp(-(clip as i64), clip as i64);
        (d + clip as i64) as usize
    };
    let td = table.value().data();
    let mut out = Vec::with_capacity(heads * len * len);
    for h in 0..heads {
        for i in 0..len {
            for j in 0..len {
                out.push(td[h * ts[1] + index(i, j)]);
            }
        }
    }
    Var::from_op(Tensor::from_parts(vec![heads, len, len], out), vec![table.clone()], move |c| {
        vec![grad_if(c, 0, || {
            let g = c.grad.data();
            let mut dt = vec![T::zero(); heads * ts[1]];
            for h in 0..heads {
                for i in 0..len {
                    for j in 0..len {
                        dt[h * ts[1] + index(i, j)] += g[(h * len + i) * len + j];
                    }
                }
            }
            Tensor::from_parts(ts.clone(), dt)
        })]
    })
}

/// Mean squared error, reduced to a scalar.
pub fn mse<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let av = a.value();
    av.expect_shape(b.shape()).expect("mse: shape mismatch");
    let n = T::from_usize_lossy(av.len());
    let s = av.data().iter().zip(b.value().data()).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
    Var::from_op(Tensor::scalar(s / n), vec![a.clone(), b.clone()], move |c| {
        let g = c.grad.data()[0];
        let k = (g + g) / n;
        vec![
            grad_if(c, 0, || c.input(0).zip_map(c.input(1), |x, y| k * (x - y)).unwrap()),
            grad_if(c, 1, || c.input(0).zip_map(c.input(1), |x, y| k * (y - x)).unwrap()),
        ]
    })
}

pub fn sum<T: Scalar>(x: &Var<T>) -> Var<T> {
    Var::from_op(Tensor::scalar(x.value().sum()), vec![x.clone()], |c| {
        vec![grad_if(c, 0, || Tensor::full(c.input(0).shape(), c.grad.data()[0]))]
    })
}
