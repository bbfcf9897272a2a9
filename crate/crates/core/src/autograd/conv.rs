use super::Var;
use crate::scalar::{gemm, Scalar};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Visit every (column-matrix offset, input offset) pair that lies inside
    /// the unpadded input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let ncols = self.col_cols();
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row * ncols + oy * self.ow + ox, (ci * self.h + iy as usize) * self.w + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, frame: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        self.for_each_tap(|c, i| cols[c] = frame[i]);
    }

    fn col2im<T: Scalar>(&self, cols: &[T], frame: &mut [T]) {
        self.for_each_tap(|c, i| frame[i] += cols[c]);
    }
}

/// 2-D convolution of `x[n, cin, h, w]` with `w[cout, cin, k, k]` and bias
/// `b[cout]`, square kernel, symmetric zero padding.
pub fn conv2d<T: Scalar>(x: &Var<T>, weight: &Var<T>, bias: &Var<T>, stride: usize, pad: usize) -> Var<T> {
    let xs = x.shape().to_vec();
    let ws = weight.shape().to_vec();
    assert!(xs.len() == 4 && ws.len() == 4 && ws[1] == xs[1] && ws[2] == ws[3], "conv2d: {xs:?} * {ws:?}");
    assert_eq!(bias.shape(), &[ws[0]], "conv2d: bias shape");
    let (n, cout, k) = (xs[0], ws[0], ws[2]);
    let oh = (xs[2] + 2 * pad - k) / stride + 1;
    let ow = (xs[3] + 2 * pad - k) / stride + 1;
    let geo = Geometry { cin: xs[1], h: xs[2], w: xs[3], k, stride, pad, oh, ow };
    let (kk, ncols) = (geo.col_rows(), geo.col_cols());
    let in_len = numel(&xs[1..]);
    let out_len = cout * ncols;

    let xd = x.value().data();
    let wd = weight.value().data();
    let bd = bias.value().data();
    let mut out = vec![T::zero(); n * out_len];
    let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * ncols] };
    for f in 0..n {
        let frame = &xd[f * in_len..(f + 1) * in_len];
        let dst = &mut out[f * out_len..(f + 1) * out_len];
        for (row, &b) in dst.chunks_exact_mut(ncols).zip(bd) {
            row.fill(b);
        }
        let src = if geo.is_pointwise() {
            frame
        } else {
            geo.im2col(frame, &mut cols);
            &cols
        };
        gemm(false, false, cout, ncols, kk, T::one(), wd, src, T::one(), dst);
    }

    Var::from_op(Tensor::from_parts(vec![n, cout, oh, ow], out), vec![x.clone(), weight.clone(), bias.clone()], move |c| {
        let g = c.grad.data();
        let xd = c.input(0).data();
        let wd = c.input(1).data();
        let mut dx = if c.needs(0) { vec![T::zero(); xd.len()] } else { Vec::new() };
        let mut dw = if c.needs(1) { vec![T::zero(); wd.len()] } else { Vec::new() };
        let mut db = vec![T::zero(); cout];
        let mut cols = vec![T::zero(); if geo.is_pointwise() { 0 } else { kk * ncols }];
        let mut dcols = vec![T::zero(); if geo.is_pointwise() { 0 } else { kk * ncols }];
        for f in 0..n {
            let gf = &g[f * out_len..(f + 1) * out_len];
            for (d, row) in db.iter_mut().zip(gf.chunks_exact(ncols)) {
                *d += row.iter().fold(T::zero(), |a, &v| a + v);
            }
            let frame = &xd[f * in_len..(f + 1) * in_len];
            if c.needs(1) {
                let src = if geo.is_pointwise() {
                    frame
                } else {
                    geo.im2col(frame, &mut cols);
                    &cols
                };
                gemm(false, true, cout, kk, ncols, T::one(), gf, src, T::one(), &mut dw);
            }
            if c.needs(0) {
                let dframe = &mut dx[f * in_len..(f + 1) * in_len];
                if geo.is_pointwise() {
                    gemm(true, false, kk, ncols, cout, T::one(), wd, gf, T::zero(), dframe);
                } else {
                    gemm(true, false, kk, ncols, cout, T::one(), wd, gf, T::zero(), &mut dcols);
                    geo.col2im(&dcols, dframe);
                }
            }
        }
        vec![
            c.needs(0).then(|| Tensor::from_parts(xs.clone(), dx)),
            c.needs(1).then(|| Tensor::from_parts(ws.clone(), dw)),
            c.needs(2).then(|| Tensor::from_parts(vec![cout], db)),
        ]
    })
}

/// Kernel-3 convolution along the frame axis, applied independently at every
/// spatial location.
///
/// `x` is `[batch * frames, cin, ...]` with frames contiguous per video,
/// `weight` is `[cout, cin, 3]`, `bias` is `[cout]`. Frames outside the clip
/// are treated as zeros.
pub fn temporal_conv<T: Scalar>(x: &Var<T>, weight: &Var<T>, bias: &Var<T>, frames: usize) -> Var<T> {
    const TAPS: usize = 3;
    let xs = x.shape().to_vec();
    let ws = weight.shape().to_vec();
    assert!(xs.len() >= 2 && xs[0] % frames == 0, "temporal_conv: {xs:?} with {frames} frames");
    assert!(ws.len() == 3 && ws[1] == xs[1] && ws[2] == TAPS, "temporal_conv: weight {ws:?}");
    assert_eq!(bias.shape(), &[ws[0]], "temporal_conv: bias shape");
    let (nf, cin, cout) = (xs[0], xs[1], ws[0]);
    let batch = nf / frames;
    let p = numel(&xs[2..]);
    let (in_len, out_len) = (cin * p, cout * p);
    // tap `k` reads frame `l + k - 1`; W_k[co, ci] = w[co, ci, k]
    let (w_rs, w_cs) = (cin * TAPS, TAPS);

    let xd = x.value().data();
    let wd = weight.value().data();
    let bd = bias.value().data();
    let mut out = vec![T::zero(); nf * out_len];
    for b in 0..batch {
        for l in 0..frames {
            let f = b * frames + l;
            let dst = &mut out[f * out_len..(f + 1) * out_len];
            for (row, &bb) in dst.chunks_exact_mut(p).zip(bd) {
                row.fill(bb);
            }
            for k in 0..TAPS {
                let Some(src_l) = (l + k).checked_sub(1).filter(|&s| s < frames) else { continue };
                let sf = b * frames + src_l;
                T::gemm_strided(
                    cout,
                    cin,
                    p,
                    T::one(),
                    &wd[k..],
                    w_rs,
                    w_cs,
                    &xd[sf * in_len..(sf + 1) * in_len],
                    p,
                    1,
                    T::one(),
                    dst,
                    p,
                    1,
                );
            }
        }
    }

    Var::from_op(Tensor::from_parts(out_shape(&xs, cout), out), vec![x.clone(), weight.clone(), bias.clone()], move |c| {
        let g = c.grad.data();
        let xd = c.input(0).data();
        let wd = c.input(1).data();
        let mut dx = if c.needs(0) { vec![T::zero(); xd.len()] } else { Vec::new() };
        let mut dw = if c.needs(1) { vec![T::zero(); wd.len()] } else { Vec::new() };
        let mut db = vec![T::zero(); cout];
        for b in 0..batch {
            for l in 0..frames {
                let f = b * frames + l;
                let gf = &g[f * out_len..(f + 1) * out_len];
                for (d, row) in db.iter_mut().zip(gf.chunks_exact(p)) {
                    *d += row.iter().fold(T::zero(), |a, &v| a + v);
                }
                for k in 0..TAPS {
                    let Some(src_l) = (l + k).checked_sub(1).filter(|&s| s < frames) else { continue };
                    let sf = b * frames + src_l;
                    if c.needs(1) {
                        // dW_k += g_f (cout x p) * x_sf^T (p x cin)
                        T::gemm_strided(
                            cout,
                            p,
                            cin,
                            T::one(),
                            gf,
                            p,
                            1,
                            &xd[sf * in_len..(sf + 1) * in_len],
                            1,
                            p,
                            T::one(),
                            &mut dw[k..],
                            w_rs,
                            w_cs,
                        );
                    }
                    if c.needs(0) {
                        // dx_sf += W_k^T (cin x cout) * g_f (cout x p)
                        T::gemm_strided(
                            cin,
                            cout,
                            p,
                            T::one(),
                            &wd[k..],
                            w_cs,
                            w_rs,
                            gf,
                            p,
                            1,
                            T::one(),
                            &mut dx[sf * in_len..(sf + 1) * in_len],
                            p,
                            1,
                        );
                    }
                }
            }
        }
        vec![
            c.needs(0).then(|| Tensor::from_parts(xs.clone(), dx)),
            c.needs(1).then(|| Tensor::from_parts(ws.clone(), dw)),
            c.needs(2).then(|| Tensor::from_parts(vec![cout], db)),
        ]
    })
}

fn out_shape(xs: &[usize], cout: usize) -> Vec<usize> {
    let mut s = xs.to_vec();
    s[1] = cout;
    s
}
