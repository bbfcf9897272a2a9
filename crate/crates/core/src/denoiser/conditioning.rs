//! Text and depth conditioning, and the frames-as-batch reshapes.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-video conditioning: text context `(N_ctx, d_ctx)` and latent-resolution
/// depth `(L, 1, H', W')`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning<T> {
    pub text_ctx: Tensor<T>,
    pub depth_lat: Tensor<T>,
}

impl<T: Scalar> Conditioning<T> {
    pub fn new(text_ctx: Tensor<T>, depth_lat: Tensor<T>) -> Result<Self> {
        if text_ctx.rank() != 2 {
            return Err(Error::Shape(format!("text context must be (N_ctx, d_ctx), got {:?}", text_ctx.shape())));
        }
        if depth_lat.rank() != 4 || depth_lat.dim(1) != 1 {
            return Err(Error::Shape(format!("depth must be (L, 1, H', W'), got {:?}", depth_lat.shape())));
        }
        Ok(Self { text_ctx, depth_lat })
    }

    /// Same depth, null text.
    pub fn unconditional(&self) -> Self {
        Self { text_ctx: Tensor::zeros(self.text_ctx.shape()), depth_lat: self.depth_lat.clone() }
    }

    pub fn frames(&self) -> usize {
        self.depth_lat.dim(0)
    }
}

/// Deterministic stand-in text encoder. Each whitespace token maps to a fixed
/// unit-norm pseudo-random row; rows past the caption are zero.
pub fn embed_text<T: Scalar>(caption: &str, dim: usize, tokens: usize, seed: u64) -> Tensor<T> {
    let mut data = vec![T::zero(); dim * tokens];
    for (row, tok) in data.chunks_exact_mut(dim.max(1)).zip(caption.split_whitespace()) {
        let mut r = rng::stream(seed, &[rng::fnv1a(tok.as_bytes())]);
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for (dst, x) in row.iter_mut().zip(&v) {
            *dst = T::from_f64_lossy(x / norm);
        }
    }
    Tensor::from_parts(vec![tokens, dim], data)
}

/// Min-max normalize a depth clip to `[-1, 1]` over the whole sequence, then
/// average-pool by `factor`. A constant clip maps to zeros.
pub fn prepare_depth<T: Scalar>(depth: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let s = depth.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::Shape(format!("depth must be (L, 1, H, W), got {s:?}")));
    }
    if factor == 0 || s[2] % factor != 0 || s[3] % factor != 0 {
        return Err(Error::Shape(format!("depth size {}x{} not divisible by factor {factor}", s[2], s[3])));
    }
    if depth.data().iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
        return Err(Error::InvalidArgument("depth values must be positive and finite".into()));
    }
    let lo = depth.data().iter().copied().fold(T::infinity(), T::min);
    let hi = depth.data().iter().copied().fold(T::neg_infinity(), T::max);
    let two = T::from_f64_lossy(2.0);
    let norm = if hi > lo {
        depth.map(|v| two * (v - lo) / (hi - lo) - T::one())
    } else {
        Tensor::zeros(s)
    };
    let (l, h, w) = (s[0], s[2], s[3]);
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::from_usize_lossy(factor * factor);
    let d = norm.data();
    let mut out = Vec::with_capacity(l * oh * ow);
    for li in 0..l {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = T::zero();
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += d[(li * h + y * factor + dy) * w + x * factor + dx];
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    Ok(Tensor::from_parts(vec![l, 1, oh, ow], out))
}

/// `(B, L, C, H', W')` to `(B·L, C, H', W')`; element `(b, l)` lands at row
/// `b·L + l`. Row-major layout makes this a relabelling of the same buffer.
pub fn reshape_video_to_frames<T: Scalar>(z: Tensor<T>) -> Result<Tensor<T>> {
    let s = z.shape().to_vec();
    if s.len() != 5 {
        return Err(Error::Shape(format!("video batch must be (B, L, C, H', W'), got {s:?}")));
    }
    z.reshape(&[s[0] * s[1], s[2], s[3], s[4]])
}

pub fn reshape_frames_to_video<T: Scalar>(z: Tensor<T>, frames: usize) -> Result<Tensor<T>> {
    let s = z.shape().to_vec();
    if s.len() != 4 || frames == 0 || s[0] % frames != 0 {
        return Err(Error::Shape(format!("cannot split {s:?} into clips of {frames} frames")));
    }
    z.reshape(&[s[0] / frames, frames, s[1], s[2], s[3]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_embedding_rows() {
        let zero = embed_text::<f64>("", 8, 4, 1);
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let a = embed_text::<f64>("a red square", 8, 4, 1);
        assert_eq!(a, embed_text::<f64>("a red square", 8, 4, 1));
        let b = embed_text::<f64>("a blue square", 8, 4, 1);
        let rows_a: Vec<_> = a.data().chunks(8).collect();
        let rows_b: Vec<_> = b.data().chunks(8).collect();
        let differing: Vec<usize> = (0..4).filter(|&i| rows_a[i] != rows_b[i]).collect();
        assert_eq!(differing, vec![1]);
        for row in rows_a.iter().take(3) {
            let n: f64 = row.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(rows_a[3].iter().all(|&v| v == 0.0));
        let long = embed_text::<f64>("one two three four five six", 8, 4, 1);
        assert_eq!(long.shape(), &[4, 8]);
    }

    #[test]
    fn depth_normalization() {
        let d = Tensor::new(vec![1, 1, 2, 2], vec![0.3f64, 0.3, 1.0, 1.0]).unwrap();
        let full = prepare_depth(&d, 1).unwrap();
        assert_eq!(full.data(), &[-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(prepare_depth(&d, 2).unwrap().data(), &[0.0]);
        let c = Tensor::full(&[2, 1, 4, 4], 0.7f64);
        assert!(prepare_depth(&c, 2).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(prepare_depth(&Tensor::full(&[1, 1, 2, 2], -1.0f64), 1).is_err());
    }

    #[test]
    fn frames_reshape_round_trip() {
        let n = 2 * 16 * 4 * 8 * 8;
        let z = Tensor::new(vec![2, 16, 4, 8, 8], (0..n).map(|v| v as f32).collect()).unwrap();
        let f = reshape_video_to_frames(z.clone()).unwrap();
        assert_eq!(f.shape(), &[32, 4, 8, 8]);
        // element (b=1, l=3) lands at row 1*16+3
        assert_eq!(f.slab(19), z.slab(1)[3 * 256..4 * 256].as_ref());
        assert_eq!(reshape_frames_to_video(f, 16).unwrap(), z);
        assert!(reshape_frames_to_video(Tensor::<f32>::zeros(&[5, 1, 1, 1]), 2).is_err());
    }
}
