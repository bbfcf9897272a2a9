//! Distribution distances between feature sets and cosine-similarity
//! consistency scores. All arithmetic is in `f64`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Color;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `n` feature vectors of dimension `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub features: DMatrix<f64>,
    pub extractor_id: String,
}

impl FeatureSet {
    pub fn new(rows: &[Vec<f64>], extractor_id: impl Into<String>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("feature vectors have different lengths".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature set".into()));
        }
        Ok(Self {
            features: DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]),
            extractor_id: extractor_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    /// Sample mean and unbiased covariance.
    pub fn from_features(set: &FeatureSet) -> Result<Self> {
        let n = set.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("covariance needs at least 2 samples, got {n}")));
        }
        let mean = set.features.row_mean().transpose();
        let mut centered = set.features.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        Ok(Self { mean, cov })
    }
}

/// Symmetric PSD square root with eigenvalues clamped at zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// The trace of `(S_a S_b)^{1/2}` is taken as the trace of the square root of
/// the symmetric similar matrix `S_a^{1/2} S_b S_a^{1/2}`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let k = a.mean.len();
    if b.mean.len() != k || a.cov.shape() != (k, k) || b.cov.shape() != (k, k) {
        return Err(Error::Shape(format!("statistics of dimension {k} and {}", b.mean.len())));
    }
    let finite = |s: &GaussianStats| s.mean.iter().chain(s.cov.iter()).all(|v| v.is_finite());
    if !finite(a) || !finite(b) {
        return Err(Error::NonFinite("Gaussian statistics".into()));
    }
    let sa = sqrt_psd(&a.cov);
    let inner = &sa * &b.cov * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = (&a.mean - &b.mean).norm_squared();
    Ok((d + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt).max(0.0))
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let k = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / k + 1.0).powi(3)
}

fn rows(set: &FeatureSet) -> Vec<Vec<f64>> {
    set.features.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Unbiased squared MMD with the cubic polynomial kernel `(x.y/k + 1)^3`.
///
/// Every term averages over distinct index pairs (`i != j`), cross terms
/// included, so two identical multisets score exactly zero.
pub fn kernel_distance(x: &FeatureSet, y: &FeatureSet) -> Result<f64> {
    kernel_distance_impl(x, y, true)
}

/// Biased (V-statistic) variant, diagonal terms included.
pub fn kernel_distance_biased(x: &FeatureSet, y: &FeatureSet) -> Result<f64> {
    kernel_distance_impl(x, y, false)
}

fn kernel_distance_impl(x: &FeatureSet, y: &FeatureSet, unbiased: bool) -> Result<f64> {
    let (m, n) = (x.len(), y.len());
    let min = if unbiased { 2 } else { 1 };
    if m < min || n < min {
        return Err(Error::InvalidArgument(format!("kernel distance needs at least {min} samples per set, got {m} and {n}")));
    }
    if x.dim() != y.dim() {
        return Err(Error::Shape(format!("feature dimensions {} and {}", x.dim(), y.dim())));
    }
    let (xr, yr) = (rows(x), rows(y));
    let within = |r: &[Vec<f64>]| {
        let len = r.len();
        let mut s = 0.0;
        for i in 0..len {
            for j in 0..len {
                if i != j || !unbiased {
                    s += poly_kernel(&r[i], &r[j]);
                }
            }
        }
        let pairs = if unbiased { len * (len - 1) } else { len * len };
        s / pairs as f64
    };
    let mut cross = 0.0;
    let mut pairs = 0usize;
    for (i, a) in xr.iter().enumerate() {
        for (j, b) in yr.iter().enumerate() {
            if i != j || !unbiased {
                cross += poly_kernel(a, b);
                pairs += 1;
            }
        }
    }
    let cross = cross / pairs as f64;
    Ok(within(&xr) + within(&yr) - 2.0 * cross)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Maps frames and captions into a shared embedding space.
pub trait Embedder {
    /// `frame` is `(3, H, W)` pixels.
    fn embed_frame(&self, frame: &[f64], height: usize, width: usize) -> Vec<f64>;
    fn embed_text(&self, caption: &str) -> Vec<f64>;
}

/// Mean over consecutive frames of the cosine similarity of embeddings.
pub fn temporal_consistency<T: Scalar>(video: &Tensor<T>, embedder: &dyn Embedder) -> Result<f64> {
    let emb = embed_frames(video, embedder)?;
    if emb.len() < 2 {
        return Err(Error::Shape("temporal consistency needs at least 2 frames".into()));
    }
    Ok(emb.windows(2).map(|w| cosine(&w[0], &w[1])).sum::<f64>() / (emb.len() - 1) as f64)
}

/// Mean over frames of the cosine similarity between caption and frame.
pub fn prompt_consistency<T: Scalar>(video: &Tensor<T>, caption: &str, embedder: &dyn Embedder) -> Result<f64> {
    let emb = embed_frames(video, embedder)?;
    if emb.is_empty() {
        return Err(Error::Shape("prompt consistency needs at least 1 frame".into()));
    }
    let text = embedder.embed_text(caption);
    Ok(emb.iter().map(|e| cosine(&text, e)).sum::<f64>() / emb.len() as f64)
}

fn embed_frames<T: Scalar>(video: &Tensor<T>, embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>> {
    let s = video.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::Shape(format!("video must be (L, 3, H, W), got {s:?}")));
    }
    Ok((0..s[0])
        .map(|i| {
            let f: Vec<f64> = video.slab(i).iter().map(|v| v.to_f64_lossy()).collect();
            embedder.embed_frame(&f, s[2], s[3])
        })
        .collect())
}

fn gaussian_matrix(seed: u64, rows: usize, cols: usize, label: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[label]);
    let scale = 1.0 / (cols as f64).sqrt();
    (0..rows * cols).map(|_| StandardNormal.sample(&mut r)).map(|v: f64| v * scale).collect()
}

fn project(matrix: &[f64], x: &[f64]) -> Vec<f64> {
    matrix.chunks_exact(x.len()).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Frozen random projection of grey-centred pixels. Captions embed as a flat
/// frame of the caption's colour, so prompt consistency measures colour
/// agreement.
#[derive(Clone, Debug)]
pub struct PixelEmbedder {
    pub seed: u64,
    pub dim: usize,
    height: usize,
    width: usize,
    matrix: Vec<f64>,
}

impl PixelEmbedder {
    pub fn new(seed: u64, dim: usize, height: usize, width: usize) -> Self {
        let matrix = gaussian_matrix(seed, dim, 3 * height * width, 0xe3b);
        Self { seed, dim, height, width, matrix }
    }
}

impl Embedder for PixelEmbedder {
    fn embed_frame(&self, frame: &[f64], height: usize, width: usize) -> Vec<f64> {
        assert_eq!((height, width), (self.height, self.width), "embedder built for another frame size");
        let centred: Vec<f64> = frame.iter().map(|v| v - 0.5).collect();
        project(&self.matrix, &centred)
    }

    fn embed_text(&self, caption: &str) -> Vec<f64> {
        let color = caption.split_whitespace().find_map(Color::from_name);
        let Some(color) = color else { return vec![0.0; self.dim] };
        let plane = self.height * self.width;
        let rgb = color.rgb();
        let frame: Vec<f64> = (0..3 * plane).map(|i| rgb[i / plane] as f64).collect();
        self.embed_frame(&frame, self.height, self.width)
    }
}

/// Average-pool each frame by `POOL`, flatten the clip, and project to `dim`
/// features with a frozen Gaussian matrix.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub seed: u64,
    pub dim: usize,
    shape: [usize; 4],
    matrix: Vec<f64>,
}

impl FeatureExtractor {
    pub const POOL: usize = 4;

    pub fn new(seed: u64, dim: usize, video_shape: &[usize]) -> Result<Self> {
        let &[l, c, h, w] = video_shape else {
            return Err(Error::Shape(format!("video must be (L, C, H, W), got {video_shape:?}")));
        };
        if h % Self::POOL != 0 || w % Self::POOL != 0 {
            return Err(Error::Shape(format!("frame size {h}x{w} not divisible by {}", Self::POOL)));
        }
        let input = l * c * (h / Self::POOL) * (w / Self::POOL);
        Ok(Self { seed, dim, shape: [l, c, h, w], matrix: gaussian_matrix(seed, dim, input, 0xfea7) })
    }

    pub fn id(&self) -> String {
        format!("pool{}-proj{}-seed{}", Self::POOL, self.dim, self.seed)
    }

    pub fn extract<T: Scalar>(&self, video: &Tensor<T>) -> Result<Vec<f64>> {
        video.expect_shape(&self.shape)?;
        let [l, c, h, w] = self.shape;
        let p = Self::POOL;
        let (oh, ow) = (h / p, w / p);
        let d = video.data();
        let mut pooled = Vec::with_capacity(l * c * oh * ow);
        for plane in 0..l * c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..p {
                        for dx in 0..p {
                            acc += d[(plane * h + y * p + dy) * w + x * p + dx].to_f64_lossy();
                        }
                    }
                    pooled.push(acc / (p * p) as f64);
                }
            }
        }
        Ok(project(&self.matrix, &pooled))
    }

    pub fn feature_set<T: Scalar>(&self, videos: &[Tensor<T>]) -> Result<FeatureSet> {
        let rows = crate::parallel::map_ordered(videos, |_, v| self.extract(v)).into_iter().collect::<Result<Vec<_>>>()?;
        FeatureSet::new(&rows, self.id())
    }
}

/// Structured evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fd: f64,
    pub kd: f64,
    pub temporal: f64,
    pub prompt: f64,
    pub n_samples: usize,
    pub extractor_id: String,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: &[f64], diag: &[f64]) -> GaussianStats {
        GaussianStats { mean: DVector::from_row_slice(mean), cov: DMatrix::from_diagonal(&DVector::from_row_slice(diag)) }
    }

    fn set(rows: &[&[f64]]) -> FeatureSet {
        FeatureSet::new(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), "test").unwrap()
    }

    #[test]
    fn frechet_cases() {
        let a = stats(&[0.0, 0.0], &[1.0, 1.0]);
        let b = stats(&[0.0, 0.0], &[4.0, 9.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        let c = stats(&[1.0, -2.0], &[1.0, 1.0]);
        assert!((frechet_distance(&a, &c).unwrap() - 5.0).abs() < 1e-12);
        assert!(frechet_distance(&a, &stats(&[0.0], &[1.0])).is_err());
    }

    #[test]
    fn kernel_cases() {
        assert_eq!(kernel_distance(&set(&[&[1.0], &[1.0]]), &set(&[&[0.0], &[0.0]])).unwrap(), 7.0);
        assert_eq!(kernel_distance(&set(&[&[1.0], &[-1.0]]), &set(&[&[1.0], &[-1.0]])).unwrap(), 0.0);
        assert_eq!(kernel_distance_biased(&set(&[&[0.4, 2.0]]), &set(&[&[0.4, 2.0]])).unwrap(), 0.0);
        assert!(kernel_distance(&set(&[&[1.0]]), &set(&[&[1.0], &[2.0]])).is_err());
    }

    struct Fixed(Vec<Vec<f64>>);

    impl Embedder for Fixed {
        fn embed_frame(&self, frame: &[f64], _: usize, _: usize) -> Vec<f64> {
            self.0[frame[0] as usize].clone()
        }
        fn embed_text(&self, _: &str) -> Vec<f64> {
            vec![1.0, 0.0]
        }
    }

    fn indexed_video(l: usize) -> Tensor<f64> {
        Tensor::new(vec![l, 3, 1, 1], (0..l).flat_map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap()
    }

    #[test]
    fn consistency_cases() {
        let e = Fixed(vec![vec![1.0, 0.0], vec![0.8, 0.6], vec![0.8 * 0.6 - 0.6 * 0.8, 0.6 * 0.6 + 0.8 * 0.8]]);
        // cos(e0, e1) = 0.8, cos(e1, e2) = 0.6
        assert!((temporal_consistency(&indexed_video(3), &e).unwrap() - 0.7).abs() < 1e-12);
        let ortho = Fixed(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(temporal_consistency(&indexed_video(2), &ortho).unwrap(), 0.0);
        let zero = Fixed(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(temporal_consistency(&indexed_video(2), &zero).unwrap(), 0.0);
        assert!((prompt_consistency(&indexed_video(2), "x", &e).unwrap() - 0.9).abs() < 1e-12);
        assert!(temporal_consistency(&indexed_video(1), &e).is_err());

        let pix = PixelEmbedder::new(1, 16, 4, 4);
        let still = Tensor::new(vec![3, 3, 4, 4], (0..144).map(|i| (i % 48) as f64 / 47.0).collect()).unwrap();
        assert!((temporal_consistency(&still, &pix).unwrap() - 1.0).abs() < 1e-12);
        let red = Tensor::new(vec![1, 3, 4, 4], (0..48).map(|i| if i < 16 { 1.0 } else { 0.0 }).collect()).unwrap();
        assert!(prompt_consistency(&red, "a red disk", &pix).unwrap() > 0.99);
    }

    #[test]
    fn feature_extractor_basics() {
        let fx = FeatureExtractor::new(3, 8, &[2, 3, 8, 8]).unwrap();
        let v = Tensor::<f64>::full(&[2, 3, 8, 8], 0.25);
        assert_eq!(fx.extract(&v).unwrap(), fx.extract(&v).unwrap());
        assert!(fx.extract(&Tensor::<f64>::zeros(&[2, 3, 8, 8])).unwrap().iter().all(|&x| x == 0.0));
        assert!(FeatureExtractor::new(3, 8, &[2, 3, 6, 6]).is_err());
    }
}
