//! Additive temporal attention masks.
//!
//! Entry `(i, j)` is 0 where query frame `i` may attend to key frame `j` and
//! "minus infinity" elsewhere. Minus infinity is realized as the most negative
//! finite value of the scalar type, so a masked logit contributes exactly zero
//! weight after the softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Lower triangular including the diagonal.
    TrainCausal,
    /// Causal with a receptive field of `window` frames, self included.
    Banded { window: usize },
    /// No masking (all entries zero).
    Full,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    len: usize,
    mode: MaskMode,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn train(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("mask length must be >= 1".into()));
        }
        Ok(Self::from_rule(len, MaskMode::TrainCausal, |i, j| j <= i))
    }

    pub fn banded(len: usize, window: usize) -> Result<Self> {
        if len == 0 || window == 0 || window > len {
            return Err(Error::InvalidArgument(format!("banded mask needs 1 <= window <= len, got window={window}, len={len}")));
        }
        Ok(Self::from_rule(len, MaskMode::Banded { window }, |i, j| j <= i && j + window > i))
    }

    /// The mask used when causal masking is disabled.
    pub fn full(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("mask length must be >= 1".into()));
        }
        Ok(Self::from_rule(len, MaskMode::Full, |_, _| true))
    }

    fn from_rule(len: usize, mode: MaskMode, rule: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..len).flat_map(|i| (0..len).map(move |j| (i, j))).map(|(i, j)| rule(i, j)).collect();
        Self { len, mode, allowed }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.len + j]
    }

    /// Number of zero (attendable) entries.
    pub fn zero_count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// The additive `(L, L)` matrix.
    pub fn additive<T: Scalar>(&self) -> Tensor<T> {
        let data = self.allowed.iter().map(|&a| if a { T::zero() } else { T::mask_value() }).collect();
        Tensor::from_parts(vec![self.len, self.len], data)
    }

    /// Rows of attendable key positions.
    pub fn rows(&self) -> Vec<Vec<usize>> {
        (0..self.len).map(|i| (0..self.len).filter(|&j| self.is_allowed(i, j)).collect()).collect()
    }
}

/// Mask used at sampling time: causal for clips no longer than the training
/// length, banded beyond it.
pub fn inference_mask(len: usize, train_len: usize, window: usize, causal: bool) -> Result<AttentionMask> {
    if !causal {
        return AttentionMask::full(len);
    }
    if len > train_len {
        AttentionMask::banded(len, window.min(len))
    } else {
        AttentionMask::train(len)
    }
}
