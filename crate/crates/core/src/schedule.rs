//! Noise schedule, forward diffusion and the denoising losses.

use serde::{Deserialize, Serialize};

use crate::autograd::{mse, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(default)]
    pub kind: ScheduleKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { timesteps: 1000, beta_start: 1e-4, beta_end: 0.02, kind: ScheduleKind::Linear }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.timesteps == 0 {
            bad.push("schedule.timesteps must be >= 1".into());
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            bad.push(format!(
                "schedule betas must satisfy 0 < beta_start <= beta_end < 1, got [{}, {}]",
                self.beta_start, self.beta_end
            ));
        }
        bad
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// Per-timestep scalars, indexed by `t` in `1..=T`. Stored in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "linear schedule needs T >= 1 and 0 < beta_start <= beta_end < 1, got T={timesteps}, [{beta_start}, {beta_end}]"
            )));
        }
        let betas = if timesteps == 1 {
            vec![beta_start]
        } else {
            (0..timesteps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument("betas must be non-empty and lie in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, &a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `alpha_bar_t` with the convention `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.timesteps() => Ok(self.alpha_bars[t - 1]),
            t => Err(Error::InvalidArgument(format!("timestep {t} outside 0..={}", self.timesteps()))),
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 1..={}", self.timesteps())));
        }
        Ok(())
    }

    /// `z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps`.
    pub fn q_sample<T: Scalar>(&self, z0: &Tensor<T>, t: usize, eps: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_t(t)?;
        q_sample_at(z0, eps, self.alpha_bars[t - 1])
    }
}

/// Forward diffusion at an explicit `alpha_bar`.
pub fn q_sample_at<T: Scalar>(z0: &Tensor<T>, eps: &Tensor<T>, alpha_bar: f64) -> Result<Tensor<T>> {
    let a = T::from_f64_lossy(alpha_bar.sqrt());
    let s = T::from_f64_lossy((1.0 - alpha_bar).sqrt());
    z0.zip_map(eps, |x, e| a * x + s * e)
}

/// Element-mean squared error between true and predicted noise.
pub fn loss_image<T: Scalar>(eps: &Tensor<T>, eps_hat: &Tensor<T>) -> Result<T> {
    eps.expect_shape(eps_hat.shape())?;
    let n = T::from_usize_lossy(eps.len().max(1));
    Ok(eps.data().iter().zip(eps_hat.data()).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b)) / n)
}

/// Same functional as [`loss_image`], applied to a video-shaped prediction.
pub fn loss_video<T: Scalar>(eps: &Tensor<T>, eps_hat: &Tensor<T>) -> Result<T> {
    loss_image(eps, eps_hat)
}

/// Differentiable form of the loss used during training.
pub fn loss_var<T: Scalar>(eps: &Tensor<T>, eps_hat: &Var<T>) -> Result<Var<T>> {
    eps.expect_shape(eps_hat.shape())?;
    Ok(mse(eps_hat, &Var::constant(eps.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_alpha_bars() {
        let s = NoiseSchedule::linear(4, 0.1, 0.4).unwrap();
        for (got, want) in s.betas().iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in s.alpha_bars().iter().zip([0.9, 0.72, 0.504, 0.3024]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let one = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(one.alpha_bars(), &[0.5]);
    }

    #[test]
    fn default_schedule_is_strictly_decreasing() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.timesteps(), 1000);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars().iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn invalid_ranges() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(!ScheduleConfig { timesteps: 0, beta_start: 0.5, beta_end: 0.1, kind: ScheduleKind::Linear }
            .validate()
            .is_empty());
    }

    #[test]
    fn q_sample_cases() {
        let z0 = Tensor::new(vec![1], vec![1.0f64]).unwrap();
        let eps = Tensor::new(vec![1], vec![-1.0f64]).unwrap();
        let zt = q_sample_at(&z0, &eps, 0.64).unwrap();
        assert!((zt.data()[0] - 0.2).abs() < 1e-12);
        assert_eq!(q_sample_at(&z0, &eps, 1.0).unwrap(), z0);
        let zero = Tensor::zeros(&[1]);
        assert!((q_sample_at(&zero, &eps, 0.64).unwrap().data()[0] + 0.6).abs() < 1e-12);

        let s = NoiseSchedule::linear(10, 0.01, 0.02).unwrap();
        assert!(s.q_sample(&z0, 0, &eps).is_err());
        assert!(s.q_sample(&z0, 11, &eps).is_err());
        assert!(s.q_sample(&z0, 10, &eps).is_ok());
    }

    #[test]
    fn loss_cases() {
        let t = |v: Vec<f64>| Tensor::new(vec![v.len()], v).unwrap();
        assert_eq!(loss_image(&t(vec![1.0, 2.0]), &t(vec![1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(loss_image(&t(vec![1.0, 1.0]), &t(vec![0.0, 0.0])).unwrap(), 1.0);
        assert!((loss_video(&t(vec![1.0, 0.0, -1.0]), &t(vec![0.0; 3])).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(loss_image(&t(vec![1.0]), &t(vec![1.0, 2.0])).is_err());
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_symmetric(a in prop::collection::vec(-5.0f64..5.0, 1..16), seed in any::<u64>()) {
            let mut r = rng::stream(seed, &[]);
            let x = Tensor::new(vec![a.len()], a.clone()).unwrap();
            let y = Tensor::randn(&[a.len()], &mut r);
            let l1 = loss_image(&x, &y).unwrap();
            prop_assert!(l1 >= 0.0);
            prop_assert_eq!(l1, loss_image(&y, &x).unwrap());
            prop_assert_eq!(loss_image(&x, &x).unwrap(), 0.0);
        }
    }
}
