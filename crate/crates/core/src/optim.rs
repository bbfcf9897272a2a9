//! Adaptive-moment optimizer over named parameters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{load_store, save_store, Param, ParamStore, Partition};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update of every parameter that has a gradient. Moments are kept in
    /// the parameter's scalar type; bias correction is computed in `f64`.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(lr / bc1);
        let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
        let eps = T::from_f64_lossy(c.eps);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter {name}")))?;
            p.tensor.expect_shape(g.shape())?;
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((w, &gi), mi), vi) in
                p.tensor.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *w -= step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }

    fn moments_store(map: &BTreeMap<String, Tensor<T>>) -> ParamStore<T> {
        let mut s = ParamStore::default();
        for (n, t) in map {
            s.insert(n.clone(), Param { tensor: t.clone(), partition: Partition::Temporal });
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_store(&dir.join("m"), &Self::moments_store(&self.m))?;
        save_store(&dir.join("v"), &Self::moments_store(&self.v))?;
        let meta = serde_json::json!({ "step": self.step, "config": self.config });
        crate::vtf::write_atomic(&dir.join("adam.json"), meta.to_string().as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("adam.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        #[derive(Deserialize)]
        struct Meta {
            step: u64,
            config: AdamConfig,
        }
        let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let unpack = |s: ParamStore<T>| s.iter().map(|(n, p)| (n.clone(), p.tensor.clone())).collect();
        Ok(Self {
            config: meta.config,
            step: meta.step,
            m: unpack(load_store(&dir.join("m"))?),
            v: unpack(load_store(&dir.join("v"))?),
        })
    }
}
