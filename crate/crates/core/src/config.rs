//! Run configuration: one TOML document covering every stage of the pipeline.
//!
//! Files may be partial; missing keys take their defaults. `key=value`
//! overrides address fields by dotted path and are applied after the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;
use crate::schedule::ScheduleConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory holding `manifest.jsonl`.
    pub dir: PathBuf,
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("data"), count: 200, frames: 16, height: 32, width: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Feature dimension of the distribution metrics.
    pub dim: usize,
    /// Embedding dimension of the consistency scores.
    pub embed_dim: usize,
    /// Number of generated videos scored by `eval`.
    pub samples: usize,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { dim: 64, embed_dim: 32, samples: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization; `set_seed` also overwrites every section seed.
    pub seed: u64,
    pub data: DataConfig,
    pub codec: CodecConfig,
    pub schedule: ScheduleConfig,
    pub model: DenoiserConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            codec: CodecConfig::default(),
            schedule: ScheduleConfig::default(),
            model: DenoiserConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse the right-hand side of an override as a TOML value, falling back to
/// a bare string.
fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> std::result::Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key {key:?} is malformed"));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| format!("override {key}: {p} is not a section"))?;
        node = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node.as_table_mut().ok_or_else(|| format!("override {key}: parent is not a section"))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parse a TOML document layered over the defaults, then apply overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
        let user: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| Error::Config(vec![e.to_string()]))?;
        merge(&mut value, user);
        let mut bad = Vec::new();
        for o in overrides {
            match o.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = set_path(&mut value, k.trim(), parse_value(v.trim())) {
                        bad.push(e);
                    }
                }
                None => bad.push(format!("override {o:?} is not of the form key=value")),
            }
        }
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        value.try_into::<RunConfig>().map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = seed;
        self.train.seed = seed;
        self.sampler.seed = seed;
        self.metrics.seed = seed;
    }

    /// Every violated constraint, one message per field.
    pub fn problems(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let d = &self.data;
        if d.count == 0 {
            bad.push("data.count must be >= 1".into());
        }
        if d.frames < 2 {
            bad.push(format!("data.frames must be >= 2, got {}", d.frames));
        }
        if d.height < 16 || d.width < 16 {
            bad.push(format!("data.height and data.width must be >= 16, got {}x{}", d.height, d.width));
        }
        bad.extend(self.codec.validate());
        bad.extend(self.schedule.validate());
        bad.extend(self.model.validate());
        bad.extend(self.train.validate());
        bad.extend(self.sampler.validate(self.schedule.timesteps));
        let f = self.codec.factor();
        let channels = self.codec.latent_channels(3);
        if f > 0 && self.model.latent_channels != channels {
            bad.push(format!("model.latent_channels must equal the codec's {channels} channels, got {}", self.model.latent_channels));
        }
        let div = f * self.model.spatial_divisor();
        if div > 0 && (d.height % div != 0 || d.width % div != 0) {
            bad.push(format!("data.height and data.width must be divisible by {div}, got {}x{}", d.height, d.width));
        }
        if self.train.train_frames > d.frames {
            bad.push(format!("train.train_frames ({}) exceeds data.frames ({})", self.train.train_frames, d.frames));
        }
        if self.metrics.dim == 0 || self.metrics.embed_dim == 0 {
            bad.push("metrics.dim and metrics.embed_dim must be >= 1".into());
        }
        if self.metrics.samples < 2 {
            bad.push(format!("metrics.samples must be >= 2, got {}", self.metrics.samples));
        }
        if d.height % crate::metrics::FeatureExtractor::POOL != 0 || d.width % crate::metrics::FeatureExtractor::POOL != 0 {
            bad.push(format!("data.height and data.width must be divisible by {}", crate::metrics::FeatureExtractor::POOL));
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.problems();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.problems(), Vec::<String>::new());
        let back = RunConfig::from_toml_str(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_and_overrides() {
        let text = "[train]\nsteps = 7\n[sampler]\nwindow = 4\n";
        let cfg = RunConfig::from_toml_str(
            text,
            &["train.learning_rate=0.5".into(), "model.temporal_variant=tt_tc".into(), "data.dir=somewhere".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.sampler.window, Some(4));
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.model.temporal_variant, crate::denoiser::TemporalVariant::TtTc);
        assert_eq!(cfg.data.dir, PathBuf::from("somewhere"));
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_and_bad_overrides_fail() {
        assert!(matches!(RunConfig::from_toml_str("[train]\nstepz = 1\n", &[]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("", &["noequals".into()]), Err(Error::Config(_))));
    }

    #[test]
    fn every_offending_field_is_listed() {
        let cfg = RunConfig::from_toml_str(
            "",
            &["train.batch_size=0".into(), "sampler.eta=2.0".into(), "schedule.timesteps=0".into()],
        )
        .unwrap();
        let bad = cfg.problems();
        for field in ["train.batch_size", "sampler.eta", "schedule.timesteps"] {
            assert!(bad.iter().any(|m| m.contains(field)), "{field} missing from {bad:?}");
        }
    }

    #[test]
    fn seed_reaches_every_section() {
        let mut cfg = RunConfig::default();
        cfg.set_seed(42);
        assert_eq!([cfg.seed, cfg.data.seed, cfg.train.seed, cfg.sampler.seed, cfg.metrics.seed], [42; 5]);
    }
}
