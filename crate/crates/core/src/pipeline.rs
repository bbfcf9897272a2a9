//! End-to-end commands over a resolved [`RunConfig`]. Each writes its
//! artifacts plus the resolved `config.toml` into an output directory, and
//! reruns with the same configuration produce byte-identical files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dataset::{draw_scene, generate_synthetic_dataset, Manifest, VideoSample};
use crate::denoiser::{Denoiser, DenoiserConfig, Partition, TemporalVariant};
use crate::metrics::{self, EvalReport, FeatureExtractor, GaussianStats, PixelEmbedder};
use crate::rng;
use crate::sampler::{self, SamplerConfig};
use crate::tensor::Tensor;
use crate::training::{prepare_examples, Example, Stage, TrainConfig, Trainer, TrainableScope};
use crate::{vtf, Error, Result, RunConfig};

pub const CONFIG_FILE: &str = "config.toml";

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

fn load_dataset(cfg: &RunConfig) -> Result<Vec<VideoSample<f32>>> {
    Manifest::read(cfg.data.dir.join("manifest.jsonl"))?.load_all()
}

fn examples(cfg: &RunConfig, model: &DenoiserConfig) -> Result<Vec<Example<f32>>> {
    prepare_examples(&load_dataset(cfg)?, &cfg.codec, model)
}

/// Write the synthetic dataset into `out` (not `data.dir`).
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    prepare_out(cfg, out)?;
    let d = &cfg.data;
    generate_synthetic_dataset(out, d.seed, d.count, d.frames, d.height, d.width)
}

/// Train `stage` into `out`. The image stage builds a model without temporal
/// modules; the video stage copies spatial weights from `init`.
pub fn train(cfg: &RunConfig, out: &Path, stage: Stage, init: Option<&Path>, resume: bool) -> Result<Trainer<f32>> {
    let cfg = RunConfig { train: TrainConfig { stage, ..cfg.train.clone() }, ..cfg.clone() };
    prepare_out(&cfg, out)?;
    let schedule = cfg.schedule.build()?;
    let mut trainer = if resume {
        Trainer::<f32>::resume(out, schedule, Some(cfg.train.steps))?
    } else {
        match stage {
            Stage::Image => {
                let model_cfg = DenoiserConfig { temporal_variant: TemporalVariant::None, ..cfg.model.clone() };
                Trainer::new(Denoiser::new(model_cfg, cfg.seed)?, cfg.train.clone(), schedule)?
            }
            Stage::Video => {
                let init = init.ok_or_else(|| Error::Config(vec!["the video stage requires an image-stage checkpoint".into()]))?;
                let image = Denoiser::<f32>::load(init)?;
                Trainer::video_from_image(&image, cfg.model.clone(), cfg.train.clone(), schedule, cfg.seed)?
            }
        }
    };
    let data = examples(&cfg, &trainer.model.config)?;
    trainer.run(&data, Some(out))?;
    Ok(trainer)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleMeta {
    pub caption: String,
    pub index: u64,
    pub frames: usize,
    pub window: usize,
    pub use_cam: bool,
}

/// Sample `sampler.frames` frames along the depth of synthetic scene `index`.
pub fn sample(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    index: u64,
    caption: Option<&str>,
    ppm: bool,
) -> Result<(Tensor<f32>, SampleMeta)> {
    prepare_out(cfg, out)?;
    let model = Denoiser::<f32>::load(checkpoint)?;
    let l = cfg.sampler.frames;
    let source: VideoSample<f32> = draw_scene(cfg.data.seed, index, l, cfg.data.height, cfg.data.width).render(l, cfg.data.height, cfg.data.width);
    let caption = caption.map(str::to_string).unwrap_or(source.caption);
    let schedule = cfg.schedule.build()?;
    let video = sampler::sample(&caption, &source.depth, &model, &cfg.codec, &schedule, &cfg.sampler)?;
    vtf::write_tensor(out.join("sample.vtf"), &video)?;
    vtf::write_tensor(out.join("depth.vtf"), &source.depth)?;
    let window = cfg.sampler.window.unwrap_or(model.config.train_frames).min(l);
    let meta = SampleMeta { caption, index, frames: l, window, use_cam: cfg.sampler.use_cam };
    write_json(&out.join("sample.json"), &meta)?;
    if ppm {
        let dir = out.join("frames");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        sampler::write_ppm_frames(&dir, &video)?;
    }
    Ok((video, meta))
}

fn first_frames(t: &Tensor<f32>, l: usize) -> Result<Tensor<f32>> {
    let mut shape = t.shape().to_vec();
    shape[0] = l;
    Tensor::new(shape, t.data()[..l * (t.len() / t.dim(0))].to_vec())
}

/// Sample `metrics.samples` videos along dataset depths and score them.
pub fn eval(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<EvalReport> {
    prepare_out(cfg, out)?;
    let model = Denoiser::<f32>::load(checkpoint)?;
    let data = load_dataset(cfg)?;
    let l = cfg.sampler.frames;
    let Some(first) = data.first() else {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    };
    if first.frame_count() < l {
        return Err(Error::Config(vec![format!("sampler.frames ({l}) exceeds the dataset's {} frames", first.frame_count())]));
    }
    let schedule = cfg.schedule.build()?;
    let n = cfg.metrics.samples;
    let picks: Vec<&VideoSample<f32>> = (0..n).map(|i| &data[i % data.len()]).collect();
    let fake = crate::parallel::map_ordered(&picks, |i, s| {
        let depth = first_frames(&s.depth, l)?;
        let sampler_cfg = SamplerConfig { seed: rng::derive_seed(cfg.sampler.seed, &[i as u64]), ..cfg.sampler.clone() };
        sampler::sample(&s.caption, &depth, &model, &cfg.codec, &schedule, &sampler_cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let real = picks.iter().map(|s| first_frames(&s.frames, l)).collect::<Result<Vec<_>>>()?;
    let captions: Vec<&str> = picks.iter().map(|s| s.caption.as_str()).collect();
    let extractor = FeatureExtractor::new(cfg.metrics.seed, cfg.metrics.dim, real[0].shape())?;
    let fr = extractor.feature_set(&real)?;
    let ff = extractor.feature_set(&fake)?;
    let fd = metrics::frechet_distance(&GaussianStats::from_features(&fr)?, &GaussianStats::from_features(&ff)?)?;
    let kd = metrics::kernel_distance(&fr, &ff)?;
    let embedder = PixelEmbedder::new(cfg.metrics.seed, cfg.metrics.embed_dim, cfg.data.height, cfg.data.width);
    let (mut temporal, mut prompt) = (0.0, 0.0);
    for (v, c) in fake.iter().zip(&captions) {
        temporal += metrics::temporal_consistency(v, &embedder)?;
        prompt += metrics::prompt_consistency(v, c, &embedder)?;
    }
    let report = EvalReport {
        fd,
        kd,
        temporal: temporal / n as f64,
        prompt: prompt / n as f64,
        n_samples: n,
        extractor_id: extractor.id(),
        seed: cfg.metrics.seed,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub temporal_variant: TemporalVariant,
    pub trainable_scope: TrainableScope,
    pub use_cam: bool,
    pub spatial_params: usize,
    pub temporal_params: usize,
    pub trainable_params: usize,
    pub losses: Vec<f64>,
}

/// Adapting strategies I to V plus the unmasked variant.
pub const ABLATIONS: [(&str, TemporalVariant, TrainableScope, bool); 6] = [
    ("I", TemporalVariant::None, TrainableScope::TemporalOnly, true),
    ("II", TemporalVariant::Tt, TrainableScope::TemporalOnly, true),
    ("III", TemporalVariant::Tt, TrainableScope::Full, true),
    ("IV", TemporalVariant::TtTc, TrainableScope::TemporalOnly, true),
    ("V", TemporalVariant::TtP3d, TrainableScope::TemporalOnly, true),
    ("no_cam", TemporalVariant::TtP3d, TrainableScope::TemporalOnly, false),
];

/// Train every variant for `steps` video-stage steps from the same start.
pub fn ablate(cfg: &RunConfig, out: &Path, init: Option<&Path>, steps: usize) -> Result<Vec<AblationRow>> {
    prepare_out(cfg, out)?;
    let image = init.map(Denoiser::<f32>::load).transpose()?;
    let schedule = cfg.schedule.build()?;
    let data = examples(cfg, &cfg.model)?;
    let mut rows = Vec::with_capacity(ABLATIONS.len());
    for (name, variant, scope, use_cam) in ABLATIONS {
        let model_cfg = DenoiserConfig { temporal_variant: variant, ..cfg.model.clone() };
        let train_cfg = TrainConfig { stage: Stage::Video, steps, trainable_scope: scope, use_cam, ..cfg.train.clone() };
        let mut trainer = match &image {
            Some(img) => Trainer::video_from_image(img, model_cfg, train_cfg, schedule.clone(), cfg.seed)?,
            None => Trainer::new(Denoiser::new(model_cfg, cfg.seed)?, train_cfg, schedule.clone())?,
        };
        trainer.run(&data, None)?;
        let p = &trainer.model.params;
        rows.push(AblationRow {
            name: name.to_string(),
            temporal_variant: variant,
            trainable_scope: scope,
            use_cam,
            spatial_params: p.count(Partition::Spatial),
            temporal_params: p.count(Partition::Temporal),
            trainable_params: p.count_trainable(trainer.config.trainable()),
            losses: trainer.losses.clone(),
        });
    }
    write_json(&out.join("ablation.json"), &serde_json::json!({ "steps": steps, "variants": rows }))?;
    Ok(rows)
}
