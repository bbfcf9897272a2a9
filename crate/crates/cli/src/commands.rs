use std::path::Path;

use vidgen::pipeline;
use vidgen::training::{initial_final, Stage, SMOOTHING_WINDOW};
use vidgen::{Result, RunConfig};

use crate::{Common, StageArg};

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn gen_data(common: &Common) -> Result<()> {
    let manifest = pipeline::gen_data(&resolve(common)?, &common.out)?;
    println!("wrote {} videos to {}", manifest.len(), common.out.display());
    Ok(())
}

pub fn train(common: &Common, stage: StageArg, init: Option<&Path>, resume: bool) -> Result<()> {
    let stage = match stage {
        StageArg::Image => Stage::Image,
        StageArg::Video => Stage::Video,
    };
    let trainer = pipeline::train(&resolve(common)?, &common.out, stage, init, resume)?;
    let (first, last) = initial_final(&trainer.losses, SMOOTHING_WINDOW);
    println!("trained {} steps; smoothed loss {first:.6} -> {last:.6}", trainer.step);
    Ok(())
}

pub fn sample(common: &Common, checkpoint: &Path, index: u64, caption: Option<&str>, ppm: bool) -> Result<()> {
    let (_, meta) = pipeline::sample(&resolve(common)?, &common.out, checkpoint, index, caption, ppm)?;
    println!("wrote {} frames of {:?} to {}", meta.frames, meta.caption, common.out.display());
    Ok(())
}

pub fn eval(common: &Common, checkpoint: &Path) -> Result<()> {
    let r = pipeline::eval(&resolve(common)?, &common.out, checkpoint)?;
    println!("fd {:.6} kd {:.6} temporal {:.6} prompt {:.6}", r.fd, r.kd, r.temporal, r.prompt);
    Ok(())
}

pub fn ablate(common: &Common, init: Option<&Path>, steps: usize) -> Result<()> {
    for row in pipeline::ablate(&resolve(common)?, &common.out, init, steps)? {
        println!("{}: trainable {} loss {:.6}", row.name, row.trainable_params, row.losses.last().copied().unwrap_or(f64::NAN));
    }
    Ok(())
}
