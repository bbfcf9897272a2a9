//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Numeric arguments restrict the
//! run to the listed criteria, e.g. `cargo test --test acceptance -- 1 7`.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use vidgen::codec::{self, CodecConfig, LatentVideo};
use vidgen::dataset::{draw_scene, synthetic_sample, VideoSample};
use vidgen::denoiser::{
    embed_text, prepare_depth, Bound, Conditioning, Denoiser, DenoiserConfig, Partition, TemporalMode, TemporalTransformer,
    TemporalVariant, Trainable,
};
use vidgen::mask::AttentionMask;
use vidgen::metrics::{self, FeatureSet, GaussianStats, PixelEmbedder};
use vidgen::rng;
use vidgen::sampler::{self, SamplerConfig};
use vidgen::schedule::{self, NoiseSchedule};
use vidgen::training::{self, prepare_examples, Stage, TrainConfig, Trainer, TrainableScope, TEXT_SEED};
use vidgen::{pipeline, RunConfig, Tensor};

const CAUSALITY_TRIALS: usize = 100;
const ZERO_INIT_TOL: f64 = 1e-6;
const ZERO_INIT_TRIALS: usize = 20;
const FREEZE_STEPS: usize = 50;
const GRAD_PARAMS: usize = 24;
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_STEP: f64 = 1e-6;
const GRAD_DENOM_FLOOR: f64 = 1e-8;
const Q_SAMPLE_DRAWS: usize = 100_000;
const STANDARD_ERRORS: f64 = 3.0;
const DDIM_ORACLE_TOL: f64 = 1e-10;
const SUBDIVISION_TOL: f64 = 1e-6;
const GUIDE_AFFINE_TOL: f64 = 1e-12;
const FRECHET_TOL: f64 = 1e-8;
const KD_TRIALS: usize = 100;
const DRIFT_RATIO: f64 = 2.0;

// toy end-to-end budget
const TOY_VIDEOS: u64 = 200;
const TOY_FRAMES: usize = 16;
const TOY_SIZE: usize = 32;
const STAGE_A_STEPS: usize = 2000;
const STAGE_A_LR: f64 = 2e-3;
const STAGE_A_BATCH: usize = 8;
const STAGE_B_STEPS: usize = 2000;
const STAGE_B_LR: f64 = 1e-3;
const STAGE_B_BATCH: usize = 1;
const LOSS_RATIO: f64 = 0.5;
const TOY_SAMPLES: usize = 32;
const TOY_DDIM_STEPS: usize = 20;
const LONG_SAMPLES: usize = 4;
const LONG_FRAMES: usize = 64;
const LONG_WINDOW: usize = 16;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, &mut rng::stream(seed, &[]))
}

// 1 ------------------------------------------------------------------------

fn mask_correctness() -> Outcome {
    let mut checked = 0;
    for l in 1..=8usize {
        let train = AttentionMask::train(l).map_err(|e| e.to_string())?;
        let add = train.additive::<f64>();
        for i in 0..l {
            for j in 0..l {
                let want_zero = j <= i;
                let v = add.data()[i * l + j];
                ensure(want_zero == (v == 0.0), format!("train L={l} ({i},{j}) = {v}"))?;
                ensure(want_zero || v == f64::MIN, format!("train L={l} ({i},{j}) not -inf stand-in"))?;
                checked += 1;
            }
        }
        for window in 1..=l {
            let banded = AttentionMask::banded(l, window).map_err(|e| e.to_string())?;
            let add = banded.additive::<f64>();
            for i in 0..l {
                let lo = (i + 1).saturating_sub(window);
                for j in 0..l {
                    let want_zero = lo <= j && j <= i;
                    let v = add.data()[i * l + j];
                    ensure(want_zero == (v == 0.0), format!("banded L={l} L_M={window} ({i},{j}) = {v}"))?;
                    ensure(want_zero || v == f64::MIN, format!("banded L={l} L_M={window} ({i},{j})"))?;
                    checked += 1;
                }
            }
            if window == l {
                ensure(add == train.additive::<f64>(), format!("banded({l},{l}) differs from train({l})"))?;
            }
        }
        ensure(AttentionMask::banded(l, 0).is_err() && AttentionMask::banded(l, l + 1).is_err(), "invalid window accepted")?;
    }
    Ok(format!("{checked} entries enumerated for L <= 8"))
}

// 2 ------------------------------------------------------------------------

fn temporal_causality() -> Outcome {
    let (l, ch) = (16, 8);
    let mut tt = TemporalTransformer::<f64>::new(ch, 2, l - 1, 2, 1).map_err(|e| e.to_string())?;
    tt.params.perturb(Partition::Temporal, 0.3, 2);
    let masks = [AttentionMask::train(l).unwrap(), AttentionMask::banded(l, 4).unwrap()];
    let frame = ch * 4;
    let mut pick = rng::stream(3, &[]);
    for trial in 0..CAUSALITY_TRIALS {
        let h = random(&[1, l, ch, 2, 2], 100 + trial as u64);
        let j = pick.random_range(0..l);
        let mut g = h.clone();
        for v in &mut g.data_mut()[j * frame..(j + 1) * frame] {
            *v += pick.random_range(-2.0..2.0);
        }
        for mask in &masks {
            let a = tt.forward(&h, mask).map_err(|e| e.to_string())?;
            let b = tt.forward(&g, mask).map_err(|e| e.to_string())?;
            ensure(a.data()[..j * frame] == b.data()[..j * frame], format!("trial {trial}: positions < {j} changed ({:?})", mask.mode()))?;
            ensure(a.data()[j * frame..(j + 1) * frame] != b.data()[j * frame..(j + 1) * frame], format!("trial {trial}: position {j} unaffected"))?;
        }
    }
    Ok(format!("{CAUSALITY_TRIALS} inputs x 2 masks, earlier positions bitwise unchanged"))
}

// 3 ------------------------------------------------------------------------

fn conditioning(cfg: &DenoiserConfig, caption: &str, depth: Tensor<f32>) -> Conditioning<f32> {
    Conditioning::new(embed_text(caption, cfg.context_dim, cfg.context_tokens, TEXT_SEED), depth).unwrap()
}

fn zero_init_equivalence() -> Outcome {
    let variants = [TemporalVariant::Tt, TemporalVariant::TtTc, TemporalVariant::TtP3d];
    let mut worst = 0.0f64;
    for k in 0..ZERO_INIT_TRIALS {
        let cfg = DenoiserConfig { temporal_variant: variants[k % 3], train_frames: 8, ..DenoiserConfig::default() };
        let model = Denoiser::<f32>::new(cfg.clone(), k as u64).map_err(|e| e.to_string())?;
        let mut r = rng::stream(500 + k as u64, &[]);
        let z = Tensor::<f32>::randn(&[1, 8, cfg.latent_channels, 8, 8], &mut r);
        let depth = Tensor::<f32>::randn(&[8, 1, 8, 8], &mut r).map(|v| v.tanh());
        let cond = [conditioning(&cfg, "a blue disk moving left", depth)];
        let t = r.random_range(1..=1000);
        let mask = AttentionMask::train(8).unwrap();
        let video = model.denoise(&z, &[t], &cond, TemporalMode::Masked(&mask)).map_err(|e| e.to_string())?;
        let frames = model.denoise_per_frame(&z, &[t], &cond).map_err(|e| e.to_string())?;
        worst = worst.max(video.max_abs_diff(&frames));
    }
    ensure(worst <= ZERO_INIT_TOL, format!("max abs diff {worst:e} > {ZERO_INIT_TOL:e}"))?;
    Ok(format!("{ZERO_INIT_TRIALS} inputs, max abs diff {worst:e}"))
}

// 4 ------------------------------------------------------------------------

fn toy_examples(count: u64, frames: usize, size: usize, codec_cfg: &CodecConfig, cfg: &DenoiserConfig) -> Vec<training::Example<f32>> {
    let samples: Vec<VideoSample<f32>> = (0..count).map(|i| synthetic_sample(0, i, frames, size, size).unwrap()).collect();
    prepare_examples(&samples, codec_cfg, cfg).unwrap()
}

fn freeze_invariant() -> Outcome {
    let cfg = DenoiserConfig { train_frames: 8, ..DenoiserConfig::default() };
    let examples = toy_examples(8, 8, 16, &CodecConfig::space_to_depth(2), &cfg);
    let schedule = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let init = Denoiser::<f32>::new(cfg, 7).map_err(|e| e.to_string())?;
    let train = TrainConfig { steps: FREEZE_STEPS, batch_size: 1, train_frames: 8, learning_rate: 1e-3, ..TrainConfig::default() };

    let mut frozen = Trainer::new(init.clone(), train.clone(), schedule.clone()).map_err(|e| e.to_string())?;
    frozen.run(&examples, None).map_err(|e| e.to_string())?;
    ensure(frozen.model.params.partition_bits_equal(&init.params, Partition::Spatial), "theta changed under temporal-only training")?;
    ensure(!frozen.model.params.partition_bits_equal(&init.params, Partition::Temporal), "phi did not change")?;

    let full = TrainConfig { trainable_scope: TrainableScope::Full, ..train };
    let mut open = Trainer::new(init.clone(), full, schedule).map_err(|e| e.to_string())?;
    open.run(&examples, None).map_err(|e| e.to_string())?;
    ensure(!open.model.params.partition_bits_equal(&init.params, Partition::Spatial), "theta unchanged with full scope")?;
    Ok(format!("{FREEZE_STEPS} steps: theta bitwise frozen; full scope moves theta"))
}

// 5 ------------------------------------------------------------------------

fn gradient_oracle() -> Outcome {
    let cfg = DenoiserConfig::tiny(4, TemporalVariant::TtP3d);
    let mut model = Denoiser::<f64>::new(cfg.clone(), 3).map_err(|e| e.to_string())?;
    model.params.perturb(Partition::Temporal, 0.2, 8);
    let z = random(&[1, 4, 4, 4, 4], 30);
    let target = random(&[1, 4, 4, 4, 4], 31);
    let depth = random(&[4, 1, 4, 4], 32).map(|v| v.tanh());
    let cond = [Conditioning::new(embed_text("a green square moving up", cfg.context_dim, cfg.context_tokens, 3), depth).unwrap()];
    let mask = AttentionMask::train(4).unwrap();
    let loss_of = |m: &Denoiser<f64>| {
        let out = m.denoise(&z, &[250], &cond, TemporalMode::Masked(&mask)).unwrap();
        schedule::loss_video(&target, &out).unwrap()
    };
    let bound = Bound::new(&model.params, Trainable::TEMPORAL);
    let out = model.forward(&bound, &z, &[250], &cond, TemporalMode::Masked(&mask)).map_err(|e| e.to_string())?;
    let grads = bound.gradients(&mut schedule::loss_var(&target, &out).unwrap().backward());

    let strb: Vec<String> = model.params.names(Partition::Temporal).filter(|n| n.contains(".strb.")).cloned().collect();
    let tt: Vec<String> = model.params.names(Partition::Temporal).filter(|n| n.contains(".tt.")).cloned().collect();
    ensure(!strb.is_empty() && !tt.is_empty(), "missing STRB or TT parameters")?;
    let mut pick = rng::stream(41, &[]);
    let mut worst = 0.0f64;
    for k in 0..GRAD_PARAMS {
        let pool = if k % 2 == 0 { &strb } else { &tt };
        let name = &pool[pick.random_range(0..pool.len())];
        let len = model.params.get(name).unwrap().tensor.len();
        let e = pick.random_range(0..len);
        let mut plus = model.clone();
        plus.params.get_mut(name).unwrap().tensor.data_mut()[e] += GRAD_STEP;
        let mut minus = model.clone();
        minus.params.get_mut(name).unwrap().tensor.data_mut()[e] -= GRAD_STEP;
        let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * GRAD_STEP);
        let analytic = grads[name].data()[e];
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_DENOM_FLOOR);
        ensure(err <= GRAD_REL_TOL, format!("{name}[{e}]: analytic {analytic:e} numeric {numeric:e} rel {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("{GRAD_PARAMS} phi entries (STRB and TT), worst relative error {worst:e}"))
}

// 6 ------------------------------------------------------------------------

fn diffusion_algebra() -> Outcome {
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let z0v = 0.7;
    let z0 = Tensor::full(&[Q_SAMPLE_DRAWS], z0v);
    let n = Q_SAMPLE_DRAWS as f64;
    for (k, t) in [1usize, 250, 500, 1000].into_iter().enumerate() {
        let eps = random(&[Q_SAMPLE_DRAWS], 60 + k as u64);
        let x = s.q_sample(&z0, t, &eps).map_err(|e| e.to_string())?;
        let ab = s.alpha_bar(t).unwrap();
        let mean = x.data().iter().sum::<f64>() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (m_want, v_want) = (ab.sqrt() * z0v, 1.0 - ab);
        ensure((mean - m_want).abs() <= STANDARD_ERRORS * (v_want / n).sqrt(), format!("t={t}: mean {mean} vs {m_want}"))?;
        ensure((var - v_want).abs() <= STANDARD_ERRORS * v_want * (2.0 / (n - 1.0)).sqrt(), format!("t={t}: var {var} vs {v_want}"))?;
    }

    let z0 = random(&[64], 70);
    let eps = random(&[64], 71);
    let mut r = rng::stream(0, &[]);
    let mut worst = 0.0f64;
    for t in 1..=s.timesteps() {
        let zt = s.q_sample(&z0, t, &eps).unwrap();
        let back = sampler::ddim_step(&zt, &eps, t, 0, &s, 0.0, &mut r).unwrap();
        worst = worst.max(back.max_abs_diff(&z0));
        if t > 1 {
            let prev = sampler::ddim_step(&zt, &eps, t, t - 1, &s, 0.0, &mut r).unwrap();
            worst = worst.max(prev.max_abs_diff(&s.q_sample(&z0, t - 1, &eps).unwrap()));
        }
    }
    ensure(worst <= DDIM_ORACLE_TOL, format!("true-eps oracle error {worst:e}"))?;

    let zt = random(&[64], 72);
    let c = random(&[64], 73);
    let chain = |steps: usize| {
        let mut r = rng::stream(0, &[]);
        sampler::ddim_loop(zt.clone(), &s, steps, 0.0, &mut r, |_, _| Ok(c.clone())).unwrap()
    };
    let direct = chain(1);
    let mut sub = 0.0f64;
    for steps in [2, 5, 10, 50, 1000] {
        sub = sub.max(chain(steps).max_abs_diff(&direct));
    }
    ensure(sub <= SUBDIVISION_TOL, format!("subdivision drift {sub:e}"))?;
    Ok(format!("q_sample within {STANDARD_ERRORS} SE; oracle error {worst:e}; subdivision {sub:e}"))
}

// 7 ------------------------------------------------------------------------

fn guidance() -> Outcome {
    let c = random(&[257], 80);
    let u = random(&[257], 81);
    ensure(sampler::guide(&c, &u, 0.0).unwrap() == u, "w=0 is not the unconditional prediction")?;
    ensure(sampler::guide(&c, &u, 1.0).unwrap() == c, "w=1 is not the conditional prediction")?;
    let ws = [0.5, 2.0, 7.5];
    let g: Vec<Tensor<f64>> = ws.iter().map(|&w| sampler::guide(&c, &u, w).unwrap()).collect();
    let lambda = (ws[2] - ws[0]) / (ws[1] - ws[0]);
    let predicted = g[0].zip_map(&g[1], |a, b| a + lambda * (b - a)).unwrap();
    let err = predicted.max_abs_diff(&g[2]);
    ensure(err <= GUIDE_AFFINE_TOL, format!("affinity error {err:e}"))?;
    Ok(format!("w=0/1 exact; affine across w={ws:?} to {err:e}"))
}

// 8 ------------------------------------------------------------------------

fn metric_analytics() -> Outcome {
    use nalgebra::{DMatrix, DVector};
    let k = 6;
    let mut r = rng::stream(90, &[]);
    let a = DMatrix::from_fn(k, k, |_, _| r.random_range(-1.0..1.0));
    let cov = &a * a.transpose() + DMatrix::identity(k, k);
    let mu_a = DVector::from_fn(k, |_, _| r.random_range(-2.0..2.0));
    let mu_b = DVector::from_fn(k, |_, _| r.random_range(-2.0..2.0));
    let fd = metrics::frechet_distance(
        &GaussianStats { mean: mu_a.clone(), cov: cov.clone() },
        &GaussianStats { mean: mu_b.clone(), cov },
    )
    .map_err(|e| e.to_string())?;
    let want = (&mu_a - &mu_b).norm_squared();
    ensure((fd - want).abs() <= FRECHET_TOL, format!("equal covariance: {fd} vs {want}"))?;

    let diag = |d: &[f64]| GaussianStats { mean: DVector::zeros(2), cov: DMatrix::from_diagonal(&DVector::from_row_slice(d)) };
    let five = metrics::frechet_distance(&diag(&[1.0, 1.0]), &diag(&[4.0, 9.0])).unwrap();
    ensure(five == 5.0, format!("diagonal example gave {five}"))?;

    let dim = 8;
    let draw = |r: &mut rng::Rng, n: usize| {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, r)).collect()).collect();
        FeatureSet::new(&rows, "gaussian").unwrap()
    };
    let mut r = rng::stream(91, &[]);
    let kd: Vec<f64> = (0..KD_TRIALS).map(|_| metrics::kernel_distance(&draw(&mut r, 40), &draw(&mut r, 40)).unwrap()).collect();
    let m = kd.iter().sum::<f64>() / KD_TRIALS as f64;
    let sd = (kd.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (KD_TRIALS as f64 - 1.0)).sqrt();
    let se = sd / (KD_TRIALS as f64).sqrt();
    ensure(m.abs() <= STANDARD_ERRORS * se, format!("kernel distance mean {m:e} exceeds {STANDARD_ERRORS} x SE {se:e}"))?;
    Ok(format!("equal-cov |fd - |dmu|^2| = {:e}; diagonal = {five}; KD mean {m:.2e} (SE {se:.2e})", (fd - want).abs()))
}

// 9 and 10 -----------------------------------------------------------------

struct Toy {
    image: Denoiser<f32>,
    video: Denoiser<f32>,
    schedule: NoiseSchedule,
    codec: CodecConfig,
    samples: Vec<VideoSample<f32>>,
    stage_b_losses: Vec<f64>,
}

fn train_toy() -> Toy {
    let codec_cfg = CodecConfig::space_to_depth(2);
    let cfg = DenoiserConfig::default();
    let samples: Vec<VideoSample<f32>> = (0..TOY_VIDEOS).map(|i| synthetic_sample(0, i, TOY_FRAMES, TOY_SIZE, TOY_SIZE).unwrap()).collect();
    let examples = prepare_examples(&samples, &codec_cfg, &cfg).unwrap();
    let schedule = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let a_cfg = TrainConfig {
        stage: Stage::Image,
        steps: STAGE_A_STEPS,
        learning_rate: STAGE_A_LR,
        batch_size: STAGE_A_BATCH,
        ..TrainConfig::default()
    };
    let image_cfg = DenoiserConfig { temporal_variant: TemporalVariant::None, ..cfg.clone() };
    let mut a = Trainer::new(Denoiser::new(image_cfg, 0).unwrap(), a_cfg, schedule.clone()).unwrap();
    a.run(&examples, None).unwrap();
    let b_cfg = TrainConfig {
        stage: Stage::Video,
        steps: STAGE_B_STEPS,
        learning_rate: STAGE_B_LR,
        batch_size: STAGE_B_BATCH,
        train_frames: TOY_FRAMES,
        ..TrainConfig::default()
    };
    let mut b = Trainer::video_from_image(&a.model, cfg, b_cfg, schedule.clone(), 0).unwrap();
    b.run(&examples, None).unwrap();
    Toy { image: a.model, video: b.model, schedule, codec: codec_cfg, samples, stage_b_losses: b.losses }
}

fn cond_for(model: &Denoiser<f32>, caption: &str, depth: &Tensor<f32>, codec_cfg: &CodecConfig) -> Conditioning<f32> {
    let c = &model.config;
    Conditioning::new(embed_text(caption, c.context_dim, c.context_tokens, TEXT_SEED), prepare_depth(depth, codec_cfg.factor()).unwrap()).unwrap()
}

fn generate(toy: &Toy, model: &Denoiser<f32>, cond: &Conditioning<f32>, cfg: &SamplerConfig, temporal: bool) -> Tensor<f32> {
    let z = sampler::sample_latent(model, cond, &toy.schedule, cfg, temporal).unwrap();
    codec::decode(&LatentVideo::new(z).unwrap(), &toy.codec).unwrap()
}

fn toy_end_to_end(toy: &Toy) -> Outcome {
    let (first, last) = training::initial_final(&toy.stage_b_losses, training::SMOOTHING_WINDOW);
    let ratio = last / first;
    let embedder = PixelEmbedder::new(0, 32, TOY_SIZE, TOY_SIZE);
    let (mut tc_video, mut tc_image) = (0.0, 0.0);
    for i in 0..TOY_SAMPLES {
        let s = &toy.samples[i];
        let cond = cond_for(&toy.video, &s.caption, &s.depth, &toy.codec);
        let cfg = SamplerConfig { num_steps: TOY_DDIM_STEPS, frames: TOY_FRAMES, seed: i as u64, ..SamplerConfig::default() };
        let v = generate(toy, &toy.video, &cond, &cfg, true);
        let f = generate(toy, &toy.image, &cond, &cfg, false);
        tc_video += metrics::temporal_consistency(&v, &embedder).unwrap();
        tc_image += metrics::temporal_consistency(&f, &embedder).unwrap();
    }
    tc_video /= TOY_SAMPLES as f64;
    tc_image /= TOY_SAMPLES as f64;
    let detail = format!(
        "stage-B smoothed loss {first:.4} -> {last:.4} (ratio {ratio:.3}, need < {LOSS_RATIO}); temporal consistency video {tc_video:.4} vs per-frame {tc_image:.4}"
    );
    ensure(ratio < LOSS_RATIO && tc_video > tc_image, detail.clone())?;
    Ok(detail)
}

/// Spread over frames of the per-frame pixel mean plus that of the per-frame
/// pixel standard deviation.
fn drift(video: &Tensor<f32>) -> f64 {
    let l = video.dim(0);
    let (mut means, mut stds) = (Vec::with_capacity(l), Vec::with_capacity(l));
    for k in 0..l {
        let f: Vec<f64> = video.slab(k).iter().map(|&v| v as f64).collect();
        let m = f.iter().sum::<f64>() / f.len() as f64;
        means.push(m);
        stds.push((f.iter().map(|v| (v - m).powi(2)).sum::<f64>() / f.len() as f64).sqrt());
    }
    let spread = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    };
    spread(&means) + spread(&stds)
}

fn longer_synthesis(toy: &Toy) -> Outcome {
    let (mut short, mut long, mut uncapped) = (0.0, 0.0, 0.0);
    for i in 0..LONG_SAMPLES {
        let scene = draw_scene(1, i as u64, LONG_FRAMES, TOY_SIZE, TOY_SIZE);
        let src: VideoSample<f32> = scene.render(LONG_FRAMES, TOY_SIZE, TOY_SIZE);
        let plane = TOY_SIZE * TOY_SIZE;
        let depth16 = Tensor::new(vec![TOY_FRAMES, 1, TOY_SIZE, TOY_SIZE], src.depth.data()[..TOY_FRAMES * plane].to_vec()).unwrap();
        let base = SamplerConfig { num_steps: TOY_DDIM_STEPS, seed: 1000 + i as u64, ..SamplerConfig::default() };
        let c16 = cond_for(&toy.video, &src.caption, &depth16, &toy.codec);
        let c64 = cond_for(&toy.video, &src.caption, &src.depth, &toy.codec);
        short += drift(&generate(toy, &toy.video, &c16, &SamplerConfig { frames: TOY_FRAMES, ..base.clone() }, true));
        let v64 = generate(toy, &toy.video, &c64, &SamplerConfig { frames: LONG_FRAMES, window: Some(LONG_WINDOW), ..base.clone() }, true);
        ensure(v64.shape() == [LONG_FRAMES, 3, TOY_SIZE, TOY_SIZE], format!("long sample shape {:?}", v64.shape()))?;
        long += drift(&v64);
        let free = SamplerConfig { frames: LONG_FRAMES, window: Some(LONG_WINDOW), use_cam: false, ..base };
        uncapped += drift(&generate(toy, &toy.video, &c64, &free, true));
    }
    let n = LONG_SAMPLES as f64;
    let (short, long, uncapped) = (short / n, long / n, uncapped / n);
    let detail = format!(
        "drift L=16 {short:.4}, L=64 banded {long:.4} (ratio {:.3}, need <= {DRIFT_RATIO}); without mask {uncapped:.4} (reported)",
        long / short
    );
    ensure(long <= DRIFT_RATIO * short, detail.clone())?;
    Ok(detail)
}

// 11 -----------------------------------------------------------------------

fn ablation_plumbing() -> Outcome {
    let base = DenoiserConfig::tiny(12, TemporalVariant::TtP3d);
    let examples = toy_examples(4, 6, 16, &CodecConfig::space_to_depth(2), &base);
    let schedule = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
    let mut counts = BTreeMap::new();
    for (name, variant, scope, use_cam) in pipeline::ABLATIONS {
        let cfg = DenoiserConfig { temporal_variant: variant, ..base.clone() };
        let train = TrainConfig { steps: 1, batch_size: 1, train_frames: 4, trainable_scope: scope, use_cam, ..TrainConfig::default() };
        let mut t = Trainer::new(Denoiser::<f32>::new(cfg, 0).map_err(|e| e.to_string())?, train, schedule.clone()).map_err(|e| e.to_string())?;
        t.run(&examples, None).map_err(|e| e.to_string())?;
        ensure(t.losses.len() == 1 && t.losses[0].is_finite(), format!("{name}: no finite loss"))?;
        counts.insert(name, t.model.params.count_trainable(t.config.trainable()));
    }
    ensure(counts["II"] < counts["IV"] && counts["IV"] < counts["V"], format!("ordering violated: {counts:?}"))?;
    Ok(format!("trainable counts {counts:?}"))
}

// 12 -----------------------------------------------------------------------

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn run_commands(root: &Path) -> Result<(), String> {
    std::env::set_current_dir(root).map_err(|e| e.to_string())?;
    let root = Path::new(".");
    let data = root.join("data");
    let cfg = RunConfig::from_toml_str(
        "",
        &[
            "data.dir=\"data\"".into(),
            "data.count=4".into(),
            "data.frames=6".into(),
            "data.height=16".into(),
            "data.width=16".into(),
            "schedule.timesteps=50".into(),
            "model.base_width=8".into(),
            "model.context_dim=6".into(),
            "model.context_tokens=3".into(),
            "model.head_dim=4".into(),
            "model.norm_groups=2".into(),
            "model.train_frames=4".into(),
            "train.steps=2".into(),
            "train.batch_size=2".into(),
            "train.train_frames=4".into(),
            "sampler.num_steps=3".into(),
            "sampler.frames=6".into(),
            "metrics.dim=8".into(),
            "metrics.embed_dim=8".into(),
            "metrics.samples=4".into(),
        ],
    )
    .map_err(|e| e.to_string())?;
    let e = |e: vidgen::Error| e.to_string();
    pipeline::gen_data(&cfg, &data).map_err(e)?;
    pipeline::train(&cfg, &root.join("a"), Stage::Image, None, false).map_err(e)?;
    pipeline::train(&cfg, &root.join("b"), Stage::Video, Some(&root.join("a")), false).map_err(e)?;
    pipeline::sample(&cfg, &root.join("s"), &root.join("b"), 0, None, true).map_err(e)?;
    pipeline::eval(&cfg, &root.join("e"), &root.join("b")).map_err(e)?;
    pipeline::ablate(&cfg, &root.join("ab"), Some(&root.join("a")), 1).map_err(e)?;
    Ok(())
}

fn reproducibility() -> Outcome {
    let x = tempfile::tempdir().unwrap();
    let y = tempfile::tempdir().unwrap();
    let cwd = std::env::current_dir().unwrap();
    let runs = run_commands(x.path()).and_then(|_| run_commands(y.path()));
    std::env::set_current_dir(cwd).unwrap();
    runs?;
    let mut files = 0;
    for dir in ["data", "a", "b", "s", "e", "ab"] {
        let (p, q) = (tree(&x.path().join(dir)), tree(&y.path().join(dir)));
        ensure(!p.is_empty(), format!("{dir} is empty"))?;
        ensure(p == q, format!("{dir} differs between runs"))?;
        files += p.len();
    }
    Ok(format!("gen-data, train x2, sample, eval, ablate: {files} artifacts byte-identical"))
}

// --------------------------------------------------------------------------

fn run(selected: &[usize], id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    if !selected.is_empty() && !selected.contains(&id) {
        return true;
    }
    let start = Instant::now();
    let outcome = match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {id:>2} [{tag}] {name}: {detail} ({secs:.1}s)").unwrap();
    out.flush().unwrap();
    ok
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut ok = true;
    ok &= run(&selected, 1, "mask correctness", mask_correctness);
    ok &= run(&selected, 2, "temporal-attention causality", temporal_causality);
    ok &= run(&selected, 3, "zero-init equivalence", zero_init_equivalence);
    ok &= run(&selected, 4, "freeze invariant", freeze_invariant);
    ok &= run(&selected, 5, "gradient oracle", gradient_oracle);
    ok &= run(&selected, 6, "diffusion algebra", diffusion_algebra);
    ok &= run(&selected, 7, "guidance", guidance);
    ok &= run(&selected, 8, "metric analytics", metric_analytics);
    let wants_toy = selected.is_empty() || selected.contains(&9) || selected.contains(&10);
    let toy = if wants_toy { panic::catch_unwind(train_toy).ok() } else { None };
    let missing = || Err::<String, String>("toy training failed".into());
    ok &= run(&selected, 9, "toy end-to-end", || toy.as_ref().map_or_else(missing, toy_end_to_end));
    ok &= run(&selected, 10, "longer synthesis", || toy.as_ref().map_or_else(missing, longer_synthesis));
    ok &= run(&selected, 11, "ablation plumbing", ablation_plumbing);
    ok &= run(&selected, 12, "reproducibility", reproducibility);
    if !ok {
        std::process::exit(1);
    }
}
