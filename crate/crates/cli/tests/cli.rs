use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
[data]
dir = "data"
count = 4
frames = 6
height = 16
width = 16
[codec]
kind = "space_to_depth"
factor = 2
[schedule]
timesteps = 50
[model]
latent_channels = 12
base_width = 8
context_dim = 6
context_tokens = 3
num_heads = 2
head_dim = 4
norm_groups = 2
train_frames = 4
[train]
steps = 2
batch_size = 2
train_frames = 4
[sampler]
num_steps = 3
frames = 6
[metrics]
dim = 8
embed_dim = 8
samples = 4
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidgen")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn pipeline(dir: &Path, tag: &str) {
    let c = ["--config", "tiny.toml"];
    let o = |name: &str| format!("{name}_{tag}");
    ok(dir, &[&["gen-data", "--out", "data"][..], &c].concat());
    ok(dir, &[&["train", "--stage", "image", "--out", &o("a")][..], &c].concat());
    ok(dir, &[&["train", "--stage", "video", "--init", &o("a"), "--out", &o("b")][..], &c].concat());
    ok(dir, &[&["sample", "--checkpoint", &o("b"), "--out", &o("s"), "--ppm"][..], &c].concat());
    ok(dir, &[&["eval", "--checkpoint", &o("b"), "--out", &o("e")][..], &c].concat());
    ok(dir, &[&["ablate", "--init", &o("a"), "--out", &o("ab")][..], &c].concat());
}

#[test]
fn pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    pipeline(dir, "x");
    let data = files(&dir.join("data"));
    pipeline(dir, "y");
    assert_eq!(files(&dir.join("data")), data);
    for name in ["a", "b", "s", "e", "ab"] {
        let (x, y) = (files(&dir.join(format!("{name}_x"))), files(&dir.join(format!("{name}_y"))));
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("e_x/report.json")).unwrap()).unwrap();
    for key in ["fd", "kd", "temporal", "prompt", "n_samples", "extractor_id", "seed"] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert_eq!(fs::read_dir(dir.join("s_x/frames")).unwrap().count(), 6);
    let resolved = fs::read_to_string(dir.join("b_x/config.toml")).unwrap();
    assert!(resolved.contains("stage = \"video\""));
}

#[test]
fn long_sampling_and_ablation_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = TINY.replace("train_frames = 4\n[train]", "train_frames = 16\n[train]").replace("frames = 6\nheight", "frames = 16\nheight");
    fs::write(dir.join("tiny.toml"), cfg).unwrap();
    let c = ["--config", "tiny.toml"];
    ok(dir, &[&["gen-data", "--out", "data"][..], &c].concat());
    ok(dir, &[&["train", "--stage", "image", "--out", "a", "--override", "train.steps=1"][..], &c].concat());
    ok(
        dir,
        &[&["sample", "--checkpoint", "a", "--out", "long", "--override", "sampler.frames=64", "--override", "sampler.window=16", "--override", "sampler.num_steps=1"][..], &c]
            .concat(),
    );
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("long/sample.json")).unwrap()).unwrap();
    assert_eq!(meta["frames"], 64);
    assert_eq!(meta["window"], 16);
    let bytes = fs::read(dir.join("long/sample.vtf")).unwrap();
    let video: vidgen::Tensor32 = vidgen::vtf::decode(&bytes).unwrap();
    assert_eq!(video.shape(), &[64, 3, 16, 16]);

    ok(dir, &[&["ablate", "--out", "ab"][..], &c].concat());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("ab/ablation.json")).unwrap()).unwrap();
    let count = |name: &str| {
        report["variants"].as_array().unwrap().iter().find(|v| v["name"] == name).unwrap()["trainable_params"].as_u64().unwrap()
    };
    assert!(count("II") < count("IV") && count("IV") < count("V"));
    assert_eq!(count("I"), 0);
    assert!(count("III") > count("V"));
}

#[test]
fn zero_learning_rate_keeps_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let c = ["--config", "tiny.toml"];
    ok(dir, &[&["gen-data", "--out", "data"][..], &c].concat());
    ok(dir, &[&["train", "--stage", "image", "--out", "init", "--override", "train.steps=0"][..], &c].concat());
    ok(dir, &[&["train", "--stage", "image", "--out", "zero", "--override", "train.learning_rate=0"][..], &c].concat());
    let (a, b) = (files(&dir.join("init/params")), files(&dir.join("zero/params")));
    assert_eq!(a, b);
}

#[test]
fn errors_are_categorized_json() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let cases: [(&[&str], &str); 4] = [
        (&["train", "--stage", "video", "--config", "tiny.toml", "--out", "x"], "config"),
        (&["gen-data", "--config", "tiny.toml", "--override", "train.batch_size=0", "--override", "sampler.eta=3"], "config"),
        (&["sample", "--checkpoint", "missing", "--config", "tiny.toml", "--out", "x"], "io"),
        (&["frobnicate"], "usage"),
    ];
    for (args, category) in cases {
        let out = run(dir, args);
        assert!(!out.status.success(), "{args:?}");
        let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["error"]["category"], category, "{args:?}");
    }
    let out = run(dir, &["gen-data", "--config", "tiny.toml", "--override", "train.batch_size=0", "--override", "sampler.eta=3"]);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("train.batch_size") && msg.contains("sampler.eta"));
}
