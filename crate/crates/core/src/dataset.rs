//! Video samples, line-delimited manifests, and the synthetic moving-shape
//! dataset generator.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vtf;

pub const BACKGROUND_DEPTH: f32 = 1.0;
pub const FOREGROUND_DEPTH: f32 = 0.3;

/// Pixel video `(L, 3, H, W)` in `[0, 1]` with per-frame depth `(L, 1, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample<T> {
    pub frames: Tensor<T>,
    pub depth: Tensor<T>,
    pub caption: String,
}

impl<T: Scalar> VideoSample<T> {
    pub fn new(frames: Tensor<T>, depth: Tensor<T>, caption: String) -> Result<Self> {
        let fs = frames.shape();
        let ds = depth.shape();
        if fs.len() != 4 || fs[1] != 3 {
            return Err(Error::Shape(format!("frames must be (L, 3, H, W), got {fs:?}")));
        }
        if ds != [fs[0], 1, fs[2], fs[3]] {
            return Err(Error::Shape(format!("depth {ds:?} does not match frames {fs:?}")));
        }
        if depth.data().iter().any(|&d| !(d > T::zero())) {
            return Err(Error::InvalidArgument("depth values must be strictly positive".into()));
        }
        Ok(Self { frames, depth, caption })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.dim(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub frames_path: String,
    pub depth_path: String,
    pub caption: String,
}

/// Ordered list of records. Paths are resolved relative to `base_dir`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1))))
            .collect::<Result<_>>()?;
        Ok(Self { base_dir: base_dir.into(), records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        vtf::write_atomic(path.as_ref(), self.to_jsonl().as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load<T: Scalar>(&self, index: usize) -> Result<VideoSample<T>> {
        let r = self
            .records
            .get(index)
            .ok_or_else(|| Error::Manifest(format!("record {index} out of range ({})", self.records.len())))?;
        let frames = vtf::read_tensor(self.base_dir.join(&r.frames_path))?;
        let depth = vtf::read_tensor(self.base_dir.join(&r.depth_path))?;
        VideoSample::new(frames, depth, r.caption.clone())
            .map_err(|e| Error::Manifest(format!("record {index} ({}): {e}", r.frames_path)))
    }

    pub fn load_all<T: Scalar>(&self) -> Result<Vec<VideoSample<T>>> {
        (0..self.records.len()).map(|i| self.load(i)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Disk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 2] = [ShapeKind::Square, ShapeKind::Disk];
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Disk => "disk",
        }
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];
    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }
    pub fn from_name(name: &str) -> Option<Color> {
        Color::ALL.into_iter().find(|c| c.name() == name)
    }
    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
        }
    }
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Up, Direction::Down];
    pub fn name(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
    /// Unit step as (rows, cols).
    pub fn step(self) -> (i64, i64) {
        match self {
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
        }
    }
}

/// Everything that determines one synthetic clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeScene {
    pub kind: ShapeKind,
    pub color: Color,
    pub direction: Direction,
    pub speed: usize,
    /// Top-left corner of the shape's bounding box at frame 0, (row, col).
    pub start: (usize, usize),
    pub size: usize,
    pub texture_seed: u64,
}

impl ShapeScene {
    pub fn caption(&self) -> String {
        format!("a {} {} moving {}", self.color.name(), self.kind.name(), self.direction.name())
    }

    /// Bounding-box corner at frame `k`.
    pub fn corner_at(&self, k: usize) -> (usize, usize) {
        let (dr, dc) = self.direction.step();
        let off = (k * self.speed) as i64;
        ((self.start.0 as i64 + dr * off) as usize, (self.start.1 as i64 + dc * off) as usize)
    }

    fn covers(&self, k: usize, row: usize, col: usize) -> bool {
        let (r0, c0) = self.corner_at(k);
        if row < r0 || col < c0 || row >= r0 + self.size || col >= c0 + self.size {
            return false;
        }
        match self.kind {
            ShapeKind::Square => true,
            ShapeKind::Disk => {
                let c = (self.size as f64 - 1.0) / 2.0;
                let (dy, dx) = ((row - r0) as f64 - c, (col - c0) as f64 - c);
                dy * dy + dx * dx <= (self.size as f64 / 2.0).powi(2)
            }
        }
    }

    /// Foreground mask `(L, H, W)`.
    pub fn mask(&self, frames: usize, height: usize, width: usize) -> Vec<bool> {
        let mut m = Vec::with_capacity(frames * height * width);
        for k in 0..frames {
            for r in 0..height {
                for c in 0..width {
                    m.push(self.covers(k, r, c));
                }
            }
        }
        m
    }

    pub fn render<T: Scalar>(&self, frames: usize, height: usize, width: usize) -> VideoSample<T> {
        let mut tex = rng::stream(self.texture_seed, &[]);
        let plane = height * width;
        let texture: Vec<f32> = (0..3 * plane).map(|_| tex.random_range(0.15f32..0.85)).collect();
        let mask = self.mask(frames, height, width);
        let rgb = self.color.rgb();
        let mut pix = Vec::with_capacity(frames * 3 * plane);
        let mut depth = Vec::with_capacity(frames * plane);
        for k in 0..frames {
            let fm = &mask[k * plane..(k + 1) * plane];
            for (ch, &value) in rgb.iter().enumerate() {
                for (i, &fg) in fm.iter().enumerate() {
                    let v = if fg { value } else { texture[ch * plane + i] };
                    pix.push(T::from_f32(v).unwrap());
                }
            }
            depth.extend(fm.iter().map(|&fg| T::from_f32(if fg { FOREGROUND_DEPTH } else { BACKGROUND_DEPTH }).unwrap()));
        }
        VideoSample {
            frames: Tensor::from_parts(vec![frames, 3, height, width], pix),
            depth: Tensor::from_parts(vec![frames, 1, height, width], depth),
            caption: self.caption(),
        }
    }
}

/// Draw a scene whose trajectory stays inside the frame for all `frames`.
///
/// The speed is reduced until the shape fits; a clip too long for even unit
/// speed falls back to a stationary shape.
pub fn draw_scene(seed: u64, index: u64, frames: usize, height: usize, width: usize) -> ShapeScene {
    let mut r = rng::stream(seed, &[0x5CE4E, index]);
    let kind = ShapeKind::ALL[r.random_range(0..ShapeKind::ALL.len())];
    let color = Color::ALL[r.random_range(0..Color::ALL.len())];
    let direction = Direction::ALL[r.random_range(0..Direction::ALL.len())];
    let size = (height.min(width) / 4).max(4);
    let mut speed = r.random_range(1..=2usize);
    let extent = match direction {
        Direction::Left | Direction::Right => width - size,
        Direction::Up | Direction::Down => height - size,
    };
    while speed > 0 && speed * (frames - 1) > extent {
        speed -= 1;
    }
    let travel = speed * (frames - 1);
    // position along the motion axis leaves room for the whole trajectory
    let along = r.random_range(0..=extent - travel);
    let across_extent = match direction {
        Direction::Left | Direction::Right => height - size,
        Direction::Up | Direction::Down => width - size,
    };
    let across = r.random_range(0..=across_extent);
    let start = match direction {
        Direction::Right => (across, along),
        Direction::Left => (across, along + travel),
        Direction::Down => (along, across),
        Direction::Up => (along + travel, across),
    };
    let texture_seed = rng::derive_seed(seed, &[0x7E47, index]);
    ShapeScene { kind, color, direction, speed, start, size, texture_seed }
}

pub fn synthetic_sample<T: Scalar>(seed: u64, index: u64, frames: usize, height: usize, width: usize) -> Result<VideoSample<T>> {
    validate_dims(frames, height, width)?;
    Ok(draw_scene(seed, index, frames, height, width).render(frames, height, width))
}

fn validate_dims(frames: usize, height: usize, width: usize) -> Result<()> {
    let mut bad = Vec::new();
    if frames < 2 {
        bad.push(format!("frames must be >= 2, got {frames}"));
    }
    if height < 16 {
        bad.push(format!("height must be >= 16, got {height}"));
    }
    if width < 16 {
        bad.push(format!("width must be >= 16, got {width}"));
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(bad.join("; ")))
    }
}

/// Generate `count` clips under `out_dir` and write `out_dir/manifest.jsonl`.
pub fn generate_synthetic_dataset(
    out_dir: impl AsRef<Path>,
    seed: u64,
    count: usize,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<Manifest> {
    validate_dims(frames, height, width)?;
    let out_dir = out_dir.as_ref();
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let sample: VideoSample<f32> = synthetic_sample(seed, i as u64, frames, height, width)?;
        let frames_path = format!("videos/{i:05}_frames.vtf");
        let depth_path = format!("videos/{i:05}_depth.vtf");
        vtf::write_tensor(out_dir.join(&frames_path), &sample.frames)?;
        vtf::write_tensor(out_dir.join(&depth_path), &sample.depth)?;
        records.push(ManifestRecord { frames_path, depth_path, caption: sample.caption });
    }
    let manifest = Manifest { base_dir: out_dir.to_path_buf(), records };
    manifest.write(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
