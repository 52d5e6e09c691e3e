//! Labelled image sets.
//!
//! Two sources are supported: a procedurally drawn ten-class shapes task
//! ([`synth_shapes`]) and a directory tree with one subdirectory per class
//! ([`load_image_dir`]). Both produce a [`Dataset`] holding normalized NCHW
//! images and labels.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use condenser_core::backbone::InputRes;
use condenser_core::{Rng, Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const SHAPE_CLASSES: [&str; 10] = [
    "circle", "square", "triangle", "cross", "ring", "bar_h", "bar_v", "diagonal", "dot_grid", "l_corner",
];

/// Per-channel `(v − mean) / std` applied to intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// Maps `[0, 1]` onto `[-1, 1]` on every channel.
    pub fn centered(channels: usize) -> Self {
        Normalization {
            mean: vec![0.5; channels],
            std: vec![0.5; channels],
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(HarnessError::Dataset(format!(
                "normalization has {}/{} entries for {channels} channels",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(HarnessError::Dataset("normalization std must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    SyntheticShapes { n_per_class: usize, seed: u64 },
    ImageDir { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub resolution: InputRes,
    pub num_classes: usize,
    pub normalization: Normalization,
}

impl DatasetSpec {
    pub fn synthetic(n_per_class: usize, seed: u64, resolution: InputRes) -> Self {
        DatasetSpec {
            source: DataSource::SyntheticShapes { n_per_class, seed },
            resolution,
            num_classes: SHAPE_CLASSES.len(),
            normalization: Normalization::centered(resolution.c),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        self.normalization.check(self.resolution.c)?;
        let ds = match &self.source {
            DataSource::SyntheticShapes { n_per_class, seed } => {
                if self.num_classes != SHAPE_CLASSES.len() {
                    return Err(HarnessError::Dataset(format!(
                        "synthetic shapes have {} classes, not {}",
                        SHAPE_CLASSES.len(),
                        self.num_classes
                    )));
                }
                synth_raw(*n_per_class, *seed, self.resolution)?
            }
            DataSource::ImageDir { path } => {
                let ds = load_raw_dir(path, self.resolution)?;
                if ds.num_classes != self.num_classes {
                    return Err(HarnessError::Dataset(format!(
                        "{} holds {} classes, expected {}",
                        path.display(),
                        ds.num_classes,
                        self.num_classes
                    )));
                }
                ds
            }
        };
        Ok(ds.normalized(&self.normalization))
    }
}

/// Images `(n, c, h, w)` with one label per sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let num_classes = class_names.len();
        if images.shape().n != labels.len() {
            return Err(HarnessError::Dataset(format!(
                "{} images but {} labels",
                images.shape().n,
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l >= num_classes) {
            return Err(HarnessError::Dataset(format!("label {l} out of range for {num_classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn resolution(&self) -> InputRes {
        let s = self.images.shape();
        InputRes { c: s.c, h: s.h, w: s.w }
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let x = self.images.gather_batch(indices)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Samples `start..start + len`.
    pub fn range(&self, start: usize, len: usize) -> Result<(Tensor<f32>, &[usize])> {
        Ok((self.images.slice_batch(start, len)?, &self.labels[start..start + len]))
    }

    /// The first `n` samples of every class.
    pub fn take_per_class(&self, n: usize) -> Result<Dataset> {
        let mut seen = vec![0usize; self.num_classes];
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut seen[self.labels[i]];
                *c += 1;
                *c <= n
            })
            .collect();
        let (images, labels) = self.batch(&idx)?;
        Dataset::new(images, labels, self.class_names.clone())
    }

    fn normalized(mut self, norm: &Normalization) -> Self {
        let s = self.images.shape();
        let plane = s.plane();
        for (i, v) in self.images.data_mut().iter_mut().enumerate() {
            let c = (i / plane) % s.c;
            *v = (*v - norm.mean[c]) / norm.std[c];
        }
        self
    }
}

/// Ten-class shapes task, normalized with [`Normalization::centered`].
///
/// Classes are ordered as [`SHAPE_CLASSES`]; samples are interleaved
/// (`label = i % 10`). Every sample jitters position, scale, rotation
/// (±15°), foreground and background intensity, and adds Gaussian pixel
/// noise. Intensities are grayscale and replicated over all channels.
pub fn synth_shapes(n_per_class: usize, seed: u64, res: InputRes) -> Result<Dataset> {
    Ok(synth_raw(n_per_class, seed, res)?.normalized(&Normalization::centered(res.c)))
}

fn synth_raw(n_per_class: usize, seed: u64, res: InputRes) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(HarnessError::Dataset("n_per_class must be at least 1".into()));
    }
    let k = SHAPE_CLASSES.len();
    let n = n_per_class * k;
    let shape = Shape::new(n, res.c, res.h, res.w)?;
    let mut data = Vec::with_capacity(shape.numel());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % k;
        let mut rng = Rng::new(seed).fork(i as u64);
        let plane = draw_shape(label, res.h, res.w, &mut rng);
        for _ in 0..res.c {
            data.extend_from_slice(&plane);
        }
        labels.push(label);
    }
    let images = Tensor::from_vec(shape, data)?;
    Dataset::new(images, labels, SHAPE_CLASSES.iter().map(|s| s.to_string()).collect())
}

/// Membership test in the shape's unit frame (roughly `[-1, 1]²`).
fn inside(label: usize, u: f64, v: f64) -> bool {
    let r = (u * u + v * v).sqrt();
    match label {
        0 => r <= 0.8,
        1 => u.abs().max(v.abs()) <= 0.7,
        2 => v <= 0.55 && v >= -0.7 + u.abs() * (1.25 / 0.75),
        3 => (u.abs() <= 0.2 && v.abs() <= 0.85) || (v.abs() <= 0.2 && u.abs() <= 0.85),
        4 => (0.5..=0.85).contains(&r),
        5 => v.abs() <= 0.2 && u.abs() <= 0.9,
        6 => u.abs() <= 0.2 && v.abs() <= 0.9,
        7 => (u - v).abs() <= 0.25 && (u + v).abs() <= 1.3,
        8 => [-0.6, 0.0, 0.6]
            .iter()
            .any(|cx| [-0.6, 0.0, 0.6].iter().any(|cy| (u - cx).powi(2) + (v - cy).powi(2) <= 0.18 * 0.18)),
        9 => ((u + 0.55).abs() <= 0.18 && v.abs() <= 0.85) || ((v - 0.67).abs() <= 0.18 && (-0.73..=0.85).contains(&u)),
        _ => unreachable!("label out of range"),
    }
}

/// Grayscale plane in `[0, 1]`, 2×2 supersampled.
fn draw_shape(label: usize, h: usize, w: usize, rng: &mut Rng) -> Vec<f32> {
    let side = h.min(w) as f64;
    let cy = h as f64 / 2.0 + rng.range(-0.18, 0.18) * side;
    let cx = w as f64 / 2.0 + rng.range(-0.18, 0.18) * side;
    let scale = rng.range(0.22, 0.36) * side;
    let theta = rng.range(-15.0, 15.0) * PI / 180.0;
    let (sin, cos) = theta.sin_cos();
    let fg = rng.range(0.65, 1.0);
    let bg = rng.range(0.0, 0.25);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut cover = 0.0;
            for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let dy = (y as f64 + oy - cy) / scale;
                let dx = (x as f64 + ox - cx) / scale;
                // rotate the sample point into the shape frame
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                if inside(label, u, v) {
                    cover += 0.25;
                }
            }
            let val = bg + (fg - bg) * cover + 0.1 * rng.normal();
            out.push(val.clamp(0.0, 1.0) as f32);
        }
    }
    out
}

const EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Loads `root/<class>/<image>`; classes are subdirectories sorted by name.
/// Images are resized to `res` and normalized with `norm`.
pub fn load_image_dir(root: &Path, res: InputRes, norm: &Normalization) -> Result<Dataset> {
    norm.check(res.c)?;
    Ok(load_raw_dir(root, res)?.normalized(norm))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        out.push(e.map_err(|e| HarnessError::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn load_raw_dir(root: &Path, res: InputRes) -> Result<Dataset> {
    if res.c != 1 && res.c != 3 {
        return Err(HarnessError::Dataset(format!("image directories load 1 or 3 channels, not {}", res.c)));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(HarnessError::Dataset(format!("{} has no class subdirectories", root.display())));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        for path in sorted_entries(dir)? {
            let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
            if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
                continue;
            }
            let img = image::open(&path).map_err(|e| HarnessError::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let img = img.resize_exact(res.w as u32, res.h as u32, image::imageops::FilterType::Triangle);
            if res.c == 1 {
                data.extend(img.to_luma8().pixels().map(|p| p.0[0] as f32 / 255.0));
            } else {
                let rgb = img.to_rgb8();
                for ch in 0..3 {
                    data.extend(rgb.pixels().map(|p| p.0[ch] as f32 / 255.0));
                }
            }
            labels.push(label);
        }
    }
    if labels.is_empty() {
        return Err(HarnessError::Dataset(format!("{} contains no images", root.display())));
    }
    let images = Tensor::from_vec(Shape::new(labels.len(), res.c, res.h, res.w)?, data)?;
    Dataset::new(images, labels, names)
}
