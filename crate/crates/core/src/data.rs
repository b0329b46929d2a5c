//! Dataset loading (IDX, CIFAR binary) and a synthetic prototype task.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Images `(N, C, H, W)` in `[0, 1]` with one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        if images.shape().len() != 4 || images.batch() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for images {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        Ok(Self {
            images,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn select(&self, indices: &[usize], split: Split) -> Self {
        Self {
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            split,
        }
    }

    /// First `n` samples.
    pub fn truncate(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx, self.split)
    }

    /// Hold out the last `held_out` samples as a validation split.
    pub fn split_validation(&self, held_out: usize) -> Result<(Self, Self)> {
        if held_out >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot hold out {held_out} of {} samples",
                self.len()
            )));
        }
        let cut = self.len() - held_out;
        let train: Vec<usize> = (0..cut).collect();
        let val: Vec<usize> = (cut..self.len()).collect();
        Ok((
            self.select(&train, Split::Train),
            self.select(&val, Split::Validation),
        ))
    }

    /// Per-channel mean and standard deviation over all pixels.
    pub fn channel_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let [c, h, w] = self.image_shape();
        let plane = h * w;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for (i, &v) in self.images.data().iter().enumerate() {
            let ch = (i / plane) % c;
            sum[ch] += v as f64;
            sq[ch] += (v as f64) * (v as f64);
        }
        let count = (self.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / count - m * m).max(0.0).sqrt())
            .collect();
        (mean, std)
    }

    /// Samples per class.
    pub fn class_frequencies(&self) -> Vec<usize> {
        let mut f = vec![0; self.class_count];
        for &l in &self.labels {
            f[l] += 1;
        }
        f
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn format_error(format: &'static str, path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        format,
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_error("IDX", path, bytes.len() as u64, "truncated header"))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Load an IDX image file and its label file (e.g. Fashion-MNIST). Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let img = read(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_error(
            "IDX",
            images_path,
            0,
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let needed = 16 + n * rows * cols;
    if img.len() < needed {
        return Err(format_error(
            "IDX",
            images_path,
            img.len() as u64,
            format!("truncated: {n} images of {rows}x{cols} need {needed} bytes"),
        ));
    }

    let lab = read(labels_path)?;
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_error(
            "IDX",
            labels_path,
            0,
            format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n_labels = be_u32(&lab, 4, labels_path)? as usize;
    if n_labels != n {
        return Err(format_error(
            "IDX",
            labels_path,
            4,
            format!("{n_labels} labels for {n} images"),
        ));
    }
    if lab.len() < 8 + n {
        return Err(format_error(
            "IDX",
            labels_path,
            lab.len() as u64,
            format!("truncated: {n} labels need {} bytes", 8 + n),
        ));
    }
    let labels: Vec<usize> = lab[8..8 + n].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let pixels = img[16..needed].iter().map(|&b| b as f32 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, rows, cols], pixels)?;
    LabeledDataset::new(images, labels, class_count, Split::Train)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarVariant {
    #[default]
    Cifar10,
    /// Records carry a coarse and a fine label; the fine label is used.
    Cifar100,
}

impl CifarVariant {
    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

const CIFAR_PIXELS: usize = 3 * 32 * 32;

/// Concatenate CIFAR binary batch files into one `(N, 3, 32, 32)` dataset.
pub fn load_cifar_binary(paths: &[PathBuf], variant: CifarVariant) -> Result<LabeledDataset> {
    let record = variant.label_bytes() + CIFAR_PIXELS;
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for path in paths {
        let bytes = read(path)?;
        if bytes.len() % record != 0 {
            return Err(format_error(
                "CIFAR",
                path,
                (bytes.len() - bytes.len() % record) as u64,
                format!(
                    "length {} is not a multiple of the {record}-byte record",
                    bytes.len()
                ),
            ));
        }
        for (r, rec) in bytes.chunks_exact(record).enumerate() {
            let label = rec[variant.label_bytes() - 1] as usize;
            if label >= variant.classes() {
                return Err(format_error(
                    "CIFAR",
                    path,
                    (r * record) as u64,
                    format!("label {label} out of range"),
                ));
            }
            labels.push(label);
            // planes are stored R, G, B, each row-major 32x32
            pixels.extend(rec[variant.label_bytes()..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    let n = labels.len();
    let images = Tensor::new(vec![n, 3, 32, 32], pixels)?;
    LabeledDataset::new(images, labels, variant.classes(), Split::Train)
}

/// Smooth per-class prototype images; samples are prototypes plus Gaussian pixel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub prototypes: Vec<Tensor<f32>>,
    pub image_shape: [usize; 3],
}

impl SyntheticTask {
    pub fn new(class_count: usize, image_shape: [usize; 3], seed: u64) -> Result<Self> {
        if class_count == 0 || image_shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "synthetic task needs positive sizes, got {class_count} classes of {image_shape:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c, h, w] = image_shape;
        let prototypes = (0..class_count)
            .map(|_| {
                let mut img = vec![0.0f64; c * h * w];
                for ch in 0..c {
                    for _ in 0..3 {
                        let cy = rng.random_range(0.0..h as f64);
                        let cx = rng.random_range(0.0..w as f64);
                        let sigma = rng.random_range(0.15..0.35) * h.max(w) as f64;
                        let amp = rng.random_range(0.5..1.0);
                        for y in 0..h {
                            for x in 0..w {
                                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                                img[(ch * h + y) * w + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                            }
                        }
                    }
                }
                let peak = img.iter().fold(0.0f64, |m, &v| m.max(v)).max(1e-12);
                Tensor::from_fn(&[c, h, w], |i| (img[i] / peak) as f32)
            })
            .collect();
        Ok(Self {
            prototypes,
            image_shape,
        })
    }

    pub fn class_count(&self) -> usize {
        self.prototypes.len()
    }

    /// `per_class` noisy samples of every class, classes interleaved (0, 1, .., k-1, 0, ..), clamped to `[0, 1]`.
    pub fn sample(&self, per_class: usize, noise: f64, seed: u64, split: Split) -> Result<LabeledDataset> {
        if per_class == 0 || !(noise >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "per_class must be positive and noise non-negative (got {per_class}, {noise})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.class_count();
        let per = self.image_shape.iter().product::<usize>();
        let mut pixels = Vec::with_capacity(k * per_class * per);
        let mut labels = Vec::with_capacity(k * per_class);
        for _ in 0..per_class {
            for (class, proto) in self.prototypes.iter().enumerate() {
                for &p in proto.data() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    pixels.push((p as f64 + noise * z).clamp(0.0, 1.0) as f32);
                }
                labels.push(class);
            }
        }
        let [c, h, w] = self.image_shape;
        let images = Tensor::new(vec![k * per_class, c, h, w], pixels)?;
        LabeledDataset::new(images, labels, k, split)
    }

    /// Index of the prototype nearest (Euclidean) to `image`.
    pub fn nearest_prototype(&self, image: &[f32]) -> usize {
        let dist = |p: &Tensor<f32>| -> f64 {
            p.data()
                .iter()
                .zip(image)
                .map(|(&a, &b)| ((a - b) as f64).powi(2))
                .sum()
        };
        (0..self.class_count())
            .min_by(|&a, &b| dist(&self.prototypes[a]).total_cmp(&dist(&self.prototypes[b])))
            .unwrap_or(0)
    }
}

/// Synthetic dataset with the default noise level (0.1).
pub fn make_synthetic(
    class_count: usize,
    per_class: usize,
    image_shape: [usize; 3],
    seed: u64,
) -> Result<LabeledDataset> {
    SyntheticTask::new(class_count, image_shape, seed)?.sample(
        per_class,
        0.1,
        seed.wrapping_add(1),
        Split::Train,
    )
}
