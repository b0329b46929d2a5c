use rand::Rng;
use serde::{Deserialize, Serialize};

/// Stage switches for the augmentation pipeline (crop, flip, normalize, erase, in that order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Reflect-pad by `crop_padding` and take a random crop of the original size.
    pub crop: bool,
    pub crop_padding: usize,
    pub flip: bool,
    pub flip_prob: f64,
    /// Per-channel standardization with the training-set statistics.
    pub normalize: bool,
    /// Gain applied after standardization, so inputs have standard deviation `input_scale`.
    pub input_scale: f64,
    /// Zero one random rectangle covering `erase_area` of the image.
    pub erase: bool,
    pub erase_area: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop: true,
            crop_padding: 4,
            flip: true,
            flip_prob: 0.5,
            normalize: true,
            input_scale: 1.0,
            erase: false,
            erase_area: (0.02, 0.10),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            crop: false,
            flip: false,
            normalize: false,
            erase: false,
            ..Self::default()
        }
    }

    /// What evaluation applies: normalization only.
    pub fn eval_only(&self) -> Self {
        Self {
            normalize: self.normalize,
            ..Self::none()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Training-set channel statistics, with the spread divided by `scale`.
    pub fn fit(data: &crate::data::LabeledDataset, scale: f64) -> Self {
        let (mean, std) = data.channel_stats();
        Self {
            mean,
            std: std.into_iter().map(|s| s / scale).collect(),
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    // mirror without repeating the edge pixel
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Flip each row of every channel.
pub fn hflip(image: &mut [f32], shape: [usize; 3]) {
    let w = shape[2];
    for row in image.chunks_mut(w) {
        row.reverse();
    }
}

/// Apply the enabled stages to one `(C, H, W)` image. Deterministic given `rng`.
pub fn augment(
    image: &[f32],
    shape: [usize; 3],
    rng: &mut impl Rng,
    config: &AugmentConfig,
    norm: Option<&Normalization>,
) -> Vec<f32> {
    let [c, h, w] = shape;
    let mut out = image.to_vec();
    if config.crop && config.crop_padding > 0 {
        let pad = config.crop_padding as i64;
        let dy = (rng.random_range(0..=2 * pad) - pad) as isize;
        let dx = (rng.random_range(0..=2 * pad) - pad) as isize;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = reflect(y as isize + dy, h);
                    let sx = reflect(x as isize + dx, w);
                    out[(ch * h + y) * w + x] = image[(ch * h + sy) * w + sx];
                }
            }
        }
    }
    if config.flip && rng.random_bool(config.flip_prob.clamp(0.0, 1.0)) {
        hflip(&mut out, shape);
    }
    if config.normalize {
        if let Some(n) = norm {
            for ch in 0..c {
                let (m, s) = (n.mean[ch], n.std[ch].max(1e-8));
                for v in &mut out[ch * h * w..(ch + 1) * h * w] {
                    *v = ((*v as f64 - m) / s) as f32;
                }
            }
        }
    }
    if config.erase {
        let (lo, hi) = config.erase_area;
        let area = rng.random_range(lo..=hi) * (h * w) as f64;
        let aspect = rng.random_range(0.3f64.ln()..=(1.0f64 / 0.3).ln()).exp();
        let eh = ((area * aspect).sqrt().round() as usize).clamp(1, h);
        let ew = ((area / aspect).sqrt().round() as usize).clamp(1, w);
        let y0 = rng.random_range(0..=h - eh);
        let x0 = rng.random_range(0..=w - ew);
        for ch in 0..c {
            for y in y0..y0 + eh {
                out[(ch * h + y) * w + x0..(ch * h + y) * w + x0 + ew].fill(0.0);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image() -> Vec<f32> {
        (0..2 * 8 * 8).map(|i| (i % 17) as f32 / 17.0).collect()
    }

    #[test]
    fn all_off_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = image();
        assert_eq!(augment(&img, [2, 8, 8], &mut rng, &AugmentConfig::none(), None), img);
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = AugmentConfig {
            erase: true,
            ..Default::default()
        };
        let norm = Normalization {
            mean: vec![0.5, 0.4],
            std: vec![0.2, 0.3],
        };
        let a = augment(&image(), [2, 8, 8], &mut ChaCha8Rng::seed_from_u64(3), &cfg, Some(&norm));
        let b = augment(&image(), [2, 8, 8], &mut ChaCha8Rng::seed_from_u64(3), &cfg, Some(&norm));
        assert_eq!(a, b);
    }

    #[test]
    fn forced_flip_twice_restores() {
        let cfg = AugmentConfig {
            flip_prob: 1.0,
            ..AugmentConfig::none()
        };
        let cfg = AugmentConfig { flip: true, ..cfg };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let once = augment(&image(), [2, 8, 8], &mut rng, &cfg, None);
        assert_ne!(once, image());
        let twice = augment(&once, [2, 8, 8], &mut rng, &cfg, None);
        assert_eq!(twice, image());
    }

    #[test]
    fn normalization_standardizes_channels() {
        let cfg = AugmentConfig {
            normalize: true,
            ..AugmentConfig::none()
        };
        let norm = Normalization {
            mean: vec![1.0],
            std: vec![2.0],
        };
        let out = augment(&[3.0, 1.0], [1, 1, 2], &mut ChaCha8Rng::seed_from_u64(0), &cfg, Some(&norm));
        assert_eq!(out, vec![1.0, 0.0]);
    }

    #[test]
    fn crop_draws_pixels_from_the_image() {
        let cfg = AugmentConfig {
            crop: true,
            ..AugmentConfig::none()
        };
        let img = image();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let out = augment(&img, [2, 8, 8], &mut rng, &cfg, None);
            assert!(out.iter().all(|v| img.contains(v)));
        }
    }

    #[test]
    fn reflect_mirrors_without_edge_repeat() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }
}
