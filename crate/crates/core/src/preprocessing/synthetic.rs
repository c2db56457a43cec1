//! Desk-scale synthetic scenes with planted cross-modal confusions.
//!
//! Classes are laid out as square tiles. With the generated prototypes,
//! classes 1/2 and 3/4 share a spectrum and differ only in height, while
//! classes 1 and 3 share a height and differ only in spectrum. Any further
//! classes pair up on a shared height with distinct spectra.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cube::{SceneCube, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub lidar_channels: usize,
    /// Edge length of the square class tiles.
    pub tile: usize,
    pub train_per_class: usize,
    /// Per-band additive noise std (reflectance units).
    pub spectral_noise: f64,
    /// Additive elevation noise std (meters).
    pub height_noise: f64,
    /// Explicit `[classes][bands]` spectra; generated when absent.
    pub prototypes: Option<Vec<Vec<f64>>>,
    /// Explicit per-class heights; generated when absent.
    pub heights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 6,
            height: 64,
            width: 64,
            bands: 20,
            lidar_channels: 1,
            tile: 16,
            train_per_class: 100,
            spectral_noise: 0.03,
            height_noise: 0.8,
            prototypes: None,
            heights: None,
            seed: 7,
        }
    }
}

/// Spectral group shared by classes with indistinguishable spectra.
fn spectral_group(class: usize) -> usize {
    if class < 4 {
        class / 2
    } else {
        2 + (class - 4)
    }
}

fn height_level(class: usize) -> f64 {
    match class {
        0 | 2 => 2.0,
        1 | 3 => 14.0,
        c => 8.0 + 12.0 * ((c - 4) / 2) as f64,
    }
}

fn smooth_spectrum<R: Rng + ?Sized>(bands: usize, rng: &mut R) -> Vec<f64> {
    let base = rng.random_range(0.15..0.35);
    let bumps: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.2..0.5),
                rng.random_range(0.0..bands as f64),
                rng.random_range(bands as f64 / 8.0..bands as f64 / 3.0)
                    .max(1.0),
            )
        })
        .collect();
    (0..bands)
        .map(|b| {
            let x = b as f64;
            base + bumps
                .iter()
                .map(|(a, c, w)| a * (-(x - c).powi(2) / (2.0 * w * w)).exp())
                .sum::<f64>()
        })
        .collect()
}

/// Class prototypes `(spectra, heights)` for `spec`.
pub fn prototypes(spec: &SyntheticSpec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = stream(spec.seed, Stream::Synth);
    let spectra = match &spec.prototypes {
        Some(p) => p.clone(),
        None => {
            let groups = (0..spec.classes).map(spectral_group).max().unwrap_or(0) + 1;
            let group_spectra: Vec<Vec<f64>> = (0..groups)
                .map(|_| smooth_spectrum(spec.bands, &mut rng))
                .collect();
            (0..spec.classes)
                .map(|c| group_spectra[spectral_group(c)].clone())
                .collect()
        }
    };
    let heights = spec
        .heights
        .clone()
        .unwrap_or_else(|| (0..spec.classes).map(height_level).collect());
    (spectra, heights)
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SceneCube> {
    if spec.classes < 2 {
        return Err(Error::Config(
            "synthetic scene needs at least 2 classes".into(),
        ));
    }
    if spec.bands == 0
        || spec.lidar_channels == 0
        || spec.height == 0
        || spec.width == 0
        || spec.tile == 0
    {
        return Err(Error::Config("synthetic extents must be positive".into()));
    }
    if spec.classes > u16::MAX as usize {
        return Err(Error::Config("too many classes".into()));
    }
    let (spectra, heights) = prototypes(spec);
    if spectra.len() != spec.classes
        || spectra.iter().any(|s| s.len() != spec.bands)
        || heights.len() != spec.classes
    {
        return Err(Error::Config(
            "prototype table does not match classes × bands".into(),
        ));
    }

    let (h, w) = (spec.height, spec.width);
    let tiles_r = h.div_ceil(spec.tile);
    let tiles_c = w.div_ceil(spec.tile);
    let n_tiles = tiles_r * tiles_c;
    if n_tiles < spec.classes {
        return Err(Error::Config(format!(
            "{n_tiles} tiles cannot host {} classes; reduce the tile size",
            spec.classes
        )));
    }

    // Generation order (layout, then noise) is fixed so that the whole cube
    // is a pure function of the seed.
    let mut rng = stream(spec.seed.wrapping_add(1), Stream::Synth);
    let mut tile_classes: Vec<usize> = (0..n_tiles).map(|t| t % spec.classes).collect();
    tile_classes.shuffle(&mut rng);

    let n = h * w;
    let mut labels = vec![0u16; n];
    for r in 0..h {
        for c in 0..w {
            let t = (r / spec.tile) * tiles_c + c / spec.tile;
            labels[r * w + c] = tile_classes[t] as u16 + 1;
        }
    }

    let spec_noise =
        Normal::new(0.0, spec.spectral_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let h_noise =
        Normal::new(0.0, spec.height_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut hsi = vec![0.0; spec.bands * n];
    let mut lidar = vec![0.0; spec.lidar_channels * n];
    for px in 0..n {
        let class = labels[px] as usize - 1;
        for b in 0..spec.bands {
            hsi[b * n + px] = f32_round(spectra[class][b] + spec_noise.sample(&mut rng));
        }
        for ch in 0..spec.lidar_channels {
            let level = heights[class] * (1.0 + 0.1 * ch as f64);
            lidar[ch * n + px] = f32_round(level + h_noise.sample(&mut rng));
        }
    }

    let mut split_rng = stream(spec.seed, Stream::Split);
    let mut split = vec![Split::Test; n];
    for class in 1..=spec.classes as u16 {
        let mut pixels: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        pixels.shuffle(&mut split_rng);
        let train = spec.train_per_class.min(pixels.len() / 2);
        for &px in &pixels[..train] {
            split[px] = Split::Train;
        }
    }

    SceneCube::new(
        Tensor::from_parts(vec![spec.bands, h, w], hsi),
        Tensor::from_parts(vec![spec.lidar_channels, h, w], lidar),
        labels,
        split,
        spec.classes,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrototypeFeatures {
    Spectral,
    Elevation,
    Joint,
}

/// Nearest-class-mean baseline: means from training pixels, accuracy on test
/// pixels. Features are z-scored with training statistics.
pub fn nearest_prototype_oa(cube: &SceneCube, features: PrototypeFeatures) -> Result<f64> {
    let feature = |idx: usize| -> Vec<f64> {
        match features {
            PrototypeFeatures::Spectral => cube.spectrum(idx),
            PrototypeFeatures::Elevation => cube.lidar_values(idx),
            PrototypeFeatures::Joint => {
                let mut f = cube.spectrum(idx);
                f.extend(cube.lidar_values(idx));
                f
            }
        }
    };
    let train = cube.split_pixels(Split::Train);
    let test = cube.split_pixels(Split::Test);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(
            "prototype baseline needs train and test pixels".into(),
        ));
    }
    let train_f: Vec<Vec<f64>> = train.iter().map(|&i| feature(i)).collect();
    let dim = train_f[0].len();
    let count = train_f.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|d| train_f.iter().map(|f| f[d]).sum::<f64>() / count)
        .collect();
    let std: Vec<f64> = (0..dim)
        .map(|d| {
            let v = train_f
                .iter()
                .map(|f| (f[d] - mean[d]).powi(2))
                .sum::<f64>()
                / count;
            if v > 1e-24 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let norm = |f: Vec<f64>| -> Vec<f64> {
        f.iter()
            .enumerate()
            .map(|(d, v)| (v - mean[d]) / std[d])
            .collect()
    };

    let mut centroids = vec![vec![0.0; dim]; cube.classes];
    let mut counts = vec![0usize; cube.classes];
    for (&px, f) in train.iter().zip(train_f) {
        let c = cube.labels[px] as usize - 1;
        counts[c] += 1;
        for (acc, v) in centroids[c].iter_mut().zip(norm(f)) {
            *acc += v;
        }
    }
    for (cent, &k) in centroids.iter_mut().zip(&counts) {
        if k > 0 {
            cent.iter_mut().for_each(|v| *v /= k as f64);
        }
    }

    let correct = test
        .iter()
        .filter(|&&px| {
            let f = norm(feature(px));
            let best = centroids
                .iter()
                .enumerate()
                .filter(|(c, _)| counts[*c] > 0)
                .map(|(c, cent)| {
                    (
                        c,
                        cent.iter()
                            .zip(&f)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>(),
                    )
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c);
            best == Some(cube.labels[px] as usize - 1)
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
