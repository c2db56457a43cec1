use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::patches::PatchPair;
use crate::numerics::Tensor;

/// Relative noise level used when none is configured.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Flips {
    /// Mirror columns (left/right).
    pub horizontal: bool,
    /// Mirror rows (up/down).
    pub vertical: bool,
}

fn flip(t: &Tensor, flips: Flips) -> Tensor {
    if !flips.horizontal && !flips.vertical {
        return t.clone();
    }
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = t.data();
    Tensor::from_fn(t.shape(), |i| {
        let (ch, rem) = (i / (h * w), i % (h * w));
        let (r, col) = (rem / w, rem % w);
        let r = if flips.vertical { h - 1 - r } else { r };
        let col = if flips.horizontal { w - 1 - col } else { col };
        debug_assert!(ch < c);
        src[ch * h * w + r * w + col]
    })
}

fn add_noise<R: Rng + ?Sized>(t: &mut Tensor, sigma: f64, rng: &mut R) {
    let plane = t.shape()[1] * t.shape()[2];
    for chunk in t.data_mut().chunks_exact_mut(plane) {
        let n = chunk.len() as f64;
        let mean = chunk.iter().sum::<f64>() / n;
        let std = (chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = sigma * std;
        for v in chunk.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += scale * z;
        }
    }
}

/// Applies the given flips to both modalities, then Gaussian noise with
/// standard deviation `noise_sigma · (per-channel std of the patch)`.
pub fn augment_with<R: Rng + ?Sized>(
    sample: &PatchPair,
    flips: Flips,
    noise_sigma: f64,
    rng: &mut R,
) -> PatchPair {
    let mut hsi = flip(&sample.hsi, flips);
    let mut lidar = flip(&sample.lidar, flips);
    if noise_sigma > 0.0 {
        add_noise(&mut hsi, noise_sigma, rng);
        add_noise(&mut lidar, noise_sigma, rng);
    }
    PatchPair {
        hsi,
        lidar,
        label: sample.label,
        center: sample.center,
    }
}

/// Independent fair coins for each flip axis, shared by both modalities.
pub fn augment<R: Rng + ?Sized>(sample: &PatchPair, rng: &mut R, noise_sigma: f64) -> PatchPair {
    let flips = Flips {
        horizontal: rng.random_bool(0.5),
        vertical: rng.random_bool(0.5),
    };
    augment_with(sample, flips, noise_sigma.max(0.0), rng)
}
