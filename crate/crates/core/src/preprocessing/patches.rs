use super::cube::{SceneCube, Split};
use super::pca::PcaModel;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One classification sample: co-registered patches around a labeled pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    /// `[K, p, p]`
    pub hsi: Tensor,
    /// `[lidar_channels, p, p]`
    pub lidar: Tensor,
    /// Class in `1..=C`.
    pub label: u16,
    /// `(row, col)` of the center pixel.
    pub center: (usize, usize),
}

impl PatchPair {
    pub fn patch_size(&self) -> usize {
        self.hsi.shape()[1]
    }

    /// Zero-based class index.
    pub fn target(&self) -> usize {
        self.label as usize - 1
    }
}

/// Reflects `i` into `0..n` without repeating the edge sample
/// (`-1 → 1`, `n → n-2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    let m = if m >= n as isize { period - m } else { m };
    m as usize
}

/// Per-channel z-score statistics, fitted on training pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub hsi_mean: Vec<f64>,
    pub hsi_std: Vec<f64>,
    pub lidar_mean: Vec<f64>,
    pub lidar_std: Vec<f64>,
}

fn channel_stats(data: &Tensor, pixels: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let channels = data.shape()[0];
    let n = data.shape()[1] * data.shape()[2];
    let count = pixels.len() as f64;
    let mut means = Vec::with_capacity(channels);
    let mut stds = Vec::with_capacity(channels);
    for c in 0..channels {
        let plane = &data.data()[c * n..(c + 1) * n];
        let mean = pixels.iter().map(|&i| plane[i]).sum::<f64>() / count;
        let var = pixels
            .iter()
            .map(|&i| (plane[i] - mean).powi(2))
            .sum::<f64>()
            / count;
        let std = var.sqrt();
        means.push(mean);
        stds.push(if std > 1e-12 { std } else { 1.0 });
    }
    (means, stds)
}

impl Standardizer {
    /// Statistics of the PCA-projected HSI and raw LiDAR over training pixels.
    pub fn fit(projected_hsi: &Tensor, lidar: &Tensor, train_pixels: &[usize]) -> Result<Self> {
        if train_pixels.is_empty() {
            return Err(Error::Data("standardization needs training pixels".into()));
        }
        let (hsi_mean, hsi_std) = channel_stats(projected_hsi, train_pixels);
        let (lidar_mean, lidar_std) = channel_stats(lidar, train_pixels);
        Ok(Self {
            hsi_mean,
            hsi_std,
            lidar_mean,
            lidar_std,
        })
    }

    fn apply(data: &Tensor, mean: &[f64], std: &[f64]) -> Tensor {
        let n = data.shape()[1] * data.shape()[2];
        let mut out = data.clone();
        for (c, chunk) in out.data_mut().chunks_exact_mut(n).enumerate() {
            chunk.iter_mut().for_each(|v| *v = (*v - mean[c]) / std[c]);
        }
        out
    }
}

fn window(data: &Tensor, row: usize, col: usize, p: usize) -> Tensor {
    let (channels, h, w) = (data.shape()[0], data.shape()[1], data.shape()[2]);
    let half = (p / 2) as isize;
    let mut out = Vec::with_capacity(channels * p * p);
    for c in 0..channels {
        let plane = &data.data()[c * h * w..(c + 1) * h * w];
        for dr in 0..p as isize {
            let r = reflect_index(row as isize + dr - half, h);
            for dc in 0..p as isize {
                let cc = reflect_index(col as isize + dc - half, w);
                out.push(plane[r * w + cc]);
            }
        }
    }
    Tensor::from_parts(vec![channels, p, p], out)
}

/// Cuts one patch pair per labeled pixel of `split`.
///
/// The HSI cube is projected through `pca`, then both modalities are z-scored
/// per channel with statistics from the training split (also when extracting
/// the test split). Borders are mirror-padded.
pub fn extract_patches(
    cube: &SceneCube,
    pca: &PcaModel,
    p: usize,
    split: Split,
) -> Result<Vec<PatchPair>> {
    if p == 0 || p.is_multiple_of(2) {
        return Err(Error::Config(format!("patch size must be odd, got {p}")));
    }
    if pca.bands() != cube.bands() {
        return Err(Error::shape("pca bands", &[pca.bands()], &[cube.bands()]));
    }
    let pixels = cube.split_pixels(split);
    if pixels.is_empty() {
        return Err(Error::Data(format!(
            "split {split:?} has no labeled pixels"
        )));
    }
    let projected = pca.transform_cube(&cube.hsi);
    let stats = Standardizer::fit(&projected, &cube.lidar, &cube.split_pixels(Split::Train))?;
    let hsi = Standardizer::apply(&projected, &stats.hsi_mean, &stats.hsi_std);
    let lidar = Standardizer::apply(&cube.lidar, &stats.lidar_mean, &stats.lidar_std);
    let w = cube.width();
    Ok(pixels
        .into_iter()
        .map(|idx| {
            let (row, col) = (idx / w, idx % w);
            PatchPair {
                hsi: window(&hsi, row, col, p),
                lidar: window(&lidar, row, col, p),
                label: cube.labels[idx],
                center: (row, col),
            }
        })
        .collect())
}

/// Raw (unprojected, unstandardized) window, for inspection and tests.
pub fn raw_window(data: &Tensor, row: usize, col: usize, p: usize) -> Tensor {
    window(data, row, col, p)
}
