//! Spectral PCA fitted on training pixels.

use nalgebra::{DMatrix, SymmetricEigen};

use super::cube::{SceneCube, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Eigenvalues at or below this fraction of the largest are treated as zero
/// when reporting the effective rank.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// `[bands]`
    pub mean: Tensor,
    /// `[K, bands]`, orthonormal rows.
    pub components: Tensor,
    /// `[K]`, non-increasing.
    pub explained_variance: Tensor,
    /// Numerical rank of the training covariance. When below `K` the trailing
    /// components are an arbitrary orthonormal completion.
    pub effective_rank: usize,
}

impl PcaModel {
    pub fn components_count(&self) -> usize {
        self.components.shape()[0]
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.effective_rank < self.components_count()
    }

    /// `components · (x − mean)`.
    pub fn project(&self, spectrum: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = spectrum
            .iter()
            .zip(self.mean.data())
            .map(|(x, m)| x - m)
            .collect();
        self.project_centered(&centered)
    }

    pub fn project_centered(&self, centered: &[f64]) -> Vec<f64> {
        let b = self.bands();
        self.components
            .data()
            .chunks_exact(b)
            .map(|row| row.iter().zip(centered).map(|(a, x)| a * x).sum())
            .collect()
    }

    /// `componentsᵀ · coeffs`, i.e. back into centered band space.
    pub fn back_project(&self, coeffs: &[f64]) -> Vec<f64> {
        let b = self.bands();
        let mut out = vec![0.0; b];
        for (row, &c) in self.components.data().chunks_exact(b).zip(coeffs) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * c;
            }
        }
        out
    }

    /// Projects a whole `[bands, H, W]` cube to `[K, H, W]`.
    pub fn transform_cube(&self, hsi: &Tensor) -> Tensor {
        let (h, w) = (hsi.shape()[1], hsi.shape()[2]);
        let n = h * w;
        let k = self.components_count();
        let b = self.bands();
        let mut out = vec![0.0; k * n];
        let src = hsi.data();
        let mut centered = vec![0.0; b];
        for px in 0..n {
            for (band, c) in centered.iter_mut().enumerate() {
                *c = src[band * n + px] - self.mean.data()[band];
            }
            for (comp, v) in self.project_centered(&centered).into_iter().enumerate() {
                out[comp * n + px] = v;
            }
        }
        Tensor::from_parts(vec![k, h, w], out)
    }
}

/// Fits `k` principal components on training-split pixels only.
pub fn fit_pca(cube: &SceneCube, k: usize) -> Result<PcaModel> {
    let bands = cube.bands();
    if k == 0 || k > bands {
        return Err(Error::Config(format!(
            "PCA components {k} outside 1..={bands}"
        )));
    }
    let pixels = cube.split_pixels(Split::Train);
    if pixels.len() < k {
        return Err(Error::Data(format!(
            "PCA needs at least {k} training pixels, found {}",
            pixels.len()
        )));
    }
    let spectra: Vec<Vec<f64>> = pixels.iter().map(|&i| cube.spectrum(i)).collect();
    fit_pca_samples(&spectra, k)
}

/// Fits PCA on raw sample rows (each of length `bands`).
pub fn fit_pca_samples(samples: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    let n = samples.len();
    let bands = samples.first().map_or(0, Vec::len);
    if k == 0 || k > bands {
        return Err(Error::Config(format!(
            "PCA components {k} outside 1..={bands}"
        )));
    }
    if n < k {
        return Err(Error::Data(format!(
            "PCA needs at least {k} samples, found {n}"
        )));
    }
    let mut mean = vec![0.0; bands];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let denom = (n.max(2) - 1) as f64;
    let mut cov = DMatrix::<f64>::zeros(bands, bands);
    let mut centered = vec![0.0; bands];
    for s in samples {
        for ((c, v), m) in centered.iter_mut().zip(s).zip(&mean) {
            *c = v - m;
        }
        for i in 0..bands {
            for j in i..bands {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..bands {
        for j in i..bands {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let effective_rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * top.max(f64::MIN_POSITIVE))
        .count();

    let mut components = Vec::with_capacity(k * bands);
    let mut variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let col = eig.eigenvectors.column(idx);
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| v * sign));
        variance.push(eig.eigenvalues[idx].max(0.0));
    }

    Ok(PcaModel {
        mean: Tensor::from_parts(vec![bands], mean),
        components: Tensor::from_parts(vec![k, bands], components),
        explained_variance: Tensor::from_parts(vec![k], variance),
        effective_rank,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn k_out_of_range() {
        let samples = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 0.0]];
        assert!(matches!(
            fit_pca_samples(&samples, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            fit_pca_samples(&samples, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rank_deficient_fit_still_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = [1.0, -2.0, 0.5, 3.0];
        let samples: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                base.iter().map(|b| a * b).collect()
            })
            .collect();
        let pca = fit_pca_samples(&samples, 3).unwrap();
        assert_eq!(pca.effective_rank, 1);
        assert!(pca.is_rank_deficient());
        let c = &pca.components;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..4).map(|b| c.at(&[i, b]) * c.at(&[j, b])).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
        }
    }
}
