use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-pixel split membership. Discriminants match the on-disk byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Split {
    None = 0,
    Train = 1,
    Test = 2,
}

impl Split {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Split::None),
            1 => Some(Split::Train),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Co-registered HSI/LiDAR scene with a label grid and split mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCube {
    /// `[bands, H, W]`
    pub hsi: Tensor,
    /// `[lidar_channels, H, W]`
    pub lidar: Tensor,
    /// Row-major `H·W`; 0 means unlabeled, otherwise `1..=classes`.
    pub labels: Vec<u16>,
    pub split: Vec<Split>,
    pub classes: usize,
}

impl SceneCube {
    pub fn new(
        hsi: Tensor,
        lidar: Tensor,
        labels: Vec<u16>,
        split: Vec<Split>,
        classes: usize,
    ) -> Result<Self> {
        let cube = Self {
            hsi,
            lidar,
            labels,
            split,
            classes,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hsi.rank() != 3 || self.lidar.rank() != 3 {
            return Err(Error::Data("hsi and lidar must be [channels, H, W]".into()));
        }
        if self.hsi.shape()[1..] != self.lidar.shape()[1..] {
            return Err(Error::shape(
                "scene grid",
                self.hsi.shape(),
                self.lidar.shape(),
            ));
        }
        let n = self.height() * self.width();
        if self.labels.len() != n || self.split.len() != n {
            return Err(Error::Data(format!(
                "label/split grids must have {n} entries (got {} / {})",
                self.labels.len(),
                self.split.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize > self.classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                classes: self.classes,
            });
        }
        Ok(())
    }

    pub fn bands(&self) -> usize {
        self.hsi.shape()[0]
    }

    pub fn lidar_channels(&self) -> usize {
        self.lidar.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.hsi.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.hsi.shape()[2]
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    /// Spectrum of the pixel at flat index `idx`.
    pub fn spectrum(&self, idx: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.bands())
            .map(|b| self.hsi.data()[b * n + idx])
            .collect()
    }

    pub fn lidar_values(&self, idx: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.lidar_channels())
            .map(|c| self.lidar.data()[c * n + idx])
            .collect()
    }

    /// Flat indices of labeled pixels assigned to `split`, row-major.
    pub fn split_pixels(&self, split: Split) -> Vec<usize> {
        (0..self.pixels())
            .filter(|&i| self.labels[i] != 0 && self.split[i] == split)
            .collect()
    }

    /// `(train, test)` pixel counts per class, index 0 = class 1.
    pub fn class_counts(&self) -> Vec<(usize, usize)> {
        let mut counts = vec![(0, 0); self.classes];
        for (&l, &s) in self.labels.iter().zip(&self.split) {
            if l == 0 {
                continue;
            }
            let c = &mut counts[l as usize - 1];
            match s {
                Split::Train => c.0 += 1,
                Split::Test => c.1 += 1,
                Split::None => {}
            }
        }
        counts
    }
}
