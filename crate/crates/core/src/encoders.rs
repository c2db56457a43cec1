//! HSI 3-D and LiDAR 2-D convolutional encoders plus the per-level
//! projectors into the `c × s × s` routing space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    Activation, Conv2dLayer, Conv2dSpec, Conv3dLayer, Conv3dSpec, ParamStore, Tape, Var,
};

pub const LEVELS: usize = 3;

/// Preferred depth kernels of the three HSI layers.
pub const HSI_DEPTH_KERNELS: [usize; LEVELS] = [9, 7, 5];
const DEPTH_CANDIDATES: [usize; 3] = [9, 7, 5];
const LIDAR_LAST_CANDIDATES: [usize; 3] = [5, 3, 1];
const SPATIAL_KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Raw spectral bands before PCA.
    pub bands: usize,
    /// Retained principal components (K).
    pub components: usize,
    /// Odd patch edge (p).
    pub patch: usize,
    pub lidar_channels: usize,
    pub hsi_channels: [usize; LEVELS],
    pub lidar_features: [usize; LEVELS],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Hsi,
    Lidar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub hsi_layers: Vec<Conv3dSpec>,
    pub lidar_layers: Vec<Conv2dSpec>,
    pub activation: Activation,
    pub hsi_input: [usize; 4],
    pub lidar_input: [usize; 3],
    /// Output shape of each HSI layer, `[C, D, H, W]`.
    pub hsi_shapes: Vec<[usize; 4]>,
    pub lidar_shapes: Vec<[usize; 3]>,
}

/// Depth kernel of one HSI layer: the largest candidate not exceeding the
/// layer's preferred size or the incoming depth, else the whole depth.
pub fn hsi_depth_kernel(preferred: usize, depth: usize) -> usize {
    DEPTH_CANDIDATES
        .iter()
        .copied()
        .filter(|&k| k <= preferred && k <= depth)
        .max()
        .unwrap_or(depth)
}

/// Spatial kernel of the last LiDAR layer: the largest candidate that keeps
/// the output at least `s` wide.
pub fn lidar_last_kernel(extent: usize, s: usize) -> Option<usize> {
    LIDAR_LAST_CANDIDATES
        .iter()
        .copied()
        .find(|&k| k <= extent && extent - k + 1 >= s)
}

impl EncoderSpec {
    /// Derives every layer from `cfg`; rejects configurations whose deepest
    /// features would be narrower than the routing spatial size `s`.
    pub fn build(cfg: &EncoderConfig, s: usize) -> Result<Self> {
        if cfg.patch.is_multiple_of(2) || cfg.patch == 0 {
            return Err(Error::Config(format!(
                "patch size must be odd, got {}",
                cfg.patch
            )));
        }
        if cfg.components == 0 || cfg.components > cfg.bands {
            return Err(Error::Config(format!(
                "components {} outside 1..={}",
                cfg.components, cfg.bands
            )));
        }
        if cfg.lidar_channels == 0
            || cfg.hsi_channels.contains(&0)
            || cfg.lidar_features.contains(&0)
        {
            return Err(Error::Config(
                "encoder channel counts must be positive".into(),
            ));
        }
        if s == 0 {
            return Err(Error::Config(
                "routing spatial size must be positive".into(),
            ));
        }
        let geometry = |e: Error| {
            Error::Config(format!(
                "patch {} too small for the encoders: {e}",
                cfg.patch
            ))
        };

        let hsi_input = [1, cfg.components, cfg.patch, cfg.patch];
        let mut shape = hsi_input;
        let mut hsi_layers = Vec::with_capacity(LEVELS);
        let mut hsi_shapes = Vec::with_capacity(LEVELS);
        for (level, &out) in cfg.hsi_channels.iter().enumerate() {
            let kd = hsi_depth_kernel(HSI_DEPTH_KERNELS[level], shape[1]);
            let spec = Conv3dSpec::new(shape[0], out, kd, SPATIAL_KERNEL, SPATIAL_KERNEL);
            shape = spec.output_shape(&shape).map_err(geometry)?;
            hsi_layers.push(spec);
            hsi_shapes.push(shape);
        }
        if shape[2] < s {
            return Err(Error::Config(format!(
                "patch {} leaves deepest HSI features {}×{}, smaller than routing size {s}",
                cfg.patch, shape[2], shape[3]
            )));
        }

        let lidar_input = [cfg.lidar_channels, cfg.patch, cfg.patch];
        let mut shape = lidar_input;
        let mut lidar_layers = Vec::with_capacity(LEVELS);
        let mut lidar_shapes = Vec::with_capacity(LEVELS);
        for (level, &out) in cfg.lidar_features.iter().enumerate() {
            let k = if level + 1 < LEVELS {
                SPATIAL_KERNEL
            } else {
                lidar_last_kernel(shape[1], s).ok_or_else(|| {
                    Error::Config(format!(
                        "LiDAR level {} extent {} cannot reach routing size {s}",
                        level + 1,
                        shape[1]
                    ))
                })?
            };
            let spec = Conv2dSpec::new(shape[0], out, k, k);
            shape = spec.output_shape(&shape).map_err(geometry)?;
            lidar_layers.push(spec);
            lidar_shapes.push(shape);
        }

        Ok(Self {
            hsi_layers,
            lidar_layers,
            activation: Activation::Relu,
            hsi_input,
            lidar_input,
            hsi_shapes,
            lidar_shapes,
        })
    }

    /// Projector input at `level`: HSI depth is merged into channels.
    pub fn projector_input(&self, stream: Stream, level: usize) -> [usize; 3] {
        match stream {
            Stream::Hsi => {
                let [c, d, h, w] = self.hsi_shapes[level];
                [c * d, h, w]
            }
            Stream::Lidar => self.lidar_shapes[level],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectorSpec {
    pub channels: usize,
    pub spatial: usize,
    /// Encoder levels with a projector, ascending.
    pub levels: Vec<usize>,
    pub hsi: Vec<Conv2dSpec>,
    pub lidar: Vec<Conv2dSpec>,
}

impl ProjectorSpec {
    /// One valid `(P − s + 1)²` conv per stream and used level, so every
    /// output is `c × s × s`.
    pub fn build(enc: &EncoderSpec, c: usize, s: usize, levels: &[usize]) -> Result<Self> {
        if c == 0 {
            return Err(Error::Config("routing channels must be positive".into()));
        }
        let make = |stream, level: usize| -> Result<Conv2dSpec> {
            let [ch, h, w] = enc.projector_input(stream, level);
            if h < s || w < s {
                return Err(Error::Config(format!(
                    "{stream:?} level {} has extent {h}×{w}, smaller than routing size {s}",
                    level + 1
                )));
            }
            Ok(Conv2dSpec::new(ch, c, h - s + 1, w - s + 1))
        };
        let hsi = levels
            .iter()
            .map(|&l| make(Stream::Hsi, l))
            .collect::<Result<_>>()?;
        let lidar = levels
            .iter()
            .map(|&l| make(Stream::Lidar, l))
            .collect::<Result<_>>()?;
        Ok(Self {
            channels: c,
            spatial: s,
            levels: levels.to_vec(),
            hsi,
            lidar,
        })
    }
}

/// Per-level projected features of both streams, indexed like
/// `ProjectorSpec::levels`.
#[derive(Debug, Clone)]
pub struct ProjectedLevels {
    pub hsi: Vec<Var>,
    pub lidar: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Encoders {
    pub spec: EncoderSpec,
    pub projector: ProjectorSpec,
    hsi: Vec<Conv3dLayer>,
    lidar: Vec<Conv2dLayer>,
    proj_hsi: Vec<Conv2dLayer>,
    proj_lidar: Vec<Conv2dLayer>,
}

impl Encoders {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        spec: EncoderSpec,
        projector: ProjectorSpec,
        rng: &mut R,
    ) -> Self {
        let hsi = spec
            .hsi_layers
            .iter()
            .enumerate()
            .map(|(i, &s)| Conv3dLayer::new(store, &format!("hsi.conv{}", i + 1), s, rng))
            .collect();
        let lidar = spec
            .lidar_layers
            .iter()
            .enumerate()
            .map(|(i, &s)| Conv2dLayer::new(store, &format!("lidar.conv{}", i + 1), s, rng))
            .collect();
        let proj_hsi = projector
            .levels
            .iter()
            .zip(&projector.hsi)
            .map(|(l, &s)| Conv2dLayer::new(store, &format!("proj.hsi{}", l + 1), s, rng))
            .collect();
        let proj_lidar = projector
            .levels
            .iter()
            .zip(&projector.lidar)
            .map(|(l, &s)| Conv2dLayer::new(store, &format!("proj.lidar{}", l + 1), s, rng))
            .collect();
        Self {
            spec,
            projector,
            hsi,
            lidar,
            proj_hsi,
            proj_lidar,
        }
    }

    /// `[K, p, p]` patch → three post-activation levels `[C, D, H, W]`.
    pub fn encode_hsi(&self, tape: &mut Tape<'_>, patch: Var, vars: &[Var]) -> Result<Vec<Var>> {
        let [_, k, p, q] = self.spec.hsi_input;
        if tape.shape(patch) != [k, p, q] {
            return Err(Error::shape("encode_hsi", tape.shape(patch), &[k, p, q]));
        }
        let mut x = tape.reshape(patch, &self.spec.hsi_input)?;
        let mut levels = Vec::with_capacity(LEVELS);
        for layer in &self.hsi {
            let y = layer.forward(tape, x, vars)?;
            x = tape.activation(y, self.spec.activation)?;
            levels.push(x);
        }
        Ok(levels)
    }

    /// `[c_l, p, p]` patch → three post-activation levels `[C, H, W]`.
    pub fn encode_lidar(&self, tape: &mut Tape<'_>, patch: Var, vars: &[Var]) -> Result<Vec<Var>> {
        if tape.shape(patch) != self.spec.lidar_input {
            return Err(Error::shape(
                "encode_lidar",
                tape.shape(patch),
                &self.spec.lidar_input,
            ));
        }
        let mut x = patch;
        let mut levels = Vec::with_capacity(LEVELS);
        for layer in &self.lidar {
            let y = layer.forward(tape, x, vars)?;
            x = tape.activation(y, self.spec.activation)?;
            levels.push(x);
        }
        Ok(levels)
    }

    /// Maps one encoder level into the routing space. No activation follows.
    pub fn project(
        &self,
        tape: &mut Tape<'_>,
        features: Var,
        level: usize,
        stream: Stream,
        vars: &[Var],
    ) -> Result<Var> {
        let slot = self
            .projector
            .levels
            .iter()
            .position(|&l| l == level)
            .ok_or_else(|| Error::Config(format!("no projector for level {}", level + 1)))?;
        let want = self.spec.projector_input(stream, level);
        let flat = tape.reshape(features, &want)?;
        match stream {
            Stream::Hsi => self.proj_hsi[slot].forward(tape, flat, vars),
            Stream::Lidar => self.proj_lidar[slot].forward(tape, flat, vars),
        }
    }

    /// Encodes both patches and projects every level that has a projector.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        hsi: Var,
        lidar: Var,
        vars: &[Var],
    ) -> Result<ProjectedLevels> {
        let fh = self.encode_hsi(tape, hsi, vars)?;
        let fl = self.encode_lidar(tape, lidar, vars)?;
        let mut out = ProjectedLevels {
            hsi: Vec::with_capacity(self.projector.levels.len()),
            lidar: Vec::with_capacity(self.projector.levels.len()),
        };
        for &level in &self.projector.levels {
            out.hsi
                .push(self.project(tape, fh[level], level, Stream::Hsi, vars)?);
            out.lidar
                .push(self.project(tape, fl[level], level, Stream::Lidar, vars)?);
        }
        Ok(out)
    }

    pub fn hsi_layers(&self) -> &[Conv3dLayer] {
        &self.hsi
    }

    pub fn lidar_layers(&self) -> &[Conv2dLayer] {
        &self.lidar
    }

    pub fn projectors(&self, stream: Stream) -> &[Conv2dLayer] {
        match stream {
            Stream::Hsi => &self.proj_hsi,
            Stream::Lidar => &self.proj_lidar,
        }
    }

    pub fn param_count(&self) -> usize {
        self.hsi.iter().map(Conv3dLayer::param_count).sum::<usize>()
            + self
                .lidar
                .iter()
                .map(Conv2dLayer::param_count)
                .sum::<usize>()
            + self
                .proj_hsi
                .iter()
                .chain(&self.proj_lidar)
                .map(Conv2dLayer::param_count)
                .sum::<usize>()
    }

    pub fn macs(&self) -> usize {
        let hsi: usize = self
            .hsi
            .iter()
            .zip(&self.spec.hsi_shapes)
            .map(|(l, s)| l.macs(s))
            .sum();
        let lidar: usize = self
            .lidar
            .iter()
            .zip(&self.spec.lidar_shapes)
            .map(|(l, s)| l.macs(s))
            .sum();
        let out = [
            self.projector.channels,
            self.projector.spatial,
            self.projector.spatial,
        ];
        let proj: usize = self
            .proj_hsi
            .iter()
            .chain(&self.proj_lidar)
            .map(|l| l.macs(&out))
            .sum();
        hsi + lidar + proj
    }
}
