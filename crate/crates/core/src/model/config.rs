use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::routing::{AttentionKind, Block, RouterMode, RoutingConfig};

/// Which input streams reach the network; the absent one is fed zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Modality {
    #[default]
    HL,
    H,
    L,
}

impl Modality {
    pub fn uses_hsi(self) -> bool {
        self != Modality::L
    }

    pub fn uses_lidar(self) -> bool {
        self != Modality::H
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HL" | "hl" => Ok(Modality::HL),
            "H" | "h" => Ok(Modality::H),
            "L" | "l" => Ok(Modality::L),
            _ => Err(Error::Config(format!(
                "unknown modality {s:?}; expected HL, H or L"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub routing: RoutingConfig,
    pub classes: usize,
    #[serde(default)]
    pub modality: Modality,
}

impl ModelConfig {
    /// Full-scale configuration for 144-band, 15-class scenes with 11×11
    /// patches.
    pub fn houston2013() -> Self {
        Self {
            encoder: EncoderConfig {
                bands: 144,
                components: 30,
                patch: 11,
                lidar_channels: 1,
                hsi_channels: [8, 16, 32],
                lidar_features: [64, 128, 128],
            },
            routing: RoutingConfig {
                layers: 3,
                channels: 128,
                spatial: 3,
                gate_hidden: 256,
                enabled_blocks: Block::ALL.to_vec(),
                attention: AttentionKind::Bilinear,
                router: RouterMode::Soft,
            },
            classes: 15,
            modality: Modality::HL,
        }
    }

    /// Narrow model sized for single-core training on small scenes.
    pub fn desk(bands: usize, lidar_channels: usize, classes: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                bands,
                components: bands.min(10),
                patch: 9,
                lidar_channels,
                hsi_channels: [4, 8, 8],
                lidar_features: [8, 16, 16],
            },
            routing: RoutingConfig {
                layers: 3,
                channels: 8,
                spatial: 3,
                gate_hidden: 16,
                enabled_blocks: Block::ALL.to_vec(),
                attention: AttentionKind::Bilinear,
                router: RouterMode::Soft,
            },
            classes,
            modality: Modality::HL,
        }
    }

    /// Smallest full configuration (`c = 8`, `s = 3`, three layers).
    pub fn tiny() -> Self {
        Self {
            encoder: EncoderConfig {
                bands: 6,
                components: 4,
                patch: 9,
                lidar_channels: 1,
                hsi_channels: [2, 2, 2],
                lidar_features: [2, 3, 3],
            },
            routing: RoutingConfig {
                layers: 3,
                channels: 8,
                spatial: 3,
                gate_hidden: 4,
                enabled_blocks: Block::ALL.to_vec(),
                attention: AttentionKind::Bilinear,
                router: RouterMode::Soft,
            },
            classes: 3,
            modality: Modality::HL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        self.routing.validate()
    }

    /// Encoder levels consumed by the routing layers, ascending.
    pub fn used_levels(&self) -> Vec<usize> {
        (0..self.routing.layers)
            .map(|k| self.routing.level_for_layer(k))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let cfg = ModelConfig::houston2013();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"BSAB\""));
        assert!(text.contains("\"bilinear\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn modality_parse() {
        assert_eq!("H".parse::<Modality>().unwrap(), Modality::H);
        assert!("X".parse::<Modality>().is_err());
    }
}
