//! Layered routing space: BSAB/BCAB/ICB units, soft gates and aggregation.

pub mod attention;
pub mod blocks;
pub mod gate;
pub mod space;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use attention::{bilinear_values, channel_attention, spatial_attention, AttentionParams, Qkv};
pub use blocks::{bca_channel, bca_spatial, BlockUnit};
pub use gate::RoutingGate;
pub use space::{aggregate, ForwardOptions, GatePins, RoutingOutput, RoutingSpace};
pub use trace::{extract_paths, summarize_paths, Edge, PathSummary, RoutingTrace};

/// Calculation unit kinds, in routing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    #[serde(rename = "BSAB")]
    Bsab,
    #[serde(rename = "BCAB")]
    Bcab,
    #[serde(rename = "ICB")]
    Icb,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Bsab, Block::Bcab, Block::Icb];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::Bsab => "BSAB",
            Block::Bcab => "BCAB",
            Block::Icb => "ICB",
        }
    }

    pub fn has_attention(self) -> bool {
        self != Block::Icb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Bilinear,
    #[serde(rename = "self")]
    SelfAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterMode {
    Soft,
    /// Every path weight fixed to 1.
    UniformAverage,
    /// No gates; block `i` feeds only block `i` of the next layer.
    Off,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub layers: usize,
    pub channels: usize,
    /// Spatial edge `s`; tokens per channel are `d = s²`.
    pub spatial: usize,
    pub gate_hidden: usize,
    pub enabled_blocks: Vec<Block>,
    pub attention: AttentionKind,
    pub router: RouterMode,
}

impl RoutingConfig {
    pub fn tokens(&self) -> usize {
        self.spatial * self.spatial
    }

    pub fn is_enabled(&self, block: Block) -> bool {
        self.enabled_blocks.contains(&block)
    }

    /// Enabled blocks in canonical order.
    pub fn blocks(&self) -> Vec<Block> {
        Block::ALL
            .into_iter()
            .filter(|b| self.is_enabled(*b))
            .collect()
    }

    /// Encoder level consumed by routing layer `k`: the deepest `L` levels.
    pub fn level_for_layer(&self, k: usize) -> usize {
        crate::encoders::LEVELS - self.layers + k
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::encoders::LEVELS).contains(&self.layers) {
            return Err(Error::Config(format!(
                "routing layers must be 1..=3, got {}",
                self.layers
            )));
        }
        if self.enabled_blocks.is_empty() {
            return Err(Error::Config("at least one block must be enabled".into()));
        }
        let mut seen = self.enabled_blocks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.enabled_blocks.len() {
            return Err(Error::Config("enabled blocks contain duplicates".into()));
        }
        if self.channels == 0 || self.spatial == 0 {
            return Err(Error::Config(
                "routing channels and spatial size must be positive".into(),
            ));
        }
        if self.router == RouterMode::Soft && self.gate_hidden == 0 {
            return Err(Error::Config("gate hidden width must be positive".into()));
        }
        Ok(())
    }
}
