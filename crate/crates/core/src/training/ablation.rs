use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{evaluate, train, EvalReport, PreparedData, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Cost, Dcmnet, Modality, ModelConfig};
use crate::routing::{AttentionKind, Block, RouterMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Blocks,
    Router,
    Attention,
    Layers,
    Modality,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blocks" => Ok(Suite::Blocks),
            "router" => Ok(Suite::Router),
            "attention" => Ok(Suite::Attention),
            "layers" => Ok(Suite::Layers),
            "modality" => Ok(Suite::Modality),
            _ => Err(Error::Config(format!(
                "unknown suite {s:?}; expected blocks, router, attention, layers or modality"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub id: String,
    pub model: ModelConfig,
    pub modality: Modality,
}

/// The variant grid of `suite`, derived from `base`.
pub fn variants(suite: Suite, base: &ModelConfig, base_modality: Modality) -> Vec<Variant> {
    let with = |id: String, f: &dyn Fn(&mut ModelConfig)| {
        let mut model = base.clone();
        f(&mut model);
        Variant {
            id,
            model,
            modality: base_modality,
        }
    };
    match suite {
        Suite::Blocks => (1u8..8)
            .map(|mask| {
                let blocks: Vec<Block> = Block::ALL
                    .into_iter()
                    .filter(|b| mask & (1 << b.index()) != 0)
                    .collect();
                let id = blocks
                    .iter()
                    .map(|b| b.name())
                    .collect::<Vec<_>>()
                    .join("+");
                with(id, &|m| m.routing.enabled_blocks = blocks.clone())
            })
            .collect(),
        Suite::Router => vec![
            with("soft".into(), &|m| m.routing.router = RouterMode::Soft),
            with("uniform_average".into(), &|m| {
                m.routing.router = RouterMode::UniformAverage
            }),
            with("off".into(), &|m| {
                m.routing.router = RouterMode::Off;
                m.routing.enabled_blocks = vec![Block::Icb];
            }),
        ],
        Suite::Attention => vec![
            with("self".into(), &|m| {
                m.routing.attention = AttentionKind::SelfAttention
            }),
            with("bilinear".into(), &|m| {
                m.routing.attention = AttentionKind::Bilinear
            }),
        ],
        Suite::Layers => (1..=3)
            .map(|l| with(format!("L{l}"), &|m| m.routing.layers = l))
            .collect(),
        Suite::Modality => [Modality::L, Modality::H, Modality::HL]
            .into_iter()
            .map(|md| Variant {
                id: format!("{md:?}"),
                model: base.clone(),
                modality: md,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub config: ModelConfig,
    pub cost: Cost,
    pub loss_history: Vec<f64>,
    pub train: EvalReport,
    pub test: EvalReport,
}

/// Trains and scores every variant under the same seed and data. Variants
/// run as independent parallel jobs; results keep the grid order.
pub fn run_ablation(
    suite: Suite,
    base: &ModelConfig,
    cfg: &TrainConfig,
    data: &PreparedData,
) -> Result<Vec<AblationRow>> {
    if data.test.is_empty() {
        return Err(Error::Data("ablation needs a test split".into()));
    }
    variants(suite, base, cfg.modality)
        .into_par_iter()
        .map(|v| {
            let mut model = Dcmnet::new(v.model, cfg.seed)?;
            let run_cfg = TrainConfig {
                modality: v.modality,
                ..cfg.clone()
            };
            let outcome = train(&mut model, &data.train, &run_cfg)?;
            Ok(AblationRow {
                variant: v.id,
                cost: model.cost(),
                train: evaluate(&model, &data.train)?.report,
                test: evaluate(&model, &data.test)?.report,
                config: model.config,
                loss_history: outcome.loss_history,
            })
        })
        .collect()
}
