//! JSON and CSV exports of evaluation runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ablation::AblationRow;
use super::train::{EvalReport, Evaluation};
use crate::binio::atomic_write;
use crate::error::Result;
use crate::model::{Cost, ModelConfig};
use crate::routing::{extract_paths, summarize_paths, Edge, PathSummary, RoutingTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub split: String,
    pub config: ModelConfig,
    pub cost: Cost,
    pub evaluation: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRoute {
    pub label: u16,
    pub gates: RoutingTrace,
    pub active_edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub threshold: f64,
    pub samples: Vec<SampleRoute>,
    pub summary: PathSummary,
}

impl TraceReport {
    pub fn from_evaluation(eval: &Evaluation, threshold: f64) -> Self {
        let samples = eval
            .traces
            .iter()
            .map(|(label, t)| SampleRoute {
                label: *label,
                gates: t.clone(),
                active_edges: extract_paths(t, threshold),
            })
            .collect();
        let refs: Vec<(u16, &RoutingTrace)> = eval.traces.iter().map(|(l, t)| (*l, t)).collect();
        Self {
            threshold,
            samples,
            summary: summarize_paths(&refs, threshold),
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    atomic_write(path.as_ref(), &text)
}

/// One line per variant: id, test OA/AA/Kappa, parameters and FLOPs.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "oa", "aa", "kappa", "params", "flops"])?;
    for r in rows {
        let m = &r.test.metrics;
        w.write_record([
            r.variant.clone(),
            format!("{:.6}", m.oa),
            format!("{:.6}", m.aa),
            format!("{:.6}", m.kappa),
            r.cost.params.to_string(),
            r.cost.flops.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| crate::Error::Data(e.to_string()))
}

pub fn write_ablation_csv(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &ablation_csv(rows)?)
}
