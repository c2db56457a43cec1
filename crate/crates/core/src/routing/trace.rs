use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Gate values of one sample: `layers[k][from][to]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTrace {
    pub layers: Vec<[[f64; 3]; 3]>,
}

impl RoutingTrace {
    pub fn zeros(layers: usize) -> Self {
        Self {
            layers: vec![[[0.0; 3]; 3]; layers],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

/// A path from block `from` in layer `layer` to block `to` of the next
/// layer. Edges out of the last layer are terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub layer: usize,
    pub from: usize,
    pub to: usize,
    pub terminal: bool,
}

/// All edges whose weight is at least `threshold`.
pub fn extract_paths(trace: &RoutingTrace, threshold: f64) -> Vec<Edge> {
    let last = trace.layers.len().saturating_sub(1);
    let mut edges = Vec::new();
    for (layer, w) in trace.layers.iter().enumerate() {
        for (from, row) in w.iter().enumerate() {
            for (to, &v) in row.iter().enumerate() {
                if v >= threshold {
                    edges.push(Edge {
                        layer,
                        from,
                        to,
                        terminal: layer == last,
                    });
                }
            }
        }
    }
    edges
}

/// Aggregate path statistics over a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub threshold: f64,
    pub samples: usize,
    /// `usage[k][i]`: share of samples where block `i` of layer `k` has at
    /// least one active outgoing edge.
    pub usage: Vec<[f64; 3]>,
    /// Per class label, active-edge counts `[k][from][to]`.
    pub class_histograms: BTreeMap<u16, Vec<[[usize; 3]; 3]>>,
}

pub fn summarize_paths(traces: &[(u16, &RoutingTrace)], threshold: f64) -> PathSummary {
    let layers = traces.first().map_or(0, |(_, t)| t.num_layers());
    let mut usage = vec![[0.0; 3]; layers];
    let mut class_histograms: BTreeMap<u16, Vec<[[usize; 3]; 3]>> = BTreeMap::new();
    for (label, trace) in traces {
        let hist = class_histograms
            .entry(*label)
            .or_insert_with(|| vec![[[0; 3]; 3]; layers]);
        let mut used = vec![[false; 3]; layers];
        for e in extract_paths(trace, threshold) {
            hist[e.layer][e.from][e.to] += 1;
            used[e.layer][e.from] = true;
        }
        for (u, flags) in usage.iter_mut().zip(&used) {
            for (acc, &f) in u.iter_mut().zip(flags) {
                if f {
                    *acc += 1.0;
                }
            }
        }
    }
    let n = traces.len().max(1) as f64;
    usage
        .iter_mut()
        .for_each(|u| u.iter_mut().for_each(|v| *v /= n));
    PathSummary {
        threshold,
        samples: traces.len(),
        usage,
        class_histograms,
    }
}
