//! Layer-by-layer summary of a built network.

use serde::{Deserialize, Serialize};

use crate::encoders::Stream;
use crate::model::{Cost, Dcmnet};
use crate::routing::{Block, RouterMode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub input: String,
    pub output: String,
    pub kernel: String,
}

/// `(a, b, c)`.
pub fn format_shape(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(usize::to_string).collect();
    format!("({})", parts.join(", "))
}

fn row(name: impl Into<String>, input: String, output: String, kernel: String) -> LayerRow {
    LayerRow {
        name: name.into(),
        input,
        output,
        kernel,
    }
}

pub fn layer_table(model: &Dcmnet) -> Vec<LayerRow> {
    let enc = &model.config.encoder;
    let spec = &model.encoders.spec;
    let (p, c, s) = (
        enc.patch,
        model.config.routing.channels,
        model.config.routing.spatial,
    );
    let routed = format_shape(&[c, s, s]);
    let mut rows = vec![row(
        "PCA",
        format_shape(&[enc.bands, p, p]),
        format_shape(&[enc.components, p, p]),
        "PCA projection".into(),
    )];

    let mut input: Vec<usize> = spec.hsi_input.to_vec();
    for (i, (layer, out)) in spec.hsi_layers.iter().zip(&spec.hsi_shapes).enumerate() {
        rows.push(row(
            format!("3D Conv{}", i + 1),
            format_shape(&input),
            format_shape(out),
            format!(
                "3D CNN ({}x{}x{}, stride={}, padding={})",
                layer.kd, layer.kh, layer.kw, layer.stride, layer.padding
            ),
        ));
        input = out.to_vec();
    }
    let mut input: Vec<usize> = spec.lidar_input.to_vec();
    for (i, (layer, out)) in spec.lidar_layers.iter().zip(&spec.lidar_shapes).enumerate() {
        rows.push(row(
            format!("2D Conv{}", i + 1),
            format_shape(&input),
            format_shape(out),
            format!(
                "2D CNN ({}x{}, stride={}, padding={})",
                layer.kh, layer.kw, layer.stride, layer.padding
            ),
        ));
        input = out.to_vec();
    }
    for (stream, tag) in [(Stream::Hsi, "HSI"), (Stream::Lidar, "LiDAR")] {
        for (level, layer) in model
            .encoders
            .projector
            .levels
            .iter()
            .zip(model.encoders.projectors(stream))
        {
            let spec_in = spec.projector_input(stream, *level);
            rows.push(row(
                format!("Projector {tag}{}", level + 1),
                format_shape(&spec_in),
                routed.clone(),
                format!(
                    "2D CNN ({}x{}, stride={}, padding={})",
                    layer.spec.kh, layer.spec.kw, layer.spec.stride, layer.spec.padding
                ),
            ));
        }
    }

    let routing = &model.config.routing;
    if routing.router == RouterMode::Soft {
        let hidden = routing.gate_hidden;
        rows.push(row(
            "Router",
            routed.clone(),
            format_shape(&[3]),
            format!(
                "FC ({}->{hidden}) + ReLU + FC ({hidden}->3) + restricted tanh",
                c * s * s
            ),
        ));
    }
    for b in routing.blocks() {
        let kernel = match b {
            Block::Bsab => "spatial bilinear attention + 3x3 conv",
            Block::Bcab => "channel bilinear attention + 3x3 conv",
            Block::Icb => "3x3 conv",
        };
        rows.push(row(
            b.name(),
            format!("{routed}, {routed}"),
            routed.clone(),
            format!("{kernel}, x{} layers", routing.layers),
        ));
    }
    rows.push(row(
        "Aggregation",
        routed,
        model.config.classes.to_string(),
        format!("mean + FC ({}->{})", c * s * s, model.config.classes),
    ));
    rows
}

pub fn render_table(rows: &[LayerRow], cost: &Cost) -> String {
    let header = ["Layer", "Input", "Output", "Kernel"];
    let cells: Vec<[&str; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.name.as_str(),
                r.input.as_str(),
                r.output.as_str(),
                r.kernel.as_str(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for c in &cells {
        for (w, v) in widths.iter_mut().zip(c) {
            *w = (*w).max(v.chars().count());
        }
    }
    let line = |c: [&str; 4]| -> String {
        let padded: Vec<String> = c
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect();
        padded.join(" | ").trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(header));
    out.push('\n');
    out.push_str(&widths.map(|w| "-".repeat(w)).join("-+-"));
    out.push('\n');
    for c in cells {
        out.push_str(&line(c));
        out.push('\n');
    }
    out.push_str(&format!(
        "parameters: {}\nflops per sample: {}\n",
        cost.params, cost.flops
    ));
    out
}
