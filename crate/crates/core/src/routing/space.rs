use rand::Rng;

use super::blocks::BlockUnit;
use super::gate::RoutingGate;
use super::trace::RoutingTrace;
use super::{Block, RouterMode, RoutingConfig};
use crate::encoders::ProjectedLevels;
use crate::error::{Error, Result};
use crate::numerics::{LinearLayer, ParamStore, Tape, Var};

/// Per layer, per source block, per destination entry: `Some(v)` replaces
/// the gate output by the constant `v`.
pub type GatePins = Vec<[[Option<f64>; 3]; 3]>;

/// `X_i = Σ_j w_{j,i} · H_j` over sources present in both `h` and `gates`.
/// Returns `None` when no source contributes.
pub fn aggregate(
    tape: &mut Tape<'_>,
    h: &[Option<Var>; 3],
    gates: &[Option<Var>; 3],
    target: usize,
) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for (hj, gj) in h.iter().zip(gates) {
        if let (Some(hj), Some(gj)) = (hj, gj) {
            let term = tape.scale_by(*hj, *gj, target)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    pub pins: Option<GatePins>,
    /// Blocks averaged by the head; all enabled blocks when unset.
    pub head_blocks: Option<Vec<Block>>,
}

#[derive(Debug, Clone)]
pub struct RoutingOutput {
    pub logits: Var,
    /// Gate vectors per layer and source block (soft router only).
    pub gates: Vec<[Option<Var>; 3]>,
    /// Block outputs per layer.
    pub outputs: Vec<[Option<Var>; 3]>,
    pub trace: RoutingTrace,
}

#[derive(Debug, Clone)]
struct RoutingLayer {
    units: [Option<BlockUnit>; 3],
    gates: [Option<RoutingGate>; 3],
}

#[derive(Debug, Clone)]
pub struct RoutingSpace {
    pub config: RoutingConfig,
    layers: Vec<RoutingLayer>,
    pub head: LinearLayer,
}

impl RoutingSpace {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: RoutingConfig,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (c, d) = (config.channels, config.tokens());
        let layers = (0..config.layers)
            .map(|k| {
                let mut units: [Option<BlockUnit>; 3] = Default::default();
                let mut gates: [Option<RoutingGate>; 3] = Default::default();
                for b in config.blocks() {
                    let prefix = format!("route{}.{}", k + 1, b.name());
                    units[b.index()] = Some(BlockUnit::new(store, &prefix, b, c, d, rng));
                    if config.router == RouterMode::Soft {
                        gates[b.index()] = Some(RoutingGate::new(
                            store,
                            &format!("{prefix}.gate"),
                            c * d,
                            config.gate_hidden,
                            rng,
                        ));
                    }
                }
                RoutingLayer { units, gates }
            })
            .collect();
        let head = LinearLayer::new(store, "head", c * d, classes, rng);
        Ok(Self {
            config,
            layers,
            head,
        })
    }

    pub fn unit(&self, layer: usize, block: Block) -> Option<&BlockUnit> {
        self.layers.get(layer)?.units[block.index()].as_ref()
    }

    pub fn gate(&self, layer: usize, block: Block) -> Option<&RoutingGate> {
        self.layers.get(layer)?.gates[block.index()].as_ref()
    }

    pub fn param_count(&self) -> usize {
        let layers: usize = self
            .layers
            .iter()
            .map(|l| {
                l.units
                    .iter()
                    .flatten()
                    .map(BlockUnit::param_count)
                    .sum::<usize>()
                    + l.gates
                        .iter()
                        .flatten()
                        .map(RoutingGate::param_count)
                        .sum::<usize>()
            })
            .sum();
        layers + self.head.param_count()
    }

    pub fn macs(&self) -> usize {
        let (c, d) = (self.config.channels, self.config.tokens());
        let layers: usize = self
            .layers
            .iter()
            .map(|l| {
                l.units
                    .iter()
                    .flatten()
                    .map(|u| u.macs(c, d))
                    .sum::<usize>()
                    + l.gates
                        .iter()
                        .flatten()
                        .map(RoutingGate::macs)
                        .sum::<usize>()
            })
            .sum();
        layers + self.head.macs(1)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        levels: &ProjectedLevels,
        vars: &[Var],
        opts: &ForwardOptions,
    ) -> Result<RoutingOutput> {
        let cfg = &self.config;
        if levels.hsi.len() < cfg.layers || levels.lidar.len() < cfg.layers {
            return Err(Error::Config(format!(
                "{} routing layers need as many projected levels, got {}",
                cfg.layers,
                levels.hsi.len().min(levels.lidar.len())
            )));
        }
        if opts.pins.is_some() && cfg.router != RouterMode::Soft {
            return Err(Error::Config("gate pins require the soft router".into()));
        }
        if let Some(p) = &opts.pins {
            if p.len() != cfg.layers {
                return Err(Error::Config(format!(
                    "expected pins for {} layers, got {}",
                    cfg.layers,
                    p.len()
                )));
            }
        }
        let blocks = cfg.blocks();
        let enabled = |i: usize| blocks.iter().any(|b| b.index() == i);

        let mut x: [Option<Var>; 3] = [None; 3];
        let mut all_gates = Vec::with_capacity(cfg.layers);
        let mut all_outputs = Vec::with_capacity(cfg.layers);
        let mut trace = RoutingTrace::zeros(cfg.layers);
        for (k, layer) in self.layers.iter().enumerate() {
            let (fh, fl) = (levels.hsi[k], levels.lidar[k]);
            let mut h: [Option<Var>; 3] = [None; 3];
            for (i, unit) in layer.units.iter().enumerate() {
                if let Some(unit) = unit {
                    h[i] = Some(unit.forward(tape, fh, fl, x[i], cfg.attention, vars)?);
                }
            }

            let mut g: [Option<Var>; 3] = [None; 3];
            let w = &mut trace.layers[k];
            match cfg.router {
                RouterMode::Soft => {
                    for (i, gate) in layer.gates.iter().enumerate() {
                        let Some(gate) = gate else { continue };
                        let mut gv = gate.forward(tape, fh, fl, x[i], vars)?;
                        if let Some(p) = &opts.pins {
                            gv = tape.pin(gv, &p[k][i])?;
                        }
                        let values = tape.value(gv).data();
                        for j in 0..3 {
                            w[i][j] = if enabled(j) { values[j] } else { 0.0 };
                        }
                        g[i] = Some(gv);
                    }
                }
                RouterMode::UniformAverage => {
                    for i in 0..3 {
                        for j in 0..3 {
                            w[i][j] = if enabled(i) && enabled(j) { 1.0 } else { 0.0 };
                        }
                    }
                }
                RouterMode::Off => {
                    for i in 0..3 {
                        w[i][i] = if enabled(i) { 1.0 } else { 0.0 };
                    }
                }
            }

            if k + 1 < cfg.layers {
                let mut next: [Option<Var>; 3] = [None; 3];
                for b in &blocks {
                    let i = b.index();
                    next[i] = match cfg.router {
                        RouterMode::Soft => aggregate(tape, &h, &g, i)?,
                        RouterMode::UniformAverage => {
                            let present: Vec<Var> = h.iter().flatten().copied().collect();
                            Some(tape.add_all(&present)?)
                        }
                        RouterMode::Off => h[i],
                    };
                }
                x = next;
            }
            all_gates.push(g);
            all_outputs.push(h);
        }

        let last = all_outputs.last().expect("at least one layer");
        let head_blocks = opts.head_blocks.clone().unwrap_or_else(|| blocks.clone());
        let finals: Vec<Var> = head_blocks
            .iter()
            .map(|b| {
                last[b.index()]
                    .ok_or_else(|| Error::Config(format!("head block {} is not enabled", b.name())))
            })
            .collect::<Result<_>>()?;
        let sum = tape.add_all(&finals)?;
        let mean = tape.scale(sum, 1.0 / finals.len() as f64)?;
        let n = tape.value(mean).len();
        let flat = tape.reshape(mean, &[n])?;
        let logits = self.head.forward(tape, flat, vars)?;
        Ok(RoutingOutput {
            logits,
            gates: all_gates,
            outputs: all_outputs,
            trace,
        })
    }
}
