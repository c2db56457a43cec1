use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::encoders::{EncoderSpec, Encoders, ProjectorSpec};
use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore, Tape, Tensor, Var};
use crate::preprocessing::PatchPair;
use crate::rng::{stream, Stream};
use crate::routing::{ForwardOptions, RoutingOutput, RoutingSpace, RoutingTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub params: usize,
    pub macs: usize,
    /// Two operations per multiply-accumulate.
    pub flops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    /// Zero-based arg-max class.
    pub class: usize,
    pub trace: RoutingTrace,
}

/// Recorded forward pass: output nodes plus the parameter leaves.
pub struct Pass {
    pub output: RoutingOutput,
    pub params: Vec<Var>,
    pub hsi: Var,
    pub lidar: Var,
}

#[derive(Debug, Clone)]
pub struct Dcmnet {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub routing: RoutingSpace,
}

impl Dcmnet {
    /// Builds the network, drawing initial weights from the seed's init
    /// stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_rng(config, &mut stream(seed, Stream::Init))
    }

    pub fn with_rng<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let s = config.routing.spatial;
        let spec = EncoderSpec::build(&config.encoder, s)?;
        let projector =
            ProjectorSpec::build(&spec, config.routing.channels, s, &config.used_levels())?;
        let mut store = ParamStore::new();
        let encoders = Encoders::new(&mut store, spec, projector, rng);
        let routing = RoutingSpace::new(&mut store, config.routing.clone(), config.classes, rng)?;
        Ok(Self {
            config,
            store,
            encoders,
            routing,
        })
    }

    pub fn cost(&self) -> Cost {
        let macs = self.encoders.macs() + self.routing.macs();
        Cost {
            params: self.store.scalar_count(),
            macs,
            flops: 2 * macs,
        }
    }

    fn check_sample(&self, sample: &PatchPair) -> Result<()> {
        let enc = &self.config.encoder;
        let want_h = [enc.components, enc.patch, enc.patch];
        if sample.hsi.shape() != want_h {
            return Err(Error::shape("hsi patch", sample.hsi.shape(), &want_h));
        }
        let want_l = [enc.lidar_channels, enc.patch, enc.patch];
        if sample.lidar.shape() != want_l {
            return Err(Error::shape("lidar patch", sample.lidar.shape(), &want_l));
        }
        Ok(())
    }

    fn check_label(&self, sample: &PatchPair) -> Result<()> {
        if sample.label == 0 || sample.label as usize > self.config.classes {
            return Err(Error::LabelOutOfRange {
                label: sample.label as usize,
                classes: self.config.classes,
            });
        }
        Ok(())
    }

    /// Records a full forward pass. With `track` set the parameters are
    /// differentiable leaves. The modality setting replaces an unused
    /// stream's patch by zeros.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        sample: &'a PatchPair,
        track: bool,
        opts: &ForwardOptions,
    ) -> Result<Pass> {
        self.check_sample(sample)?;
        let params = self.store.register(tape, track);
        let modality = self.config.modality;
        let hsi = if modality.uses_hsi() {
            tape.constant(&sample.hsi)
        } else {
            tape.constant(Tensor::zeros(sample.hsi.shape()))
        };
        let lidar = if modality.uses_lidar() {
            tape.constant(&sample.lidar)
        } else {
            tape.constant(Tensor::zeros(sample.lidar.shape()))
        };
        let output = self.forward_vars(tape, hsi, lidar, &params, opts)?;
        Ok(Pass {
            output,
            params,
            hsi,
            lidar,
        })
    }

    /// Forward from already-recorded input and parameter nodes.
    pub fn forward_vars(
        &self,
        tape: &mut Tape<'_>,
        hsi: Var,
        lidar: Var,
        params: &[Var],
        opts: &ForwardOptions,
    ) -> Result<RoutingOutput> {
        let levels = self.encoders.forward(tape, hsi, lidar, params)?;
        self.routing.forward(tape, &levels, params, opts)
    }

    pub fn predict(&self, sample: &PatchPair) -> Result<Prediction> {
        self.predict_with(sample, &ForwardOptions::default())
    }

    pub fn predict_with(&self, sample: &PatchPair, opts: &ForwardOptions) -> Result<Prediction> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, sample, false, opts)?;
        let logits = tape.value(pass.output.logits).data().to_vec();
        let class = argmax(&logits);
        Ok(Prediction {
            logits,
            class,
            trace: pass.output.trace,
        })
    }

    /// Cross-entropy of one sample and its parameter gradients, aligned with
    /// the store order.
    pub fn loss_and_grads(&self, sample: &PatchPair) -> Result<(f64, Gradients, Vec<Var>)> {
        self.check_label(sample)?;
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, sample, true, &ForwardOptions::default())?;
        let loss = tape.cross_entropy(pass.output.logits, sample.target())?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((value, grads, pass.params))
    }

    pub fn loss(&self, sample: &PatchPair) -> Result<f64> {
        self.check_label(sample)?;
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, sample, false, &ForwardOptions::default())?;
        let loss = tape.cross_entropy(pass.output.logits, sample.target())?;
        Ok(tape.value(loss).data()[0])
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}
