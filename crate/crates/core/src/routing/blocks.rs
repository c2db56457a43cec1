use rand::Rng;

use super::attention::{channel_attention, spatial_attention, AttentionParams};
use super::{AttentionKind, Block};
use crate::error::{Error, Result};
use crate::numerics::{Conv2dLayer, Conv2dSpec, ParamStore, Tape, Var};

fn tokens(tape: &mut Tape<'_>, f: Var) -> Result<(Var, [usize; 3])> {
    let shape: [usize; 3] = tape
        .shape(f)
        .try_into()
        .map_err(|_| Error::shape("routing feature", tape.shape(f), &[0, 0, 0]))?;
    let flat = tape.reshape(f, &[shape[0], shape[1] * shape[2]])?;
    Ok((flat, shape))
}

fn cross_attention(
    tape: &mut Tape<'_>,
    fh: Var,
    fl: Var,
    params: &AttentionParams,
    kind: AttentionKind,
    vars: &[Var],
    attend: fn(&mut Tape<'_>, Var, Var, Var) -> Result<Var>,
) -> Result<(Var, Var)> {
    if tape.shape(fh) != tape.shape(fl) {
        return Err(Error::shape(
            "cross attention",
            tape.shape(fh),
            tape.shape(fl),
        ));
    }
    let (th, shape) = tokens(tape, fh)?;
    let (tl, _) = tokens(tape, fl)?;
    let (h, l) = params.qkv(tape, th, tl, vars)?;
    let (bh, bl) = AttentionParams::values(tape, &h, &l, kind)?;
    let ca_h = attend(tape, h.q, h.k, bh)?;
    let ca_l = attend(tape, l.q, l.k, bl)?;
    Ok((tape.reshape(ca_h, &shape)?, tape.reshape(ca_l, &shape)?))
}

/// Channel-wise cross-attention of both streams, `[c, s, s]` in and out.
pub fn bca_channel(
    tape: &mut Tape<'_>,
    fh: Var,
    fl: Var,
    params: &AttentionParams,
    kind: AttentionKind,
    vars: &[Var],
) -> Result<(Var, Var)> {
    cross_attention(tape, fh, fl, params, kind, vars, channel_attention)
}

/// Spatial-wise cross-attention of both streams, `[c, s, s]` in and out.
pub fn bca_spatial(
    tape: &mut Tape<'_>,
    fh: Var,
    fl: Var,
    params: &AttentionParams,
    kind: AttentionKind,
    vars: &[Var],
) -> Result<(Var, Var)> {
    cross_attention(tape, fh, fl, params, kind, vars, spatial_attention)
}

/// One calculation unit: optional cross-attention, then a shape-preserving
/// 3×3 convolution of `CA_h + CA_l + X` (or `F_h + F_l + X` for ICB).
#[derive(Debug, Clone)]
pub struct BlockUnit {
    pub kind: Block,
    pub attention: Option<AttentionParams>,
    pub conv: Conv2dLayer,
}

impl BlockUnit {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        kind: Block,
        c: usize,
        d: usize,
        rng: &mut R,
    ) -> Self {
        let attention = kind
            .has_attention()
            .then(|| AttentionParams::new(store, &format!("{prefix}.attn"), d, rng));
        let conv = Conv2dLayer::new(
            store,
            &format!("{prefix}.conv"),
            Conv2dSpec::new(c, c, 3, 3).with_padding(1),
            rng,
        );
        Self {
            kind,
            attention,
            conv,
        }
    }

    /// The summed input to the convolution. A missing `x` contributes
    /// nothing, exactly as a zero tensor would.
    pub fn mixed_input(
        &self,
        tape: &mut Tape<'_>,
        fh: Var,
        fl: Var,
        x: Option<Var>,
        kind: AttentionKind,
        vars: &[Var],
    ) -> Result<Var> {
        let (a, b) = match (&self.attention, self.kind) {
            (Some(p), Block::Bsab) => bca_spatial(tape, fh, fl, p, kind, vars)?,
            (Some(p), _) => bca_channel(tape, fh, fl, p, kind, vars)?,
            (None, _) => (fh, fl),
        };
        let sum = tape.add(a, b)?;
        match x {
            Some(x) => tape.add(sum, x),
            None => Ok(sum),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        fh: Var,
        fl: Var,
        x: Option<Var>,
        kind: AttentionKind,
        vars: &[Var],
    ) -> Result<Var> {
        let input = self.mixed_input(tape, fh, fl, x, kind, vars)?;
        self.conv.forward(tape, input, vars)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
            + self
                .attention
                .as_ref()
                .map_or(0, AttentionParams::param_count)
    }

    /// Convolution, Q/K/V maps and the two attention products per stream.
    pub fn macs(&self, c: usize, d: usize) -> usize {
        let s = (d as f64).sqrt().round() as usize;
        let conv = self.conv.macs(&[c, s, s]);
        let attn = match self.kind {
            Block::Icb => 0,
            Block::Bcab => 6 * c * d * d + 2 * 2 * c * c * d,
            Block::Bsab => 6 * c * d * d + 2 * 2 * d * d * c,
        };
        conv + attn
    }
}
