//! Bilinear cross-attention over `c × d` token matrices.

use rand::Rng;

use super::AttentionKind;
use crate::error::{Error, Result};
use crate::numerics::{LinearLayer, ParamStore, Tape, Var};

/// Query, key and value of one stream, each `[c, d]`.
#[derive(Debug, Clone, Copy)]
pub struct Qkv {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

/// `B_h = V_h ⊙ Q_l`, `B_l = V_l ⊙ Q_h`.
pub fn bilinear_values(tape: &mut Tape<'_>, h: &Qkv, l: &Qkv) -> Result<(Var, Var)> {
    Ok((tape.mul(h.v, l.q)?, tape.mul(l.v, h.q)?))
}

/// `softmax_rows(Q Kᵀ / √d) · B`: a `c × c` attention mixing channels.
pub fn channel_attention(tape: &mut Tape<'_>, q: Var, k: Var, b: Var) -> Result<Var> {
    let d = tape.shape(q)[1];
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt())?;
    let a = tape.softmax(logits, 1)?;
    tape.matmul(a, b)
}

/// `B · softmax_rows(Qᵀ K / √c)ᵀ`: a `d × d` attention mixing positions
/// within every channel row.
pub fn spatial_attention(tape: &mut Tape<'_>, q: Var, k: Var, b: Var) -> Result<Var> {
    let c = tape.shape(q)[0];
    let qt = tape.transpose(q)?;
    let logits = tape.matmul(qt, k)?;
    let logits = tape.scale(logits, 1.0 / (c as f64).sqrt())?;
    let a = tape.softmax(logits, 1)?;
    let at = tape.transpose(a)?;
    tape.matmul(b, at)
}

/// Six per-token linear maps `d → d`: Q, K, V for each stream.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub q_h: LinearLayer,
    pub k_h: LinearLayer,
    pub v_h: LinearLayer,
    pub q_l: LinearLayer,
    pub k_l: LinearLayer,
    pub v_l: LinearLayer,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        rng: &mut R,
    ) -> Self {
        let mut map = |name: &str| LinearLayer::new(store, &format!("{prefix}.{name}"), d, d, rng);
        Self {
            q_h: map("q_h"),
            k_h: map("k_h"),
            v_h: map("v_h"),
            q_l: map("q_l"),
            k_l: map("k_l"),
            v_l: map("v_l"),
        }
    }

    pub fn layers(&self) -> [&LinearLayer; 6] {
        [
            &self.q_h, &self.k_h, &self.v_h, &self.q_l, &self.k_l, &self.v_l,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// `fh`, `fl` are `[c, d]`.
    pub fn qkv(&self, tape: &mut Tape<'_>, fh: Var, fl: Var, vars: &[Var]) -> Result<(Qkv, Qkv)> {
        if tape.shape(fh) != tape.shape(fl) || tape.shape(fh).len() != 2 {
            return Err(Error::shape(
                "attention inputs",
                tape.shape(fh),
                tape.shape(fl),
            ));
        }
        let h = Qkv {
            q: self.q_h.forward(tape, fh, vars)?,
            k: self.k_h.forward(tape, fh, vars)?,
            v: self.v_h.forward(tape, fh, vars)?,
        };
        let l = Qkv {
            q: self.q_l.forward(tape, fl, vars)?,
            k: self.k_l.forward(tape, fl, vars)?,
            v: self.v_l.forward(tape, fl, vars)?,
        };
        Ok((h, l))
    }

    /// Values entering the attention: bilinear products or plain `V`.
    pub fn values(
        tape: &mut Tape<'_>,
        h: &Qkv,
        l: &Qkv,
        kind: AttentionKind,
    ) -> Result<(Var, Var)> {
        match kind {
            AttentionKind::Bilinear => bilinear_values(tape, h, l),
            AttentionKind::SelfAttention => Ok((h.v, l.v)),
        }
    }
}
