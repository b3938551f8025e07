//! Per-agent history encoding and masked social pooling.
//!
//! Histories are encoded agent-by-agent, then aggregated with single-head
//! scaled dot-product self-attention. A binary spatial-temporal mask decides
//! which agents may attend to each other; masked logits get -1e9 added before
//! the softmax, which underflows their attention weights to exactly zero.

use crate::error::Result;
use crate::linalg::Matrix;
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{mlp_forward, NodeId, Tape};

const MASK_NEG: f64 = -1e9;

/// Binary spatial-temporal adjacency between agents.
#[derive(Debug, Clone)]
pub struct PoolingMask {
    /// `n x n` matrix of 0.0 / 1.0 entries.
    pub m: Matrix,
    pub threshold_d: f64,
}

impl PoolingMask {
    pub fn n(&self) -> usize {
        self.m.rows
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = 1.0;
        }
        PoolingMask {
            m,
            threshold_d: 0.0,
        }
    }

    /// Additive logit bias: 0 where connected, -1e9 where masked.
    pub fn logit_bias(&self) -> Matrix {
        self.m.map(|v| if v == 1.0 { 0.0 } else { MASK_NEG })
    }
}

/// Mask from raw (dataset-unit) past positions: agents i and j are adjacent
/// iff the minimum distance between any of i's and any of j's past positions,
/// over all time-step pairs, is at most `d`.
pub fn build_mask(raw_past: &[[f64; 2]], n: usize, t_past: usize, d: f64) -> PoolingMask {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut min_sq = f64::INFINITY;
            for t in 0..t_past {
                let pi = raw_past[i * t_past + t];
                for s in 0..t_past {
                    let pj = raw_past[j * t_past + s];
                    let dx = pi[0] - pj[0];
                    let dy = pi[1] - pj[1];
                    let sq = dx * dx + dy * dy;
                    if sq < min_sq {
                        min_sq = sq;
                    }
                }
            }
            *m.at_mut(i, j) = if min_sq.sqrt() <= d { 1.0 } else { 0.0 };
        }
    }
    PoolingMask { m, threshold_d: d }
}

/// Encode flattened per-agent histories (`[n x t_past*2]`) with the history
/// encoder MLP. Row-wise, hence agent-order equivariant.
pub fn encode_past(
    tape: &mut Tape,
    params: &ParamStore,
    past: NodeId,
    layers: &[String],
) -> Result<NodeId> {
    mlp_forward(tape, params, past, layers)
}

/// Parameter names of the attention block.
pub struct AttentionNames {
    pub query: String,
    pub key: String,
    pub value: String,
    pub output: String,
}

impl AttentionNames {
    pub fn new(prefix: &str) -> Self {
        AttentionNames {
            query: format!("{prefix}.q"),
            key: format!("{prefix}.k"),
            value: format!("{prefix}.v"),
            output: format!("{prefix}.out"),
        }
    }
}

/// Masked single-head self-attention over agent encodings with a residual
/// connection and an output projection. Returns (context, attention).
pub fn social_pool_with_attention(
    tape: &mut Tape,
    params: &ParamStore,
    x_enc: NodeId,
    mask: &PoolingMask,
    names: &AttentionNames,
) -> Result<(NodeId, NodeId)> {
    let lin = |tape: &mut Tape, x: NodeId, name: &str| -> Result<NodeId> {
        let w = tape.param(params, &format!("{name}.w"))?;
        let b = tape.param(params, &format!("{name}.b"))?;
        tape.affine(x, w, b)
    };
    let q = lin(tape, x_enc, &names.query)?;
    let k = lin(tape, x_enc, &names.key)?;
    let v = lin(tape, x_enc, &names.value)?;
    let dk = tape.value(q).cols as f64;
    let logits = tape.matmul_nt(q, k)?;
    let scaled = tape.scale(logits, 1.0 / dk.sqrt());
    let bias = tape.constant(mask.logit_bias());
    let masked = tape.add(scaled, bias)?;
    let attn = tape.row_softmax(masked);
    let pooled = tape.matmul(attn, v)?;
    let residual = tape.add(pooled, x_enc)?;
    let out = lin(tape, residual, &names.output)?;
    Ok((out, attn))
}

/// Masked social pooling: the per-agent context feature used downstream.
pub fn social_pool(
    tape: &mut Tape,
    params: &ParamStore,
    x_enc: NodeId,
    mask: &PoolingMask,
    names: &AttentionNames,
) -> Result<NodeId> {
    Ok(social_pool_with_attention(tape, params, x_enc, mask, names)?.0)
}
