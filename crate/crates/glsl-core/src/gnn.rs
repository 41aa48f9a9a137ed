//! Interchangeable graph kernels behind one signature: attention-weighted
//! (GAT) and degree-normalized (GCN) layers. Both are built on the autodiff
//! tape so gradients flow through them.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{GlslError, Result};
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;
use crate::topology::Adjacency;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gat,
    Gcn,
}

impl std::str::FromStr for KernelKind {
    type Err = GlslError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gat" => Ok(KernelKind::Gat),
            "gcn" => Ok(KernelKind::Gcn),
            other => Err(GlslError::Config(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

fn activate(tape: &mut Tape, x: VarId, act: Activation) -> VarId {
    match act {
        Activation::Tanh => tape.tanh(x),
        Activation::Identity => x,
    }
}

/// How multi-head outputs are combined: concatenated (encoder layers,
/// output width K*F_out) or averaged (output layers, width F_out).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMerge {
    Concat,
    Average,
}

/// One attention head: projection B (F_out x F_in) and attention vector a
/// (length 2*F_out), referenced as tape leaves.
#[derive(Debug, Clone, Copy)]
pub struct GatHead {
    pub b: VarId,
    pub a: VarId,
}

/// Single GAT layer: per head, q_i = B h_i; e_ij = leaky-relu(a^T [q_i || q_j])
/// over neighbors; attention = per-row masked softmax; h_i' = act(sum alpha_ij q_j).
/// Heads merged per `merge`.
pub fn gat_layer_forward(
    tape: &mut Tape,
    h: VarId,
    adj: &Adjacency,
    heads: &[GatHead],
    slope: f64,
    act: Activation,
    merge: HeadMerge,
) -> Result<VarId> {
    let n = adj.n();
    if tape.value(h).rows() != n {
        return Err(GlslError::ShapeMismatch {
            op: "gat_layer_forward",
            lhs: tape.value(h).shape().to_vec(),
            rhs: vec![n, n],
        });
    }
    let mask: Rc<Vec<bool>> = Rc::new(adj.mask().to_vec());
    let mut outs = Vec::with_capacity(heads.len());
    for head in heads {
        let f_out = tape.value(head.b).rows();
        let bt = tape.transpose(head.b)?;
        let q = tape.matmul(h, bt)?; // N x F_out
        // a^T [q_i || q_j] splits into a_l . q_i + a_r . q_j
        let a_l = tape.slice(head.a, 0, 0, f_out)?;
        let a_r = tape.slice(head.a, 0, f_out, f_out)?;
        let a_l = tape.reshape(a_l, vec![f_out, 1])?;
        let a_r = tape.reshape(a_r, vec![f_out, 1])?;
        let s_l = tape.matmul(q, a_l)?; // N x 1
        let s_r = tape.matmul(q, a_r)?; // N x 1
        let e_l = tape.repeat_cols(s_l, n)?;
        let e_r_t = tape.repeat_cols(s_r, n)?;
        let e_r = tape.transpose(e_r_t)?;
        let scores = tape.add(e_l, e_r)?;
        let scores = tape.leaky_relu(scores, slope);
        let alpha = tape.masked_softmax_rows(scores, Rc::clone(&mask))?;
        let agg = tape.matmul(alpha, q)?;
        outs.push(activate(tape, agg, act));
    }
    merge_heads(tape, outs, merge)
}

fn merge_heads(tape: &mut Tape, outs: Vec<VarId>, merge: HeadMerge) -> Result<VarId> {
    let mut it = outs.into_iter();
    let first = it.next().expect("at least one head");
    match merge {
        HeadMerge::Concat => {
            let mut acc = first;
            for o in it {
                acc = tape.concat(1, acc, o)?;
            }
            Ok(acc)
        }
        HeadMerge::Average => {
            let mut acc = first;
            let mut count = 1usize;
            for o in it {
                acc = tape.add(acc, o)?;
                count += 1;
            }
            Ok(tape.scale(acc, 1.0 / count as f64))
        }
    }
}

/// Symmetric-normalized self-looped adjacency: A_hat = D^-1/2 (A+I) D^-1/2
/// with D the row sums of A+I. The diagonal is forced on regardless of the
/// input's self-loop flag.
pub fn normalize_adjacency(adj: &Adjacency) -> Tensor {
    let n = adj.n();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j || adj.get(i, j) {
                a[i * n + j] = 1.0;
            }
        }
    }
    let deg: Vec<f64> = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().sum::<f64>())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    Tensor::from_parts(vec![n, n], a)
}

/// Single GCN layer: act(A_hat H W^T). `a_hat` is the precomputed normalized
/// adjacency pushed on the tape as a constant leaf.
pub fn gcn_layer_forward(
    tape: &mut Tape,
    h: VarId,
    a_hat: VarId,
    w: VarId,
    act: Activation,
) -> Result<VarId> {
    let prop = tape.matmul(a_hat, h)?;
    let wt = tape.transpose(w)?;
    let out = tape.matmul(prop, wt)?;
    Ok(activate(tape, out, act))
}
