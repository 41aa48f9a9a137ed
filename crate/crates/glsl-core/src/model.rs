//! The wrapper autoencoder: per-mode local FC and global GNN branches fused
//! by learnable mode weights, two stacked GRU cells into the latent code,
//! a mirrored GRU decoder with FC and GNN reconstruction branches, and a
//! linear anomaly classifier on top of the latent code and residuals.
//!
//! A forward pass builds one tape; the recurrent state is re-entered as
//! constant leaves each window, so gradients never cross window boundaries.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::WindowTensor;
use crate::error::{GlslError, Result};
use crate::gnn::{
    gat_layer_forward, gcn_layer_forward, normalize_adjacency, Activation, GatHead, HeadMerge,
    KernelKind,
};
use crate::params::ParamStore;
use crate::rng::rng_for;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;
use crate::topology::Adjacency;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub modes: usize,
    pub nodes: usize,
    /// Window width W: columns per node per mode.
    pub window: usize,
    /// Fused embedding width d (even; each branch produces d/2).
    pub embed: usize,
    /// Latent code width per node.
    pub latent: usize,
    pub kernel: KernelKind,
    /// Attention heads per GAT layer; ignored for GCN.
    pub heads: usize,
    pub leaky_slope: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || self.nodes == 0 || self.window == 0 || self.latent == 0 {
            return Err(GlslError::Config("model dimensions must be positive".into()));
        }
        if self.embed < 2 || self.embed % 2 != 0 {
            return Err(GlslError::Config(format!(
                "embedding width must be even and >= 2, got {}",
                self.embed
            )));
        }
        if self.kernel == KernelKind::Gat {
            if self.heads == 0 {
                return Err(GlslError::Config("GAT needs at least one head".into()));
            }
            if (self.embed / 2) % self.heads != 0 {
                return Err(GlslError::Config(format!(
                    "branch width {} not divisible by {} heads",
                    self.embed / 2,
                    self.heads
                )));
            }
        }
        Ok(())
    }

    fn branch(&self) -> usize {
        self.embed / 2
    }
}

/// Per-run graph context: the adjacency for attention masking and, for the
/// GCN kernel, the normalized propagation matrix computed once.
#[derive(Debug, Clone)]
pub struct GraphCtx {
    pub adj: Adjacency,
    pub a_hat: Option<Tensor>,
}

impl GraphCtx {
    pub fn new(adj: Adjacency, kernel: KernelKind) -> Self {
        let a_hat = match kernel {
            KernelKind::Gcn => Some(normalize_adjacency(&adj)),
            KernelKind::Gat => None,
        };
        GraphCtx { adj, a_hat }
    }
}

/// Recurrent state carried across windows (values only, never gradients).
#[derive(Debug, Clone)]
pub struct LatentState {
    pub enc1: Tensor,
    pub enc2: Tensor,
    pub dec1: Tensor,
    pub dec2: Tensor,
}

impl LatentState {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        LatentState {
            enc1: Tensor::zeros(vec![cfg.nodes, cfg.latent]),
            enc2: Tensor::zeros(vec![cfg.nodes, cfg.latent]),
            dec1: Tensor::zeros(vec![cfg.nodes, cfg.latent]),
            dec2: Tensor::zeros(vec![cfg.nodes, cfg.embed]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct GruIdx {
    wz: usize,
    uz: usize,
    bz: usize,
    wr: usize,
    ur: usize,
    br: usize,
    wh: usize,
    uh: usize,
    bh: usize,
}

#[derive(Debug, Clone)]
enum KernelIdx {
    /// Per mode, per head: (projection, attention vector).
    Gat(Vec<Vec<(usize, usize)>>),
    /// Per mode: projection.
    Gcn(Vec<usize>),
}

#[derive(Debug, Clone)]
struct ParamIndex {
    enc_fc: Vec<(usize, usize)>,
    enc_gnn: KernelIdx,
    fuse: Vec<usize>,
    gru1: GruIdx,
    gru2: GruIdx,
    dec_gru1: GruIdx,
    dec_gru2: GruIdx,
    dec_fc: Vec<(usize, usize)>,
    dec_gnn: KernelIdx,
    cls_w: usize,
    cls_b: usize,
}

pub struct GlslModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    index: ParamIndex,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_parts(vec![rows, cols], data)
}

fn register_gru(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    input: usize,
    hidden: usize,
) -> GruIdx {
    let wz = store.register(format!("{name}.wz"), xavier(rng, hidden, input));
    let uz = store.register(format!("{name}.uz"), xavier(rng, hidden, hidden));
    let bz = store.register(format!("{name}.bz"), Tensor::zeros(vec![1, hidden]));
    let wr = store.register(format!("{name}.wr"), xavier(rng, hidden, input));
    let ur = store.register(format!("{name}.ur"), xavier(rng, hidden, hidden));
    let br = store.register(format!("{name}.br"), Tensor::zeros(vec![1, hidden]));
    let wh = store.register(format!("{name}.wh"), xavier(rng, hidden, input));
    let uh = store.register(format!("{name}.uh"), xavier(rng, hidden, hidden));
    let bh = store.register(format!("{name}.bh"), Tensor::zeros(vec![1, hidden]));
    GruIdx { wz, uz, bz, wr, ur, br, wh, uh, bh }
}

fn register_kernel(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    cfg: &ModelConfig,
    prefix: &str,
    f_in: usize,
    f_out_total: usize,
    heads: usize,
) -> KernelIdx {
    match cfg.kernel {
        KernelKind::Gat => {
            let mut modes = Vec::with_capacity(cfg.modes);
            for m in 0..cfg.modes {
                let mut hs = Vec::with_capacity(heads);
                for k in 0..heads {
                    let f_out = f_out_total / heads;
                    let b = store.register(
                        format!("{prefix}.m{m}.h{k}.proj"),
                        xavier(rng, f_out, f_in),
                    );
                    let limit = (6.0 / (2 * f_out + 1) as f64).sqrt();
                    let a_data = (0..2 * f_out).map(|_| rng.gen_range(-limit..limit)).collect();
                    let a = store.register(
                        format!("{prefix}.m{m}.h{k}.attn"),
                        Tensor::from_parts(vec![2 * f_out], a_data),
                    );
                    hs.push((b, a));
                }
                modes.push(hs);
            }
            KernelIdx::Gat(modes)
        }
        KernelKind::Gcn => {
            let mut modes = Vec::with_capacity(cfg.modes);
            for m in 0..cfg.modes {
                modes.push(store.register(
                    format!("{prefix}.m{m}.proj"),
                    xavier(rng, f_out_total, f_in),
                ));
            }
            KernelIdx::Gcn(modes)
        }
    }
}

fn build_store(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> (ParamStore, ParamIndex) {
    let mut store = ParamStore::new();
    let (d, dg, w) = (cfg.embed, cfg.latent, cfg.window);
    let br = cfg.branch();

    let enc_fc: Vec<(usize, usize)> = (0..cfg.modes)
        .map(|m| {
            let wi = store.register(format!("enc.fc.m{m}.w"), xavier(rng, br, w));
            let bi = store.register(format!("enc.fc.m{m}.b"), Tensor::zeros(vec![1, br]));
            (wi, bi)
        })
        .collect();
    let enc_gnn = register_kernel(&mut store, rng, cfg, "enc.gnn", w, br, cfg.heads);
    let fuse: Vec<usize> = (0..cfg.modes)
        .map(|m| {
            store.register(
                format!("fuse.m{m}"),
                Tensor::from_parts(vec![1, d], vec![1.0; d]),
            )
        })
        .collect();
    let gru1 = register_gru(&mut store, rng, "enc.gru1", d, dg);
    let gru2 = register_gru(&mut store, rng, "enc.gru2", dg, dg);
    let dec_gru1 = register_gru(&mut store, rng, "dec.gru1", dg, dg);
    let dec_gru2 = register_gru(&mut store, rng, "dec.gru2", dg, d);
    let dec_fc: Vec<(usize, usize)> = (0..cfg.modes)
        .map(|m| {
            let wi = store.register(format!("dec.fc.m{m}.w"), xavier(rng, w, br));
            let bi = store.register(format!("dec.fc.m{m}.b"), Tensor::zeros(vec![1, w]));
            (wi, bi)
        })
        .collect();
    // decoder GNN heads are averaged, so each head emits the full width W
    let dec_gnn = register_kernel(&mut store, rng, cfg, "dec.gnn", br, w, 1);
    let feat = dg + cfg.modes * cfg.nodes;
    let cls_w = store.register("cls.w", xavier(rng, 2, feat));
    let cls_b = store.register("cls.b", Tensor::zeros(vec![1, 2]));

    let index = ParamIndex {
        enc_fc,
        enc_gnn,
        fuse,
        gru1,
        gru2,
        dec_gru1,
        dec_gru2,
        dec_fc,
        dec_gnn,
        cls_w,
        cls_b,
    };
    (store, index)
}

/// One forward pass: the tape plus the ids needed for losses, detection and
/// the detached next recurrent state.
pub struct Forward {
    pub tape: Tape,
    pub param_ids: Vec<VarId>,
    pub input_ids: Vec<VarId>,
    /// Per-mode reconstruction, each nodes x window.
    pub recon: Vec<VarId>,
    /// Latent code, nodes x latent.
    pub z: VarId,
    /// Classifier output after softmax, 1 x 2; column 1 is the anomaly class.
    pub prob: VarId,
    /// Mean squared reconstruction error over every entry (scalar).
    pub l_rec: VarId,
    pub next_state: LatentState,
}

impl Forward {
    pub fn p_anomaly(&self) -> f64 {
        self.tape.value(self.prob).at(0, 1)
    }
}

impl GlslModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(seed, "init");
        let (params, index) = build_store(&cfg, &mut rng);
        Ok(GlslModel { cfg, params, index })
    }

    /// Adopt checkpointed parameters; names and shapes must match the
    /// registration order this config produces.
    pub fn from_store(cfg: ModelConfig, store: ParamStore) -> Result<Self> {
        let fresh = GlslModel::new(cfg, 0)?;
        if fresh.params.names() != store.names() {
            return Err(GlslError::Checkpoint(
                "checkpoint parameter names do not match the model config".into(),
            ));
        }
        for (a, b) in fresh.params.tensors().iter().zip(store.tensors()) {
            if a.shape() != b.shape() {
                return Err(GlslError::Checkpoint(format!(
                    "checkpoint shape {:?} does not match expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(GlslModel { cfg: fresh.cfg, params: store, index: fresh.index })
    }

    fn linear(
        tape: &mut Tape,
        x: VarId,
        w: VarId,
        b: VarId,
        n: usize,
    ) -> Result<VarId> {
        let wt = tape.transpose(w)?;
        let xw = tape.matmul(x, wt)?;
        let brep = tape.repeat_rows(b, n)?;
        tape.add(xw, brep)
    }

    fn gru_cell(
        tape: &mut Tape,
        pid: &[VarId],
        idx: &GruIdx,
        x: VarId,
        h: VarId,
        n: usize,
        hidden: usize,
    ) -> Result<VarId> {
        let gate = |tape: &mut Tape, w: usize, u: usize, b: usize| -> Result<VarId> {
            let xw = Self::linear(tape, x, pid[w], pid[b], n)?;
            let ut = tape.transpose(pid[u])?;
            let hu = tape.matmul(h, ut)?;
            tape.add(xw, hu)
        };
        let z_pre = gate(tape, idx.wz, idx.uz, idx.bz)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, idx.wr, idx.ur, idx.br)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h)?;
        let xw = Self::linear(tape, x, pid[idx.wh], pid[idx.bh], n)?;
        let ut = tape.transpose(pid[idx.uh])?;
        let rhu = tape.matmul(rh, ut)?;
        let cand_pre = tape.add(xw, rhu)?;
        let cand = tape.tanh(cand_pre);
        // h' = (1 - z) * h + z * cand
        let ones = tape.leaf(Tensor::from_parts(vec![n, hidden], vec![1.0; n * hidden]));
        let omz = tape.sub(ones, z)?;
        let keep = tape.mul(omz, h)?;
        let update = tape.mul(z, cand)?;
        tape.add(keep, update)
    }

    fn kernel_forward(
        &self,
        tape: &mut Tape,
        pid: &[VarId],
        which: &KernelIdx,
        mode: usize,
        x: VarId,
        graph: &GraphCtx,
        a_hat_id: Option<VarId>,
        act: Activation,
        merge: HeadMerge,
    ) -> Result<VarId> {
        match which {
            KernelIdx::Gat(modes) => {
                let heads: Vec<GatHead> = modes[mode]
                    .iter()
                    .map(|(b, a)| GatHead { b: pid[*b], a: pid[*a] })
                    .collect();
                gat_layer_forward(tape, x, &graph.adj, &heads, self.cfg.leaky_slope, act, merge)
            }
            KernelIdx::Gcn(modes) => {
                let a_hat = a_hat_id.expect("GCN context carries a normalized adjacency");
                gcn_layer_forward(tape, x, a_hat, pid[modes[mode]], act)
            }
        }
    }

    pub fn forward(
        &self,
        window: &WindowTensor,
        graph: &GraphCtx,
        state: &LatentState,
    ) -> Result<Forward> {
        let cfg = &self.cfg;
        let (n, w) = (cfg.nodes, cfg.window);
        if window.modes.len() != cfg.modes {
            return Err(GlslError::Config(format!(
                "window has {} modes, model expects {}",
                window.modes.len(),
                cfg.modes
            )));
        }
        for t in &window.modes {
            if t.shape() != [n, w] {
                return Err(GlslError::BadShape {
                    op: "model_forward",
                    shape: t.shape().to_vec(),
                    msg: format!("expected {n} x {w} per mode"),
                });
            }
        }
        if graph.adj.n() != n {
            return Err(GlslError::Config(format!(
                "adjacency is over {} nodes, model expects {n}",
                graph.adj.n()
            )));
        }

        let mut tape = Tape::new();
        let pid = self.params.register_leaves(&mut tape);
        let a_hat_id = graph.a_hat.as_ref().map(|t| tape.leaf(t.clone()));
        let input_ids: Vec<VarId> =
            window.modes.iter().map(|t| tape.leaf(t.clone())).collect();

        // encoder: per mode, local FC branch || global GNN branch, gated by
        // the mode fusion weights, summed over modes
        let mut fused: Option<VarId> = None;
        for m in 0..cfg.modes {
            let x = input_ids[m];
            let (fw, fb) = self.index.enc_fc[m];
            let loc_pre = Self::linear(&mut tape, x, pid[fw], pid[fb], n)?;
            let loc = tape.tanh(loc_pre);
            let glob = self.kernel_forward(
                &mut tape,
                &pid,
                &self.index.enc_gnn,
                m,
                x,
                graph,
                a_hat_id,
                Activation::Tanh,
                HeadMerge::Concat,
            )?;
            let cat = tape.concat(1, loc, glob)?;
            let q = tape.repeat_rows(pid[self.index.fuse[m]], n)?;
            let gated = tape.mul(cat, q)?;
            fused = Some(match fused {
                None => gated,
                Some(acc) => tape.add(acc, gated)?,
            });
        }
        let fused = fused.expect("at least one mode");

        // recurrent stack; previous states enter as constant leaves
        let h1 = tape.leaf(state.enc1.clone());
        let h2 = tape.leaf(state.enc2.clone());
        let h1n = Self::gru_cell(&mut tape, &pid, &self.index.gru1, fused, h1, n, cfg.latent)?;
        let z = Self::gru_cell(&mut tape, &pid, &self.index.gru2, h1n, h2, n, cfg.latent)?;

        // decoder: two GRU cells widen the code back to the embedding, then
        // the halves feed the per-mode FC and GNN reconstruction branches
        let d1 = tape.leaf(state.dec1.clone());
        let d2 = tape.leaf(state.dec2.clone());
        let d1n = Self::gru_cell(&mut tape, &pid, &self.index.dec_gru1, z, d1, n, cfg.latent)?;
        let d2n = Self::gru_cell(&mut tape, &pid, &self.index.dec_gru2, d1n, d2, n, cfg.embed)?;
        let br = cfg.branch();
        let d_loc = tape.slice(d2n, 1, 0, br)?;
        let d_glob = tape.slice(d2n, 1, br, br)?;

        let mut recon = Vec::with_capacity(cfg.modes);
        for m in 0..cfg.modes {
            let (fw, fb) = self.index.dec_fc[m];
            let fc = Self::linear(&mut tape, d_loc, pid[fw], pid[fb], n)?;
            let gnn = self.kernel_forward(
                &mut tape,
                &pid,
                &self.index.dec_gnn,
                m,
                d_glob,
                graph,
                a_hat_id,
                Activation::Identity,
                HeadMerge::Average,
            )?;
            let both = tape.add(fc, gnn)?;
            recon.push(tape.scale(both, 0.5));
        }

        // mean squared reconstruction error over all modes, nodes, columns
        let mut sq_sum: Option<VarId> = None;
        let mut res_feats: Option<VarId> = None;
        for m in 0..cfg.modes {
            let diff = tape.sub(input_ids[m], recon[m])?;
            let sq = tape.mul(diff, diff)?;
            let s = tape.sum_all(sq);
            sq_sum = Some(match sq_sum {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
            // per-node window-mean residual energy, one column per (mode, node)
            let node_means = tape.mean_rows(sq)?;
            let row = tape.transpose(node_means)?;
            res_feats = Some(match res_feats {
                None => row,
                Some(acc) => tape.concat(1, acc, row)?,
            });
        }
        let total = (cfg.modes * n * w) as f64;
        let l_rec = tape.scale(sq_sum.expect("modes >= 1"), 1.0 / total);

        // classifier: node-mean latent code || residual features -> 2 logits
        let z_mean = tape.mean_cols(z)?;
        let feats = tape.concat(1, z_mean, res_feats.expect("modes >= 1"))?;
        let logits = Self::linear(&mut tape, feats, pid[self.index.cls_w], pid[self.index.cls_b], 1)?;
        let prob = tape.softmax(logits);

        let next_state = LatentState {
            enc1: tape.value(h1n).clone(),
            enc2: tape.value(z).clone(),
            dec1: tape.value(d1n).clone(),
            dec2: tape.value(d2n).clone(),
        };

        Ok(Forward {
            tape,
            param_ids: pid,
            input_ids,
            recon,
            z,
            prob,
            l_rec,
            next_state,
        })
    }
}

/// Binary cross-entropy against the softmax output, probabilities floored at
/// 1e-12. `label` is 0 (clean) or 1 (injected).
pub fn cross_entropy(tape: &mut Tape, prob: VarId, label: f64) -> Result<VarId> {
    let p0 = tape.slice(prob, 1, 0, 1)?;
    let p1 = tape.slice(prob, 1, 1, 1)?;
    let p0 = tape.clamp_min(p0, 1e-12);
    let p1 = tape.clamp_min(p1, 1e-12);
    let l0 = tape.log(p0)?;
    let l1 = tape.log(p1)?;
    let t1 = tape.scale(l1, -label);
    let t0 = tape.scale(l0, -(1.0 - label));
    let s = tape.add(t1, t0)?;
    Ok(tape.sum_all(s))
}

/// Epoch-blended objective: weight 1/n on reconstruction and 1 - 1/n on
/// classification, n being the 1-based epoch. Epoch 1 trains reconstruction
/// only; the classifier takes over as training progresses.
pub fn blended_loss(tape: &mut Tape, l_rec: VarId, l_ce: VarId, epoch: usize) -> Result<VarId> {
    if epoch == 0 {
        return Err(GlslError::Config("epoch numbering starts at 1".into()));
    }
    let a = 1.0 / epoch as f64;
    let x = tape.scale(l_rec, a);
    let y = tape.scale(l_ce, 1.0 - a);
    tape.add(x, y)
}
