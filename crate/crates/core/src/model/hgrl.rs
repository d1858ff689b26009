//! Hypergraph representation learning: HgAT higher-order message passing,
//! the HgT transformer encoder, their gated fusion (h_IMP), and the same
//! intra-edge machinery applied to the dual hypergraph (h_DHT).

use crate::array::{Array, BoolArray};
use crate::autodiff::{Tape, VarId};
use crate::error::Result;
use crate::model::{BoundParams, Mode, ModelConfig, StructureSample};
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};

pub struct HgatOutput {
    pub h_nodes: VarId,
    pub h_edges: VarId,
    /// Final-layer intra-edge attention, one m x n matrix per head.
    pub alphas: Vec<VarId>,
    /// Final-layer inter-edge attention, one n x m matrix per head.
    pub betas: Vec<VarId>,
}

/// Masked row softmax that tolerates empty support rows: such rows come out
/// as all zeros instead of erroring, matching the "no incident neighbors"
/// contract of HgAT.
fn masked_softmax_or_zero<F: Scalar>(
    tape: &mut Tape<F>,
    logits: VarId,
    support: &BoolArray,
) -> Result<(VarId, Vec<bool>)> {
    let (r, c) = (support.rows(), support.cols());
    let nonempty: Vec<bool> = (0..r)
        .map(|i| (0..c).any(|j| support.at2(i, j)))
        .collect();
    if nonempty.iter().all(|&b| b) {
        let alpha = tape.softmax_rows(logits, Some(support))?;
        return Ok((alpha, nonempty));
    }
    let mut padded = support.clone();
    for (i, &ok) in nonempty.iter().enumerate() {
        if !ok {
            padded.set2(i, 0, true);
        }
    }
    let raw = tape.softmax_rows(logits, Some(&padded))?;
    let keep = row_indicator(&nonempty, c);
    let ind = tape.leaf(keep)?;
    let alpha = tape.mul(raw, ind)?;
    Ok((alpha, nonempty))
}

fn row_indicator<F: Scalar>(keep: &[bool], cols: usize) -> Array<F> {
    let mut ind = Array::zeros(vec![keep.len(), cols]);
    for (i, &k) in keep.iter().enumerate() {
        if k {
            for j in 0..cols {
                ind.set2(i, j, F::one());
            }
        }
    }
    ind
}

/// Zero out rows whose `keep` flag is false (post-activation).
fn zero_dead_rows<F: Scalar>(
    tape: &mut Tape<F>,
    x: VarId,
    keep: &[bool],
) -> Result<VarId> {
    if keep.iter().all(|&k| k) {
        return Ok(x);
    }
    let cols = tape.value(x).cols();
    let ind = row_indicator(keep, cols);
    let ind = tape.leaf(ind)?;
    tape.mul(x, ind)
}

fn maybe_dropout<F: Scalar>(
    tape: &mut Tape<F>,
    x: VarId,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<VarId> {
    if mode == Mode::Train && cfg.dropout > 0.0 {
        let mask: Vec<bool> =
            (0..tape.value(x).numel()).map(|_| !rng.bernoulli(cfg.dropout)).collect();
        tape.dropout(x, &mask, lit(cfg.dropout))
    } else {
        Ok(x)
    }
}

/// Intra-edge aggregation for one head: attention over each hyperedge's
/// incident nodes, aggregation of W0-projected node features, sigmoid.
/// Returns the head's hyperedge representations (m x d), the attention
/// (m x n) and the projected node features for reuse.
#[allow(clippy::too_many_arguments)]
pub fn hgat_intra_head<F: Scalar>(
    tape: &mut Tape<F>,
    h_nodes: VarId,
    w0: VarId,
    support_t: &BoolArray,
    incidence_t: Option<VarId>,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(VarId, VarId, VarId)> {
    let m = support_t.rows();
    let hw0 = tape.matmul(h_nodes, w0)?;
    let scored = tape.relu(hw0)?;
    let e = tape.sum(scored, Some(1))?;
    let e_t = tape.transpose(e)?;
    let ones_m = tape.leaf(Array::full(vec![m, 1], F::one()))?;
    let logits = tape.matmul(ones_m, e_t)?;

    let (alpha, nonempty) = masked_softmax_or_zero(tape, logits, support_t)?;
    let mut weights = maybe_dropout(tape, alpha, cfg, mode, rng)?;
    if let Some(inc_t) = incidence_t {
        // scale by the (straight-through) membership so gradients reach the
        // structure parameters
        weights = tape.mul(weights, inc_t)?;
    }
    let agg = tape.matmul(weights, hw0)?;
    let act = tape.sigmoid(agg)?;
    let h_edges = zero_dead_rows(tape, act, &nonempty)?;
    Ok((h_edges, alpha, hw0))
}

/// Inter-edge aggregation for one head: pairwise scores from the
/// concatenation-projection, softmax over each node's incident hyperedges,
/// ReLU(W0 h_i + sum_j beta W1 h_j).
#[allow(clippy::too_many_arguments)]
pub fn hgat_inter_head<F: Scalar>(
    tape: &mut Tape<F>,
    hw0: VarId,
    h_nodes: VarId,
    h_edges: VarId,
    w1: VarId,
    w2: VarId,
    w3: VarId,
    support: &BoolArray,
    incidence: Option<VarId>,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(VarId, VarId)> {
    let (n, m) = (support.rows(), support.cols());
    let d = cfg.d;

    let hw2 = tape.matmul(h_nodes, w2)?;
    let hew2 = tape.matmul(h_edges, w2)?;
    let top_idx: Vec<usize> = (0..d).collect();
    let bot_idx: Vec<usize> = (d..2 * d).collect();
    let w3_top = tape.gather_rows(w3, &top_idx)?;
    let w3_bot = tape.gather_rows(w3, &bot_idx)?;
    let a = tape.matmul(hw2, w3_top)?;
    let b = tape.matmul(hew2, w3_bot)?;
    let ones_row = tape.leaf(Array::full(vec![1, m], F::one()))?;
    let ones_col = tape.leaf(Array::full(vec![n, 1], F::one()))?;
    let a_block = tape.matmul(a, ones_row)?;
    let b_t = tape.transpose(b)?;
    let b_block = tape.matmul(ones_col, b_t)?;
    let pair = tape.add(a_block, b_block)?;
    let phi = tape.relu(pair)?;

    let (beta, _) = masked_softmax_or_zero(tape, phi, support)?;
    let mut weights = maybe_dropout(tape, beta, cfg, mode, rng)?;
    if let Some(inc) = incidence {
        weights = tape.mul(weights, inc)?;
    }
    let hew1 = tape.matmul(h_edges, w1)?;
    let msg = tape.matmul(weights, hew1)?;
    let pre = tape.add(hw0, msg)?;
    let h_out = tape.relu(pre)?;
    Ok((h_out, beta))
}

/// Elementwise gate g = sigma(fs(h) + fg(x)); out = sigma(g h + (1-g) x).
pub fn gate_combine<F: Scalar>(
    tape: &mut Tape<F>,
    h: VarId,
    x: VarId,
    fs: VarId,
    fg: VarId,
) -> Result<(VarId, VarId)> {
    let s = tape.matmul(h, fs)?;
    let g_path = tape.matmul(x, fg)?;
    let pre = tape.add(s, g_path)?;
    let g = tape.sigmoid(pre)?;
    let gh = tape.mul(g, h)?;
    let ng = tape.neg(g)?;
    let one_minus = tape.add_scalar(ng, F::one())?;
    let gx = tape.mul(one_minus, x)?;
    let blend = tape.add(gh, gx)?;
    let out = tape.sigmoid(blend)?;
    Ok((out, g))
}

/// Full HgAT stack on the sampled hypergraph: per layer, per head,
/// intra-edge then inter-edge aggregation, heads summed, then the feature
/// gate against the projected inputs.
pub fn hgat_encode<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    x_bar: VarId,
    structure: &StructureSample,
    cfg: &ModelConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<HgatOutput> {
    let support = &structure.support;
    let support_t = support.transpose();
    let inc_t = tape.transpose(structure.incidence)?;

    let mut h = x_bar;
    let mut h_edges_sum = x_bar; // placeholder, overwritten in the loop
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    for l in 0..cfg.hgat_layers {
        alphas.clear();
        betas.clear();
        let mut edge_acc: Option<VarId> = None;
        let mut node_acc: Option<VarId> = None;
        for z in 0..cfg.hgat_heads {
            let w0 = bound.id(&format!("hgat.l{l}.h{z}.w0"));
            let w1 = bound.id(&format!("hgat.l{l}.h{z}.w1"));
            let w2 = bound.id(&format!("hgat.l{l}.h{z}.w2"));
            let w3 = bound.id(&format!("hgat.l{l}.h{z}.w3"));
            let (h_edge_z, alpha, hw0) = hgat_intra_head(
                tape,
                h,
                w0,
                &support_t,
                Some(inc_t),
                cfg,
                mode,
                rng,
            )?;
            let (h_node_z, beta) = hgat_inter_head(
                tape,
                hw0,
                h,
                h_edge_z,
                w1,
                w2,
                w3,
                support,
                Some(structure.incidence),
                cfg,
                mode,
                rng,
            )?;
            alphas.push(alpha);
            betas.push(beta);
            edge_acc = Some(match edge_acc {
                Some(acc) => tape.add(acc, h_edge_z)?,
                None => h_edge_z,
            });
            node_acc = Some(match node_acc {
                Some(acc) => tape.add(acc, h_node_z)?,
                None => h_node_z,
            });
        }
        let nodes = node_acc.expect("at least one head");
        h_edges_sum = edge_acc.expect("at least one head");
        let fs = bound.id(&format!("hgat.l{l}.fs"));
        let fg = bound.id(&format!("hgat.l{l}.fg"));
        let (gated, _) = gate_combine(tape, nodes, x_bar, fs, fg)?;
        h = gated;
    }
    Ok(HgatOutput { h_nodes: h, h_edges: h_edges_sum, alphas, betas })
}

/// One transformer layer: h' = MSA(LN(h)) + h, then
/// h'' = MLP(LN(h')) + x_bar (initial connection).
pub fn hgt_layer<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    layer: usize,
    h: VarId,
    x_bar: VarId,
    cfg: &ModelConfig,
) -> Result<VarId> {
    let n = tape.value(h).rows();
    let dh = cfg.d / cfg.hgt_heads;
    let eps = lit(cfg.ln_eps);

    let g1 = bound.id(&format!("hgt.l{layer}.ln1.gain"));
    let b1 = bound.id(&format!("hgt.l{layer}.ln1.bias"));
    let normed = tape.layer_norm(h, g1, b1, eps)?;

    let mut heads: Option<VarId> = None;
    let scale = lit::<F>(1.0 / (dh as f64).sqrt());
    for z in 0..cfg.hgt_heads {
        let wq = bound.id(&format!("hgt.l{layer}.h{z}.wq"));
        let wk = bound.id(&format!("hgt.l{layer}.h{z}.wk"));
        let wv = bound.id(&format!("hgt.l{layer}.h{z}.wv"));
        let q = tape.matmul(normed, wq)?;
        let k = tape.matmul(normed, wk)?;
        let v = tape.matmul(normed, wv)?;
        let k_t = tape.transpose(k)?;
        let scores = tape.matmul(q, k_t)?;
        let scores = tape.scale(scores, scale)?;
        let attn = tape.softmax_rows(scores, None)?;
        let out_z = tape.matmul(attn, v)?;
        heads = Some(match heads {
            Some(acc) => tape.concat(acc, out_z, 1)?,
            None => out_z,
        });
    }
    let cat = heads.expect("at least one head");
    let wo = bound.id(&format!("hgt.l{layer}.wo"));
    let msa = tape.matmul(cat, wo)?;
    let h1 = tape.add(msa, h)?;

    let g2 = bound.id(&format!("hgt.l{layer}.ln2.gain"));
    let b2 = bound.id(&format!("hgt.l{layer}.ln2.bias"));
    let normed2 = tape.layer_norm(h1, g2, b2, eps)?;
    let w1 = bound.id(&format!("hgt.l{layer}.mlp.w1"));
    let bb1 = bound.id(&format!("hgt.l{layer}.mlp.b1"));
    let w2 = bound.id(&format!("hgt.l{layer}.mlp.w2"));
    let bb2 = bound.id(&format!("hgt.l{layer}.mlp.b2"));
    let ones_n = tape.leaf(Array::full(vec![n, 1], F::one()))?;
    let m1 = tape.matmul(normed2, w1)?;
    let b1_bc = tape.matmul(ones_n, bb1)?;
    let m1 = tape.add(m1, b1_bc)?;
    let act = tape.relu(m1)?;
    let m2 = tape.matmul(act, w2)?;
    let b2_bc = tape.matmul(ones_n, bb2)?;
    let m2 = tape.add(m2, b2_bc)?;
    tape.add(m2, x_bar)
}

/// Stacked transformer encoder over all hypernodes (no structural mask).
pub fn hgt_encode<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    x_bar: VarId,
    cfg: &ModelConfig,
) -> Result<VarId> {
    let mut h = x_bar;
    for l in 0..cfg.hgt_layers {
        h = hgt_layer(tape, bound, l, h, x_bar, cfg)?;
    }
    Ok(h)
}

/// Gated fusion of the HgT and HgAT representations into h_IMP.
pub fn fuse_imp<F: Scalar>(
    tape: &mut Tape<F>,
    h_hgt: VarId,
    h_hgat: VarId,
    fs: VarId,
    fg: VarId,
) -> Result<VarId> {
    let (out, _) = gate_combine(tape, h_hgt, h_hgat, fs, fg)?;
    Ok(out)
}

/// Dual-hypergraph branch: edge features (endpoint means) aggregated back
/// to the original nodes via intra-edge attention on the transposed
/// incidence. Isolated nodes come out as zero rows.
pub fn encode_dual<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    x_bar: VarId,
    edge_endpoints: &(Vec<usize>, Vec<usize>),
    dual_incidence: &BoolArray,
    cfg: &ModelConfig,
) -> Result<VarId> {
    let eu = tape.gather_rows(x_bar, &edge_endpoints.0)?;
    let ev = tape.gather_rows(x_bar, &edge_endpoints.1)?;
    let sum = tape.add(eu, ev)?;
    let edge_feats = tape.scale(sum, lit(0.5))?;

    // dual hyperedges index the original nodes
    let support_t = dual_incidence.transpose();
    let n = support_t.rows();
    let mut acc: Option<VarId> = None;
    for z in 0..cfg.hgat_heads {
        let w0 = bound.id(&format!("dual.h{z}.w0"));
        let hw0 = tape.matmul(edge_feats, w0)?;
        let scored = tape.relu(hw0)?;
        let e = tape.sum(scored, Some(1))?;
        let e_t = tape.transpose(e)?;
        let ones_n = tape.leaf(Array::full(vec![n, 1], F::one()))?;
        let logits = tape.matmul(ones_n, e_t)?;
        let (alpha, nonempty) = masked_softmax_or_zero(tape, logits, &support_t)?;
        let agg = tape.matmul(alpha, hw0)?;
        let act = tape.sigmoid(agg)?;
        let h_z = zero_dead_rows(tape, act, &nonempty)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, h_z)?,
            None => h_z,
        });
    }
    Ok(acc.expect("at least one head"))
}
