//! Subgraph representation learning: each patch is encoded by a p-layer
//! graph convolution (shared weights across patches) and per-node outputs
//! are mean-pooled over every patch containing the node.

use crate::array::Array;
use crate::autodiff::{Tape, VarId};
use crate::error::Result;
use crate::graph::SubgraphPatch;
use crate::model::{BoundParams, ModelConfig};
use crate::scalar::Scalar;

/// One graph-convolution layer: ReLU(A_hat H W).
pub fn gcn_layer<F: Scalar>(
    tape: &mut Tape<F>,
    h: VarId,
    a_hat: VarId,
    w: VarId,
) -> Result<VarId> {
    let mixed = tape.matmul(a_hat, h)?;
    let proj = tape.matmul(mixed, w)?;
    tape.relu(proj)
}

/// p stacked GCN layers on a patch's induced graph, input rows gathered
/// from the projected features.
pub fn encode_patch<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    x_bar: VarId,
    patch: &SubgraphPatch,
    adj: &Array<F>,
    cfg: &ModelConfig,
) -> Result<VarId> {
    let a_hat = tape.leaf(adj.clone())?;
    let mut h = tape.gather_rows(x_bar, &patch.expanded_nodes)?;
    for l in 0..cfg.p_hops {
        let w = bound.id(&format!("sgrl.l{l}.w"));
        h = gcn_layer(tape, h, a_hat, w)?;
    }
    Ok(h)
}

/// Encode every patch and mean-pool per original node.
pub fn encode<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundParams,
    x_bar: VarId,
    patches: &[SubgraphPatch],
    patch_adj: &[Array<F>],
    pool_weights: &Array<F>,
    cfg: &ModelConfig,
) -> Result<VarId> {
    let n = cfg.n_nodes;
    let mut acc: Option<VarId> = None;
    for (patch, adj) in patches.iter().zip(patch_adj) {
        let hp = encode_patch(tape, bound, x_bar, patch, adj, cfg)?;
        let scattered = tape.scatter_add_rows(hp, &patch.expanded_nodes, n)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, scattered)?,
            None => scattered,
        });
    }
    let summed = acc.expect("at least one patch");
    let weights = tape.leaf(pool_weights.clone())?;
    tape.mul(summed, weights)
}
