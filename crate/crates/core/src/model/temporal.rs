//! Temporal head: mixture-of-experts fusion of the three spatial branches,
//! the 1x1-convolution feature stack, and the point / uncertainty readouts.

use crate::autodiff::{Tape, VarId};
use crate::error::Result;
use crate::scalar::{lit, Scalar};

/// g'' = sigma(fs(h_IMP + h_SUB) + fg(h_DHT));
/// H = sigma(g'' (h_IMP + h_SUB) + (1 - g'') h_DHT).
/// Returns the fused representation and the gate values.
pub fn moe_fuse<F: Scalar>(
    tape: &mut Tape<F>,
    h_imp: VarId,
    h_sub: VarId,
    h_dht: VarId,
    fs: VarId,
    fg: VarId,
) -> Result<(VarId, VarId)> {
    let s = tape.add(h_imp, h_sub)?;
    let s_proj = tape.matmul(s, fs)?;
    let d_proj = tape.matmul(h_dht, fg)?;
    let pre = tape.add(s_proj, d_proj)?;
    let g = tape.sigmoid(pre)?;
    let gs = tape.mul(g, s)?;
    let ng = tape.neg(g)?;
    let one_minus = tape.add_scalar(ng, F::one())?;
    let gd = tape.mul(one_minus, h_dht)?;
    let blend = tape.add(gs, gd)?;
    let h = tape.sigmoid(blend)?;
    Ok((h, g))
}

/// Per-node shared dense layer with ReLU and a residual connection; a 1x1
/// convolution over the node axis is exactly this map.
pub fn conv_stack<F: Scalar>(tape: &mut Tape<F>, h: VarId, conv1: VarId) -> Result<VarId> {
    let proj = tape.matmul(h, conv1)?;
    let act = tape.relu(proj)?;
    tape.add(act, h)
}

/// Linear point readout: features (n x d) -> forecasts (n x upsilon).
pub fn point_forecast<F: Scalar>(tape: &mut Tape<F>, feats: VarId, conv2: VarId) -> Result<VarId> {
    tape.matmul(feats, conv2)
}

/// Split the 2-upsilon readout into the mean and the raw variance channel;
/// variance = softplus(raw) + 1e-6 so it stays positive.
pub fn uncertainty_forecast<F: Scalar>(
    tape: &mut Tape<F>,
    feats: VarId,
    unc_head: VarId,
    upsilon: usize,
) -> Result<(VarId, VarId)> {
    let joint = tape.matmul(feats, unc_head)?;
    let joint_t = tape.transpose(joint)?;
    let mu_idx: Vec<usize> = (0..upsilon).collect();
    let raw_idx: Vec<usize> = (upsilon..2 * upsilon).collect();
    let mu_t = tape.gather_rows(joint_t, &mu_idx)?;
    let raw_t = tape.gather_rows(joint_t, &raw_idx)?;
    let mu = tape.transpose(mu_t)?;
    let raw = tape.transpose(raw_t)?;
    let sp = tape.softplus(raw)?;
    let var = tape.add_scalar(sp, lit(1e-6))?;
    Ok((mu, var))
}
