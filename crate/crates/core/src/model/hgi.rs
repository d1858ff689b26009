//! Hypergraph inference: embedding similarity, connection probabilities and
//! Gumbel-softmax sampling of a discrete incidence matrix.

use crate::array::{Array, BoolArray};
use crate::autodiff::{Tape, VarId};
use crate::error::Result;
use crate::model::StructureSample;
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};

/// Shifted cosine similarity S_ij = (z_i . z_j + 1) / (2 |z_i| |z_j|),
/// norms floored at 1e-8, result clamped to [0, 1].
pub fn pairwise_similarity<F: Scalar>(
    tape: &mut Tape<F>,
    z_node: VarId,
    z_edge: VarId,
) -> Result<VarId> {
    let edge_t = tape.transpose(z_edge)?;
    let dot = tape.matmul(z_node, edge_t)?;

    let norm_node = row_norms(tape, z_node)?;
    let norm_edge = row_norms(tape, z_edge)?;
    let norm_edge_t = tape.transpose(norm_edge)?;
    let outer = tape.matmul(norm_node, norm_edge_t)?;
    let denom = tape.scale(outer, lit(2.0))?;

    let shifted = tape.add_scalar(dot, F::one())?;
    let raw = tape.div(shifted, denom)?;
    tape.clamp(raw, Some(F::zero()), Some(F::one()))
}

fn row_norms<F: Scalar>(tape: &mut Tape<F>, z: VarId) -> Result<VarId> {
    let sq = tape.mul(z, z)?;
    let ssq = tape.sum(sq, Some(1))?;
    let norm = tape.sqrt(ssq)?;
    tape.clamp_min(norm, lit(1e-8))
}

/// The two connection channels: P0 = sigma(S) is the probability that
/// hypernode i joins hyperedge j, P1 = sigma(1 - S) the probability it
/// does not.
pub fn hyperedge_probabilities<F: Scalar>(
    tape: &mut Tape<F>,
    similarity: VarId,
) -> Result<(VarId, VarId)> {
    let p0 = tape.sigmoid(similarity)?;
    let neg = tape.neg(similarity)?;
    let one_minus = tape.add_scalar(neg, F::one())?;
    let p1 = tape.sigmoid(one_minus)?;
    Ok((p0, p1))
}

/// Independent Gumbel(0,1) noise for both channels of every (i, j) pair.
/// Channel-0 noise is drawn first for each pair.
pub fn draw_gumbel_noise<F: Scalar>(n: usize, m: usize, rng: &mut Rng) -> (Array<F>, Array<F>) {
    let mut g0 = Array::zeros(vec![n, m]);
    let mut g1 = Array::zeros(vec![n, m]);
    for i in 0..n * m {
        g0.data_mut()[i] = lit(rng.gumbel());
        g1.data_mut()[i] = lit(rng.gumbel());
    }
    (g0, g1)
}

/// Two-category tempered softmax over (P0 + g0, P1 + g1); channel 0 is the
/// soft membership. With hard sampling the forward value is the channel
/// argmax and gradients take the straight-through path. Without noise
/// (evaluation) this reduces to thresholding P0 > P1.
pub fn gumbel_sample_incidence<F: Scalar>(
    tape: &mut Tape<F>,
    p0: VarId,
    p1: VarId,
    gamma: F,
    hard: bool,
    noise: Option<&(Array<F>, Array<F>)>,
) -> Result<StructureSample> {
    let diff = tape.sub(p0, p1)?;
    let shifted = match noise {
        Some((g0, g1)) => {
            let noise_diff = g0.zip(g1, |a, b| a - b)?;
            let nd = tape.leaf(noise_diff)?;
            tape.add(diff, nd)?
        }
        None => diff,
    };
    let logits = tape.scale(shifted, F::one() / gamma)?;
    let soft = tape.sigmoid(logits)?;

    let half = lit::<F>(0.5);
    let shape = tape.value(soft).shape().to_vec();
    let hard_values: Vec<bool> = tape.value(soft).data().iter().map(|&v| v > half).collect();
    let support = BoolArray::new(shape.clone(), hard_values.clone())?;

    let incidence = if hard {
        let hard_arr = Array::new(
            shape,
            hard_values.iter().map(|&b| if b { F::one() } else { F::zero() }).collect(),
        )?;
        tape.straight_through(soft, hard_arr)?
    } else {
        soft
    };
    Ok(StructureSample { incidence, support })
}
