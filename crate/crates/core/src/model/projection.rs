//! GLU input projection: maps the n x tau look-back window to n x d node
//! features through a sigmoid-gated linear unit,
//! x_bar = (sigmoid(X W0) (x) X W1) W2.

use crate::autodiff::{Tape, VarId};
use crate::error::Result;
use crate::scalar::Scalar;

pub fn glu_project<F: Scalar>(
    tape: &mut Tape<F>,
    x: VarId,
    w0: VarId,
    w1: VarId,
    w2: VarId,
) -> Result<VarId> {
    let gate = tape.matmul(x, w0)?;
    let gate = tape.sigmoid(gate)?;
    let value = tape.matmul(x, w1)?;
    let gated = tape.mul(gate, value)?;
    tape.matmul(gated, w2)
}
