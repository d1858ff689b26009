//! Reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tape`] records every produced array together with its parents and the
//! operation that made it. `backward` replays the tape in reverse, applying
//! each operation's local gradient rule, so end-to-end gradients of any
//! recorded scalar are exact up to floating-point rounding.
//!
//! Shapes are checked eagerly and every forward result is checked for
//! NaN/Inf, so a diverging training run fails at the first bad operation
//! rather than three modules later.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use crate::array::{Array, BoolArray};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

/// Named parameter collection; BTreeMap so iteration order is deterministic.
pub type ParamMap<F> = BTreeMap<String, Array<F>>;

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Matmul { a: VarId, b: VarId },
    Transpose { a: VarId },
    Add { a: VarId, b: VarId },
    Sub { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    Div { a: VarId, b: VarId },
    Neg { a: VarId },
    Sigmoid { a: VarId },
    Relu { a: VarId },
    Softplus { a: VarId },
    Exp { a: VarId },
    Log { a: VarId },
    Sqrt { a: VarId },
    Abs { a: VarId },
    Scale { a: VarId, c: F },
    AddScalar { a: VarId },
    Clamp { a: VarId, lo: Option<F>, hi: Option<F> },
    SoftmaxRows { a: VarId, mask: Option<BoolArray> },
    Sum { a: VarId, axis: Option<usize> },
    Mean { a: VarId, axis: Option<usize> },
    LayerNorm { a: VarId, gain: VarId, bias: VarId, eps: F },
    Concat { a: VarId, b: VarId, axis: usize },
    GatherRows { a: VarId, idx: Vec<usize> },
    ScatterAddRows { a: VarId, idx: Vec<usize> },
    StraightThrough { soft: VarId },
    Dropout { a: VarId, mask: Vec<bool>, scale: F },
}

struct Node<F> {
    op: Op<F>,
    value: Array<F>,
}

/// Reverse-mode differentiation record. Nodes are stored in topological
/// order by construction; backward walks them once, in reverse.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Array<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the loss w.r.t. a recorded value; `None` if the value
    /// does not reach the loss.
    pub fn get(&self, id: VarId) -> Option<&Array<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient with unreached values materialized as zeros of `shape`.
    pub fn get_or_zeros(&self, id: VarId, shape: &[usize]) -> Array<F> {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Array::zeros(shape.to_vec()),
        }
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a recorded node.
    pub fn value(&self, id: VarId) -> &Array<F> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<F>, value: Array<F>, name: &'static str) -> Result<VarId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { op, value });
        Ok(VarId(self.nodes.len() - 1))
    }

    /// Record a constant or parameter value.
    pub fn leaf(&mut self, value: Array<F>) -> Result<VarId> {
        self.push(Op::Leaf, value, "leaf")
    }

    pub fn scalar(&mut self, v: F) -> Result<VarId> {
        self.leaf(Array::scalar(v))
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::Matmul { a, b }, value, "matmul")
    }

    pub fn transpose(&mut self, a: VarId) -> Result<VarId> {
        let value = self.value(a).transpose()?;
        self.push(Op::Transpose { a }, value, "transpose")
    }

    // ---- elementwise binary (same shape, or one side a 1-element array) --

    fn binary_value(
        &self,
        a: VarId,
        b: VarId,
        name: &'static str,
        f: impl Fn(F, F) -> F,
    ) -> Result<Array<F>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.same_shape(vb) {
            va.zip(vb, f)
        } else if vb.numel() == 1 {
            let s = vb.data()[0];
            Ok(va.map(|x| f(x, s)))
        } else if va.numel() == 1 {
            let s = va.data()[0];
            Ok(vb.map(|x| f(s, x)))
        } else {
            Err(Error::Shape {
                op: name,
                detail: format!("{:?} vs {:?}", va.shape(), vb.shape()),
            })
        }
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let v = self.binary_value(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add { a, b }, v, "add")
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let v = self.binary_value(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub { a, b }, v, "sub")
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let v = self.binary_value(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul { a, b }, v, "mul")
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let v = self.binary_value(a, b, "div", |x, y| x / y)?;
        self.push(Op::Div { a, b }, v, "div")
    }

    // ---- elementwise unary ----------------------------------------------

    pub fn neg(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a).map(|x| -x);
        self.push(Op::Neg { a }, v, "neg")
    }

    pub fn sigmoid(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a).map(stable_sigmoid);
        self.push(Op::Sigmoid { a }, v, "sigmoid")
    }

    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a).map(|x| if x > F::zero() { x } else { F::zero() });
        self.push(Op::Relu { a }, v, "relu")
    }

    pub fn softplus(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a).map(stable_softplus);
        self.push(Op::Softplus { a }, v, "softplus")
    }

    pub fn exp(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a).map(|x| x.exp());
        self.push(Op::Exp { a }, v, "exp")
    }

    pub fn log(&mut self, a: VarId) -> Result<VarId> {
        if self.value(a).data().iter().any(|&x| x <= F::zero()) {
            return Err(Error::Domain { op: "log", detail: "non-positive input".into() });
        }
        let v = self.value(a).map(|x| x.ln());
        self.push(Op::Log { a }, v, "log")
    }

    pub fn sqrt(&mut self, a: VarId) -> Result<VarId> {
        if self.value(a).data().iter().any(|&x| x < F::zero()) {
            return Err(Error::Domain { op: "sqrt", detail: "negative input".into() });
        }
        let v = self.value(a).map(|x| x.sqrt());
        self.push(Op::Sqrt { a }, v, "sqrt")
    }

    pub fn abs(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a).map(|x| x.abs());
        self.push(Op::Abs { a }, v, "abs")
    }

    pub fn scale(&mut self, a: VarId, c: F) -> Result<VarId> {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale { a, c }, v, "scale")
    }

    pub fn add_scalar(&mut self, a: VarId, c: F) -> Result<VarId> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar { a }, v, "add_scalar")
    }

    pub fn clamp(&mut self, a: VarId, lo: Option<F>, hi: Option<F>) -> Result<VarId> {
        let v = self.value(a).map(|x| {
            let x = match lo {
                Some(l) if x < l => l,
                _ => x,
            };
            match hi {
                Some(h) if x > h => h,
                _ => x,
            }
        });
        self.push(Op::Clamp { a, lo, hi }, v, "clamp")
    }

    pub fn clamp_min(&mut self, a: VarId, lo: F) -> Result<VarId> {
        self.clamp(a, Some(lo), None)
    }

    // ---- structured ops --------------------------------------------------

    /// Row-wise softmax with optional support mask. Masked entries get
    /// weight 0; each row must keep at least one unmasked entry.
    pub fn softmax_rows(&mut self, a: VarId, mask: Option<&BoolArray>) -> Result<VarId> {
        let x = self.value(a);
        if !x.is_matrix() {
            return Err(Error::Shape {
                op: "softmax_rows",
                detail: format!("rank {} array", x.rank()),
            });
        }
        if let Some(m) = mask {
            if m.shape() != x.shape() {
                return Err(Error::Shape {
                    op: "softmax_rows",
                    detail: format!("mask {:?} vs input {:?}", m.shape(), x.shape()),
                });
            }
        }
        let (r, c) = (x.rows(), x.cols());
        let mut out = Array::zeros(vec![r, c]);
        for i in 0..r {
            let live = |j: usize| mask.is_none_or(|m| m.at2(i, j));
            let mut row_max = F::neg_infinity();
            let mut any = false;
            for j in 0..c {
                if live(j) {
                    any = true;
                    row_max = row_max.max(x.at2(i, j));
                }
            }
            if !any {
                return Err(Error::DegenerateRow { row: i });
            }
            let mut denom = F::zero();
            for j in 0..c {
                if live(j) {
                    let e = (x.at2(i, j) - row_max).exp();
                    out.set2(i, j, e);
                    denom += e;
                }
            }
            for j in 0..c {
                if live(j) {
                    let v = out.at2(i, j) / denom;
                    out.set2(i, j, v);
                }
            }
        }
        self.push(Op::SoftmaxRows { a, mask: mask.cloned() }, out, "softmax_rows")
    }

    fn reduce_value(&self, a: VarId, axis: Option<usize>, mean: bool) -> Result<Array<F>> {
        let x = self.value(a);
        match axis {
            None => {
                let n = x.numel();
                let mut s = F::zero();
                for &v in x.data() {
                    s += v;
                }
                if mean {
                    s /= lit::<F>(n as f64);
                }
                Ok(Array::scalar(s))
            }
            Some(ax) => {
                if !x.is_matrix() || ax > 1 {
                    return Err(Error::Shape {
                        op: "reduce",
                        detail: format!("axis {ax} on shape {:?}", x.shape()),
                    });
                }
                let (r, c) = (x.rows(), x.cols());
                if ax == 0 {
                    let mut out = Array::zeros(vec![1, c]);
                    for i in 0..r {
                        for j in 0..c {
                            let v = out.at2(0, j) + x.at2(i, j);
                            out.set2(0, j, v);
                        }
                    }
                    if mean {
                        out = out.map(|v| v / lit::<F>(r as f64));
                    }
                    Ok(out)
                } else {
                    let mut out = Array::zeros(vec![r, 1]);
                    for i in 0..r {
                        let mut s = F::zero();
                        for j in 0..c {
                            s += x.at2(i, j);
                        }
                        out.set2(i, 0, if mean { s / lit::<F>(c as f64) } else { s });
                    }
                    Ok(out)
                }
            }
        }
    }

    /// Sum over an axis (0 or 1 of a matrix) or over all elements (`None`).
    pub fn sum(&mut self, a: VarId, axis: Option<usize>) -> Result<VarId> {
        let v = self.reduce_value(a, axis, false)?;
        self.push(Op::Sum { a, axis }, v, "sum")
    }

    /// Mean over an axis (0 or 1 of a matrix) or over all elements (`None`).
    pub fn mean(&mut self, a: VarId, axis: Option<usize>) -> Result<VarId> {
        let v = self.reduce_value(a, axis, true)?;
        self.push(Op::Mean { a, axis }, v, "mean")
    }

    /// Row-wise layer normalization with affine gain/bias of length `cols`.
    pub fn layer_norm(&mut self, a: VarId, gain: VarId, bias: VarId, eps: F) -> Result<VarId> {
        let x = self.value(a);
        if !x.is_matrix() {
            return Err(Error::Shape { op: "layer_norm", detail: "input must be a matrix".into() });
        }
        let c = x.cols();
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(Error::Shape {
                op: "layer_norm",
                detail: format!("gain/bias must have {c} elements"),
            });
        }
        let (xhat, _) = layer_norm_stats(x, eps);
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = xhat.clone();
        for i in 0..out.rows() {
            for j in 0..c {
                let v = out.at2(i, j) * g[j] + b[j];
                out.set2(i, j, v);
            }
        }
        self.push(Op::LayerNorm { a, gain, bias, eps }, out, "layer_norm")
    }

    /// Concatenate two matrices along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, a: VarId, b: VarId, axis: usize) -> Result<VarId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.is_matrix() || !vb.is_matrix() || axis > 1 {
            return Err(Error::Shape { op: "concat", detail: "matrices and axis 0/1 only".into() });
        }
        let value = if axis == 0 {
            if va.cols() != vb.cols() {
                return Err(Error::Shape {
                    op: "concat",
                    detail: format!("{:?} / {:?} on axis 0", va.shape(), vb.shape()),
                });
            }
            let mut data = va.data().to_vec();
            data.extend_from_slice(vb.data());
            Array::new(vec![va.rows() + vb.rows(), va.cols()], data)?
        } else {
            if va.rows() != vb.rows() {
                return Err(Error::Shape {
                    op: "concat",
                    detail: format!("{:?} / {:?} on axis 1", va.shape(), vb.shape()),
                });
            }
            let (r, ca, cb) = (va.rows(), va.cols(), vb.cols());
            let mut data = Vec::with_capacity(r * (ca + cb));
            for i in 0..r {
                data.extend_from_slice(va.row(i));
                data.extend_from_slice(vb.row(i));
            }
            Array::new(vec![r, ca + cb], data)?
        };
        self.push(Op::Concat { a, b, axis }, value, "concat")
    }

    /// Select rows of a matrix by index (duplicates allowed).
    pub fn gather_rows(&mut self, a: VarId, idx: &[usize]) -> Result<VarId> {
        let x = self.value(a);
        if !x.is_matrix() {
            return Err(Error::Shape { op: "gather_rows", detail: "matrix input only".into() });
        }
        if idx.iter().any(|&i| i >= x.rows()) {
            return Err(Error::Shape { op: "gather_rows", detail: "row index out of range".into() });
        }
        let c = x.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let value = Array::new(vec![idx.len(), c], data)?;
        self.push(Op::GatherRows { a, idx: idx.to_vec() }, value, "gather_rows")
    }

    /// Accumulate rows of `a` into an `n_rows x cols` zero matrix at `idx`.
    pub fn scatter_add_rows(&mut self, a: VarId, idx: &[usize], n_rows: usize) -> Result<VarId> {
        let x = self.value(a);
        if !x.is_matrix() || x.rows() != idx.len() {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                detail: "one index per input row required".into(),
            });
        }
        if idx.iter().any(|&i| i >= n_rows) {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                detail: "target row out of range".into(),
            });
        }
        let c = x.cols();
        let mut out = Array::zeros(vec![n_rows, c]);
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..c {
                let v = out.at2(i, j) + x.at2(r, j);
                out.set2(i, j, v);
            }
        }
        self.push(Op::ScatterAddRows { a, idx: idx.to_vec() }, out, "scatter_add_rows")
    }

    /// Forward the given hard values, but route gradients to `soft`
    /// unchanged (straight-through estimator).
    pub fn straight_through(&mut self, soft: VarId, hard: Array<F>) -> Result<VarId> {
        if !self.value(soft).same_shape(&hard) {
            return Err(Error::Shape {
                op: "straight_through",
                detail: "hard values must match soft shape".into(),
            });
        }
        self.push(Op::StraightThrough { soft }, hard, "straight_through")
    }

    /// Inverted dropout with an externally drawn keep mask.
    pub fn dropout(&mut self, a: VarId, mask: &[bool], rate: F) -> Result<VarId> {
        let x = self.value(a);
        if mask.len() != x.numel() {
            return Err(Error::Shape { op: "dropout", detail: "mask length mismatch".into() });
        }
        let scale = F::one() / (F::one() - rate);
        let data = x
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &keep)| if keep { v * scale } else { F::zero() })
            .collect();
        let value = Array::new(x.shape().to_vec(), data)?;
        self.push(Op::Dropout { a, mask: mask.to_vec(), scale }, value, "dropout")
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar loss. Visits each node exactly once.
    pub fn backward(&self, loss: VarId) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Array<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array::scalar(F::one()));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn add_into(grads: &mut [Option<Array<F>>], id: VarId, delta: Array<F>) {
        match &mut grads[id.0] {
            Some(g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv += *dv;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reduce an elementwise gradient back to a broadcast 1-element operand.
    fn reduce_for(&self, id: VarId, g: Array<F>) -> Array<F> {
        if self.value(id).numel() == 1 && g.numel() != 1 {
            let mut s = F::zero();
            for &v in g.data() {
                s += v;
            }
            let mut out = Array::zeros(self.value(id).shape().to_vec());
            out.data_mut()[0] = s;
            out
        } else {
            g
        }
    }

    /// Materialize the upstream gradient at the full elementwise shape of
    /// the (possibly scalar-broadcast) binary op.
    fn full_grad(g: &Array<F>, shape: &[usize]) -> Array<F> {
        if g.shape() == shape {
            g.clone()
        } else {
            Array::full(shape.to_vec(), g.data()[0])
        }
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate_parents(
        &self,
        i: usize,
        g: &Array<F>,
        grads: &mut [Option<Array<F>>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = g.matmul(&vb.transpose()?)?;
                let db = va.transpose()?.matmul(g)?;
                Self::add_into(grads, *a, da);
                Self::add_into(grads, *b, db);
            }
            Op::Transpose { a } => {
                Self::add_into(grads, *a, g.transpose()?);
            }
            Op::Add { a, b } => {
                let shape = node.value.shape();
                let gf = Self::full_grad(g, shape);
                Self::add_into(grads, *a, self.reduce_for(*a, gf.clone()));
                Self::add_into(grads, *b, self.reduce_for(*b, gf));
            }
            Op::Sub { a, b } => {
                let shape = node.value.shape();
                let gf = Self::full_grad(g, shape);
                Self::add_into(grads, *a, self.reduce_for(*a, gf.clone()));
                Self::add_into(grads, *b, self.reduce_for(*b, gf.map(|x| -x)));
            }
            Op::Mul { a, b } => {
                let shape = node.value.shape().to_vec();
                let gf = Self::full_grad(g, &shape);
                let bv = Self::broadcast_to(self.value(*b), &shape);
                let av = Self::broadcast_to(self.value(*a), &shape);
                let da = gf.zip(&bv, |g, b| g * b)?;
                let db = gf.zip(&av, |g, a| g * a)?;
                Self::add_into(grads, *a, self.reduce_for(*a, da));
                Self::add_into(grads, *b, self.reduce_for(*b, db));
            }
            Op::Div { a, b } => {
                let shape = node.value.shape().to_vec();
                let gf = Self::full_grad(g, &shape);
                let bv = Self::broadcast_to(self.value(*b), &shape);
                let av = Self::broadcast_to(self.value(*a), &shape);
                let da = gf.zip(&bv, |g, b| g / b)?;
                let db_full = {
                    let mut out = gf.clone();
                    for ((o, &a), &b) in
                        out.data_mut().iter_mut().zip(av.data()).zip(bv.data())
                    {
                        *o = -*o * a / (b * b);
                    }
                    out
                };
                Self::add_into(grads, *a, self.reduce_for(*a, da));
                Self::add_into(grads, *b, self.reduce_for(*b, db_full));
            }
            Op::Neg { a } => Self::add_into(grads, *a, g.map(|x| -x)),
            Op::Sigmoid { a } => {
                let y = &node.value;
                let da = g.zip(y, |g, y| g * y * (F::one() - y))?;
                Self::add_into(grads, *a, da);
            }
            Op::Relu { a } => {
                let x = self.value(*a);
                let da = g.zip(x, |g, x| if x > F::zero() { g } else { F::zero() })?;
                Self::add_into(grads, *a, da);
            }
            Op::Softplus { a } => {
                let x = self.value(*a);
                let da = g.zip(x, |g, x| g * stable_sigmoid(x))?;
                Self::add_into(grads, *a, da);
            }
            Op::Exp { a } => {
                let da = g.zip(&node.value, |g, y| g * y)?;
                Self::add_into(grads, *a, da);
            }
            Op::Log { a } => {
                let x = self.value(*a);
                let da = g.zip(x, |g, x| g / x)?;
                Self::add_into(grads, *a, da);
            }
            Op::Sqrt { a } => {
                let tiny = lit::<F>(1e-150);
                let da = g.zip(&node.value, |g, y| g / (lit::<F>(2.0) * y.max(tiny)))?;
                Self::add_into(grads, *a, da);
            }
            Op::Abs { a } => {
                let x = self.value(*a);
                let da = g.zip(x, |g, x| {
                    if x > F::zero() {
                        g
                    } else if x < F::zero() {
                        -g
                    } else {
                        F::zero()
                    }
                })?;
                Self::add_into(grads, *a, da);
            }
            Op::Scale { a, c } => Self::add_into(grads, *a, g.map(|x| x * *c)),
            Op::AddScalar { a } => Self::add_into(grads, *a, g.clone()),
            Op::Clamp { a, lo, hi } => {
                let x = self.value(*a);
                let da = g.zip(x, |g, x| {
                    let below = lo.is_some_and(|l| x <= l);
                    let above = hi.is_some_and(|h| x >= h);
                    if below || above {
                        F::zero()
                    } else {
                        g
                    }
                })?;
                Self::add_into(grads, *a, da);
            }
            Op::SoftmaxRows { a, mask } => {
                let y = &node.value;
                let (r, c) = (y.rows(), y.cols());
                let mut da = Array::zeros(vec![r, c]);
                for row in 0..r {
                    let live = |j: usize| mask.as_ref().is_none_or(|m| m.at2(row, j));
                    let mut dot = F::zero();
                    for j in 0..c {
                        if live(j) {
                            dot += g.at2(row, j) * y.at2(row, j);
                        }
                    }
                    for j in 0..c {
                        if live(j) {
                            da.set2(row, j, y.at2(row, j) * (g.at2(row, j) - dot));
                        }
                    }
                }
                Self::add_into(grads, *a, da);
            }
            Op::Sum { a, axis } | Op::Mean { a, axis } => {
                let x_shape = self.value(*a).shape().to_vec();
                let mean = matches!(node.op, Op::Mean { .. });
                let da = match axis {
                    None => {
                        let n = x_shape.iter().product::<usize>();
                        let v = if mean {
                            g.data()[0] / lit::<F>(n as f64)
                        } else {
                            g.data()[0]
                        };
                        Array::full(x_shape, v)
                    }
                    Some(ax) => {
                        let (r, c) = (x_shape[0], x_shape[1]);
                        let mut out = Array::zeros(x_shape.clone());
                        for i in 0..r {
                            for j in 0..c {
                                let gv = if *ax == 0 { g.at2(0, j) } else { g.at2(i, 0) };
                                let denom = if *ax == 0 { r } else { c };
                                let v = if mean { gv / lit::<F>(denom as f64) } else { gv };
                                out.set2(i, j, v);
                            }
                        }
                        out
                    }
                };
                Self::add_into(grads, *a, da);
            }
            Op::LayerNorm { a, gain, bias, eps } => {
                let x = self.value(*a);
                let (xhat, inv_std) = layer_norm_stats(x, *eps);
                let (r, c) = (x.rows(), x.cols());
                let gv = self.value(*gain).data().to_vec();
                let mut dgain = Array::zeros(self.value(*gain).shape().to_vec());
                let mut dbias = Array::zeros(self.value(*bias).shape().to_vec());
                let mut dx = Array::zeros(vec![r, c]);
                let cn = lit::<F>(c as f64);
                for i in 0..r {
                    let mut mean_h = F::zero();
                    let mut mean_hx = F::zero();
                    for j in 0..c {
                        let h = g.at2(i, j) * gv[j];
                        mean_h += h;
                        mean_hx += h * xhat.at2(i, j);
                        dgain.data_mut()[j] += g.at2(i, j) * xhat.at2(i, j);
                        dbias.data_mut()[j] += g.at2(i, j);
                    }
                    mean_h /= cn;
                    mean_hx /= cn;
                    for j in 0..c {
                        let h = g.at2(i, j) * gv[j];
                        dx.set2(i, j, inv_std[i] * (h - mean_h - xhat.at2(i, j) * mean_hx));
                    }
                }
                Self::add_into(grads, *a, dx);
                Self::add_into(grads, *gain, dgain);
                Self::add_into(grads, *bias, dbias);
            }
            Op::Concat { a, b, axis } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (ra, ca) = (va.rows(), va.cols());
                let (rb, cb) = (vb.rows(), vb.cols());
                let mut da = Array::zeros(vec![ra, ca]);
                let mut db = Array::zeros(vec![rb, cb]);
                if *axis == 0 {
                    for i in 0..ra {
                        for j in 0..ca {
                            da.set2(i, j, g.at2(i, j));
                        }
                    }
                    for i in 0..rb {
                        for j in 0..cb {
                            db.set2(i, j, g.at2(ra + i, j));
                        }
                    }
                } else {
                    for i in 0..ra {
                        for j in 0..ca {
                            da.set2(i, j, g.at2(i, j));
                        }
                        for j in 0..cb {
                            db.set2(i, j, g.at2(i, ca + j));
                        }
                    }
                }
                Self::add_into(grads, *a, da);
                Self::add_into(grads, *b, db);
            }
            Op::GatherRows { a, idx } => {
                let x = self.value(*a);
                let mut da = Array::zeros(vec![x.rows(), x.cols()]);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..x.cols() {
                        let v = da.at2(i, j) + g.at2(r, j);
                        da.set2(i, j, v);
                    }
                }
                Self::add_into(grads, *a, da);
            }
            Op::ScatterAddRows { a, idx } => {
                let x = self.value(*a);
                let mut da = Array::zeros(vec![x.rows(), x.cols()]);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..x.cols() {
                        da.set2(r, j, g.at2(i, j));
                    }
                }
                Self::add_into(grads, *a, da);
            }
            Op::StraightThrough { soft } => {
                Self::add_into(grads, *soft, g.clone());
            }
            Op::Dropout { a, mask, scale } => {
                let data = g
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&v, &keep)| if keep { v * *scale } else { F::zero() })
                    .collect();
                let da = Array::new(g.shape().to_vec(), data)?;
                Self::add_into(grads, *a, da);
            }
        }
        Ok(())
    }

    fn broadcast_to(x: &Array<F>, shape: &[usize]) -> Array<F> {
        if x.shape() == shape {
            x.clone()
        } else {
            Array::full(shape.to_vec(), x.data()[0])
        }
    }
}

#[inline]
fn stable_sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
fn stable_softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-(x.abs())).exp().ln_1p()
}

/// Row-normalized values and per-row inverse std of layer normalization.
fn layer_norm_stats<F: Scalar>(x: &Array<F>, eps: F) -> (Array<F>, Vec<F>) {
    let (r, c) = (x.rows(), x.cols());
    let cn = lit::<F>(c as f64);
    let mut xhat = Array::zeros(vec![r, c]);
    let mut inv_std = Vec::with_capacity(r);
    for i in 0..r {
        let mut mu = F::zero();
        for j in 0..c {
            mu += x.at2(i, j);
        }
        mu /= cn;
        let mut var = F::zero();
        for j in 0..c {
            let d = x.at2(i, j) - mu;
            var += d * d;
        }
        var /= cn;
        let s = F::one() / (var + eps).sqrt();
        inv_std.push(s);
        for j in 0..c {
            xhat.set2(i, j, (x.at2(i, j) - mu) * s);
        }
    }
    (xhat, inv_std)
}

// ---- gradient checking ------------------------------------------------

/// Central-difference gradient check. `build` constructs a fresh tape from
/// parameter values and returns the scalar loss plus the on-tape ids of
/// each parameter. Returns the maximum relative error over every
/// coordinate of every parameter, with relative error defined as
/// |a - n| / max(1e-8, |a| + |n|).
pub fn grad_check<F, B>(build: &B, params: &ParamMap<F>, eps: F) -> Result<F>
where
    F: Scalar,
    B: Fn(&ParamMap<F>, &mut Tape<F>) -> Result<(VarId, BTreeMap<String, VarId>)>,
{
    let mut tape = Tape::new();
    let (loss, ids) = build(params, &mut tape)?;
    let grads = tape.backward(loss)?;

    let eval = |p: &ParamMap<F>| -> Result<F> {
        let mut t = Tape::new();
        let (l, _) = build(p, &mut t)?;
        t.value(l).item()
    };

    let mut max_err = F::zero();
    let mut work = params.clone();
    for (name, value) in params {
        let id = ids
            .get(name)
            .ok_or_else(|| Error::Contract(format!("builder did not bind parameter {name}")))?;
        let analytic = grads.get_or_zeros(*id, value.shape());
        for k in 0..value.numel() {
            let orig = value.data()[k];
            work.get_mut(name).unwrap().data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[k] = orig;
            let numeric = (plus - minus) / (lit::<F>(2.0) * eps);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / lit::<F>(1e-8).max(a.abs() + numeric.abs());
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tape<f64>;

    fn arr(shape: &[usize], data: &[f64]) -> Array<f64> {
        Array::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_passthrough() {
        let mut t = T::new();
        let x = t.leaf(arr(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let i = t.leaf(Array::eye(3)).unwrap();
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn matmul_hand_computed() {
        let mut t = T::new();
        let a = t.leaf(arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = t.leaf(arr(&[2, 1], &[1.0, 1.0])).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_gradient_vs_finite_differences() {
        let mut rng = crate::rng::Rng::new(9);
        let mut params = ParamMap::new();
        params.insert("a".into(), arr(&[4, 3], &(0..12).map(|_| rng.normal()).collect::<Vec<_>>()));
        params.insert("b".into(), arr(&[3, 2], &(0..6).map(|_| rng.normal()).collect::<Vec<_>>()));
        let build = |p: &ParamMap<f64>, t: &mut T| {
            let a = t.leaf(p["a"].clone())?;
            let b = t.leaf(p["b"].clone())?;
            let c = t.matmul(a, b)?;
            let sq = t.mul(c, c)?;
            let loss = t.sum(sq, None)?;
            Ok((loss, BTreeMap::from([("a".into(), a), ("b".into(), b)])))
        };
        let err = grad_check(&build, &params, 1e-5).unwrap();
        assert!(err < 1e-6, "matmul grad rel err {err}");
    }

    #[test]
    fn sigmoid_values_and_derivative_at_zero() {
        let mut t = T::new();
        let x = t.leaf(Array::scalar(0.0)).unwrap();
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).item().unwrap(), 0.5);
        let g = t.backward(y).unwrap();
        assert!((g.get(x).unwrap().item().unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn relu_definition() {
        let mut t = T::new();
        let x = t.leaf(arr(&[1, 2], &[-2.0, 3.0])).unwrap();
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 3.0]);
    }

    #[test]
    fn log_domain_error() {
        let mut t = T::new();
        let x = t.leaf(arr(&[1, 2], &[1.0, 0.0])).unwrap();
        assert!(matches!(t.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn softmax_symmetry_and_hand_value() {
        let mut t = T::new();
        let x = t.leaf(arr(&[1, 2], &[0.0, 0.0])).unwrap();
        let y = t.softmax_rows(x, None).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);

        let x2 = t.leaf(arr(&[1, 2], &[2.0f64.ln(), 0.0])).unwrap();
        let y2 = t.softmax_rows(x2, None).unwrap();
        let v = t.value(y2).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut t = T::new();
        let x = t.leaf(arr(&[1, 3], &[0.3, -1.2, 2.4])).unwrap();
        let y = t.softmax_rows(x, None).unwrap();
        let xs = t.add_scalar(x, 17.5).unwrap();
        let ys = t.softmax_rows(xs, None).unwrap();
        let (a, b) = (t.value(y).clone(), t.value(ys).clone());
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask() {
        let mut t = T::new();
        let x = t.leaf(arr(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0])).unwrap();
        let mask =
            BoolArray::new(vec![2, 3], vec![true, false, true, true, true, true]).unwrap();
        let y = t.softmax_rows(x, Some(&mask)).unwrap();
        let v = t.value(y);
        assert_eq!(v.at2(0, 1), 0.0);
        for i in 0..2 {
            let s: f64 = (0..3).map(|j| v.at2(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!((0..3).all(|j| (0.0..=1.0).contains(&v.at2(i, j))));
        }
    }

    #[test]
    fn softmax_fully_masked_row_errors() {
        let mut t = T::new();
        let x = t.leaf(arr(&[1, 2], &[1.0, 2.0])).unwrap();
        let mask = BoolArray::new(vec![1, 2], vec![false, false]).unwrap();
        assert!(matches!(t.softmax_rows(x, Some(&mask)), Err(Error::DegenerateRow { row: 0 })));
    }

    #[test]
    fn sum_and_mean_values() {
        let mut t = T::new();
        let x = t.leaf(arr(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let s = t.sum(x, None).unwrap();
        assert_eq!(t.value(s).item().unwrap(), 6.0);
        // mean over an axis of length 1 keeps the values
        let col = t.leaf(arr(&[3, 1], &[4.0, 5.0, 6.0])).unwrap();
        let m = t.mean(col, Some(1)).unwrap();
        assert_eq!(t.value(m).data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn mean_gradient_is_one_over_n() {
        let mut params = ParamMap::new();
        params.insert("x".into(), arr(&[1, 4], &[0.4, -0.3, 1.7, 2.2]));
        let build = |p: &ParamMap<f64>, t: &mut T| {
            let x = t.leaf(p["x"].clone())?;
            let m = t.mean(x, None)?;
            Ok((m, BTreeMap::from([("x".into(), x)])))
        };
        let err = grad_check(&build, &params, 1e-5).unwrap();
        assert!(err < 1e-9, "mean grad err {err}");
        let mut t = T::new();
        let x = t.leaf(params["x"].clone()).unwrap();
        let m = t.mean(x, None).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn layer_norm_constant_row_maps_to_bias() {
        let mut t = T::new();
        let x = t.leaf(arr(&[1, 4], &[3.0, 3.0, 3.0, 3.0])).unwrap();
        let gain = t.leaf(arr(&[1, 4], &[1.0; 4])).unwrap();
        let bias = t.leaf(arr(&[1, 4], &[0.0; 4])).unwrap();
        let y = t.layer_norm(x, gain, bias, 1e-5).unwrap();
        for &v in t.value(y).data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_matches_direct_formula() {
        let mut rng = crate::rng::Rng::new(21);
        let data: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let gain: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let bias: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let eps = 1e-5;

        let mut t = T::new();
        let x = t.leaf(arr(&[3, 4], &data)).unwrap();
        let gn = t.leaf(arr(&[1, 4], &gain)).unwrap();
        let bs = t.leaf(arr(&[1, 4], &bias)).unwrap();
        let y = t.layer_norm(x, gn, bs, eps).unwrap();

        // independent dense recomputation
        for i in 0..3 {
            let row = &data[i * 4..(i + 1) * 4];
            let mu: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 4.0;
            for j in 0..4 {
                let want = (row[j] - mu) / (var + eps).sqrt() * gain[j] + bias[j];
                assert!((t.value(y).at2(i, j) - want).abs() < 1e-12);
            }
            // pre-affine row mean ~ 0
            let mut m = 0.0;
            for j in 0..4 {
                m += (t.value(y).at2(i, j) - bias[j]) / gain[j];
            }
            assert!((m / 4.0).abs() < 1e-10);
        }
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = crate::rng::Rng::new(33);
        let mut params = ParamMap::new();
        params.insert("x".into(), arr(&[3, 5], &(0..15).map(|_| rng.normal()).collect::<Vec<_>>()));
        params.insert("g".into(), arr(&[1, 5], &(0..5).map(|_| 1.0 + 0.1 * rng.normal()).collect::<Vec<_>>()));
        params.insert("b".into(), arr(&[1, 5], &(0..5).map(|_| rng.normal()).collect::<Vec<_>>()));
        let build = |p: &ParamMap<f64>, t: &mut T| {
            let x = t.leaf(p["x"].clone())?;
            let g = t.leaf(p["g"].clone())?;
            let b = t.leaf(p["b"].clone())?;
            let y = t.layer_norm(x, g, b, 1e-5)?;
            let sq = t.mul(y, y)?;
            let loss = t.sum(sq, None)?;
            Ok((
                loss,
                BTreeMap::from([("x".into(), x), ("g".into(), g), ("b".into(), b)]),
            ))
        };
        let err = grad_check(&build, &params, 1e-5).unwrap();
        assert!(err < 1e-6, "layer_norm grad err {err}");
    }

    #[test]
    fn concat_values_and_shapes() {
        let mut t = T::new();
        let a = t.leaf(arr(&[1, 1], &[1.0])).unwrap();
        let b = t.leaf(arr(&[1, 1], &[2.0])).unwrap();
        let c = t.concat(a, b, 1).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0]);

        let p = t.leaf(Array::zeros(vec![2, 3])).unwrap();
        let q = t.leaf(Array::zeros(vec![2, 5])).unwrap();
        let r = t.concat(p, q, 1).unwrap();
        assert_eq!(t.value(r).shape(), &[2, 8]);
    }

    #[test]
    fn concat_gradient_splits_to_parents() {
        let mut rng = crate::rng::Rng::new(4);
        let mut params = ParamMap::new();
        params.insert("a".into(), arr(&[2, 3], &(0..6).map(|_| rng.normal()).collect::<Vec<_>>()));
        params.insert("b".into(), arr(&[2, 2], &(0..4).map(|_| rng.normal()).collect::<Vec<_>>()));
        let build = |p: &ParamMap<f64>, t: &mut T| {
            let a = t.leaf(p["a"].clone())?;
            let b = t.leaf(p["b"].clone())?;
            let c = t.concat(a, b, 1)?;
            let s = t.sigmoid(c)?;
            let sq = t.mul(s, s)?;
            let loss = t.sum(sq, None)?;
            Ok((loss, BTreeMap::from([("a".into(), a), ("b".into(), b)])))
        };
        let err = grad_check(&build, &params, 1e-5).unwrap();
        assert!(err < 1e-7, "concat grad err {err}");
    }

    #[test]
    fn backward_power_rule() {
        let mut t = T::new();
        let x = t.leaf(Array::scalar(3.0)).unwrap();
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn backward_unreached_parameter_gets_zero() {
        let mut t = T::new();
        let x = t.leaf(Array::scalar(3.0)).unwrap();
        let unused = t.leaf(Array::scalar(5.0)).unwrap();
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zeros(unused, &[1]).data(), &[0.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut t = T::new();
        let x = t.leaf(arr(&[1, 2], &[1.0, 2.0])).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut rng = crate::rng::Rng::new(77);
            let mut t = T::new();
            let a = t
                .leaf(arr(&[3, 3], &(0..9).map(|_| rng.normal()).collect::<Vec<_>>()))
                .unwrap();
            let b = t
                .leaf(arr(&[3, 3], &(0..9).map(|_| rng.normal()).collect::<Vec<_>>()))
                .unwrap();
            let c = t.matmul(a, b).unwrap();
            let s = t.sigmoid(c).unwrap();
            let loss = t.sum(s, None).unwrap();
            let g = t.backward(loss).unwrap();
            (g.get(a).unwrap().clone(), g.get(b).unwrap().clone())
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn grad_check_identity_is_exact_at_binary_eps() {
        let mut params = ParamMap::new();
        params.insert("x".into(), Array::scalar(1.0));
        let build = |p: &ParamMap<f64>, t: &mut T| {
            let x = t.leaf(p["x"].clone())?;
            Ok((x, BTreeMap::from([("x".into(), x)])))
        };
        // power-of-two step keeps 1 +/- eps exact in binary floating point
        let err = grad_check(&build, &params, (2.0f64).powi(-17)).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_sigmoid_chain() {
        let mut params = ParamMap::new();
        params.insert("x".into(), Array::scalar(0.37));
        let build = |p: &ParamMap<f64>, t: &mut T| {
            let x = t.leaf(p["x"].clone())?;
            let a = t.sigmoid(x)?;
            let b = t.sigmoid(a)?;
            Ok((b, BTreeMap::from([("x".into(), x)])))
        };
        let err = grad_check(&build, &params, 1e-5).unwrap();
        assert!(err < 1e-7, "sigmoid chain err {err}");
    }

    #[test]
    fn elementwise_gradients_vs_finite_differences() {
        let mut rng = crate::rng::Rng::new(8);
        let mut params = ParamMap::new();
        params.insert("x".into(), arr(&[2, 3], &(0..6).map(|_| 0.5 + rng.uniform()).collect::<Vec<_>>()));
        params.insert("y".into(), arr(&[2, 3], &(0..6).map(|_| 0.5 + rng.uniform()).collect::<Vec<_>>()));
        let build = |p: &ParamMap<f64>, t: &mut T| {
            let x = t.leaf(p["x"].clone())?;
            let y = t.leaf(p["y"].clone())?;
            let d = t.div(x, y)?;
            let sp = t.softplus(d)?;
            let lg = t.log(sp)?;
            let e = t.exp(lg)?;
            let sq = t.sqrt(e)?;
            let m = t.mul(sq, x)?;
            let s = t.sub(m, y)?;
            let a = t.abs(s)?;
            let loss = t.sum(a, None)?;
            Ok((loss, BTreeMap::from([("x".into(), x), ("y".into(), y)])))
        };
        let err = grad_check(&build, &params, 1e-6).unwrap();
        assert!(err < 1e-6, "elementwise chain err {err}");
    }

    #[test]
    fn scalar_broadcast_gradients() {
        let mut params = ParamMap::new();
        params.insert("x".into(), arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        params.insert("s".into(), Array::scalar(1.5));
        let build = |p: &ParamMap<f64>, t: &mut T| {
            let x = t.leaf(p["x"].clone())?;
            let s = t.leaf(p["s"].clone())?;
            let y = t.mul(x, s)?;
            let z = t.div(y, s)?;
            let w = t.add(z, s)?;
            let loss = t.sum(w, None)?;
            Ok((loss, BTreeMap::from([("x".into(), x), ("s".into(), s)])))
        };
        let err = grad_check(&build, &params, 1e-6).unwrap();
        assert!(err < 1e-7, "broadcast err {err}");
    }

    #[test]
    fn gather_scatter_gradients() {
        let mut rng = crate::rng::Rng::new(12);
        let mut params = ParamMap::new();
        params.insert("x".into(), arr(&[4, 2], &(0..8).map(|_| rng.normal()).collect::<Vec<_>>()));
        let build = |p: &ParamMap<f64>, t: &mut T| {
            let x = t.leaf(p["x"].clone())?;
            let g = t.gather_rows(x, &[0, 2, 2, 3])?;
            let s = t.scatter_add_rows(g, &[1, 0, 1, 2], 3)?;
            let sq = t.mul(s, s)?;
            let loss = t.sum(sq, None)?;
            Ok((loss, BTreeMap::from([("x".into(), x)])))
        };
        let err = grad_check(&build, &params, 1e-5).unwrap();
        assert!(err < 1e-8, "gather/scatter err {err}");
    }

    #[test]
    fn straight_through_routes_gradient_to_soft() {
        let mut t = T::new();
        let x = t.leaf(arr(&[1, 2], &[0.3, 0.9])).unwrap();
        let hard = arr(&[1, 2], &[0.0, 1.0]);
        let st = t.straight_through(x, hard).unwrap();
        assert_eq!(t.value(st).data(), &[0.0, 1.0]);
        let s = t.sum(st, None).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn dropout_eval_identity_train_masks() {
        let mut t = T::new();
        let x = t.leaf(arr(&[1, 4], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let mask = [true, false, true, false];
        let y = t.dropout(x, &mask, 0.5).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 0.0, 6.0, 0.0]);
    }

    #[test]
    fn nonfinite_forward_is_an_error() {
        let mut t = T::new();
        let x = t.leaf(Array::scalar(800.0)).unwrap();
        assert!(matches!(t.exp(x), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn f32_instantiation_works() {
        let mut t: Tape<f32> = Tape::new();
        let x = t.leaf(Array::scalar(0.0f32)).unwrap();
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).item().unwrap(), 0.5f32);
    }
}
