//! Dense row-major N-dimensional arrays, the carrier for all numeric data.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense array with shape metadata and row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Array<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Array<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape {
                op: "array::new",
                detail: format!("zero extent in shape {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "array::new",
                detail: format!("shape {shape:?} wants {numel} values, got {}", data.len()),
            });
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Array { shape, data: vec![F::zero(); numel] }
    }

    pub fn full(shape: Vec<usize>, v: F) -> Self {
        let numel = shape.iter().product();
        Array { shape, data: vec![v; numel] }
    }

    pub fn scalar(v: F) -> Self {
        Array { shape: vec![1], data: vec![v] }
    }

    /// Identity matrix n x n.
    pub fn eye(n: usize) -> Self {
        let mut a = Self::zeros(vec![n, n]);
        for i in 0..n {
            a.data[i * n + i] = F::one();
        }
        a
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape { op: "from_rows", detail: "no rows".into() });
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape { op: "from_rows", detail: "ragged rows".into() });
        }
        let data: Vec<F> = rows.iter().flatten().copied().collect();
        Array::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Value of a 1-element array.
    pub fn item(&self) -> Result<F> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on array of {} elements",
                self.numel()
            )));
        }
        Ok(self.data[0])
    }

    /// Rows of a matrix (rank-2 arrays only).
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    /// Columns of a matrix (rank-2 arrays only).
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> F {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.shape[1] + j] = v;
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_matrix(&self) -> bool {
        self.rank() == 2
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Array { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Shape {
                op: "zip",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Array { shape: self.shape.clone(), data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Dense matrix product. Inner loop ordered for row-major locality.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if !self.is_matrix() || !other.is_matrix() || self.cols() != other.rows() {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let (r, k, c) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * c..(i + 1) * c];
            for (p, &a_ip) in a_row.iter().enumerate() {
                let b_row = &other.data[p * c..(p + 1) * c];
                for (o, &b_pj) in o_row.iter_mut().zip(b_row) {
                    *o += a_ip * b_pj;
                }
            }
        }
        Ok(Array { shape: vec![r, c], data: out })
    }

    pub fn transpose(&self) -> Result<Self> {
        if !self.is_matrix() {
            return Err(Error::Shape {
                op: "transpose",
                detail: format!("rank {} array", self.rank()),
            });
        }
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Array { shape: vec![c, r], data: out })
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max)
    }
}

/// Boolean array with the same shape conventions as [`Array`]; used for
/// observation masks and graph structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolArray {
    shape: Vec<usize>,
    data: Vec<bool>,
}

impl BoolArray {
    pub fn new(shape: Vec<usize>, data: Vec<bool>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "boolarray::new",
                detail: format!("shape {shape:?} vs {} values", data.len()),
            });
        }
        Ok(BoolArray { shape, data })
    }

    pub fn filled(shape: Vec<usize>, v: bool) -> Self {
        let numel = shape.iter().product();
        BoolArray { shape, data: vec![v; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> bool {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.shape[1] + j] = v;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn transpose(&self) -> Self {
        debug_assert_eq!(self.shape.len(), 2);
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![false; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        BoolArray { shape: vec![c, r], data: out }
    }

    /// Lift to a 0/1 float array.
    pub fn to_array<F: Scalar>(&self) -> Array<F> {
        let data = self.data.iter().map(|&b| if b { F::one() } else { F::zero() }).collect();
        Array::new(self.shape.clone(), data).expect("shape preserved")
    }
}
