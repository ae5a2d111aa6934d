//! Minimal named-tensor storage shared by model parameters, gradients,
//! per-weight scores, and optimizer moments.
//!
//! Tensors are rank-1 or rank-2, row-major, and expose both flat-slice and
//! ndarray views. Keeping parameters in one flat enumeration (instead of a
//! struct per layer) is what makes the weight-level unlearning methods
//! uniform: "one score per parameter" is literally a parallel `TensorSet`.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};

/// Float scalar the numeric kernels are generic over. Training and inference
/// run at `f32`; the gradient-check harness instantiates the same code at
/// `f64`.
pub trait Scalar: ndarray::NdFloat + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64_val(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64_val(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64_val(self) -> f64 {
        self
    }
}

/// A named, shaped buffer of scalars. Rank 1 (`[n]`) or rank 2 (`[r, c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: F) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor; for rank-1, the full length.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn mat(&self) -> ArrayView2<'_, F> {
        debug_assert_eq!(self.rank(), 2);
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data).unwrap()
    }

    pub fn mat_mut(&mut self) -> ArrayViewMut2<'_, F> {
        debug_assert_eq!(self.rank(), 2);
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.data).unwrap()
    }

    pub fn vec(&self) -> ArrayView1<'_, F> {
        debug_assert_eq!(self.rank(), 1);
        ArrayView1::from_shape(self.shape[0], &self.data).unwrap()
    }

    pub fn vec_mut(&mut self) -> ArrayViewMut1<'_, F> {
        debug_assert_eq!(self.rank(), 1);
        ArrayViewMut1::from_shape(self.shape[0], &mut self.data).unwrap()
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Same shape, zero data, same name.
    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.name.clone(), &self.shape)
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            name: self.name.clone(),
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::from_f64(x.to_f64_val())).collect(),
        }
    }
}

/// An ordered collection of tensors sharing one enumeration. The order is
/// total and stable; flat parameter indices used by drop-set exports count
/// through tensors in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet<F> {
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> TensorSet<F> {
    pub fn new(tensors: Vec<Tensor<F>>) -> Self {
        TensorSet { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        TensorSet {
            tensors: self.tensors.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// In-place `self += rhs` element-wise.
    pub fn add_assign(&mut self, rhs: &TensorSet<F>) {
        debug_assert_eq!(self.tensors.len(), rhs.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(&rhs.tensors) {
            debug_assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + *y;
            }
        }
    }

    /// In-place `self *= c`.
    pub fn scale(&mut self, c: F) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x = *x * c;
            }
        }
    }

    pub fn cast<G: Scalar>(&self) -> TensorSet<G> {
        TensorSet {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Resolve a global flat index into (tensor index, offset within tensor).
    pub fn locate(&self, flat: usize) -> Option<(usize, usize)> {
        let mut base = 0;
        for (ti, t) in self.tensors.iter().enumerate() {
            if flat < base + t.len() {
                return Some((ti, flat - base));
            }
            base += t.len();
        }
        None
    }

    /// Global flat index of (tensor index, offset).
    pub fn flatten_index(&self, tensor: usize, offset: usize) -> usize {
        self.tensors[..tensor].iter().map(Tensor::len).sum::<usize>() + offset
    }
}
