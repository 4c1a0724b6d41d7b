//! Dense row-major matrices.
//!
//! Everything in this crate is at most two-dimensional: vectors are `1 x n`
//! rows, stacks of child states are `k x n` matrices.

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type. Training runs in `f32`, gradient checks in `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("scalar conversion")
    }
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub const fn row(cols: usize) -> Self {
        Self { rows: 1, cols }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(
            shape.len(),
            data.len(),
            "tensor data does not match shape {shape}"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape, v: T) -> Self {
        Self {
            shape,
            data: vec![v; shape.len()],
        }
    }

    pub fn row(values: Vec<T>) -> Self {
        Self {
            shape: Shape::row(values.len()),
            data: values,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::row(vec![v])
    }

    pub fn from_f64(shape: Shape, values: &[f64]) -> Self {
        Self::new(shape, values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(Shape::new(n, n));
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.shape.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.shape.cols;
        &self.data[r * c..(r + 1) * c]
    }

    /// First element; used for `1 x 1` losses.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// `self (m x k) * other (k x n)`.
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        let (m, k, n) = (self.shape.rows, self.shape.cols, other.shape.cols);
        debug_assert_eq!(k, other.shape.rows);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        Tensor::new(Shape::new(m, n), out)
    }

    pub fn transpose(&self) -> Tensor<T> {
        let (r, c) = (self.shape.rows, self.shape.cols);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(Shape::new(c, r), out)
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}, {:?})", self.shape, self.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let x = Tensor::<f64>::from_f64(Shape::new(2, 3), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(Tensor::identity(2).matmul(&x), x);
        assert_eq!(x.matmul(&Tensor::identity(3)), x);
    }

    #[test]
    fn transpose_roundtrip() {
        let x = Tensor::<f32>::from_f64(Shape::new(2, 3), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(x.transpose().shape(), Shape::new(3, 2));
        assert_eq!(x.transpose().get(2, 1), 6.0);
        assert_eq!(x.transpose().transpose(), x);
    }
}
