use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
///
/// Most of the engine works on rank-2 tensors (`rows × cols`); rank-1 tensors
/// are used for bias vectors and batch-norm affine parameters, and rank-0 for
/// scalar losses.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from `f64` rows. Panics on ragged input; intended for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend(row.iter().map(|&v| T::lit(v)));
        }
        Tensor {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    /// Empty `rows × 0` matrix.
    pub fn empty_cols(rows: usize) -> Self {
        Tensor {
            shape: vec![rows, 0],
            data: Vec::new(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Leading extent; 1 for scalars.
    #[inline]
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of the trailing extents; 1 for vectors and scalars.
    #[inline]
    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols() + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let cols = self.cols();
        self.data[row * cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[T] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[row * c..(row + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// In-place `self += other`; shapes must agree in element count.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, factor: T) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Multiplies row `i` by `factors[i]`.
    pub fn scale_rows(&self, factors: &[T]) -> Self {
        let cols = self.cols();
        debug_assert_eq!(factors.len(), self.rows());
        let mut out = self.clone();
        for (row, &f) in out.data.chunks_mut(cols.max(1)).zip(factors) {
            for v in row {
                *v *= f;
            }
        }
        out
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data,
        }
    }

    /// Plain matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Self) -> Self {
        let (k, m) = (self.rows(), self.cols());
        let n = other.cols();
        debug_assert_eq!(other.rows(), k);
        let mut out = vec![T::zero(); m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Self) -> Self {
        let (m, k) = (self.rows(), self.cols());
        let n = other.rows();
        debug_assert_eq!(other.cols(), k);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = a_row.iter().zip(b_row).map(|(&a, &b)| a * b).sum();
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = Tensor::<f64>::from_rows(&[&[1.0, 0.5], &[-1.0, 2.0]]);
        assert_eq!(a.t_matmul(&b), a.transpose().matmul(&b).unwrap());
        let c = Tensor::<f64>::from_rows(&[&[1.0, 0.0, 2.0], &[0.0, 1.0, -1.0]]);
        assert_eq!(a.matmul_t(&c), a.matmul(&c.transpose()).unwrap());
    }

    #[test]
    fn f32_works_too() {
        let a = Tensor::<f32>::from_rows(&[&[1.0, 2.0]]);
        let b = Tensor::<f32>::from_rows(&[&[3.0], &[4.0]]);
        assert_eq!(a.matmul(&b).unwrap().item().unwrap(), 11.0f32);
    }
}
