//! Dense 64-bit float tensors with the handful of raw operations the rest of
//! the crate is built from.
//!
//! Values are immutable once constructed; the differentiable layer in
//! [`crate::graph`] wraps these raw kernels with gradient rules.

use crate::error::{Error, Result};
use rand::Rng;

/// Dense multi-dimensional array of `f64` in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.data.len() <= 8 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} elems]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    /// Builds a tensor, checking that the extents are positive and match the
    /// data length.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Validation(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "new",
                detail: format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![1.0; numel] }
    }

    /// Rank-1 tensor from a data vector.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// Shape `[1]` tensor holding a single value.
    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: vec![x] }
    }

    /// Row-major matrix constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Identity matrix of order `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Entries drawn i.i.d. uniform from `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(lo..hi)).collect();
        Tensor { shape: shape.to_vec(), data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, x: f64) {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        self.data[i * cols + j] = x;
    }

    /// Column `j` of a rank-2 tensor as a vector.
    pub fn col(&self, j: usize) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Rank { op: "col", expected: "a matrix", got: self.shape.clone() });
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        if j >= cols {
            return Err(Error::Index { index: j, len: cols });
        }
        let data = (0..rows).map(|i| self.data[i * cols + j]).collect();
        Ok(Tensor::vector(data))
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Rank {
                op: "transpose",
                expected: "a matrix",
                got: self.shape.clone(),
            });
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[cols, rows]);
        for i in 0..rows {
            for j in 0..cols {
                out.data[j * rows + i] = self.data[i * cols + j];
            }
        }
        Ok(out)
    }

    /// Same data, new shape. Bit-exact round trip with the inverse reshape.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Euclidean norm over all elements.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest absolute elementwise difference; shapes must already agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape { op, detail: format!("{:?} vs {:?}", a.shape, b.shape) }
}

/// `[m,k] x [k,n] -> [m,n]` matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Rank {
            op: "matmul",
            expected: "two matrices",
            got: if a.rank() != 2 { a.shape.clone() } else { b.shape.clone() },
        });
    }
    if a.shape[1] != b.shape[0] {
        return Err(shape_err("matmul", a, b));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for l in 0..k {
            let ail = a.data[i * k + l];
            let brow = &b.data[l * n..(l + 1) * n];
            let orow = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += ail * brow[j];
            }
        }
    }
    Ok(out)
}

/// `[m,k] x [k] -> [m]` matrix-vector product.
pub fn matvec(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || x.rank() != 1 {
        return Err(Error::Rank {
            op: "matvec",
            expected: "a matrix and a vector",
            got: if a.rank() != 2 { a.shape.clone() } else { x.shape.clone() },
        });
    }
    if a.shape[1] != x.shape[0] {
        return Err(shape_err("matvec", a, x));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let mut out = Tensor::zeros(&[m]);
    for i in 0..m {
        let row = &a.data[i * k..(i + 1) * k];
        out.data[i] = row.iter().zip(&x.data).map(|(w, v)| w * v).sum();
    }
    Ok(out)
}

/// Outer product of two vectors: `out[i][j] = a[i] * b[j]`.
pub fn outer(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 1 || b.rank() != 1 {
        return Err(Error::Rank {
            op: "outer",
            expected: "two vectors",
            got: if a.rank() != 1 { a.shape.clone() } else { b.shape.clone() },
        });
    }
    let (m, n) = (a.shape[0], b.shape[0]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            out.data[i * n + j] = a.data[i] * b.data[j];
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
}

/// Pointwise binary operation over identically shaped tensors.
pub fn elementwise(a: &Tensor, b: &Tensor, op: ElemOp) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(shape_err("elementwise", a, b));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| match op {
            ElemOp::Add => x + y,
            ElemOp::Sub => x - y,
            ElemOp::Mul => x * y,
        })
        .collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Softmax over the last axis, computed with max-subtraction.
///
/// Rank-1 input is treated as a single row.
pub fn softmax(x: &Tensor) -> Tensor {
    let cols = *x.shape.last().expect("softmax on empty shape");
    let mut data = x.data.clone();
    for row in data.chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor { shape: x.shape.clone(), data }
}

/// Contracts a third-order tensor with a vector over the last axis:
/// `out[i][j] = sum_l c[i][j][l] * q[l]`.
pub fn contract3(c: &Tensor, q: &Tensor) -> Result<Tensor> {
    if c.rank() != 3 || q.rank() != 1 {
        return Err(Error::Rank {
            op: "contract3",
            expected: "a rank-3 tensor and a vector",
            got: if c.rank() != 3 { c.shape.clone() } else { q.shape.clone() },
        });
    }
    if c.shape[2] != q.shape[0] {
        return Err(shape_err("contract3", c, q));
    }
    let (d0, d1, k) = (c.shape[0], c.shape[1], c.shape[2]);
    let mut out = Tensor::zeros(&[d0, d1]);
    for i in 0..d0 {
        for j in 0..d1 {
            let fiber = &c.data[(i * d1 + j) * k..(i * d1 + j + 1) * k];
            out.data[i * d1 + j] = fiber.iter().zip(&q.data).map(|(c, q)| c * q).sum();
        }
    }
    Ok(out)
}

/// Column-stacking vectorization of a matrix: column `j` precedes column
/// `j+1` in the output.
pub fn vec_cols(m: &Tensor) -> Result<Tensor> {
    if m.rank() != 2 {
        return Err(Error::Rank { op: "vec", expected: "a matrix", got: m.shape.clone() });
    }
    let (rows, cols) = (m.shape[0], m.shape[1]);
    let mut data = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            data.push(m.data[i * cols + j]);
        }
    }
    Ok(Tensor::vector(data))
}

/// Inverse of [`vec_cols`]: rebuilds the `rows x cols` matrix.
pub fn unvec_cols(v: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
    if v.rank() != 1 {
        return Err(Error::Rank { op: "unvec", expected: "a vector", got: v.shape.clone() });
    }
    if v.numel() != rows * cols {
        return Err(Error::Shape {
            op: "unvec",
            detail: format!("{} elements into {rows}x{cols}", v.numel()),
        });
    }
    let mut out = Tensor::zeros(&[rows, cols]);
    for j in 0..cols {
        for i in 0..rows {
            out.data[i * cols + j] = v.data[j * rows + i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;

    #[test]
    fn matmul_identity_passes_through() {
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = matmul(&Tensor::eye(3), &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn outer_basis_vectors() {
        let e1 = Tensor::vector(vec![1.0, 0.0, 0.0]);
        let e2 = Tensor::vector(vec![0.0, 1.0, 0.0]);
        let m = outer(&e1, &e2).unwrap();
        let mut expect = Tensor::zeros(&[3, 3]);
        expect.set2(0, 1, 1.0);
        assert_eq!(m, expect);
    }

    #[test]
    fn outer_then_unbind_recovers_left_factor() {
        let a = Tensor::vector(vec![0.3, -1.2, 2.5]);
        let b = Tensor::vector(vec![0.6, 0.8]); // unit norm
        let m = outer(&a, &b).unwrap();
        let back = matvec(&m, &b).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn outer_rejects_matrices() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::vector(vec![1.0]);
        assert!(matches!(outer(&a, &b), Err(Error::Rank { .. })));
    }

    #[test]
    fn elementwise_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::uniform(&[4, 3], -1.0, 1.0, &mut rng);
        assert_eq!(elementwise(&x, &Tensor::ones(&[4, 3]), ElemOp::Mul).unwrap(), x);
        let zeroed = elementwise(&x, &Tensor::zeros(&[4, 3]), ElemOp::Mul).unwrap();
        assert_eq!(zeroed, Tensor::zeros(&[4, 3]));
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(&Tensor::scalar(0.0)).item(), 0.5);
    }

    #[test]
    fn softmax_of_constant_row_is_uniform() {
        let x = Tensor::vector(vec![2.5; 5]);
        let p = softmax(&x);
        for &v in p.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[6, 9], -30.0, 30.0, &mut rng);
        let p = softmax(&x);
        for row in p.data().chunks(9) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn contract3_delta_fiber() {
        // c[i][j][l] = 1 at l == 0, so contracting with q picks q[0].
        let (d, k) = (3, 4);
        let mut c = Tensor::zeros(&[d, d, k]);
        for i in 0..d {
            for j in 0..d {
                c.data_mut()[(i * d + j) * k] = 1.0;
            }
        }
        let mut q = Tensor::zeros(&[k]);
        q.data_mut()[0] = 2.5;
        let out = contract3(&c, &q).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.5));

        let zero = contract3(&c, &Tensor::zeros(&[k])).unwrap();
        assert_eq!(zero, Tensor::zeros(&[d, d]));
    }

    #[test]
    fn vec_is_column_stacking() {
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = vec_cols(&m).unwrap();
        assert_eq!(v.data(), &[1.0, 3.0, 2.0, 4.0]);
        let back = unvec_cols(&v, 2, 2).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn vec_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Tensor::uniform(&[5, 7], -1.0, 1.0, &mut rng);
        let back = unvec_cols(&vec_cols(&m).unwrap(), 5, 7).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn transpose_involutive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng);
        assert_eq!(m.transpose().unwrap().transpose().unwrap(), m);
    }

    #[test]
    fn reshape_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Tensor::uniform(&[3, 8], -1.0, 1.0, &mut rng);
        assert_eq!(m.reshape(vec![24]).unwrap().reshape(vec![3, 8]).unwrap(), m);
    }
}
