//! Dense row-major `f64` tensors and the handful of linear-algebra routines the
//! rest of the crate is built on.
//!
//! Storage is a flat `Vec<f64>` plus a shape; there are no strided views, so a
//! reshape only rewrites metadata. Matrix products accumulate each output
//! element over the inner dimension in ascending order, which keeps results
//! bit-reproducible between runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Dimension("tensor shape must have at least one axis".into()));
    }
    if let Some(axis) = shape.iter().position(|&d| d == 0) {
        return Err(Error::Dimension(format!(
            "shape {shape:?} has a zero extent on axis {axis}"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel = checked_numel(shape)?;
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; intended for shapes computed internally.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = checked_numel(shape).expect("invalid tensor shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    /// Standard-normal fill from a seeded ChaCha8 stream.
    pub fn randn(shape: &[usize], seed: u64) -> Result<Self> {
        let numel = checked_numel(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..numel).map(|_| rng.sample(StandardNormal)).collect();
        Self::new(shape, data)
    }

    /// Uniform fill on `[lo, hi)` (all `lo` when the interval is empty).
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Argument(format!("non-finite bounds [{lo}, {hi}]")));
        }
        if lo > hi {
            return Err(Error::Argument(format!("lower bound {lo} exceeds upper bound {hi}")));
        }
        let numel = checked_numel(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = hi - lo;
        let data = (0..numel).map(|_| lo + width * rng.random::<f64>()).collect();
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
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

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        self.reshape_in_place(shape)?;
        Ok(self)
    }

    pub fn reshape_in_place(&mut self, shape: &[usize]) -> Result<()> {
        let numel = checked_numel(shape)?;
        if numel != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(())
    }

    pub fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Dimension(format!(
                "{what}: expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Returns `(rows, cols)` of a rank-2 tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::Dimension(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "inner product of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .chunks(256)
            .all(|c| c.iter().fold(true, |ok, v| ok & v.is_finite()))
    }

    pub fn transpose(&self) -> Result<Self> {
        let (rows, cols) = self.matrix_dims()?;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = self.data[r * cols + c];
            }
        }
        Self::new(&[cols, rows], out)
    }
}

/// `out = A·B` for row-major `m×k` and `k×n` operands described by
/// (row stride, column stride) pairs.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: every index reached through the strides lies inside `a`, `b`
    // and `out`, whose lengths the callers have checked against m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// `a[M×K] · b[K×N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix_dims()?;
    let (k2, n) = b.matrix_dims()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul of {:?} and {:?}: inner dimensions differ",
            a.shape, b.shape
        )));
    }
    let out = gemm(m, k, n, &a.data, (k as isize, 1), &b.data, (n as isize, 1));
    Tensor::new(&[m, n], out)
}

/// `a[M×K] · b[N×K]ᵀ`.
pub fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix_dims()?;
    let (n, k2) = b.matrix_dims()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul of {:?} and transpose of {:?}: inner dimensions differ",
            a.shape, b.shape
        )));
    }
    let out = gemm(m, k, n, &a.data, (k as isize, 1), &b.data, (1, k as isize));
    Tensor::new(&[m, n], out)
}

/// `a[K×M]ᵀ · b[K×N]`.
pub fn matmul_at_b(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.matrix_dims()?;
    let (k2, n) = b.matrix_dims()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul of transpose of {:?} and {:?}: inner dimensions differ",
            a.shape, b.shape
        )));
    }
    let out = gemm(m, k, n, &a.data, (1, m as isize), &b.data, (n as isize, 1));
    Tensor::new(&[m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.matrix_dims().unwrap();
        let (_, n) = b.matrix_dims().unwrap();
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += a.data()[i * k + t] * b.data()[t * n + j];
                }
                out.data_mut()[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_product() {
        let eye = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let m = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[&[3.0], &[4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn random_product_matches_triple_loop() {
        let a = Tensor::randn(&[7, 5], 1).unwrap();
        let b = Tensor::randn(&[5, 3], 2).unwrap();
        let got = matmul(&a, &b).unwrap();
        assert!(got.max_abs_diff(&naive(&a, &b)) <= 1e-12);
    }

    #[test]
    fn transposed_variants_agree() {
        let a = Tensor::randn(&[6, 4], 3).unwrap();
        let b = Tensor::randn(&[5, 4], 4).unwrap();
        let c = Tensor::randn(&[6, 3], 5).unwrap();
        let abt = matmul_a_bt(&a, &b).unwrap();
        assert!(abt.max_abs_diff(&naive(&a, &b.transpose().unwrap())) <= 1e-12);
        let atc = matmul_at_b(&a, &c).unwrap();
        assert!(atc.max_abs_diff(&naive(&a.transpose().unwrap(), &c)) <= 1e-12);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn identity_is_exact_under_association() {
        let a = Tensor::randn(&[4, 3], 7).unwrap();
        let b = Tensor::randn(&[3, 5], 8).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let lhs = matmul(&matmul(&a, &eye).unwrap(), &b).unwrap();
        assert_eq!(lhs, matmul(&a, &b).unwrap());
    }

    #[test]
    fn seeded_fills_are_deterministic() {
        assert_eq!(Tensor::randn(&[3, 4], 9).unwrap(), Tensor::randn(&[3, 4], 9).unwrap());
        assert_eq!(
            Tensor::uniform(&[10], -1.0, 1.0, 9).unwrap(),
            Tensor::uniform(&[10], -1.0, 1.0, 9).unwrap()
        );
        assert!(Tensor::uniform(&[8], 0.0, 0.0, 3)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(matches!(Tensor::uniform(&[2], 1.0, 0.0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn randn_mean_is_near_zero() {
        let t = Tensor::randn(&[1_000_000], 42).unwrap();
        let mean = t.sum() / t.len() as f64;
        assert!(mean.abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn reshape_keeps_order() {
        let t = Tensor::new(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        let r = t.clone().reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4, 2]).is_err());
    }
}
