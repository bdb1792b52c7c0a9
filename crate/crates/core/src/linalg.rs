//! Dense column-major matrices and the three kernels the engine reduces to:
//! matrix product, transposed matrix products, and fused element-wise
//! expressions.
//!
//! Columns are patterns, matching the layer-activity layout used everywhere
//! else. All kernels run with a fixed loop nest so repeated runs on identical
//! inputs produce bit-identical results. No BLAS; the accumulation order is
//! part of the contract.

use crate::error::{EngineError, Result};
use crate::scalar::Scalar;

pub mod opcounter {
    //! Optional arithmetic tally for validating the cost model against the
    //! running engine. Disabled, the hooks are a thread-local flag test.

    use std::cell::Cell;

    thread_local! {
        static ENABLED: Cell<bool> = const { Cell::new(false) };
        static MATRIX: Cell<u64> = const { Cell::new(0) };
        static ELEMENTWISE: Cell<u64> = const { Cell::new(0) };
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct OpTally {
        pub matrix_ops: u64,
        pub elementwise_ops: u64,
    }

    pub fn start() {
        ENABLED.with(|e| e.set(true));
        MATRIX.with(|c| c.set(0));
        ELEMENTWISE.with(|c| c.set(0));
    }

    pub fn stop() -> OpTally {
        ENABLED.with(|e| e.set(false));
        OpTally {
            matrix_ops: MATRIX.with(|c| c.get()),
            elementwise_ops: ELEMENTWISE.with(|c| c.get()),
        }
    }

    #[inline]
    pub(crate) fn add_matrix(n: u64) {
        if ENABLED.with(|e| e.get()) {
            MATRIX.with(|c| c.set(c.get() + n));
        }
    }

    #[inline]
    pub fn add_elementwise(n: u64) {
        if ENABLED.with(|e| e.get()) {
            ELEMENTWISE.with(|c| c.set(c.get() + n));
        }
    }
}

/// Dense matrix of scalars, column-major.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds from a row-major closure; storage stays column-major.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m.data[c * rows + r] = f(r, c);
            }
        }
        m
    }

    pub fn from_column_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(EngineError::DimensionMismatch {
                op: "from_column_major",
                details: format!("{} values for {rows}x{cols}", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn same_shape(&self, other: &Matrix<T>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[c * self.rows + r] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn col(&self, c: usize) -> &[T] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix<T>, f: impl Fn(T, T) -> T) -> Result<Matrix<T>> {
        if !self.same_shape(other) {
            return Err(dim_err("zip_map", self, other));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) -> Result<()> {
        if !self.same_shape(other) {
            return Err(dim_err("add_assign", self, other));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_assign(&mut self, factor: T) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Per-row sums over all columns (the pattern axis).
    pub fn row_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows];
        for c in 0..self.cols {
            for (r, o) in out.iter_mut().enumerate() {
                *o += self.data[c * self.rows + r];
            }
        }
        out
    }

    pub fn transposed(&self) -> Matrix<T> {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

impl<T: std::fmt::Debug> std::fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for c in 0..self.cols.min(8) {
                write!(f, "{:?} ", &self.data[c * self.rows + r])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Operand transposition for [`gemm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gemm {
    /// `A x B`
    NN,
    /// `A^T x B`
    TN,
    /// `A x B^T`
    NT,
}

/// Matrix product with an optional transposed operand.
///
/// Accumulation runs over the inner index in ascending order for every output
/// element, so results are reproducible bit for bit.
pub fn gemm<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, mode: Gemm) -> Result<Matrix<T>> {
    let (m, k_a) = match mode {
        Gemm::NN | Gemm::NT => (a.rows, a.cols),
        Gemm::TN => (a.cols, a.rows),
    };
    let (k_b, n) = match mode {
        Gemm::NN | Gemm::TN => (b.rows, b.cols),
        Gemm::NT => (b.cols, b.rows),
    };
    if k_a != k_b {
        return Err(EngineError::DimensionMismatch {
            op: "gemm",
            details: format!(
                "{}x{} ({mode:?}) by {}x{}",
                a.rows, a.cols, b.rows, b.cols
            ),
        });
    }
    let k = k_a;
    opcounter::add_matrix((2 * k as u64).saturating_sub(1) * m as u64 * n as u64);

    let mut out = Matrix::zeros(m, n);
    match mode {
        Gemm::NN => {
            // out[:, j] += a[:, l] * b[l, j], l ascending
            for j in 0..n {
                let out_col = &mut out.data[j * m..(j + 1) * m];
                for l in 0..k {
                    let blj = b.data[j * k + l];
                    let a_col = &a.data[l * m..(l + 1) * m];
                    for (o, &av) in out_col.iter_mut().zip(a_col) {
                        *o += av * blj;
                    }
                }
            }
        }
        Gemm::TN => {
            // out[i, j] = dot(a[:, i], b[:, j])
            for j in 0..n {
                let b_col = &b.data[j * k..(j + 1) * k];
                for i in 0..m {
                    let a_col = &a.data[i * k..(i + 1) * k];
                    let mut acc = T::zero();
                    for (&av, &bv) in a_col.iter().zip(b_col) {
                        acc += av * bv;
                    }
                    out.data[j * m + i] = acc;
                }
            }
        }
        Gemm::NT => {
            // out[:, j] += a[:, l] * b[j, l], l ascending
            for l in 0..k {
                let a_col = &a.data[l * m..(l + 1) * m];
                for j in 0..n {
                    let bjl = b.data[l * n + j];
                    let out_col = &mut out.data[j * m..(j + 1) * m];
                    for (o, &av) in out_col.iter_mut().zip(a_col) {
                        *o += av * bjl;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adds a threshold vector to every column.
pub fn add_column_vector<T: Scalar>(m: &mut Matrix<T>, t: &[T]) -> Result<()> {
    if t.len() != m.rows {
        return Err(EngineError::DimensionMismatch {
            op: "add_column_vector",
            details: format!("vector length {} for {} rows", t.len(), m.rows),
        });
    }
    opcounter::add_elementwise((m.rows * m.cols) as u64);
    for c in 0..m.cols {
        let col = &mut m.data[c * m.rows..(c + 1) * m.rows];
        for (v, &tv) in col.iter_mut().zip(t) {
            *v += tv;
        }
    }
    Ok(())
}

/// One product in a fused element-wise expression: `coeff * Π factor^power`.
pub struct ProductTerm<'a, T> {
    pub coeff: T,
    pub factors: Vec<(&'a Matrix<T>, u32)>,
}

impl<'a, T: Scalar> ProductTerm<'a, T> {
    pub fn new(coeff: T, factors: Vec<(&'a Matrix<T>, u32)>) -> Self {
        ProductTerm { coeff, factors }
    }
}

/// Evaluates `Σ_t coeff_t * Π_i factor_i^power_i` entrywise.
///
/// Every factor matrix must share one shape; that shape is the result's.
/// Powers are expanded as repeated multiplications. Terms and elements are
/// visited in a fixed order.
pub fn ewise_sum_of_products<T: Scalar>(terms: &[ProductTerm<'_, T>]) -> Result<Matrix<T>> {
    let first = terms
        .first()
        .and_then(|t| t.factors.first())
        .ok_or_else(|| EngineError::DimensionMismatch {
            op: "ewise_sum_of_products",
            details: "no factors".into(),
        })?;
    let (rows, cols) = (first.0.rows, first.0.cols);
    let len = rows * cols;
    let one = T::one();

    let mut per_element_ops = (terms.len() as u64).saturating_sub(1);
    for term in terms {
        let mut pow_sum = 0u64;
        for &(f, p) in &term.factors {
            if f.rows != rows || f.cols != cols {
                return Err(EngineError::DimensionMismatch {
                    op: "ewise_sum_of_products",
                    details: format!("{}x{} vs {rows}x{cols}", f.rows, f.cols),
                });
            }
            pow_sum += p as u64;
        }
        per_element_ops += pow_sum.saturating_sub(1);
        if term.coeff != one {
            per_element_ops += 1;
        }
    }
    opcounter::add_elementwise(per_element_ops * len as u64);

    let mut out = Matrix::zeros(rows, cols);
    for term in terms {
        for i in 0..len {
            let mut acc = term.coeff;
            for &(f, p) in &term.factors {
                let v = f.data[i];
                for _ in 0..p {
                    acc *= v;
                }
            }
            out.data[i] += acc;
        }
    }
    Ok(out)
}

fn dim_err<T: Scalar>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> EngineError {
    EngineError::DimensionMismatch {
        op,
        details: format!("{}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rows: usize, cols: usize, rng: &mut StdRng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Naive triple-loop product oracle.
    fn gemm_oracle(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for l in 0..a.cols() {
                    acc += a.get(i, l) * b.get(l, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn max_rel_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        let scale = a.max_abs().max(b.max_abs()).max(1e-300);
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_times_b_is_b() {
        let mut rng = StdRng::seed_from_u64(1);
        let b = random_matrix(4, 6, &mut rng);
        let id = Matrix::from_fn(4, 4, |r, c| if r == c { 1.0 } else { 0.0 });
        let out = gemm(&id, &b, Gemm::NN).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn one_by_one_product() {
        let a = Matrix::from_column_major(1, 1, vec![2.0]).unwrap();
        let b = Matrix::from_column_major(1, 1, vec![3.0]).unwrap();
        assert_eq!(gemm(&a, &b, Gemm::NN).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn gemm_matches_naive_oracle() {
        let mut rng = StdRng::seed_from_u64(2);
        let a = random_matrix(5, 4, &mut rng);
        let b = random_matrix(4, 3, &mut rng);
        let got = gemm(&a, &b, Gemm::NN).unwrap();
        assert!(max_rel_diff(&got, &gemm_oracle(&a, &b)) <= 1e-14);
    }

    #[test]
    fn transposed_modes_match_explicit_transposition() {
        let mut rng = StdRng::seed_from_u64(3);
        let a = random_matrix(4, 5, &mut rng);
        let b = random_matrix(4, 3, &mut rng);
        let tn = gemm(&a, &b, Gemm::TN).unwrap();
        assert!(max_rel_diff(&tn, &gemm_oracle(&a.transposed(), &b)) <= 1e-14);

        let c = random_matrix(3, 5, &mut rng);
        let nt = gemm(&a, &c, Gemm::NT).unwrap();
        assert!(max_rel_diff(&nt, &gemm_oracle(&a, &c.transposed())) <= 1e-14);
    }

    #[test]
    fn product_transpose_identity() {
        // (A B)^T = B^T A^T, numerically
        let mut rng = StdRng::seed_from_u64(4);
        let a = random_matrix(6, 5, &mut rng);
        let b = random_matrix(5, 7, &mut rng);
        let ab_t = gemm(&a, &b, Gemm::NN).unwrap().transposed();
        let bt_at = gemm(&b.transposed(), &a.transposed(), Gemm::NN).unwrap();
        assert!(max_rel_diff(&ab_t, &bt_at) <= 1e-13);
    }

    #[test]
    fn gemm_rejects_dimension_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(gemm(&a, &b, Gemm::NN).is_err());
        assert!(gemm(&a, &b, Gemm::TN).is_ok());
    }

    #[test]
    fn add_column_vector_examples() {
        let mut rng = StdRng::seed_from_u64(5);
        let m0 = random_matrix(3, 4, &mut rng);

        let mut m = m0.clone();
        add_column_vector(&mut m, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.data(), m0.data());

        let mut z = Matrix::<f64>::zeros(2, 3);
        add_column_vector(&mut z, &[1.0, 2.0]).unwrap();
        for c in 0..3 {
            assert_eq!(z.col(c), &[1.0, 2.0]);
        }

        // random case against a scalar loop oracle
        let t = [0.5, -1.5, 2.0];
        let mut m = m0.clone();
        add_column_vector(&mut m, &t).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(m.get(r, c), m0.get(r, c) + t[r]);
            }
        }

        let mut bad = Matrix::<f64>::zeros(3, 1);
        assert!(add_column_vector(&mut bad, &[1.0]).is_err());
    }

    #[test]
    fn ewise_examples() {
        let mut rng = StdRng::seed_from_u64(6);
        let a = random_matrix(3, 3, &mut rng);
        let ones = Matrix::filled(3, 3, 1.0);

        // a * 1 = a
        let prod = ewise_sum_of_products(&[ProductTerm::new(1.0, vec![(&a, 1), (&ones, 1)])])
            .unwrap();
        assert_eq!(prod.data(), a.data());

        // squaring a matrix of twos
        let twos = Matrix::filled(2, 2, 2.0);
        let sq = ewise_sum_of_products(&[ProductTerm::new(1.0, vec![(&twos, 2)])]).unwrap();
        assert!(sq.data().iter().all(|&v| v == 4.0));

        // 10 a^3 b against a scalar loop oracle
        let b = random_matrix(3, 3, &mut rng);
        let got =
            ewise_sum_of_products(&[ProductTerm::new(10.0, vec![(&a, 3), (&b, 1)])]).unwrap();
        for i in 0..9 {
            let expect = 10.0 * a.data()[i].powi(3) * b.data()[i];
            assert!((got.data()[i] - expect).abs() <= 1e-14 * expect.abs().max(1.0));
        }

        let wrong = Matrix::<f64>::zeros(2, 3);
        assert!(
            ewise_sum_of_products(&[ProductTerm::new(1.0, vec![(&a, 1), (&wrong, 1)])]).is_err()
        );
    }

    #[test]
    fn kernels_are_deterministic() {
        let mut rng = StdRng::seed_from_u64(7);
        let a = random_matrix(17, 23, &mut rng);
        let b = random_matrix(23, 11, &mut rng);
        let x = gemm(&a, &b, Gemm::NN).unwrap();
        let y = gemm(&a, &b, Gemm::NN).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn opcounter_tallies_gemm() {
        let a = Matrix::<f64>::zeros(3, 4);
        let b = Matrix::<f64>::zeros(4, 5);
        opcounter::start();
        gemm(&a, &b, Gemm::NN).unwrap();
        let tally = opcounter::stop();
        assert_eq!(tally.matrix_ops, (2 * 4 - 1) * 3 * 5);
        assert_eq!(tally.elementwise_ops, 0);
    }
}
