//! Sigmoid activation and its derivatives through order six, evaluated as
//! polynomials of the sigmoid itself, plus the linear (identity) activation
//! used on input and output layers.

use serde::{Deserialize, Serialize};

use crate::linalg::{opcounter, Matrix};
use crate::scalar::Scalar;

/// Maximum sigma-derivative order the chain supports (order-5 jets shifted by
/// one in the backward pass).
pub const MAX_SIGMA_ORDER: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivationKind {
    Sigmoid,
    /// Identity mapping. First derivative is identically one, all higher
    /// derivatives identically zero.
    Linear,
}

/// Numerically safe logistic sigmoid.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Per-element cost of extending the reuse chain from order `k-1` to `k`.
pub const SIGMA_CHAIN_STEP_OPS: [u64; MAX_SIGMA_ORDER] = [2, 3, 3, 3, 3, 5];

/// Evaluates `[σ, σ', …, σ^(max_order)]` entrywise on `z`.
///
/// Higher orders reuse lower ones:
/// `σ' = σ(1-σ)`, `σ'' = σ'(1-2σ)`, `σ''' = σ'(1-6σ')`, `σ⁗ = σ''(1-12σ')`,
/// `σ⁵ = σ' - 30(σ'')²`, `σ⁶ = σ'' + (σ⁗-σ'')(5-30σ')`.
///
/// For the linear activation the result is `[z, 1, 0, …, 0]`.
pub fn sigma_derivatives<T: Scalar>(
    kind: ActivationKind,
    z: &Matrix<T>,
    max_order: usize,
) -> Vec<Matrix<T>> {
    assert!(max_order <= MAX_SIGMA_ORDER, "sigma order limit is 6");
    let (rows, cols) = (z.rows(), z.cols());
    match kind {
        ActivationKind::Linear => {
            let mut out = vec![z.clone()];
            if max_order >= 1 {
                out.push(Matrix::filled(rows, cols, T::one()));
            }
            for _ in 2..=max_order {
                out.push(Matrix::zeros(rows, cols));
            }
            out
        }
        ActivationKind::Sigmoid => {
            let chain_ops: u64 = SIGMA_CHAIN_STEP_OPS[..max_order].iter().sum();
            opcounter::add_elementwise(chain_ops * (rows * cols) as u64);

            let one = T::one();
            let s = z.map(sigmoid);
            let mut out = Vec::with_capacity(max_order + 1);
            out.push(s);
            for k in 1..=max_order {
                let next = {
                    let s = &out[0];
                    match k {
                        1 => s.map(|v| v * (one - v)),
                        2 => {
                            let sp = &out[1];
                            sp.zip_map(s, |p, v| p * (one - T::of(2.0) * v)).unwrap()
                        }
                        3 => {
                            let sp = &out[1];
                            sp.map(|p| p * (one - T::of(6.0) * p))
                        }
                        4 => {
                            let sp = &out[1];
                            let spp = &out[2];
                            spp.zip_map(sp, |pp, p| pp * (one - T::of(12.0) * p))
                                .unwrap()
                        }
                        5 => {
                            let sp = &out[1];
                            let spp = &out[2];
                            sp.zip_map(spp, |p, pp| p - T::of(30.0) * pp * pp).unwrap()
                        }
                        6 => {
                            let mut next = Matrix::zeros(rows, cols);
                            let (sp, spp, s4) = (&out[1], &out[2], &out[4]);
                            for i in 0..rows * cols {
                                let p = sp.data()[i];
                                let pp = spp.data()[i];
                                let q4 = s4.data()[i];
                                next.data_mut()[i] =
                                    pp + (q4 - pp) * (T::of(5.0) - T::of(30.0) * p);
                            }
                            next
                        }
                        _ => unreachable!(),
                    }
                };
                out.push(next);
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_zero() {
        let z = Matrix::from_column_major(1, 1, vec![0.0f64]).unwrap();
        let d = sigma_derivatives(ActivationKind::Sigmoid, &z, 6);
        assert_eq!(d[0].get(0, 0), 0.5);
        assert_eq!(d[1].get(0, 0), 0.25);
        assert_eq!(d[2].get(0, 0), 0.0);
        // symbolic oracle: sigma'''(0) = 0.25 * (1 - 6 * 0.25) = -0.125
        assert_eq!(d[3].get(0, 0), -0.125);
        assert_eq!(d[4].get(0, 0), 0.0);
        // Taylor series of the sigmoid gives sigma^(5)(0) = 1/4
        assert!((d[5].get(0, 0) - 0.25).abs() < 1e-15);
        assert_eq!(d[6].get(0, 0), 0.0);
    }

    #[test]
    fn saturation() {
        let z = Matrix::from_column_major(1, 2, vec![30.0f64, -30.0]).unwrap();
        let d = sigma_derivatives(ActivationKind::Sigmoid, &z, 1);
        assert!((d[0].get(0, 0) - 1.0).abs() < 1e-12);
        assert!(d[0].get(0, 1) < 1e-12);
        assert!(d[1].get(0, 0).abs() < 1e-12);
        assert!(d[1].get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn no_overflow_for_large_negative_arguments() {
        let z = Matrix::from_column_major(1, 1, vec![-750.0f64]).unwrap();
        let d = sigma_derivatives(ActivationKind::Sigmoid, &z, 6);
        for m in &d {
            assert!(m.is_finite());
        }
    }

    #[test]
    fn each_order_matches_finite_difference_of_previous() {
        // central differences of sigma^(k-1), step 1e-5, on a grid in [-4, 4]
        let h = 1e-5;
        let n = 81;
        let grid: Vec<f64> = (0..n).map(|i| -4.0 + 8.0 * i as f64 / (n - 1) as f64).collect();
        let z = Matrix::from_column_major(1, n, grid.clone()).unwrap();
        let zp = Matrix::from_column_major(1, n, grid.iter().map(|v| v + h).collect()).unwrap();
        let zm = Matrix::from_column_major(1, n, grid.iter().map(|v| v - h).collect()).unwrap();
        let d = sigma_derivatives(ActivationKind::Sigmoid, &z, 6);
        let dp = sigma_derivatives(ActivationKind::Sigmoid, &zp, 5);
        let dm = sigma_derivatives(ActivationKind::Sigmoid, &zm, 5);
        for k in 1..=6usize {
            for i in 0..n {
                let fd = (dp[k - 1].get(0, i) - dm[k - 1].get(0, i)) / (2.0 * h);
                assert!(
                    (d[k].get(0, i) - fd).abs() <= 1e-6,
                    "order {k} at z={}: {} vs fd {}",
                    grid[i],
                    d[k].get(0, i),
                    fd
                );
            }
        }
    }

    #[test]
    fn linear_activation_identity_and_flat_derivatives() {
        let z = Matrix::from_column_major(2, 2, vec![1.0f64, -2.0, 3.0, 0.5]).unwrap();
        let d = sigma_derivatives(ActivationKind::Linear, &z, 4);
        assert_eq!(d[0].data(), z.data());
        assert!(d[1].data().iter().all(|&v| v == 1.0));
        for m in &d[2..] {
            assert!(m.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn chain_op_tally() {
        let z = Matrix::<f64>::zeros(4, 5);
        opcounter::start();
        sigma_derivatives(ActivationKind::Sigmoid, &z, 6);
        let tally = opcounter::stop();
        assert_eq!(tally.elementwise_ops, (2 + 3 + 3 + 3 + 3 + 5) * 20);
    }
}
