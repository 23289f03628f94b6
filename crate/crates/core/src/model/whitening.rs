//! Whitening output layer: `y = (a - mean) * factor` with `factor` the
//! inverse transpose of the Cholesky factor of the batch covariance, so the
//! reference batch comes out with zero mean and identity covariance.
//!
//! In batch-stats mode the statistics are recomputed from a designated row
//! subset on every forward pass and the backward pass differentiates through
//! them, Cholesky factorization included.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

const BASE_JITTER: f64 = 1e-8;
const JITTER_RETRIES: usize = 3;

/// Fitted statistics: `y = (a - mean) * factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningState {
    pub mean: Vec<f64>,
    /// `L^{-T}` for the covariance Cholesky factor `L` (upper triangular).
    pub factor: MatrixSerde,
}

/// Matrix wrapper so the state serializes as plain nested data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSerde {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixSerde {
    fn from(m: &Matrix) -> Self {
        MatrixSerde {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().to_vec(),
        }
    }
}

impl MatrixSerde {
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.clone()).expect("stored matrix is valid")
    }
}

pub(super) struct WhitenTape {
    /// Centered rows for the whole batch.
    centered: Matrix,
    /// `K = L^{-T}` actually applied.
    factor: Matrix,
    /// Batch-stats internals, absent in frozen mode.
    batch: Option<BatchTape>,
}

struct BatchTape {
    stat_rows: Vec<usize>,
    chol: Matrix,
    state: WhiteningState,
}

impl WhitenTape {
    pub(super) fn fitted(&self) -> Option<&WhiteningState> {
        self.batch.as_ref().map(|b| &b.state)
    }
}

pub(super) fn forward_frozen(input: &Matrix, state: &WhiteningState) -> (Matrix, WhitenTape) {
    let factor = state.factor.to_matrix();
    let centered = center(input, &state.mean);
    let out = centered.matmul(&factor).expect("factor is d x d");
    (
        out,
        WhitenTape {
            centered,
            factor,
            batch: None,
        },
    )
}

pub(super) fn forward_batch(input: &Matrix, stat_rows: &[usize]) -> Result<(Matrix, WhitenTape)> {
    let d = input.cols();
    let m = stat_rows.len();
    if m < d + 1 {
        return Err(Error::DegenerateBatch(format!(
            "whitening needs at least {} statistics rows, got {m}",
            d + 1
        )));
    }

    let mut mean = vec![0.0; d];
    for &r in stat_rows {
        for (mu, &v) in mean.iter_mut().zip(input.row(r).iter()) {
            *mu += v;
        }
    }
    for mu in &mut mean {
        *mu /= m as f64;
    }

    let centered = center(input, &mean);

    // Unbiased covariance over the statistics rows.
    let mut cov = Matrix::zeros(d, d);
    for &r in stat_rows {
        let c = centered.row(r);
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    let denom = (m - 1) as f64;
    for v in cov.data_mut() {
        *v /= denom;
    }

    let chol = cholesky_with_jitter(&cov)?;
    let factor = lower_inverse(&chol).transpose();
    let out = centered.matmul(&factor)?;

    let state = WhiteningState {
        mean: mean.clone(),
        factor: MatrixSerde::from(&factor),
    };
    Ok((
        out,
        WhitenTape {
            centered,
            factor,
            batch: Some(BatchTape {
                stat_rows: stat_rows.to_vec(),
                chol,
                state,
            }),
        },
    ))
}

pub(super) fn backward(tape: &WhitenTape, upstream: &Matrix) -> Matrix {
    let kt = tape.factor.transpose();
    // Direct path: y_i = c_i K.
    let mut cbar = upstream.matmul(&kt).expect("shapes fixed");

    let batch = match &tape.batch {
        Some(b) => b,
        None => return cbar, // frozen statistics: constants
    };

    let d = tape.factor.rows();
    let m = batch.stat_rows.len();

    // Adjoint of K accumulated over all rows: Kbar = sum_i c_i^T g_i.
    let kbar = tape.centered.transpose().matmul(upstream).expect("shapes fixed");

    // K = L^{-T}  =>  Lbar = -K Kbar^T K, restricted to the lower triangle.
    let mut lbar = tape
        .factor
        .matmul(&kbar.transpose())
        .unwrap()
        .matmul(&tape.factor)
        .unwrap()
        .scale(-1.0);
    for i in 0..d {
        for j in (i + 1)..d {
            lbar[(i, j)] = 0.0;
        }
    }

    // Cholesky backward: Sigma_bar = L^{-T} (P + P^T)/2 L^{-1}, P = phi(L^T Lbar).
    let mut p = batch.chol.transpose().matmul(&lbar).unwrap();
    phi_inplace(&mut p);
    let mut psym = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            psym[(i, j)] = 0.5 * (p[(i, j)] + p[(j, i)]);
        }
    }
    let sigma_bar = tape
        .factor
        .matmul(&psym)
        .unwrap()
        .matmul(&tape.factor.transpose())
        .unwrap();

    // Covariance -> centered rows: cbar_j += 2/(m-1) * c_j Sigma_bar.
    let scale = 2.0 / (m as f64 - 1.0);
    for &r in &batch.stat_rows {
        let c = tape.centered.row(r).to_vec();
        let row = cbar.row_mut(r);
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += c[i] * sigma_bar[(i, j)];
            }
            row[j] += scale * acc;
        }
    }

    // Centering: a_i = c_i + mean; mean averages the statistics rows.
    let mut mubar = vec![0.0; d];
    for r in 0..cbar.rows() {
        for (mb, &v) in mubar.iter_mut().zip(cbar.row(r).iter()) {
            *mb -= v;
        }
    }
    let inv_m = 1.0 / m as f64;
    for &r in &batch.stat_rows {
        let row = cbar.row_mut(r);
        for (v, &mb) in row.iter_mut().zip(mubar.iter()) {
            *v += mb * inv_m;
        }
    }
    cbar
}

fn center(input: &Matrix, mean: &[f64]) -> Matrix {
    let mut out = input.clone();
    for r in 0..out.rows() {
        for (v, &mu) in out.row_mut(r).iter_mut().zip(mean.iter()) {
            *v -= mu;
        }
    }
    out
}

/// Keeps the strict lower triangle and halves the diagonal.
fn phi_inplace(m: &mut Matrix) {
    let n = m.rows();
    for i in 0..n {
        m[(i, i)] *= 0.5;
        for j in (i + 1)..n {
            m[(i, j)] = 0.0;
        }
    }
}

fn cholesky_with_jitter(cov: &Matrix) -> Result<Matrix> {
    let mut jitter = BASE_JITTER;
    for attempt in 0..=JITTER_RETRIES {
        let mut a = cov.clone();
        for i in 0..a.rows() {
            a[(i, i)] += jitter;
        }
        if let Some(l) = cholesky(&a) {
            return Ok(l);
        }
        if attempt < JITTER_RETRIES {
            jitter *= 10.0;
        }
    }
    Err(Error::Singular {
        context: format!("whitening covariance (jitter up to {:.0e})", jitter),
    })
}

/// Plain Cholesky; returns `None` on a non-positive pivot.
fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Inverse of a lower-triangular matrix by forward substitution.
fn lower_inverse(l: &Matrix) -> Matrix {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        inv[(col, col)] = 1.0 / l[(col, col)];
        for i in (col + 1)..n {
            let mut sum = 0.0;
            for k in col..i {
                sum += l[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = -sum / l[(i, i)];
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_recomposes() {
        let a = Matrix::from_vec(2, 2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        let l = cholesky(&a).unwrap();
        let back = l.matmul(&l.transpose()).unwrap();
        for (x, y) in back.data().iter().zip(a.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_inverse_is_inverse() {
        let l = Matrix::from_vec(3, 3, vec![2.0, 0.0, 0.0, 1.0, 3.0, 0.0, -1.0, 0.5, 1.5]).unwrap();
        let inv = lower_inverse(&l);
        let prod = l.matmul(&inv).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_whitening_centers_and_decorrelates() {
        let input = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![2.0, 1.0],
            vec![3.0, 5.0],
            vec![-1.0, 0.5],
            vec![0.0, -2.0],
        ])
        .unwrap();
        let rows: Vec<usize> = (0..5).collect();
        let (out, _) = forward_batch(&input, &rows).unwrap();

        let mut mean = [0.0; 2];
        for r in 0..5 {
            mean[0] += out[(r, 0)];
            mean[1] += out[(r, 1)];
        }
        assert!(mean.iter().all(|v| (v / 5.0).abs() <= 1e-10));

        let mut cov = [[0.0; 2]; 2];
        for r in 0..5 {
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += out[(r, i)] * out[(r, j)];
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (cov[i][j] / 4.0 - expect).abs() <= 1e-6,
                    "cov[{i}][{j}] = {}",
                    cov[i][j] / 4.0
                );
            }
        }
    }

    #[test]
    fn two_point_one_dim_case() {
        // Outputs {0, 2}: mean 1, unbiased variance 2, so whitened values are
        // -/+ 1/sqrt(2).
        let input = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let (out, _) = forward_batch(&input, &[0, 1]).unwrap();
        let a = 1.0 / 2.0f64.sqrt();
        assert!((out[(0, 0)] + a).abs() < 1e-6);
        assert!((out[(1, 0)] - a).abs() < 1e-6);
    }

    #[test]
    fn too_few_stat_rows_rejected() {
        let input = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.5]]).unwrap();
        assert!(forward_batch(&input, &[0, 1]).is_err());
    }
}
