//! Locally linear embedding: barycentric weight fits and the reconstruction
//! loss.

use super::graph::knn_indices;
use super::{EmbeddingLossSpec, LossEval};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-sample barycentric reconstruction weights over a kNN support.
/// Row `i` holds `lambda_ij` for `j` in `support[i]`; weights sum to 1.
#[derive(Debug, Clone)]
pub struct ReconstructionWeights {
    pub n: usize,
    pub support: Vec<Vec<usize>>,
    pub lambda: Vec<Vec<f64>>,
}

impl ReconstructionWeights {
    /// Dense row-indexed matrix `V[i][j] = lambda_ij`, zero off-support.
    pub fn to_matrix(&self) -> Matrix {
        let mut v = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (&j, &l) in self.support[i].iter().zip(self.lambda[i].iter()) {
                v[(i, j)] = l;
            }
        }
        v
    }
}

/// Solves the constrained least squares
/// `min ||x_i - sum_j lambda_ij x_j||^2  s.t.  sum_j lambda_ij = 1`
/// per sample via the local Gram system, with trace-scaled Tikhonov
/// conditioning.
pub fn lle_fit_weights(x: &Matrix, k: usize) -> Result<ReconstructionWeights> {
    let n = x.rows();
    if k < 1 || n <= k {
        return Err(Error::InvalidConfig(format!(
            "lle_fit_weights requires N > k >= 1, got N = {n}, k = {k}"
        )));
    }
    let mut support = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    for i in 0..n {
        let neighbors = knn_indices(x, i, k);
        let w = fit_row(x, i, &neighbors)?;
        support.push(neighbors);
        lambda.push(w);
    }
    Ok(ReconstructionWeights { n, support, lambda })
}

fn fit_row(x: &Matrix, i: usize, neighbors: &[usize]) -> Result<Vec<f64>> {
    let k = neighbors.len();
    let xi = x.row(i);
    // Local Gram of difference vectors: C[a][b] = (x_i - x_a) . (x_i - x_b).
    let mut c = vec![vec![0.0; k]; k];
    let mut trace = 0.0;
    for a in 0..k {
        let xa = x.row(neighbors[a]);
        for b in a..k {
            let xb = x.row(neighbors[b]);
            let mut acc = 0.0;
            for q in 0..x.cols() {
                acc += (xi[q] - xa[q]) * (xi[q] - xb[q]);
            }
            c[a][b] = acc;
            c[b][a] = acc;
        }
        trace += c[a][a];
    }
    let reg = 1e-3 * trace / k as f64;
    for (a, row) in c.iter_mut().enumerate() {
        row[a] += reg;
    }

    let u = solve_symmetric(&mut c, vec![1.0; k]).ok_or(Error::SingularSample { sample: i })?;
    let sum: f64 = u.iter().sum();
    if sum.abs() < 1e-300 || !sum.is_finite() {
        return Err(Error::SingularSample { sample: i });
    }
    Ok(u.into_iter().map(|v| v / sum).collect())
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_symmetric(a: &mut [Vec<f64>], mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for cc in col..n {
                a[r][cc] -= f * a[col][cc];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for cc in (r + 1)..n {
            acc -= a[r][cc] * x[cc];
        }
        x[r] = acc / a[r][r];
        if !x[r].is_finite() {
            return None;
        }
    }
    Some(x)
}

/// Reconstruction loss `sum_i ||a_i - sum_j lambda_ij a_j||^2` with its
/// embedding gradient. The weights are constants here, so `grad_x` is empty.
pub fn lle_loss(v: &ReconstructionWeights, a: &Matrix) -> Result<LossEval> {
    if v.n != a.rows() {
        return Err(Error::dim("lle_loss batch rows", v.n, a.rows()));
    }
    let d = a.cols();
    let mut eval = LossEval {
        value: 0.0,
        grad_a: Matrix::zeros(a.rows(), d),
        grad_x: Matrix::zeros(v.n, 0),
    };
    for i in 0..v.n {
        let mut residual = a.row(i).to_vec();
        for (&j, &l) in v.support[i].iter().zip(v.lambda[i].iter()) {
            for (r, &aj) in residual.iter_mut().zip(a.row(j).iter()) {
                *r -= l * aj;
            }
        }
        eval.value += residual.iter().map(|r| r * r).sum::<f64>();
        for q in 0..d {
            eval.grad_a[(i, q)] += 2.0 * residual[q];
        }
        for (&j, &l) in v.support[i].iter().zip(v.lambda[i].iter()) {
            for q in 0..d {
                eval.grad_a[(j, q)] -= 2.0 * l * residual[q];
            }
        }
    }
    Ok(eval)
}

/// Single-point LLE loss: fit row `i`'s weights over the pool, return its
/// reconstruction residual.
pub(super) fn lle_point(
    spec: &EmbeddingLossSpec,
    x: &Matrix,
    a: &Matrix,
    i: usize,
) -> Result<LossEval> {
    let k = spec.k_neighbors.unwrap();
    if x.rows() <= k {
        return Err(Error::InvalidConfig(format!(
            "lle point loss requires pool > k, got {} <= {k}",
            x.rows()
        )));
    }
    let neighbors = knn_indices(x, i, k);
    let lambda = fit_row(x, i, &neighbors)?;
    let d = a.cols();
    let mut eval = LossEval {
        value: 0.0,
        grad_a: Matrix::zeros(a.rows(), d),
        grad_x: Matrix::zeros(x.rows(), x.cols()),
    };
    let mut residual = a.row(i).to_vec();
    for (&j, &l) in neighbors.iter().zip(lambda.iter()) {
        for (r, &aj) in residual.iter_mut().zip(a.row(j).iter()) {
            *r -= l * aj;
        }
    }
    eval.value = residual.iter().map(|r| r * r).sum();
    for q in 0..d {
        eval.grad_a[(i, q)] += 2.0 * residual[q];
    }
    for (&j, &l) in neighbors.iter().zip(lambda.iter()) {
        for q in 0..d {
            eval.grad_a[(j, q)] -= 2.0 * l * residual[q];
        }
    }
    Ok(eval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_midpoint_gets_half_half_weights() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let v = lle_fit_weights(&x, 2).unwrap();
        // sample 1 is the midpoint of samples 0 and 2
        assert_eq!(v.support[1], vec![0, 2]);
        assert!((v.lambda[1][0] - 0.5).abs() < 1e-9);
        assert!((v.lambda[1][1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn weights_sum_to_one() {
        let x = Matrix::from_rows(&[
            vec![0.0, 1.0],
            vec![1.0, 0.3],
            vec![0.5, -0.8],
            vec![-0.2, 0.4],
            vec![0.9, 0.9],
        ])
        .unwrap();
        let v = lle_fit_weights(&x, 3).unwrap();
        for row in &v.lambda {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn exact_fit_gives_zero_loss_on_inputs() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let v = lle_fit_weights(&x, 2).unwrap();
        let e = lle_loss(&v, &x).unwrap();
        // endpoints cannot be reconstructed from interior points exactly, but
        // the fit residual equals the loss when A = X by construction
        let mut expect = 0.0;
        for i in 0..3 {
            let mut r = x.row(i).to_vec();
            for (&j, &l) in v.support[i].iter().zip(v.lambda[i].iter()) {
                r[0] -= l * x[(j, 0)];
            }
            expect += r[0] * r[0];
        }
        assert!((e.value - expect).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_k_out_of_range() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(lle_fit_weights(&x, 2).is_err());
        assert!(lle_fit_weights(&x, 0).is_err());
    }
}
