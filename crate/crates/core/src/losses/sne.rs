//! Stochastic neighbor embedding loss: KL divergence between row-normalized
//! Gaussian similarity distributions in input and embedding space. One global
//! bandwidth per evaluation, shared by both spaces.

use super::{EmbeddingLossSpec, LossEval};
use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};

/// Row-normalized Gaussian similarities with the raw kernel values and row
/// sums kept for the gradient.
struct RowDist {
    kernel: Matrix,
    row_sums: Vec<f64>,
    p: Matrix,
}

fn row_distributions(points: &Matrix, sigma: f64, what: &str) -> Result<RowDist> {
    let n = points.rows();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut kernel = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kernel[(i, j)] = (-sq_dist(points.row(i), points.row(j)) * inv).exp();
            }
        }
    }
    let mut row_sums = vec![0.0; n];
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        let s: f64 = kernel.row(i).iter().sum();
        if s <= 0.0 {
            return Err(Error::DegenerateBatch(format!(
                "{what} similarity row {i} has zero normalizer"
            )));
        }
        row_sums[i] = s;
        for j in 0..n {
            p[(i, j)] = kernel[(i, j)] / s;
        }
    }
    Ok(RowDist { kernel, row_sums, p })
}

pub(super) fn sne(spec: &EmbeddingLossSpec, x: &Matrix, a: &Matrix) -> Result<LossEval> {
    let n = x.rows();
    let px = row_distributions(x, spec.sigma, "input")?;
    let qa = row_distributions(a, spec.sigma, "embedding")?;

    let mut eval = LossEval::zeros(x, a);
    // Per-row KL values, reused by the input-side gradient.
    let mut row_kl = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let p = px.p[(i, j)];
            if p <= 0.0 {
                continue; // 0 log 0 = 0
            }
            let q = qa.p[(i, j)];
            if q <= 0.0 {
                return Err(Error::NonFinite(format!(
                    "sne_loss: P[{i},{j}] > 0 but Q[{i},{j}] underflowed to zero"
                )));
            }
            row_kl[i] += p * (p / q).ln();
        }
    }
    eval.value = row_kl.iter().sum();

    // Embedding gradient through Q: dL/dE_ij = (1 - P_ij/Q_ij) / S_i.
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let p = px.p[(i, j)];
            let q = qa.p[(i, j)];
            if q <= 0.0 {
                continue;
            }
            let de = (1.0 - p / q) / qa.row_sums[i];
            accumulate_gaussian_grad(&mut eval.grad_a, a, i, j, de * qa.kernel[(i, j)], spec.sigma);
        }
    }

    // Input gradient through P: dL/dE_ij = (ln(P_ij/Q_ij) - KL_i) / S_i.
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let p = px.p[(i, j)];
            let q = qa.p[(i, j)];
            if p <= 0.0 || q <= 0.0 {
                continue;
            }
            let de = ((p / q).ln() - row_kl[i]) / px.row_sums[i];
            accumulate_gaussian_grad(&mut eval.grad_x, x, i, j, de * px.kernel[(i, j)], spec.sigma);
        }
    }
    Ok(eval)
}

/// Single-row SNE loss: `sum_{j != i} P_ij log(P_ij / Q_ij)` with the
/// normalizers over the complement of `i`.
pub(super) fn sne_point(
    spec: &EmbeddingLossSpec,
    x: &Matrix,
    a: &Matrix,
    i: usize,
) -> Result<LossEval> {
    let n = x.rows();
    let inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let mut ex = vec![0.0; n];
    let mut ea = vec![0.0; n];
    let mut sx = 0.0;
    let mut sa = 0.0;
    for j in 0..n {
        if j == i {
            continue;
        }
        ex[j] = (-sq_dist(x.row(i), x.row(j)) * inv).exp();
        ea[j] = (-sq_dist(a.row(i), a.row(j)) * inv).exp();
        sx += ex[j];
        sa += ea[j];
    }
    if sx <= 0.0 || sa <= 0.0 {
        return Err(Error::DegenerateBatch(format!(
            "similarity row {i} has zero normalizer"
        )));
    }
    let mut eval = LossEval::zeros(x, a);
    let mut kl = 0.0;
    for j in 0..n {
        if j == i {
            continue;
        }
        let p = ex[j] / sx;
        if p <= 0.0 {
            continue;
        }
        let q = ea[j] / sa;
        if q <= 0.0 {
            return Err(Error::NonFinite(format!(
                "sne point loss: Q[{i},{j}] underflowed to zero"
            )));
        }
        kl += p * (p / q).ln();
    }
    eval.value = kl;
    for j in 0..n {
        if j == i {
            continue;
        }
        let p = ex[j] / sx;
        let q = ea[j] / sa;
        if q > 0.0 {
            let de = (1.0 - p / q) / sa;
            accumulate_gaussian_grad(&mut eval.grad_a, a, i, j, de * ea[j], spec.sigma);
        }
        if p > 0.0 && q > 0.0 {
            let de = ((p / q).ln() - kl) / sx;
            accumulate_gaussian_grad(&mut eval.grad_x, x, i, j, de * ex[j], spec.sigma);
        }
    }
    Ok(eval)
}

/// Chain `dL/dE_ij` (already multiplied by `E_ij` in `scaled`) through the
/// Gaussian kernel into point coordinates:
/// `dE/d p_i = E * -(p_i - p_j)/sigma^2`, antisymmetric for `p_j`.
fn accumulate_gaussian_grad(
    grad: &mut Matrix,
    points: &Matrix,
    i: usize,
    j: usize,
    scaled: f64,
    sigma: f64,
) {
    let coeff = -scaled / (sigma * sigma);
    for q in 0..points.cols() {
        let diff = points[(i, q)] - points[(j, q)];
        grad[(i, q)] += coeff * diff;
        grad[(j, q)] -= coeff * diff;
    }
}
