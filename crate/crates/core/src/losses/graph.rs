//! Similarity graph construction: Gaussian affinities with optional kNN or
//! distance-cutoff sparsification.

use super::EmbeddingLossSpec;
use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};

/// Symmetric nonnegative similarity matrix with its degree vector.
#[derive(Debug, Clone)]
pub struct GraphMatrices {
    pub w: Matrix,
    pub degrees: Vec<f64>,
}

impl GraphMatrices {
    /// Graph Laplacian `L = D - W`.
    pub fn laplacian(&self) -> Matrix {
        let n = self.w.rows();
        let mut l = self.w.scale(-1.0);
        for i in 0..n {
            l[(i, i)] += self.degrees[i];
        }
        l
    }

    pub(super) fn check_symmetric(&self, tol: f64) -> Result<()> {
        let n = self.w.rows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.w[(i, j)] - self.w[(j, i)]).abs() > tol {
                    return Err(Error::InvalidConstraint(format!(
                        "similarity matrix asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Indices of the `k` nearest Euclidean neighbors of row `i` (excluding `i`),
/// ties broken by lower index.
pub(crate) fn knn_indices(x: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = (0..x.rows())
        .filter(|&j| j != i)
        .map(|j| (sq_dist(x.row(i), x.row(j)), j))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Boolean pair mask from the spec's sparsification rule: kNN symmetrized by
/// union, or the squared-distance cutoff, or all pairs when neither is set.
pub(super) fn sparsity_mask(spec: &EmbeddingLossSpec, x: &Matrix) -> Option<Vec<Vec<bool>>> {
    let n = x.rows();
    if let Some(k) = spec.k_neighbors {
        let mut mask = vec![vec![false; n]; n];
        for i in 0..n {
            for j in knn_indices(x, i, k) {
                mask[i][j] = true;
                mask[j][i] = true;
            }
        }
        Some(mask)
    } else {
        spec.distance_cutoff.map(|cutoff| {
            let mut mask = vec![vec![false; n]; n];
            for i in 0..n {
                for j in 0..n {
                    if i != j && sq_dist(x.row(i), x.row(j)) <= cutoff {
                        mask[i][j] = true;
                    }
                }
            }
            mask
        })
    }
}

/// Builds the Gaussian similarity graph `W_ij = exp(-||x_i - x_j||^2 / 2s^2)`
/// with zero diagonal, applying the spec's sparsification rule.
pub fn build_graph(spec: &EmbeddingLossSpec, x: &Matrix) -> Result<GraphMatrices> {
    if !(spec.sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "similarity bandwidth must be positive, got {}",
            spec.sigma
        )));
    }
    let n = x.rows();
    let inv_two_sigma_sq = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let mask = sparsity_mask(spec, x);
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let keep = mask.as_ref().map_or(true, |m| m[i][j]);
            if keep {
                let v = (-sq_dist(x.row(i), x.row(j)) * inv_two_sigma_sq).exp();
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    let degrees = (0..n).map(|i| w.row(i).iter().sum()).collect();
    Ok(GraphMatrices { w, degrees })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let spec = EmbeddingLossSpec::new(LossKind::Le).with_sigma(0.7);
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.2],
            vec![0.4, 0.9],
            vec![-0.3, 0.5],
        ])
        .unwrap();
        let g = build_graph(&spec, &x).unwrap();
        let l = g.laplacian();
        for i in 0..4 {
            let s: f64 = l.row(i).iter().sum();
            assert!(s.abs() <= 1e-12);
        }
    }

    #[test]
    fn knn_ties_break_by_lower_index() {
        // points 1 and 2 are equidistant from point 0
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![-1.0], vec![5.0]]).unwrap();
        assert_eq!(knn_indices(&x, 0, 2), vec![1, 2]);
    }

    #[test]
    fn cutoff_mask_zeroes_far_pairs() {
        let mut spec = EmbeddingLossSpec::new(LossKind::Le).with_sigma(1.0);
        spec.distance_cutoff = Some(1.5);
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![10.0]]).unwrap();
        let g = build_graph(&spec, &x).unwrap();
        assert!(g.w[(0, 1)] > 0.0);
        assert_eq!(g.w[(0, 2)], 0.0);
        assert_eq!(g.w[(1, 2)], 0.0);
    }
}
