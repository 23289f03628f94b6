//! Pair-sum losses (MDS, LE, contrastive) with role-based weighting.
//!
//! All sums run over ordered pairs `(i, j != i)`. Each iteration accumulates
//! the full gradient of that single ordered term into both endpoints, so the
//! double loop never double-counts.

use super::graph::sparsity_mask;
use super::{EmbeddingLossSpec, LossEval, PairwiseWeighting, PointRole};
use crate::error::Result;
use crate::matrix::{dist, sq_dist, Matrix};

pub(super) fn mds(
    x: &Matrix,
    a: &Matrix,
    roles: &[PointRole],
    weighting: &PairwiseWeighting,
) -> Result<LossEval> {
    let mut eval = LossEval::zeros(x, a);
    for i in 0..x.rows() {
        for j in 0..x.rows() {
            if j == i {
                continue;
            }
            let w = weighting.of(roles[i], roles[j]);
            if w == 0.0 {
                continue;
            }
            mds_term(x, a, i, j, w, &mut eval);
        }
    }
    Ok(eval)
}

pub(super) fn mds_point(x: &Matrix, a: &Matrix, i: usize) -> Result<LossEval> {
    let mut eval = LossEval::zeros(x, a);
    for j in 0..x.rows() {
        if j != i {
            mds_term(x, a, i, j, 1.0, &mut eval);
        }
    }
    Ok(eval)
}

/// One ordered MDS term `w (d_a - d_x)^2`; Euclidean-norm subgradient 0 at
/// coincident points.
fn mds_term(x: &Matrix, a: &Matrix, i: usize, j: usize, w: f64, eval: &mut LossEval) {
    let dx = dist(x.row(i), x.row(j));
    let da = dist(a.row(i), a.row(j));
    let r = da - dx;
    eval.value += w * r * r;

    if da > 0.0 {
        let coeff = 2.0 * w * r / da;
        for q in 0..a.cols() {
            let diff = a[(i, q)] - a[(j, q)];
            eval.grad_a[(i, q)] += coeff * diff;
            eval.grad_a[(j, q)] -= coeff * diff;
        }
    }
    if dx > 0.0 {
        let coeff = -2.0 * w * r / dx;
        for q in 0..x.cols() {
            let diff = x[(i, q)] - x[(j, q)];
            eval.grad_x[(i, q)] += coeff * diff;
            eval.grad_x[(j, q)] -= coeff * diff;
        }
    }
}

pub(super) fn le(
    spec: &EmbeddingLossSpec,
    x: &Matrix,
    a: &Matrix,
    roles: &[PointRole],
    weighting: &PairwiseWeighting,
) -> Result<LossEval> {
    let mask = sparsity_mask(spec, x);
    let mut eval = LossEval::zeros(x, a);
    for i in 0..x.rows() {
        for j in 0..x.rows() {
            if j == i || !mask.as_ref().map_or(true, |m| m[i][j]) {
                continue;
            }
            let w = weighting.of(roles[i], roles[j]);
            if w == 0.0 {
                continue;
            }
            le_term(spec, x, a, i, j, w, &mut eval);
        }
    }
    Ok(eval)
}

pub(super) fn le_point(
    spec: &EmbeddingLossSpec,
    x: &Matrix,
    a: &Matrix,
    i: usize,
) -> Result<LossEval> {
    let mask = sparsity_mask(spec, x);
    let mut eval = LossEval::zeros(x, a);
    for j in 0..x.rows() {
        if j != i && mask.as_ref().map_or(true, |m| m[i][j]) {
            le_term(spec, x, a, i, j, 1.0, &mut eval);
        }
    }
    Ok(eval)
}

/// One ordered LE term `w s_ij ||a_i - a_j||^2` with the Gaussian similarity
/// differentiated on the input side (the sparsity mask is held fixed).
fn le_term(
    spec: &EmbeddingLossSpec,
    x: &Matrix,
    a: &Matrix,
    i: usize,
    j: usize,
    w: f64,
    eval: &mut LossEval,
) {
    let inv_sigma_sq = 1.0 / (spec.sigma * spec.sigma);
    let s = (-sq_dist(x.row(i), x.row(j)) * 0.5 * inv_sigma_sq).exp();
    let dsq = sq_dist(a.row(i), a.row(j));
    eval.value += w * s * dsq;

    let acoeff = 2.0 * w * s;
    for q in 0..a.cols() {
        let diff = a[(i, q)] - a[(j, q)];
        eval.grad_a[(i, q)] += acoeff * diff;
        eval.grad_a[(j, q)] -= acoeff * diff;
    }
    let xcoeff = -w * dsq * s * inv_sigma_sq;
    for q in 0..x.cols() {
        let diff = x[(i, q)] - x[(j, q)];
        eval.grad_x[(i, q)] += xcoeff * diff;
        eval.grad_x[(j, q)] -= xcoeff * diff;
    }
}

pub(super) fn contrastive(
    spec: &EmbeddingLossSpec,
    x: &Matrix,
    a: &Matrix,
    roles: &[PointRole],
    weighting: &PairwiseWeighting,
) -> Result<LossEval> {
    let mask = discrete_mask(spec, x);
    let mut eval = LossEval::zeros(x, a);
    for i in 0..x.rows() {
        for j in 0..x.rows() {
            if j == i {
                continue;
            }
            let w = weighting.of(roles[i], roles[j]);
            if w == 0.0 {
                continue;
            }
            contrastive_term(spec, &mask, x, a, i, j, w, &mut eval);
        }
    }
    Ok(eval)
}

pub(super) fn contrastive_point(
    spec: &EmbeddingLossSpec,
    x: &Matrix,
    a: &Matrix,
    i: usize,
) -> Result<LossEval> {
    let mask = discrete_mask(spec, x);
    let mut eval = LossEval::zeros(x, a);
    for j in 0..x.rows() {
        if j != i {
            contrastive_term(spec, &mask, x, a, i, j, 1.0, &mut eval);
        }
    }
    Ok(eval)
}

fn discrete_mask(spec: &EmbeddingLossSpec, x: &Matrix) -> Option<Vec<Vec<bool>>> {
    if spec.smooth {
        None
    } else {
        sparsity_mask(spec, x)
    }
}

/// One ordered contrastive term
/// `w (d_x d_a + (1 - d_x) max(0, margin - d_a))` with `d_a` the Euclidean
/// distance; the hinge subgradient at the kink is 0.
#[allow(clippy::too_many_arguments)]
fn contrastive_term(
    spec: &EmbeddingLossSpec,
    mask: &Option<Vec<Vec<bool>>>,
    x: &Matrix,
    a: &Matrix,
    i: usize,
    j: usize,
    w: f64,
    eval: &mut LossEval,
) {
    let inv_sigma_sq = 1.0 / (spec.sigma * spec.sigma);
    let dxv = if spec.smooth {
        (-sq_dist(x.row(i), x.row(j)) * 0.5 * inv_sigma_sq).exp()
    } else if mask.as_ref().map_or(false, |m| m[i][j]) {
        1.0
    } else {
        0.0
    };
    let da = dist(a.row(i), a.row(j));
    let hinge = (spec.margin - da).max(0.0);
    eval.value += w * (dxv * da + (1.0 - dxv) * hinge);

    let d_per_da = dxv - if hinge > 0.0 { 1.0 - dxv } else { 0.0 };
    if da > 0.0 && d_per_da != 0.0 {
        let coeff = w * d_per_da / da;
        for q in 0..a.cols() {
            let diff = a[(i, q)] - a[(j, q)];
            eval.grad_a[(i, q)] += coeff * diff;
            eval.grad_a[(j, q)] -= coeff * diff;
        }
    }
    if spec.smooth {
        // d value / d dxv = da - hinge, then the Gaussian input path.
        let xcoeff = -w * (da - hinge) * dxv * inv_sigma_sq;
        for q in 0..x.cols() {
            let diff = x[(i, q)] - x[(j, q)];
            eval.grad_x[(i, q)] += xcoeff * diff;
            eval.grad_x[(j, q)] -= xcoeff * diff;
        }
    }
}
