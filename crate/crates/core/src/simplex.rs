//! Projections onto the positive-sum simplex and related sampling.
//!
//! The projector alternates a uniform sum-correction with clamping negative
//! coordinates to zero, freezing each coordinate the moment it hits zero.
//! Every sweep strictly shrinks the active set, so it terminates in at most
//! `p` sweeps and lands on the exact Euclidean projection onto
//! `{γ ≥ 0, Σγ = c}`.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

/// Inputs already feasible to this relative precision are returned unchanged,
/// which makes the projection exactly idempotent.
const FEASIBLE_TOL: f64 = 1e-12;

/// A point of the simplex `{γ ≥ 0, Σγ = c}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexCoordinates {
    pub gamma: Vec<f64>,
    pub total: f64,
}

impl SimplexCoordinates {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// Checks nonnegativity and the sum constraint to `tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.gamma.iter().all(|&g| g >= 0.0)
            && (self.gamma.iter().sum::<f64>() - self.total).abs() <= tol
    }
}

/// Floor constraint `γ_k ≥ τ` layered on top of the unit simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasedSimplexConstraint {
    /// Index of the dominant coordinate.
    pub dominant_index: usize,
    /// Floor value, must be < 1.
    pub tau: f64,
}

/// Euclidean projection of `kappa` onto `{γ ≥ 0, Σγ = c}`.
pub fn project_simplex(kappa: &[f64], c: f64) -> Result<SimplexCoordinates> {
    if kappa.is_empty() {
        return Err(Error::InvalidConstraint("empty input vector".into()));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidConstraint(format!("total c = {c} must be positive")));
    }
    if kappa.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("project_simplex input".into()));
    }

    let p = kappa.len();
    let sum: f64 = kappa.iter().sum();
    let delta = (c - sum) / p as f64;

    // Zero-correction path: feasible input comes back untouched.
    if delta.abs() <= FEASIBLE_TOL * c.max(1.0) && kappa.iter().all(|&v| v >= 0.0) {
        return Ok(SimplexCoordinates {
            gamma: kappa.to_vec(),
            total: c,
        });
    }

    let mut gamma: Vec<f64> = kappa.iter().map(|&v| v + delta).collect();
    // frozen[i] marks a coordinate clamped to zero in a previous sweep.
    let mut frozen = vec![false; p];

    while gamma.iter().any(|&g| g < 0.0) {
        let mut active = 0usize;
        let mut active_sum = 0.0;
        for (g, fz) in gamma.iter_mut().zip(frozen.iter_mut()) {
            if *g < 0.0 {
                *g = 0.0;
                *fz = true;
            } else if !*fz {
                active += 1;
                active_sum += *g;
            }
        }
        debug_assert!(active > 0, "active set cannot empty out while sum must reach c > 0");
        let delta = (c - active_sum) / active as f64;
        for (g, fz) in gamma.iter_mut().zip(frozen.iter()) {
            if !*fz {
                *g += delta;
            }
        }
    }

    // Guard against residual sub-epsilon negatives, then restore the sum with
    // a single renormalization.
    let mut sum = 0.0;
    for g in &mut gamma {
        if *g < 0.0 {
            *g = 0.0;
        }
        sum += *g;
    }
    if sum > 0.0 && sum != c {
        let scale = c / sum;
        for g in &mut gamma {
            *g *= scale;
        }
    }

    Ok(SimplexCoordinates { gamma, total: c })
}

/// Projection onto the unit simplex with the extra floor `γ_k ≥ τ`:
/// shift coordinate `k` down by `τ`, project with total `1 − τ`, shift back.
pub fn project_simplex_biased(
    kappa: &[f64],
    constraint: &BiasedSimplexConstraint,
) -> Result<SimplexCoordinates> {
    let BiasedSimplexConstraint { dominant_index: k, tau } = *constraint;
    if !(tau < 1.0) {
        return Err(Error::InvalidConstraint(format!("tau = {tau} must be < 1")));
    }
    if tau < 0.0 {
        return Err(Error::InvalidConstraint(format!("tau = {tau} must be >= 0")));
    }
    if k >= kappa.len() {
        return Err(Error::InvalidConstraint(format!(
            "dominant index {k} out of range for p = {}",
            kappa.len()
        )));
    }
    if tau == 0.0 {
        return project_simplex(kappa, 1.0);
    }

    let mut shifted = kappa.to_vec();
    shifted[k] -= tau;
    let mut projected = project_simplex(&shifted, 1.0 - tau)?;
    projected.gamma[k] += tau;
    projected.total = 1.0;
    Ok(projected)
}

/// Clamps `gamma1` into `[lo, hi]`. The interval constraint is the whole
/// projection when only one free mixing coordinate remains.
pub fn clamp_interval(gamma1: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < hi);
    gamma1.min(hi).max(lo)
}

/// Draws from `Dirichlet(alpha)` by normalizing independent `Gamma(α_i, 1)`
/// samples.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<SimplexCoordinates> {
    if alpha.is_empty() {
        return Err(Error::InvalidConstraint("empty alpha".into()));
    }
    if alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidConstraint(
            "Dirichlet parameters must all be positive".into(),
        ));
    }
    loop {
        let mut draws = Vec::with_capacity(alpha.len());
        let mut sum = 0.0;
        for &a in alpha {
            let g = Gamma::new(a, 1.0)
                .map_err(|e| Error::InvalidConstraint(format!("gamma({a}): {e}")))?;
            let v: f64 = g.sample(rng);
            draws.push(v);
            sum += v;
        }
        // For very small alpha all gamma draws can underflow to zero; redraw.
        if sum > 0.0 {
            for v in &mut draws {
                *v /= sum;
            }
            return Ok(SimplexCoordinates {
                gamma: draws,
                total: 1.0,
            });
        }
    }
}
