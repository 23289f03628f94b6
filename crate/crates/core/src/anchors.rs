//! Anchor-set construction, coordinate initialization, and virtual-point
//! composition.
//!
//! A virtual point is a convex combination `x~ = sum_i gamma_i z_i` of anchor
//! rows drawn from the dataset; its Jacobian with respect to `gamma` is `Z^T`,
//! which is what the attack's chain rule uses.

use crate::error::{Error, Result};
use crate::losses::graph_knn;
use crate::matrix::Matrix;
use crate::simplex::{
    project_simplex_biased, sample_dirichlet, BiasedSimplexConstraint, SimplexCoordinates,
};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Rule for drawing an anchor set and initializing its coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnchorRule {
    /// A random sample plus its `p - 1` nearest Euclidean neighbors; gamma
    /// initialized by normalized uniform draws.
    Neighbor {
        p: usize,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default)]
        bias: Option<BiasedSimplexConstraint>,
    },
    /// `p` distinct uniform-random samples; gamma initialized by a Dirichlet
    /// draw.
    Random {
        p: usize,
        alpha: Vec<f64>,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default)]
        bias: Option<BiasedSimplexConstraint>,
    },
}

fn default_scale() -> f64 {
    1.0
}

impl AnchorRule {
    pub fn p(&self) -> usize {
        match self {
            AnchorRule::Neighbor { p, .. } | AnchorRule::Random { p, .. } => *p,
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            AnchorRule::Neighbor { scale, .. } | AnchorRule::Random { scale, .. } => *scale,
        }
    }

    pub fn bias(&self) -> Option<&BiasedSimplexConstraint> {
        match self {
            AnchorRule::Neighbor { bias, .. } | AnchorRule::Random { bias, .. } => bias.as_ref(),
        }
    }

    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let p = self.p();
        if p < 2 {
            return Err(Error::InvalidConfig(format!("anchor count p = {p} must be >= 2")));
        }
        if n_samples < p {
            return Err(Error::InvalidConfig(format!(
                "anchor rule needs at least p = {p} samples, dataset has {n_samples}"
            )));
        }
        if !(self.scale() > 0.0) {
            return Err(Error::InvalidConfig("anchor scale must be positive".into()));
        }
        if let AnchorRule::Random { p, alpha, .. } = self {
            if alpha.len() != *p {
                return Err(Error::InvalidConfig(format!(
                    "alpha length {} must equal p = {p}",
                    alpha.len()
                )));
            }
            if alpha.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::InvalidConfig("alpha entries must be positive".into()));
            }
        }
        Ok(())
    }

    /// Draws one anchor set from `x` by this rule, applying the centroid
    /// scaling.
    pub fn draw<R: Rng + ?Sized>(&self, x: &Matrix, rng: &mut R) -> Result<AnchorSet> {
        self.validate(x.rows())?;
        let set = match self {
            AnchorRule::Neighbor { p, .. } => neighbor_anchors(x, *p, rng)?,
            AnchorRule::Random { p, .. } => random_anchors(x, *p, rng)?,
        };
        let s = self.scale();
        if s == 1.0 {
            Ok(set)
        } else {
            let mut scaled = scale_anchors(&set.points, s)?;
            scaled.indices = set.indices;
            Ok(scaled)
        }
    }
}

/// An ordered list of anchor points (rows of `points`), with the dataset
/// indices they came from.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    pub indices: Vec<usize>,
    pub points: Matrix,
}

/// A virtual point: anchor set reference plus simplex coordinates.
#[derive(Debug, Clone)]
pub struct VirtualPoint<'a> {
    pub anchors: &'a AnchorSet,
    pub gamma: &'a SimplexCoordinates,
}

/// First anchor uniform-random, remaining `p - 1` its nearest Euclidean
/// neighbors (ties by lower index).
pub fn neighbor_anchors<R: Rng + ?Sized>(x: &Matrix, p: usize, rng: &mut R) -> Result<AnchorSet> {
    if x.rows() < p {
        return Err(Error::InvalidConfig(format!(
            "neighbor_anchors needs N >= p, got N = {}, p = {p}",
            x.rows()
        )));
    }
    let first = rng.random_range(0..x.rows());
    let mut indices = vec![first];
    indices.extend(graph_knn(x, first, p - 1));
    Ok(AnchorSet {
        points: x.select_rows(&indices),
        indices,
    })
}

/// `p` distinct uniform-random rows.
pub fn random_anchors<R: Rng + ?Sized>(x: &Matrix, p: usize, rng: &mut R) -> Result<AnchorSet> {
    if x.rows() < p {
        return Err(Error::InvalidConfig(format!(
            "random_anchors needs N >= p, got N = {}, p = {p}",
            x.rows()
        )));
    }
    let mut all: Vec<usize> = (0..x.rows()).collect();
    all.shuffle(rng);
    all.truncate(p);
    Ok(AnchorSet {
        points: x.select_rows(&all),
        indices: all,
    })
}

/// Moves each anchor radially from the centroid by factor `s`:
/// `z_i = mu + s (x_i - mu)`.
pub fn scale_anchors(points: &Matrix, s: f64) -> Result<AnchorSet> {
    if !(s > 0.0) {
        return Err(Error::InvalidConstraint(format!("scale s = {s} must be positive")));
    }
    let (p, n) = (points.rows(), points.cols());
    let mut centroid = vec![0.0; n];
    for i in 0..p {
        for (c, &v) in centroid.iter_mut().zip(points.row(i).iter()) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= p as f64;
    }
    let mut scaled = Matrix::zeros(p, n);
    for i in 0..p {
        for q in 0..n {
            scaled[(i, q)] = centroid[q] + s * (points[(i, q)] - centroid[q]);
        }
    }
    Ok(AnchorSet {
        indices: (0..p).collect(),
        points: scaled,
    })
}

/// Draws initial simplex coordinates for one anchor set per the rule:
/// normalized uniforms for neighbor anchors, a Dirichlet draw for random
/// anchors, passed through the biased projection when a floor is set.
pub fn init_gamma<R: Rng + ?Sized>(rule: &AnchorRule, rng: &mut R) -> Result<SimplexCoordinates> {
    let gamma = match rule {
        AnchorRule::Neighbor { p, .. } => {
            let mut draws: Vec<f64> = (0..*p).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut sum: f64 = draws.iter().sum();
            if sum <= 0.0 {
                // all-zero draws are vanishingly rare; fall back to uniform
                draws = vec![1.0; *p];
                sum = *p as f64;
            }
            for d in &mut draws {
                *d /= sum;
            }
            SimplexCoordinates {
                gamma: draws,
                total: 1.0,
            }
        }
        AnchorRule::Random { alpha, .. } => sample_dirichlet(alpha, rng)?,
    };
    match rule.bias() {
        Some(b) => project_simplex_biased(&gamma.gamma, b),
        None => Ok(gamma),
    }
}

/// The convex combination `x~ = sum_i gamma_i z_i`.
pub fn compose_virtual(vp: &VirtualPoint) -> Vec<f64> {
    compose(&vp.anchors.points, &vp.gamma.gamma)
}

/// Composition from raw parts; linear in `gamma`.
pub fn compose(points: &Matrix, gamma: &[f64]) -> Vec<f64> {
    debug_assert_eq!(points.rows(), gamma.len());
    let mut out = vec![0.0; points.cols()];
    for (i, &g) in gamma.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (o, &z) in out.iter_mut().zip(points.row(i).iter()) {
            *o += g * z;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn line_points() -> Matrix {
        Matrix::from_rows(&[vec![0.0], vec![1.0], vec![10.0]]).unwrap()
    }

    #[test]
    fn neighbor_anchors_pick_nearest() {
        let x = line_points();
        // try seeds until the first anchor is index 0, then its unique nearest
        // neighbor must be index 1
        for seed in 0..50 {
            let mut rng = seeded_rng(seed);
            let set = neighbor_anchors(&x, 2, &mut rng).unwrap();
            if set.indices[0] == 0 {
                assert_eq!(set.indices, vec![0, 1]);
                return;
            }
        }
        panic!("no seed selected index 0 first");
    }

    #[test]
    fn anchors_are_distinct_dataset_rows() {
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 1.0],
        ])
        .unwrap();
        let mut rng = seeded_rng(5);
        let set = neighbor_anchors(&x, 3, &mut rng).unwrap();
        let mut sorted = set.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 3);
        for (k, &i) in set.indices.iter().enumerate() {
            assert_eq!(set.points.row(k), x.row(i));
        }
    }

    #[test]
    fn random_anchors_deterministic_under_seed() {
        let x = line_points();
        let a = random_anchors(&x, 2, &mut seeded_rng(3)).unwrap();
        let b = random_anchors(&x, 2, &mut seeded_rng(3)).unwrap();
        assert_eq!(a.indices, b.indices);
    }

    #[test]
    fn random_anchors_exhaustive_is_permutation() {
        let x = line_points();
        let set = random_anchors(&x, 3, &mut seeded_rng(7)).unwrap();
        let mut sorted = set.indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn scale_identity_and_half() {
        let tri = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let same = scale_anchors(&tri, 1.0).unwrap();
        assert_eq!(same.points, tri);

        let half = scale_anchors(&tri, 0.5).unwrap();
        assert!((half.points[(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((half.points[(0, 1)] - 1.0 / 3.0).abs() < 1e-12);

        // centroid invariant under scaling
        for q in 0..2 {
            let before: f64 = (0..3).map(|i| tri[(i, q)]).sum::<f64>() / 3.0;
            let after: f64 = (0..3).map(|i| half.points[(i, q)]).sum::<f64>() / 3.0;
            assert!((before - after).abs() < 1e-12);
        }
    }

    #[test]
    fn init_gamma_respects_bias() {
        let rule = AnchorRule::Random {
            p: 3,
            alpha: vec![0.5, 0.5, 0.5],
            scale: 1.0,
            bias: Some(BiasedSimplexConstraint {
                dominant_index: 1,
                tau: 0.9,
            }),
        };
        let mut rng = seeded_rng(11);
        for _ in 0..50 {
            let g = init_gamma(&rule, &mut rng).unwrap();
            assert!(g.gamma[1] >= 0.9 - 1e-12);
            assert!(g.is_feasible(1e-9));
        }
    }

    #[test]
    fn compose_vertex_centroid_and_interpolation() {
        let z = Matrix::from_rows(&[vec![0.0], vec![4.0]]).unwrap();
        assert_eq!(compose(&z, &[1.0, 0.0]), vec![0.0]);
        assert_eq!(compose(&z, &[0.5, 0.5]), vec![2.0]);
        assert_eq!(compose(&z, &[0.25, 0.75]), vec![3.0]);
    }

    #[test]
    fn compose_is_linear_in_gamma() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let g1 = [0.2, 0.5, 0.3];
        let g2 = [0.6, 0.1, 0.3];
        let t = 0.35;
        let mixed: Vec<f64> = g1.iter().zip(g2.iter()).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let lhs = compose(&z, &mixed);
        let c1 = compose(&z, &g1);
        let c2 = compose(&z, &g2);
        for q in 0..2 {
            assert!((lhs[q] - (t * c1[q] + (1.0 - t) * c2[q])).abs() < 1e-15);
        }
    }
}
