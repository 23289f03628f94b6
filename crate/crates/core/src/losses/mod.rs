//! Embedding losses, their gradients, and the pairwise decomposition.
//!
//! Every loss reports its value together with exact gradients with respect to
//! the embeddings (`grad_a`) and, where the objective depends smoothly on the
//! inputs, with respect to the inputs themselves (`grad_x`). The input-side
//! gradient is what lets the attack chain through a moving virtual point; for
//! LLE the reconstruction weights are treated as constant within a gradient
//! evaluation, and for the discrete contrastive similarity the input gradient
//! is zero almost everywhere.

mod graph;
mod lle;
mod pairwise;
mod sne;

pub use graph::{build_graph, GraphMatrices};
pub(crate) use graph::knn_indices as graph_knn;
pub use lle::{lle_fit_weights, lle_loss, ReconstructionWeights};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mds,
    Le,
    Lle,
    Contrastive,
    Sne,
}

/// Tagged choice of embedding loss with its metric parameters. Parameters
/// irrelevant to the chosen kind are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLossSpec {
    pub kind: LossKind,
    /// Gaussian bandwidth for the input-space similarity (LE, SNE, smoothed
    /// contrastive). SNE applies the same bandwidth in the embedding space.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Neighbor count for LLE weights, LE sparsification, and the discrete
    /// contrastive neighborhood.
    #[serde(default)]
    pub k_neighbors: Option<usize>,
    /// Alternative LE sparsification: zero the similarity when the squared
    /// distance exceeds this cutoff.
    #[serde(default)]
    pub distance_cutoff: Option<f64>,
    /// Contrastive hinge margin.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Contrastive: replace the discrete similarity with a Gaussian.
    #[serde(default)]
    pub smooth: bool,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_margin() -> f64 {
    1.0
}

impl EmbeddingLossSpec {
    pub fn new(kind: LossKind) -> Self {
        EmbeddingLossSpec {
            kind,
            sigma: default_sigma(),
            k_neighbors: None,
            distance_cutoff: None,
            margin: default_margin(),
            smooth: false,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k_neighbors = Some(k);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LossKind::Le | LossKind::Sne => {
                if !(self.sigma > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "{:?} requires sigma > 0, got {}",
                        self.kind, self.sigma
                    )));
                }
            }
            LossKind::Lle => {
                if self.k_neighbors.map_or(true, |k| k < 1) {
                    return Err(Error::InvalidConfig("LLE requires k_neighbors >= 1".into()));
                }
            }
            LossKind::Contrastive => {
                if !(self.margin > 0.0) {
                    return Err(Error::InvalidConfig("contrastive margin must be > 0".into()));
                }
                if self.smooth {
                    if !(self.sigma > 0.0) {
                        return Err(Error::InvalidConfig(
                            "smoothed contrastive requires sigma > 0".into(),
                        ));
                    }
                } else if self.k_neighbors.map_or(true, |k| k < 1) {
                    return Err(Error::InvalidConfig(
                        "discrete contrastive requires k_neighbors >= 1".into(),
                    ));
                }
            }
            LossKind::Mds => {}
        }
        Ok(())
    }

    /// MDS and LE decompose into elementary pairwise terms (and therefore
    /// accept non-uniform data/virtual weighting); the rest do not.
    pub fn is_pairwise_decomposable(&self) -> bool {
        matches!(self.kind, LossKind::Mds | LossKind::Le)
    }
}

/// Role of each pooled point in the three-part pairwise decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointRole {
    Data,
    Virtual,
}

/// Weights for the data-data / data-virtual / virtual-virtual pair classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseWeighting {
    pub w_dd: f64,
    pub w_dv: f64,
    pub w_vv: f64,
}

impl PairwiseWeighting {
    pub fn uniform() -> Self {
        PairwiseWeighting {
            w_dd: 1.0,
            w_dv: 1.0,
            w_vv: 1.0,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.w_dd == 1.0 && self.w_dv == 1.0 && self.w_vv == 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_dd < 0.0 || self.w_dv < 0.0 || self.w_vv < 0.0 {
            return Err(Error::InvalidConstraint("pair weights must be nonnegative".into()));
        }
        if self.w_dd == 0.0 && self.w_dv == 0.0 && self.w_vv == 0.0 {
            return Err(Error::InvalidConstraint("at least one pair weight must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn of(&self, a: PointRole, b: PointRole) -> f64 {
        match (a, b) {
            (PointRole::Data, PointRole::Data) => self.w_dd,
            (PointRole::Virtual, PointRole::Virtual) => self.w_vv,
            _ => self.w_dv,
        }
    }
}

impl Default for PairwiseWeighting {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Loss value with gradients w.r.t. embeddings and inputs.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub grad_a: Matrix,
    pub grad_x: Matrix,
}

impl LossEval {
    pub(crate) fn zeros(x: &Matrix, a: &Matrix) -> Self {
        LossEval {
            value: 0.0,
            grad_a: Matrix::zeros(a.rows(), a.cols()),
            grad_x: Matrix::zeros(x.rows(), x.cols()),
        }
    }
}

fn check_rows(x: &Matrix, a: &Matrix) -> Result<()> {
    if x.rows() != a.rows() {
        return Err(Error::dim("loss batch rows", x.rows(), a.rows()));
    }
    Ok(())
}

/// MDS stress over ordered pairs: `sum_{i != j} (d_a(i,j) - d_x(i,j))^2`.
pub fn mds_loss(x: &Matrix, a: &Matrix) -> Result<LossEval> {
    check_rows(x, a)?;
    if x.rows() < 2 {
        return Err(Error::DegenerateBatch("mds_loss needs at least 2 rows".into()));
    }
    let roles = vec![PointRole::Data; x.rows()];
    pairwise::mds(x, a, &roles, &PairwiseWeighting::uniform())
}

/// Laplacian-eigenmaps loss against a fixed similarity graph:
/// `sum_{i != j} W_ij ||a_i - a_j||^2`. The graph is treated as constant, so
/// `grad_x` is zero here; the attack path rebuilds similarities through
/// [`total_pgs_loss`].
pub fn le_loss(graph: &GraphMatrices, a: &Matrix) -> Result<LossEval> {
    graph.check_symmetric(1e-9)?;
    if graph.w.rows() != a.rows() {
        return Err(Error::dim("le_loss batch rows", graph.w.rows(), a.rows()));
    }
    let n = a.rows();
    let d = a.cols();
    let mut eval = LossEval {
        value: 0.0,
        grad_a: Matrix::zeros(n, d),
        grad_x: Matrix::zeros(n, 0),
    };
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = graph.w[(i, j)];
            if w == 0.0 {
                continue;
            }
            let ai = a.row(i);
            let aj = a.row(j);
            eval.value += w * crate::matrix::sq_dist(ai, aj);
            for q in 0..d {
                let diff = ai[q] - aj[q];
                eval.grad_a[(i, q)] += 2.0 * w * diff;
                eval.grad_a[(j, q)] -= 2.0 * w * diff;
            }
        }
    }
    Ok(eval)
}

/// Contrastive loss over ordered pairs with either the discrete kNN
/// similarity or its Gaussian smoothing.
pub fn contrastive_loss(spec: &EmbeddingLossSpec, x: &Matrix, a: &Matrix) -> Result<LossEval> {
    spec.validate()?;
    check_rows(x, a)?;
    let roles = vec![PointRole::Data; x.rows()];
    pairwise::contrastive(spec, x, a, &roles, &PairwiseWeighting::uniform())
}

/// SNE loss: KL divergence between row-normalized Gaussian similarities in
/// input and embedding space.
pub fn sne_loss(spec: &EmbeddingLossSpec, x: &Matrix, a: &Matrix) -> Result<LossEval> {
    spec.validate()?;
    check_rows(x, a)?;
    if x.rows() < 2 {
        return Err(Error::DegenerateBatch("sne_loss needs at least 2 rows".into()));
    }
    sne::sne(spec, x, a)
}

/// Total objective over a pooled batch with the three-part data/virtual
/// weighting. Non-decomposable kinds demand the uniform weighting.
pub fn total_pgs_loss(
    spec: &EmbeddingLossSpec,
    x: &Matrix,
    a: &Matrix,
    roles: &[PointRole],
    weighting: &PairwiseWeighting,
) -> Result<LossEval> {
    spec.validate()?;
    weighting.validate()?;
    check_rows(x, a)?;
    if roles.len() != x.rows() {
        return Err(Error::dim("total_pgs_loss roles", x.rows(), roles.len()));
    }
    if !spec.is_pairwise_decomposable() && !weighting.is_uniform() {
        return Err(Error::UnsupportedDecomposition(format!(
            "{:?} does not decompose into elementary pairwise losses; use uniform weighting",
            spec.kind
        )));
    }
    match spec.kind {
        LossKind::Mds => pairwise::mds(x, a, roles, weighting),
        LossKind::Le => pairwise::le(spec, x, a, roles, weighting),
        LossKind::Contrastive => pairwise::contrastive(spec, x, a, roles, weighting),
        LossKind::Sne => sne::sne(spec, x, a),
        LossKind::Lle => {
            let k = spec.k_neighbors.unwrap();
            let weights = lle_fit_weights(x, k)?;
            lle_loss(&weights, a)
        }
    }
}

/// Per-point embedding loss `L_e(a_i, complement)` over the pooled batch.
pub fn point_loss(spec: &EmbeddingLossSpec, x: &Matrix, a: &Matrix, i: usize) -> Result<LossEval> {
    spec.validate()?;
    check_rows(x, a)?;
    if x.rows() < 2 {
        return Err(Error::DegenerateBatch("point_loss needs at least 2 rows".into()));
    }
    match spec.kind {
        LossKind::Mds => pairwise::mds_point(x, a, i),
        LossKind::Le => pairwise::le_point(spec, x, a, i),
        LossKind::Contrastive => pairwise::contrastive_point(spec, x, a, i),
        LossKind::Sne => sne::sne_point(spec, x, a, i),
        LossKind::Lle => lle::lle_point(spec, x, a, i),
    }
}

/// Value-only total, used by evaluation loops that never backpropagate.
pub fn total_value(spec: &EmbeddingLossSpec, x: &Matrix, a: &Matrix) -> Result<f64> {
    let roles = vec![PointRole::Data; x.rows()];
    Ok(total_pgs_loss(spec, x, a, &roles, &PairwiseWeighting::uniform())?.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(vals: &[f64]) -> Matrix {
        Matrix::from_vec(vals.len(), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn mds_zero_for_isometric_embedding() {
        let x = col(&[0.0, 1.0, 3.0]);
        let e = mds_loss(&x, &x).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.grad_a.max_abs(), 0.0);
    }

    #[test]
    fn mds_collapsed_embedding_value() {
        // pairwise input distances 1, 3, 2; ordered pairs double each term.
        let x = col(&[0.0, 1.0, 3.0]);
        let a = col(&[0.5, 0.5, 0.5]);
        let e = mds_loss(&x, &a).unwrap();
        assert!((e.value - 28.0).abs() < 1e-12);
    }

    #[test]
    fn mds_rejects_single_row() {
        let x = col(&[1.0]);
        assert!(mds_loss(&x, &x).is_err());
    }

    #[test]
    fn le_zero_when_collapsed() {
        let spec = EmbeddingLossSpec::new(LossKind::Le).with_sigma(0.5);
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = build_graph(&spec, &x).unwrap();
        let a = col(&[0.3, 0.3, 0.3]);
        let e = le_loss(&g, &a).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn nonuniform_weighting_rejected_for_sne() {
        let spec = EmbeddingLossSpec::new(LossKind::Sne).with_sigma(1.0);
        let x = col(&[0.0, 1.0, 2.0]);
        let roles = vec![PointRole::Data, PointRole::Data, PointRole::Virtual];
        let w = PairwiseWeighting {
            w_dd: 1.0,
            w_dv: 0.5,
            w_vv: 1.0,
        };
        let err = total_pgs_loss(&spec, &x, &x, &roles, &w);
        assert!(matches!(err, Err(Error::UnsupportedDecomposition(_))));
    }

    #[test]
    fn uniform_weighting_matches_plain_loss() {
        let x = Matrix::from_rows(&[
            vec![0.0, 0.1],
            vec![1.0, -0.4],
            vec![0.3, 0.9],
            vec![-0.7, 0.2],
        ])
        .unwrap();
        let a = Matrix::from_rows(&[vec![0.1], vec![0.9], vec![0.4], vec![-0.5]]).unwrap();
        let roles = vec![
            PointRole::Data,
            PointRole::Virtual,
            PointRole::Data,
            PointRole::Virtual,
        ];
        let spec = EmbeddingLossSpec::new(LossKind::Mds);
        let total =
            total_pgs_loss(&spec, &x, &a, &roles, &PairwiseWeighting::uniform()).unwrap();
        let plain = mds_loss(&x, &a).unwrap();
        assert!((total.value - plain.value).abs() <= 1e-12);
    }

    #[test]
    fn dropping_virtual_weights_leaves_data_only_loss() {
        let x = Matrix::from_rows(&[
            vec![0.0, 0.1],
            vec![1.0, -0.4],
            vec![0.3, 0.9],
            vec![-0.7, 0.2],
        ])
        .unwrap();
        let a = Matrix::from_rows(&[vec![0.1], vec![0.9], vec![0.4], vec![-0.5]]).unwrap();
        let roles = vec![
            PointRole::Data,
            PointRole::Virtual,
            PointRole::Data,
            PointRole::Data,
        ];
        let spec = EmbeddingLossSpec::new(LossKind::Mds);
        let w = PairwiseWeighting {
            w_dd: 1.0,
            w_dv: 0.0,
            w_vv: 0.0,
        };
        let weighted = total_pgs_loss(&spec, &x, &a, &roles, &w).unwrap();

        let data_rows = [0usize, 2, 3];
        let xd = x.select_rows(&data_rows);
        let ad = a.select_rows(&data_rows);
        let data_only = mds_loss(&xd, &ad).unwrap();
        assert!((weighted.value - data_only.value).abs() <= 1e-12);
    }

    #[test]
    fn point_losses_sum_to_total() {
        let x = Matrix::from_rows(&[
            vec![0.0, 0.1],
            vec![1.0, -0.4],
            vec![0.3, 0.9],
            vec![-0.7, 0.2],
            vec![0.5, 0.5],
        ])
        .unwrap();
        let a = Matrix::from_rows(&[
            vec![0.1, 0.0],
            vec![0.9, 0.2],
            vec![0.4, -0.1],
            vec![-0.5, 0.3],
            vec![0.2, 0.8],
        ])
        .unwrap();
        for kind in [LossKind::Mds, LossKind::Le, LossKind::Sne, LossKind::Contrastive, LossKind::Lle] {
            let mut spec = EmbeddingLossSpec::new(kind).with_sigma(0.8);
            spec.k_neighbors = Some(2);
            spec.smooth = true;
            let total = total_value(&spec, &x, &a).unwrap();
            let sum: f64 = (0..x.rows())
                .map(|i| point_loss(&spec, &x, &a, i).unwrap().value)
                .sum();
            assert!(
                (total - sum).abs() <= 1e-10 * total.abs().max(1.0),
                "{kind:?}: total {total} vs point sum {sum}"
            );
        }
    }
}
