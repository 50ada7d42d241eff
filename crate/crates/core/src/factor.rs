//! Relative-pose measurements and their residuals.
//!
//! A [`RelEdge`] measures the pose of node `j`'s frame in node `i`'s frame.
//! Over the memory tree the residual is evaluated in the frame of the lowest
//! common ancestor `L`: both endpoint poses are obtained by chaining relative
//! poses down from `L`, so only nodes strictly below `L` on the two chains
//! influence it.

use nalgebra::{Matrix4, Vector3, Vector4};
use thiserror::Error;

use crate::geometry::{wrap_angle, Pose4};
use crate::tree::{MemoryTree, NodeId, NodeKey, TreeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("covariance entries must be positive and finite")]
    InvalidCovariance,
    #[error("edge endpoints must differ (both {0})")]
    SelfLoop(NodeKey),
    #[error("node {lca} is not a common ancestor of {i} and {j}")]
    NotCommonAncestor { i: NodeKey, j: NodeKey, lca: NodeKey },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Sequential,
    Loop,
}

impl EdgeKind {
    /// Temporally adjacent keyframes are sequential, everything else is a loop.
    pub fn classify(i: NodeKey, j: NodeKey) -> Self {
        if i.abs_diff(j) == 1 {
            EdgeKind::Sequential
        } else {
            EdgeKind::Loop
        }
    }
}

/// Diagonal 4-DoF covariance ordered `(yaw, x, y, z)`: rad² then m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov4 {
    diag: [f64; 4],
}

impl Default for Cov4 {
    fn default() -> Self {
        Self::TUNED
    }
}

impl Cov4 {
    /// Default tree edge covariance: 0.01 rad² on yaw, 0.04 m² per axis.
    pub const TUNED: Cov4 = Cov4 {
        diag: [0.01, 0.04, 0.04, 0.04],
    };

    pub fn new(yaw: f64, x: f64, y: f64, z: f64) -> Result<Self, FactorError> {
        let diag = [yaw, x, y, z];
        if diag.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(Self { diag })
        } else {
            Err(FactorError::InvalidCovariance)
        }
    }

    pub fn diag(&self) -> [f64; 4] {
        self.diag
    }

    /// Inverse standard deviations, used to whiten residuals.
    pub fn sqrt_info(&self) -> Vector4<f64> {
        Vector4::from_iterator(self.diag.iter().map(|v| 1.0 / v.sqrt()))
    }

    pub fn mahalanobis_sq(&self, r: &Vector4<f64>) -> f64 {
        r.iter().zip(self.diag).map(|(v, d)| v * v / d).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelEdge {
    pub i: NodeKey,
    pub j: NodeKey,
    /// Pose of `j`'s frame in `i`'s frame.
    pub meas: Pose4,
    pub cov: Cov4,
    pub kind: EdgeKind,
}

impl RelEdge {
    pub fn new(i: NodeKey, j: NodeKey, meas: Pose4, cov: Cov4) -> Result<Self, FactorError> {
        if i == j {
            return Err(FactorError::SelfLoop(i));
        }
        Ok(Self {
            i,
            j,
            meas,
            cov,
            kind: EdgeKind::classify(i, j),
        })
    }

    pub fn lower(&self) -> NodeKey {
        self.i.min(self.j)
    }

    pub fn upper(&self) -> NodeKey {
        self.i.max(self.j)
    }

    /// Measured pose of the upper endpoint in the lower endpoint's frame.
    pub fn forward_meas(&self) -> Pose4 {
        if self.i < self.j {
            self.meas
        } else {
            self.meas.inverse()
        }
    }

    /// Squared Mahalanobis norm of the residual for the given endpoint poses.
    pub fn chi2(&self, gi: &Pose4, gj: &Pose4) -> f64 {
        self.cov.mahalanobis_sq(&measurement_residual(&self.meas, gi, gj))
    }
}

/// `[wrap(meas.yaw - rel.yaw); meas.trans - rel.trans]` with
/// `rel = relative(gi, gj)`, for endpoint poses in any common frame.
pub fn measurement_residual(meas: &Pose4, gi: &Pose4, gj: &Pose4) -> Vector4<f64> {
    let rel = gi.relative(gj);
    let dt = meas.trans - rel.trans;
    Vector4::new(wrap_angle(meas.yaw() - rel.yaw()), dt.x, dt.y, dt.z)
}

/// Jacobians of [`measurement_residual`] with respect to additive
/// `(yaw, x, y, z)` perturbations of `gi` and `gj`.
pub fn measurement_jacobians(gi: &Pose4, gj: &Pose4) -> (Matrix4<f64>, Matrix4<f64>) {
    let d = gj.trans - gi.trans;
    let (s, c) = gi.yaw().sin_cos();
    let mut ji = Matrix4::zeros();
    let mut jj = Matrix4::zeros();
    ji[(0, 0)] = 1.0;
    jj[(0, 0)] = -1.0;
    // R_i^T S d
    let sd = Vector3::new(-d.y, d.x, 0.0);
    let col = rot_t(s, c, &sd);
    ji.fixed_view_mut::<3, 1>(1, 0).copy_from(&col);
    let rt = rot_t_matrix(s, c);
    ji.fixed_view_mut::<3, 3>(1, 1).copy_from(&rt);
    jj.fixed_view_mut::<3, 3>(1, 1).copy_from(&(-rt));
    (ji, jj)
}

#[inline]
fn rot_t(s: f64, c: f64, v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

#[inline]
fn rot_t_matrix(s: f64, c: f64) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

#[inline]
fn rot(yaw: f64) -> nalgebra::Matrix3<f64> {
    crate::geometry::rz(yaw)
}

/// Per-chain-node data needed for Jacobians: the node's position in the LCA
/// frame and the yaw of its parent's frame in the LCA frame.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ChainLink {
    pub id: NodeId,
    pub pos: Vector3<f64>,
    pub parent_yaw: f64,
}

/// Walks `chain` (bottom-up node list ending just below the LCA) top-down and
/// returns the endpoint pose in the LCA frame. When `links` is given, it is
/// filled with one entry per chain node in top-down order.
pub(crate) fn chain_pose(tree: &MemoryTree, chain: &[NodeId], mut links: Option<&mut Vec<ChainLink>>) -> Pose4 {
    let mut g = Pose4::identity();
    for &id in chain.iter().rev() {
        let parent_yaw = g.yaw();
        g = g.compose(tree.rel_of(id));
        if let Some(l) = links.as_deref_mut() {
            l.push(ChainLink {
                id,
                pos: g.trans,
                parent_yaw,
            });
        }
    }
    g
}

/// Block Jacobian of the residual with respect to one chain node's relative
/// pose. `side_i` selects which endpoint's chain the node lies on.
pub(crate) fn chain_block(link: &ChainLink, gi: &Pose4, gj: &Pose4, side_i: bool) -> Matrix4<f64> {
    let (s, c) = gi.yaw().sin_cos();
    let lever = gj.trans - link.pos;
    let sd = Vector3::new(-lever.y, lever.x, 0.0);
    let pos_col = rot_t(s, c, &sd);
    let trans_block = rot_t_matrix(s, c) * rot(link.parent_yaw);
    let sign = if side_i { 1.0 } else { -1.0 };
    let mut j = Matrix4::zeros();
    j[(0, 0)] = sign;
    j.fixed_view_mut::<3, 1>(1, 0).copy_from(&(pos_col * sign));
    j.fixed_view_mut::<3, 3>(1, 1).copy_from(&(trans_block * sign));
    j
}

fn check_lca(tree: &MemoryTree, edge: &RelEdge, lca: NodeKey) -> Result<(NodeId, NodeId, NodeId), FactorError> {
    let (ii, jj, ll) = (tree.id(edge.i)?, tree.id(edge.j)?, tree.id(lca)?);
    let is_anc = |mut n: NodeId| loop {
        if n == ll {
            return true;
        }
        match tree.parent_of(n) {
            Some(p) => n = p,
            None => return false,
        }
    };
    if !(is_anc(ii) && is_anc(jj)) {
        return Err(FactorError::NotCommonAncestor {
            i: edge.i,
            j: edge.j,
            lca,
        });
    }
    Ok((ii, jj, ll))
}

/// Residual of `edge` with both endpoints expressed in the frame of `lca`,
/// which must be a common ancestor of the endpoints (not necessarily the
/// lowest; the residual does not depend on the choice).
pub fn edge_residual(tree: &MemoryTree, edge: &RelEdge, lca: NodeKey) -> Result<Vector4<f64>, FactorError> {
    let (ii, jj, ll) = check_lca(tree, edge, lca)?;
    let gi = chain_pose(tree, &tree.chain_to(ii, ll), None);
    let gj = chain_pose(tree, &tree.chain_to(jj, ll), None);
    Ok(measurement_residual(&edge.meas, &gi, &gj))
}

/// Residual Jacobian with respect to the relative poses of the chain nodes for
/// which `is_variable` holds. Returns the variable keys (ordered `i` side
/// bottom-up, then `j` side bottom-up) and the `4 x 4k` Jacobian.
pub fn edge_jacobian(
    tree: &MemoryTree,
    edge: &RelEdge,
    lca: NodeKey,
    is_variable: impl Fn(NodeKey) -> bool,
) -> Result<(Vec<NodeKey>, nalgebra::DMatrix<f64>), FactorError> {
    let (ii, jj, ll) = check_lca(tree, edge, lca)?;
    let (mut li, mut lj) = (Vec::new(), Vec::new());
    let gi = chain_pose(tree, &tree.chain_to(ii, ll), Some(&mut li));
    let gj = chain_pose(tree, &tree.chain_to(jj, ll), Some(&mut lj));
    let mut keys = Vec::new();
    let mut blocks = Vec::new();
    for (links, side_i) in [(&li, true), (&lj, false)] {
        for link in links.iter().rev() {
            let k = tree.key_of(link.id);
            if is_variable(k) {
                keys.push(k);
                blocks.push(chain_block(link, &gi, &gj, side_i));
            }
        }
    }
    let mut jac = nalgebra::DMatrix::zeros(4, 4 * keys.len());
    for (n, b) in blocks.iter().enumerate() {
        jac.fixed_view_mut::<4, 4>(0, 4 * n).copy_from(b);
    }
    Ok((keys, jac))
}
