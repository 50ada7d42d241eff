//! Edge bookkeeping for a memory tree: the sequential chain and the accepted
//! loop closures.

use std::collections::HashMap;

use thiserror::Error;

use crate::factor::{Cov4, EdgeKind, FactorError, RelEdge};
use crate::geometry::Pose4;
use crate::tree::{MemoryTree, NodeKey, TreeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("a sequential edge already links {0} and {1}")]
    DuplicateSequential(NodeKey, NodeKey),
    #[error("edge references missing node {0}")]
    MissingNode(NodeKey),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

/// Index into an [`EdgeSet`]. Stable for the life of the edge.
pub type EdgeId = usize;

/// Sequential edges are indexed by both endpoints so the edges crossing a
/// subtree boundary can be found in O(1); loops are kept in insertion order.
#[derive(Debug, Clone, Default)]
pub struct EdgeSet {
    edges: Vec<Option<RelEdge>>,
    seq_by_lower: HashMap<NodeKey, EdgeId>,
    seq_by_upper: HashMap<NodeKey, EdgeId>,
    loops: Vec<EdgeId>,
}

impl EdgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: EdgeId) -> Option<&RelEdge> {
        self.edges.get(id).and_then(Option::as_ref)
    }

    pub fn edge(&self, id: EdgeId) -> &RelEdge {
        self.get(id).expect("live edge id")
    }

    /// Live edges in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (EdgeId, &RelEdge)> {
        self.edges
            .iter()
            .enumerate()
            .filter_map(|(id, e)| e.as_ref().map(|e| (id, e)))
    }

    pub fn len(&self) -> usize {
        self.seq_by_lower.len() + self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn loops(&self) -> &[EdgeId] {
        &self.loops
    }

    pub fn num_sequential(&self) -> usize {
        self.seq_by_lower.len()
    }

    /// Sequential edge leaving `key` towards the next keyframe.
    pub fn sequential_from(&self, key: NodeKey) -> Option<EdgeId> {
        self.seq_by_lower.get(&key).copied()
    }

    /// Sequential edge arriving at `key` from the previous keyframe.
    pub fn sequential_into(&self, key: NodeKey) -> Option<EdgeId> {
        self.seq_by_upper.get(&key).copied()
    }

    pub fn push(&mut self, edge: RelEdge) -> Result<EdgeId, GraphError> {
        let id = self.edges.len();
        match edge.kind {
            EdgeKind::Sequential => {
                let (lo, hi) = (edge.lower(), edge.upper());
                if self.seq_by_lower.contains_key(&lo) || self.seq_by_upper.contains_key(&hi) {
                    return Err(GraphError::DuplicateSequential(lo, hi));
                }
                self.seq_by_lower.insert(lo, id);
                self.seq_by_upper.insert(hi, id);
            }
            EdgeKind::Loop => self.loops.push(id),
        }
        self.edges.push(Some(edge));
        Ok(id)
    }

    /// Removes an edge. Loop removal is O(number of loops).
    pub fn remove(&mut self, id: EdgeId) -> Option<RelEdge> {
        let edge = self.edges.get_mut(id)?.take()?;
        match edge.kind {
            EdgeKind::Sequential => {
                self.seq_by_lower.remove(&edge.lower());
                self.seq_by_upper.remove(&edge.upper());
            }
            EdgeKind::Loop => {
                if self.loops.last() == Some(&id) {
                    self.loops.pop();
                } else {
                    self.loops.retain(|l| *l != id);
                }
            }
        }
        Some(edge)
    }
}

/// A memory tree together with its measurements.
#[derive(Debug, Clone, Default)]
pub struct TreeGraph {
    pub tree: MemoryTree,
    pub edges: EdgeSet,
}

impl TreeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a keyframe after the current last one, placing it by composing
    /// the odometry measurement onto the previous keyframe's global pose.
    pub fn append_keyframe(&mut self, edge: RelEdge) -> Result<EdgeId, GraphError> {
        let (prev, key) = (edge.lower(), edge.upper());
        let g_prev = self.tree.global_pose(prev)?;
        self.tree.insert(key, g_prev.compose(&edge.forward_meas()))?;
        self.push_edge(edge)
    }

    /// Adds an edge whose endpoints are already in the tree.
    pub fn push_edge(&mut self, edge: RelEdge) -> Result<EdgeId, GraphError> {
        for k in [edge.i, edge.j] {
            if !self.tree.contains(k) {
                return Err(GraphError::MissingNode(k));
            }
        }
        self.edges.push(edge)
    }

    /// Removes a keyframe. Its two odometry edges are merged into one spanning
    /// edge (measurements composed, covariances added) and loops touching it
    /// are dropped. Returns the ids of the dropped loops.
    pub fn prune(&mut self, key: NodeKey) -> Result<Vec<EdgeId>, GraphError> {
        if !self.tree.contains(key) {
            return Err(GraphError::MissingNode(key));
        }
        let dropped: Vec<EdgeId> = self
            .edges
            .loops()
            .iter()
            .copied()
            .filter(|&l| {
                let e = self.edges.edge(l);
                e.i == key || e.j == key
            })
            .collect();
        for &l in &dropped {
            self.edges.remove(l);
        }
        let before = self.edges.sequential_into(key).and_then(|id| self.edges.remove(id));
        let after = self.edges.sequential_from(key).and_then(|id| self.edges.remove(id));
        self.tree.remove(key)?;
        if let (Some(a), Some(b)) = (before, after) {
            let meas: Pose4 = a.forward_meas().compose(&b.forward_meas());
            let (da, db) = (a.cov.diag(), b.cov.diag());
            let cov = Cov4::new(da[0] + db[0], da[1] + db[1], da[2] + db[2], da[3] + db[3])?;
            let mut merged = RelEdge::new(a.lower(), b.upper(), meas, cov)?;
            merged.kind = EdgeKind::Sequential;
            self.edges.push(merged)?;
        }
        Ok(dropped)
    }

    /// Sum of squared Mahalanobis residuals over all edges, from global poses.
    pub fn total_chi2(&self) -> f64 {
        let globals: HashMap<NodeKey, Pose4> = self.tree.global_poses().into_iter().collect();
        self.edges
            .iter()
            .map(|(_, e)| e.chi2(&globals[&e.i], &globals[&e.j]))
            .sum()
    }
}
