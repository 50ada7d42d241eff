//! Conventional pose-graph optimization with every pose in the global frame.

use std::collections::HashMap;

use nalgebra::{DVector, Matrix4, Vector4};
use thiserror::Error;

use crate::factor::{measurement_jacobians, measurement_residual, RelEdge};
use crate::geometry::Pose4;
use crate::solver::{
    apply_block, robust_cost, robustify, run_lm, BlockProblem, LmConfig, NormalEquations, OptResult, SolveError,
};
use crate::tree::NodeKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("vertex {0} is not in the state")]
    MissingVertex(NodeKey),
    #[error("vertex {0} already in the state")]
    DuplicateVertex(NodeKey),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Global poses keyed by vertex id, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalState {
    keys: Vec<NodeKey>,
    poses: Vec<Pose4>,
    index: HashMap<NodeKey, usize>,
}

impl GlobalState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: NodeKey) -> bool {
        self.index.contains_key(&key)
    }

    pub fn insert(&mut self, key: NodeKey, pose: Pose4) -> Result<(), BaselineError> {
        if self.contains(key) {
            return Err(BaselineError::DuplicateVertex(key));
        }
        self.index.insert(key, self.keys.len());
        self.keys.push(key);
        self.poses.push(pose);
        Ok(())
    }

    pub fn get(&self, key: NodeKey) -> Result<&Pose4, BaselineError> {
        self.index
            .get(&key)
            .map(|&i| &self.poses[i])
            .ok_or(BaselineError::MissingVertex(key))
    }

    pub fn set(&mut self, key: NodeKey, pose: Pose4) -> Result<(), BaselineError> {
        let i = *self.index.get(&key).ok_or(BaselineError::MissingVertex(key))?;
        self.poses[i] = pose;
        Ok(())
    }

    /// The gauge vertex: the first one inserted.
    pub fn first_key(&self) -> Option<NodeKey> {
        self.keys.first().copied()
    }

    /// `(key, pose)` pairs sorted by key.
    pub fn sorted(&self) -> Vec<(NodeKey, Pose4)> {
        let mut out: Vec<_> = self.keys.iter().copied().zip(self.poses.iter().copied()).collect();
        out.sort_unstable_by_key(|p| p.0);
        out
    }
}

impl FromIterator<(NodeKey, Pose4)> for GlobalState {
    fn from_iter<I: IntoIterator<Item = (NodeKey, Pose4)>>(iter: I) -> Self {
        let mut s = GlobalState::new();
        for (k, p) in iter {
            s.insert(k, p).expect("unique keys");
        }
        s
    }
}

pub fn baseline_residual(state: &GlobalState, edge: &RelEdge) -> Result<Vector4<f64>, BaselineError> {
    Ok(measurement_residual(&edge.meas, state.get(edge.i)?, state.get(edge.j)?))
}

struct Prepared {
    i: usize,
    j: usize,
    meas: Pose4,
    sqrt_info: Vector4<f64>,
}

struct GlobalProblem<'s> {
    state: &'s mut GlobalState,
    /// Block index per state slot; `None` for the fixed vertex.
    block: Vec<Option<usize>>,
    free: Vec<usize>,
    edges: Vec<Prepared>,
    loss: crate::loss::CauchyLoss,
}

impl BlockProblem for GlobalProblem<'_> {
    fn num_blocks(&self) -> usize {
        self.free.len()
    }

    fn num_edges(&self) -> usize {
        self.edges.len()
    }

    fn cost(&self) -> f64 {
        let p = &self.state.poses;
        self.edges
            .iter()
            .map(|e| {
                robust_cost(
                    &self.loss,
                    &measurement_residual(&e.meas, &p[e.i], &p[e.j]),
                    &e.sqrt_info,
                )
            })
            .sum()
    }

    fn linearize(&self, ne: &mut NormalEquations) {
        let p = &self.state.poses;
        let mut blocks: Vec<(usize, Matrix4<f64>)> = Vec::with_capacity(2);
        for e in &self.edges {
            let r = measurement_residual(&e.meas, &p[e.i], &p[e.j]);
            let (rw, scale) = robustify(&self.loss, &r, &e.sqrt_info);
            let (ji, jj) = measurement_jacobians(&p[e.i], &p[e.j]);
            let rows = Matrix4::from_diagonal(&scale);
            blocks.clear();
            if let Some(b) = self.block[e.i] {
                blocks.push((b, rows * ji));
            }
            if let Some(b) = self.block[e.j] {
                blocks.push((b, rows * jj));
            }
            if !blocks.is_empty() {
                ne.add(&blocks, &rw);
            }
        }
    }

    fn save(&self) -> Vec<Pose4> {
        self.free.iter().map(|&s| self.state.poses[s]).collect()
    }

    fn restore(&mut self, saved: &[Pose4]) {
        for (&s, p) in self.free.iter().zip(saved) {
            self.state.poses[s] = *p;
        }
    }

    fn apply(&mut self, delta: &DVector<f64>) {
        for (b, &s) in self.free.iter().enumerate() {
            self.state.poses[s] = apply_block(&self.state.poses[s], delta, b);
        }
    }
}

/// Optimizes all vertices except the first inserted one over `edges`.
pub fn baseline_optimize<'a>(
    state: &mut GlobalState,
    edges: impl IntoIterator<Item = &'a RelEdge>,
    cfg: &LmConfig,
) -> Result<OptResult, BaselineError> {
    let prepared = edges
        .into_iter()
        .map(|e| {
            let slot = |k| state.index.get(&k).copied().ok_or(BaselineError::MissingVertex(k));
            Ok(Prepared {
                i: slot(e.i)?,
                j: slot(e.j)?,
                meas: e.meas,
                sqrt_info: e.cov.sqrt_info(),
            })
        })
        .collect::<Result<Vec<_>, BaselineError>>()?;
    let n = state.len();
    let block: Vec<Option<usize>> = (0..n).map(|s| s.checked_sub(1)).collect();
    let free = (1..n).collect();
    let mut problem = GlobalProblem {
        state,
        block,
        free,
        edges: prepared,
        loss: cfg.loss().map_err(SolveError::from)?,
    };
    Ok(run_lm(&mut problem, cfg)?)
}

/// Robustified cost of `edges` at `state`.
pub fn baseline_cost<'a>(
    state: &GlobalState,
    edges: impl IntoIterator<Item = &'a RelEdge>,
    cfg: &LmConfig,
) -> Result<f64, BaselineError> {
    let loss = cfg.loss().map_err(SolveError::from)?;
    edges.into_iter().try_fold(0.0, |acc, e| {
        Ok(acc + robust_cost(&loss, &baseline_residual(state, e)?, &e.cov.sqrt_info()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::Cov4;
    use approx::assert_relative_eq;

    fn pose(x: f64, y: f64, yaw: f64) -> Pose4 {
        Pose4::from_xyz_yaw(x, y, 0.0, yaw)
    }

    #[test]
    fn residual_examples() {
        let s: GlobalState = [(0, Pose4::identity()), (1, pose(1.0, 0.0, 0.0))].into_iter().collect();
        let e = RelEdge::new(0, 1, pose(1.0, 0.0, 0.0), Cov4::TUNED).unwrap();
        assert_eq!(baseline_residual(&s, &e).unwrap(), Vector4::zeros());
        let e = RelEdge::new(0, 1, pose(1.0, 0.0, 0.1), Cov4::TUNED).unwrap();
        assert_relative_eq!(
            baseline_residual(&s, &e).unwrap(),
            Vector4::new(0.1, 0.0, 0.0, 0.0),
            epsilon = 1e-15
        );
        let e = RelEdge::new(0, 7, pose(1.0, 0.0, 0.1), Cov4::TUNED).unwrap();
        assert_eq!(baseline_residual(&s, &e), Err(BaselineError::MissingVertex(7)));
    }

    #[test]
    fn consistent_graph_is_untouched() {
        let s0: GlobalState = (0..5)
            .map(|k| (k, pose(k as f64, 0.3 * k as f64, 0.2 * k as f64)))
            .collect();
        let edges: Vec<RelEdge> = (0..4)
            .map(|k| {
                RelEdge::new(
                    k,
                    k + 1,
                    s0.get(k).unwrap().relative(s0.get(k + 1).unwrap()),
                    Cov4::TUNED,
                )
                .unwrap()
            })
            .collect();
        let mut s = s0.clone();
        let res = baseline_optimize(&mut s, &edges, &LmConfig::default()).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(s, s0);
        assert_eq!(res.num_variables, 4);
    }

    #[test]
    fn triangle_with_inconsistent_edge() {
        let mut s: GlobalState = [
            (0, Pose4::identity()),
            (1, pose(1.0, 0.0, 0.0)),
            (2, pose(1.0, 1.0, 0.0)),
        ]
        .into_iter()
        .collect();
        let edges = [
            RelEdge::new(0, 1, pose(1.0, 0.0, 0.0), Cov4::TUNED).unwrap(),
            RelEdge::new(1, 2, pose(0.0, 1.0, 0.0), Cov4::TUNED).unwrap(),
            RelEdge::new(0, 2, pose(1.05, 0.97, 0.03), Cov4::TUNED).unwrap(),
        ];
        let gauge = *s.get(0).unwrap();
        // run to the gradient test rather than the cost-decrease test
        let cfg = LmConfig {
            rel_cost_tol: 0.0,
            max_iterations: 500,
            ..Default::default()
        };
        let res = baseline_optimize(&mut s, &edges, &cfg).unwrap();
        assert!(res.cost_final < res.cost_initial);
        assert_eq!(s.get(0).unwrap(), &gauge);

        // independent oracle: central-difference gradient of the robust cost
        let cost_at = |s: &GlobalState| baseline_cost(s, &edges, &cfg).unwrap();
        let h = 1e-6;
        let mut g_inf: f64 = 0.0;
        for k in 1..3 {
            for d in 0..4 {
                let bump = |sign: f64| {
                    let mut t = s.clone();
                    let p = *t.get(k).unwrap();
                    let mut v = [p.yaw(), p.trans.x, p.trans.y, p.trans.z];
                    v[d] += sign * h;
                    t.set(k, Pose4::from_xyz_yaw(v[1], v[2], v[3], v[0])).unwrap();
                    cost_at(&t)
                };
                g_inf = g_inf.max(((bump(1.0) - bump(-1.0)) / (2.0 * h)).abs());
            }
        }
        assert!(g_inf < 1e-8, "gradient {g_inf}");
    }
}
