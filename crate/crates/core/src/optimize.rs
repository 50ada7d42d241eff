//! Loop-closure optimization over the memory tree.
//!
//! Only nodes chosen as variables have their relative poses updated. Because a
//! node's relative pose moves its whole subtree rigidly, an edge is affected by
//! a variable `v` exactly when one endpoint lies in `v`'s subtree and the other
//! does not; since a BST subtree covers a contiguous key range, this is an O(1)
//! range test per edge and variable.

use std::collections::HashMap;

use nalgebra::{DVector, Matrix4, Vector4};

use crate::factor::{chain_block, chain_pose, measurement_residual, ChainLink, RelEdge};
use crate::geometry::Pose4;
use crate::graph::{EdgeId, EdgeSet, GraphError, TreeGraph};
use crate::loss::CauchyLoss;
use crate::solver::{
    apply_block, robust_cost, robustify, run_lm, BlockProblem, LmConfig, NormalEquations, OptResult, SolveError,
};
use crate::tree::{MemoryTree, NodeId, NodeKey, PathSnapshot};

/// 0.95 quantile of the chi-square distribution with 4 degrees of freedom.
pub const CHI2_4DOF_95: f64 = 9.4877;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TreeMethod {
    AllStates,
    FullPath,
    TopDown,
}

/// When top-down optimization stops descending the loop path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopDownRule {
    /// Stop at the first frontier whose solve accepts its first step and then
    /// has converged: any second step lowers the cost by less than `rel_tol`
    /// (relative), or is rejected.
    OneIteration { rel_tol: f64 },
    /// Always descend until the whole path is variable.
    ExhaustPath,
}

impl Default for TopDownRule {
    fn default() -> Self {
        TopDownRule::OneIteration { rel_tol: 1e-6 }
    }
}

impl TopDownRule {
    pub fn converged_in_one(&self, res: &OptResult) -> bool {
        match *self {
            TopDownRule::ExhaustPath => false,
            TopDownRule::OneIteration { rel_tol } => {
                if res.iterations == 0 {
                    return res.converged;
                }
                if !res.first_step_accepted() {
                    return false;
                }
                match res.step_decreases.get(1) {
                    Some(d) => *d < rel_tol,
                    None => res.converged,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverConfig {
    pub lm: LmConfig,
    pub top_down: TopDownRule,
}

/// Variables of one solve plus the edges they affect.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VariableSelection {
    pub variables: Vec<NodeKey>,
    pub edges: Vec<EdgeId>,
}

fn subtree_ranges(tree: &MemoryTree, vars: &[NodeId]) -> Vec<(NodeKey, NodeKey)> {
    vars.iter().map(|&v| tree.subtree_range(v)).collect()
}

/// True when the edge's evaluation chain passes through a node whose subtree
/// spans `range`.
#[inline]
fn crosses(range: (NodeKey, NodeKey), e: &RelEdge) -> bool {
    let inside = |k: NodeKey| k >= range.0 && k <= range.1;
    inside(e.i) != inside(e.j)
}

/// Builds the selection for an explicit variable set. The root is dropped if
/// present.
pub fn select_variables(tree: &MemoryTree, edges: &EdgeSet, vars: &[NodeId]) -> VariableSelection {
    let root = tree.root();
    let mut vars: Vec<NodeId> = vars.iter().copied().filter(|v| Some(*v) != root).collect();
    vars.sort_unstable_by_key(|&v| tree.key_of(v));
    vars.dedup();
    let ranges = subtree_ranges(tree, &vars);
    let mut included = Vec::new();
    for &(lo, hi) in &ranges {
        included.extend(edges.sequential_into(lo));
        included.extend(edges.sequential_from(hi));
    }
    for &l in edges.loops() {
        let e = edges.edge(l);
        if ranges.iter().any(|&r| crosses(r, e)) {
            included.push(l);
        }
    }
    included.sort_unstable();
    included.dedup();
    VariableSelection {
        variables: vars.iter().map(|&v| tree.key_of(v)).collect(),
        edges: included,
    }
}

/// Every node except the root, with every edge.
pub fn select_all(tree: &MemoryTree, edges: &EdgeSet) -> VariableSelection {
    let root = tree.root_key();
    VariableSelection {
        variables: tree.keys().into_iter().filter(|k| Some(*k) != root).collect(),
        edges: edges.iter().map(|(id, _)| id).collect(),
    }
}

/// The loop's tree path minus the root.
pub fn select_full_path(
    tree: &MemoryTree,
    edges: &EdgeSet,
    loop_edge: &RelEdge,
) -> Result<VariableSelection, GraphError> {
    let (a, b) = (tree.id(loop_edge.i)?, tree.id(loop_edge.j)?);
    Ok(select_variables(tree, edges, &tree.path_of(a, b)))
}

/// Variable sets of the successive top-down frontiers: the LCA (unless it is
/// the root) and its on-path children first, then one more node down each
/// side of the path per frontier until the path is exhausted.
pub fn top_down_frontiers(tree: &MemoryTree, i: NodeKey, j: NodeKey) -> Result<Vec<Vec<NodeId>>, GraphError> {
    let (a, b) = (tree.id(i)?, tree.id(j)?);
    let l = tree.lca_of(a, b);
    let mut side_a = tree.chain_to(a, l);
    let mut side_b = tree.chain_to(b, l);
    side_a.reverse();
    side_b.reverse();
    let head: Vec<NodeId> = if Some(l) == tree.root() { vec![] } else { vec![l] };
    let depth = side_a.len().max(side_b.len()).max(1);
    let mut out = Vec::with_capacity(depth);
    for level in 1..=depth {
        let mut vars = head.clone();
        vars.extend(&side_a[..level.min(side_a.len())]);
        vars.extend(&side_b[..level.min(side_b.len())]);
        out.push(vars);
    }
    Ok(out)
}

pub fn select_top_down<'a>(
    tree: &'a MemoryTree,
    edges: &'a EdgeSet,
    loop_edge: &RelEdge,
) -> Result<impl Iterator<Item = VariableSelection> + 'a, GraphError> {
    let frontiers = top_down_frontiers(tree, loop_edge.i, loop_edge.j)?;
    Ok(frontiers
        .into_iter()
        .map(move |vars| select_variables(tree, edges, &vars)))
}

struct PreparedEdge<'e> {
    edge: &'e RelEdge,
    sqrt_info: Vector4<f64>,
    chain_i: Vec<NodeId>,
    chain_j: Vec<NodeId>,
}

struct TreeProblem<'t, 'e> {
    tree: &'t mut MemoryTree,
    vars: Vec<NodeId>,
    block_of: HashMap<NodeId, usize>,
    edges: Vec<PreparedEdge<'e>>,
    loss: CauchyLoss,
}

impl<'t, 'e> TreeProblem<'t, 'e> {
    fn new(
        tree: &'t mut MemoryTree,
        edges: &'e EdgeSet,
        sel: &VariableSelection,
        loss: CauchyLoss,
    ) -> Result<Self, SolveError> {
        let vars = sel
            .variables
            .iter()
            .map(|&k| tree.id(k))
            .collect::<Result<Vec<_>, _>>()?;
        let block_of = vars.iter().enumerate().map(|(b, &v)| (v, b)).collect();
        let prepared = sel
            .edges
            .iter()
            .map(|&id| {
                let edge = edges.edge(id);
                let (a, b) = (tree.id(edge.i)?, tree.id(edge.j)?);
                let l = tree.lca_of(a, b);
                Ok(PreparedEdge {
                    edge,
                    sqrt_info: edge.cov.sqrt_info(),
                    chain_i: tree.chain_to(a, l),
                    chain_j: tree.chain_to(b, l),
                })
            })
            .collect::<Result<Vec<_>, SolveError>>()?;
        Ok(Self {
            tree,
            vars,
            block_of,
            edges: prepared,
            loss,
        })
    }

    fn residual(&self, pe: &PreparedEdge) -> Vector4<f64> {
        let gi = chain_pose(self.tree, &pe.chain_i, None);
        let gj = chain_pose(self.tree, &pe.chain_j, None);
        measurement_residual(&pe.edge.meas, &gi, &gj)
    }
}

impl BlockProblem for TreeProblem<'_, '_> {
    fn num_blocks(&self) -> usize {
        self.vars.len()
    }

    fn num_edges(&self) -> usize {
        self.edges.len()
    }

    fn cost(&self) -> f64 {
        self.edges
            .iter()
            .map(|pe| robust_cost(&self.loss, &self.residual(pe), &pe.sqrt_info))
            .sum()
    }

    fn linearize(&self, ne: &mut NormalEquations) {
        let mut links_i: Vec<ChainLink> = Vec::new();
        let mut links_j: Vec<ChainLink> = Vec::new();
        let mut blocks: Vec<(usize, Matrix4<f64>)> = Vec::new();
        for pe in &self.edges {
            links_i.clear();
            links_j.clear();
            blocks.clear();
            let gi = chain_pose(self.tree, &pe.chain_i, Some(&mut links_i));
            let gj = chain_pose(self.tree, &pe.chain_j, Some(&mut links_j));
            let r = measurement_residual(&pe.edge.meas, &gi, &gj);
            let (rw, scale) = robustify(&self.loss, &r, &pe.sqrt_info);
            let rows = Matrix4::from_diagonal(&scale);
            for (links, side_i) in [(&links_i, true), (&links_j, false)] {
                for link in links {
                    if let Some(&b) = self.block_of.get(&link.id) {
                        blocks.push((b, rows * chain_block(link, &gi, &gj, side_i)));
                    }
                }
            }
            if !blocks.is_empty() {
                ne.add(&blocks, &rw);
            }
        }
    }

    fn save(&self) -> Vec<Pose4> {
        self.vars.iter().map(|&v| *self.tree.rel_of(v)).collect()
    }

    fn restore(&mut self, saved: &[Pose4]) {
        for (&v, p) in self.vars.iter().zip(saved) {
            self.tree.set_rel_of(v, *p);
        }
    }

    fn apply(&mut self, delta: &DVector<f64>) {
        for (b, &v) in self.vars.iter().enumerate() {
            let p = apply_block(self.tree.rel_of(v), delta, b);
            self.tree.set_rel_of(v, p);
        }
    }
}

/// Minimizes the robustified cost of the selected edges over the selected
/// nodes' relative poses, writing the result back into the tree.
pub fn optimize_lm(
    tree: &mut MemoryTree,
    edges: &EdgeSet,
    sel: &VariableSelection,
    cfg: &LmConfig,
) -> Result<OptResult, SolveError> {
    let mut problem = TreeProblem::new(tree, edges, sel, cfg.loss()?)?;
    run_lm(&mut problem, cfg)
}

/// Robustified cost of the selected edges at the current tree state.
pub fn selection_cost(
    tree: &MemoryTree,
    edges: &EdgeSet,
    sel: &VariableSelection,
    loss: CauchyLoss,
) -> Result<f64, SolveError> {
    let mut t = tree.clone();
    let problem = TreeProblem::new(&mut t, edges, sel, loss)?;
    Ok(problem.cost())
}

/// Top-down optimization for the loop between `i` and `j`. Frontier costs are
/// chained so that `cost_initial`/`cost_final` refer to the last frontier's
/// edge set, which contains every earlier frontier's edges.
pub fn optimize_top_down(
    tree: &mut MemoryTree,
    edges: &EdgeSet,
    i: NodeKey,
    j: NodeKey,
    cfg: &SolverConfig,
) -> Result<OptResult, SolveError> {
    top_down_until(tree, edges, i, j, cfg, |_| true)
}

/// Top-down descent that also keeps descending while `settled` is false for
/// the state reached by the current frontier.
fn top_down_until(
    tree: &mut MemoryTree,
    edges: &EdgeSet,
    i: NodeKey,
    j: NodeKey,
    cfg: &SolverConfig,
    settled: impl Fn(&MemoryTree) -> bool,
) -> Result<OptResult, SolveError> {
    let frontiers = top_down_frontiers(tree, i, j).map_err(|e| match e {
        GraphError::Tree(t) => SolveError::Tree(t),
        other => panic!("unexpected selection error: {other}"),
    })?;
    let mut total = OptResult::default();
    let mut prev_final = None;
    let last = frontiers.len() - 1;
    for (n, vars) in frontiers.iter().enumerate() {
        let sel = select_variables(tree, edges, vars);
        if sel.variables.is_empty() {
            continue;
        }
        let res = optimize_lm(tree, edges, &sel, &cfg.lm)?;
        total.cost_initial += match prev_final {
            None => res.cost_initial,
            Some(f) => res.cost_initial - f,
        };
        prev_final = Some(res.cost_final);
        total.cost_final = res.cost_final;
        total.iterations += res.iterations;
        total.num_variables = res.num_variables;
        total.num_edges = res.num_edges;
        total.converged = res.converged;
        total.step_decreases.extend(&res.step_decreases);
        log::debug!(
            "top-down ({i},{j}) frontier {n}/{last}: vars={} iters={} steps={:?}",
            res.num_variables,
            res.iterations,
            res.step_decreases
        );
        if n == last || (cfg.top_down.converged_in_one(&res) && settled(tree)) {
            break;
        }
    }
    if prev_final.is_none() {
        return Err(SolveError::EmptyVariableSet);
    }
    Ok(total)
}

/// Optimizes for the given loop with the chosen method; the loop must already
/// be part of `edges`.
pub fn optimize_loop(
    tree: &mut MemoryTree,
    edges: &EdgeSet,
    loop_edge: &RelEdge,
    method: TreeMethod,
    cfg: &SolverConfig,
) -> Result<OptResult, SolveError> {
    match method {
        TreeMethod::AllStates => optimize_lm(tree, edges, &select_all(tree, edges), &cfg.lm),
        TreeMethod::FullPath => {
            let sel = select_full_path(tree, edges, loop_edge).map_err(graph_to_solve)?;
            optimize_lm(tree, edges, &sel, &cfg.lm)
        }
        TreeMethod::TopDown => optimize_top_down(tree, edges, loop_edge.i, loop_edge.j, cfg),
    }
}

fn graph_to_solve(e: GraphError) -> SolveError {
    match e {
        GraphError::Tree(t) => SolveError::Tree(t),
        GraphError::Factor(f) => SolveError::Factor(f),
        GraphError::MissingNode(k) => SolveError::Tree(crate::tree::TreeError::MissingKey(k)),
        GraphError::DuplicateSequential(..) => unreachable!("selection never inserts edges"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub accepted: bool,
    /// Squared Mahalanobis norm of the new loop's residual after optimizing.
    pub chi2: f64,
    pub result: OptResult,
    /// Number of relative poses held for rollback.
    pub snapshot_len: usize,
    /// Id of the loop in the edge set when accepted.
    pub edge_id: Option<EdgeId>,
}

fn loop_chi2(tree: &MemoryTree, edge: &RelEdge) -> Result<f64, SolveError> {
    let l = tree.lca(edge.i, edge.j)?;
    let r = crate::factor::edge_residual(tree, edge, l)?;
    Ok(edge.cov.mahalanobis_sq(&r))
}

/// Adds a loop closure, optimizes with `method`, and keeps the result only if
/// the loop's post-optimization chi-square statistic is below `gamma`.
/// Rejection restores the saved relative poses and discards the loop. With
/// `gamma = None` every loop is kept.
pub fn add_loop_with_gate(
    graph: &mut TreeGraph,
    loop_edge: RelEdge,
    gamma: Option<f64>,
    method: TreeMethod,
    cfg: &SolverConfig,
) -> Result<GateOutcome, SolveError> {
    let tree = &mut graph.tree;
    let snapshot: PathSnapshot = match method {
        TreeMethod::AllStates => tree.snapshot_all(),
        _ => tree.snapshot_path(loop_edge.i, loop_edge.j)?,
    };
    let id = graph.edges.push(loop_edge).map_err(graph_to_solve)?;
    let edge = graph.edges.edge(id).clone();
    let solved = match (method, gamma) {
        // a loop is only rejected after the whole path had a chance to absorb it
        (TreeMethod::TopDown, Some(g)) => top_down_until(tree, &graph.edges, edge.i, edge.j, cfg, |t| {
            loop_chi2(t, &edge).is_ok_and(|c| c < g)
        }),
        _ => optimize_loop(tree, &graph.edges, &edge, method, cfg),
    };
    let result = match solved {
        Ok(r) => r,
        Err(e) => {
            tree.restore_path(&snapshot)?;
            graph.edges.remove(id);
            return Err(e);
        }
    };
    let chi2 = loop_chi2(tree, &edge)?;
    let accepted = gamma.is_none_or(|g| chi2 < g);
    if !accepted {
        tree.restore_path(&snapshot)?;
        graph.edges.remove(id);
    }
    Ok(GateOutcome {
        accepted,
        chi2,
        result,
        snapshot_len: snapshot.len(),
        edge_id: accepted.then_some(id),
    })
}
