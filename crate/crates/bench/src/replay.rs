//! Incremental and batch replay, and the bad-loop robustness experiment.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use memtree::baseline::{baseline_optimize, BaselineError, GlobalState};
use memtree::dataset::{corrupt_loops, Dataset, DatasetError};
use memtree::factor::{EdgeKind, RelEdge};
use memtree::geometry::Pose4;
use memtree::graph::{GraphError, TreeGraph};
use memtree::optimize::{add_loop_with_gate, optimize_lm, select_all, SolverConfig, TreeMethod};
use memtree::solver::{OptResult, SolveError};
use memtree::tree::NodeKey;

use crate::stats::{EventRecord, ReplayStats};
use crate::Method;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("odometry chain is broken: no sequential edge reaches vertex {0}")]
    Disconnected(NodeKey),
    #[error("more than one sequential edge between {0} and {1}")]
    DuplicateSequential(NodeKey, NodeKey),
    #[error("edge references unknown vertex {0}")]
    UnknownVertex(NodeKey),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayOptions {
    /// Chi-square threshold for the loop gate; `None` disables gating.
    pub gate: Option<f64>,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayOutput {
    pub stats: ReplayStats,
    /// Final global poses sorted by key.
    pub trajectory: Vec<(NodeKey, Pose4)>,
    /// Dataset edge index of each event's loop.
    pub loop_edges: Vec<usize>,
}

/// Insertion order: after vertex `key` is appended through sequential edge
/// `seq`, the loops whose newer endpoint is `key` are processed in file order.
struct Step {
    seq: usize,
    loops: Vec<usize>,
}

struct Schedule {
    first: (NodeKey, Pose4),
    initial_loops: Vec<usize>,
    steps: Vec<Step>,
}

fn schedule(ds: &Dataset) -> Result<Option<Schedule>, BenchError> {
    let mut ids: Vec<NodeKey> = ds.vertices.iter().map(|v| v.0).collect();
    ids.sort_unstable();
    let Some(&first_id) = ids.first() else {
        return Ok(None);
    };
    let first_pose = ds
        .vertices
        .iter()
        .find(|v| v.0 == first_id)
        .map(|v| v.1)
        .unwrap_or_default();
    let known: HashSet<NodeKey> = ids.iter().copied().collect();
    let mut seq_into: HashMap<NodeKey, usize> = HashMap::new();
    let mut loops_at: BTreeMap<NodeKey, Vec<usize>> = BTreeMap::new();
    for (k, e) in ds.edges.iter().enumerate() {
        for v in [e.i, e.j] {
            if !known.contains(&v) {
                return Err(BenchError::UnknownVertex(v));
            }
        }
        match e.kind {
            EdgeKind::Sequential => {
                if seq_into.insert(e.upper(), k).is_some() {
                    return Err(BenchError::DuplicateSequential(e.lower(), e.upper()));
                }
            }
            EdgeKind::Loop => loops_at.entry(e.upper()).or_default().push(k),
        }
    }
    let mut steps = Vec::with_capacity(ids.len().saturating_sub(1));
    for w in ids.windows(2) {
        let key = w[1];
        let seq = match seq_into.get(&key) {
            Some(&s) if w[0] + 1 == key => s,
            _ => return Err(BenchError::Disconnected(key)),
        };
        steps.push(Step {
            seq,
            loops: loops_at.remove(&key).unwrap_or_default(),
        });
    }
    Ok(Some(Schedule {
        first: (first_id, first_pose),
        initial_loops: loops_at.remove(&first_id).unwrap_or_default(),
        steps,
    }))
}

struct LoopOutcome {
    result: OptResult,
    accepted: bool,
}

trait Backend {
    fn append(&mut self, edge: &RelEdge) -> Result<(), BenchError>;
    fn close_loop(&mut self, edge: &RelEdge) -> Result<LoopOutcome, BenchError>;
    fn trajectory(&self) -> Vec<(NodeKey, Pose4)>;
    fn height(&self) -> Option<u32>;
    fn len(&self) -> usize;
    fn kept_chi2(&self) -> f64;
}

struct TreeBackend {
    graph: TreeGraph,
    method: TreeMethod,
    gate: Option<f64>,
    cfg: SolverConfig,
}

impl Backend for TreeBackend {
    fn append(&mut self, edge: &RelEdge) -> Result<(), BenchError> {
        self.graph.append_keyframe(edge.clone())?;
        Ok(())
    }

    fn close_loop(&mut self, edge: &RelEdge) -> Result<LoopOutcome, BenchError> {
        let out = add_loop_with_gate(&mut self.graph, edge.clone(), self.gate, self.method, &self.cfg)?;
        Ok(LoopOutcome {
            result: out.result,
            accepted: out.accepted,
        })
    }

    fn trajectory(&self) -> Vec<(NodeKey, Pose4)> {
        self.graph.tree.global_poses()
    }

    fn height(&self) -> Option<u32> {
        Some(self.graph.tree.height())
    }

    fn len(&self) -> usize {
        self.graph.tree.len()
    }

    fn kept_chi2(&self) -> f64 {
        self.graph.total_chi2()
    }
}

struct BaselineBackend {
    state: GlobalState,
    edges: Vec<RelEdge>,
    gate: Option<f64>,
    cfg: SolverConfig,
}

impl Backend for BaselineBackend {
    fn append(&mut self, edge: &RelEdge) -> Result<(), BenchError> {
        let prev = *self.state.get(edge.lower())?;
        self.state.insert(edge.upper(), prev.compose(&edge.forward_meas()))?;
        self.edges.push(edge.clone());
        Ok(())
    }

    fn close_loop(&mut self, edge: &RelEdge) -> Result<LoopOutcome, BenchError> {
        let saved = self.gate.map(|_| self.state.clone());
        self.edges.push(edge.clone());
        let result = baseline_optimize(&mut self.state, &self.edges, &self.cfg.lm)?;
        let chi2 = edge.chi2(self.state.get(edge.i)?, self.state.get(edge.j)?);
        let accepted = self.gate.is_none_or(|g| chi2 < g);
        if !accepted {
            self.state = saved.expect("saved when gating");
            self.edges.pop();
        }
        Ok(LoopOutcome { result, accepted })
    }

    fn trajectory(&self) -> Vec<(NodeKey, Pose4)> {
        self.state.sorted()
    }

    fn height(&self) -> Option<u32> {
        None
    }

    fn len(&self) -> usize {
        self.state.len()
    }

    fn kept_chi2(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                e.chi2(
                    self.state.get(e.i).expect("vertex"),
                    self.state.get(e.j).expect("vertex"),
                )
            })
            .sum()
    }
}

fn backend(method: Method, first: (NodeKey, Pose4), opts: &ReplayOptions) -> Result<Box<dyn Backend>, BenchError> {
    Ok(match method.tree_method() {
        Some(tm) => {
            let mut graph = TreeGraph::new();
            graph.tree.insert(first.0, first.1).map_err(GraphError::from)?;
            Box::new(TreeBackend {
                graph,
                method: tm,
                gate: opts.gate,
                cfg: opts.solver.clone(),
            })
        }
        None => {
            let mut state = GlobalState::new();
            state.insert(first.0, first.1)?;
            Box::new(BaselineBackend {
                state,
                edges: Vec::new(),
                gate: opts.gate,
                cfg: opts.solver.clone(),
            })
        }
    })
}

/// Replays `ds` incrementally: vertices are inserted in id order at the pose
/// obtained by composing the sequential measurement onto the previous
/// vertex's current estimate, and every loop edge triggers one optimization
/// once both endpoints exist.
pub fn replay(ds: &Dataset, method: Method, opts: &ReplayOptions) -> Result<ReplayOutput, BenchError> {
    let Some(plan) = schedule(ds)? else {
        return Ok(ReplayOutput::default());
    };
    let mut be = backend(method, plan.first, opts)?;
    let mut out = ReplayOutput::default();
    let process = |be: &mut Box<dyn Backend>, loops: &[usize], out: &mut ReplayOutput| -> Result<(), BenchError> {
        for &l in loops {
            let edge = &ds.edges[l];
            let t = Instant::now();
            let outcome = be.close_loop(edge)?;
            let wall_s = t.elapsed().as_secs_f64();
            let r = &outcome.result;
            out.stats.events.push(EventRecord {
                event: out.stats.events.len(),
                i: edge.i,
                j: edge.j,
                method,
                wall_s,
                num_vars: r.num_variables,
                iters: r.iterations,
                cost0: r.cost_initial,
                cost1: r.cost_final,
                accepted: outcome.accepted,
            });
            out.stats.total_time_s += wall_s;
            out.loop_edges.push(l);
        }
        Ok(())
    };
    process(&mut be, &plan.initial_loops, &mut out)?;
    for step in &plan.steps {
        be.append(&ds.edges[step.seq])?;
        process(&mut be, &step.loops, &mut out)?;
    }
    out.trajectory = be.trajectory();
    out.stats.tree_height = be.height();
    out.stats.node_count = be.len();
    out.stats.final_cost = be.kept_chi2();
    Ok(out)
}

/// Wall times of the tree methods on the same loop closure.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub event: usize,
    /// `(method, wall_s, num_vars)` per tree method.
    pub timings: Vec<(Method, f64, usize)>,
}

impl ProbeRecord {
    pub fn wall_s(&self, method: Method) -> Option<f64> {
        self.timings.iter().find(|t| t.0 == method).map(|t| t.1)
    }
}

/// Replays `ds` with top-down and, before each loop event listed in `events`,
/// times one closure of that loop per tree method on a copy of the graph.
pub fn probe_tree_methods(
    ds: &Dataset,
    events: &[usize],
    opts: &ReplayOptions,
) -> Result<Vec<ProbeRecord>, BenchError> {
    let Some(plan) = schedule(ds)? else {
        return Ok(Vec::new());
    };
    let wanted: HashSet<usize> = events.iter().copied().collect();
    let mut graph = TreeGraph::new();
    graph
        .tree
        .insert(plan.first.0, plan.first.1)
        .map_err(GraphError::from)?;
    let mut out = Vec::new();
    let mut event = 0;
    let mut process = |graph: &mut TreeGraph, loops: &[usize]| -> Result<(), BenchError> {
        for &l in loops {
            let edge = &ds.edges[l];
            if wanted.contains(&event) {
                let mut timings = Vec::new();
                for m in [Method::TreeAll, Method::TreeFullPath, Method::TreeTopDown] {
                    let tm = m.tree_method().expect("tree method");
                    let mut copy = graph.clone();
                    let t = Instant::now();
                    let r = add_loop_with_gate(&mut copy, edge.clone(), None, tm, &opts.solver)?;
                    timings.push((m, t.elapsed().as_secs_f64(), r.result.num_variables));
                }
                out.push(ProbeRecord { event, timings });
            }
            add_loop_with_gate(graph, edge.clone(), opts.gate, TreeMethod::TopDown, &opts.solver)?;
            event += 1;
        }
        Ok(())
    };
    process(&mut graph, &plan.initial_loops)?;
    for step in &plan.steps {
        graph.append_keyframe(ds.edges[step.seq].clone())?;
        process(&mut graph, &step.loops)?;
    }
    Ok(out)
}

/// One-shot optimization: all vertices at their odometry poses, every loop
/// added, then a single solve over all states.
pub fn batch(ds: &Dataset, method: Method, opts: &ReplayOptions) -> Result<ReplayOutput, BenchError> {
    let Some(plan) = schedule(ds)? else {
        return Ok(ReplayOutput::default());
    };
    let loops: Vec<usize> = plan
        .initial_loops
        .iter()
        .chain(plan.steps.iter().flat_map(|s| &s.loops))
        .copied()
        .collect();
    let mut out = ReplayOutput::default();
    let (result, wall_s) = match method {
        Method::TreeAll => {
            let mut graph = TreeGraph::new();
            graph
                .tree
                .insert(plan.first.0, plan.first.1)
                .map_err(GraphError::from)?;
            for s in &plan.steps {
                graph.append_keyframe(ds.edges[s.seq].clone())?;
            }
            for &l in &loops {
                graph.push_edge(ds.edges[l].clone())?;
            }
            let t = Instant::now();
            let sel = select_all(&graph.tree, &graph.edges);
            let r = optimize_lm(&mut graph.tree, &graph.edges, &sel, &opts.solver.lm)?;
            let wall = t.elapsed().as_secs_f64();
            out.trajectory = graph.tree.global_poses();
            out.stats.tree_height = Some(graph.tree.height());
            out.stats.final_cost = graph.total_chi2();
            (r, wall)
        }
        Method::Baseline => {
            let mut be = BaselineBackend {
                state: GlobalState::new(),
                edges: Vec::new(),
                gate: None,
                cfg: opts.solver.clone(),
            };
            be.state.insert(plan.first.0, plan.first.1)?;
            for s in &plan.steps {
                be.append(&ds.edges[s.seq])?;
            }
            be.edges.extend(loops.iter().map(|&l| ds.edges[l].clone()));
            let t = Instant::now();
            let r = baseline_optimize(&mut be.state, &be.edges, &opts.solver.lm)?;
            let wall = t.elapsed().as_secs_f64();
            out.trajectory = be.trajectory();
            out.stats.final_cost = be.kept_chi2();
            (r, wall)
        }
        other => {
            return Err(BenchError::Unsupported(format!(
                "batch mode supports baseline and tree-all, not {other}"
            )))
        }
    };
    let (first, last) = (plan.first.0, out.trajectory.last().map_or(plan.first.0, |p| p.0));
    out.stats.events.push(EventRecord {
        event: 0,
        i: first,
        j: last,
        method,
        wall_s,
        num_vars: result.num_variables,
        iters: result.iterations,
        cost0: result.cost_initial,
        cost1: result.cost_final,
        accepted: true,
    });
    out.stats.total_time_s = wall_s;
    out.stats.node_count = out.trajectory.len();
    Ok(out)
}

/// Non-robust chi-square of `edges` evaluated at `trajectory`.
pub fn chi2_over<'a>(
    edges: impl IntoIterator<Item = &'a RelEdge>,
    trajectory: &[(NodeKey, Pose4)],
) -> Result<f64, BenchError> {
    let index: HashMap<NodeKey, &Pose4> = trajectory.iter().map(|(k, p)| (*k, p)).collect();
    edges.into_iter().try_fold(0.0, |acc, e| {
        let gi = index.get(&e.i).ok_or(BenchError::UnknownVertex(e.i))?;
        let gj = index.get(&e.j).ok_or(BenchError::UnknownVertex(e.j))?;
        Ok(acc + e.chi2(gi, gj))
    })
}

/// Keeps vertices with id below `n` and the edges between them.
pub fn truncate(ds: &Dataset, n: NodeKey) -> Dataset {
    Dataset {
        name: format!("{}[..{n}]", ds.name),
        vertices: ds.vertices.iter().filter(|v| v.0 < n).cloned().collect(),
        edges: ds.edges.iter().filter(|e| e.i < n && e.j < n).cloned().collect(),
        skipped_lines: ds.skipped_lines.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub corrupted: Vec<usize>,
    pub clean_loops: usize,
    pub rejected_corrupted: usize,
    pub rejected_clean: usize,
    /// Clean-edge chi-square of the gated and ungated final trajectories.
    pub gated_clean_chi2: f64,
    pub ungated_clean_chi2: f64,
    pub gated: ReplayOutput,
    pub ungated: ReplayOutput,
}

impl RobustnessReport {
    /// Fraction of corrupted loops that were rejected.
    pub fn true_positive_rate(&self) -> f64 {
        ratio(self.rejected_corrupted, self.corrupted.len())
    }

    /// Fraction of clean loops that were rejected.
    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.rejected_clean, self.clean_loops)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Corrupts `fraction` of the loops and replays with the gate on (`gamma`)
/// and off. Clean-edge cost uses the uncorrupted measurements of every edge
/// that was not corrupted.
pub fn run_robustness(
    ds: &Dataset,
    fraction: f64,
    seed: u64,
    gamma: f64,
    method: Method,
    solver: &SolverConfig,
) -> Result<RobustnessReport, BenchError> {
    let (bad, corrupted) = corrupt_loops(ds, fraction, seed)?;
    let on = ReplayOptions {
        gate: Some(gamma),
        solver: solver.clone(),
    };
    let off = ReplayOptions {
        gate: None,
        solver: solver.clone(),
    };
    let gated = replay(&bad, method, &on)?;
    let ungated = replay(&bad, method, &off)?;
    let is_bad: HashSet<usize> = corrupted.iter().copied().collect();
    let (mut rejected_corrupted, mut rejected_clean) = (0, 0);
    for (ev, &l) in gated.stats.events.iter().zip(&gated.loop_edges) {
        if !ev.accepted {
            if is_bad.contains(&l) {
                rejected_corrupted += 1;
            } else {
                rejected_clean += 1;
            }
        }
    }
    let clean = || {
        ds.edges
            .iter()
            .enumerate()
            .filter(|(k, _)| !is_bad.contains(k))
            .map(|(_, e)| e)
    };
    Ok(RobustnessReport {
        clean_loops: ds.num_loops() - corrupted.len(),
        rejected_corrupted,
        rejected_clean,
        gated_clean_chi2: chi2_over(clean(), &gated.trajectory)?,
        ungated_clean_chi2: chi2_over(clean(), &ungated.trajectory)?,
        corrupted,
        gated,
        ungated,
    })
}
