//! Levenberg-Marquardt over 4-DoF pose blocks with Cauchy reweighting.
//!
//! Problems expose a block-structured linearization: every variable is one
//! pose (yaw plus translation), so the normal equations are assembled in 4x4
//! blocks. Small systems are factored densely; larger ones go through a sparse
//! Cholesky with a fill-reducing ordering.

use std::collections::HashMap;

use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::Side;
use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use thiserror::Error;

use crate::factor::FactorError;
use crate::geometry::Pose4;
use crate::loss::{CauchyLoss, LossError};
use crate::tree::TreeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("initial cost is not finite")]
    NonFiniteInitialCost,
    #[error("linear solve failed even with maximal damping")]
    LinearSolverFailure,
    #[error("no variables to optimize")]
    EmptyVariableSet,
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub lambda_init: f64,
    /// Damping multiplier after a rejected step.
    pub lambda_up: f64,
    /// Damping multiplier after an accepted step.
    pub lambda_down: f64,
    pub lambda_max: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub rel_cost_tol: f64,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    pub cauchy_scale: f64,
    /// Systems with at most this many pose blocks are factored densely.
    pub dense_max_blocks: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            lambda_init: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.5,
            lambda_max: 1e16,
            rel_cost_tol: 1e-8,
            grad_tol: 1e-10,
            cauchy_scale: 1.0,
            dense_max_blocks: 32,
        }
    }
}

impl LmConfig {
    pub fn loss(&self) -> Result<CauchyLoss, LossError> {
        CauchyLoss::new(self.cauchy_scale)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptResult {
    /// Trial steps taken (accepted or rejected).
    pub iterations: usize,
    pub cost_initial: f64,
    pub cost_final: f64,
    pub num_variables: usize,
    pub num_edges: usize,
    pub converged: bool,
    /// Relative cost decrease of each trial step; 0 for rejected steps.
    pub step_decreases: Vec<f64>,
}

impl OptResult {
    pub fn first_step_accepted(&self) -> bool {
        self.step_decreases.first().is_some_and(|d| *d > 0.0)
    }
}

/// Block normal equations `H dx = -g` for 4x4 pose blocks.
#[derive(Debug, Clone)]
pub(crate) struct NormalEquations {
    diag: Vec<Matrix4<f64>>,
    off: HashMap<(u32, u32), Matrix4<f64>>,
    grad: DVector<f64>,
}

impl NormalEquations {
    pub fn new(blocks: usize) -> Self {
        Self {
            diag: vec![Matrix4::zeros(); blocks],
            off: HashMap::new(),
            grad: DVector::zeros(4 * blocks),
        }
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    /// Adds one residual with already whitened and reweighted Jacobian blocks.
    pub fn add(&mut self, jac: &[(usize, Matrix4<f64>)], r: &Vector4<f64>) {
        for (n, (a, ja)) in jac.iter().enumerate() {
            let jat = ja.transpose();
            let mut g = self.grad.fixed_rows_mut::<4>(4 * a);
            g += jat * r;
            self.diag[*a] += jat * ja;
            for (b, jb) in &jac[n + 1..] {
                let (lo, hi, m) = if a < b {
                    (*a, *b, jat * jb)
                } else {
                    (*b, *a, jb.transpose() * ja)
                };
                *self.off.entry((lo as u32, hi as u32)).or_insert_with(Matrix4::zeros) += m;
            }
        }
    }

    pub fn grad_inf_norm(&self) -> f64 {
        self.grad.amax()
    }

    fn damped(h: f64, lambda: f64) -> f64 {
        h + lambda * h.clamp(1e-6, 1e32)
    }

    pub fn solve(&self, lambda: f64, dense_max_blocks: usize, cache: &mut SymbolicCache) -> Option<DVector<f64>> {
        if self.blocks() <= dense_max_blocks {
            self.solve_dense(lambda)
        } else {
            self.solve_sparse(lambda, cache)
        }
    }

    fn solve_dense(&self, lambda: f64) -> Option<DVector<f64>> {
        let n = 4 * self.blocks();
        let mut h = DMatrix::zeros(n, n);
        for (a, d) in self.diag.iter().enumerate() {
            h.fixed_view_mut::<4, 4>(4 * a, 4 * a).copy_from(d);
        }
        for (&(a, b), m) in &self.off {
            let (a, b) = (a as usize, b as usize);
            h.fixed_view_mut::<4, 4>(4 * a, 4 * b).copy_from(m);
            h.fixed_view_mut::<4, 4>(4 * b, 4 * a).copy_from(&m.transpose());
        }
        for i in 0..n {
            h[(i, i)] = Self::damped(h[(i, i)], lambda);
        }
        let chol = h.cholesky()?;
        let x = chol.solve(&(-&self.grad));
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    fn solve_sparse(&self, lambda: f64, cache: &mut SymbolicCache) -> Option<DVector<f64>> {
        let blocks = self.blocks();
        let n = 4 * blocks;
        let mut keys: Vec<_> = self.off.keys().copied().collect();
        keys.sort_unstable();
        let mut first = vec![0usize; blocks + 1];
        for &(a, _) in &keys {
            first[a as usize + 1] += 1;
        }
        for a in 0..blocks {
            first[a + 1] += first[a];
        }
        // lower triangle, column major; below-diagonal block (b, a) is H_ab^T
        let nnz = 10 * blocks + 16 * keys.len();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        col_ptr.push(0usize);
        for (a, d) in self.diag.iter().enumerate() {
            let below: Vec<_> = keys[first[a]..first[a + 1]]
                .iter()
                .map(|k| (k.1 as usize, &self.off[k]))
                .collect();
            for c in 0..4 {
                for r in c..4 {
                    row_idx.push(4 * a + r);
                    vals.push(if r == c {
                        Self::damped(d[(r, c)], lambda)
                    } else {
                        d[(r, c)]
                    });
                }
                for (b, m) in &below {
                    for r in 0..4 {
                        row_idx.push(4 * b + r);
                        vals.push(m[(c, r)]);
                    }
                }
                col_ptr.push(row_idx.len());
            }
        }
        let mat = SparseColMat::new(SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx), vals);
        let shape = (self.blocks(), self.off.len());
        let symbolic = match &cache.0 {
            Some((k, sym)) if *k == shape => sym.clone(),
            _ => {
                let sym = SymbolicLlt::try_new(mat.symbolic(), Side::Lower).ok()?;
                cache.0 = Some((shape, sym.clone()));
                sym
            }
        };
        let llt = Llt::try_new_with_symbolic(symbolic, mat.as_ref(), Side::Lower).ok()?;
        let rhs = faer::Mat::<f64>::from_fn(n, 1, |i, _| -self.grad[i]);
        let x = faer::prelude::Solve::solve(&llt, &rhs);
        let out = DVector::from_fn(n, |i, _| x[(i, 0)]);
        out.iter().all(|v| v.is_finite()).then_some(out)
    }
}

/// Sparse symbolic factorization reused while the block pattern is unchanged.
/// Valid only within one problem, where the pattern is fixed.
#[derive(Debug, Default)]
pub(crate) struct SymbolicCache(Option<((usize, usize), SymbolicLlt<usize>)>);

/// A nonlinear least-squares problem over pose blocks.
pub(crate) trait BlockProblem {
    fn num_blocks(&self) -> usize;
    fn num_edges(&self) -> usize;
    /// Robustified cost at the current state.
    fn cost(&self) -> f64;
    /// Accumulates the reweighted linearization at the current state.
    fn linearize(&self, ne: &mut NormalEquations);
    fn save(&self) -> Vec<Pose4>;
    fn restore(&mut self, saved: &[Pose4]);
    /// Additive update of each block's `(yaw, x, y, z)`.
    fn apply(&mut self, delta: &DVector<f64>);
}

/// Whitens and reweights one residual. Returns the reweighted residual and the
/// scale to apply to the whitened Jacobian rows.
#[inline]
pub(crate) fn robustify(loss: &CauchyLoss, r: &Vector4<f64>, sqrt_info: &Vector4<f64>) -> (Vector4<f64>, Vector4<f64>) {
    let rw = r.component_mul(sqrt_info);
    let [_, rho1, _] = loss.evaluate(rw.norm_squared());
    let w = rho1.sqrt();
    (rw * w, sqrt_info * w)
}

#[inline]
pub(crate) fn robust_cost(loss: &CauchyLoss, r: &Vector4<f64>, sqrt_info: &Vector4<f64>) -> f64 {
    loss.rho(r.component_mul(sqrt_info).norm_squared())
}

pub(crate) fn apply_block(p: &Pose4, delta: &DVector<f64>, block: usize) -> Pose4 {
    let d = delta.fixed_rows::<4>(4 * block);
    Pose4::new(p.yaw() + d[0], p.trans + nalgebra::Vector3::new(d[1], d[2], d[3]))
}

pub(crate) fn run_lm<P: BlockProblem>(problem: &mut P, cfg: &LmConfig) -> Result<OptResult, SolveError> {
    let n = problem.num_blocks();
    if n == 0 {
        return Err(SolveError::EmptyVariableSet);
    }
    let mut cost = problem.cost();
    if !cost.is_finite() {
        return Err(SolveError::NonFiniteInitialCost);
    }
    let mut res = OptResult {
        cost_initial: cost,
        num_variables: n,
        num_edges: problem.num_edges(),
        ..Default::default()
    };
    let mut lambda = cfg.lambda_init;
    let mut ne = NormalEquations::new(n);
    let mut stale = true;
    let mut cache = SymbolicCache::default();
    while res.iterations < cfg.max_iterations {
        if stale {
            ne = NormalEquations::new(n);
            problem.linearize(&mut ne);
            stale = false;
            if ne.grad_inf_norm() < cfg.grad_tol {
                res.converged = true;
                break;
            }
        }
        let delta = loop {
            match ne.solve(lambda, cfg.dense_max_blocks, &mut cache) {
                Some(d) => break d,
                None => {
                    lambda *= cfg.lambda_up;
                    if lambda > cfg.lambda_max {
                        return Err(SolveError::LinearSolverFailure);
                    }
                }
            }
        };
        let saved = problem.save();
        problem.apply(&delta);
        let new_cost = problem.cost();
        res.iterations += 1;
        if new_cost.is_finite() && new_cost < cost {
            let rel = (cost - new_cost) / cost;
            cost = new_cost;
            res.step_decreases.push(rel);
            lambda = (lambda * cfg.lambda_down).max(1e-15);
            stale = true;
            if rel < cfg.rel_cost_tol {
                res.converged = true;
                break;
            }
        } else {
            problem.restore(&saved);
            res.step_decreases.push(0.0);
            lambda *= cfg.lambda_up;
            if lambda > cfg.lambda_max {
                // no descent direction left at any damping
                res.converged = true;
                break;
            }
        }
    }
    res.cost_final = cost;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Toy problem: each block pulled towards a target pose, plus a coupling
    /// residual between consecutive blocks.
    struct Toy {
        x: Vec<Pose4>,
        target: Vec<Pose4>,
    }

    impl BlockProblem for Toy {
        fn num_blocks(&self) -> usize {
            self.x.len()
        }
        fn num_edges(&self) -> usize {
            self.x.len()
        }
        fn cost(&self) -> f64 {
            let loss = CauchyLoss::default();
            self.x
                .iter()
                .zip(&self.target)
                .map(|(x, t)| {
                    let r = crate::factor::measurement_residual(t, &Pose4::identity(), x);
                    robust_cost(&loss, &r, &Vector4::repeat(1.0))
                })
                .sum()
        }
        fn linearize(&self, ne: &mut NormalEquations) {
            let loss = CauchyLoss::default();
            for (b, (x, t)) in self.x.iter().zip(&self.target).enumerate() {
                let r = crate::factor::measurement_residual(t, &Pose4::identity(), x);
                let (_, jj) = crate::factor::measurement_jacobians(&Pose4::identity(), x);
                let (rw, scale) = robustify(&loss, &r, &Vector4::repeat(1.0));
                let j = Matrix4::from_diagonal(&scale) * jj;
                ne.add(&[(b, j)], &rw);
            }
        }
        fn save(&self) -> Vec<Pose4> {
            self.x.clone()
        }
        fn restore(&mut self, saved: &[Pose4]) {
            self.x = saved.to_vec();
        }
        fn apply(&mut self, delta: &DVector<f64>) {
            for (b, x) in self.x.iter_mut().enumerate() {
                *x = apply_block(x, delta, b);
            }
        }
    }

    #[test]
    fn converges_to_targets() {
        let target: Vec<_> = (0..5)
            .map(|k| Pose4::from_xyz_yaw(k as f64 * 0.3, 0.2, -0.1, 0.1 * k as f64))
            .collect();
        let mut toy = Toy {
            x: vec![Pose4::identity(); 5],
            target: target.clone(),
        };
        let res = run_lm(&mut toy, &LmConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.cost_final < 1e-16, "{}", res.cost_final);
        assert!(res.cost_final <= res.cost_initial);
        for (x, t) in toy.x.iter().zip(&target) {
            assert!(x.max_abs_diff(t) < 1e-8);
        }
    }

    #[test]
    fn already_optimal_takes_no_step() {
        let target = vec![Pose4::from_xyz_yaw(1.0, 2.0, 3.0, 0.5)];
        let mut toy = Toy {
            x: target.clone(),
            target,
        };
        let res = run_lm(&mut toy, &LmConfig::default()).unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.converged);
    }

    #[test]
    fn dense_and_sparse_solves_agree() {
        let mut ne = NormalEquations::new(6);
        let mut seed = 1u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for a in 0..6 {
            for b in [a, (a + 1) % 6, (a + 3) % 6] {
                let ja = Matrix4::from_fn(|_, _| next());
                let jb = Matrix4::from_fn(|_, _| next());
                let r = Vector4::from_fn(|_, _| next());
                if a == b {
                    ne.add(&[(a, ja)], &r);
                } else {
                    ne.add(&[(a, ja), (b, jb)], &r);
                }
            }
        }
        let xd = ne.solve_dense(1e-3).unwrap();
        let xs = ne.solve_sparse(1e-3, &mut SymbolicCache::default()).unwrap();
        assert!((&xd - &xs).amax() < 1e-9 * xd.amax().max(1.0));
    }
}
