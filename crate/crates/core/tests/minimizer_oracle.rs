//! Full-path LM against a plain gradient-descent minimizer of the same cost,
//! written against global poses only.

use memtree::factor::{measurement_residual, Cov4, RelEdge};
use memtree::geometry::Pose4;
use memtree::graph::TreeGraph;
use memtree::optimize::{optimize_lm, select_full_path};
use memtree::solver::LmConfig;
use memtree::tree::{MemoryTree, NodeKey};
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cost(tree: &MemoryTree, edges: &[RelEdge]) -> f64 {
    edges
        .iter()
        .map(|e| {
            let r = measurement_residual(
                &e.meas,
                &tree.global_pose(e.i).unwrap(),
                &tree.global_pose(e.j).unwrap(),
            );
            let var = e.cov.diag();
            let s: f64 = (0..4).map(|k| r[k] * r[k] / var[k]).sum();
            s.ln_1p()
        })
        .sum()
}

fn set_vars(tree: &mut MemoryTree, keys: &[NodeKey], base: &[Pose4], x: &DVector<f64>) {
    for (n, (&k, p)) in keys.iter().zip(base).enumerate() {
        let d = x.fixed_rows::<4>(4 * n);
        tree.set_rel_pose(k, Pose4::new(p.yaw() + d[0], p.trans + Vector3::new(d[1], d[2], d[3])))
            .unwrap();
    }
}

/// Gradient descent with central-difference gradients, Barzilai-Borwein
/// trial steps and Armijo backtracking.
fn gradient_descent(tree: &MemoryTree, keys: &[NodeKey], edges: &[RelEdge]) -> f64 {
    let base: Vec<Pose4> = keys.iter().map(|&k| tree.rel_pose(k).unwrap()).collect();
    let mut work = tree.clone();
    let mut f = |x: &DVector<f64>| {
        set_vars(&mut work, keys, &base, x);
        cost(&work, edges)
    };
    let dim = 4 * keys.len();
    let grad = |f: &mut dyn FnMut(&DVector<f64>) -> f64, x: &DVector<f64>| {
        let h = 1e-5;
        DVector::from_fn(dim, |k, _| {
            let mut e = x.clone();
            e[k] += h;
            let fp = f(&e);
            e[k] -= 2.0 * h;
            (fp - f(&e)) / (2.0 * h)
        })
    };
    let mut x = DVector::zeros(dim);
    let mut fx = f(&x);
    let mut g = grad(&mut f, &x);
    let mut step = 1e-3;
    for _ in 0..100_000 {
        if g.amax() < 1e-7 {
            break;
        }
        let (cand, fc) = loop {
            let cand = &x - &g * step;
            let fc = f(&cand);
            if fc < fx && fc <= fx - 1e-4 * step * g.norm_squared() {
                break (cand, fc);
            }
            step *= 0.5;
            // no representable decrease left
            if step < 1e-14 {
                return fx;
            }
        };
        let gc = grad(&mut f, &cand);
        let (s, y) = (&cand - &x, &gc - &g);
        let sy = s.dot(&y);
        step = if sy > 0.0 { s.norm_squared() / sy } else { 2.0 * step };
        (x, fx, g) = (cand, fc, gc);
    }
    fx
}

#[test]
fn full_path_matches_gradient_descent_on_random_ten_node_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5 {
        let mut graph = TreeGraph::new();
        graph.tree.insert(0, Pose4::identity()).unwrap();
        let mut truth = vec![Pose4::identity()];
        for k in 1..10u64 {
            let step = Pose4::from_xyz_yaw(1.0, rng.gen_range(-0.2..0.2), 0.0, rng.gen_range(-0.6..0.6));
            truth.push(truth[k as usize - 1].compose(&step));
            let noisy = step.compose(&Pose4::from_xyz_yaw(
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                0.0,
                rng.gen_range(-0.05..0.05),
            ));
            graph
                .append_keyframe(RelEdge::new(k - 1, k, noisy, Cov4::TUNED).unwrap())
                .unwrap();
        }
        let (i, j) = (9, rng.gen_range(0..6u64));
        let lp = RelEdge::new(i, j, truth[i as usize].relative(&truth[j as usize]), Cov4::TUNED).unwrap();
        graph.push_edge(lp.clone()).unwrap();
        let sel = select_full_path(&graph.tree, &graph.edges, &lp).unwrap();
        let edges: Vec<RelEdge> = sel.edges.iter().map(|&id| graph.edges.edge(id).clone()).collect();
        let oracle = gradient_descent(&graph.tree, &sel.variables, &edges);
        let cfg = LmConfig {
            rel_cost_tol: 0.0,
            max_iterations: 500,
            ..LmConfig::default()
        };
        let res = optimize_lm(&mut graph.tree, &graph.edges, &sel, &cfg).unwrap();
        assert!((res.cost_final - cost(&graph.tree, &edges)).abs() < 1e-12);
        assert!(
            (res.cost_final - oracle).abs() < 1e-6,
            "LM {} vs gradient descent {oracle}",
            res.cost_final
        );
    }
}
