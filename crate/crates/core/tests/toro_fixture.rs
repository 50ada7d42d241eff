//! `w100.graph`: a 100-pose Manhattan-world graph in TORO format, as shipped
//! with the GTSAM examples.

use std::path::Path;

use memtree::dataset::{classify_edges, load_g2o, parse_g2o_str, write_g2o, SigmaMode};
use memtree::factor::Cov4;
use memtree::graph::TreeGraph;
use memtree::optimize::{optimize_lm, select_all};
use memtree::solver::LmConfig;

fn fixture() -> memtree::dataset::Dataset {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/w100.graph");
    load_g2o(&path, SigmaMode::default()).unwrap()
}

#[test]
fn parses_vertices_edges_and_skips_equiv() {
    let ds = fixture();
    assert_eq!(ds.name, "w100");
    assert_eq!(ds.vertices.len(), 100);
    assert_eq!(ds.edges.len(), 300);
    let (seq, loops) = classify_edges(&ds);
    assert_eq!(seq.len(), 99);
    assert_eq!(loops.len(), 201);
    assert_eq!(ds.skipped_lines.len(), 40);
    assert!(ds.edges.iter().all(|e| e.cov == Cov4::TUNED));
}

#[test]
fn dataset_sigma_mode_reads_the_information_matrix() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/w100.graph");
    let ds = load_g2o(&path, SigmaMode::Dataset { z_var: 0.04 }).unwrap();
    let [yaw, x, y, z] = ds.edges[0].cov.diag();
    // the file stores unit information on every axis
    assert!((yaw - 1.0).abs() < 1e-12 && (x - 1.0).abs() < 1e-12 && (y - 1.0).abs() < 1e-12);
    assert_eq!(z, 0.04);
}

#[test]
fn g2o_export_round_trips() {
    let ds = fixture();
    let back = parse_g2o_str(&write_g2o(&ds), "w100", SigmaMode::default()).unwrap();
    assert_eq!(back.vertices.len(), ds.vertices.len());
    assert_eq!(back.edges.len(), ds.edges.len());
    for (a, b) in ds.edges.iter().zip(&back.edges) {
        assert_eq!((a.i, a.j), (b.i, b.j));
        assert!(a.meas.max_abs_diff(&b.meas) < 1e-9);
    }
}

#[test]
fn all_states_optimization_lowers_the_chi2() {
    let ds = fixture();
    let mut graph = TreeGraph::new();
    graph.tree.insert(0, ds.vertices[0].1).unwrap();
    let (seq, loops) = classify_edges(&ds);
    for k in seq {
        graph.append_keyframe(ds.edges[k].clone()).unwrap();
    }
    for k in loops {
        graph.push_edge(ds.edges[k].clone()).unwrap();
    }
    let before = graph.total_chi2();
    let sel = select_all(&graph.tree, &graph.edges);
    let res = optimize_lm(&mut graph.tree, &graph.edges, &sel, &LmConfig::default()).unwrap();
    assert!(res.cost_final < res.cost_initial);
    assert!(
        graph.total_chi2() < 0.1 * before,
        "{} -> {}",
        before,
        graph.total_chi2()
    );
    graph.tree.validate().unwrap();
}
