//! 2D pose-graph files (g2o and TORO text formats) lifted to 4-DoF, loop
//! corruption for robustness runs, and trajectory CSV export.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use log::warn;
use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::factor::{Cov4, EdgeKind, FactorError, RelEdge};
use crate::geometry::Pose4;
use crate::tree::NodeKey;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: edge references missing vertex {id}")]
    MissingVertex { line: usize, id: NodeKey },
    #[error("line {line}: duplicate vertex {id}")]
    DuplicateVertex { line: usize, id: NodeKey },
    #[error("vertex {0} cannot be reached by dead-reckoning from the first vertex")]
    Unreachable(NodeKey),
    #[error("corruption fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where edge covariances come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// The same diagonal covariance for every edge.
    Tuned(Cov4),
    /// Inverse of the information diagonal from the file; `z_var` fills the
    /// unobserved z slot.
    Dataset { z_var: f64 },
}

impl Default for SigmaMode {
    fn default() -> Self {
        SigmaMode::Tuned(Cov4::TUNED)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub name: String,
    /// Initial guesses in id order.
    pub vertices: Vec<(NodeKey, Pose4)>,
    pub edges: Vec<RelEdge>,
    /// Line numbers of records that were skipped.
    pub skipped_lines: Vec<usize>,
}

impl Dataset {
    pub fn num_loops(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Loop).count()
    }
}

struct EdgeRecord<'a> {
    fields: &'a [&'a str],
    /// Positions of (xx, xy, yy, tt, xt, yt) among the information entries.
    info_slots: [usize; 6],
}

fn num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, DatasetError> {
    tok.parse().map_err(|_| DatasetError::Parse {
        line,
        msg: format!("invalid {what} {tok:?}"),
    })
}

fn finite(v: f64, line: usize, what: &str) -> Result<f64, DatasetError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DatasetError::Parse {
            line,
            msg: format!("non-finite {what}"),
        })
    }
}

fn expect_fields(toks: &[&str], n: usize, line: usize) -> Result<(), DatasetError> {
    if toks.len() < n {
        return Err(DatasetError::Parse {
            line,
            msg: format!("{} expects {} fields, found {}", toks[0], n - 1, toks.len() - 1),
        });
    }
    Ok(())
}

fn edge_from_record(rec: &EdgeRecord, line: usize, sigma: SigmaMode) -> Result<RelEdge, DatasetError> {
    let f = rec.fields;
    let i: NodeKey = num(f[1], line, "vertex id")?;
    let j: NodeKey = num(f[2], line, "vertex id")?;
    let mut v = [0.0; 9];
    for (k, tok) in f[3..12].iter().enumerate() {
        v[k] = finite(num(tok, line, "number")?, line, "number")?;
    }
    let meas = Pose4::new(v[2], Vector3::new(v[0], v[1], 0.0));
    let info = &v[3..];
    let cov = match sigma {
        SigmaMode::Tuned(c) => c,
        SigmaMode::Dataset { z_var } => {
            let [xx, _, yy, tt, _, _] = rec.info_slots.map(|s| info[s]);
            Cov4::new(1.0 / tt, 1.0 / xx, 1.0 / yy, z_var).map_err(|e| DatasetError::Parse {
                line,
                msg: e.to_string(),
            })?
        }
    };
    RelEdge::new(i, j, meas, cov).map_err(|e: FactorError| DatasetError::Parse {
        line,
        msg: e.to_string(),
    })
}

/// Parses `VERTEX_SE2`/`EDGE_SE2` (g2o) and `VERTEX2`/`EDGE2` (TORO) records.
/// Unknown record types are skipped with a warning. If the file has no vertex
/// records, vertices are initialized by dead-reckoning along the sequential
/// edges from the lowest id.
pub fn parse_g2o_2d<R: BufRead>(reader: R, name: &str, sigma: SigmaMode) -> Result<Dataset, DatasetError> {
    // g2o: I11 I12 I13 I22 I23 I33 ; TORO: I11 I12 I22 I33 I13 I23
    const G2O_SLOTS: [usize; 6] = [0, 1, 3, 5, 2, 4];
    const TORO_SLOTS: [usize; 6] = [0, 1, 2, 3, 4, 5];
    let mut ds = Dataset {
        name: name.to_owned(),
        ..Default::default()
    };
    let mut vertex_line: HashMap<NodeKey, usize> = HashMap::new();
    let mut pending: Vec<(usize, RelEdge)> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let Some(&tag) = toks.first() else { continue };
        if tag.starts_with('#') {
            continue;
        }
        match tag {
            "VERTEX_SE2" | "VERTEX2" => {
                expect_fields(&toks, 5, line_no)?;
                let id: NodeKey = num(toks[1], line_no, "vertex id")?;
                let mut v = [0.0; 3];
                for (k, tok) in toks[2..5].iter().enumerate() {
                    v[k] = finite(num(tok, line_no, "number")?, line_no, "number")?;
                }
                if vertex_line.insert(id, line_no).is_some() {
                    return Err(DatasetError::DuplicateVertex { line: line_no, id });
                }
                ds.vertices.push((id, Pose4::from_xyz_yaw(v[0], v[1], 0.0, v[2])));
            }
            "EDGE_SE2" | "EDGE2" => {
                expect_fields(&toks, 12, line_no)?;
                let rec = EdgeRecord {
                    fields: &toks,
                    info_slots: if tag == "EDGE2" { TORO_SLOTS } else { G2O_SLOTS },
                };
                pending.push((line_no, edge_from_record(&rec, line_no, sigma)?));
            }
            _ => {
                warn!("{name}: line {line_no}: skipping unsupported record {tag}");
                ds.skipped_lines.push(line_no);
            }
        }
    }
    if ds.vertices.is_empty() && !pending.is_empty() {
        ds.vertices = dead_reckon(pending.iter().map(|(_, e)| e))?;
    } else {
        for (line, e) in &pending {
            for id in [e.i, e.j] {
                if !vertex_line.contains_key(&id) {
                    return Err(DatasetError::MissingVertex { line: *line, id });
                }
            }
        }
    }
    ds.vertices.sort_unstable_by_key(|v| v.0);
    ds.edges = pending.into_iter().map(|(_, e)| e).collect();
    Ok(ds)
}

pub fn parse_g2o_str(text: &str, name: &str, sigma: SigmaMode) -> Result<Dataset, DatasetError> {
    parse_g2o_2d(text.as_bytes(), name, sigma)
}

pub fn load_g2o(path: &std::path::Path, sigma: SigmaMode) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_g2o_2d(std::io::BufReader::new(file), &name, sigma)
}

/// Global poses obtained by composing sequential measurements outward from
/// the lowest id, which is placed at the origin.
pub fn dead_reckon<'a>(edges: impl IntoIterator<Item = &'a RelEdge>) -> Result<Vec<(NodeKey, Pose4)>, DatasetError> {
    let mut next: HashMap<NodeKey, Pose4> = HashMap::new();
    let mut ids: HashSet<NodeKey> = HashSet::new();
    for e in edges {
        ids.insert(e.i);
        ids.insert(e.j);
        if e.kind == EdgeKind::Sequential {
            next.insert(e.lower(), e.forward_meas());
        }
    }
    let mut sorted: Vec<NodeKey> = ids.into_iter().collect();
    sorted.sort_unstable();
    let Some(&first) = sorted.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(sorted.len());
    let mut pose = Pose4::identity();
    out.push((first, pose));
    for w in sorted.windows(2) {
        let (prev, k) = (w[0], w[1]);
        match next.get(&prev) {
            Some(step) if k == prev + 1 => pose = pose.compose(step),
            _ => return Err(DatasetError::Unreachable(k)),
        }
        out.push((k, pose));
    }
    Ok(out)
}

/// Indices of the sequential and loop edges.
pub fn classify_edges(ds: &Dataset) -> (Vec<usize>, Vec<usize>) {
    (0..ds.edges.len()).partition(|&k| EdgeKind::classify(ds.edges[k].i, ds.edges[k].j) == EdgeKind::Sequential)
}

/// Adds large noise to a random `floor(fraction * loops)` subset of loop
/// edges: yaw gets N(0, 1) rad (wrapped), x and y get N(0, s^2) with
/// s ~ U(1, 50) drawn per edge. Returns the new dataset and the indices of
/// the corrupted edges, sorted.
pub fn corrupt_loops(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Vec<usize>), DatasetError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    let (_, loops) = classify_edges(ds);
    let count = (fraction * loops.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, loops.len(), count)
        .into_iter()
        .map(|k| loops[k])
        .collect();
    chosen.sort_unstable();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let spread = Uniform::new_inclusive(1.0, 50.0);
    let mut out = ds.clone();
    for &k in &chosen {
        let e = &mut out.edges[k];
        let s: f64 = spread.sample(&mut rng);
        let yaw = e.meas.yaw() + unit.sample(&mut rng);
        let dx = s * unit.sample(&mut rng);
        let dy = s * unit.sample(&mut rng);
        e.meas = Pose4::new(yaw, e.meas.trans + Vector3::new(dx, dy, 0.0));
    }
    Ok((out, chosen))
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros dropped.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_owned();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_owned()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".to_owned()
    } else {
        t.to_owned()
    }
}

pub const TRAJECTORY_HEADER: &str = "id,x,y,z,yaw";

/// Trajectory CSV with header `id,x,y,z,yaw`, one row per pose in key order.
pub fn export_trajectory<'a>(poses: impl IntoIterator<Item = (NodeKey, &'a Pose4)>) -> String {
    let mut rows: Vec<(NodeKey, &Pose4)> = poses.into_iter().collect();
    rows.sort_unstable_by_key(|r| r.0);
    let mut out = String::with_capacity(48 * (rows.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (k, p) in rows {
        let t = &p.trans;
        let _ = writeln!(
            out,
            "{k},{},{},{},{}",
            format_sig9(t.x),
            format_sig9(t.y),
            format_sig9(t.z),
            format_sig9(p.yaw())
        );
    }
    out
}

pub fn parse_trajectory(text: &str) -> Result<Vec<(NodeKey, Pose4)>, DatasetError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => {
            return Err(DatasetError::Parse {
                line: 1,
                msg: format!("expected header {TRAJECTORY_HEADER:?}"),
            })
        }
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(DatasetError::Parse {
                line: line_no,
                msg: format!("expected 5 columns, found {}", f.len()),
            });
        }
        let id = num(f[0].trim(), line_no, "id")?;
        let mut v = [0.0; 4];
        for (k, tok) in f[1..].iter().enumerate() {
            v[k] = finite(num(tok.trim(), line_no, "number")?, line_no, "number")?;
        }
        out.push((id, Pose4::from_xyz_yaw(v[0], v[1], v[2], v[3])));
    }
    Ok(out)
}

/// Writes a dataset in g2o 2D format. Covariances become diagonal
/// information entries; the z slot is dropped.
pub fn write_g2o(ds: &Dataset) -> String {
    let mut out = String::new();
    for (k, p) in &ds.vertices {
        let _ = writeln!(out, "VERTEX_SE2 {k} {} {} {}", p.trans.x, p.trans.y, p.yaw());
    }
    for e in &ds.edges {
        let [t, x, y, _] = e.cov.diag();
        let m = &e.meas;
        let _ = writeln!(
            out,
            "EDGE_SE2 {} {} {} {} {} {} 0 0 {} 0 {}",
            e.i,
            e.j,
            m.trans.x,
            m.trans.y,
            m.yaw(),
            1.0 / x,
            1.0 / y,
            1.0 / t
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    const TINY: &str = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0 1\n";

    #[test]
    fn empty_file() {
        let ds = parse_g2o_str("", "e", SigmaMode::default()).unwrap();
        assert!(ds.vertices.is_empty() && ds.edges.is_empty());
    }

    #[test]
    fn tiny_file() {
        let ds = parse_g2o_str(TINY, "t", SigmaMode::default()).unwrap();
        assert_eq!(ds.vertices.len(), 2);
        assert_eq!(ds.edges.len(), 1);
        let e = &ds.edges[0];
        assert_eq!(e.kind, EdgeKind::Sequential);
        assert_eq!(e.meas, Pose4::from_xyz_yaw(1.0, 0.0, 0.0, 0.0));
        assert_eq!(e.cov, Cov4::TUNED);
    }

    #[test]
    fn loop_line_and_classification() {
        let mut text = String::new();
        for k in 0..11 {
            let _ = writeln!(text, "VERTEX_SE2 {k} {k} 0 0");
        }
        text.push_str("EDGE_SE2 10 2 1 0 0 1 0 0 1 0 1\nEDGE_SE2 6 5 1 0 0 1 0 0 1 0 1\n");
        let ds = parse_g2o_str(&text, "l", SigmaMode::default()).unwrap();
        assert_eq!(ds.edges[0].kind, EdgeKind::Loop);
        assert_eq!(ds.edges[1].kind, EdgeKind::Sequential);
        assert_eq!(classify_edges(&ds), (vec![1], vec![0]));
        assert_eq!(EdgeKind::classify(5, 6), EdgeKind::Sequential);
        assert_eq!(EdgeKind::classify(100, 3), EdgeKind::Loop);
    }

    #[test]
    fn dataset_information_mode() {
        let text = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nEDGE_SE2 0 1 1 0 0 4 0.5 0.1 25 0.2 100\n";
        let ds = parse_g2o_str(text, "d", SigmaMode::Dataset { z_var: 0.04 }).unwrap();
        assert_eq!(ds.edges[0].cov.diag(), [0.01, 0.25, 0.04, 0.04]);
        let toro = "EDGE2 0 1 1 0 0 4 0.5 25 100 0.1 0.2\n";
        let ds = parse_g2o_str(toro, "t", SigmaMode::Dataset { z_var: 0.04 }).unwrap();
        assert_eq!(ds.edges[0].cov.diag(), [0.01, 0.25, 0.04, 0.04]);
    }

    #[test]
    fn malformed_input_reports_line() {
        let bad = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 x 0\n";
        match parse_g2o_str(bad, "b", SigmaMode::default()) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let missing = "VERTEX_SE2 0 0 0 0\nEDGE_SE2 0 4 1 0 0 1 0 0 1 0 1\n";
        assert!(matches!(
            parse_g2o_str(missing, "m", SigmaMode::default()),
            Err(DatasetError::MissingVertex { line: 2, id: 4 })
        ));
        let short = "EDGE_SE2 0 1 1 0 0\n";
        assert!(matches!(
            parse_g2o_str(short, "s", SigmaMode::default()),
            Err(DatasetError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_records_are_skipped() {
        let text = format!("FIX 0\n{TINY}EQUIV 1 0\n");
        let ds = parse_g2o_str(&text, "u", SigmaMode::default()).unwrap();
        assert_eq!(ds.skipped_lines, vec![1, 5]);
        assert_eq!(ds.edges.len(), 1);
    }

    #[test]
    fn edges_without_vertices_are_dead_reckoned() {
        let text =
            "EDGE2 1 0 -1 0 0 1 0 1 1 0 0\nEDGE2 1 2 0 1 1.5707963267948966 1 0 1 1 0 0\nEDGE2 2 0 0 0 0 1 0 1 1 0 0\n";
        let ds = parse_g2o_str(text, "r", SigmaMode::default()).unwrap();
        assert_eq!(ds.vertices.len(), 3);
        assert!(ds.vertices[1].1.max_abs_diff(&Pose4::from_xyz_yaw(1.0, 0.0, 0.0, 0.0)) < 1e-15);
        assert!(
            ds.vertices[2]
                .1
                .max_abs_diff(&Pose4::from_xyz_yaw(1.0, 1.0, 0.0, std::f64::consts::FRAC_PI_2))
                < 1e-15
        );
        assert!(matches!(
            parse_g2o_str("EDGE2 0 3 1 0 0 1 0 1 1 0 0\n", "x", SigmaMode::default()),
            Err(DatasetError::Unreachable(3))
        ));
    }

    fn loopy(n: u64) -> Dataset {
        let mut ds = Dataset::default();
        for k in 0..n {
            ds.vertices.push((k, Pose4::from_xyz_yaw(k as f64, 0.0, 0.0, 0.0)));
            if k > 0 {
                ds.edges
                    .push(RelEdge::new(k - 1, k, Pose4::from_xyz_yaw(1.0, 0.0, 0.0, 0.0), Cov4::TUNED).unwrap());
            }
            if k > 5 {
                ds.edges
                    .push(RelEdge::new(k, k - 5, Pose4::from_xyz_yaw(-5.0, 0.0, 0.0, 0.0), Cov4::TUNED).unwrap());
            }
        }
        ds
    }

    #[test]
    fn corruption_contract() {
        let ds = loopy(60);
        let loops = ds.num_loops();
        let (same, ids) = corrupt_loops(&ds, 0.0, 1).unwrap();
        assert_eq!(same, ds);
        assert!(ids.is_empty());
        let (all, ids) = corrupt_loops(&ds, 1.0, 1).unwrap();
        assert_eq!(ids.len(), loops);
        for &k in &ids {
            assert_ne!(all.edges[k].meas, ds.edges[k].meas);
        }
        let (a, ia) = corrupt_loops(&ds, 0.1, 42).unwrap();
        let (b, ib) = corrupt_loops(&ds, 0.1, 42).unwrap();
        assert_eq!((a.clone(), ia.clone()), (b, ib));
        assert_eq!(ia.len(), (0.1 * loops as f64).floor() as usize);
        for (k, (x, y)) in a.edges.iter().zip(&ds.edges).enumerate() {
            assert_eq!(x == y, !ia.contains(&k), "edge {k}");
            assert_eq!((x.i, x.j, x.cov, x.kind), (y.i, y.j, y.cov, y.kind));
            assert_eq!(x.meas.trans.z, 0.0);
        }
        assert!(corrupt_loops(&ds, 1.5, 0).is_err());
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(-0.0), "0");
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(-2.5), "-2.5");
        assert_eq!(format_sig9(std::f64::consts::PI), "3.14159265");
        assert_eq!(format_sig9(123456789.4), "123456789");
        assert_eq!(format_sig9(1234567890.0), "1.23456789e9");
        assert_eq!(format_sig9(1.5e-7), "1.5e-7");
        assert_eq!(format_sig9(0.000123456789123), "0.000123456789");
    }

    #[test]
    fn trajectory_examples() {
        assert_eq!(export_trajectory(std::iter::empty()), "id,x,y,z,yaw\n");
        let id = Pose4::identity();
        assert_eq!(export_trajectory([(0, &id)]), "id,x,y,z,yaw\n0,0,0,0,0\n");
        let bad = "id,x,y,z,yaw\n0,1,2,3\n";
        assert!(matches!(
            parse_trajectory(bad),
            Err(DatasetError::Parse { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn trajectory_round_trip(raw in prop::collection::vec((-1e4..1e4f64, -1e4..1e4f64, -10.0..10.0f64, -3.2..3.2f64), 0..40)) {
            let poses: Vec<(NodeKey, Pose4)> = raw
                .iter()
                .enumerate()
                .map(|(k, &(x, y, z, t))| (k as NodeKey, Pose4::from_xyz_yaw(x, y, z, t)))
                .collect();
            let text = export_trajectory(poses.iter().map(|(k, p)| (*k, p)));
            let back = parse_trajectory(&text).unwrap();
            prop_assert_eq!(back.len(), poses.len());
            for ((ka, a), (kb, b)) in poses.iter().zip(&back) {
                prop_assert_eq!(ka, kb);
                for (u, v) in [
                    (a.trans.x, b.trans.x),
                    (a.trans.y, b.trans.y),
                    (a.trans.z, b.trans.z),
                    (a.yaw(), b.yaw()),
                ] {
                    prop_assert!((u - v).abs() <= 1e-8 * u.abs().max(1.0), "{} vs {}", u, v);
                }
            }
        }

        #[test]
        fn g2o_writer_round_trip(n in 2u64..30, seed in 0u64..1000) {
            let mut ds = loopy(n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in &mut ds.vertices {
                v.1 = Pose4::from_xyz_yaw(rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), 0.0, rng.gen_range(-3.0..3.0));
            }
            let z = Cov4::TUNED.diag()[3];
            let back = parse_g2o_str(&write_g2o(&ds), "w", SigmaMode::Dataset { z_var: z }).unwrap();
            prop_assert_eq!(&back.vertices, &ds.vertices);
            prop_assert_eq!(back.edges.len(), ds.edges.len());
            for (a, b) in back.edges.iter().zip(&ds.edges) {
                prop_assert_eq!((a.i, a.j, a.kind, a.meas), (b.i, b.j, b.kind, b.meas));
                for (u, v) in a.cov.diag().iter().zip(b.cov.diag()) {
                    assert_relative_eq!(*u, v, max_relative = 1e-15);
                }
            }
        }
    }
}
