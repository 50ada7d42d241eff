//! Synthetic 2D pose graphs with known ground truth.
//!
//! Two trajectory models: a Manhattan grid walk (unit steps, quarter turns)
//! and a continuous indoor walk. Loop closures link the newest pose to an
//! earlier pose that is spatially close.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, SigmaMode};
use crate::factor::{Cov4, RelEdge};
use crate::geometry::Pose4;
use crate::tree::NodeKey;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    /// Axis-aligned unit steps; after each step the heading turns by a
    /// quarter turn with probability `turn_prob`.
    Grid { turn_prob: f64 },
    /// Gaussian heading changes of standard deviation `turn_std`.
    Continuous { turn_std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub name: String,
    pub poses: usize,
    pub step: f64,
    pub motion: Motion,
    /// The walk stays inside `[-half_extent, half_extent]^2`.
    pub half_extent: f64,
    pub sigma_xy: f64,
    pub sigma_yaw: f64,
    /// Probability that a pose with a nearby earlier pose gets a loop edge.
    pub loop_prob: f64,
    pub loop_radius: f64,
    /// Largest heading difference for a loop candidate.
    pub loop_max_dyaw: f64,
    /// Smallest id gap for a loop candidate.
    pub min_gap: u64,
    pub seed: u64,
}

impl SynthConfig {
    /// Grid world with 3500 poses and about 2000 loops, using the step and
    /// noise statistics of the public Manhattan-world datasets.
    pub fn manhattan(seed: u64) -> Self {
        Self {
            name: "manhattan3500".into(),
            poses: 3500,
            step: 1.0,
            motion: Motion::Grid { turn_prob: 0.2 },
            half_extent: 12.0,
            sigma_xy: 0.05,
            sigma_yaw: 0.02,
            loop_prob: 0.6,
            loop_radius: 1.01,
            loop_max_dyaw: std::f64::consts::PI + 0.1,
            min_gap: 3,
            seed,
        }
    }

    /// Indoor-scale continuous walk with 1228 poses and a few hundred loops.
    pub fn indoor(seed: u64) -> Self {
        Self {
            name: "indoor1228".into(),
            poses: 1228,
            step: 0.5,
            motion: Motion::Continuous { turn_std: 0.2 },
            half_extent: 9.0,
            sigma_xy: 0.03,
            sigma_yaw: 0.01,
            loop_prob: 0.65,
            loop_radius: 0.8,
            loop_max_dyaw: 1.0,
            min_gap: 20,
            seed,
        }
    }
}

/// A generated graph and the poses it was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGraph {
    pub dataset: Dataset,
    pub truth: Vec<(NodeKey, Pose4)>,
}

struct Noise {
    xy: Normal<f64>,
    yaw: Normal<f64>,
}

impl Noise {
    fn perturb(&self, p: &Pose4, rng: &mut ChaCha8Rng) -> Pose4 {
        Pose4::new(
            p.yaw() + self.yaw.sample(rng),
            p.trans + Vector3::new(self.xy.sample(rng), self.xy.sample(rng), 0.0),
        )
    }
}

fn cell(p: &Vector3<f64>, size: f64) -> (i64, i64) {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64)
}

fn inside(p: &Vector3<f64>, half: f64) -> bool {
    p.x.abs() <= half + 1e-9 && p.y.abs() <= half + 1e-9
}

/// Picks the heading for the next step, turning away from the boundary.
fn next_heading(cfg: &SynthConfig, pos: &Vector3<f64>, heading: f64, rng: &mut ChaCha8Rng) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    let ahead = |h: f64| pos + Vector3::new(h.cos(), h.sin(), 0.0) * cfg.step;
    let proposal = match cfg.motion {
        Motion::Grid { turn_prob } => {
            if rng.gen_bool(turn_prob) {
                heading + if rng.gen_bool(0.5) { FRAC_PI_2 } else { -FRAC_PI_2 }
            } else {
                heading
            }
        }
        Motion::Continuous { turn_std } => heading + Normal::new(0.0, turn_std).expect("std").sample(rng),
    };
    if inside(&ahead(proposal), cfg.half_extent) {
        return proposal;
    }
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    for k in [1.0, -1.0, 2.0] {
        let h = proposal + side * k * FRAC_PI_2;
        if inside(&ahead(h), cfg.half_extent) {
            return h;
        }
    }
    proposal + std::f64::consts::PI
}

pub fn generate(cfg: &SynthConfig, sigma: SigmaMode) -> SynthGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Noise {
        xy: Normal::new(0.0, cfg.sigma_xy).expect("sigma_xy"),
        yaw: Normal::new(0.0, cfg.sigma_yaw).expect("sigma_yaw"),
    };
    let cov = match sigma {
        SigmaMode::Tuned(c) => c,
        SigmaMode::Dataset { z_var } => {
            Cov4::new(cfg.sigma_yaw.powi(2), cfg.sigma_xy.powi(2), cfg.sigma_xy.powi(2), z_var).expect("positive noise")
        }
    };
    let grid_cell = cfg.loop_radius.max(1e-3);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut truth: Vec<Pose4> = Vec::with_capacity(cfg.poses);
    let mut edges = Vec::new();
    let mut heading: f64 = 0.0;
    let mut pos = Vector3::zeros();
    for k in 0..cfg.poses {
        if k > 0 {
            pos += Vector3::new(heading.cos(), heading.sin(), 0.0) * cfg.step;
            if let Motion::Grid { .. } = cfg.motion {
                pos = pos.map(|v| (v / cfg.step).round() * cfg.step);
            }
        }
        heading = crate::geometry::wrap_angle(next_heading(cfg, &pos, heading, &mut rng));
        let pose = Pose4::new(heading, pos);
        if k > 0 {
            let meas = noise.perturb(&truth[k - 1].relative(&pose), &mut rng);
            edges.push(RelEdge::new(k as NodeKey - 1, k as NodeKey, meas, cov).expect("valid edge"));
        }
        let (cx, cy) = cell(&pos, grid_cell);
        let mut candidates = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &j in buckets.get(&(cx + dx, cy + dy)).into_iter().flatten() {
                    let other = &truth[j];
                    if (k - j) as u64 >= cfg.min_gap
                        && (other.trans - pos).norm() <= cfg.loop_radius
                        && crate::geometry::wrap_angle(other.yaw() - pose.yaw()).abs() <= cfg.loop_max_dyaw
                    {
                        candidates.push(j);
                    }
                }
            }
        }
        if !candidates.is_empty() && rng.gen_bool(cfg.loop_prob) {
            candidates.sort_unstable();
            let j = candidates[rng.gen_range(0..candidates.len())];
            let meas = noise.perturb(&pose.relative(&truth[j]), &mut rng);
            edges.push(RelEdge::new(k as NodeKey, j as NodeKey, meas, cov).expect("valid edge"));
        }
        buckets.entry((cx, cy)).or_default().push(k);
        truth.push(pose);
    }
    let vertices = crate::dataset::dead_reckon(&edges).expect("chain is connected");
    SynthGraph {
        dataset: Dataset {
            name: cfg.name.clone(),
            vertices,
            edges,
            skipped_lines: Vec::new(),
        },
        truth: truth.into_iter().enumerate().map(|(k, p)| (k as NodeKey, p)).collect(),
    }
}
