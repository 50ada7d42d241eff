use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use memtree::dataset::{corrupt_loops, export_trajectory, SigmaMode};
use memtree::factor::Cov4;
use memtree::optimize::{SolverConfig, TopDownRule, CHI2_4DOF_95};
use memtree_bench::replay::{batch, replay, run_robustness, truncate, ReplayOptions, ReplayOutput};
use memtree_bench::{emit_stats, source, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SigmaArg {
    Tuned,
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Optimize on every loop edge as it arrives.
    Replay,
    /// Single solve after all edges are added (baseline or tree-all).
    Batch,
    /// Corrupt loops and compare gated against ungated replays.
    Robustness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    OneIteration,
    Exhaust,
}

/// Replays a 2D pose-graph dataset through the memory tree or the
/// global-frame baseline and reports per-event statistics.
#[derive(Debug, Parser)]
#[command(name = "memtree-bench", version)]
struct Cli {
    /// g2o/TORO file, a known name (m3500, intel, m10000, mit) or
    /// synthetic:manhattan|indoor[:SEED].
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value = "tree-top-down", value_parser = parse_method)]
    method: Method,
    #[arg(long, value_enum, default_value_t = Mode::Replay)]
    mode: Mode,
    /// Chi-square loop gate. Defaults to on in robustness mode, off otherwise.
    #[arg(long, value_enum)]
    gate: Option<Switch>,
    #[arg(long, default_value_t = CHI2_4DOF_95)]
    gamma: f64,
    /// Fraction of loop edges to corrupt.
    #[arg(long, default_value_t = 0.0)]
    corrupt_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SigmaArg::Tuned)]
    sigma_mode: SigmaArg,
    /// Tuned covariance diagonal as yaw,x,y,z variances.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = Cov4::TUNED.diag())]
    sigma: Vec<f64>,
    #[arg(long)]
    export_traj: Option<PathBuf>,
    #[arg(long)]
    export_stats: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    max_lm_iters: usize,
    /// Keep only vertices with id below N.
    #[arg(long)]
    max_poses: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    cauchy_scale: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda_init: f64,
    #[arg(long, default_value_t = 1e-8)]
    rel_cost_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    grad_tol: f64,
    #[arg(long, value_enum, default_value_t = RuleArg::OneIteration)]
    top_down_rule: RuleArg,
    /// Relative cost decrease below which a frontier counts as converged.
    #[arg(long, default_value_t = 1e-6)]
    one_iter_tol: f64,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: memtree_bench::UnknownMethod| e.to_string())
}

fn write_outputs(cli: &Cli, out: &ReplayOutput) -> Result<()> {
    if let Some(p) = &cli.export_traj {
        let text = export_trajectory(out.trajectory.iter().map(|(k, p)| (*k, p)));
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &cli.export_stats {
        std::fs::write(p, emit_stats(&out.stats.events)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn summarize(label: &str, out: &ReplayOutput) {
    let s = &out.stats;
    let mut vars: Vec<usize> = s.events.iter().map(|e| e.num_vars).collect();
    vars.sort_unstable();
    let median = vars.get(vars.len() / 2).copied().unwrap_or(0);
    println!(
        "{label}: events={} rejected={} total_opt_s={:.3} median_vars={} max_vars={} nodes={} height={} final_chi2={:.6}",
        s.events.len(),
        s.num_rejected(),
        s.total_time_s,
        median,
        vars.last().copied().unwrap_or(0),
        s.node_count,
        s.tree_height.map_or_else(|| "-".to_owned(), |h| h.to_string()),
        s.final_cost
    );
}

fn run(cli: &Cli) -> Result<()> {
    if cli.sigma.len() != 4 {
        bail!("--sigma takes four comma-separated variances");
    }
    let tuned = Cov4::new(cli.sigma[0], cli.sigma[1], cli.sigma[2], cli.sigma[3])?;
    let sigma = match cli.sigma_mode {
        SigmaArg::Tuned => SigmaMode::Tuned(tuned),
        SigmaArg::Dataset => SigmaMode::Dataset { z_var: tuned.diag()[3] },
    };
    let (ds, origin) = source::load(&cli.dataset, sigma)?;
    let ds = match cli.max_poses {
        Some(n) => truncate(&ds, n),
        None => ds,
    };
    println!(
        "dataset {} ({origin}): {} vertices, {} edges, {} loops",
        ds.name,
        ds.vertices.len(),
        ds.edges.len(),
        ds.num_loops()
    );
    let mut solver = SolverConfig::default();
    solver.lm.max_iterations = cli.max_lm_iters;
    solver.lm.cauchy_scale = cli.cauchy_scale;
    solver.lm.lambda_init = cli.lambda_init;
    solver.lm.rel_cost_tol = cli.rel_cost_tol;
    solver.lm.grad_tol = cli.grad_tol;
    solver.lm.loss()?;
    solver.top_down = match cli.top_down_rule {
        RuleArg::OneIteration => TopDownRule::OneIteration {
            rel_tol: cli.one_iter_tol,
        },
        RuleArg::Exhaust => TopDownRule::ExhaustPath,
    };
    let default_gate = cli.mode == Mode::Robustness;
    let gate_on = cli.gate.map_or(default_gate, |g| g == Switch::On);
    match cli.mode {
        Mode::Robustness => {
            if !gate_on {
                bail!("robustness mode compares gated and ungated runs; --gate off is not meaningful");
            }
            let fraction = if cli.corrupt_fraction > 0.0 {
                cli.corrupt_fraction
            } else {
                0.1
            };
            let rep = run_robustness(&ds, fraction, cli.seed, cli.gamma, cli.method, &solver)?;
            summarize("gated", &rep.gated);
            summarize("ungated", &rep.ungated);
            println!(
                "corrupted={} rejected_corrupted={} tp_rate={:.4} clean_loops={} rejected_clean={} fp_rate={:.4} clean_chi2_gated={:.6} clean_chi2_ungated={:.6}",
                rep.corrupted.len(),
                rep.rejected_corrupted,
                rep.true_positive_rate(),
                rep.clean_loops,
                rep.rejected_clean,
                rep.false_positive_rate(),
                rep.gated_clean_chi2,
                rep.ungated_clean_chi2
            );
            write_outputs(cli, &rep.gated)
        }
        Mode::Replay | Mode::Batch => {
            let ds = if cli.corrupt_fraction > 0.0 {
                corrupt_loops(&ds, cli.corrupt_fraction, cli.seed)?.0
            } else {
                ds
            };
            let opts = ReplayOptions {
                gate: gate_on.then_some(cli.gamma),
                solver,
            };
            let out = if cli.mode == Mode::Batch {
                batch(&ds, cli.method, &opts)?
            } else {
                replay(&ds, cli.method, &opts)?
            };
            summarize(cli.method.name(), &out);
            write_outputs(cli, &out)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
