//! Incremental replay of 2D pose-graph datasets through the memory tree and
//! the global-frame baseline, with per-event statistics.

pub mod replay;
pub mod source;
pub mod stats;

use std::fmt;
use std::str::FromStr;

use memtree::optimize::TreeMethod;

pub use replay::{
    batch, probe_tree_methods, replay, run_robustness, BenchError, ProbeRecord, ReplayOptions, ReplayOutput,
    RobustnessReport,
};
pub use stats::{emit_stats, parse_stats, EventRecord, ReplayStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Baseline,
    TreeAll,
    TreeFullPath,
    TreeTopDown,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Baseline,
        Method::TreeAll,
        Method::TreeFullPath,
        Method::TreeTopDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::TreeAll => "tree-all",
            Method::TreeFullPath => "tree-full-path",
            Method::TreeTopDown => "tree-top-down",
        }
    }

    pub fn tree_method(self) -> Option<TreeMethod> {
        match self {
            Method::Baseline => None,
            Method::TreeAll => Some(TreeMethod::AllStates),
            Method::TreeFullPath => Some(TreeMethod::FullPath),
            Method::TreeTopDown => Some(TreeMethod::TopDown),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown method {0:?} (expected baseline, tree-all, tree-full-path or tree-top-down)")]
pub struct UnknownMethod(pub String);

impl FromStr for Method {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownMethod(s.to_owned()))
    }
}
