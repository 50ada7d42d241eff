//! Dataset lookup: files on disk, or synthetic stand-ins by name.

use std::path::{Path, PathBuf};

use memtree::dataset::{load_g2o, Dataset, DatasetError, SigmaMode};
use memtree::synth::{generate, SynthConfig};

/// Environment variable naming a directory with pose-graph files.
pub const DATA_DIR_ENV: &str = "MEMTREE_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    File(PathBuf),
    Synthetic(String),
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::File(p) => write!(f, "file {}", p.display()),
            Origin::Synthetic(s) => write!(f, "synthetic {s}"),
        }
    }
}

/// Public datasets known by name and the file names they are distributed as.
const KNOWN: &[(&str, &[&str])] = &[
    ("m3500", &["M3500.g2o", "input_M3500_g2o.g2o", "manhattanOlson3500.g2o"]),
    ("intel", &["intel.g2o", "INTEL.g2o", "input_INTEL_g2o.g2o"]),
    ("m10000", &["M10000.g2o", "w10000.graph", "input_M10000_g2o.g2o"]),
    ("mit", &["mit.g2o", "MIT.g2o", "input_MITb_g2o.g2o"]),
];

fn data_dirs() -> Vec<PathBuf> {
    let mut dirs = Vec::new();
    if let Ok(d) = std::env::var(DATA_DIR_ENV) {
        dirs.push(PathBuf::from(d));
    }
    dirs.push(Path::new(env!("CARGO_MANIFEST_DIR")).join("data"));
    dirs
}

/// Finds a known dataset file in the data directories.
pub fn find_named(name: &str) -> Option<PathBuf> {
    let (_, files) = KNOWN.iter().find(|(n, _)| n.eq_ignore_ascii_case(name))?;
    data_dirs()
        .into_iter()
        .flat_map(|d| files.iter().map(move |f| d.join(f)))
        .find(|p| p.is_file())
}

fn synthetic(kind: &str, seed: Option<u64>, sigma: SigmaMode) -> Option<(Dataset, Origin)> {
    let cfg = match kind {
        "manhattan" => SynthConfig::manhattan(seed.unwrap_or(3500)),
        "indoor" => SynthConfig::indoor(seed.unwrap_or(1228)),
        _ => return None,
    };
    let label = format!("{}(seed={})", cfg.name, cfg.seed);
    Some((generate(&cfg, sigma).dataset, Origin::Synthetic(label)))
}

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("unknown dataset {0:?}: not a file, a known name, or synthetic:manhattan|indoor[:seed]")]
    Unknown(String),
    #[error("{path}: {source}")]
    Load { path: PathBuf, source: DatasetError },
}

/// Resolves a dataset spec:
/// - a path to a g2o or TORO file;
/// - `synthetic:manhattan[:SEED]` or `synthetic:indoor[:SEED]`;
/// - a known name (`m3500`, `intel`, ...) looked up in the data directories,
///   falling back to the matching synthetic stand-in (`m3500` -> manhattan,
///   `intel` -> indoor) when no file is present.
pub fn load(spec: &str, sigma: SigmaMode) -> Result<(Dataset, Origin), SourceError> {
    let load_file = |p: PathBuf| {
        load_g2o(&p, sigma)
            .map(|d| (d, Origin::File(p.clone())))
            .map_err(|source| SourceError::Load { path: p, source })
    };
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let mut parts = rest.splitn(2, ':');
        let kind = parts.next().unwrap_or_default();
        let seed = match parts.next() {
            Some(s) => Some(s.parse().map_err(|_| SourceError::Unknown(spec.to_owned()))?),
            None => None,
        };
        return synthetic(kind, seed, sigma).ok_or_else(|| SourceError::Unknown(spec.to_owned()));
    }
    let path = Path::new(spec);
    if path.is_file() {
        return load_file(path.to_path_buf());
    }
    if let Some(p) = find_named(spec) {
        return load_file(p);
    }
    let stand_in = match spec.to_ascii_lowercase().as_str() {
        "m3500" => "manhattan",
        "intel" => "indoor",
        _ => return Err(SourceError::Unknown(spec.to_owned())),
    };
    log::warn!("{spec}: no file found, using the synthetic {stand_in} stand-in");
    synthetic(stand_in, None, sigma).ok_or_else(|| SourceError::Unknown(spec.to_owned()))
}
