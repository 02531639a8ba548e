//! Dataset specs: `sbm`, `sbm:SEED`, `cora:DIR`, `native:DIR`.

use std::path::Path;

use tokmoe::graph::{generate_sbm, load_cora_raw, read_native, Graph, SbmSpec};

use crate::error::{CliError, CliResult};
use crate::settings::Settings;

pub const SBM_KEYS: [(&str, &str); 8] = [
    ("sbm_n", "200"),
    ("sbm_blocks", "2"),
    ("sbm_intra", "0.05"),
    ("sbm_inter", "0.01"),
    ("sbm_dim", "8"),
    ("sbm_signal", "2.0"),
    ("sbm_heterogeneity", "0.0"),
    ("sbm_seed", "0"),
];

fn sbm_spec(s: &Settings, seed: Option<u64>) -> CliResult<SbmSpec> {
    Ok(SbmSpec {
        n: s.usize("sbm_n")?,
        num_blocks: s.usize("sbm_blocks")?,
        intra_prob: s.f64("sbm_intra")?,
        inter_prob: s.f64("sbm_inter")?,
        feature_dim: s.usize("sbm_dim")?,
        feature_signal: s.f64("sbm_signal")?,
        degree_heterogeneity: s.f64("sbm_heterogeneity")?,
        seed: match seed {
            Some(v) => v,
            None => s.u64("sbm_seed")?,
        },
    })
}

fn require_dir(dir: &Path) -> CliResult<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(format!("dataset directory {} does not exist", dir.display())))
    }
}

pub fn load(spec: &str, s: &Settings) -> CliResult<Graph> {
    let spec = spec.trim();
    let (kind, arg) = match spec.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (spec, None),
    };
    match (kind, arg) {
        ("", _) => Err(CliError::Config("no dataset given".into())),
        ("sbm", None) => Ok(generate_sbm(&sbm_spec(s, None)?)?),
        ("sbm", Some(seed)) => {
            let seed = seed.parse().map_err(|_| CliError::Config(format!("bad SBM seed in {spec:?}")))?;
            Ok(generate_sbm(&sbm_spec(s, Some(seed))?)?)
        }
        ("cora", Some(dir)) => {
            let dir = Path::new(dir);
            require_dir(dir)?;
            Ok(load_cora_raw(dir.join("cora.content"), dir.join("cora.cites"))?)
        }
        ("native", Some(dir)) => {
            let dir = Path::new(dir);
            require_dir(dir)?;
            Ok(read_native(dir.join("edges.txt"), dir.join("nodes.txt"))?)
        }
        _ => Err(CliError::Config(format!(
            "unknown dataset {spec:?}; expected sbm, sbm:SEED, cora:DIR or native:DIR"
        ))),
    }
}

/// Comma-separated list of specs.
pub fn load_all(specs: &str, s: &Settings) -> CliResult<Vec<Graph>> {
    let graphs: Vec<Graph> = specs
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| load(t, s))
        .collect::<CliResult<_>>()?;
    if graphs.is_empty() {
        return Err(CliError::Config("no dataset given".into()));
    }
    Ok(graphs)
}
