use crate::error::{Error, Result};
use crate::graph::{drop_edges, mask_features, Graph, PerturbationBudget};
use crate::kernel::splitmix64;
use crate::model::{accuracy_of, Model};

pub const DEFAULT_TRIALS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbKind {
    Feature,
    Edge,
}

impl PerturbKind {
    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::Feature => "feature",
            PerturbKind::Edge => "edge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "feature" => Some(PerturbKind::Feature),
            "edge" => Some(PerturbKind::Edge),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateResult {
    pub rate: f64,
    pub mean: f64,
    pub trials: Vec<f64>,
}

/// Seed of one perturbation draw.
pub fn trial_seed(seed: u64, rate: f64, trial: usize) -> u64 {
    let mut s = seed ^ rate.to_bits().rotate_left(17) ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    splitmix64(&mut s)
}

/// Fails unless the model state still hashes to `expected`.
pub fn verify_frozen(model: &Model, expected: &str, context: &str) -> Result<()> {
    let now = model.state_hash();
    if now != expected {
        return Err(Error::FrozenState(format!("model state changed during {context}: {expected} → {now}")));
    }
    Ok(())
}

/// Accuracy on `test_nodes` after perturbing only those nodes, averaged over
/// `trials` independent draws per rate. The model is never modified; its
/// state hash is re-verified after the suite.
pub fn run_perturb_suite(
    model: &Model,
    g: &Graph,
    test_nodes: &[usize],
    rates: &[f64],
    kind: PerturbKind,
    trials: usize,
    seed: u64,
) -> Result<Vec<RateResult>> {
    if trials == 0 {
        return Err(Error::Config("trials must be ≥ 1".into()));
    }
    if test_nodes.is_empty() {
        return Err(Error::Protocol("perturbation suite has no test nodes".into()));
    }
    let hash = model.state_hash();
    let mut out = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut accs = Vec::with_capacity(trials);
        for t in 0..trials {
            let budget = PerturbationBudget {
                feature_mask_rate: if kind == PerturbKind::Feature { rate } else { 0.0 },
                edge_drop_rate: if kind == PerturbKind::Edge { rate } else { 0.0 },
                eval_nodes: test_nodes.to_vec(),
                seed: trial_seed(seed, rate, t),
            };
            let view = match kind {
                PerturbKind::Feature => mask_features(g, &budget)?,
                PerturbKind::Edge => drop_edges(g, &budget)?,
            };
            accs.push(accuracy_of(&model.predict(&view)?, &view, test_nodes));
        }
        let mean = accs.iter().sum::<f64>() / trials as f64;
        out.push(RateResult { rate, mean, trials: accs });
    }
    verify_frozen(model, &hash, "the perturbation suite")?;
    Ok(out)
}
