//! Feature masking and edge deletion restricted to evaluation nodes.

use super::Graph;
use crate::error::{Error, Result};
use crate::kernel::keyed_uniform;

const MASK_STREAM: u64 = 0x6d61_736b;
const DROP_STREAM: u64 = 0x6472_6f70;

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationBudget {
    pub feature_mask_rate: f64,
    pub edge_drop_rate: f64,
    pub eval_nodes: Vec<usize>,
    pub seed: u64,
}

impl PerturbationBudget {
    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, r) in [
            ("feature_mask_rate", self.feature_mask_rate),
            ("edge_drop_rate", self.edge_drop_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if let Some(&v) = self.eval_nodes.iter().find(|&&v| v >= n) {
            return Err(Error::Parameter(format!("eval node {v} out of range for n={n}")));
        }
        Ok(())
    }

    fn eval_mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &v in &self.eval_nodes {
            m[v] = true;
        }
        m
    }
}

/// Zeroes each `(eval node, dim)` entry independently with probability
/// `feature_mask_rate`. Draws are keyed by `(seed, node, dim)`.
pub fn mask_features(g: &Graph, budget: &PerturbationBudget) -> Result<Graph> {
    budget.validate(g.n())?;
    let seed = budget.seed ^ MASK_STREAM;
    mask_features_keyed(g, &budget.eval_nodes, budget.feature_mask_rate, |v, j| {
        keyed_uniform(seed, v as u64, j as u64)
    })
}

/// Masking with an explicit draw per `(node, dim)`; entry is zeroed when
/// `draw(v, j) < rate`.
pub fn mask_features_keyed(
    g: &Graph,
    eval_nodes: &[usize],
    rate: f64,
    draw: impl Fn(usize, usize) -> f64,
) -> Result<Graph> {
    let mut feats = g.features().clone();
    let d = g.feature_dim();
    let mut done = vec![false; g.n()];
    for &v in eval_nodes {
        if std::mem::replace(&mut done[v], true) {
            continue;
        }
        let row = feats.row_mut(v);
        for j in 0..d {
            if draw(v, j) < rate {
                row[j] = 0.0;
            }
        }
    }
    g.with_features(feats)
}

/// Drops each undirected edge touching an eval node with probability
/// `edge_drop_rate`, both directions together. If every candidate would go,
/// the one with the smallest `(min, max)` key is kept.
pub fn drop_edges(g: &Graph, budget: &PerturbationBudget) -> Result<Graph> {
    budget.validate(g.n())?;
    let seed = budget.seed ^ DROP_STREAM;
    let eval = budget.eval_mask(g.n());
    drop_edges_keyed(g, &eval, budget.edge_drop_rate, |u, v| {
        keyed_uniform(seed, u as u64, v as u64)
    })
}

/// Edge deletion with an explicit draw per canonical key `(u, v)`, `u < v`.
pub fn drop_edges_keyed(
    g: &Graph,
    eval: &[bool],
    rate: f64,
    draw: impl Fn(usize, usize) -> f64,
) -> Result<Graph> {
    let edges = g.edges();
    let mut kept = Vec::with_capacity(edges.len());
    let mut first_candidate = None;
    let mut any_candidate_kept = false;
    for &(u, v) in &edges {
        if !(eval[u] || eval[v]) {
            kept.push((u, v));
            continue;
        }
        first_candidate.get_or_insert((u, v));
        if draw(u, v) >= rate {
            kept.push((u, v));
            any_candidate_kept = true;
        }
    }
    if let (Some(e), false) = (first_candidate, any_candidate_kept) {
        kept.push(e);
    }
    g.with_edges(&kept)
}
