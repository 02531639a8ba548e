use super::Graph;
use crate::error::{Error, Result};
use crate::kernel::{Tensor, TrainRng};

/// Stochastic block model with class-mean features.
#[derive(Clone, Debug, PartialEq)]
pub struct SbmSpec {
    pub n: usize,
    pub num_blocks: usize,
    pub intra_prob: f64,
    pub inter_prob: f64,
    pub feature_dim: usize,
    /// Norm of the class-mean offset.
    pub feature_signal: f64,
    /// Log-normal spread of per-node degree propensities; 0 gives a plain SBM.
    pub degree_heterogeneity: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            n: 200,
            num_blocks: 2,
            intra_prob: 0.05,
            inter_prob: 0.01,
            feature_dim: 8,
            feature_signal: 2.0,
            degree_heterogeneity: 0.0,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.num_blocks == 0 || self.n < self.num_blocks {
            return Err(Error::Parameter(format!(
                "need 1 ≤ num_blocks ≤ n, got {} blocks for n={}",
                self.num_blocks, self.n
            )));
        }
        if !prob(self.intra_prob) || !prob(self.inter_prob) {
            return Err(Error::Parameter("edge probabilities must lie in [0, 1]".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Parameter("feature_dim must be positive".into()));
        }
        if !(self.feature_signal >= 0.0) || !(self.degree_heterogeneity >= 0.0) {
            return Err(Error::Parameter(
                "feature_signal and degree_heterogeneity must be ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

/// Node `v` belongs to block `v % num_blocks`. Block `b` has mean
/// `feature_signal · e_{b mod d}`, plus unit Gaussian noise per entry.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph> {
    spec.validate()?;
    let mut rng = TrainRng::new(spec.seed);
    let n = spec.n;
    let labels: Vec<usize> = (0..n).map(|v| v % spec.num_blocks).collect();

    let mut theta: Vec<f64> = (0..n)
        .map(|_| (spec.degree_heterogeneity * rng.normal()).exp())
        .collect();
    let mean = theta.iter().sum::<f64>() / n as f64;
    theta.iter_mut().for_each(|t| *t /= mean);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let base = if labels[u] == labels[v] {
                spec.intra_prob
            } else {
                spec.inter_prob
            };
            let p = (base * theta[u] * theta[v]).min(1.0);
            if rng.uniform() < p {
                edges.push((u, v));
            }
        }
    }

    let d = spec.feature_dim;
    let mut feats = Vec::with_capacity(n * d);
    for &c in &labels {
        for j in 0..d {
            let mean = if j == c % d { spec.feature_signal } else { 0.0 };
            feats.push(mean + rng.normal());
        }
    }
    Graph::from_edges(
        n,
        &edges,
        Tensor::matrix(n, d, feats)?,
        labels.into_iter().map(Some).collect(),
        spec.num_blocks,
    )
}
