//! Undirected attributed graphs, dataset ingestion, synthetic generation and
//! inference-time perturbations.

mod io;
mod perturb;
mod sbm;
mod stats;

use std::sync::Arc;

pub use io::{load_cora_raw, read_native, write_native};
pub use perturb::{drop_edges, drop_edges_keyed, mask_features, mask_features_keyed, PerturbationBudget};
pub use sbm::{generate_sbm, SbmSpec};
pub use stats::{degree_vector, feature_homophily_scores, label_homophily};

use crate::error::{Error, Result};
use crate::kernel::{Csr, Tensor};

/// Simple undirected graph with node features and optional labels.
///
/// Adjacency is always canonical: symmetric, no self-loops, no duplicates,
/// neighbor lists sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adj: Arc<Csr>,
    features: Tensor,
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

impl Graph {
    /// Builds a canonical graph from an arbitrary edge list. Reciprocal pairs
    /// and duplicates are merged, self-loops dropped.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Tensor,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rank() != 2 || features.rows() != n {
            return Err(Error::dim(format!(
                "features must be {n}×d, got {:?}",
                features.shape()
            )));
        }
        if labels.len() != n {
            return Err(Error::dim(format!("expected {n} labels, got {}", labels.len())));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&c| c >= num_classes) {
            return Err(Error::Parameter(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Parameter(format!("edge ({u}, {v}) out of range for n={n}")));
            }
        }
        Ok(Self {
            adj: Arc::new(build_csr(n, edges)),
            features,
            labels,
            num_classes,
        })
    }

    /// Unlabeled graph with the given structure and features.
    pub fn unlabeled(n: usize, edges: &[(usize, usize)], features: Tensor) -> Result<Self> {
        Self::from_edges(n, edges, features, vec![None; n], 0)
    }

    pub fn n(&self) -> usize {
        self.adj.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    pub fn adjacency(&self) -> &Arc<Csr> {
        &self.adj
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.adj.offsets
    }

    pub fn csr_targets(&self) -> &[usize] {
        &self.adj.targets
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.adj.neighbors(v)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj.degree(v)
    }

    pub fn edge_count(&self) -> usize {
        self.adj.targets.len() / 2
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 0..self.n() {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Rebuilds the adjacency from its own edge list.
    pub fn canonicalize(&self) -> Self {
        let mut out = self.clone();
        out.adj = Arc::new(build_csr(self.n(), &self.edges()));
        out
    }

    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::dim(format!(
                "replacement features {:?} do not match {:?}",
                features.shape(),
                self.features.shape()
            )));
        }
        let mut out = self.clone();
        out.features = features;
        Ok(out)
    }

    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        Self::from_edges(
            self.n(),
            edges,
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
        )
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Parameter("not a permutation".into()));
        }
        let d = self.feature_dim();
        let mut feats = vec![0.0; n * d];
        let mut labels = vec![None; n];
        for v in 0..n {
            feats[perm[v] * d..(perm[v] + 1) * d].copy_from_slice(self.features.row(v));
            labels[perm[v]] = self.labels[v];
        }
        let edges: Vec<_> = self.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Self::from_edges(n, &edges, Tensor::matrix(n, d, feats)?, labels, self.num_classes)
    }

    /// Nodes that carry a label.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.n()).filter(|&v| self.labels[v].is_some()).collect()
    }
}

fn build_csr(n: usize, edges: &[(usize, usize)]) -> Csr {
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u != v {
            lists[u].push(v);
            lists[v].push(u);
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut targets = Vec::new();
    offsets.push(0);
    for list in &mut lists {
        list.sort_unstable();
        list.dedup();
        targets.extend_from_slice(list);
        offsets.push(targets.len());
    }
    Csr { offsets, targets }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize) -> Tensor {
        Tensor::zeros(&[n, 1])
    }

    #[test]
    fn merges_reciprocal_and_drops_loops() {
        let g = Graph::unlabeled(3, &[(0, 1), (1, 0), (2, 2), (0, 1)], feats(3)).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges(), vec![(0, 1)]);
        assert_eq!(g.degree(2), 0);
        assert_eq!(*g.csr_offsets().last().unwrap(), 2);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(Graph::unlabeled(2, &[(0, 2)], feats(2)).is_err());
        assert!(Graph::from_edges(2, &[], feats(2), vec![Some(3), None], 2).is_err());
    }

    #[test]
    fn permute_roundtrip() {
        let g = Graph::from_edges(
            4,
            &[(0, 1), (1, 2), (2, 3)],
            Tensor::matrix(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
            vec![Some(0), Some(1), None, Some(0)],
            2,
        )
        .unwrap();
        let perm = [2, 0, 3, 1];
        let p = g.permute(&perm).unwrap();
        assert!(p.has_edge(2, 0));
        assert_eq!(p.features().get(3, 0), 2.0);
        let mut inv = [0; 4];
        for (i, &j) in perm.iter().enumerate() {
            inv[j] = i;
        }
        assert_eq!(p.permute(&inv).unwrap(), g);
    }
}
