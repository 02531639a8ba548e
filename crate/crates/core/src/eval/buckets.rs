use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::graph::{feature_homophily_scores, Graph};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    Degree,
    /// Mean cosine similarity to neighbors, over nodes with a defined score.
    Homophily,
    /// Same score as `Homophily`, used for the four-way tri-objective cut.
    Alignment,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Degree => "degree",
            Criterion::Homophily => "homophily",
            Criterion::Alignment => "alignment",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Ood,
    Id,
    /// Scored but deliberately left out of the protocol.
    Unused,
}

/// Quantile segments over nodes sorted ascending by score, ties by index.
///
/// `cuts` are interior fractions. A cut at `f ≤ 0.5` falls after the first
/// `⌊f·n⌋` nodes; a cut at `f > 0.5` falls before the last `⌊(1−f)·n⌋`, so
/// lower and upper tails of the same fraction get the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketSpec {
    pub criterion: Criterion,
    pub cuts: Vec<f64>,
    pub names: Vec<String>,
    pub roles: Vec<Role>,
    pub min_nodes: usize,
}

impl BucketSpec {
    pub fn degree() -> Self {
        Self::tails(Criterion::Degree)
    }

    pub fn homophily() -> Self {
        Self::tails(Criterion::Homophily)
    }

    fn tails(criterion: Criterion) -> Self {
        Self {
            criterion,
            cuts: vec![0.15, 0.85],
            names: vec!["ood_low".into(), "id".into(), "ood_high".into()],
            roles: vec![Role::Ood, Role::Id, Role::Ood],
            min_nodes: 20,
        }
    }

    pub fn triobj() -> Self {
        Self {
            criterion: Criterion::Alignment,
            cuts: vec![0.1, 0.2, 0.3, 0.8],
            names: ["ood3", "ood2", "ood1", "id", "unused"].map(String::from).to_vec(),
            roles: vec![Role::Ood, Role::Ood, Role::Ood, Role::Id, Role::Unused],
            min_nodes: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.cuts.len() + 1 || self.roles.len() != self.names.len() {
            return Err(Error::Config("bucket spec needs one name and role per segment".into()));
        }
        let mut prev = 0.0;
        for &c in &self.cuts {
            if !(c > prev && c < 1.0) {
                return Err(Error::Config(format!("bucket cuts must increase strictly inside (0, 1), got {:?}", self.cuts)));
            }
            prev = c;
        }
        if self.roles.iter().filter(|&&r| r == Role::Id).count() != 1 {
            return Err(Error::Config("bucket spec needs exactly one ID segment".into()));
        }
        let names: HashSet<&String> = self.names.iter().collect();
        if names.len() != self.names.len() {
            return Err(Error::Config("bucket names must be distinct".into()));
        }
        Ok(())
    }

    /// Segment boundaries for `n` sorted nodes.
    pub fn positions(&self, n: usize) -> Vec<usize> {
        let floor = |x: f64| (x + 1e-9).floor() as usize;
        let mut pos = vec![0];
        for &c in &self.cuts {
            pos.push(if c <= 0.5 { floor(c * n as f64) } else { n - floor((1.0 - c) * n as f64) });
        }
        pos.push(n);
        pos
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub name: String,
    pub role: Role,
    /// Ascending by score, ties by index.
    pub nodes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketMap {
    pub criterion: Criterion,
    pub buckets: Vec<Bucket>,
    /// Nodes with a defined score, in ascending index order.
    pub universe: Vec<usize>,
    /// Nodes without a defined score.
    pub invalid: Vec<usize>,
}

impl BucketMap {
    pub fn get(&self, name: &str) -> Option<&Bucket> {
        self.buckets.iter().find(|b| b.name == name)
    }

    pub fn id(&self) -> &Bucket {
        self.buckets.iter().find(|b| b.role == Role::Id).expect("validated spec has an ID segment")
    }

    pub fn ood(&self) -> impl Iterator<Item = &Bucket> {
        self.buckets.iter().filter(|b| b.role == Role::Ood)
    }

    /// Buckets are pairwise disjoint and their union is the universe.
    pub fn check_partition(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for b in &self.buckets {
            for &v in &b.nodes {
                if !seen.insert(v) {
                    return Err(Error::Protocol(format!("node {v} is in more than one bucket")));
                }
            }
        }
        let universe: HashSet<usize> = self.universe.iter().copied().collect();
        if seen != universe {
            return Err(Error::Protocol("buckets do not cover the scored nodes exactly".into()));
        }
        Ok(())
    }
}

/// Per-node score under `criterion`; `None` where undefined.
pub fn scores(g: &Graph, criterion: Criterion) -> Vec<Option<f64>> {
    match criterion {
        Criterion::Degree => (0..g.n()).map(|v| Some(g.degree(v) as f64)).collect(),
        Criterion::Homophily | Criterion::Alignment => feature_homophily_scores(g),
    }
}

/// Buckets from explicit scores.
pub fn buckets_from_scores(scores: &[Option<f64>], spec: &BucketSpec) -> Result<BucketMap> {
    spec.validate()?;
    let mut valid: Vec<(f64, usize)> = Vec::new();
    let mut invalid = Vec::new();
    for (v, s) in scores.iter().enumerate() {
        match s {
            Some(x) if x.is_finite() => valid.push((*x, v)),
            _ => invalid.push(v),
        }
    }
    if valid.len() < spec.min_nodes {
        return Err(Error::Protocol(format!(
            "{} buckets need at least {} scored nodes, found {}",
            spec.criterion.name(),
            spec.min_nodes,
            valid.len()
        )));
    }
    let mut universe: Vec<usize> = valid.iter().map(|&(_, v)| v).collect();
    universe.sort_unstable();
    valid.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let pos = spec.positions(valid.len());
    let buckets: Vec<Bucket> = (0..spec.names.len())
        .map(|i| Bucket {
            name: spec.names[i].clone(),
            role: spec.roles[i],
            nodes: valid[pos[i]..pos[i + 1]].iter().map(|&(_, v)| v).collect(),
        })
        .collect();
    if let Some(b) = buckets.iter().find(|b| b.nodes.is_empty() && b.role != Role::Unused) {
        return Err(Error::Protocol(format!("bucket {} is empty", b.name)));
    }
    let map = BucketMap { criterion: spec.criterion, buckets, universe, invalid };
    map.check_partition()?;
    Ok(map)
}

pub fn build_buckets(g: &Graph, spec: &BucketSpec) -> Result<BucketMap> {
    buckets_from_scores(&scores(g, spec.criterion), spec)
}

/// Lowest and highest 15% of nodes by degree, the rest ID.
pub fn build_degree_buckets(g: &Graph) -> Result<BucketMap> {
    build_buckets(g, &BucketSpec::degree())
}

/// Lowest and highest 15% of scored nodes by feature homophily.
pub fn build_homophily_buckets(g: &Graph) -> Result<BucketMap> {
    build_buckets(g, &BucketSpec::homophily())
}

/// Bottom 10%, 10–20% and 20–30% by alignment as OOD, 30–80% as ID, top 20% unused.
pub fn build_triobj_buckets(g: &Graph) -> Result<BucketMap> {
    build_buckets(g, &BucketSpec::triobj())
}
