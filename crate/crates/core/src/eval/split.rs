use std::collections::{BTreeMap, HashSet};

use super::buckets::BucketMap;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kernel::TrainRng;
use crate::train::Split;

/// Handling of classes with fewer than three ID nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmallClass {
    Exclude,
    Error,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Labelled OOD nodes per bucket; evaluation only.
    pub ood: Vec<(String, Vec<usize>)>,
    /// ID nodes left out: unlabelled, or in a class too small to split.
    pub dropped: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn as_split(&self) -> Split {
        Split { train: self.train.clone(), val: self.val.clone(), test: self.test.clone() }
    }

    pub fn ood_bucket(&self, name: &str) -> Option<&[usize]> {
        self.ood.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// All parts pairwise disjoint; in particular no OOD node is used for
    /// training or selection.
    pub fn check(&self) -> Result<()> {
        let fit: HashSet<usize> = self.train.iter().chain(&self.val).copied().collect();
        for (name, nodes) in &self.ood {
            if let Some(v) = nodes.iter().find(|v| fit.contains(v)) {
                return Err(Error::Protocol(format!("OOD bucket {name} leaks node {v} into train/val")));
            }
        }
        let mut seen = HashSet::new();
        let parts = [&self.train, &self.val, &self.test, &self.dropped]
            .into_iter()
            .chain(self.ood.iter().map(|(_, v)| v));
        for part in parts {
            for &v in part {
                if !seen.insert(v) {
                    return Err(Error::Protocol(format!("node {v} appears in two parts of the split plan")));
                }
            }
        }
        Ok(())
    }
}

/// Per-class sizes: 50/25/25 with leftovers to train then val, else
/// 60/20/20, else one train, one val and the rest test.
pub fn allocate(n: usize) -> (usize, usize, usize) {
    for (a, b) in [(0.5, 0.25), (0.6, 0.2)] {
        let floor = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
        let (mut tr, mut va, te) = (floor(a), floor(b), floor(b));
        let mut left = n - tr - va - te;
        let mut to_train = true;
        while left > 0 {
            if to_train {
                tr += 1;
            } else {
                va += 1;
            }
            to_train = !to_train;
            left -= 1;
        }
        if tr >= 1 && va >= 1 && te >= 1 {
            return (tr, va, te);
        }
    }
    (1, 1, n - 2)
}

/// Class-stratified train/val/test split of labelled `id_nodes`.
/// Deterministic per seed and independent of the order of `id_nodes`.
pub fn stratified_id_split(
    id_nodes: &[usize],
    labels: &[Option<usize>],
    seed: u64,
    small: SmallClass,
) -> Result<SplitPlan> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut dropped = Vec::new();
    for &v in id_nodes {
        match labels.get(v).copied().flatten() {
            Some(c) => by_class.entry(c).or_default().push(v),
            None => dropped.push(v),
        }
    }
    let mut rng = TrainRng::new(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (c, mut nodes) in by_class {
        if nodes.len() < 3 {
            match small {
                SmallClass::Exclude => {
                    dropped.extend(nodes);
                    continue;
                }
                SmallClass::Error => {
                    return Err(Error::Protocol(format!("class {c} has only {} ID nodes", nodes.len())));
                }
            }
        }
        nodes.sort_unstable();
        nodes.dedup();
        rng.shuffle(&mut nodes);
        let (a, b, _) = allocate(nodes.len());
        train.extend_from_slice(&nodes[..a]);
        val.extend_from_slice(&nodes[a..a + b]);
        test.extend_from_slice(&nodes[a + b..]);
    }
    for part in [&mut train, &mut val, &mut test, &mut dropped] {
        part.sort_unstable();
    }
    if train.is_empty() {
        return Err(Error::Protocol("no class has enough ID nodes to split".into()));
    }
    Ok(SplitPlan { train, val, test, ood: Vec::new(), dropped, seed })
}

/// Split of the ID bucket with every OOD bucket attached, restricted to
/// labelled nodes.
pub fn plan_for(g: &Graph, buckets: &BucketMap, seed: u64, small: SmallClass) -> Result<SplitPlan> {
    let mut plan = stratified_id_split(&buckets.id().nodes, g.labels(), seed, small)?;
    plan.ood = buckets
        .ood()
        .map(|b| (b.name.clone(), b.nodes.iter().copied().filter(|&v| g.label(v).is_some()).collect()))
        .collect();
    plan.check()?;
    Ok(plan)
}

/// Semi-supervised split: `train_per_class` labelled nodes of every class,
/// then `val_size` and `test_size` further labelled nodes, all drawn from one
/// seeded shuffle. Classes with fewer nodes contribute what they have.
pub fn per_class_split(g: &Graph, train_per_class: usize, val_size: usize, test_size: usize, seed: u64) -> Result<Split> {
    let mut nodes = g.labeled_nodes();
    nodes.sort_unstable();
    TrainRng::new(seed).shuffle(&mut nodes);
    let mut taken = vec![0usize; g.num_classes()];
    let (mut train, mut rest) = (Vec::new(), Vec::new());
    for v in nodes {
        let c = g.label(v).expect("labelled node");
        if taken[c] < train_per_class {
            taken[c] += 1;
            train.push(v);
        } else {
            rest.push(v);
        }
    }
    if train.is_empty() {
        return Err(Error::Protocol("graph has no labelled nodes to train on".into()));
    }
    if rest.len() < val_size + test_size {
        return Err(Error::Protocol(format!(
            "{} labelled nodes remain after training, {} requested for val and test",
            rest.len(),
            val_size + test_size
        )));
    }
    let mut val = rest[..val_size].to_vec();
    let mut test = rest[val_size..val_size + test_size].to_vec();
    for part in [&mut train, &mut val, &mut test] {
        part.sort_unstable();
    }
    Ok(Split { train, val, test })
}
