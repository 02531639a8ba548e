use super::Graph;

pub fn degree_vector(g: &Graph) -> Vec<usize> {
    (0..g.n()).map(|v| g.degree(v)).collect()
}

fn unit_row(x: &[f64]) -> Option<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 0.0).then(|| x.iter().map(|v| v / norm).collect())
}

/// Mean cosine similarity between a node and its valid neighbors. `None` for
/// nodes with zero-norm or non-finite features, or with no valid neighbor.
pub fn feature_homophily_scores(g: &Graph) -> Vec<Option<f64>> {
    let units: Vec<Option<Vec<f64>>> = (0..g.n()).map(|v| unit_row(g.features().row(v))).collect();
    (0..g.n())
        .map(|v| {
            let xv = units[v].as_ref()?;
            let mut sum = 0.0;
            let mut count = 0usize;
            for &u in g.neighbors(v) {
                if let Some(xu) = &units[u] {
                    sum += xv.iter().zip(xu).map(|(a, b)| a * b).sum::<f64>();
                    count += 1;
                }
            }
            (count > 0).then(|| sum / count as f64)
        })
        .collect()
}

/// Fraction of labeled edges whose endpoints share a label.
pub fn label_homophily(g: &Graph) -> f64 {
    let mut same = 0usize;
    let mut total = 0usize;
    for (u, v) in g.edges() {
        if let (Some(a), Some(b)) = (g.label(u), g.label(v)) {
            total += 1;
            same += usize::from(a == b);
        }
    }
    if total == 0 {
        0.0
    } else {
        same as f64 / total as f64
    }
}
