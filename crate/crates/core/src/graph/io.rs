//! Raw Cora text files and the native two-file format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};
use crate::kernel::Tensor;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn malformed(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Loads the raw citation layout: `content` has one node per line
/// (`id<TAB>f_1 … f_d<TAB>label`), `cites` one `cited<TAB>citing` pair per
/// line. Ids are remapped in file order, labels in first-seen order.
pub fn load_cora_raw(content_path: impl AsRef<Path>, cites_path: impl AsRef<Path>) -> Result<Graph> {
    let content_path = content_path.as_ref();
    let cites_path = cites_path.as_ref();
    let content = read(content_path)?;
    let cites = read(cites_path)?;

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(malformed(content_path, lineno, "expected id, features and label"));
        }
        let d = tokens.len() - 2;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(malformed(
                    content_path,
                    lineno,
                    format!("expected {prev} features, found {d}"),
                ))
            }
            _ => {}
        }
        let id = tokens[0].to_string();
        if ids.contains_key(&id) {
            return Err(malformed(content_path, lineno, format!("duplicate node id {id}")));
        }
        ids.insert(id, ids.len());
        for tok in &tokens[1..=d] {
            let x: f64 = tok
                .parse()
                .map_err(|_| malformed(content_path, lineno, format!("bad feature value {tok:?}")))?;
            if !x.is_finite() {
                return Err(malformed(content_path, lineno, "non-finite feature"));
            }
            feats.push(x);
        }
        let next = class_ids.len();
        labels.push(Some(*class_ids.entry(tokens[d + 1].to_string()).or_insert(next)));
    }
    let n = ids.len();
    let d = dim.ok_or_else(|| Error::Ingestion {
        path: content_path.to_path_buf(),
        detail: "no nodes".into(),
    })?;

    let mut edges = Vec::new();
    for (i, line) in cites.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(malformed(cites_path, lineno, "expected two node ids"));
        }
        let lookup = |t: &str| {
            ids.get(t).copied().ok_or_else(|| Error::Ingestion {
                path: cites_path.to_path_buf(),
                detail: format!("unknown node id {t} on line {lineno}"),
            })
        };
        edges.push((lookup(tokens[0])?, lookup(tokens[1])?));
    }
    Graph::from_edges(n, &edges, Tensor::matrix(n, d, feats)?, labels, class_ids.len())
}

/// Writes `edges` (`u v` per line) and `nodes` (header `n d num_classes`,
/// then one tab-separated feature row per node ending in the label or `?`).
pub fn write_native(g: &Graph, edges_path: impl AsRef<Path>, nodes_path: impl AsRef<Path>) -> Result<()> {
    let mut e = String::new();
    for (u, v) in g.edges() {
        writeln!(e, "{u} {v}").unwrap();
    }
    fs::write(edges_path, e)?;

    let mut s = String::new();
    writeln!(s, "{} {} {}", g.n(), g.feature_dim(), g.num_classes()).unwrap();
    for v in 0..g.n() {
        for x in g.features().row(v) {
            // `{:?}` prints the shortest string that round-trips exactly.
            write!(s, "{x:?}\t").unwrap();
        }
        match g.label(v) {
            Some(c) => writeln!(s, "{c}").unwrap(),
            None => writeln!(s, "?").unwrap(),
        }
    }
    fs::write(nodes_path, s)?;
    Ok(())
}

pub fn read_native(edges_path: impl AsRef<Path>, nodes_path: impl AsRef<Path>) -> Result<Graph> {
    let edges_path = edges_path.as_ref();
    let nodes_path = nodes_path.as_ref();
    let nodes = read(nodes_path)?;
    let mut lines = nodes.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| malformed(nodes_path, 1, "missing header"))?;
    let header: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| malformed(nodes_path, 1, "header must be `n d num_classes`"))?;
    let [n, d, k] = header[..] else {
        return Err(malformed(nodes_path, 1, "header must be `n d num_classes`"));
    };

    let mut feats = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split('\t').map(str::trim).collect();
        if tokens.len() != d + 1 {
            return Err(malformed(nodes_path, lineno, format!("expected {} fields, found {}", d + 1, tokens.len())));
        }
        for tok in &tokens[..d] {
            let x: f64 = tok
                .parse()
                .map_err(|_| malformed(nodes_path, lineno, format!("bad feature value {tok:?}")))?;
            feats.push(x);
        }
        labels.push(match tokens[d] {
            "?" => None,
            t => Some(
                t.parse()
                    .map_err(|_| malformed(nodes_path, lineno, format!("bad label {t:?}")))?,
            ),
        });
    }
    if labels.len() != n {
        return Err(Error::Ingestion {
            path: nodes_path.to_path_buf(),
            detail: format!("header declares {n} nodes, found {}", labels.len()),
        });
    }

    let text = read(edges_path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<Vec<usize>> = parts.iter().map(|t| t.parse().ok()).collect();
        match parsed.as_deref() {
            Some(&[u, v]) if u < n && v < n => edges.push((u, v)),
            Some(&[u, v]) => {
                return Err(malformed(edges_path, lineno, format!("edge ({u}, {v}) out of range")))
            }
            _ => return Err(malformed(edges_path, lineno, "expected `u v`")),
        }
    }
    Graph::from_edges(n, &edges, Tensor::matrix(n, d, feats)?, labels, k)
}
