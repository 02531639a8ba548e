//! Vector-quantized token interface.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{Tape, Tensor, Var};

/// Commitment weight used when none is configured.
pub const DEFAULT_BETA: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    codes: Tensor,
    frozen: bool,
}

/// Nearest-code assignment for one embedding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenAssignment {
    pub index: usize,
    /// Distance to the assigned code.
    pub distance: f64,
    /// Distance to the nearest other code minus `distance`.
    pub margin: f64,
}

impl Codebook {
    pub fn new(codes: Tensor) -> Result<Self> {
        if codes.rank() != 2 || codes.rows() < 2 || codes.cols() == 0 {
            return Err(Error::dim(format!("codebook must be M×d with M ≥ 2, got {:?}", codes.shape())));
        }
        if !codes.all_finite() {
            return Err(Error::Parameter("codebook contains non-finite entries".into()));
        }
        Ok(Self { codes, frozen: false })
    }

    pub fn size(&self) -> usize {
        self.codes.rows()
    }

    pub fn dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn codes(&self) -> &Tensor {
        &self.codes
    }

    pub fn code(&self, j: usize) -> &[f64] {
        self.codes.row(j)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub(crate) fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Replaces the codes; refused once frozen.
    pub fn update(&mut self, codes: Tensor) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenState("codebook is frozen".into()));
        }
        if codes.shape() != self.codes.shape() {
            return Err(Error::dim("codebook update changes shape"));
        }
        self.codes = codes;
        Ok(())
    }

    /// SHA-256 over shape and little-endian code bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.codes.to_le_bytes());
        hex::encode(h.finalize())
    }

    /// Nearest code in Euclidean distance, ties to the lowest index.
    pub fn quantize(&self, u: &[f64]) -> Result<TokenAssignment> {
        if u.len() != self.dim() {
            return Err(Error::dim(format!("embedding has {} entries, codebook dim is {}", u.len(), self.dim())));
        }
        let mut best = (0usize, f64::INFINITY);
        let mut second = f64::INFINITY;
        for j in 0..self.size() {
            let d = dist(u, self.code(j));
            if d < best.1 {
                second = best.1;
                best = (j, d);
            } else if d < second {
                second = d;
            }
        }
        Ok(TokenAssignment {
            index: best.0,
            distance: best.1,
            margin: second - best.1,
        })
    }

    pub fn quantize_rows(&self, u: &Tensor) -> Result<Vec<TokenAssignment>> {
        (0..u.rows()).map(|i| self.quantize(u.row(i))).collect()
    }

    /// Codewords stacked in row order of `assignments`.
    pub fn lookup(&self, assignments: &[TokenAssignment]) -> Tensor {
        self.codes.select_rows(&assignments.iter().map(|a| a.index).collect::<Vec<_>>())
    }

    /// Largest pairwise code distance, by exhaustive scan.
    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.size() {
            for j in i + 1..self.size() {
                d = d.max(dist(self.code(i), self.code(j)));
            }
        }
        d
    }

    pub fn usage_histogram(&self, assignments: &[TokenAssignment]) -> Vec<usize> {
        let mut h = vec![0; self.size()];
        for a in assignments {
            h[a.index] += 1;
        }
        h
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Affine projection `u = h W + b` applied to one row.
pub fn project(h: &[f64], w: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    if w.rows() != h.len() || w.cols() != b.len() {
        return Err(Error::dim(format!(
            "projection {:?} does not accept input of length {} with bias {}",
            w.shape(),
            h.len(),
            b.len()
        )));
    }
    let out = Tensor::matrix(1, h.len(), h.to_vec())?.matmul(w)?;
    Ok(out.data().iter().zip(b).map(|(x, y)| x + y).collect())
}

/// Quantizes the current value of `u` and returns the straight-through
/// output: forward equals the assigned codewords, backward is the identity to
/// `u`, nothing flows to the codebook.
pub fn straight_through(tape: &mut Tape, u: Var, cb: &Codebook) -> Result<(Var, Vec<TokenAssignment>)> {
    let assignments = cb.quantize_rows(tape.value(u))?;
    let q = cb.lookup(&assignments);
    Ok((tape.straight_through(u, q)?, assignments))
}

/// `mean_v ‖sg(u_v) − c_{q_v}‖² + β ‖u_v − sg(c_{q_v})‖²`. The first term only
/// reaches `codebook`, the second only `u`.
pub fn vq_loss(tape: &mut Tape, u: Var, codebook: Var, beta: f64) -> Result<(Var, Vec<TokenAssignment>)> {
    if !(beta >= 0.0) {
        return Err(Error::Parameter(format!("beta must be ≥ 0, got {beta}")));
    }
    let cb = Codebook::new(tape.value(codebook).clone())?;
    let assignments = cb.quantize_rows(tape.value(u))?;
    let idx: Vec<usize> = assignments.iter().map(|a| a.index).collect();
    let n = idx.len().max(1) as f64;

    let q = tape.gather_rows(codebook, &idx)?;
    let u_sg = tape.stop_grad(u);
    let codebook_term = tape.sq_dist(u_sg, q)?;
    let total = if beta > 0.0 {
        let q_sg = tape.stop_grad(q);
        let commit = tape.sq_dist(u, q_sg)?;
        let commit = tape.scale(commit, beta);
        tape.add(codebook_term, commit)?
    } else {
        codebook_term
    };
    Ok((tape.scale(total, 1.0 / n), assignments))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginReport {
    pub index: usize,
    pub margin: f64,
    /// Perturbations strictly inside half the margin.
    pub checked: usize,
    /// Positions in the input of checked perturbations that changed the token.
    pub violations: Vec<usize>,
}

impl MarginReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// For each `δ` with `‖δ‖ < m/2`, checks that `u + δ` keeps the token of `u`.
pub fn margin_invariance_check(u: &[f64], cb: &Codebook, deltas: &[Vec<f64>]) -> Result<MarginReport> {
    let base = cb.quantize(u)?;
    let mut checked = 0;
    let mut violations = Vec::new();
    for (i, d) in deltas.iter().enumerate() {
        if d.len() != u.len() || d.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter(format!("perturbation {i} is malformed")));
        }
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm >= base.margin / 2.0 {
            continue;
        }
        checked += 1;
        let moved: Vec<f64> = u.iter().zip(d).map(|(a, b)| a + b).collect();
        if cb.quantize(&moved)?.index != base.index {
            violations.push(i);
        }
    }
    Ok(MarginReport {
        index: base.index,
        margin: base.margin,
        checked,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cb(rows: &[Vec<f64>]) -> Codebook {
        Codebook::new(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn exact_code_and_tie() {
        let c = cb(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]]);
        let a = c.quantize(&[2.0, 0.0]).unwrap();
        assert_eq!((a.index, a.distance, a.margin), (1, 0.0, 2.0));
        let t = c.quantize(&[1.0, 0.0]).unwrap();
        assert_eq!((t.index, t.margin), (0, 0.0));
    }

    #[test]
    fn frozen_refuses_update() {
        let mut c = cb(&[vec![0.0], vec![1.0]]);
        c.freeze();
        let before = c.content_hash();
        assert!(matches!(c.update(Tensor::zeros(&[2, 1])), Err(Error::FrozenState(_))));
        assert_eq!(before, c.content_hash());
    }

    #[test]
    fn rejects_degenerate_codebooks() {
        assert!(Codebook::new(Tensor::zeros(&[1, 3])).is_err());
    }
}
