//! Linear task head with a Frobenius penalty and its amplification check.

use crate::error::{Error, Result};
use crate::kernel::{frobenius_norm_sq, keyed_uniform, spectral_norm_estimate, Tape, Tensor, Var};
use crate::vq::{dist, Codebook};

/// Power iterations used for the spectral Lipschitz constant.
pub const SPECTRAL_ITERS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `num_classes × d_q`.
    pub w: Tensor,
    pub b: Vec<f64>,
    pub lambda_lip: f64,
}

impl HeadParams {
    pub fn new(w: Tensor, b: Vec<f64>, lambda_lip: f64) -> Result<Self> {
        if w.rank() != 2 || w.rows() != b.len() {
            return Err(Error::dim(format!("head weight {:?} does not match bias of length {}", w.shape(), b.len())));
        }
        if !(lambda_lip >= 0.0) {
            return Err(Error::Parameter(format!("λ_lip must be ≥ 0, got {lambda_lip}")));
        }
        Ok(Self { w, b, lambda_lip })
    }

    pub fn num_classes(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }
}

/// `W r + b`.
pub fn head_apply(r: &[f64], head: &HeadParams) -> Result<Vec<f64>> {
    if r.len() != head.input_dim() {
        return Err(Error::dim(format!("head expects {} inputs, got {}", head.input_dim(), r.len())));
    }
    Ok((0..head.num_classes())
        .map(|c| head.w.row(c).iter().zip(r).map(|(a, b)| a * b).sum::<f64>() + head.b[c])
        .collect())
}

/// `λ ‖W‖_F²`.
pub fn lip_penalty(head: &HeadParams) -> f64 {
    head.lambda_lip * frobenius_norm_sq(&head.w)
}

/// Tape version: logits `r Wᵀ + b` for a batch of rows.
pub fn head_on_tape(tape: &mut Tape, r: Var, w: Var, b: Var) -> Result<Var> {
    let z = tape.matmul_nt(r, w)?;
    tape.add_bias(z, b)
}

pub fn lip_penalty_on_tape(tape: &mut Tape, w: Var, lambda: f64) -> Var {
    let f = tape.frobenius_sq(w);
    tape.scale(f, lambda)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pooling {
    None,
    /// Mean over `nodes` tokens; `trials` random pairs of token sequences.
    Mean { nodes: usize, trials: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmplificationReport {
    pub diameter: f64,
    pub lip_frobenius: f64,
    pub lip_spectral: f64,
    pub pairs: usize,
    pub max_output_change: f64,
    /// `max (‖W c_i − W c_j‖ − ‖W‖_F · diam)` over pairs.
    pub frobenius_excess: f64,
    /// `max (‖W c_i − W c_j‖ − L ‖c_i − c_j‖)` over pairs, `L` spectral.
    pub spectral_excess: f64,
    /// For mean pooling: `max (‖mean c_a − mean c_a'‖ − diam)`.
    pub pooled_input_excess: Option<f64>,
    /// For mean pooling: `max (‖W (mean c_a − mean c_a')‖ − L · diam)`.
    pub pooled_output_excess: Option<f64>,
}

impl AmplificationReport {
    pub fn holds(&self, frobenius_tol: f64, spectral_tol: f64) -> bool {
        self.frobenius_excess <= frobenius_tol
            && self.spectral_excess <= spectral_tol
            && self.pooled_input_excess.is_none_or(|e| e <= frobenius_tol)
            && self.pooled_output_excess.is_none_or(|e| e <= spectral_tol)
    }
}

fn apply_w(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|c| w.row(c).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Checks `‖W c_i − W c_j‖ ≤ L ‖c_i − c_j‖ ≤ L diam(C)` over every code pair,
/// for both the Frobenius and the spectral `L`.
pub fn amplification_bound_check(head: &HeadParams, cb: &Codebook, pooling: Pooling) -> Result<AmplificationReport> {
    if head.input_dim() != cb.dim() {
        return Err(Error::dim("head input dimension does not match codebook"));
    }
    let diameter = cb.diameter();
    let lip_frobenius = frobenius_norm_sq(&head.w).sqrt();
    let lip_spectral = spectral_norm_estimate(&head.w, SPECTRAL_ITERS)?;
    let images: Vec<Vec<f64>> = (0..cb.size()).map(|j| apply_w(&head.w, cb.code(j))).collect();

    let mut pairs = 0;
    let mut max_change = 0.0f64;
    let mut frobenius_excess = f64::NEG_INFINITY;
    let mut spectral_excess = f64::NEG_INFINITY;
    for i in 0..cb.size() {
        for j in i + 1..cb.size() {
            pairs += 1;
            let change = dist(&images[i], &images[j]);
            max_change = max_change.max(change);
            frobenius_excess = frobenius_excess.max(change - lip_frobenius * diameter);
            spectral_excess = spectral_excess.max(change - lip_spectral * dist(cb.code(i), cb.code(j)));
        }
    }

    let (mut pooled_input_excess, mut pooled_output_excess) = (None, None);
    if let Pooling::Mean { nodes, trials, seed } = pooling {
        if nodes == 0 {
            return Err(Error::Parameter("mean pooling needs at least one node".into()));
        }
        let d = cb.dim();
        let (mut pin, mut pout) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let pick = |t: usize, v: usize, side: u64| {
            let u = keyed_uniform(seed, (t * nodes + v) as u64, side);
            ((u * cb.size() as f64) as usize).min(cb.size() - 1)
        };
        for t in 0..trials {
            let mut delta = vec![0.0; d];
            for v in 0..nodes {
                let (a, b) = (cb.code(pick(t, v, 0)), cb.code(pick(t, v, 1)));
                for k in 0..d {
                    delta[k] += (a[k] - b[k]) / nodes as f64;
                }
            }
            let norm = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
            pin = pin.max(norm - diameter);
            let out = apply_w(&head.w, &delta).iter().map(|x| x * x).sum::<f64>().sqrt();
            pout = pout.max(out - lip_spectral * diameter);
        }
        pooled_input_excess = Some(pin);
        pooled_output_excess = Some(pout);
    }

    Ok(AmplificationReport {
        diameter,
        lip_frobenius,
        lip_spectral,
        pairs,
        max_output_change: max_change,
        frobenius_excess,
        spectral_excess,
        pooled_input_excess,
        pooled_output_excess,
    })
}
