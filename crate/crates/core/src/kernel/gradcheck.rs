//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, floor)` over the concatenation of all inputs.
    pub rel_error: f64,
}

pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Evaluates `f` once on the tape for analytic gradients, then `2·numel`
/// more times for central differences at `step`.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        numeric.push(g);
    }

    let rel_error = relative_error(&analytic, &numeric);
    Ok(GradCheck {
        analytic,
        numeric,
        rel_error,
    })
}

pub fn relative_error(a: &[Tensor], n: &[Tensor]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (x, y) in a.iter().zip(n) {
        for (p, q) in x.data().iter().zip(y.data()) {
            diff += (p - q) * (p - q);
            na += p * p;
            nn += q * q;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(REL_ERROR_FLOOR)
}
