use super::random::splitmix64;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `Σᵢⱼ Wᵢⱼ²`.
pub fn frobenius_norm_sq(w: &Tensor) -> f64 {
    w.data().iter().map(|x| x * x).sum()
}

/// Largest singular value by power iteration on `WᵀW`.
///
/// The returned value is the running maximum of `‖W v_t‖` over iterates, so
/// it is non-decreasing in `iters` and never exceeds the true spectral norm
/// (up to rounding).
pub fn spectral_norm_estimate(w: &Tensor, iters: usize) -> Result<f64> {
    if iters == 0 {
        return Err(Error::Parameter("spectral_norm_estimate needs iters >= 1".into()));
    }
    if !w.is_matrix() {
        return Err(Error::dim("spectral_norm_estimate expects a matrix"));
    }
    let (m, n) = (w.rows(), w.cols());
    if w.data().iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    // Fixed, unstructured start vector.
    let mut state = 0x5eed_u64;
    let mut v: Vec<f64> = (0..n)
        .map(|_| (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64 + 0.5)
        .collect();
    normalize(&mut v);

    let mut best = 0.0f64;
    let mut wv = vec![0.0; m];
    for _ in 0..iters {
        for i in 0..m {
            wv[i] = w.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let sigma = wv.iter().map(|x| x * x).sum::<f64>().sqrt();
        best = best.max(sigma);
        if sigma == 0.0 {
            break;
        }
        // v ← Wᵀ(Wv) / ‖·‖
        let mut next = vec![0.0; n];
        for i in 0..m {
            for (o, a) in next.iter_mut().zip(w.row(i)) {
                *o += a * wv[i];
            }
        }
        if normalize(&mut next) == 0.0 {
            break;
        }
        v = next;
    }
    Ok(best)
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// All singular values by one-sided Jacobi rotations, sorted descending.
/// Independent of [`spectral_norm_estimate`]; used where an exact norm is
/// needed and as a cross-check.
pub fn jacobi_singular_values(w: &Tensor) -> Vec<f64> {
    // Work on the orientation with at least as many rows as columns.
    let a = if w.rows() >= w.cols() { w.clone() } else { w.transpose() };
    let (m, n) = (a.rows(), a.cols());
    // Column-major copy for cache-friendly column rotations.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (xp, xq) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * xp - s * xq;
                    cols[q][i] = s * xp + c * xq;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Exact spectral norm via Jacobi SVD.
pub fn spectral_norm_exact(w: &Tensor) -> f64 {
    jacobi_singular_values(w).first().copied().unwrap_or(0.0)
}
