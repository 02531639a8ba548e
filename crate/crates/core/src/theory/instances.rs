//! Random and hand-built finite instances for the bound checks.

use super::routed::{Mechanism, Router, RouterKind, RoutedFamily};
use super::witness::{
    dot, matvec, norm, slice_floor, BoundFunctions, Environment, EnvironmentSuite, Sample, SliceFloor, Tabulated,
    WitnessModel,
};
use crate::error::Result;
use crate::kernel::{Tensor, TrainRng};

fn normal_vec(rng: &mut TrainRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn normal_matrix(rng: &mut TrainRng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, normal_vec(rng, rows * cols)).expect("sized buffer")
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

fn in_range(rng: &mut TrainRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// Orthonormal basis of `R^d` whose leading vectors span `lead`, completed
/// with random directions. Gram–Schmidt is applied twice per vector.
fn orthonormal_basis(rng: &mut TrainRng, d: usize, lead: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut pending: Vec<Vec<f64>> = lead.to_vec();
    pending.reverse();
    while basis.len() < d {
        let mut v = pending.pop().unwrap_or_else(|| normal_vec(rng, d));
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n = norm(&v);
        if n > 1e-6 {
            basis.push(scaled(&v, 1.0 / n));
        }
    }
    basis
}

fn projector(vs: &[Vec<f64>], d: usize) -> Tensor {
    let mut p = Tensor::zeros(&[d, d]);
    for v in vs {
        for i in 0..d {
            for j in 0..d {
                let cur = p.get(i, j);
                p.set(i, j, cur + v[i] * v[j]);
            }
        }
    }
    p
}

/// Random matrix plus a dominant rank-one term, so the top singular value
/// is well separated.
fn gapped_matrix(rng: &mut TrainRng, rows: usize, cols: usize) -> Tensor {
    let mut w = normal_matrix(rng, rows, cols);
    let u = normal_vec(rng, rows);
    let v = normal_vec(rng, cols);
    let (u, v) = (scaled(&u, 1.0 / norm(&u)), scaled(&v, 1.0 / norm(&v)));
    let boost = 2.0 * w.norm() + 1.0;
    for i in 0..rows {
        for j in 0..cols {
            let cur = w.get(i, j);
            w.set(i, j, cur + boost * u[i] * v[j]);
        }
    }
    w
}

/// Unit top right singular vector by power iteration on `WᵀW`.
pub fn top_right_singular(w: &Tensor, iters: usize) -> Vec<f64> {
    let wt = w.transpose();
    let mut v = vec![1.0; w.cols()];
    for _ in 0..iters {
        let next = matvec(&wt, &matvec(w, &v));
        let n = norm(&next);
        if n == 0.0 {
            break;
        }
        v = scaled(&next, 1.0 / n);
    }
    let n = norm(&v);
    scaled(&v, 1.0 / n)
}

fn random_env(rng: &mut TrainRng, name: &str, n: usize, d: usize, classes: usize, shift: &[f64]) -> Result<Environment> {
    let samples = (0..n)
        .map(|_| Sample {
            x: normal_vec(rng, d).iter().zip(shift).map(|(a, b)| a + b).collect(),
            y: rng.below(classes),
            weight: 0.05 + rng.uniform(),
        })
        .collect();
    Environment::normalized(name, samples)
}

fn random_test_envs(rng: &mut TrainRng, count: usize, d: usize, classes: usize) -> Result<Vec<Environment>> {
    (0..count)
        .map(|e| {
            let shift = scaled(&normal_vec(rng, d), 1.5);
            let n = 4 + rng.below(3);
            random_env(rng, &format!("e{}", e + 1), n, d, classes, &shift)
        })
        .collect()
}

fn witness_from_basis(
    rng: &mut TrainRng,
    w: Tensor,
    basis: &[Vec<f64>],
    high: usize,
    extra: Option<Vec<f64>>,
) -> Result<(WitnessModel, EnvironmentSuite)> {
    let (d, c) = (w.cols(), w.rows());
    let (hi, lo) = basis.split_at(high);
    let b = normal_vec(rng, c);
    let eta = 3.0 * rng.uniform();
    let m = WitnessModel::new(eta, w, b, projector(lo, d))?;
    let rho = in_range(rng, 0.1, 2.0);
    let mut grid = vec![vec![0.0; d]];
    for _ in 0..6 {
        let mut v = vec![0.0; d];
        for q in hi {
            let a = rng.normal();
            v.iter_mut().zip(q).for_each(|(x, y)| *x += a * y);
        }
        let n = norm(&v);
        if n > 0.0 {
            grid.push(scaled(&v, rho * rng.uniform() / n));
        }
    }
    if let Some(dir) = extra {
        grid.push(scaled(&dir, rho));
    }
    let d0 = random_env(rng, "d0", 5, d, c, &vec![0.0; d])?;
    let count = 1 + rng.below(3);
    let test = random_test_envs(rng, count, d, c)?;
    let suite = EnvironmentSuite { d0, test, l_max: in_range(rng, 1.0, 5.0), rho, grid };
    m.check_suite(&suite)?;
    Ok((m, suite))
}

/// Random witness model with random orthogonal low/high split and a grid
/// confined to the high component.
pub fn random_witness(seed: u64) -> Result<(WitnessModel, EnvironmentSuite)> {
    let mut rng = TrainRng::new(seed);
    let d = 2 + rng.below(5);
    let c = 1 + rng.below(3);
    let high = 1 + rng.below(d - 1);
    let w = gapped_matrix(&mut rng, c, d);
    let basis = orthonormal_basis(&mut rng, d, &[]);
    witness_from_basis(&mut rng, w, &basis, high, None)
}

/// Random witness model whose high component contains the top right
/// singular direction of the head, with `ρ` times that direction on the grid.
pub fn aligned_witness(seed: u64) -> Result<(WitnessModel, EnvironmentSuite)> {
    let mut rng = TrainRng::new(seed);
    let d = 2 + rng.below(5);
    let c = 1 + rng.below(3);
    let high = 1 + rng.below(d - 1);
    let w = gapped_matrix(&mut rng, c, d);
    let v = top_right_singular(&w, 2000);
    let basis = orthonormal_basis(&mut rng, d, std::slice::from_ref(&v));
    witness_from_basis(&mut rng, w, &basis, high, Some(v))
}

/// Head `scale·I` on `R^d`, low component along the first axis, grid
/// `{0, ρ e_last}`.
pub fn scaled_identity_witness(d: usize, scale: f64, eta: f64, rho: f64) -> Result<(WitnessModel, EnvironmentSuite)> {
    let mut p_low = Tensor::zeros(&[d, d]);
    p_low.set(0, 0, 1.0);
    let w = Tensor::identity(d).map(|x| x * scale);
    let m = WitnessModel::new(eta, w, vec![0.0; d], p_low)?;
    let sample = |i: usize, weight: f64| {
        let mut x = vec![0.5; d];
        x[i] = 1.0;
        Sample { x, y: i, weight }
    };
    let d0 = Environment::normalized("d0", (0..d).map(|i| sample(i, 1.0)).collect())?;
    let e1 = Environment::normalized("e1", vec![sample(d - 1, 1.0)])?;
    let mut last = vec![0.0; d];
    last[d - 1] = rho;
    let suite = EnvironmentSuite { d0, test: vec![e1], l_max: 1.0, rho, grid: vec![vec![0.0; d], last] };
    m.check_suite(&suite)?;
    Ok((m, suite))
}

fn random_tabulated(rng: &mut TrainRng, knots: &[f64]) -> Result<Tabulated> {
    let mut v = in_range(rng, 0.2, 2.0);
    let mut values = Vec::with_capacity(knots.len());
    for i in 0..knots.len() {
        if i > 0 && rng.below(4) != 0 {
            v *= rng.uniform();
        }
        values.push(v);
    }
    Tabulated::new(knots.to_vec(), values)
}

/// Random tabulated bounds, slice and `(L_h, ρ)`. `L_h` is zero in about one
/// instance in ten and `ε` is zero in about one in eight.
pub fn random_slice(seed: u64) -> Result<(BoundFunctions, f64, f64)> {
    let mut rng = TrainRng::new(seed);
    let n = 2 + rng.below(6);
    let mut knots = vec![0.0];
    for _ in 1..n {
        let next = knots[knots.len() - 1] + in_range(&mut rng, 0.05, 1.0);
        knots.push(next);
    }
    let psi_fit = random_tabulated(&mut rng, &knots)?;
    let psi_e1 = random_tabulated(&mut rng, &knots)?;
    let alpha = psi_fit.values[0] * in_range(&mut rng, 0.05, 1.2);
    let epsilon = if rng.below(8) == 0 { 0.0 } else { in_range(&mut rng, 0.0, 2.0) };
    let l_h = if rng.below(10) == 0 { 0.0 } else { in_range(&mut rng, 0.1, 3.0) };
    let rho = in_range(&mut rng, 0.1, 2.0);
    Ok((BoundFunctions { psi_fit, psi_e1, alpha, epsilon }, l_h, rho))
}

/// Random routed family with hard or soft routing and shifted test
/// environments.
pub fn random_routed(seed: u64) -> Result<(RoutedFamily, EnvironmentSuite)> {
    let mut rng = TrainRng::new(seed);
    let d = 2 + rng.below(4);
    let c = 2 + rng.below(2);
    let k = 1 + rng.below(4);
    let mechanisms = (0..k)
        .map(|_| {
            let s = in_range(&mut rng, 0.2, 1.5);
            Mechanism { w: normal_matrix(&mut rng, c, d).map(|x| x * s), b: normal_vec(&mut rng, c) }
        })
        .collect();
    let kind = if rng.below(2) == 0 { RouterKind::Hard } else { RouterKind::Soft { tau: in_range(&mut rng, 0.2, 2.0) } };
    let gate_scale = in_range(&mut rng, 0.5, 3.0);
    let router = Router { gate_w: normal_matrix(&mut rng, k, d).map(|x| x * gate_scale), gate_b: normal_vec(&mut rng, k), kind };
    let rf = RoutedFamily::new(mechanisms, router)?;
    let rho = in_range(&mut rng, 0.05, 1.5);
    let mut grid = vec![vec![0.0; d]];
    for _ in 0..5 {
        let v = normal_vec(&mut rng, d);
        grid.push(scaled(&v, rho * rng.uniform() / norm(&v)));
    }
    let d0 = random_env(&mut rng, "d0", 5, d, c, &vec![0.0; d])?;
    let count = 2 + rng.below(2);
    let test = random_test_envs(&mut rng, count, d, c)?;
    let suite = EnvironmentSuite { d0, test, l_max: in_range(&mut rng, 1.0, 5.0), rho, grid };
    suite.validate(d, c)?;
    Ok((rf, suite))
}

/// Three environments over one-hot inputs, one expert perfect on each, and
/// a hard router that picks the wrong expert on 20% of every environment.
/// `L_max = 1`; the grid moves inputs by at most `0.05`.
pub fn three_expert_instance() -> Result<(RoutedFamily, EnvironmentSuite)> {
    let d = 6;
    let one_hot = |j: usize| {
        let mut x = vec![0.0; d];
        x[j] = 1.0;
        x
    };
    // Input j belongs to environment j % 3 and carries label j % 3.
    let mechanisms = (0..3)
        .map(|k| {
            let mut w = Tensor::zeros(&[3, d]);
            for j in 0..d {
                let y = j % 3;
                if y == k {
                    w.set(y, j, 1.0);
                } else {
                    w.set((y + 1) % 3, j, 3.0);
                }
            }
            Mechanism { w, b: vec![0.0; 3] }
        })
        .collect();
    let mut gate = Tensor::zeros(&[3, d]);
    for e in 0..3 {
        gate.set(e, e, 2.0);
        gate.set((e + 1) % 3, 3 + e, 2.0);
    }
    let rf = RoutedFamily::new(mechanisms, Router { gate_w: gate, gate_b: vec![0.0; 3], kind: RouterKind::Hard })?;
    let test = (0..3)
        .map(|e| {
            Environment::new(
                format!("e{}", e + 1),
                vec![Sample { x: one_hot(e), y: e, weight: 0.8 }, Sample { x: one_hot(3 + e), y: e, weight: 0.2 }],
            )
        })
        .collect();
    let d0 = Environment::normalized("d0", (0..3).map(|e| Sample { x: one_hot(e), y: e, weight: 1.0 }).collect())?;
    let rho = 0.05;
    let mut grid = vec![vec![0.0; d]];
    for j in 0..d {
        for s in [rho, -rho] {
            let mut v = vec![0.0; d];
            v[j] = s;
            grid.push(v);
        }
    }
    let suite = EnvironmentSuite { d0, test, l_max: 1.0, rho, grid };
    suite.validate(d, 3)?;
    Ok((rf, suite))
}

/// H1 slice with `ψ_fit(η) = max(0, 0.5 − η)`, `ψ_e1(η) = max(0, 1 − 2η)`,
/// `α = 0.2`, `L_h = ρ = 1` and the given `ε`.
pub fn linear_psi_slice(epsilon: f64) -> Result<SliceFloor> {
    let bounds = BoundFunctions {
        psi_fit: Tabulated::new(vec![0.0, 0.5], vec![0.5, 0.0])?,
        psi_e1: Tabulated::new(vec![0.0, 0.5], vec![1.0, 0.0])?,
        alpha: 0.2,
        epsilon,
    };
    slice_floor(&bounds, 1.0, 1.0)
}

/// [`three_expert_instance`] against the H1 floor at `ε = 0.3`, which is
/// `0.4 = 0.2·L_max + 0.2`.
pub fn separation_instance() -> Result<(RoutedFamily, EnvironmentSuite, SliceFloor)> {
    let (rf, suite) = three_expert_instance()?;
    Ok((rf, suite, linear_psi_slice(0.3)?))
}
