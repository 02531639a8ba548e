use crate::error::{Error, Result};
use crate::head::SPECTRAL_ITERS;
use crate::kernel::{spectral_norm_estimate, spectral_norm_exact, Tensor};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub(crate) fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|i| dot(w.row(i), x)).collect()
}

pub(crate) fn affine(w: &Tensor, b: &[f64], x: &[f64]) -> Vec<f64> {
    add(&matvec(w, x), b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
    pub weight: f64,
}

/// A finite weighted set of labelled inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub name: String,
    pub samples: Vec<Sample>,
}

impl Environment {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Self {
        Self { name: name.into(), samples }
    }

    /// Same samples with weights rescaled to sum to one.
    pub fn normalized(name: impl Into<String>, mut samples: Vec<Sample>) -> Result<Self> {
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        if !(total > 0.0) || samples.iter().any(|s| !(s.weight >= 0.0)) {
            return Err(Error::Parameter("environment weights must be non-negative with a positive sum".into()));
        }
        samples.iter_mut().for_each(|s| s.weight /= total);
        Ok(Self::new(name, samples))
    }

    pub fn expect(&self, f: impl Fn(&Sample) -> f64) -> f64 {
        self.samples.iter().map(|s| s.weight * f(s)).sum()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Parameter(format!("environment {} is empty", self.name)));
        }
        let mut total = 0.0;
        for s in &self.samples {
            if !(s.weight >= 0.0 && s.weight.is_finite()) {
                return Err(Error::Parameter(format!("environment {} has weight {}", self.name, s.weight)));
            }
            if s.x.len() != dim || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::dim(format!("environment {} has an input that is not a finite {dim}-vector", self.name)));
            }
            total += s.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("weights of environment {} sum to {total}", self.name)));
        }
        Ok(())
    }
}

/// Reference distribution, test environments, loss cap and a finite grid of
/// admissible input perturbations `x ↦ x + δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentSuite {
    pub d0: Environment,
    pub test: Vec<Environment>,
    pub l_max: f64,
    pub rho: f64,
    pub grid: Vec<Vec<f64>>,
}

impl EnvironmentSuite {
    /// Weights, dimensions, `L_max > 0` and `‖δ‖ ≤ ρ` for every grid point.
    pub fn validate(&self, dim: usize, classes: usize) -> Result<()> {
        if !(self.l_max > 0.0 && self.l_max.is_finite()) {
            return Err(Error::Parameter(format!("L_max must be positive, got {}", self.l_max)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Parameter(format!("ρ must be ≥ 0, got {}", self.rho)));
        }
        if self.test.is_empty() {
            return Err(Error::Parameter("suite has no test environments".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Parameter("perturbation grid is empty".into()));
        }
        for env in std::iter::once(&self.d0).chain(&self.test) {
            env.validate(dim)?;
            if let Some(s) = env.samples.iter().find(|s| s.y >= classes) {
                return Err(Error::Parameter(format!("label {} out of range for {classes} outputs", s.y)));
            }
        }
        for (i, d) in self.grid.iter().enumerate() {
            if d.len() != dim || d.iter().any(|v| !v.is_finite()) {
                return Err(Error::dim(format!("grid perturbation {i} is not a finite {dim}-vector")));
            }
            if norm(d) > self.rho * (1.0 + 1e-12) + 1e-15 {
                return Err(Error::Parameter(format!("grid perturbation {i} has norm {} > ρ = {}", norm(d), self.rho)));
            }
        }
        Ok(())
    }

    /// `min(L_max, ‖u − e_y‖²)`.
    pub fn loss(&self, u: &[f64], y: usize) -> f64 {
        let sq: f64 = u.iter().enumerate().map(|(i, v)| (v - if i == y { 1.0 } else { 0.0 }).powi(2)).sum();
        sq.min(self.l_max)
    }
}

/// `f(x) = W (P_L x + η P_H x) + b` with `P_L + P_H = I`.
#[derive(Clone, Debug, PartialEq)]
pub struct WitnessModel {
    pub eta: f64,
    pub head_w: Tensor,
    pub head_b: Vec<f64>,
    pub p_low: Tensor,
    pub p_high: Tensor,
    /// Operator norm of `head_w`.
    pub l_h: f64,
}

impl WitnessModel {
    pub fn new(eta: f64, head_w: Tensor, head_b: Vec<f64>, p_low: Tensor) -> Result<Self> {
        if !p_low.is_matrix() || p_low.rows() != p_low.cols() {
            return Err(Error::dim(format!("P_L must be square, got {:?}", p_low.shape())));
        }
        let eye = Tensor::identity(p_low.rows());
        let p_high = eye.zip_map(&p_low, |a, b| a - b)?;
        let l_h = spectral_norm_exact(&head_w);
        let m = Self { eta, head_w, head_b, p_low, p_high, l_h };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Parameter(format!("η must be ≥ 0, got {}", self.eta)));
        }
        let d = self.dim();
        if !self.head_w.is_matrix() || self.head_w.cols() != d || self.head_b.len() != self.head_w.rows() {
            return Err(Error::dim("head does not match the projector dimension"));
        }
        if self.p_high.shape() != [d, d] {
            return Err(Error::dim("P_H and P_L differ in shape"));
        }
        let sum = self.p_low.zip_map(&self.p_high, |a, b| a + b)?;
        if sum.max_abs_diff(&Tensor::identity(d)) > 1e-12 {
            return Err(Error::Contract("P_L + P_H is not the identity".into()));
        }
        let est = spectral_norm_estimate(&self.head_w, SPECTRAL_ITERS)?;
        if (est - self.l_h).abs() > 1e-9 {
            return Err(Error::Contract(format!("L_h = {} but the power-iteration estimate is {est}", self.l_h)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.p_low.rows()
    }

    pub fn classes(&self) -> usize {
        self.head_w.rows()
    }

    pub fn with_eta(&self, eta: f64) -> Self {
        Self { eta, ..self.clone() }
    }

    pub fn components(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (matvec(&self.p_low, x), matvec(&self.p_high, x))
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.components(x);
        let mixed: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| l + self.eta * h).collect();
        affine(&self.head_w, &self.head_b, &mixed)
    }

    /// Suite is valid for this model and every grid point has `P_L δ = 0`.
    pub fn check_suite(&self, suite: &EnvironmentSuite) -> Result<()> {
        suite.validate(self.dim(), self.classes())?;
        for (i, d) in suite.grid.iter().enumerate() {
            let low = norm(&matvec(&self.p_low, d));
            if low > 1e-12 * (1.0 + norm(d)) {
                return Err(Error::Parameter(format!("grid perturbation {i} moves the low component by {low}")));
            }
        }
        Ok(())
    }

    /// Expected loss under one environment.
    pub fn risk(&self, env: &Environment, suite: &EnvironmentSuite) -> f64 {
        env.expect(|s| suite.loss(&self.forward(&s.x), s.y))
    }
}

fn stability_over(m: &WitnessModel, env: &Environment, grid: &[Vec<f64>]) -> f64 {
    env.expect(|s| {
        let base = m.forward(&s.x);
        grid.iter().map(|d| dist(&base, &m.forward(&add(&s.x, d)))).fold(0.0, f64::max)
    })
}

/// `E_{D_0} max_δ ‖f(x) − f(x + δ)‖₂` by enumeration of the grid.
pub fn h1_measured_stability(m: &WitnessModel, suite: &EnvironmentSuite) -> f64 {
    stability_over(m, &suite.d0, &suite.grid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct H1BoundReport {
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

impl H1BoundReport {
    fn new(measured: f64, bound: f64) -> Self {
        Self { measured, bound, slack: bound - measured, holds: measured <= bound + 1e-9 }
    }
}

/// Measured stability against `L_h η ρ`.
pub fn h1_bound_check(m: &WitnessModel, suite: &EnvironmentSuite) -> Result<H1BoundReport> {
    m.validate()?;
    m.check_suite(suite)?;
    Ok(H1BoundReport::new(h1_measured_stability(m, suite), m.l_h * m.eta * suite.rho))
}

/// Perturbations that move both components: bound `L_h (ρ_L + η ρ_H)` with
/// `ρ_L`, `ρ_H` the largest component norms on the grid.
pub fn h1_general_bound_check(m: &WitnessModel, d0: &Environment, grid: &[Vec<f64>]) -> Result<H1BoundReport> {
    m.validate()?;
    d0.validate(m.dim())?;
    if grid.iter().any(|d| d.len() != m.dim()) {
        return Err(Error::dim("grid does not match the model dimension"));
    }
    let (mut rho_l, mut rho_h) = (0.0f64, 0.0f64);
    for d in grid {
        let (lo, hi) = m.components(d);
        rho_l = rho_l.max(norm(&lo));
        rho_h = rho_h.max(norm(&hi));
    }
    Ok(H1BoundReport::new(stability_over(m, d0, grid), m.l_h * (rho_l + m.eta * rho_h)))
}

/// Non-increasing piecewise-linear function of `η ≥ 0`, constant past the
/// last knot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tabulated {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl Tabulated {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::Parameter("tabulated function needs one value per knot".into()));
        }
        if knots[0] != 0.0 || knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Parameter("knots must start at 0 and increase strictly".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Parameter("tabulated values must be finite, ≥ 0 and non-increasing".into()));
        }
        Ok(Self { knots, values })
    }

    pub fn eval(&self, eta: f64) -> f64 {
        let k = &self.knots;
        if eta >= k[k.len() - 1] {
            return self.tail();
        }
        let i = k.partition_point(|&x| x <= eta) - 1;
        let t = (eta - k[i]) / (k[i + 1] - k[i]);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    pub fn tail(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `inf{η ≥ 0 : ψ(η) ≤ level}`, infinite when never reached.
    pub fn first_at_most(&self, level: f64) -> f64 {
        if self.values[0] <= level {
            return 0.0;
        }
        for i in 1..self.knots.len() {
            let (v0, v1) = (self.values[i - 1], self.values[i]);
            if v1 <= level {
                let (e0, e1) = (self.knots[i - 1], self.knots[i]);
                return (e0 + (v0 - level) / (v0 - v1) * (e1 - e0)).min(e1);
            }
        }
        f64::INFINITY
    }
}

/// Fit and witness-environment lower bounds with the slice `(α, ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundFunctions {
    pub psi_fit: Tabulated,
    pub psi_e1: Tabulated,
    pub alpha: f64,
    pub epsilon: f64,
}

impl BoundFunctions {
    pub fn eta_min(&self) -> f64 {
        self.psi_fit.first_at_most(self.alpha)
    }

    /// `ε / (L_h ρ)`; infinite when `L_h ρ = 0`.
    pub fn eta_max(&self, l_h: f64, rho: f64) -> f64 {
        let scale = l_h * rho;
        if scale > 0.0 {
            self.epsilon / scale
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceFloor {
    pub alpha: f64,
    pub epsilon: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub feasible: bool,
    /// `ψ_e1(η_max)` on a feasible slice.
    pub floor: Option<f64>,
    pub sweep_points: usize,
    pub sweep_feasible: bool,
    /// Smallest `ψ_e1` over feasible sweep points.
    pub sweep_min_e1: Option<f64>,
    /// Sweep and closed form agree on feasibility and the floor.
    pub agrees: bool,
}

pub const SWEEP_POINTS: usize = 1000;

/// Closed-form `η_min`, `η_max` and floor, checked against a dense `η` sweep
/// where a point is feasible when `ψ_fit(η) ≤ α` and `L_h η ρ ≤ ε`.
pub fn slice_floor(bounds: &BoundFunctions, l_h: f64, rho: f64) -> Result<SliceFloor> {
    if !(bounds.alpha > 0.0) || !(bounds.epsilon >= 0.0) {
        return Err(Error::Parameter(format!("slice needs α > 0 and ε ≥ 0, got ({}, {})", bounds.alpha, bounds.epsilon)));
    }
    if !(l_h >= 0.0 && rho >= 0.0) {
        return Err(Error::Parameter("L_h and ρ must be ≥ 0".into()));
    }
    let eta_min = bounds.eta_min();
    let eta_max = bounds.eta_max(l_h, rho);
    let feasible = eta_min.is_finite() && eta_min <= eta_max;
    let floor = feasible.then(|| if eta_max.is_finite() { bounds.psi_e1.eval(eta_max) } else { bounds.psi_e1.tail() });

    let mut top = bounds.psi_fit.knots[bounds.psi_fit.knots.len() - 1].max(bounds.psi_e1.knots[bounds.psi_e1.knots.len() - 1]);
    for e in [eta_min, eta_max] {
        if e.is_finite() {
            top = top.max(e);
        }
    }
    let top = if top > 0.0 { 1.25 * top } else { 1.0 };
    let mut etas: Vec<f64> = (0..SWEEP_POINTS).map(|j| top * j as f64 / (SWEEP_POINTS - 1) as f64).collect();
    etas.extend([eta_min, eta_max].into_iter().filter(|e| e.is_finite()));

    let tol = 1e-12;
    let ok = |eta: f64| bounds.psi_fit.eval(eta) <= bounds.alpha + tol && l_h * eta * rho <= bounds.epsilon + tol;
    let sweep_min_e1 = etas.iter().filter(|&&e| ok(e)).map(|&e| bounds.psi_e1.eval(e)).reduce(f64::min);
    let sweep_feasible = sweep_min_e1.is_some();
    let agrees = sweep_feasible == feasible
        && match (floor, sweep_min_e1) {
            (Some(f), Some(m)) => m >= f - 1e-9,
            _ => true,
        };
    Ok(SliceFloor {
        alpha: bounds.alpha,
        epsilon: bounds.epsilon,
        eta_min,
        eta_max,
        feasible,
        floor,
        sweep_points: etas.len(),
        sweep_feasible,
        sweep_min_e1,
        agrees,
    })
}

/// [`slice_floor`] with `L_h` from the model and `ρ` from the suite.
pub fn h1_slice_floor(bounds: &BoundFunctions, m: &WitnessModel, suite: &EnvironmentSuite) -> Result<SliceFloor> {
    slice_floor(bounds, m.l_h, suite.rho)
}

/// Running minimum of the measured risk over `etas`, a non-increasing lower
/// bound on the risk at every listed `η`. `env = None` uses `D_0`.
pub fn realized_psi(m: &WitnessModel, suite: &EnvironmentSuite, env: Option<usize>, etas: &[f64]) -> Result<Tabulated> {
    let env = match env {
        None => &suite.d0,
        Some(i) => suite.test.get(i).ok_or_else(|| Error::Parameter(format!("no test environment {i}")))?,
    };
    let mut best = f64::INFINITY;
    let values = etas
        .iter()
        .map(|&e| {
            best = best.min(m.with_eta(e).risk(env, suite));
            best
        })
        .collect();
    Tabulated::new(etas.to_vec(), values)
}
