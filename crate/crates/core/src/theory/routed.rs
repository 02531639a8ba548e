use super::witness::{affine, dist, EnvironmentSuite, SliceFloor};
use crate::error::{Error, Result};
use crate::kernel::Tensor;
use crate::model::argmax;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RouterKind {
    /// Argmax of the gate scores, ties to the lowest index.
    Hard,
    /// `softmax(scores / τ)`.
    Soft { tau: f64 },
}

/// Linear gate `s(x) = G x + g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Router {
    pub gate_w: Tensor,
    pub gate_b: Vec<f64>,
    pub kind: RouterKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RoutingState {
    Index(usize),
    Mixture(Vec<f64>),
}

impl RoutingState {
    /// Discretization to one mechanism, ties to the lowest index.
    pub fn top1(&self) -> usize {
        match self {
            RoutingState::Index(k) => *k,
            RoutingState::Mixture(p) => argmax(p),
        }
    }

    /// Discrete metric for indices, total variation for mixtures.
    pub fn distance(&self, other: &RoutingState) -> f64 {
        match (self, other) {
            (RoutingState::Index(a), RoutingState::Index(b)) => f64::from(a != b),
            (RoutingState::Mixture(p), RoutingState::Mixture(q)) => {
                0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
            }
            _ => panic!("routing states from different router kinds"),
        }
    }
}

impl Router {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        affine(&self.gate_w, &self.gate_b, x)
    }

    pub fn route(&self, x: &[f64]) -> RoutingState {
        let s = self.scores(x);
        match self.kind {
            RouterKind::Hard => RoutingState::Index(argmax(&s)),
            RouterKind::Soft { tau } => {
                let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| ((v - m) / tau).exp()).collect();
                let z: f64 = e.iter().sum();
                RoutingState::Mixture(e.into_iter().map(|v| v / z).collect())
            }
        }
    }
}

/// Affine mechanism `f⁽ᵏ⁾(x) = W_k x + b_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mechanism {
    pub w: Tensor,
    pub b: Vec<f64>,
}

impl Mechanism {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        affine(&self.w, &self.b, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoutedFamily {
    pub mechanisms: Vec<Mechanism>,
    pub router: Router,
}

impl RoutedFamily {
    pub fn new(mechanisms: Vec<Mechanism>, router: Router) -> Result<Self> {
        let rf = Self { mechanisms, router };
        rf.validate()?;
        Ok(rf)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.mechanisms.first() else {
            return Err(Error::Parameter("routed family has no mechanisms".into()));
        };
        if !first.w.is_matrix() || first.b.len() != first.w.rows() {
            return Err(Error::dim("mechanism 0 has mismatched weight and bias"));
        }
        if let Some(k) = self.mechanisms.iter().position(|m| m.w.shape() != first.w.shape() || m.b.len() != first.b.len()) {
            return Err(Error::dim(format!("mechanism {k} has a different signature from mechanism 0")));
        }
        let g = &self.router.gate_w;
        if !g.is_matrix() || g.rows() != self.k() || g.cols() != self.in_dim() || self.router.gate_b.len() != self.k() {
            return Err(Error::dim("router gate must be K × input dim"));
        }
        if let RouterKind::Soft { tau } = self.router.kind {
            if !(tau > 0.0) {
                return Err(Error::Parameter(format!("router τ must be > 0, got {tau}")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.mechanisms.len()
    }

    pub fn in_dim(&self) -> usize {
        self.mechanisms[0].w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.mechanisms[0].w.rows()
    }

    /// `F(r, x)`: the selected mechanism, or the mixture of all of them.
    pub fn execute(&self, r: &RoutingState, x: &[f64]) -> Vec<f64> {
        match r {
            RoutingState::Index(k) => self.mechanisms[*k].apply(x),
            RoutingState::Mixture(p) => {
                let mut out = vec![0.0; self.out_dim()];
                for (m, &pk) in self.mechanisms.iter().zip(p) {
                    for (o, v) in out.iter_mut().zip(m.apply(x)) {
                        *o += pk * v;
                    }
                }
                out
            }
        }
    }

    /// `F(r(x), x)`.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.execute(&self.router.route(x), x)
    }

    /// `f^{κ(r(x))}(x)`.
    pub fn routed(&self, x: &[f64]) -> Vec<f64> {
        self.mechanisms[self.router.route(x).top1()].apply(x)
    }

    /// `L_F(x)`: the largest output distance between two mechanisms at `x`.
    /// For the discrete metric this is the supremum over index pairs; for
    /// mixtures under total variation the ratio is maximized at a pair of
    /// vertices, so the same value is exact.
    pub fn envelope(&self, x: &[f64]) -> f64 {
        let outs: Vec<Vec<f64>> = self.mechanisms.iter().map(|m| m.apply(x)).collect();
        let mut best = 0.0f64;
        for i in 0..outs.len() {
            for j in i + 1..outs.len() {
                best = best.max(dist(&outs[i], &outs[j]));
            }
        }
        best
    }

    fn check(&self, suite: &EnvironmentSuite) -> Result<()> {
        self.validate()?;
        suite.validate(self.in_dim(), self.out_dim())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    /// `risks[e][k]`: expected loss of mechanism `k` in test environment `e`.
    pub risks: Vec<Vec<f64>>,
    pub k_star: Vec<usize>,
    pub beta_cov: f64,
    pub delta_sel: Vec<f64>,
    /// Routed predictor risk per test environment.
    pub env_risk: Vec<f64>,
    pub ood_risk: f64,
    pub bound: f64,
    pub slack: f64,
    /// The bound holds overall and per environment.
    pub holds: bool,
}

/// Coverage, selection error and worst-environment risk of the top-1 routed
/// predictor, all by enumeration of the finite environments.
pub fn h2_coverage_selection(rf: &RoutedFamily, suite: &EnvironmentSuite) -> Result<CoverageReport> {
    rf.check(suite)?;
    let mut risks = Vec::new();
    let mut k_star = Vec::new();
    let mut delta_sel = Vec::new();
    let mut env_risk = Vec::new();
    for env in &suite.test {
        let r: Vec<f64> = rf.mechanisms.iter().map(|m| env.expect(|s| suite.loss(&m.apply(&s.x), s.y))).collect();
        let ks = k_star_of(&r);
        delta_sel.push(env.expect(|s| f64::from(rf.router.route(&s.x).top1() != ks)).min(1.0));
        env_risk.push(env.expect(|s| suite.loss(&rf.routed(&s.x), s.y)));
        k_star.push(ks);
        risks.push(r);
    }
    let beta_cov = risks.iter().zip(&k_star).map(|(r, &k)| r[k]).fold(f64::NEG_INFINITY, f64::max);
    let ood_risk = env_risk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst_sel = delta_sel.iter().copied().fold(0.0, f64::max);
    let bound = beta_cov + suite.l_max * worst_sel;
    let per_env = env_risk.iter().zip(&delta_sel).all(|(r, d)| *r <= beta_cov + suite.l_max * d + 1e-12);
    Ok(CoverageReport {
        risks,
        k_star,
        beta_cov,
        delta_sel,
        env_risk,
        ood_risk,
        bound,
        slack: bound - ood_risk,
        holds: per_env && ood_risk <= bound + 1e-12,
    })
}

/// Oracle mechanism; ties go to the lowest index.
fn k_star_of(r: &[f64]) -> usize {
    (0..r.len()).fold(0, |best, k| if r[k] < r[best] { k } else { best })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub r_stab: f64,
    pub r_base: f64,
    pub r_route: f64,
    /// `max` over the support of `D_0` of `max_δ L_F(x + δ)`.
    pub l_f_b: f64,
    /// `E_{D_0} max_δ L_F(x + δ)`. Too small to bound `R_stab` in general:
    /// the expectation of a product is not the product of expectations.
    pub l_f_b_mean: f64,
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Output change, routing-fixed change and routing drift as `E_{D_0} max_δ`
/// over the grid, and the execution envelope taken uniformly over the
/// perturbed reference inputs.
pub fn h2_stability_decomposition(rf: &RoutedFamily, suite: &EnvironmentSuite) -> Result<StabilityReport> {
    rf.check(suite)?;
    let (mut r_stab, mut r_base, mut r_route, mut l_f_b, mut l_f_b_mean) = (0.0, 0.0, 0.0, 0.0f64, 0.0);
    for s in &suite.d0.samples {
        let r = rf.router.route(&s.x);
        let out = rf.execute(&r, &s.x);
        let (mut stab, mut base, mut route, mut env) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for d in &suite.grid {
            let x2: Vec<f64> = s.x.iter().zip(d).map(|(a, b)| a + b).collect();
            let r2 = rf.router.route(&x2);
            stab = stab.max(dist(&out, &rf.execute(&r2, &x2)));
            base = base.max(dist(&out, &rf.execute(&r, &x2)));
            route = route.max(r.distance(&r2));
            env = env.max(rf.envelope(&x2));
        }
        r_stab += s.weight * stab;
        r_base += s.weight * base;
        r_route += s.weight * route;
        if s.weight > 0.0 {
            l_f_b = l_f_b.max(env);
        }
        l_f_b_mean += s.weight * env;
    }
    let bound = r_base + l_f_b * r_route;
    Ok(StabilityReport { r_stab, r_base, r_route, l_f_b, l_f_b_mean, bound, slack: bound - r_stab, holds: r_stab <= bound + 1e-12 })
}

/// Caps on selection error, routing drift, routing-fixed sensitivity and
/// the execution envelope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointCaps {
    pub delta_sel: f64,
    pub rho_route: f64,
    pub eps_base: f64,
    pub l_f: f64,
}

impl JointCaps {
    /// Caps equal to the measured quantities.
    pub fn measured(cov: &CoverageReport, stab: &StabilityReport) -> Self {
        Self {
            delta_sel: cov.delta_sel.iter().copied().fold(0.0, f64::max),
            rho_route: stab.r_route,
            eps_base: stab.r_base,
            l_f: stab.l_f_b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointReport {
    pub caps: JointCaps,
    /// Measured quantities are within the caps.
    pub caps_hold: bool,
    pub r_fit: f64,
    pub beta_cov: f64,
    pub ood_risk: f64,
    pub ood_bound: f64,
    pub r_stab: f64,
    pub stab_bound: f64,
    pub floor: Option<f64>,
    /// `R_fit ≤ α` and `R_stab ≤ ε` for the routed predictor.
    pub slice_feasible: bool,
    /// `β_cov + L_max δ̄_sel < β̲₁`.
    pub separation_condition: bool,
    /// Whether the measured worst-environment risk is below the floor, when
    /// caps, slice and separation condition all hold.
    pub separated: Option<bool>,
}

impl JointReport {
    pub fn ood_holds(&self) -> bool {
        !self.caps_hold || self.ood_risk <= self.ood_bound + 1e-12
    }

    pub fn stab_holds(&self) -> bool {
        !self.caps_hold || self.r_stab <= self.stab_bound + 1e-12
    }

    pub fn holds(&self) -> bool {
        self.ood_holds() && self.stab_holds() && self.separated != Some(false)
    }
}

/// Sufficient bounds under the caps and the comparison with an H1 floor.
pub fn h2_joint_and_separation(
    rf: &RoutedFamily,
    suite: &EnvironmentSuite,
    caps: &JointCaps,
    slice: &SliceFloor,
) -> Result<JointReport> {
    let cov = h2_coverage_selection(rf, suite)?;
    let stab = h2_stability_decomposition(rf, suite)?;
    let worst_sel = cov.delta_sel.iter().copied().fold(0.0, f64::max);
    let caps_hold = worst_sel <= caps.delta_sel
        && stab.r_route <= caps.rho_route
        && stab.r_base <= caps.eps_base
        && stab.l_f_b <= caps.l_f;
    let r_fit = suite.d0.expect(|s| suite.loss(&rf.predict(&s.x), s.y));
    let ood_bound = cov.beta_cov + suite.l_max * caps.delta_sel;
    let slice_feasible = r_fit <= slice.alpha && stab.r_stab <= slice.epsilon;
    let separation_condition = slice.floor.is_some_and(|f| ood_bound < f);
    let separated = (caps_hold && slice_feasible && separation_condition).then(|| cov.ood_risk < slice.floor.unwrap());
    Ok(JointReport {
        caps: *caps,
        caps_hold,
        r_fit,
        beta_cov: cov.beta_cov,
        ood_risk: cov.ood_risk,
        ood_bound,
        r_stab: stab.r_stab,
        stab_bound: caps.eps_base + caps.l_f * caps.rho_route,
        floor: slice.floor,
        slice_feasible,
        separation_condition,
        separated,
    })
}
