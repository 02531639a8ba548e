//! Randomized verification over independent seeded instances, reported as
//! one plain-text table per inequality.

use super::instances::{aligned_witness, random_routed, random_slice, random_witness, separation_instance};
use super::routed::{h2_coverage_selection, h2_joint_and_separation, h2_stability_decomposition, JointCaps};
use super::witness::{h1_bound_check, h1_general_bound_check, norm, slice_floor};
use crate::error::Result;
use crate::kernel::{splitmix64, TrainRng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyConfig {
    pub instances: usize,
    pub seed: u64,
    /// Multiplies every upper-bound right-hand side. `1.0` except in
    /// negative controls.
    pub rhs_scale: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { instances: 100, seed: 0, rhs_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub seed: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoremTable {
    pub name: &'static str,
    pub relation: &'static str,
    pub rows: Vec<CheckRow>,
}

impl TheoremTable {
    fn new(name: &'static str, relation: &'static str) -> Self {
        Self { name, relation, rows: Vec::new() }
    }

    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "== {}: {} ({} instances, {} violations)\n",
            self.name,
            self.relation,
            self.rows.len(),
            self.violations()
        );
        out.push_str(&format!("{:>20} {:>16} {:>16} {:>16}  {:<6} {}\n", "seed", "lhs", "rhs", "slack", "result", "note"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:>20} {:>16.9e} {:>16.9e} {:>16.9e}  {:<6} {}\n",
                r.seed,
                r.lhs,
                r.rhs,
                r.slack,
                if r.pass { "pass" } else { "FAIL" },
                r.note
            ));
        }
        out
    }

    /// `lhs ≤ scale·rhs + tol`.
    fn push_le(&mut self, seed: u64, lhs: f64, rhs: f64, scale: f64, tol: f64, note: impl Into<String>) {
        let rhs = scale * rhs;
        self.rows.push(CheckRow { seed, lhs, rhs, slack: rhs - lhs, pass: lhs <= rhs + tol, note: note.into() });
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub tables: Vec<TheoremTable>,
}

impl VerifyReport {
    pub fn violations(&self) -> usize {
        self.tables.iter().map(TheoremTable::violations).sum()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "theory verification: instances={} seed={} rhs_scale={:?}\n\n",
            self.config.instances, self.config.seed, self.config.rhs_scale
        );
        for t in &self.tables {
            out.push_str(&t.to_text());
            out.push('\n');
        }
        let checks: usize = self.tables.iter().map(|t| t.rows.len()).sum();
        out.push_str(&format!("{} checks, {} violations\n", checks, self.violations()));
        out
    }
}

/// Seed of instance `i` of the suite tagged `tag`.
pub fn instance_seed(seed: u64, tag: u64, i: usize) -> u64 {
    let mut s = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (i as u64).rotate_left(32);
    splitmix64(&mut s)
}

pub fn run_verification(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let n = cfg.instances;
    let scale = cfg.rhs_scale;
    let seeds = |tag: u64| (0..n).map(move |i| instance_seed(cfg.seed, tag, i));
    let mut tables = Vec::new();

    let mut t = TheoremTable::new("h1-stability", "R_stab <= L_h*eta*rho + 1e-9");
    for s in seeds(1) {
        let (m, suite) = random_witness(s)?;
        let r = h1_bound_check(&m, &suite)?;
        t.push_le(s, r.measured, r.bound, scale, 1e-9, format!("eta={:.3}", m.eta));
    }
    tables.push(t);

    let mut t = TheoremTable::new("h1-general", "R_stab <= L_h*(rho_L + eta*rho_H) + 1e-9");
    for s in seeds(2) {
        let (m, suite) = random_witness(s)?;
        let mut rng = TrainRng::new(s ^ 0xa5a5);
        let grid: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                let v: Vec<f64> = (0..m.dim()).map(|_| rng.normal()).collect();
                let k = suite.rho * rng.uniform() / norm(&v);
                v.iter().map(|x| x * k).collect()
            })
            .collect();
        let r = h1_general_bound_check(&m, &suite.d0, &grid)?;
        t.push_le(s, r.measured, r.bound, scale, 1e-9, "");
    }
    tables.push(t);

    let mut t = TheoremTable::new("h1-tightness", "R_stab <= L_h*eta*rho, gap <= 1e-6 with aligned delta");
    for s in seeds(3) {
        let (m, suite) = aligned_witness(s)?;
        let r = h1_bound_check(&m, &suite)?;
        t.push_le(s, r.measured, r.bound, scale, 1e-9, "");
        let row = t.rows.last_mut().expect("just pushed");
        row.pass &= r.bound - r.measured <= 1e-6;
    }
    tables.push(t);

    let mut t = TheoremTable::new("h1-slice-floor", "closed-form feasibility and floor match the eta sweep");
    for s in seeds(4) {
        let (bounds, l_h, rho) = random_slice(s)?;
        let f = slice_floor(&bounds, l_h, rho)?;
        let (lhs, rhs) = (f.sweep_min_e1.unwrap_or(f64::NAN), f.floor.unwrap_or(f64::NAN));
        let note = if f.feasible { "feasible" } else { "infeasible" };
        t.rows.push(CheckRow { seed: s, lhs, rhs, slack: lhs - rhs, pass: f.agrees, note: note.into() });
    }
    tables.push(t);

    let mut t = TheoremTable::new("h2-coverage", "R_ood <= beta_cov + L_max*sup delta_sel + 1e-12");
    for s in seeds(5) {
        let (rf, suite) = random_routed(s)?;
        let r = h2_coverage_selection(&rf, &suite)?;
        t.push_le(s, r.ood_risk, r.bound, scale, 1e-12, format!("K={}", rf.k()));
        let row = t.rows.last_mut().expect("just pushed");
        row.pass &= scale != 1.0 || r.holds;
    }
    tables.push(t);

    let mut t = TheoremTable::new("h2-stability", "R_stab <= R_base + L_F^B*R_route + 1e-12");
    for s in seeds(6) {
        let (rf, suite) = random_routed(s)?;
        let r = h2_stability_decomposition(&rf, &suite)?;
        t.push_le(s, r.r_stab, r.bound, scale, 1e-12, format!("K={} route={:.3}", rf.k(), r.r_route));
    }
    tables.push(t);

    let mut ood = TheoremTable::new("h2-joint-ood", "R_ood <= beta_cov + L_max*cap_sel + 1e-12");
    let mut stab = TheoremTable::new("h2-joint-stab", "R_stab <= cap_base + cap_LF*cap_route + 1e-12");
    for s in seeds(7) {
        let (rf, suite) = random_routed(s)?;
        let cov = h2_coverage_selection(&rf, &suite)?;
        let st = h2_stability_decomposition(&rf, &suite)?;
        let mut rng = TrainRng::new(s ^ 0x5a5a);
        let m = JointCaps::measured(&cov, &st);
        let caps = JointCaps {
            delta_sel: (m.delta_sel * (1.0 + rng.uniform())).min(1.0),
            rho_route: m.rho_route * (1.0 + rng.uniform()),
            eps_base: m.eps_base * (1.0 + rng.uniform()),
            l_f: m.l_f * (1.0 + rng.uniform()),
        };
        let (bounds, l_h, rho) = random_slice(s)?;
        let slice = slice_floor(&bounds, l_h, rho)?;
        let r = h2_joint_and_separation(&rf, &suite, &caps, &slice)?;
        let note = match r.separated {
            Some(true) => "separated",
            Some(false) => "separation FAILED",
            None => "",
        };
        ood.push_le(s, r.ood_risk, r.ood_bound, scale, 1e-12, note);
        ood.rows.last_mut().expect("just pushed").pass &= r.caps_hold && r.separated != Some(false);
        stab.push_le(s, r.r_stab, r.stab_bound, scale, 1e-12, "");
    }
    tables.push(ood);
    tables.push(stab);

    let mut t = TheoremTable::new("h2-separation", "routed R_ood < H1 floor on the constructed slice");
    let (rf, suite, slice) = separation_instance()?;
    let cov = h2_coverage_selection(&rf, &suite)?;
    let st = h2_stability_decomposition(&rf, &suite)?;
    let r = h2_joint_and_separation(&rf, &suite, &JointCaps::measured(&cov, &st), &slice)?;
    let floor = scale * slice.floor.unwrap_or(f64::NAN);
    t.rows.push(CheckRow {
        seed: 0,
        lhs: r.ood_risk,
        rhs: floor,
        slack: floor - r.ood_risk,
        pass: r.separated == Some(true) && r.ood_risk < floor,
        note: format!("cond={} feasible={}", r.separation_condition, r.slice_feasible),
    });
    tables.push(t);

    Ok(VerifyReport { config: *cfg, tables })
}
