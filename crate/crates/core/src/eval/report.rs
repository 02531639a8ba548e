use super::split::SplitPlan;
use super::suite::{run_perturb_suite, verify_frozen, PerturbKind};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::Model;

pub const TRIOBJ_MASK_RATES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Seeds as rows, metrics as columns, plus a `mean±std` summary row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<(u64, Vec<f64>)>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, seed: u64, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::dim(format!("row has {} values for {} columns", values.len(), self.columns.len())));
        }
        self.rows.push((seed, values));
        Ok(())
    }

    pub fn summary(&self) -> Vec<(f64, f64)> {
        (0..self.columns.len())
            .map(|j| mean_std(&self.rows.iter().map(|(_, r)| r[j]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("seed,{}\n", self.columns.join(","));
        for (seed, r) in &self.rows {
            let cells: Vec<String> = r.iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&format!("{seed},{}\n", cells.join(",")));
        }
        let cells: Vec<String> = self.summary().iter().map(|(m, s)| format!("{m:?}±{s:?}")).collect();
        out.push_str(&format!("summary,{}\n", cells.join(",")));
        out
    }
}

/// One seed's tri-objective metrics, as fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct TriObjRow {
    pub seed: u64,
    pub fit: f64,
    pub ood: Vec<(String, f64)>,
    pub ood_worst: f64,
    pub perturb: Vec<(f64, f64)>,
    pub perturb_mean: f64,
    pub avg: f64,
}

impl TriObjRow {
    pub fn from_parts(seed: u64, fit: f64, ood: Vec<(String, f64)>, perturb: Vec<(f64, f64)>) -> Result<Self> {
        if ood.is_empty() || perturb.is_empty() {
            return Err(Error::Protocol("tri-objective row needs OOD buckets and perturbation rates".into()));
        }
        let ood_worst = ood.iter().map(|(_, a)| *a).fold(f64::INFINITY, f64::min);
        let perturb_mean = perturb.iter().map(|(_, a)| a).sum::<f64>() / perturb.len() as f64;
        let avg = (fit + ood_worst + perturb_mean) / 3.0;
        Ok(Self { seed, fit, ood, ood_worst, perturb, perturb_mean, avg })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<TriObjRow>,
}

impl MetricsReport {
    pub fn push(&mut self, row: TriObjRow) -> Result<()> {
        if let Some(first) = self.rows.first() {
            let same_ood = first.ood.iter().map(|o| &o.0).eq(row.ood.iter().map(|o| &o.0));
            let same_rates = first.perturb.iter().map(|p| p.0.to_bits()).eq(row.perturb.iter().map(|p| p.0.to_bits()));
            if !same_ood || !same_rates {
                return Err(Error::Protocol("report rows disagree on buckets or rates".into()));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn table(&self) -> Table {
        let Some(first) = self.rows.first() else { return Table::new(Vec::new()) };
        let mut cols = vec!["fit".to_string()];
        cols.extend(first.ood.iter().map(|(n, _)| n.clone()));
        cols.push("ood_worst".into());
        cols.extend(first.perturb.iter().map(|(r, _)| format!("perturb@{r}")));
        cols.extend(["perturb_mean".to_string(), "avg".to_string()]);
        let mut t = Table::new(cols);
        for r in &self.rows {
            let mut v = vec![r.fit];
            v.extend(r.ood.iter().map(|o| o.1));
            v.push(r.ood_worst);
            v.extend(r.perturb.iter().map(|p| p.1));
            v.extend([r.perturb_mean, r.avg]);
            t.push(r.seed, v).expect("row width matches header");
        }
        t
    }

    pub fn to_csv(&self) -> String {
        self.table().to_csv()
    }

    /// Fit, OOD-worst, Perturb-mean and Avg in percent, mean ± std over seeds.
    pub fn to_text(&self) -> String {
        let col = |f: fn(&TriObjRow) -> f64| mean_std(&self.rows.iter().map(|r| 100.0 * f(r)).collect::<Vec<_>>());
        let mut out = format!("{:<14}{:>16}\n", "metric", "mean ± std");
        for (name, (m, s)) in [
            ("Fit", col(|r| r.fit)),
            ("OOD-worst", col(|r| r.ood_worst)),
            ("Perturb-mean", col(|r| r.perturb_mean)),
            ("Avg", col(|r| r.avg)),
        ] {
            out.push_str(&format!("{name:<14}{m:>9.2} ± {s:<5.2}\n"));
        }
        out.push_str(&format!("seeds: {}\n", self.rows.len()));
        out
    }
}

/// Evaluates one selected model: clean ID-test accuracy, worst clean OOD
/// bucket, and mean accuracy under ID-test feature masking.
pub fn triobj_report(
    model: &Model,
    plan: &SplitPlan,
    g: &Graph,
    mask_rates: &[f64],
    trials: usize,
) -> Result<TriObjRow> {
    plan.check()?;
    if plan.ood.is_empty() {
        return Err(Error::Protocol("split plan carries no OOD buckets".into()));
    }
    let hash = model.state_hash();
    let pred = model.predict(g)?;
    let acc = |nodes: &[usize]| crate::model::accuracy_of(&pred, g, nodes);
    if plan.test.is_empty() {
        return Err(Error::Protocol("ID-test is empty".into()));
    }
    let mut ood = Vec::new();
    for (name, nodes) in &plan.ood {
        if nodes.is_empty() {
            return Err(Error::Protocol(format!("OOD bucket {name} is empty")));
        }
        ood.push((name.clone(), acc(nodes)));
    }
    let perturb = run_perturb_suite(model, g, &plan.test, mask_rates, PerturbKind::Feature, trials, plan.seed)?
        .into_iter()
        .map(|r| (r.rate, r.mean))
        .collect();
    verify_frozen(model, &hash, "the tri-objective evaluation")?;
    TriObjRow::from_parts(plan.seed, acc(&plan.test), ood, perturb)
}

/// Clean accuracy on ID-test and on each OOD bucket.
pub fn ood_accuracies(model: &Model, plan: &SplitPlan, g: &Graph) -> Result<Vec<(String, f64)>> {
    plan.check()?;
    let hash = model.state_hash();
    let pred = model.predict(g)?;
    let mut out = vec![("id_test".to_string(), crate::model::accuracy_of(&pred, g, &plan.test))];
    for (name, nodes) in &plan.ood {
        out.push((name.clone(), crate::model::accuracy_of(&pred, g, nodes)));
    }
    verify_frozen(model, &hash, "OOD evaluation")?;
    Ok(out)
}
