//! Mixture-of-experts message passing.
//!
//! Each layer computes `z_v = ψ([h_v ‖ mean_{u∈N(v)} h_u])`, routes with
//! `π(v) = softmax(g(h_v))` (Gumbel-softmax while training) and outputs
//! `relu(Σ_k π_k(v) f_k(z_v))`, optionally followed by batch norm.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kernel::{gumbel_softmax_sample, BatchStats, Csr, Tape, Tensor, TrainRng, Var};

pub type ParamMap = BTreeMap<String, Tensor>;
pub type VarMap = BTreeMap<String, Var>;

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Gumbel routing, dropout and batch statistics.
    Train,
    /// Softmax routing, no dropout, running statistics. Consumes no randomness.
    Deploy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub k: usize,
    pub tau: f64,
    pub dropout: f64,
    pub moe_layers: Vec<usize>,
    pub batch_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 768,
            k: 3,
            tau: 1.0,
            dropout: 0.0,
            moe_layers: vec![1],
            batch_norm: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("encoder needs at least one layer and a positive width".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("K must be ≥ 1".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if let Some(l) = self.moe_layers.iter().find(|&&l| l >= self.num_layers) {
            return Err(Error::Config(format!("moe layer {l} out of range for {} layers", self.num_layers)));
        }
        Ok(())
    }

    /// Experts at `layer`: `k` for MoE layers, 1 otherwise.
    pub fn experts_at(&self, layer: usize) -> usize {
        if self.moe_layers.contains(&layer) {
            self.k
        } else {
            1
        }
    }

    pub fn input_dim_at(&self, layer: usize, in_dim: usize) -> usize {
        if layer == 0 {
            in_dim
        } else {
            self.hidden_dim
        }
    }

    fn has_bn(&self, layer: usize) -> bool {
        self.batch_norm && layer + 1 < self.num_layers
    }
}

pub(crate) fn key(layer: usize, rest: &str) -> String {
    format!("enc.{layer}.{rest}")
}

pub fn expert_key(layer: usize, k: usize, part: &str) -> String {
    key(layer, &format!("expert.{k}.{part}"))
}

/// Uniform in `±1/√fan_in`, zero bias.
pub fn init_linear(params: &mut ParamMap, name: &str, fan_in: usize, fan_out: usize, rng: &mut TrainRng) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| (2.0 * rng.uniform() - 1.0) * bound)
        .collect();
    params.insert(format!("{name}.w"), Tensor::from_parts(vec![fan_in, fan_out], w));
    params.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
}

/// Parameters and running statistics for one encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub cfg: EncoderConfig,
    pub in_dim: usize,
    pub params: ParamMap,
}

impl EncoderState {
    pub fn init(cfg: EncoderConfig, in_dim: usize, rng: &mut TrainRng) -> Result<Self> {
        cfg.validate()?;
        if in_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut params = ParamMap::new();
        let h = cfg.hidden_dim;
        for l in 0..cfg.num_layers {
            let d = cfg.input_dim_at(l, in_dim);
            init_linear(&mut params, &key(l, "psi"), 2 * d, h, rng);
            let k = cfg.experts_at(l);
            for e in 0..k {
                init_linear(&mut params, &key(l, &format!("expert.{e}")), h, h, rng);
            }
            if k > 1 {
                init_linear(&mut params, &key(l, "router"), d, k, rng);
            }
            if cfg.has_bn(l) {
                params.insert(key(l, "bn.gamma"), Tensor::full(&[1, h], 1.0));
                params.insert(key(l, "bn.beta"), Tensor::zeros(&[1, h]));
                params.insert(key(l, "bn.running_mean"), Tensor::zeros(&[1, h]));
                params.insert(key(l, "bn.running_var"), Tensor::full(&[1, h], 1.0));
            }
        }
        Ok(Self { cfg, in_dim, params })
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Dimension(format!("missing encoder parameter {name}")))
    }

    /// Checks that every tensor has the shape implied by the config.
    pub fn check_shapes(&self) -> Result<()> {
        let mut rng = TrainRng::new(0);
        let fresh = Self::init(self.cfg.clone(), self.in_dim, &mut rng)?;
        for (name, t) in &fresh.params {
            let have = self.param(name)?;
            if have.shape() != t.shape() {
                return Err(Error::Dimension(format!(
                    "{name}: expected {:?}, found {:?}",
                    t.shape(),
                    have.shape()
                )));
            }
        }
        for name in self.params.keys() {
            if !fresh.params.contains_key(name) {
                return Err(Error::Dimension(format!("unexpected encoder parameter {name}")));
            }
        }
        Ok(())
    }

    fn bind_constants(&self, tape: &mut Tape) -> VarMap {
        bind(tape, &self.params, |_| false)
    }

    /// Router output for a single node representation.
    pub fn route(&self, h_v: &[f64], layer: usize, mode: Mode, rng: &mut TrainRng) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let h = tape.constant(Tensor::matrix(1, h_v.len(), h_v.to_vec())?);
        let pi = route_on_tape(&mut tape, &vars, &self.cfg, layer, h, mode, rng)?;
        Ok(tape.value(pi).data().to_vec())
    }

    pub fn neighborhood_summary(&self, g: &Graph, h: &Tensor, layer: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let hv = tape.constant(h.clone());
        let z = summary_on_tape(&mut tape, &vars, layer, g.adjacency(), hv)?;
        Ok(tape.value(z).clone())
    }

    /// Pre-activation mixture `Σ_k π_k f_k(z)` and its rectified output.
    pub fn moe_update(&self, z: &Tensor, routing: &Tensor, layer: usize) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let zv = tape.constant(z.clone());
        let pi = tape.constant(routing.clone());
        let pre = mixture_on_tape(&mut tape, &vars, &self.cfg, layer, zv, pi)?;
        let out = tape.relu(pre);
        Ok((tape.value(pre).clone(), tape.value(out).clone()))
    }

    /// Explicit `(W, b)` of `Σ_k π_k f_k` for one routing vector.
    pub fn effective_operator(&self, routing: &[f64], layer: usize) -> Result<(Tensor, Tensor)> {
        let k = self.cfg.experts_at(layer);
        if routing.len() != k {
            return Err(Error::dim(format!("routing has {} entries for {k} experts", routing.len())));
        }
        let h = self.cfg.hidden_dim;
        let mut w = Tensor::zeros(&[h, h]);
        let mut b = Tensor::zeros(&[1, h]);
        for (e, &p) in routing.iter().enumerate() {
            let we = self.param(&expert_key(layer, e, "w"))?;
            let be = self.param(&expert_key(layer, e, "b"))?;
            w.data_mut().iter_mut().zip(we.data()).for_each(|(a, x)| *a += p * x);
            b.data_mut().iter_mut().zip(be.data()).for_each(|(a, x)| *a += p * x);
        }
        Ok((w, b))
    }

    /// Full encoder pass. Returns node representations and the routing
    /// matrix (`n × K_l`) of every layer.
    pub fn encode(&self, g: &Graph, mode: Mode, rng: &mut TrainRng) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let x = tape.constant(g.features().clone());
        let out = encode_on_tape(&mut tape, &vars, self, g.adjacency(), x, mode, rng)?;
        Ok((tape.value(out.h).clone(), out.routings))
    }

    /// Folds batch statistics from a training pass into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[(usize, BatchStats)], momentum: f64) {
        for (l, s) in stats {
            for (name, batch) in [("bn.running_mean", &s.mean), ("bn.running_var", &s.var)] {
                if let Some(t) = self.params.get_mut(&key(*l, name)) {
                    for (r, &b) in t.data_mut().iter_mut().zip(batch.iter()) {
                        *r = momentum * *r + (1.0 - momentum) * b;
                    }
                }
            }
        }
    }
}

/// Running statistics are buffers, never optimized.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

/// Puts every tensor on the tape; `trainable(name)` selects parameters.
pub fn bind(tape: &mut Tape, params: &ParamMap, trainable: impl Fn(&str) -> bool) -> VarMap {
    params
        .iter()
        .map(|(name, t)| {
            let grad = trainable(name) && !is_buffer(name);
            (name.clone(), tape.leaf(t.clone(), grad))
        })
        .collect()
}

pub(crate) fn var(vars: &VarMap, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::Dimension(format!("missing parameter {name}")))
}

pub(crate) fn affine(tape: &mut Tape, vars: &VarMap, name: &str, x: Var) -> Result<Var> {
    let w = var(vars, &format!("{name}.w"))?;
    let b = var(vars, &format!("{name}.b"))?;
    let xw = tape.matmul(x, w)?;
    tape.add_bias(xw, b)
}

pub(crate) fn route_on_tape(
    tape: &mut Tape,
    vars: &VarMap,
    cfg: &EncoderConfig,
    layer: usize,
    h: Var,
    mode: Mode,
    rng: &mut TrainRng,
) -> Result<Var> {
    let n = tape.value(h).rows();
    let k = cfg.experts_at(layer);
    if k == 1 {
        return Ok(tape.constant(Tensor::full(&[n, 1], 1.0)));
    }
    let logits = affine(tape, vars, &key(layer, "router"), h)?;
    match mode {
        Mode::Deploy => tape.softmax(logits, 1),
        Mode::Train => gumbel_softmax_sample(tape, logits, cfg.tau, rng),
    }
}

pub(crate) fn summary_on_tape(tape: &mut Tape, vars: &VarMap, layer: usize, adj: &Arc<Csr>, h: Var) -> Result<Var> {
    let agg = tape.neighbor_mean(h, adj.clone())?;
    let cat = tape.concat_cols(h, agg)?;
    affine(tape, vars, &key(layer, "psi"), cat)
}

pub(crate) fn mixture_on_tape(
    tape: &mut Tape,
    vars: &VarMap,
    cfg: &EncoderConfig,
    layer: usize,
    z: Var,
    pi: Var,
) -> Result<Var> {
    let k = cfg.experts_at(layer);
    let pk = tape.value(pi).cols();
    if pk != k || tape.value(pi).rows() != tape.value(z).rows() {
        return Err(Error::Config(format!(
            "routing shape {:?} does not match {k} experts at layer {layer}",
            tape.value(pi).shape()
        )));
    }
    if k == 1 {
        return affine(tape, vars, &key(layer, "expert.0"), z);
    }
    let mut acc = None;
    for e in 0..k {
        let fe = affine(tape, vars, &key(layer, &format!("expert.{e}")), z)?;
        let weighted = tape.scale_rows_by_col(fe, pi, e)?;
        acc = Some(match acc {
            None => weighted,
            Some(a) => tape.add(a, weighted)?,
        });
    }
    Ok(acc.expect("k ≥ 2"))
}

pub struct EncodeOutput {
    pub h: Var,
    pub routings: Vec<Tensor>,
    pub batch_stats: Vec<(usize, BatchStats)>,
}

fn dropout_on_tape(tape: &mut Tape, x: Var, rate: f64, rng: &mut TrainRng) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let keep = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

pub(crate) fn encode_on_tape(
    tape: &mut Tape,
    vars: &VarMap,
    state: &EncoderState,
    adj: &Arc<Csr>,
    x: Var,
    mode: Mode,
    rng: &mut TrainRng,
) -> Result<EncodeOutput> {
    let cfg = &state.cfg;
    let xv = tape.value(x);
    if xv.cols() != state.in_dim || xv.rows() != adj.n() {
        return Err(Error::dim(format!(
            "encoder expects {}×{} input, got {:?}",
            adj.n(),
            state.in_dim,
            xv.shape()
        )));
    }
    let mut h = x;
    let mut routings = Vec::with_capacity(cfg.num_layers);
    let mut batch_stats = Vec::new();
    for l in 0..cfg.num_layers {
        let inp = if mode == Mode::Train && cfg.dropout > 0.0 {
            dropout_on_tape(tape, h, cfg.dropout, rng)?
        } else {
            h
        };
        let z = summary_on_tape(tape, vars, l, adj, inp)?;
        let pi = route_on_tape(tape, vars, cfg, l, h, mode, rng)?;
        routings.push(tape.value(pi).clone());
        let pre = mixture_on_tape(tape, vars, cfg, l, z, pi)?;
        let mut out = tape.relu(pre);
        if cfg.has_bn(l) {
            let gamma = var(vars, &key(l, "bn.gamma"))?;
            let beta = var(vars, &key(l, "bn.beta"))?;
            out = match mode {
                Mode::Train => {
                    let (y, stats) = tape.batch_norm_train(out, gamma, beta, BN_EPS)?;
                    batch_stats.push((l, stats));
                    y
                }
                Mode::Deploy => {
                    let mean = state.param(&key(l, "bn.running_mean"))?.data().to_vec();
                    let var_ = state.param(&key(l, "bn.running_var"))?.data().to_vec();
                    tape.batch_norm_frozen(out, gamma, beta, &mean, &var_, BN_EPS)?
                }
            };
        }
        if !tape.value(out).all_finite() {
            return Err(Error::Numeric {
                location: format!("encoder layer {l}"),
                detail: "non-finite activation".into(),
            });
        }
        h = out;
    }
    Ok(EncodeOutput { h, routings, batch_stats })
}
