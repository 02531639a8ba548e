//! Encoder, projection, token interface and head wired into one model.

use sha2::{Digest, Sha256};

use crate::encoder::{bind, encode_on_tape, init_linear, var, EncoderConfig, EncoderState, Mode, ParamMap, VarMap};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::head::{head_on_tape, HeadParams};
use crate::kernel::{BatchStats, Tape, Tensor, TrainRng, Var};
use crate::vq::{straight_through, Codebook, TokenAssignment};

pub const CODEBOOK: &str = "codebook";
pub const PROJ: &str = "proj";
pub const HEAD: &str = "head";

/// What the head consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interface {
    /// Nearest codeword, straight-through gradient.
    Quantized,
    /// The projected embedding itself (quantization bypassed).
    Identity,
}

impl Interface {
    pub fn name(self) -> &'static str {
        match self {
            Interface::Quantized => "quantized",
            Interface::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "quantized" => Some(Interface::Quantized),
            "identity" => Some(Interface::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub in_dim: usize,
    pub d_q: usize,
    pub codebook_size: usize,
    /// 0 while no task head exists (pretraining).
    pub num_classes: usize,
    pub interface: Interface,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.in_dim == 0 || self.d_q == 0 {
            return Err(Error::Config("input and token dimensions must be positive".into()));
        }
        if self.codebook_size < 2 {
            return Err(Error::Config("codebook needs at least two codes".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: EncoderState,
    /// Projection, head and any auxiliary tensors, keyed by name.
    pub params: ParamMap,
    pub codebook: Codebook,
}

/// Tape nodes produced by one forward pass.
pub struct Forward {
    pub vars: VarMap,
    pub h: Var,
    pub u: Var,
    pub r: Var,
    pub logits: Option<Var>,
    pub assignments: Option<Vec<TokenAssignment>>,
    pub routings: Vec<Tensor>,
    pub batch_stats: Vec<(usize, BatchStats)>,
}

impl Model {
    /// Random initialization; the codebook starts as unit Gaussian codes.
    pub fn init(cfg: ModelConfig, rng: &mut TrainRng) -> Result<Self> {
        cfg.validate()?;
        let encoder = EncoderState::init(cfg.encoder.clone(), cfg.in_dim, rng)?;
        let mut params = ParamMap::new();
        init_linear(&mut params, PROJ, cfg.encoder.hidden_dim, cfg.d_q, rng);
        let codes: Vec<f64> = (0..cfg.codebook_size * cfg.d_q).map(|_| rng.normal()).collect();
        let codebook = Codebook::new(Tensor::matrix(cfg.codebook_size, cfg.d_q, codes)?)?;
        let mut model = Self { cfg, encoder, params, codebook };
        if model.cfg.num_classes > 0 {
            model.reset_head(model.cfg.num_classes, rng);
        }
        Ok(model)
    }

    /// Fresh `num_classes × d_q` head, fan-in scaled.
    pub fn reset_head(&mut self, num_classes: usize, rng: &mut TrainRng) {
        let d = self.cfg.d_q;
        let bound = 1.0 / (d as f64).sqrt();
        let w: Vec<f64> = (0..num_classes * d).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
        self.params.insert(format!("{HEAD}.w"), Tensor::from_parts(vec![num_classes, d], w));
        self.params.insert(format!("{HEAD}.b"), Tensor::zeros(&[1, num_classes]));
        self.cfg.num_classes = num_classes;
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .or_else(|| self.encoder.params.get(name))
            .ok_or_else(|| Error::Dimension(format!("missing parameter {name}")))
    }

    pub fn head(&self, lambda_lip: f64) -> Result<HeadParams> {
        HeadParams::new(
            self.param(&format!("{HEAD}.w"))?.clone(),
            self.param(&format!("{HEAD}.b"))?.data().to_vec(),
            lambda_lip,
        )
    }

    /// Every named tensor, codebook included, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .encoder
            .params
            .iter()
            .chain(self.params.iter())
            .map(|(k, v)| (k.clone(), v))
            .collect();
        out.push((CODEBOOK.to_string(), self.codebook.codes()));
        out
    }

    /// Mutable access by name. The codebook is not reachable this way.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        if name.starts_with("enc.") {
            self.encoder.params.get_mut(name)
        } else {
            self.params.get_mut(name)
        }
    }

    /// SHA-256 over names, tensors, the frozen flag and the interface.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named_tensors() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update(t.to_le_bytes());
        }
        h.update([u8::from(self.codebook.is_frozen())]);
        h.update(self.cfg.interface.name().as_bytes());
        hex::encode(h.finalize())
    }

    /// Puts every tensor on the tape. The codebook is bound as `codebook`.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> VarMap {
        let mut vars = bind(tape, &self.encoder.params, &trainable);
        vars.extend(bind(tape, &self.params, &trainable));
        let cb_grad = trainable(CODEBOOK) && !self.codebook.is_frozen();
        vars.insert(CODEBOOK.to_string(), tape.leaf(self.codebook.codes().clone(), cb_grad));
        vars
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        g: &Graph,
        mode: Mode,
        rng: &mut TrainRng,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<Forward> {
        let vars = self.bind(tape, trainable);
        self.forward_with(tape, vars, g, mode, rng)
    }

    /// Forward pass using already bound tensors.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        vars: VarMap,
        g: &Graph,
        mode: Mode,
        rng: &mut TrainRng,
    ) -> Result<Forward> {
        let x = tape.constant(g.features().clone());
        let enc = encode_on_tape(tape, &vars, &self.encoder, g.adjacency(), x, mode, rng)?;
        let w = var(&vars, &format!("{PROJ}.w"))?;
        let b = var(&vars, &format!("{PROJ}.b"))?;
        let hw = tape.matmul(enc.h, w)?;
        let u = tape.add_bias(hw, b)?;

        let (r, assignments) = match self.cfg.interface {
            Interface::Identity => (u, None),
            Interface::Quantized => {
                let cb = Codebook::new(tape.value(var(&vars, CODEBOOK)?).clone())?;
                let (r, a) = straight_through(tape, u, &cb)?;
                (r, Some(a))
            }
        };
        let logits = if self.cfg.num_classes > 0 {
            let hw = var(&vars, &format!("{HEAD}.w"))?;
            let hb = var(&vars, &format!("{HEAD}.b"))?;
            Some(head_on_tape(tape, r, hw, hb)?)
        } else {
            None
        };
        Ok(Forward {
            vars,
            h: enc.h,
            u,
            r,
            logits,
            assignments,
            routings: enc.routings,
            batch_stats: enc.batch_stats,
        })
    }

    /// Deploy-mode logits. Consumes no randomness.
    pub fn logits(&self, g: &Graph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = TrainRng::new(0);
        let f = self.forward(&mut tape, g, Mode::Deploy, &mut rng, |_| false)?;
        let l = f
            .logits
            .ok_or_else(|| Error::Config("model has no task head".into()))?;
        Ok(tape.value(l).clone())
    }

    /// Argmax of deploy-mode logits, ties to the lowest class.
    pub fn predict(&self, g: &Graph) -> Result<Vec<usize>> {
        let l = self.logits(g)?;
        Ok((0..l.rows()).map(|i| argmax(l.row(i))).collect())
    }

    /// Deploy-mode token embeddings `u` for every node.
    pub fn embeddings(&self, g: &Graph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = TrainRng::new(0);
        let f = self.forward(&mut tape, g, Mode::Deploy, &mut rng, |_| false)?;
        Ok(tape.value(f.u).clone())
    }

    /// Fraction of `nodes` whose deploy-mode prediction matches their label.
    pub fn accuracy(&self, g: &Graph, nodes: &[usize]) -> Result<f64> {
        let pred = self.predict(g)?;
        Ok(accuracy_of(&pred, g, nodes))
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Labelled accuracy of `pred` over `nodes`; unlabeled nodes count as wrong.
pub fn accuracy_of(pred: &[usize], g: &Graph, nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes.iter().filter(|&&v| g.label(v) == Some(pred[v])).count();
    hits as f64 / nodes.len() as f64
}
