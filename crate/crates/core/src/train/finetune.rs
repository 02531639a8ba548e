use std::collections::HashSet;

use super::{apply_step, AdamW};
use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::head::lip_penalty_on_tape;
use crate::kernel::{Tape, TrainRng, Var};
use crate::model::{accuracy_of, argmax, Model, CODEBOOK, HEAD};

/// Weight of the old running estimate in batch-norm updates.
pub(crate) const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Epochs without a new best validation accuracy before stopping; 0 never stops early.
    pub patience: usize,
    pub tau: f64,
    pub dropout: f64,
    pub lambda_lip: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub freeze_vq: bool,
    /// Restore the state of the best validation epoch; otherwise keep the last.
    pub restore_best: bool,
}

impl Default for FinetuneConfig {
    /// Cora settings.
    fn default() -> Self {
        Self {
            lr: 7.5e-3,
            epochs: 1000,
            patience: 200,
            tau: 0.9,
            dropout: 0.80,
            lambda_lip: 2.5e-5,
            weight_decay: 0.0,
            seed: 0,
            freeze_vq: true,
            restore_best: true,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lr >= 0.0) || !(self.lambda_lip >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr, lambda_lip and weight_decay must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Disjointness, range and label checks. Training nodes must be labelled.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let mut seen = HashSet::new();
        for (part, nodes) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &v in nodes.iter() {
                if v >= g.n() {
                    return Err(Error::Config(format!("{part} node {v} out of range for n = {}", g.n())));
                }
                if !seen.insert(v) {
                    return Err(Error::Config(format!("node {v} appears twice in the split")));
                }
            }
        }
        if let Some(&v) = self.train.iter().find(|&&v| g.label(v).is_none()) {
            return Err(Error::Config(format!("training node {v} has no label")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneResult {
    pub best_epoch: usize,
    pub best_val: f64,
    pub test_acc: f64,
    pub curves: Vec<EpochRecord>,
}

/// Cross-entropy over `train` plus `λ‖W‖²_F` on the head weight.
pub fn finetune_loss(
    tape: &mut Tape,
    logits: Var,
    head_w: Var,
    g: &Graph,
    train: &[usize],
    lambda_lip: f64,
) -> Result<Var> {
    let labels = train
        .iter()
        .map(|&v| g.label(v).ok_or_else(|| Error::Config(format!("training node {v} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    let ce = tape.cross_entropy(logits, &labels, train)?;
    if lambda_lip == 0.0 {
        return Ok(ce);
    }
    let pen = lip_penalty_on_tape(tape, head_w, lambda_lip);
    tape.add(ce, pen)
}

/// Supervised training of encoder, projection and head on one graph, with
/// early stopping on validation accuracy. The best epoch's state is
/// restored into `model`.
pub fn finetune(g: &Graph, split: &Split, cfg: &FinetuneConfig, model: &mut Model) -> Result<FinetuneResult> {
    cfg.validate()?;
    split.validate(g)?;
    if g.feature_dim() != model.cfg.in_dim {
        return Err(Error::dim(format!(
            "graph has {} features, model expects {}",
            g.feature_dim(),
            model.cfg.in_dim
        )));
    }
    let mut rng = TrainRng::new(cfg.seed);
    if model.cfg.num_classes != g.num_classes() || !model.params.contains_key(&format!("{HEAD}.w")) {
        model.reset_head(g.num_classes(), &mut rng);
    }
    model.encoder.cfg.tau = cfg.tau;
    model.encoder.cfg.dropout = cfg.dropout;
    model.cfg.encoder = model.encoder.cfg.clone();
    if cfg.freeze_vq {
        model.codebook.freeze();
    }
    let codebook_hash = model.codebook.content_hash();
    let frozen = model.codebook.is_frozen();
    let trainable = move |name: &str| name != CODEBOOK || !frozen;
    let head_w = format!("{HEAD}.w");

    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut best: Option<(usize, f64, Model)> = None;
    let mut curves = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, g, Mode::Train, &mut rng, trainable)?;
        let logits = f.logits.expect("head was initialized");
        let loss = finetune_loss(&mut tape, logits, f.vars[&head_w], g, &split.train, cfg.lambda_lip)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("finetune loss is {value}") });
        }
        let lv = tape.value(logits);
        let train_pred: Vec<usize> = (0..lv.rows()).map(|i| argmax(lv.row(i))).collect();
        let train_acc = accuracy_of(&train_pred, g, &split.train);
        let grads = tape.backward(loss)?;
        apply_step(model, &mut opt, &f.vars, &grads)?;
        model.encoder.update_running_stats(&f.batch_stats, BN_MOMENTUM);

        let val_acc = if split.val.is_empty() { train_acc } else { model.accuracy(g, &split.val)? };
        curves.push(EpochRecord { epoch, loss: value, train_acc, val_acc });
        match &best {
            Some((_, b, _)) if val_acc <= *b => {}
            _ => best = Some((epoch, val_acc, model.clone())),
        }
        let best_epoch = best.as_ref().map(|b| b.0).unwrap_or(epoch);
        if cfg.patience > 0 && epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_val, state) = best.expect("at least one epoch ran");
    if cfg.restore_best {
        *model = state;
    }
    if model.codebook.is_frozen() && model.codebook.content_hash() != codebook_hash {
        return Err(Error::FrozenState("codebook changed during finetuning".into()));
    }
    let test_acc = if split.test.is_empty() { 0.0 } else { model.accuracy(g, &split.test)? };
    Ok(FinetuneResult { best_epoch, best_val, test_acc, curves })
}
