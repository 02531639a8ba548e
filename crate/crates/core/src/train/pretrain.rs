use std::collections::HashSet;

use super::{apply_step, AdamW};
use crate::encoder::{affine, init_linear, Mode};
use crate::error::{Error, Result};
use crate::graph::{drop_edges_keyed, mask_features_keyed, Graph};
use crate::kernel::{keyed_uniform, Tape, Tensor, TrainRng};
use crate::model::{Interface, Model};
use crate::vq::vq_loss;

pub const DECODER: &str = "pretrain.dec";

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Graphs per optimization step for multi-graph corpora.
    pub batch_size: usize,
    pub aug_drop_rate: f64,
    pub link_fraction: f64,
    pub negative_ratio: f64,
    /// Stored for bookkeeping; no semantic-level loss consumes it.
    pub gamma: f64,
    pub beta: f64,
    pub tau: f64,
    pub seed: u64,
    pub vq_weight: f64,
    pub feature_weight: f64,
    pub link_weight: f64,
    /// Seed the codebook from embeddings of the first graph before training.
    pub init_codebook: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            epochs: 25,
            batch_size: 1024,
            aug_drop_rate: 0.2,
            link_fraction: 0.1,
            negative_ratio: 1.0,
            gamma: 1.0,
            beta: 0.25,
            tau: 1.0,
            seed: 0,
            vq_weight: 1.0,
            feature_weight: 1.0,
            link_weight: 1.0,
            init_codebook: true,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {x}")))
            }
        };
        unit("aug_drop_rate", self.aug_drop_rate)?;
        unit("link_fraction", self.link_fraction)?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.beta >= 0.0) || !(self.negative_ratio >= 0.0) {
            return Err(Error::Config("lr, weight_decay, beta and negative_ratio must be ≥ 0".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Mean losses over the steps of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub total: f64,
    pub vq: f64,
    pub feature: f64,
    pub link: f64,
}

/// Replaces the codebook with `M` distinct deploy-mode embeddings of `g`,
/// chosen in a seeded random order. Keeps the current codes and returns
/// `false` when fewer than `M` distinct rows exist.
pub fn init_codebook_from_embeddings(model: &mut Model, g: &Graph, rng: &mut TrainRng) -> Result<bool> {
    let u = model.embeddings(g)?;
    let m = model.cfg.codebook_size;
    let mut order: Vec<usize> = (0..u.rows()).collect();
    rng.shuffle(&mut order);
    let mut seen = HashSet::new();
    let mut picked = Vec::with_capacity(m);
    for i in order {
        let key: Vec<u64> = u.row(i).iter().map(|x| x.to_bits()).collect();
        if seen.insert(key) {
            picked.push(i);
            if picked.len() == m {
                break;
            }
        }
    }
    if picked.len() < m {
        return Ok(false);
    }
    model.codebook.update(u.select_rows(&picked))?;
    Ok(true)
}

/// One augmented view: features masked and edges dropped at `rate` over all
/// nodes. Returns the view and the mask (1 where an entry was hidden).
fn augment(g: &Graph, rate: f64, seed: u64) -> Result<(Graph, Tensor)> {
    let all: Vec<usize> = (0..g.n()).collect();
    let draw = |v: usize, j: usize| keyed_uniform(seed, v as u64, j as u64);
    let masked = mask_features_keyed(g, &all, rate, draw)?;
    let d = g.feature_dim();
    let mut mask = vec![0.0; g.n() * d];
    for v in 0..g.n() {
        for j in 0..d {
            if draw(v, j) < rate {
                mask[v * d + j] = 1.0;
            }
        }
    }
    let eval = vec![true; g.n()];
    let eseed = seed ^ 0x5bd1_e995;
    let view = drop_edges_keyed(&masked, &eval, rate, |u, v| keyed_uniform(eseed, u as u64, v as u64))?;
    Ok((view, Tensor::matrix(g.n(), d, mask)?))
}

/// `link_fraction` of the edges of `g` as positives, plus
/// `negative_ratio` times as many uniform non-self pairs as negatives.
fn link_samples(g: &Graph, cfg: &PretrainConfig, rng: &mut TrainRng) -> (Vec<(usize, usize)>, Vec<f64>) {
    let mut edges = g.edges();
    let pos = ((edges.len() as f64) * cfg.link_fraction).ceil() as usize;
    rng.shuffle(&mut edges);
    edges.truncate(pos);
    let neg = ((pos as f64) * cfg.negative_ratio).round() as usize;
    let mut pairs = edges;
    let mut targets = vec![1.0; pairs.len()];
    if g.n() >= 2 {
        for _ in 0..neg {
            let u = rng.below(g.n());
            let mut v = rng.below(g.n() - 1);
            if v >= u {
                v += 1;
            }
            pairs.push((u, v));
            targets.push(0.0);
        }
    }
    (pairs, targets)
}

/// Jointly trains encoder, projection and codebook with the VQ objective,
/// masked-feature reconstruction and link reconstruction.
pub fn pretrain(corpus: &[Graph], cfg: &PretrainConfig, model: &mut Model) -> Result<Vec<PretrainEpoch>> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("pretraining corpus is empty".into()));
    }
    if let Some(g) = corpus.iter().find(|g| g.feature_dim() != model.cfg.in_dim) {
        return Err(Error::dim(format!(
            "corpus graph has {} features, model expects {}",
            g.feature_dim(),
            model.cfg.in_dim
        )));
    }
    if model.codebook.is_frozen() {
        return Err(Error::FrozenState("cannot pretrain with a frozen codebook".into()));
    }
    let mut rng = TrainRng::new(cfg.seed);
    model.encoder.cfg.tau = cfg.tau;
    if !model.params.contains_key(&format!("{DECODER}.w")) {
        init_linear(&mut model.params, DECODER, model.cfg.d_q, model.cfg.in_dim, &mut rng);
    }
    if cfg.init_codebook && model.cfg.interface == Interface::Quantized {
        init_codebook_from_embeddings(model, &corpus[0], &mut rng)?;
    }

    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0; 4];
        let mut steps = 0usize;
        for batch in corpus.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, |_| true);
            let mut total = None;
            let mut parts = [0.0; 3];
            let mut stats = Vec::new();
            for g in batch {
                let (view, mask) = augment(g, cfg.aug_drop_rate, rng.next_u64())?;
                let f = model.forward_with(&mut tape, vars.clone(), &view, Mode::Train, &mut rng)?;
                stats.extend(f.batch_stats);

                let mut terms = Vec::new();
                if model.cfg.interface == Interface::Quantized {
                    let cb = vars[crate::model::CODEBOOK];
                    let (l, _) = vq_loss(&mut tape, f.u, cb, cfg.beta)?;
                    parts[0] += tape.value(l).item();
                    terms.push(tape.scale(l, cfg.vq_weight));
                }

                let count = mask.data().iter().filter(|&&m| m > 0.0).count();
                if count > 0 {
                    let recon = affine(&mut tape, &vars, DECODER, f.r)?;
                    let x = tape.constant(g.features().clone());
                    let diff = tape.sub(recon, x)?;
                    let m = tape.constant(mask);
                    let hidden = tape.mul(diff, m)?;
                    let sq = tape.frobenius_sq(hidden);
                    let l = tape.scale(sq, 1.0 / count as f64);
                    parts[1] += tape.value(l).item();
                    terms.push(tape.scale(l, cfg.feature_weight));
                }

                let (pairs, targets) = link_samples(g, cfg, &mut rng);
                if !pairs.is_empty() {
                    let s = tape.pair_dot(f.r, &pairs)?;
                    let l = tape.bce_with_logits(s, &targets)?;
                    parts[2] += tape.value(l).item();
                    terms.push(tape.scale(l, cfg.link_weight));
                }

                for t in terms {
                    total = Some(match total {
                        None => t,
                        Some(a) => tape.add(a, t)?,
                    });
                }
            }
            let Some(total) = total else { continue };
            let value = tape.value(total).item();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, detail: format!("pretraining loss is {value}") });
            }
            let grads = tape.backward(total)?;
            apply_step(model, &mut opt, &vars, &grads)?;
            model.encoder.update_running_stats(&stats, super::finetune::BN_MOMENTUM);
            sums[0] += value;
            for k in 0..3 {
                sums[k + 1] += parts[k];
            }
            steps += 1;
        }
        let s = steps.max(1) as f64;
        log.push(PretrainEpoch {
            epoch,
            total: sums[0] / s,
            vq: sums[1] / s,
            feature: sums[2] / s,
            link: sums[3] / s,
        });
    }
    Ok(log)
}
