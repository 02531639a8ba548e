//! Self-supervised pretraining, supervised finetuning and checkpoints.

mod checkpoint;
mod finetune;
mod optim;
mod pretrain;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use finetune::{finetune, finetune_loss, EpochRecord, FinetuneConfig, FinetuneResult, Split};
pub use optim::AdamW;
pub use pretrain::{init_codebook_from_embeddings, pretrain, PretrainConfig, PretrainEpoch};

use crate::encoder::{is_buffer, VarMap};
use crate::error::{Error, Result};
use crate::kernel::Gradients;
use crate::model::{Model, CODEBOOK};

/// Applies one optimizer step to every tensor that received a gradient.
/// Returns whether the codebook was updated.
pub(crate) fn apply_step(model: &mut Model, opt: &mut AdamW, vars: &VarMap, grads: &Gradients) -> Result<()> {
    opt.begin_step();
    for (name, &v) in vars {
        if is_buffer(name) {
            continue;
        }
        let Some(g) = grads.raw(v) else { continue };
        if name == CODEBOOK {
            if model.codebook.is_frozen() {
                return Err(Error::FrozenState("gradient step reached the frozen codebook".into()));
            }
            let mut codes = model.codebook.codes().clone();
            opt.update(name, &mut codes, g);
            model.codebook.update(codes)?;
        } else if let Some(w) = model.tensor_mut(name) {
            opt.update(name, w, g);
        }
    }
    Ok(())
}
