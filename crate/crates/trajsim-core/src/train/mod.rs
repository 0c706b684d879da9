//! Training loops: bridge pretraining and ranking fine-tuning, plus the
//! helpers both share (batch encoding, early stopping, epoch seeding).
//!
//! Determinism contract: given the same config seed, both loops produce
//! byte-identical parameter stores regardless of the rayon thread count.
//! Parallel sections only ever fill index-addressed slots; every reduce
//! into shared state runs serially in batch order.

mod finetune;
mod pretrain;

pub use finetune::{finetune, FinetuneOutcome};
pub use pretrain::{pretrain, PretrainOutcome};

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::sam::{encode, SamConfig};
use crate::traj::{to_grid_sequence, GridSpec, Trajectory};

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
}

/// Embed every trajectory; row i belongs to `trajs[i]`.
pub fn encode_all(
    trajs: &[Trajectory],
    grid: &GridSpec,
    cfg: &SamConfig,
    store: &ParamStore,
) -> Result<Tensor> {
    if trajs.is_empty() {
        return Err(Error::Data("nothing to encode".into()));
    }
    let rows: Vec<Vec<f64>> = trajs
        .par_iter()
        .map(|t| -> Result<Vec<f64>> {
            let seq = to_grid_sequence(t, grid)?;
            Ok(encode(t, &seq, grid, cfg, store)?.data)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

/// Map trajectory ids to their positions in the corpus slice.
pub fn index_by_id<'a>(trajs: &'a [Trajectory]) -> Result<HashMap<&'a str, usize>> {
    let mut map = HashMap::with_capacity(trajs.len());
    for (i, t) in trajs.iter().enumerate() {
        if map.insert(t.id.as_str(), i).is_some() {
            return Err(Error::Data(format!("duplicate trajectory id '{}'", t.id)));
        }
    }
    Ok(map)
}

/// Resolve split ids against the corpus, in split order.
pub(crate) fn resolve_ids(ids: &[String], index: &HashMap<&str, usize>) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            index.get(id.as_str()).copied().ok_or_else(|| {
                Error::Data(format!("split references unknown trajectory id '{id}'"))
            })
        })
        .collect()
}

/// Tracks the best eval loss and how long since it improved.
pub struct EarlyStopper {
    patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Record an epoch's eval loss; true means it set a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}

/// splitmix64-style mixer so per-epoch and per-pair streams derived from
/// one config seed stay decorrelated.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
