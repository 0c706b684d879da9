//! Bridge pretraining loop.
//!
//! Each epoch shuffles the training ids and bridges disjoint consecutive
//! pairs; the optimizer steps once per pair. The eval loss is measured on
//! a frozen set of pairs from the eval split, each with its own fixed
//! (t, noise) draw, so the series is comparable across epochs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, ParamStore};
use crate::config::RunConfig;
use crate::ddbm::{pretrain_loss, pretrain_step, PretrainContext};
use crate::error::{Error, Result};
use crate::sam::init_params;
use crate::train::{index_by_id, mix_seed, resolve_ids, EarlyStopper, EpochLog};
use crate::traj::{DatasetSplit, GridSpec, Trajectory};

const EPOCH_SALT: u64 = 0x70726574;
const EVAL_SALT: u64 = 0x6576616c;

pub struct PretrainOutcome {
    pub store: ParamStore,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub fn pretrain(
    trajs: &[Trajectory],
    split: &DatasetSplit,
    grid: &GridSpec,
    cfg: &RunConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let ctx = PretrainContext {
        schedule: cfg.bridge_schedule()?,
        grid,
        sam: cfg.sam_config(),
        resample_len: cfg.resample_len,
        t_min: cfg.t_min,
        t_max: cfg.t_max,
    };
    ctx.validate()?;

    let index = index_by_id(trajs)?;
    let train_idx = resolve_ids(&split.train, &index)?;
    if train_idx.len() < 2 {
        return Err(Error::Data(format!(
            "pretraining needs at least 2 training trajectories, got {}",
            train_idx.len()
        )));
    }
    // Frozen eval pairs: adjacent ids in sorted order, disjoint. Falls
    // back to the train split when the eval split cannot form a pair.
    let eval_idx = {
        let idx = resolve_ids(&split.eval, &index)?;
        if idx.len() < 2 {
            train_idx.clone()
        } else {
            idx
        }
    };
    let eval_pairs: Vec<(usize, usize)> = {
        let mut sorted = eval_idx.clone();
        sorted.sort_by(|&a, &b| trajs[a].id.cmp(&trajs[b].id));
        sorted.chunks_exact(2).map(|c| (c[0], c[1])).collect()
    };

    let mut store = init_params(&ctx.sam, cfg.seed)?;
    let mut adam = Adam::new(cfg.lr);
    let mut stopper = EarlyStopper::new(cfg.pretrain_patience);
    let mut best = store.clone();
    let mut log = Vec::new();

    for epoch in 0..cfg.pretrain_epochs {
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, EPOCH_SALT ^ epoch as u64));
        order.shuffle(&mut rng);

        let mut sum = 0.0;
        let mut steps = 0usize;
        for pair in order.chunks_exact(2) {
            store.zero_grads();
            let loss = pretrain_step(&trajs[pair[0]], &trajs[pair[1]], &ctx, &mut store, &mut rng)?;
            if let Some(l) = loss {
                adam.step(&mut store)?;
                sum += l;
                steps += 1;
            }
        }
        if steps == 0 {
            return Err(Error::Data("no usable training pairs in this epoch".into()));
        }
        let train_loss = sum / steps as f64;

        let mut eval_sum = 0.0;
        let mut eval_n = 0usize;
        for (k, &(i, j)) in eval_pairs.iter().enumerate() {
            let mut pair_rng =
                ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, EVAL_SALT ^ k as u64));
            if let Some(l) = pretrain_loss(&trajs[i], &trajs[j], &ctx, &store, &mut pair_rng)? {
                eval_sum += l;
                eval_n += 1;
            }
        }
        let eval_loss = if eval_n > 0 {
            eval_sum / eval_n as f64
        } else {
            train_loss
        };

        log.push(EpochLog {
            epoch,
            train_loss,
            eval_loss,
        });
        if stopper.observe(epoch, eval_loss) {
            best = store.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }

    best.zero_grads();
    Ok(PretrainOutcome {
        store: best,
        log,
        best_epoch: stopper.best_epoch,
    })
}
