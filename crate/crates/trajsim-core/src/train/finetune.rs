//! Ranking fine-tuning against a heuristic ground-truth matrix.
//!
//! Each batch runs in three stages so the result cannot depend on the
//! thread count: (1) every trajectory is encoded on its own tape in
//! parallel, (2) one serial loss tape consumes the embedding values and
//! yields a gradient per embedding, (3) those gradients seed the encoder
//! tapes' backward passes in parallel, and the parameter gradients are
//! added up serially in batch order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Adam, Grads, ParamStore, Tape, Tensor, Var};
use crate::config::{RunConfig, TauMode};
use crate::error::{Error, Result};
use crate::heuristics::DistanceMatrix;
use crate::ranking::{
    listnet_loss, listnet_on_tape, mse_loss, mse_on_tape, rd_listnet_loss, rd_listnet_on_tape,
    score_between, score_on_tape, total_loss, LossWeights,
};
use crate::sam::{
    encode_on_tape, gps_features, grid_features, init_params, validate_params, BoundParams,
    SamConfig,
};
use crate::train::{encode_all, index_by_id, mix_seed, resolve_ids, EarlyStopper, EpochLog};
use crate::traj::{to_grid_sequence, DatasetSplit, GridSpec, Trajectory};

const EPOCH_SALT: u64 = 0x66696e65;

pub struct FinetuneOutcome {
    pub store: ParamStore,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Distance-to-similarity temperature actually used.
    pub tau: f64,
}

struct EncodedTraj {
    tape: Tape,
    params: BoundParams,
    emb_var: Var,
    emb: Tensor,
}

fn encode_for_training(
    t: &Trajectory,
    grid: &GridSpec,
    cfg: &SamConfig,
    store: &ParamStore,
) -> Result<EncodedTraj> {
    let seq = to_grid_sequence(t, grid)?;
    let gps = gps_features(t, grid)?;
    let cells = grid_features(&seq, grid)?;
    let mut tape = Tape::new();
    let params = BoundParams::bind(&mut tape, store)?;
    let g = tape.leaf(gps)?;
    let c = tape.leaf(cells)?;
    let emb_var = encode_on_tape(&mut tape, &params, cfg, g, c)?;
    let emb = tape.value(emb_var).clone();
    Ok(EncodedTraj {
        tape,
        params,
        emb_var,
        emb,
    })
}

struct BatchLoss {
    tape: Tape,
    emb_leaves: Vec<Var>,
    loss: Var,
    value: f64,
}

/// The total loss graph over a batch of fixed embedding values. Pairwise
/// scores are built once per unordered pair and shared between the MSE
/// term and both query directions of the list losses.
fn batch_loss_tape(
    embs: &[Tensor],
    target: &dyn Fn(usize, usize) -> f64,
    w: &LossWeights,
) -> Result<BatchLoss> {
    let b = embs.len();
    if b < 3 {
        return Err(Error::Data(format!(
            "a batch needs at least 3 trajectories, got {b}"
        )));
    }
    let mut tape = Tape::new();
    let emb_leaves: Vec<Var> = embs
        .iter()
        .map(|e| tape.leaf(e.clone()))
        .collect::<Result<_>>()?;

    let mut score = vec![vec![None::<Var>; b]; b];
    let mut pair_scores = Vec::with_capacity(b * (b - 1) / 2);
    let mut pair_targets = Vec::with_capacity(b * (b - 1) / 2);
    for i in 0..b {
        for j in (i + 1)..b {
            let s = score_on_tape(&mut tape, emb_leaves[i], emb_leaves[j])?;
            score[i][j] = Some(s);
            score[j][i] = Some(s);
            pair_scores.push(s);
            pair_targets.push(target(i, j));
        }
    }
    let pred = tape.concat_cols(&pair_scores)?;
    let mut loss = mse_on_tape(&mut tape, pred, &pair_targets)?;

    for (gamma, build) in [
        (w.gamma1, listnet_on_tape as fn(&mut Tape, Var, &[f64]) -> Result<Var>),
        (w.gamma2, rd_listnet_on_tape),
    ] {
        if gamma == 0.0 {
            continue;
        }
        let mut terms = Vec::with_capacity(b);
        for q in 0..b {
            let cands: Vec<usize> = (0..b).filter(|&c| c != q).collect();
            let row_vars: Vec<Var> = cands.iter().map(|&c| score[q][c].unwrap()).collect();
            let r: Vec<f64> = cands.iter().map(|&c| target(q, c)).collect();
            let s_row = tape.concat_cols(&row_vars)?;
            terms.push(build(&mut tape, s_row, &r)?);
        }
        let stacked = tape.concat_cols(&terms)?;
        let sum = tape.sum(stacked)?;
        let scaled = tape.scale(sum, gamma / b as f64)?;
        loss = tape.add(loss, scaled)?;
    }

    let value = tape.value(loss).item();
    Ok(BatchLoss {
        tape,
        emb_leaves,
        loss,
        value,
    })
}

/// Same quantity as [`batch_loss_tape`] but computed in plain f64, for
/// eval-split monitoring without building graphs.
fn batch_loss_value(
    embs: &Tensor,
    target: &dyn Fn(usize, usize) -> f64,
    w: &LossWeights,
) -> Result<f64> {
    let b = embs.rows;
    if b < 3 {
        return Err(Error::Data(format!(
            "a batch needs at least 3 trajectories, got {b}"
        )));
    }
    let mut score = vec![vec![0.0; b]; b];
    let mut pair_pred = Vec::with_capacity(b * (b - 1) / 2);
    let mut pair_tgt = Vec::with_capacity(b * (b - 1) / 2);
    for i in 0..b {
        for j in (i + 1)..b {
            let s = score_between(embs.row(i), embs.row(j))?;
            score[i][j] = s;
            score[j][i] = s;
            pair_pred.push(s);
            pair_tgt.push(target(i, j));
        }
    }
    let mse = mse_loss(&pair_pred, &pair_tgt)?;
    let mut ln_mean = 0.0;
    let mut rd_mean = 0.0;
    if w.gamma1 > 0.0 || w.gamma2 > 0.0 {
        for q in 0..b {
            let cands: Vec<usize> = (0..b).filter(|&c| c != q).collect();
            let s_row: Vec<f64> = cands.iter().map(|&c| score[q][c]).collect();
            let r: Vec<f64> = cands.iter().map(|&c| target(q, c)).collect();
            if w.gamma1 > 0.0 {
                ln_mean += listnet_loss(&s_row, &r)? / b as f64;
            }
            if w.gamma2 > 0.0 {
                rd_mean += rd_listnet_loss(&s_row, &r)? / b as f64;
            }
        }
    }
    Ok(total_loss(mse, ln_mean, rd_mean, w))
}

fn train_batch(
    chunk: &[usize],
    trajs: &[Trajectory],
    grid: &GridSpec,
    sam: &SamConfig,
    store: &mut ParamStore,
    adam: &mut Adam,
    target: &(dyn Fn(usize, usize) -> f64 + Sync),
    w: &LossWeights,
) -> Result<f64> {
    let encoded: Vec<EncodedTraj> = chunk
        .par_iter()
        .map(|&i| encode_for_training(&trajs[i], grid, sam, store))
        .collect::<Result<_>>()?;

    let embs: Vec<Tensor> = encoded.iter().map(|e| e.emb.clone()).collect();
    let batch = batch_loss_tape(&embs, &|a, b| target(chunk[a], chunk[b]), w)?;
    let head_grads = batch.tape.backward(batch.loss)?;

    let per_traj: Vec<Grads> = encoded
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let seed = head_grads.of(batch.emb_leaves[i], &e.emb);
            e.tape.backward_seeded(e.emb_var, seed)
        })
        .collect::<Result<_>>()?;

    store.zero_grads();
    for (e, g) in encoded.iter().zip(&per_traj) {
        e.params.accumulate_into(g, store)?;
    }
    adam.step(store)?;
    Ok(batch.value)
}

/// Fine-tune an encoder against `matrix` (row i = `trajs[i]`). Pass the
/// pretrained parameters to warm-start, or `None` for a cold start from
/// the config seed.
pub fn finetune(
    trajs: &[Trajectory],
    matrix: &DistanceMatrix,
    split: &DatasetSplit,
    grid: &GridSpec,
    cfg: &RunConfig,
    init: Option<ParamStore>,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let sam = cfg.sam_config();
    if matrix.len() != trajs.len() {
        return Err(Error::Shape(format!(
            "{}x{} matrix for {} trajectories",
            matrix.len(),
            matrix.len(),
            trajs.len()
        )));
    }
    let index = index_by_id(trajs)?;
    let train_idx = resolve_ids(&split.train, &index)?;
    if train_idx.len() < 3 {
        return Err(Error::Data(format!(
            "fine-tuning needs at least 3 training trajectories, got {}",
            train_idx.len()
        )));
    }
    let eval_idx = resolve_ids(&split.eval, &index)?;
    let eval_trajs: Vec<Trajectory> = eval_idx.iter().map(|&i| trajs[i].clone()).collect();

    let mut store = match init {
        Some(s) => {
            validate_params(&sam, &s)?;
            s
        }
        None => init_params(&sam, cfg.seed)?,
    };
    store.zero_grads();

    let tau = match cfg.tau_mode {
        TauMode::Fixed => cfg.tau_value,
        TauMode::MeanDistance => matrix.submatrix(&train_idx)?.mean_off_diagonal(),
    };
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Data(format!(
            "degenerate similarity scale tau = {tau}; distances are all zero?"
        )));
    }
    let target = move |i: usize, j: usize| (-matrix.get(i, j) / tau).exp();
    let w = cfg.loss_weights()?;

    let mut adam = Adam::new(cfg.lr);
    let mut stopper = EarlyStopper::new(cfg.finetune_patience);
    let mut best = store.clone();
    let mut log = Vec::new();

    for epoch in 0..cfg.finetune_epochs {
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, EPOCH_SALT ^ epoch as u64));
        order.shuffle(&mut rng);

        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // A trailing remnant of 1 or 2 cannot form ranking lists.
            if chunk.len() < 3 {
                continue;
            }
            sum += train_batch(chunk, trajs, grid, &sam, &mut store, &mut adam, &target, &w)?;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Data(
                "no batch of at least 3 trajectories could be formed".into(),
            ));
        }
        let train_loss = sum / batches as f64;

        let eval_loss = if eval_idx.len() >= 3 {
            let embs = encode_all(&eval_trajs, grid, &sam, &store)?;
            batch_loss_value(&embs, &|a, b| target(eval_idx[a], eval_idx[b]), &w)?
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
    Ok(FinetuneOutcome {
        store: best,
        log,
        best_epoch: stopper.best_epoch,
        tau,
    })
}
