//! Fine-tuning objectives: similarity MSE, ListNet, rank-decay ListNet,
//! and their combination. Every loss exists twice: a plain f64 version for
//! targets and reporting, and a tape builder for training.
//!
//! Ground-truth relevance comes from heuristic distances through
//! s = exp(-d/tau); predicted scores from embeddings through
//! s_hat = exp(-||h_q - h_c||).

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::heuristics::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl LossWeights {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<LossWeights> {
        if !(gamma1.is_finite() && gamma2.is_finite()) || gamma1 < 0.0 || gamma2 < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative, got ({gamma1}, {gamma2})"
            )));
        }
        Ok(LossWeights { gamma1, gamma2 })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma1: 0.1,
            gamma2: 0.001,
        }
    }
}

/// Target similarity matrix s_ij = exp(-d_ij / tau); the zero diagonal of
/// a distance matrix maps to exactly 1.
pub fn similarity_from_distance(m: &DistanceMatrix, tau: f64) -> Result<Tensor> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Config(format!(
            "similarity scale tau must be positive, got {tau}"
        )));
    }
    let n = m.len();
    let data = m.values().iter().map(|&d| (-d / tau).exp()).collect();
    Tensor::from_vec(n, n, data)
}

fn check_list(s: &[f64], r: &[f64]) -> Result<()> {
    if s.len() != r.len() {
        return Err(Error::Shape(format!(
            "scored list lengths disagree: {} predicted vs {} relevance",
            s.len(),
            r.len()
        )));
    }
    if s.len() < 2 {
        return Err(Error::Config(format!(
            "list losses need at least 2 candidates, got {}",
            s.len()
        )));
    }
    if s.iter().chain(r).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("scored list holds a non-finite entry".into()));
    }
    Ok(())
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "mse over {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Entropy of softmax(r), the lower bound of [`listnet_loss`] at s = r.
pub fn softmax_entropy(r: &[f64]) -> f64 {
    let p = softmax(r);
    -p.iter().map(|&pi| pi * pi.ln()).sum::<f64>()
}

fn weighted_listnet(s: &[f64], r: &[f64], w: &[f64]) -> f64 {
    let p = softmax(r);
    let lse = log_sum_exp(s);
    -(0..s.len()).map(|i| w[i] * p[i] * (s[i] - lse)).sum::<f64>()
}

/// Cross-entropy between the top-one distributions softmax(r) and
/// softmax(s).
pub fn listnet_loss(s: &[f64], r: &[f64]) -> Result<f64> {
    check_list(s, r)?;
    Ok(weighted_listnet(s, r, &vec![1.0; s.len()]))
}

/// Per-candidate decay weights: sort by relevance descending (stable), the
/// candidate at 1-based position p gets 1/log2(p+1). Returned in original
/// candidate order.
pub fn rd_weights(r: &[f64]) -> Result<Vec<f64>> {
    if r.len() < 2 {
        return Err(Error::Config(format!(
            "decay weights need at least 2 candidates, got {}",
            r.len()
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("relevance holds a non-finite entry".into()));
    }
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].partial_cmp(&r[a]).unwrap());
    let mut w = vec![0.0; r.len()];
    for (pos, &i) in order.iter().enumerate() {
        w[i] = 1.0 / ((pos + 2) as f64).log2();
    }
    Ok(w)
}

/// ListNet with each candidate's term scaled by its rank-decay weight.
pub fn rd_listnet_loss(s: &[f64], r: &[f64]) -> Result<f64> {
    check_list(s, r)?;
    let w = rd_weights(r)?;
    Ok(weighted_listnet(s, r, &w))
}

pub fn total_loss(mse: f64, listnet: f64, rd_listnet: f64, w: &LossWeights) -> f64 {
    mse + w.gamma1 * listnet + w.gamma2 * rd_listnet
}

const NORM_STABILIZER: f64 = 1e-24;

/// Predicted similarity for one embedding pair: exp(-||hq - hc||). The
/// tiny additive constant under the square root keeps the gradient finite
/// when the embeddings coincide.
pub fn score_on_tape(tape: &mut Tape, h_q: Var, h_c: Var) -> Result<Var> {
    let diff = tape.sub(h_q, h_c)?;
    let sq = tape.mul(diff, diff)?;
    let ssq = tape.sum(sq)?;
    let shifted = tape.add_const(ssq, NORM_STABILIZER)?;
    let norm = tape.sqrt(shifted)?;
    let neg = tape.scale(norm, -1.0)?;
    tape.exp(neg)
}

/// Plain f64 twin of [`score_on_tape`], same stabilizer and all.
pub fn score_between(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "embedding widths disagree: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let ssq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((-(ssq + NORM_STABILIZER).sqrt()).exp())
}

/// Mean squared error between a 1 x m prediction row and fixed targets.
pub fn mse_on_tape(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    let (rows, cols) = tape.value(pred).shape();
    if rows != 1 || cols != target.len() || target.is_empty() {
        return Err(Error::Shape(format!(
            "mse expects a 1x{} prediction row, got {rows}x{cols}",
            target.len()
        )));
    }
    let t = tape.leaf(Tensor::from_vec(1, cols, target.to_vec())?)?;
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

fn weighted_listnet_on_tape(tape: &mut Tape, s: Var, r: &[f64], w: &[f64]) -> Result<Var> {
    let (rows, cols) = tape.value(s).shape();
    if rows != 1 || cols != r.len() {
        return Err(Error::Shape(format!(
            "list loss expects a 1x{} score row, got {rows}x{cols}",
            r.len()
        )));
    }
    let p = softmax(r);
    let coeff: Vec<f64> = p.iter().zip(w).map(|(pi, wi)| pi * wi).collect();
    let coeff_sum: f64 = coeff.iter().sum();
    let c = tape.leaf(Tensor::from_vec(1, cols, coeff)?)?;
    let cs = tape.mul(c, s)?;
    let dot = tape.sum(cs)?;
    let lse = tape.log_sum_exp_rows(s)?;
    let lse_scaled = tape.scale(lse, coeff_sum)?;
    let inner = tape.sub(dot, lse_scaled)?;
    tape.scale(inner, -1.0)
}

/// [`listnet_loss`] as a differentiable graph over the score row `s`.
pub fn listnet_on_tape(tape: &mut Tape, s: Var, r: &[f64]) -> Result<Var> {
    check_list(&vec![0.0; r.len()], r)?;
    weighted_listnet_on_tape(tape, s, r, &vec![1.0; r.len()])
}

/// [`rd_listnet_loss`] as a differentiable graph over the score row `s`.
pub fn rd_listnet_on_tape(tape: &mut Tape, s: Var, r: &[f64]) -> Result<Var> {
    check_list(&vec![0.0; r.len()], r)?;
    let w = rd_weights(r)?;
    weighted_listnet_on_tape(tape, s, r, &w)
}
