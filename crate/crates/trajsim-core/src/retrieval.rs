//! Top-k retrieval over embeddings and the HR@k / Recall-t@k metrics
//! against heuristic ground truth.
//!
//! Both the predicted and the ground-truth ranking exclude the query
//! itself, and equal distances are broken by id so results never depend on
//! iteration order.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::heuristics::DistanceMatrix;

/// Candidate ids for one query, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub query_id: String,
    pub ordered: Vec<String>,
}

fn check_ids(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("duplicate trajectory id '{id}'")));
        }
    }
    Ok(())
}

fn rank_by_key(ids: &[String], query_idx: usize, key: impl Fn(usize) -> f64) -> Result<Ranking> {
    if ids.len() < 2 {
        return Err(Error::Data(format!(
            "ranking needs at least one candidate besides the query, got {} ids",
            ids.len()
        )));
    }
    if query_idx >= ids.len() {
        return Err(Error::Data(format!(
            "query index {query_idx} out of {} ids",
            ids.len()
        )));
    }
    check_ids(ids)?;
    let mut order: Vec<(f64, &String)> = (0..ids.len())
        .filter(|&j| j != query_idx)
        .map(|j| (key(j), &ids[j]))
        .collect();
    for (d, id) in &order {
        if !d.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite distance for candidate '{id}'"
            )));
        }
    }
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(b.1)));
    Ok(Ranking {
        query_id: ids[query_idx].clone(),
        ordered: order.into_iter().map(|(_, id)| id.clone()).collect(),
    })
}

/// Rank all other rows of `embs` by ascending Euclidean distance to the
/// query row (equivalently descending predicted similarity).
pub fn rank_candidates(embs: &Tensor, ids: &[String], query_idx: usize) -> Result<Ranking> {
    if embs.rows != ids.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} ids",
            embs.rows,
            ids.len()
        )));
    }
    rank_by_key(ids, query_idx, |j| {
        embs.row(j)
            .iter()
            .zip(embs.row(query_idx))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

/// Ground-truth ranking for one query: ascending heuristic distance.
pub fn rank_by_distance_row(
    matrix: &DistanceMatrix,
    ids: &[String],
    query_idx: usize,
) -> Result<Ranking> {
    if matrix.len() != ids.len() {
        return Err(Error::Shape(format!(
            "{}x{} matrix for {} ids",
            matrix.len(),
            matrix.len(),
            ids.len()
        )));
    }
    rank_by_key(ids, query_idx, |j| matrix.get(query_idx, j))
}

fn check_k(label: &str, k: usize, len: usize) -> Result<()> {
    if k < 1 || k > len {
        return Err(Error::Config(format!(
            "{label} = {k} outside [1, {len}]"
        )));
    }
    Ok(())
}

/// |top-k(pred) and top-k(truth)| / k.
pub fn hr_at_k(pred: &Ranking, truth: &Ranking, k: usize) -> Result<f64> {
    check_k("k", k, pred.ordered.len().min(truth.ordered.len()))?;
    let top: HashSet<&str> = truth.ordered[..k].iter().map(String::as_str).collect();
    let hits = pred.ordered[..k]
        .iter()
        .filter(|id| top.contains(id.as_str()))
        .count();
    Ok(hits as f64 / k as f64)
}

/// |top-t(truth) and top-k(pred)| / t, with t <= k.
pub fn recall_t_at_k(pred: &Ranking, truth: &Ranking, t: usize, k: usize) -> Result<f64> {
    check_k("k", k, pred.ordered.len())?;
    check_k("t", t, truth.ordered.len())?;
    if t > k {
        return Err(Error::Config(format!("t = {t} exceeds k = {k}")));
    }
    let pred_top: HashSet<&str> = pred.ordered[..k].iter().map(String::as_str).collect();
    let hits = truth.ordered[..t]
        .iter()
        .filter(|id| pred_top.contains(id.as_str()))
        .count();
    Ok(hits as f64 / t as f64)
}

/// Mean retrieval quality over every query in a split.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    /// Heuristic the ground truth was built with.
    pub metric: String,
    pub queries: usize,
    /// (k, mean HR@k).
    pub hr: Vec<(usize, f64)>,
    /// (t, k, mean Recall-t@k).
    pub recall: Vec<(usize, usize, f64)>,
}

impl MetricReport {
    /// Line-oriented `name,k,value` form.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for &(k, v) in &self.hr {
            out.push_str(&format!("hr,{k},{v}\n"));
        }
        for &(t, k, v) in &self.recall {
            out.push_str(&format!("recall{t},{k},{v}\n"));
        }
        out
    }
}

/// Evaluate embeddings against a ground-truth matrix: mean HR@k for each
/// `ks` entry and mean Recall-t@k for each `(t, k)` pair, averaged over
/// every trajectory as query.
pub fn evaluate_suite(
    embs: &Tensor,
    ids: &[String],
    truth: &DistanceMatrix,
    ks: &[usize],
    recall_pairs: &[(usize, usize)],
) -> Result<MetricReport> {
    if embs.rows != ids.len() || truth.len() != ids.len() {
        return Err(Error::Shape(format!(
            "{} embeddings, {} ids, {}-row matrix must agree",
            embs.rows,
            ids.len(),
            truth.len()
        )));
    }
    if ids.len() < 2 {
        return Err(Error::Data("evaluation needs at least 2 trajectories".into()));
    }
    check_ids(ids)?;
    let max_k = ids.len() - 1;
    for &k in ks {
        check_k("k", k, max_k)?;
    }
    for &(t, k) in recall_pairs {
        check_k("k", k, max_k)?;
        check_k("t", t, max_k)?;
        if t > k {
            return Err(Error::Config(format!("t = {t} exceeds k = {k}")));
        }
    }

    let per_query: Vec<(Vec<f64>, Vec<f64>)> = (0..ids.len())
        .into_par_iter()
        .map(|q| -> Result<(Vec<f64>, Vec<f64>)> {
            let pred = rank_candidates(embs, ids, q)?;
            let gt = rank_by_distance_row(truth, ids, q)?;
            let hr = ks
                .iter()
                .map(|&k| hr_at_k(&pred, &gt, k))
                .collect::<Result<Vec<f64>>>()?;
            let rec = recall_pairs
                .iter()
                .map(|&(t, k)| recall_t_at_k(&pred, &gt, t, k))
                .collect::<Result<Vec<f64>>>()?;
            Ok((hr, rec))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = ids.len() as f64;
    let mut hr_means = vec![0.0; ks.len()];
    let mut rec_means = vec![0.0; recall_pairs.len()];
    for (hr, rec) in &per_query {
        for (acc, v) in hr_means.iter_mut().zip(hr) {
            *acc += v;
        }
        for (acc, v) in rec_means.iter_mut().zip(rec) {
            *acc += v;
        }
    }
    Ok(MetricReport {
        metric: truth.metric().as_str().to_string(),
        queries: ids.len(),
        hr: ks.iter().zip(hr_means).map(|(&k, s)| (k, s / n)).collect(),
        recall: recall_pairs
            .iter()
            .zip(rec_means)
            .map(|(&(t, k), s)| (t, k, s / n))
            .collect(),
    })
}
