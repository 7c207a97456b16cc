//! Classification metrics over predicted class probabilities.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ECE_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub auroc: f64,
    pub ece: f64,
    pub loss: f64,
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(r, &y)| argmax(*r) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` if either class is absent.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // average ranks over tie groups, then Mann-Whitney U
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Binary tasks score the positive class; multiclass tasks average
/// one-vs-rest AUROC over classes that have both positives and negatives.
/// Returns 0.5 when no class qualifies.
pub fn auroc(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let c = probs.ncols();
    let classes: Vec<usize> = if c == 2 { vec![1] } else { (0..c).collect() };
    let per_class: Vec<f64> = classes
        .into_iter()
        .filter_map(|k| {
            let scores: Vec<f64> = probs.column(k).to_vec();
            let pos: Vec<bool> = labels.iter().map(|&y| y == k).collect();
            binary_auroc(&scores, &pos)
        })
        .collect();
    if per_class.is_empty() {
        0.5
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

/// Bin `b` holds confidences in `(b/10, (b+1)/10]`; zero goes to bin 0.
pub fn ece_bin(conf: f64) -> usize {
    (0..ECE_BINS)
        .find(|&b| conf <= (b + 1) as f64 / ECE_BINS as f64)
        .unwrap_or(ECE_BINS - 1)
}

/// Expected calibration error of max-probability confidences.
pub fn ece_from(confidences: &[f64], correct: &[bool]) -> f64 {
    let n = confidences.len() as f64;
    let mut count = [0usize; ECE_BINS];
    let mut conf_sum = [0.0; ECE_BINS];
    let mut hit = [0usize; ECE_BINS];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ece_bin(c);
        count[b] += 1;
        conf_sum[b] += c;
        hit[b] += usize::from(ok);
    }
    (0..ECE_BINS)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (hit[b] as f64 / m - conf_sum[b] / m).abs()
        })
        .sum()
}

pub fn ece(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut conf = Vec::with_capacity(labels.len());
    let mut correct = Vec::with_capacity(labels.len());
    for (r, &y) in probs.rows().into_iter().zip(labels) {
        let k = argmax(r);
        conf.push(r[k]);
        correct.push(k == y);
    }
    ece_from(&conf, &correct)
}

/// All metrics from softmax probabilities and a precomputed mean loss.
pub fn summarize(probs: &Array2<f64>, labels: &[usize], loss: f64) -> Result<EvalMetrics> {
    if labels.is_empty() {
        return Err(Error::Config("cannot evaluate an empty set".into()));
    }
    if probs.nrows() != labels.len() {
        return Err(Error::Dimension("one probability row per label required".into()));
    }
    Ok(EvalMetrics {
        accuracy: accuracy(probs, labels),
        auroc: auroc(probs, labels),
        ece: ece(probs, labels),
        loss,
    })
}
