//! Degeneration metrics.
//!
//! `ppl`, `uniq` and `Rep/l` are computed on tokenizer-level teacher-forced
//! predictions; `Rep-n` and `uniq-w` on whitespace words of generated
//! continuations.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use serde::Serialize;

use crate::{Error, Result, TokenId};

/// Window sizes reported as `rep16`, `rep32`, `rep128`.
pub const REP_WINDOWS: [usize; 3] = [16, 32, 128];
/// n-gram orders reported as `rep1`, `rep2`, `rep3`.
pub const REP_ORDERS: [usize; 3] = [1, 2, 3];

pub fn perplexity(mean_nll: f64) -> f64 {
    mean_nll.exp()
}

/// Hits and scored steps for `Rep/l` on one teacher-forced stream.
///
/// `predictions[t]` is the argmax emitted while predicting `truth[t]`, so it
/// is compared against `truth[t - l..t]` (truncated at the start). Position 0
/// has an empty window and is not scored.
pub fn rep_slash_l_counts(truth: &[TokenId], predictions: &[TokenId], l: usize) -> Result<(usize, usize)> {
    if truth.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            what: "rep/l truth vs predictions",
            left: truth.len(),
            right: predictions.len(),
        });
    }
    let mut hits = 0;
    let mut steps = 0;
    for t in 1..truth.len() {
        let window = &truth[t.saturating_sub(l)..t];
        if window.is_empty() {
            continue;
        }
        steps += 1;
        hits += window.contains(&predictions[t]) as usize;
    }
    Ok((hits, steps))
}

pub fn rep_slash_l(truth: &[TokenId], predictions: &[TokenId], l: usize) -> Result<f64> {
    let (hits, steps) = rep_slash_l_counts(truth, predictions, l)?;
    Ok(ratio(hits, steps))
}

/// `Rep/l` pooled over many (truth, predictions) streams.
pub fn rep_slash_l_corpus(streams: &[(Vec<TokenId>, Vec<TokenId>)], l: usize) -> Result<f64> {
    let mut hits = 0;
    let mut steps = 0;
    for (truth, preds) in streams {
        let (h, s) = rep_slash_l_counts(truth, preds, l)?;
        hits += h;
        steps += s;
    }
    Ok(ratio(hits, steps))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn uniq_next_token<'a>(predictions: impl IntoIterator<Item = &'a TokenId>) -> usize {
    predictions.into_iter().collect::<HashSet<_>>().len()
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> (usize, usize) {
    if n == 0 || seq.len() < n {
        return (0, 0);
    }
    let total = seq.len() + 1 - n;
    let unique = seq.windows(n).collect::<HashSet<_>>().len();
    (unique, total)
}

/// `1 - unique/total` n-grams of one sequence, `None` if shorter than `n`.
pub fn rep_n_single<T: Eq + Hash>(seq: &[T], n: usize) -> Option<f64> {
    let (unique, total) = ngram_counts(seq, n);
    (total > 0).then(|| 1.0 - unique as f64 / total as f64)
}

/// Mean of per-continuation ratios; sequences shorter than `n` are skipped.
pub fn rep_n<T: Eq + Hash, S: AsRef<[T]>>(continuations: &[S], n: usize) -> f64 {
    let ratios: Vec<f64> = continuations.iter().filter_map(|s| rep_n_single(s.as_ref(), n)).collect();
    if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

/// Unique and total n-grams summed over continuations (n-grams are
/// deduplicated within each continuation only).
pub fn rep_n_pooled<T: Eq + Hash, S: AsRef<[T]>>(continuations: &[S], n: usize) -> f64 {
    let (unique, total) = continuations
        .iter()
        .map(|s| ngram_counts(s.as_ref(), n))
        .fold((0, 0), |(u, t), (a, b)| (u + a, t + b));
    if total == 0 {
        0.0
    } else {
        1.0 - unique as f64 / total as f64
    }
}

pub fn uniq_words<T: Eq + Hash, S: AsRef<[T]>>(continuations: &[S]) -> usize {
    continuations.iter().flat_map(|s| s.as_ref()).collect::<HashSet<_>>().len()
}

/// Whitespace words of a detokenized continuation.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationMetrics {
    pub rep_n: BTreeMap<usize, f64>,
    pub rep_n_pooled: BTreeMap<usize, f64>,
    pub uniq_w: usize,
    pub continuations: usize,
}

impl GenerationMetrics {
    /// Word-level metrics over detokenized continuations.
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        let seqs: Vec<Vec<&str>> = texts.iter().map(|t| words(t.as_ref())).collect();
        Self {
            rep_n: REP_ORDERS.iter().map(|&n| (n, rep_n(&seqs, n))).collect(),
            rep_n_pooled: REP_ORDERS.iter().map(|&n| (n, rep_n_pooled(&seqs, n))).collect(),
            uniq_w: uniq_words(&seqs),
            continuations: seqs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ppl: f64,
    pub uniq: usize,
    pub rep_l: BTreeMap<usize, f64>,
    pub generation: Option<GenerationMetrics>,
    pub meta: BTreeMap<String, String>,
}

impl MetricsReport {
    /// Teacher-forced metrics from a mean NLL and (truth, argmax) streams.
    pub fn teacher_forced(mean_nll: f64, streams: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<Self> {
        let mut rep_l = BTreeMap::new();
        for l in REP_WINDOWS {
            rep_l.insert(l, rep_slash_l_corpus(streams, l)?);
        }
        Ok(Self {
            ppl: perplexity(mean_nll),
            uniq: uniq_next_token(streams.iter().flat_map(|(_, p)| p)),
            rep_l,
            generation: None,
            meta: BTreeMap::new(),
        })
    }

    /// `(name, value)` rows in report order.
    pub fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![("ppl".to_string(), self.ppl.to_string()), ("uniq".to_string(), self.uniq.to_string())];
        for (l, v) in &self.rep_l {
            rows.push((format!("rep{l}"), v.to_string()));
        }
        if let Some(g) = &self.generation {
            for (n, v) in &g.rep_n {
                rows.push((format!("rep{n}"), v.to_string()));
            }
            rows.push(("uniq_w".to_string(), g.uniq_w.to_string()));
            for (n, v) in &g.rep_n_pooled {
                rows.push((format!("rep{n}_pooled"), v.to_string()));
            }
        }
        rows
    }

    pub fn keys(&self) -> Vec<String> {
        self.rows().into_iter().map(|(k, _)| k).collect()
    }

    pub fn to_tsv(&self) -> String {
        self.rows().into_iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
    }

    /// Flat metric map plus a `meta` object.
    pub fn to_json(&self) -> String {
        let metrics: serde_json::Map<String, serde_json::Value> = self
            .rows()
            .into_iter()
            .map(|(k, v)| {
                let value = v
                    .parse::<u64>()
                    .map(serde_json::Value::from)
                    .or_else(|_| v.parse::<f64>().map(serde_json::Value::from))
                    .unwrap_or(serde_json::Value::String(v));
                (k, value)
            })
            .collect();
        let doc = serde_json::json!({ "metrics": metrics, "meta": self.meta });
        let mut out = serde_json::to_string_pretty(&doc).expect("report serializes");
        out.push('\n');
        out
    }
}
