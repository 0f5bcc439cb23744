//! Inference strategies: greedy, beam search with length normalization,
//! top-k and nucleus (top-p) sampling, all with optional n-gram blocking.
//!
//! Ties are broken toward the lower token id everywhere. Sampling draws from
//! a PCG-64 (`rand_pcg::Pcg64`, XSL-RR 128/64) stream seeded per call; one
//! uniform `f64` in `[0, 1)` is drawn per step and mapped through the
//! cumulative distribution in ascending id order.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use crate::losses::softmax;
use crate::model::{LstmState, TinyLM};
use crate::vocab::{BOS, EOS};
use crate::{Error, Result, TokenId};

/// Anything that yields next-token logits one token at a time.
pub trait LanguageModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// State before any token has been consumed.
    fn initial_state(&self) -> Self::State;

    /// Consumes `token` and returns the logits for the following position.
    fn feed(&self, state: &Self::State, token: TokenId) -> (Vec<f64>, Self::State);
}

impl LanguageModel for TinyLM {
    type State = LstmState;

    fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    fn initial_state(&self) -> LstmState {
        self.zero_state()
    }

    fn feed(&self, state: &LstmState, token: TokenId) -> (Vec<f64>, LstmState) {
        self.step(state, token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
    TopK(usize),
    TopP(f64),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Greedy => write!(f, "greedy"),
            Strategy::Beam(b) => write!(f, "beam:{b}"),
            Strategy::TopK(k) => write!(f, "top_k:{k}"),
            Strategy::TopP(p) => write!(f, "top_p:{p}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// `greedy`, `beam:<b>`, `top_k:<k>` or `top_p:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid decoding strategy `{s}`"));
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        match name {
            "greedy" if arg.is_empty() => Ok(Strategy::Greedy),
            "beam" => arg.parse().map(Strategy::Beam).map_err(|_| bad()),
            "top_k" => arg.parse().map(Strategy::TopK).map_err(|_| bad()),
            "top_p" => arg.parse().map(Strategy::TopP).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub max_new_tokens: usize,
    pub ngram_block: Option<usize>,
    pub length_norm_beta: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            max_new_tokens: 100,
            ngram_block: None,
            length_norm_beta: 0.0,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        match self.strategy {
            Strategy::Beam(0) => return err("beam size must be >= 1".into()),
            Strategy::TopK(0) => return err("top_k must be >= 1".into()),
            Strategy::TopP(p) if !(p > 0.0 && p <= 1.0) => return err(format!("top_p must lie in (0, 1], got {p}")),
            _ => {}
        }
        if self.max_new_tokens == 0 {
            return err("max_new_tokens must be >= 1".into());
        }
        if self.ngram_block == Some(0) {
            return err("ngram_block must be >= 1".into());
        }
        if !(self.length_norm_beta >= 0.0) {
            return err(format!("length_norm_beta must be >= 0, got {}", self.length_norm_beta));
        }
        Ok(())
    }
}

/// A partial decode. `ids` holds the prefix followed by generated tokens;
/// the registry records every n-gram of `ids` when blocking is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<TokenId>,
    pub prefix_len: usize,
    pub logprob_sum: f64,
    pub finished: bool,
    ngram_n: Option<usize>,
    /// (n-1)-gram context -> tokens that completed it
    ngram_registry: HashMap<Vec<TokenId>, BTreeSet<TokenId>>,
}

impl Hypothesis {
    pub fn new(prefix: &[TokenId], ngram_n: Option<usize>) -> Self {
        let mut h = Self {
            ids: Vec::with_capacity(prefix.len() + 128),
            prefix_len: prefix.len(),
            logprob_sum: 0.0,
            finished: false,
            ngram_n,
            ngram_registry: HashMap::new(),
        };
        for &t in prefix {
            h.ids.push(t);
            h.register_tail();
        }
        h
    }

    fn register_tail(&mut self) {
        if let Some(n) = self.ngram_n {
            if self.ids.len() >= n {
                let gram = &self.ids[self.ids.len() - n..];
                self.ngram_registry
                    .entry(gram[..n - 1].to_vec())
                    .or_default()
                    .insert(gram[n - 1]);
            }
        }
    }

    pub fn push(&mut self, token: TokenId, logprob: f64) {
        self.ids.push(token);
        self.logprob_sum += logprob;
        self.register_tail();
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.ids[self.prefix_len..]
    }

    pub fn contains_ngram(&self, gram: &[TokenId]) -> bool {
        match gram.split_last() {
            Some((last, ctx)) => self.ngram_registry.get(ctx).is_some_and(|s| s.contains(last)),
            None => false,
        }
    }

    /// Tokens that would complete an already registered n-gram.
    pub fn blocked_tokens(&self, n: usize) -> Vec<TokenId> {
        if n == 0 || self.ids.len() + 1 < n {
            return Vec::new();
        }
        let ctx = &self.ids[self.ids.len() + 1 - n..];
        self.ngram_registry
            .get(ctx)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn num_ngrams(&self) -> usize {
        self.ngram_registry.values().map(BTreeSet::len).sum()
    }
}

/// Zeroes tokens that would repeat an n-gram of `hyp` and renormalizes.
/// Returns `None` when every candidate would be blocked; blocking is then
/// skipped for the step.
pub fn apply_ngram_block(step_probs: &[f64], hyp: &Hypothesis, n: usize) -> Option<Vec<f64>> {
    let blocked = hyp.blocked_tokens(n);
    if blocked.is_empty() {
        return Some(step_probs.to_vec());
    }
    let mut out = step_probs.to_vec();
    for t in blocked {
        out[t as usize] = 0.0;
    }
    let total: f64 = out.iter().sum();
    if total <= 0.0 {
        return None;
    }
    out.iter_mut().for_each(|p| *p /= total);
    Some(out)
}

/// `logprob_sum / ((5 + length) / 6)^beta`.
pub fn length_normalized_score(logprob_sum: f64, length: usize, beta: f64) -> f64 {
    logprob_sum / ((5.0 + length as f64) / 6.0).powf(beta)
}

/// Keeps the `k` most probable tokens (lower id on ties) and renormalizes.
pub fn top_k_filter(probs: &[f64], k: usize) -> Vec<f64> {
    let order = sorted_by_prob(probs);
    let mut out = vec![0.0; probs.len()];
    for &i in order.iter().take(k.max(1)) {
        out[i] = probs[i];
    }
    normalize(out)
}

/// Keeps the smallest probability-sorted prefix with mass `>= p` (at least
/// one token) and renormalizes.
pub fn top_p_filter(probs: &[f64], p: f64) -> Vec<f64> {
    let order = sorted_by_prob(probs);
    let mut out = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        out[i] = probs[i];
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    normalize(out)
}

fn sorted_by_prob(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
    v
}

/// Index of the largest probability, lowest id on ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw in ascending id order.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Generated tokens, excluding the prefix and any final EOS.
    pub ids: Vec<TokenId>,
    pub logprob_sum: f64,
    pub finished: bool,
    /// Steps where every candidate was blocked and blocking was skipped.
    pub blocking_fallbacks: usize,
}

/// Consumes BOS and the prefix.
fn prime<M: LanguageModel>(m: &M, prefix: &[TokenId]) -> (Vec<f64>, M::State) {
    let mut state = m.initial_state();
    let mut logits = Vec::new();
    for &tok in std::iter::once(&BOS).chain(prefix) {
        let (l, s) = m.feed(&state, tok);
        logits = l;
        state = s;
    }
    (logits, state)
}

/// Softmax with blocking applied; the flag reports an all-blocked fallback.
fn step_distribution(logits: &[f64], hyp: &Hypothesis, ngram_block: Option<usize>) -> (Vec<f64>, bool) {
    let probs = softmax(logits);
    match ngram_block {
        Some(n) => match apply_ngram_block(&probs, hyp, n) {
            Some(filtered) => (filtered, false),
            None => {
                log::debug!("all candidates blocked at length {}; skipping blocking", hyp.ids.len());
                (probs, true)
            }
        },
        None => (probs, false),
    }
}

fn finish(hyp: Hypothesis, fallbacks: usize) -> DecodeOutput {
    let mut ids = hyp.generated().to_vec();
    if hyp.finished {
        ids.pop();
    }
    DecodeOutput {
        ids,
        logprob_sum: hyp.logprob_sum,
        finished: hyp.finished,
        blocking_fallbacks: fallbacks,
    }
}

/// Token-by-token decoding where `pick` chooses from the filtered distribution.
fn decode_with<M: LanguageModel>(
    m: &M,
    prefix: &[TokenId],
    cfg: &DecodeConfig,
    mut pick: impl FnMut(&[f64]) -> usize,
) -> DecodeOutput {
    let (mut logits, mut state) = prime(m, prefix);
    let mut hyp = Hypothesis::new(prefix, cfg.ngram_block);
    let mut fallbacks = 0;
    for _ in 0..cfg.max_new_tokens {
        let (probs, fell_back) = step_distribution(&logits, &hyp, cfg.ngram_block);
        fallbacks += fell_back as usize;
        let tok = pick(&probs);
        hyp.push(tok as TokenId, probs[tok].ln());
        if tok as TokenId == EOS {
            hyp.finished = true;
            break;
        }
        let (l, s) = m.feed(&state, tok as TokenId);
        logits = l;
        state = s;
    }
    finish(hyp, fallbacks)
}

pub fn greedy<M: LanguageModel>(m: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> DecodeOutput {
    decode_with(m, prefix, cfg, argmax)
}

pub fn sample_top_k<M: LanguageModel>(m: &M, prefix: &[TokenId], cfg: &DecodeConfig, k: usize) -> DecodeOutput {
    let mut rng = Pcg64::seed_from_u64(cfg.seed);
    decode_with(m, prefix, cfg, |p| sample_index(&top_k_filter(p, k), &mut rng))
}

pub fn sample_top_p<M: LanguageModel>(m: &M, prefix: &[TokenId], cfg: &DecodeConfig, p: f64) -> DecodeOutput {
    let mut rng = Pcg64::seed_from_u64(cfg.seed);
    decode_with(m, prefix, cfg, |probs| sample_index(&top_p_filter(probs, p), &mut rng))
}

struct Candidate {
    parent: usize,
    token: TokenId,
    prob: f64,
    logprob_sum: f64,
}

/// Orders finished hypotheses: higher normalized score, then lower id path.
fn rank_final(a: &Hypothesis, b: &Hypothesis, beta: f64) -> Ordering {
    let sa = length_normalized_score(a.logprob_sum, a.generated().len(), beta);
    let sb = length_normalized_score(b.logprob_sum, b.generated().len(), beta);
    sb.total_cmp(&sa).then_with(|| a.generated().cmp(b.generated()))
}

/// Beam search returning the best hypothesis and the final pool, best first.
pub fn beam_search_full<M: LanguageModel>(
    m: &M,
    prefix: &[TokenId],
    cfg: &DecodeConfig,
    beam: usize,
) -> (DecodeOutput, Vec<Hypothesis>) {
    let beam = beam.max(1);
    let beta = cfg.length_norm_beta;
    let (logits, state) = prime(m, prefix);
    let mut live: Vec<(Hypothesis, M::State, Vec<f64>)> = vec![(Hypothesis::new(prefix, cfg.ngram_block), state, logits)];
    let mut done: Vec<Hypothesis> = Vec::new();
    let mut fallbacks = 0;

    for step in 0..cfg.max_new_tokens {
        if live.is_empty() {
            break;
        }
        let mut cands = Vec::with_capacity(live.len() * m.vocab_size());
        for (pi, (hyp, _, logits)) in live.iter().enumerate() {
            let (probs, fell_back) = step_distribution(logits, hyp, cfg.ngram_block);
            fallbacks += fell_back as usize;
            for (tok, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    cands.push(Candidate {
                        parent: pi,
                        token: tok as TokenId,
                        prob: p,
                        logprob_sum: hyp.logprob_sum + p.ln(),
                    });
                }
            }
        }
        // All live hypotheses share the same length here.
        let len = step + 1;
        cands.sort_by(|a, b| {
            let (sa, sb) = (
                length_normalized_score(a.logprob_sum, len, beta),
                length_normalized_score(b.logprob_sum, len, beta),
            );
            sb.total_cmp(&sa)
                .then_with(|| live[a.parent].0.generated().cmp(live[b.parent].0.generated()))
                .then_with(|| b.prob.total_cmp(&a.prob))
                .then(a.token.cmp(&b.token))
        });
        cands.truncate(beam);

        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let (parent, pstate, _) = &live[c.parent];
            let mut hyp = parent.clone();
            hyp.push(c.token, c.logprob_sum - parent.logprob_sum);
            hyp.logprob_sum = c.logprob_sum;
            if c.token == EOS {
                hyp.finished = true;
                done.push(hyp);
            } else {
                let (l, s) = m.feed(pstate, c.token);
                next.push((hyp, s, l));
            }
        }
        live = next;
    }

    let mut pool: Vec<Hypothesis> = done.into_iter().chain(live.into_iter().map(|(h, _, _)| h)).collect();
    pool.sort_by(|a, b| rank_final(a, b, beta));
    let best = finish(pool[0].clone(), fallbacks);
    (best, pool)
}

pub fn beam_search<M: LanguageModel>(m: &M, prefix: &[TokenId], cfg: &DecodeConfig, beam: usize) -> DecodeOutput {
    beam_search_full(m, prefix, cfg, beam).0
}

/// Dispatches on `cfg.strategy`.
pub fn generate<M: LanguageModel>(m: &M, prefix: &[TokenId], cfg: &DecodeConfig) -> Result<DecodeOutput> {
    cfg.validate()?;
    Ok(match cfg.strategy {
        Strategy::Greedy => greedy(m, prefix, cfg),
        Strategy::Beam(b) => beam_search(m, prefix, cfg, b),
        Strategy::TopK(k) => sample_top_k(m, prefix, cfg, k),
        Strategy::TopP(p) => sample_top_p(m, prefix, cfg, p),
    })
}

/// One line of a generation file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRecord {
    pub prefix_ids: Vec<TokenId>,
    pub continuation_ids: Vec<TokenId>,
    pub text: String,
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

fn join_ids(ids: &[TokenId]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

/// Writes `# key=value` metadata lines followed by one tab-separated record
/// per prefix: prefix ids, continuation ids, detokenized continuation.
pub fn write_generation_file(meta: &[(String, String)], records: &[GenerationRecord], mut w: impl Write) -> std::io::Result<()> {
    for (k, v) in meta {
        writeln!(w, "# {k}={v}")?;
    }
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}",
            join_ids(&r.prefix_ids),
            join_ids(&r.continuation_ids),
            escape(&r.text)
        )?;
    }
    Ok(())
}

pub fn parse_generation_file(text: &str) -> Result<Vec<GenerationRecord>> {
    let parse_ids = |s: &str, line: usize| -> Result<Vec<TokenId>> {
        s.split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Config(format!("generation file line {line}: bad id {t:?}")))
            })
            .collect()
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(p), Some(c), Some(t)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Config(format!("generation file line {}: expected 3 columns", n + 1)));
        };
        out.push(GenerationRecord {
            prefix_ids: parse_ids(p, n + 1)?,
            continuation_ids: parse_ids(c, n + 1)?,
            text: unescape(t),
        });
    }
    Ok(out)
}
