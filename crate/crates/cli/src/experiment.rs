//! Desk-scale auto-completion protocol: train on most of a corpus, then
//! greedily continue fixed-length prefixes drawn from held-out paragraphs
//! and score the continuations.

use std::time::Instant;

use anyhow::Result;

use scalegrad_core::decoding::{greedy, DecodeConfig};
use scalegrad_core::metrics::GenerationMetrics;
use scalegrad_core::model::{evaluate_teacher_forced, train_epochs, TrainConfig, TrainLog};
use scalegrad_core::vocab::{Corpus, Vocabulary};
use scalegrad_core::{MetricsReport, Objective, TinyLM, TokenId, TokenizerMode};

#[derive(Debug, Clone, PartialEq)]
pub struct DeskSettings {
    pub tokenizer: TokenizerMode,
    /// Every `held_every`-th paragraph is held out.
    pub held_every: usize,
    pub num_prefixes: usize,
    pub prefix_len: usize,
    pub continuation_len: usize,
    pub d_embed: usize,
    pub d_hidden: usize,
    pub train: TrainConfig,
}

impl Default for DeskSettings {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerMode::Char,
            held_every: 10,
            num_prefixes: 200,
            prefix_len: 50,
            continuation_len: 100,
            d_embed: 64,
            d_hidden: 128,
            train: TrainConfig {
                learning_rate: 4e-3,
                epochs: 8,
                batch_size: 32,
                max_len: 32,
                seed: 1,
                ..TrainConfig::default()
            },
        }
    }
}

pub struct DeskData {
    pub vocab: Vocabulary,
    pub train: Corpus,
    pub held: Corpus,
    pub prefixes: Vec<Vec<TokenId>>,
}

/// Splits paragraphs into train and held-out sets and cuts prefixes.
///
/// Prefixes are consecutive non-overlapping windows: first the opening
/// window of every long-enough held-out paragraph, then the second window,
/// and so on until `num_prefixes` are collected.
pub fn prepare(text: &str, s: &DeskSettings) -> Result<DeskData> {
    let paragraphs: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let every = s.held_every.max(2);
    let (mut train_lines, mut held_lines) = (Vec::new(), Vec::new());
    for (i, p) in paragraphs.iter().enumerate() {
        if i % every == every - 1 {
            held_lines.push(*p);
        } else {
            train_lines.push(*p);
        }
    }
    let train_text = train_lines.join("\n");
    let held_text = held_lines.join("\n");
    let vocab = Vocabulary::build(&train_text, s.tokenizer, usize::MAX)?;
    let train = Corpus::from_text(&train_text, &vocab)?;
    let held = Corpus::from_text(&held_text, &vocab)?;

    let mut prefixes = Vec::with_capacity(s.num_prefixes);
    let mut round = 0;
    while prefixes.len() < s.num_prefixes {
        let start = round * s.prefix_len;
        let before = prefixes.len();
        for seq in &held.sequences {
            if prefixes.len() == s.num_prefixes {
                break;
            }
            if seq.len() >= start + s.prefix_len {
                prefixes.push(seq[start..start + s.prefix_len].to_vec());
            }
        }
        if prefixes.len() == before {
            anyhow::bail!("held-out text yields only {before} prefixes of {} tokens", s.prefix_len);
        }
        round += 1;
    }
    Ok(DeskData {
        vocab,
        train,
        held,
        prefixes,
    })
}

#[derive(Debug, Clone)]
pub struct DeskResult {
    pub objective: Objective,
    pub log: TrainLog,
    pub held_ppl: f64,
    pub rep1: f64,
    /// Teacher-forced metrics on the held-out text plus generation metrics.
    pub report: MetricsReport,
    pub samples: Vec<(String, String)>,
    pub seconds: f64,
}

/// Trains one model and scores greedy continuations of every prefix.
pub fn run(data: &DeskData, s: &DeskSettings, objective: Objective) -> Result<DeskResult> {
    let started = Instant::now();
    let mut m = TinyLM::init(data.vocab.size(), s.d_embed, s.d_hidden, s.train.seed)?;
    let cfg = TrainConfig {
        objective,
        ..s.train.clone()
    };
    let log = train_epochs(&mut m, &data.train, &cfg)?;
    let tf = evaluate_teacher_forced(&m, &data.held, 64, s.train.max_len)?;

    let dcfg = DecodeConfig {
        max_new_tokens: s.continuation_len,
        ..DecodeConfig::default()
    };
    let mut texts = Vec::with_capacity(data.prefixes.len());
    let mut samples = Vec::new();
    for prefix in &data.prefixes {
        let out = greedy(&m, prefix, &dcfg);
        let text = data.vocab.decode(&out.ids)?;
        if samples.len() < 3 {
            samples.push((data.vocab.decode(prefix)?, text.clone()));
        }
        texts.push(text);
    }
    let mut report = MetricsReport::teacher_forced(tf.mean_nll, &tf.chunks)?;
    let generation = GenerationMetrics::from_texts(&texts);
    let rep1 = generation.rep_n[&1];
    report.generation = Some(generation);
    report.meta.insert("objective".into(), objective.to_string());
    Ok(DeskResult {
        objective,
        log,
        held_ppl: report.ppl,
        rep1,
        report,
        samples,
        seconds: started.elapsed().as_secs_f64(),
    })
}
