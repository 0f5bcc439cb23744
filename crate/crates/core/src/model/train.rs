use ndarray::Array2;

use super::{argmax, AdamState, ForwardPass, GradReport, TinyLM};
use crate::losses::{compare_gradient, log_sum_exp, FdReport, Objective};
use crate::novel::NovelTokenSet;
use crate::vocab::{make_batches, ordered_batches, Batch, Corpus, BOS, EOS, UNK};
use crate::{Error, Result, TokenId};

pub const GAMMA_GRID: [f64; 3] = [0.2, 0.5, 0.8];
pub const ALPHA_GRID: [f64; 3] = [0.5, 1.0, 1.5];

/// How the per-row novel-token set is scoped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NovelScope {
    /// Seed each chunk's set with the earlier chunks of the same sequence.
    pub carry_over: bool,
    /// Never mark BOS/EOS/UNK as seen.
    pub exempt_specials: bool,
}

impl NovelScope {
    fn fresh_set(&self, vocab: usize) -> Result<NovelTokenSet> {
        if self.exempt_specials {
            NovelTokenSet::with_exempt(vocab, &[BOS, EOS, UNK])
        } else {
            NovelTokenSet::new(vocab)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub novel_scope: NovelScope,
    /// Stop after this many optimizer updates in total (0 = no limit).
    pub max_updates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Mle,
            learning_rate: 2e-3,
            epochs: 1,
            batch_size: 32,
            max_len: 300,
            seed: 0,
            clip_norm: 1.0,
            novel_scope: NovelScope::default(),
            max_updates: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-token value of the training objective.
    pub mean_loss: f64,
    /// Mean per-token NLL under the plain softmax.
    pub mean_nll: f64,
    pub updates: usize,
    pub mean_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

/// Logit gradients of the batch-mean objective, plus loss sums.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub dlogits: Vec<Array2<f64>>,
    pub loss_sum: f64,
    pub nll_sum: f64,
    pub tokens: usize,
}

/// Evaluates the objective at every valid position with a per-row novel set.
/// `corpus` is only consulted when the scope carries novelty across chunks.
pub fn batch_objective_grads(
    fwd: &ForwardPass,
    batch: &Batch,
    objective: &Objective,
    scope: NovelScope,
    corpus: Option<&Corpus>,
) -> Result<StepGrads> {
    let (rows, steps) = batch.inputs.dim();
    let vocab = fwd.logits.first().map_or(0, |l| l.ncols());
    let tokens = batch.num_valid();
    let norm = 1.0 / tokens.max(1) as f64;
    let mut dlogits = vec![Array2::<f64>::zeros((rows, vocab)); steps];
    let (mut loss_sum, mut nll_sum) = (0.0, 0.0);
    let needs_set = !matches!(objective, Objective::Mle);

    for r in 0..rows {
        let mut novel = scope.fresh_set(vocab.max(1))?;
        if needs_set && scope.carry_over {
            if let Some(c) = corpus {
                let origin = batch.origins[r];
                for &tok in &c.sequences[origin.sequence][..origin.offset] {
                    novel.advance(tok)?;
                }
            }
        }
        for t in 0..batch.lengths[r] {
            let target = batch.targets[[r, t]];
            let logits = fwd.logits[t].row(r);
            let values = logits.as_slice().expect("row-major logits");
            let lg = objective.step_loss(values, target as usize, &novel)?;
            loss_sum += lg.loss;
            nll_sum += log_sum_exp(values) - values[target as usize];
            for (d, g) in dlogits[t].row_mut(r).iter_mut().zip(&lg.grad) {
                *d = g * norm;
            }
            if needs_set {
                novel.advance(target)?;
            }
        }
    }
    Ok(StepGrads {
        dlogits,
        loss_sum,
        nll_sum,
        tokens,
    })
}

/// Backpropagates the step gradients and applies one Adam update.
pub fn backward_and_update(
    m: &mut TinyLM,
    fwd: &ForwardPass,
    grads: &StepGrads,
    opt: &mut AdamState,
    lr: f64,
    clip_norm: f64,
) -> Result<GradReport> {
    let g = m.backward(fwd, &grads.dlogits)?;
    opt.update(m, &g, lr, clip_norm)
}

pub fn train_epochs(m: &mut TinyLM, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainLog> {
    let mut opt = AdamState::new(m.dims);
    train_epochs_with(m, &mut opt, corpus, cfg, |_| {})
}

/// Training loop. Epoch `e` shuffles with seed `cfg.seed + e`; `on_epoch`
/// sees each epoch's log as soon as it is complete.
pub fn train_epochs_with(
    m: &mut TinyLM,
    opt: &mut AdamState,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut log = TrainLog::default();
    let mut total_updates = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let batches = make_batches(corpus, cfg.batch_size, cfg.max_len, cfg.seed.wrapping_add(epoch as u64));
        let (mut loss_sum, mut nll_sum, mut tokens, mut norm_sum, mut updates) = (0.0, 0.0, 0usize, 0.0, 0usize);
        let mut budget_hit = false;
        for batch in &batches {
            if cfg.max_updates > 0 && total_updates >= cfg.max_updates {
                budget_hit = true;
                break;
            }
            let fwd = m.forward(batch)?;
            let sg = batch_objective_grads(&fwd, batch, &cfg.objective, cfg.novel_scope, Some(corpus))?;
            let report = backward_and_update(m, &fwd, &sg, opt, cfg.learning_rate, cfg.clip_norm)?;
            loss_sum += sg.loss_sum;
            nll_sum += sg.nll_sum;
            tokens += sg.tokens;
            norm_sum += report.norm;
            updates += 1;
            total_updates += 1;
        }
        if updates > 0 {
            let entry = EpochLog {
                epoch,
                mean_loss: loss_sum / tokens as f64,
                mean_nll: nll_sum / tokens as f64,
                updates,
                mean_grad_norm: norm_sum / updates as f64,
            };
            if !entry.mean_loss.is_finite() || !entry.mean_nll.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: entry.mean_loss,
                });
            }
            on_epoch(&entry);
            log.epochs.push(entry);
        }
        if budget_hit {
            break 'epochs;
        }
    }
    Ok(log)
}

/// Teacher-forced evaluation: plain-softmax NLL and argmax predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherForcedEval {
    pub mean_nll: f64,
    pub tokens: usize,
    /// `(ground truth, predictions)` per chunk; `predictions[t]` is the
    /// argmax guess for `truth[t]` given `truth[..t]`.
    pub chunks: Vec<(Vec<TokenId>, Vec<TokenId>)>,
}

pub fn evaluate_teacher_forced(m: &TinyLM, corpus: &Corpus, batch_size: usize, max_len: usize) -> Result<TeacherForcedEval> {
    let (mut nll, mut tokens) = (0.0, 0usize);
    let mut chunks = Vec::new();
    for batch in ordered_batches(corpus, batch_size, max_len) {
        let fwd = m.forward(&batch)?;
        for r in 0..batch.rows() {
            let len = batch.lengths[r];
            let mut truth = Vec::with_capacity(len);
            let mut preds = Vec::with_capacity(len);
            for t in 0..len {
                let target = batch.targets[[r, t]];
                let row = fwd.logits[t].row(r);
                let values = row.as_slice().expect("row-major logits");
                nll += log_sum_exp(values) - values[target as usize];
                truth.push(target);
                preds.push(argmax(row) as TokenId);
            }
            tokens += len;
            chunks.push((truth, preds));
        }
    }
    Ok(TeacherForcedEval {
        mean_nll: nll / tokens.max(1) as f64,
        tokens,
        chunks,
    })
}

/// Mean per-token NLL over `corpus`, chunked at `max_len`.
pub fn eval_nll(m: &TinyLM, corpus: &Corpus, max_len: usize) -> Result<f64> {
    Ok(evaluate_teacher_forced(m, corpus, 64, max_len)?.mean_nll)
}

fn flatten(m: &TinyLM) -> Vec<f64> {
    m.weights.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

fn unflatten(m: &mut TinyLM, flat: &[f64]) {
    let mut it = flat.iter();
    for t in m.weights.tensors_mut() {
        t.iter_mut().for_each(|x| *x = *it.next().expect("length"));
    }
}

/// End-to-end finite-difference check of every parameter gradient of the
/// batch-mean objective.
pub fn model_gradcheck(m: &TinyLM, batch: &Batch, objective: &Objective, scope: NovelScope, step: f64) -> Result<FdReport> {
    let fwd = m.forward(batch)?;
    let sg = batch_objective_grads(&fwd, batch, objective, scope, None)?;
    let g = m.backward(&fwd, &sg.dlogits)?;
    let analytic: Vec<f64> = g.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut probe = m.clone();
    Ok(compare_gradient(&flatten(m), &analytic, step, |params| {
        unflatten(&mut probe, params);
        probe
            .forward(batch)
            .and_then(|f| batch_objective_grads(&f, batch, objective, scope, None))
            .map(|s| s.loss_sum / s.tokens as f64)
            .unwrap_or(f64::NAN)
    }))
}
