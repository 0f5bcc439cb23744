//! Per-step objectives over the logits of one decoding step.
//!
//! Every objective returns the loss together with its gradient with respect
//! to the logits. ScaleGrad rescales the probabilities of novel tokens by
//! `gamma`, renormalizes, and then applies ordinary cross-entropy, so its
//! gradient keeps the familiar `p~ - onehot(k)` form. Unlikelihood adds
//! `-alpha * sum_c log(1 - p_c)` over negative candidates.
//!
//! All arithmetic here is `f64`.

use std::fmt;
use std::io::Write;

use crate::novel::NovelTokenSet;
use crate::{Error, Result};

/// Upper bound applied to a negative candidate's probability inside
/// `log(1 - p)`. Beyond it the term is constant and contributes no gradient.
pub const UL_PROB_CLAMP: f64 = 1.0 - 1e-7;

const DISTRIBUTION_TOL: f64 = 1e-6;

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = max_of(logits);
    let mut out: Vec<f64> = logits.iter().map(|&o| (o - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|e| *e /= sum);
    out
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = max_of(logits);
    max + logits.iter().map(|&o| (o - max).exp()).sum::<f64>().ln()
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Logits of a single step, the target index and the novel-token mask.
#[derive(Debug, Clone, Copy)]
pub struct StepLogits<'a> {
    pub values: &'a [f64],
    pub target: usize,
    pub novel_mask: &'a [bool],
}

impl<'a> StepLogits<'a> {
    pub fn new(values: &'a [f64], target: usize, novel_mask: &'a [bool]) -> Result<Self> {
        if novel_mask.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "novel mask vs logits",
                left: novel_mask.len(),
                right: values.len(),
            });
        }
        if target >= values.len() {
            return Err(Error::IdOutOfRange {
                id: target,
                size: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite logit {bad}")));
        }
        Ok(Self {
            values,
            target,
            novel_mask,
        })
    }

    /// Previously seen tokens other than the target: the unlikelihood
    /// negatives at this step.
    pub fn negatives(&self) -> Vec<usize> {
        self.novel_mask
            .iter()
            .enumerate()
            .filter(|&(i, &novel)| !novel && i != self.target)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Renormalized distribution `p~` and the effective scale factors
/// (`gamma / Z` for novel tokens, `1 / Z` otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct SgDistribution {
    pub probs: Vec<f64>,
    pub scale_novel: f64,
    pub scale_nonnovel: f64,
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// `p~_i = gamma * p_i / Z` for novel `i`, `p_i / Z` otherwise, with
/// `Z = gamma * sum_novel p + sum_nonnovel p`.
pub fn scalegrad_renormalize(p: &[f64], novel_mask: &[bool], gamma: f64) -> Result<SgDistribution> {
    check_gamma(gamma)?;
    if p.len() != novel_mask.len() {
        return Err(Error::LengthMismatch {
            what: "novel mask vs probabilities",
            left: novel_mask.len(),
            right: p.len(),
        });
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOL || p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::NotADistribution(total));
    }
    let (mut novel_mass, mut other_mass) = (0.0, 0.0);
    for (&pi, &novel) in p.iter().zip(novel_mask) {
        if novel {
            novel_mass += pi;
        } else {
            other_mass += pi;
        }
    }
    // Homogeneous masks (and gamma = 1) scale every entry alike.
    if gamma == 1.0 || novel_mass == 0.0 || other_mass == 0.0 {
        return Ok(SgDistribution {
            probs: p.to_vec(),
            scale_novel: 1.0,
            scale_nonnovel: 1.0,
        });
    }
    let z = gamma * novel_mass + other_mass;
    let (scale_novel, scale_nonnovel) = (gamma / z, 1.0 / z);
    let probs = p
        .iter()
        .zip(novel_mask)
        .map(|(&pi, &novel)| pi * if novel { scale_novel } else { scale_nonnovel })
        .collect();
    Ok(SgDistribution {
        probs,
        scale_novel,
        scale_nonnovel,
    })
}

/// Cross-entropy against `softmax(o + log w)`. With all weights equal to one
/// this is exactly the MLE computation.
fn weighted_cross_entropy(values: &[f64], target: usize, weight: impl Fn(usize) -> f64) -> LossGrad {
    let max = max_of(values);
    let mut grad: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, &o)| (o - max).exp() * weight(i))
        .collect();
    let sum: f64 = grad.iter().sum();
    grad.iter_mut().for_each(|e| *e /= sum);
    let loss = sum.ln() - (values[target] - max) - weight(target).ln();
    grad[target] -= 1.0;
    LossGrad { loss, grad }
}

/// `-log p_k`, gradient `p - onehot(k)`.
pub fn loss_and_grad_mle(s: &StepLogits) -> LossGrad {
    weighted_cross_entropy(s.values, s.target, |_| 1.0)
}

/// `-log p~_k`, gradient `p~ - onehot(k)`.
pub fn loss_and_grad_scalegrad(s: &StepLogits, gamma: f64) -> Result<LossGrad> {
    check_gamma(gamma)?;
    let mask = s.novel_mask;
    Ok(weighted_cross_entropy(s.values, s.target, |i| {
        if mask[i] {
            gamma
        } else {
            1.0
        }
    }))
}

/// `-log p_k - alpha * sum_c log(1 - p_c)` over the negatives `c`.
pub fn loss_and_grad_unlikelihood(s: &StepLogits, negatives: &[usize], alpha: f64) -> Result<LossGrad> {
    check_alpha(alpha)?;
    let mut negs = negatives.to_vec();
    negs.sort_unstable();
    negs.dedup();
    for &c in &negs {
        if c == s.target {
            return Err(Error::TargetInNegatives(c));
        }
        if c >= s.values.len() {
            return Err(Error::IdOutOfRange {
                id: c,
                size: s.values.len(),
            });
        }
    }
    let mut lg = loss_and_grad_mle(s);
    let p = softmax(s.values);

    // d/do_i [-log(1 - p_c)] = p_c (1(i=c) - p_i) / (1 - p_c)
    let mut penalty = 0.0;
    let mut odds_sum = 0.0;
    for &c in &negs {
        let pc = p[c].min(UL_PROB_CLAMP);
        penalty -= (1.0 - pc).ln();
        if p[c] <= UL_PROB_CLAMP {
            let odds = p[c] / (1.0 - p[c]);
            odds_sum += odds;
            lg.grad[c] += alpha * odds;
        }
    }
    lg.loss += alpha * penalty;
    for (g, &pi) in lg.grad.iter_mut().zip(&p) {
        *g -= alpha * odds_sum * pi;
    }
    Ok(lg)
}

/// Training objective applied at every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Mle,
    ScaleGrad { gamma: f64 },
    Unlikelihood { alpha: f64 },
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::Mle => Ok(()),
            Objective::ScaleGrad { gamma } => check_gamma(gamma),
            Objective::Unlikelihood { alpha } => check_alpha(alpha),
        }
    }

    /// Dispatches on the objective; unlikelihood negatives are the non-novel
    /// tokens other than the target.
    pub fn loss_and_grad(&self, s: &StepLogits) -> Result<LossGrad> {
        match *self {
            Objective::Mle => Ok(loss_and_grad_mle(s)),
            Objective::ScaleGrad { gamma } => loss_and_grad_scalegrad(s, gamma),
            Objective::Unlikelihood { alpha } => loss_and_grad_unlikelihood(s, &s.negatives(), alpha),
        }
    }

    /// Same as [`Objective::loss_and_grad`] but reads novelty from a
    /// [`NovelTokenSet`].
    pub fn step_loss(&self, values: &[f64], target: usize, novel: &NovelTokenSet) -> Result<LossGrad> {
        match *self {
            Objective::Mle => Ok(weighted_cross_entropy(values, target, |_| 1.0)),
            Objective::ScaleGrad { gamma } => {
                check_gamma(gamma)?;
                let seen = novel.seen_mask();
                Ok(weighted_cross_entropy(values, target, |i| {
                    if seen[i] {
                        1.0
                    } else {
                        gamma
                    }
                }))
            }
            Objective::Unlikelihood { alpha } => {
                let negatives: Vec<usize> = novel
                    .seen_tokens()
                    .map(|t| t as usize)
                    .filter(|&t| t != target)
                    .collect();
                let mask = novel.membership_mask();
                let s = StepLogits {
                    values,
                    target,
                    novel_mask: &mask,
                };
                loss_and_grad_unlikelihood(&s, &negatives, alpha)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Mle => "mle",
            Objective::ScaleGrad { .. } => "sg",
            Objective::Unlikelihood { .. } => "ul",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Mle => write!(f, "mle"),
            Objective::ScaleGrad { gamma } => write!(f, "sg(gamma={gamma})"),
            Objective::Unlikelihood { alpha } => write!(f, "ul(alpha={alpha})"),
        }
    }
}

/// Relative error with an absolute fallback when both magnitudes are tiny.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
}

/// Fourth-order central difference of `loss` at coordinate `i`.
pub fn central_difference(x: &mut [f64], i: usize, step: f64, loss: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    let mut at = |x: &mut [f64], offset: f64| {
        x[i] = orig + offset;
        loss(x)
    };
    let f2p = at(x, 2.0 * step);
    let f1p = at(x, step);
    let f1m = at(x, -step);
    let f2m = at(x, -2.0 * step);
    x[i] = orig;
    (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * step)
}

/// Compares an analytic gradient against central differences of `loss`.
pub fn compare_gradient(
    point: &[f64],
    analytic: &[f64],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> FdReport {
    let mut x = point.to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| central_difference(&mut x, i, step, &mut loss))
        .collect();
    let rel_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .collect();
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    FdReport {
        analytic: analytic.to_vec(),
        numeric,
        rel_errors,
        max_rel_error,
    }
}

/// Finite-difference check of an objective's logit gradient.
pub fn finite_difference_check(objective: &Objective, s: &StepLogits, step: f64) -> Result<FdReport> {
    assert!(step > 0.0 && step <= 1e-3, "step must lie in (0, 1e-3]");
    let analytic = objective.loss_and_grad(s)?.grad;
    let negatives = s.negatives();
    let (target, mask) = (s.target, s.novel_mask);
    Ok(compare_gradient(s.values, &analytic, step, |v| {
        let probe = StepLogits {
            values: v,
            target,
            novel_mask: mask,
        };
        match *objective {
            Objective::Unlikelihood { alpha } => loss_and_grad_unlikelihood(&probe, &negatives, alpha)
                .map(|lg| lg.loss)
                .unwrap_or(f64::NAN),
            _ => objective.loss_and_grad(&probe).map(|lg| lg.loss).unwrap_or(f64::NAN),
        }
    }))
}

/// The four token roles of the two-token toy example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyCase {
    TargetNovel,
    TargetNonNovel,
    NonTargetNovel,
    NonTargetNonNovel,
}

impl ToyCase {
    pub const ALL: [ToyCase; 4] = [
        ToyCase::TargetNovel,
        ToyCase::TargetNonNovel,
        ToyCase::NonTargetNovel,
        ToyCase::NonTargetNonNovel,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ToyCase::TargetNovel => "T-N",
            ToyCase::TargetNonNovel => "T-NN",
            ToyCase::NonTargetNovel => "NT-N",
            ToyCase::NonTargetNonNovel => "NT-NN",
        }
    }

    fn is_target(&self) -> bool {
        matches!(self, ToyCase::TargetNovel | ToyCase::TargetNonNovel)
    }

    fn is_novel(&self) -> bool {
        matches!(self, ToyCase::TargetNovel | ToyCase::NonTargetNovel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyGradientRow {
    pub p: f64,
    pub case: ToyCase,
    pub sg_norm: f64,
    pub mle_norm: f64,
}

/// Gradient norms for a vocabulary of two tokens, exactly one of them novel.
/// `p` is the probability of the token whose gradient is reported.
pub fn toy_gradient_table(gamma: f64, grid: &[f64]) -> Result<Vec<ToyGradientRow>> {
    check_gamma(gamma)?;
    let mut rows = Vec::with_capacity(grid.len() * 4);
    for &p in grid {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("grid value {p} outside (0, 1)")));
        }
        for case in ToyCase::ALL {
            // the other token has probability 1 - p and the opposite novelty
            let scaled = if case.is_novel() {
                gamma * p / (gamma * p + (1.0 - p))
            } else {
                p / (p + gamma * (1.0 - p))
            };
            let indicator = if case.is_target() { 1.0 } else { 0.0 };
            rows.push(ToyGradientRow {
                p,
                case,
                sg_norm: (scaled - indicator).abs(),
                mle_norm: (p - indicator).abs(),
            });
        }
    }
    Ok(rows)
}

/// TSV with columns `p`, `case`, `sg_norm`, `mle_norm`.
pub fn write_toy_tsv(rows: &[ToyGradientRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "p\tcase\tsg_norm\tmle_norm")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{}", r.p, r.case.label(), r.sg_norm, r.mle_norm)?;
    }
    Ok(())
}
