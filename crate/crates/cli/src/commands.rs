//! Subcommand implementations. Each returns data as well as writing files so
//! tests can inspect results without parsing output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalegrad_core::decoding::{self, GenerationRecord};
use scalegrad_core::losses::{compare_gradient, finite_difference_check, toy_gradient_table, write_toy_tsv, FdReport};
use scalegrad_core::metrics::GenerationMetrics;
use scalegrad_core::model::{
    evaluate_teacher_forced, load_checkpoint, model_gradcheck, save_checkpoint, train_epochs_with, AdamState, EpochLog,
    NovelScope, TrainLog, ALPHA_GRID, GAMMA_GRID,
};
use scalegrad_core::vocab::{ordered_batches, Corpus, Vocabulary};
use scalegrad_core::{digest_hex, MetricsReport, Objective, StepLogits, TinyLM, TokenId, TokenizerMode};

use crate::config::RunConfig;
use crate::{UsageError, VerificationFailed, VERSION};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOSS_LOG_FILE: &str = "loss_log.tsv";
pub const CONFIG_FILE: &str = "config.txt";

fn read_input(key: &str, path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| UsageError(format!("{key}: cannot read {}: {e}", path.display())).into())
}

fn required<'a>(key: &str, value: &'a Option<PathBuf>) -> Result<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| UsageError(format!("missing required key `{key}`")).into())
}

fn vocab_digest(v: &Vocabulary) -> String {
    let mut buf = Vec::new();
    v.write_to(&mut buf).expect("in-memory write");
    digest_hex(&buf)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub out_dir: PathBuf,
    pub log: TrainLog,
    pub model_digest: String,
}

/// Trains on the whole corpus file and writes a self-describing run directory.
pub fn train(cfg: &RunConfig) -> Result<TrainOutput> {
    let corpus_path = required("corpus", &cfg.corpus)?;
    let out_dir = required("out_dir", &cfg.out_dir)?.clone();
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;

    let text = read_input("corpus", corpus_path)?;
    let max_vocab = if cfg.vocab_size == 0 { usize::MAX } else { cfg.vocab_size };
    let vocab = Vocabulary::build(&text, cfg.tokenizer, max_vocab)?;
    let corpus = Corpus::from_text(&text, &vocab)?;
    log::info!(
        "corpus: {} sequences, {} tokens, vocab {}",
        corpus.sequences.len(),
        corpus.num_tokens(),
        vocab.size()
    );

    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    vocab.save(&out_dir.join(VOCAB_FILE))?;

    let mut m = TinyLM::init(vocab.size(), cfg.d_embed, cfg.d_hidden, cfg.seed)?;
    let mut opt = AdamState::new(m.dims);
    let mut loss_log = fs::File::create(out_dir.join(LOSS_LOG_FILE))?;
    writeln!(loss_log, "epoch\tmean_loss\tmean_nll\tupdates\tmean_grad_norm")?;
    let mut write_err = None;
    let log = train_epochs_with(&mut m, &mut opt, &corpus, &train_cfg, |e: &EpochLog| {
        log::info!("epoch {}: loss {:.4} nll {:.4}", e.epoch, e.mean_loss, e.mean_nll);
        if let Err(err) = writeln!(
            loss_log,
            "{}\t{}\t{}\t{}\t{}",
            e.epoch, e.mean_loss, e.mean_nll, e.updates, e.mean_grad_norm
        ) {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(err) = write_err {
        return Err(err.into());
    }

    save_checkpoint(&m, &out_dir.join(CHECKPOINT_FILE))?;
    let model_digest = m.digest();
    let mut config_text = format!("# scalegrad {VERSION}\n");
    config_text.push_str(&cfg.to_text());
    config_text.push_str(&format!(
        "# corpus_digest = {}\n# vocab_digest = {}\n# model_digest = {model_digest}\n\
         # sequences are non-empty corpus lines, cut into chunks of at most max_len tokens (0 = no limit)\n",
        corpus.source_digest,
        vocab_digest(&vocab),
    ));
    fs::write(out_dir.join(CONFIG_FILE), config_text)?;
    Ok(TrainOutput {
        out_dir,
        log,
        model_digest,
    })
}

/// Resolved config of a run directory.
pub fn load_run_config(run_dir: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.apply_file(&run_dir.join(CONFIG_FILE))?;
    Ok(cfg)
}

/// Model and vocabulary of a trained run.
pub struct LoadedRun {
    pub model: TinyLM,
    pub vocab: Vocabulary,
}

pub fn load_run(run_dir: &Path, checkpoint: Option<&Path>, tokenizer: TokenizerMode) -> Result<LoadedRun> {
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join(CHECKPOINT_FILE));
    let model = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let vocab = Vocabulary::load(&run_dir.join(VOCAB_FILE), tokenizer)?;
    if vocab.size() != model.dims.vocab {
        anyhow::bail!(
            "checkpoint vocabulary {} does not match {} entries in {VOCAB_FILE}",
            model.dims.vocab,
            vocab.size()
        );
    }
    Ok(LoadedRun { model, vocab })
}

/// Encodes prefix lines, keeping the first `prefix_len` tokens. Shorter
/// prefixes are used as they are.
pub fn encode_prefixes(text: &str, vocab: &Vocabulary, prefix_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut ids = vocab.encode(line);
        if ids.len() > prefix_len {
            log::warn!("prefix line {}: {} tokens truncated to {prefix_len}", n + 1, ids.len());
            ids.truncate(prefix_len);
        } else if ids.len() < prefix_len {
            log::warn!("prefix line {}: only {} of {prefix_len} tokens", n + 1, ids.len());
        }
        out.push(ids);
    }
    out
}

/// Decodes every prefix with the model and returns the records.
pub fn generate_records(m: &TinyLM, vocab: &Vocabulary, prefixes: &[Vec<TokenId>], cfg: &RunConfig) -> Result<(Vec<GenerationRecord>, usize)> {
    let dcfg = cfg.decode_config();
    let mut fallbacks = 0;
    let mut records = Vec::with_capacity(prefixes.len());
    for prefix in prefixes {
        let out = decoding::generate(m, prefix, &dcfg)?;
        fallbacks += out.blocking_fallbacks;
        records.push(GenerationRecord {
            prefix_ids: prefix.clone(),
            text: vocab.decode(&out.ids)?,
            continuation_ids: out.ids,
        });
    }
    Ok((records, fallbacks))
}

/// Writes the generation file for `prefixes_path` to `output`.
pub fn generate(run_dir: &Path, checkpoint: Option<&Path>, prefixes_path: &Path, output: &Path, cfg: &RunConfig) -> Result<Vec<GenerationRecord>> {
    let run = load_run(run_dir, checkpoint, cfg.tokenizer)?;
    let prefixes = encode_prefixes(&read_input("prefixes", prefixes_path)?, &run.vocab, cfg.prefix_len);
    let (records, fallbacks) = generate_records(&run.model, &run.vocab, &prefixes, cfg)?;
    if fallbacks > 0 {
        log::warn!("n-gram blocking fell back on {fallbacks} steps");
    }
    let mut meta: Vec<(String, String)> = vec![
        ("scalegrad".into(), VERSION.into()),
        ("model_digest".into(), run.model.digest()),
        ("vocab_digest".into(), vocab_digest(&run.vocab)),
        ("tokenizer".into(), cfg.tokenizer.to_string()),
    ];
    for k in crate::config::DECODE_KEYS {
        meta.push((k.to_string(), cfg.get(k).expect("decode key")));
    }
    meta.push(("blocking_fallbacks".into(), fallbacks.to_string()));
    let mut buf = Vec::new();
    decoding::write_generation_file(&meta, &records, &mut buf)?;
    fs::write(output, buf).with_context(|| format!("writing {}", output.display()))?;
    Ok(records)
}

/// Teacher-forced metrics on `eval_corpus`, plus generation metrics when a
/// generation file is given. Writes `metrics.tsv` and `metrics.json`.
pub fn eval(
    run_dir: &Path,
    checkpoint: Option<&Path>,
    eval_corpus: &Path,
    generations: Option<&Path>,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<MetricsReport> {
    let run = load_run(run_dir, checkpoint, cfg.tokenizer)?;
    let text = read_input("corpus", eval_corpus)?;
    let corpus = Corpus::from_text(&text, &run.vocab)?;
    let tf = evaluate_teacher_forced(&run.model, &corpus, cfg.batch_size, cfg.max_len)?;
    let mut report = MetricsReport::teacher_forced(tf.mean_nll, &tf.chunks)?;
    report.meta.insert("scalegrad".into(), VERSION.into());
    report.meta.insert("model_digest".into(), run.model.digest());
    report.meta.insert("vocab_digest".into(), vocab_digest(&run.vocab));
    report.meta.insert("corpus_digest".into(), corpus.source_digest.clone());
    report.meta.insert("tokenizer".into(), cfg.tokenizer.to_string());
    report.meta.insert("eval_tokens".into(), tf.tokens.to_string());
    report.meta.insert("max_len".into(), cfg.max_len.to_string());
    if let Some(path) = generations {
        let raw = read_input("generations", path)?;
        let records = decoding::parse_generation_file(&raw)?;
        let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
        report.generation = Some(GenerationMetrics::from_texts(&texts));
        report.meta.insert("generations_digest".into(), digest_hex(raw.as_bytes()));
        for line in raw.lines().filter_map(|l| l.strip_prefix("# ")) {
            if let Some((k, v)) = line.split_once('=') {
                if crate::config::DECODE_KEYS.contains(&k) {
                    report.meta.insert(format!("decode.{k}"), v.to_string());
                }
            }
        }
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("metrics.tsv"), report.to_tsv())?;
    fs::write(out_dir.join("metrics.json"), report.to_json())?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub vocab_cap: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Adds 0.01 to one analytic gradient component of every trial.
    pub inject_fault: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            trials: 500,
            vocab_cap: 50,
            seed: 0,
            step: 1e-4,
            tolerance: 1e-4,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub check: String,
    pub cases: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Random logits, target and novel mask for one trial.
fn random_step(rng: &mut ChaCha8Rng, vocab_cap: usize) -> (Vec<f64>, usize, Vec<bool>) {
    let v = rng.random_range(2..=vocab_cap.max(2));
    let logits = (0..v).map(|_| rng.random_range(-4.0..4.0)).collect();
    let target = rng.random_range(0..v);
    let mask = (0..v).map(|_| rng.random_bool(0.5)).collect();
    (logits, target, mask)
}

fn logit_check(objective: &Objective, s: &StepLogits, opts: &GradcheckOptions) -> Result<FdReport> {
    if !opts.inject_fault {
        return Ok(finite_difference_check(objective, s, opts.step)?);
    }
    let mut analytic = objective.loss_and_grad(s)?.grad;
    analytic[s.target] += 0.01;
    let (target, mask) = (s.target, s.novel_mask);
    Ok(compare_gradient(s.values, &analytic, opts.step, |v| {
        StepLogits::new(v, target, mask)
            .and_then(|p| objective.loss_and_grad(&p))
            .map(|lg| lg.loss)
            .unwrap_or(f64::NAN)
    }))
}

/// Logit-level sweep over all three objectives, then an end-to-end check
/// of every parameter of a micro model.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<Vec<GradcheckRow>> {
    if opts.trials == 0 {
        return Err(UsageError("trials must be >= 1".into()).into());
    }
    if opts.vocab_cap < 2 {
        return Err(UsageError("vocab_cap must be >= 2".into()).into());
    }
    if !(opts.step > 0.0 && opts.step <= 1e-3) {
        return Err(UsageError(format!("step must lie in (0, 1e-3], got {}", opts.step)).into());
    }
    let mut rows = Vec::new();
    let families: [(&str, Vec<Objective>); 3] = [
        ("mle", vec![Objective::Mle]),
        ("sg", GAMMA_GRID.iter().map(|&gamma| Objective::ScaleGrad { gamma }).collect()),
        ("ul", ALPHA_GRID.iter().map(|&alpha| Objective::Unlikelihood { alpha }).collect()),
    ];
    for (fi, (name, objectives)) in families.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(fi as u64));
        let mut worst = 0.0f64;
        for trial in 0..opts.trials {
            let objective = &objectives[trial % objectives.len()];
            let (logits, target, mask) = random_step(&mut rng, opts.vocab_cap);
            let s = StepLogits::new(&logits, target, &mask)?;
            worst = worst.max(logit_check(objective, &s, opts)?.max_rel_error);
        }
        rows.push(GradcheckRow {
            check: format!("logits/{name}"),
            cases: opts.trials,
            max_rel_error: worst,
            passed: worst < opts.tolerance,
        });
    }

    let batch = micro_batch(opts.seed);
    let mut m = TinyLM::init(7, 3, 4, opts.seed)?;
    // larger weights keep the check away from the near-linear regime
    m.weights.tensors_mut().into_iter().for_each(|t| t.mapv_inplace(|x| x * 8.0));
    for objective in [
        Objective::Mle,
        Objective::ScaleGrad { gamma: 0.2 },
        Objective::Unlikelihood { alpha: 1.0 },
    ] {
        let mut r = model_gradcheck(&m, &batch, &objective, NovelScope::default(), opts.step)?;
        if opts.inject_fault {
            r.max_rel_error = r.max_rel_error.max(scalegrad_core::losses::relative_error(r.analytic[0] + 0.01, r.numeric[0]));
        }
        rows.push(GradcheckRow {
            check: format!("model/{}", objective.name()),
            cases: r.analytic.len(),
            max_rel_error: r.max_rel_error,
            passed: r.max_rel_error < opts.tolerance,
        });
    }
    Ok(rows)
}

fn micro_batch(seed: u64) -> scalegrad_core::Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let sequences: Vec<Vec<TokenId>> = (0..3)
        .map(|i| (0..4 + i).map(|_| rng.random_range(3..7)).collect())
        .collect();
    let corpus = Corpus {
        sequences,
        mode: TokenizerMode::Char,
        source_digest: String::new(),
    };
    ordered_batches(&corpus, 3, 0).remove(0)
}

pub fn format_gradcheck(rows: &[GradcheckRow]) -> String {
    let mut out = String::from("check\tcases\tmax_rel_error\tstatus\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.3e}\t{}\n",
            r.check,
            r.cases,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    out
}

/// Prints the table and turns any failed row into a verification error.
pub fn gradcheck_verdict(rows: &[GradcheckRow]) -> Result<()> {
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.check.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(VerificationFailed(format!("gradient check failed: {}", failed.join(", "))).into())
    }
}

/// Evenly spaced interior points `i / (points + 1)`.
pub fn probability_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|i| i as f64 / (points + 1) as f64).collect()
}

/// Toy gradient-norm table for each gamma, with a leading `gamma` column.
pub fn figure(gammas: &[f64], grid: &[f64], mut w: impl Write) -> Result<()> {
    let mut first = true;
    for &gamma in gammas {
        let rows = toy_gradient_table(gamma, grid)?;
        let mut buf = Vec::new();
        write_toy_tsv(&rows, &mut buf)?;
        let text = String::from_utf8(buf).expect("utf-8 table");
        let mut lines = text.lines();
        let header = lines.next().expect("header");
        if first {
            writeln!(w, "gamma\t{header}")?;
            first = false;
        }
        for line in lines {
            writeln!(w, "{gamma}\t{line}")?;
        }
    }
    Ok(())
}
