use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Arg, ArgAction, ArgMatches, Command};

use scalegrad_cli::commands::{self, GradcheckOptions};
use scalegrad_cli::config::{DECODE_KEYS, KEYS};
use scalegrad_cli::{exit_code, RunConfig, UsageError};
use scalegrad_core::TokenizerMode;

fn key_args(keys: &[&'static str]) -> Vec<Arg> {
    keys.iter()
        .map(|k| Arg::new(*k).long(*k).value_name("VALUE").help(format!("override config key `{k}`")))
        .collect()
}

fn config_arg() -> Arg {
    Arg::new("config")
        .long("config")
        .value_name("FILE")
        .value_parser(clap::value_parser!(PathBuf))
        .help("flat key = value config file")
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn cli() -> Command {
    let eval_keys: &[&'static str] = &["batch_size", "max_len"];
    Command::new("scalegrad")
        .version(scalegrad_cli::VERSION)
        .about("Train, decode and evaluate tiny language models with MLE, unlikelihood or ScaleGrad")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("train")
                .about("train a model and write a run directory")
                .arg(config_arg())
                .args(key_args(KEYS)),
        )
        .subcommand(
            Command::new("generate")
                .about("continue each line of a prefix file")
                .arg(path_arg("run_dir", "trained run directory").required(true))
                .arg(path_arg("checkpoint", "checkpoint to load instead of <run_dir>/model.ckpt"))
                .arg(path_arg("prefixes", "one raw-text prefix per line").required(true))
                .arg(path_arg("output", "generation file to write").required(true))
                .arg(config_arg())
                .args(key_args(DECODE_KEYS)),
        )
        .subcommand(
            Command::new("eval")
                .about("write metrics.tsv and metrics.json")
                .arg(path_arg("run_dir", "trained run directory").required(true))
                .arg(path_arg("checkpoint", "checkpoint to load instead of <run_dir>/model.ckpt"))
                .arg(path_arg("corpus", "evaluation text, one sequence per line").required(true))
                .arg(path_arg("generations", "generation file to score"))
                .arg(path_arg("out_dir", "where to write the reports").required(true))
                .arg(Arg::new("tokenizer").long("tokenizer").value_name("MODE").help("expected tokenizer of the run"))
                .arg(config_arg())
                .args(key_args(eval_keys)),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("finite-difference check of every objective")
                .arg(
                    Arg::new("trials")
                        .long("trials")
                        .default_value("500")
                        .value_parser(clap::value_parser!(usize)),
                )
                .arg(
                    Arg::new("vocab_cap")
                        .long("vocab_cap")
                        .default_value("50")
                        .value_parser(clap::value_parser!(usize)),
                )
                .arg(Arg::new("seed").long("seed").default_value("0").value_parser(clap::value_parser!(u64)))
                .arg(Arg::new("step").long("step").default_value("1e-4").value_parser(clap::value_parser!(f64)))
                .arg(
                    Arg::new("tolerance")
                        .long("tolerance")
                        .default_value("1e-4")
                        .value_parser(clap::value_parser!(f64)),
                )
                .arg(Arg::new("inject_fault").long("inject_fault").action(ArgAction::SetTrue).hide(true)),
        )
        .subcommand(
            Command::new("figure")
                .about("toy two-token gradient norms as TSV")
                .arg(
                    Arg::new("gammas")
                        .long("gammas")
                        .default_value("0.2,0.5,0.8")
                        .value_delimiter(',')
                        .value_parser(clap::value_parser!(f64)),
                )
                .arg(
                    Arg::new("points")
                        .long("points")
                        .default_value("99")
                        .value_parser(clap::value_parser!(usize)),
                )
                .arg(path_arg("output", "write here instead of stdout")),
        )
}

/// Config file first, then explicit flags.
fn resolve(mut cfg: RunConfig, m: &ArgMatches, keys: &[&str]) -> Result<RunConfig> {
    if let Some(path) = m.get_one::<PathBuf>("config") {
        cfg.apply_file(path)?;
    }
    for k in keys {
        if let Some(v) = m.get_one::<String>(k) {
            cfg.set(k, v)?;
        }
    }
    Ok(cfg)
}

fn run_dir_config(m: &ArgMatches) -> Result<(PathBuf, RunConfig)> {
    let dir = m.get_one::<PathBuf>("run_dir").expect("required").clone();
    let cfg = commands::load_run_config(&dir)?;
    Ok((dir, cfg))
}

fn run(m: &ArgMatches) -> Result<()> {
    match m.subcommand().expect("subcommand required") {
        ("train", sub) => {
            let cfg = resolve(RunConfig::default(), sub, KEYS)?;
            let out = commands::train(&cfg)?;
            if let Some(last) = out.log.epochs.last() {
                println!("trained {} epochs, final mean nll {:.4}", out.log.epochs.len(), last.mean_nll);
            }
            println!("wrote {}", out.out_dir.display());
        }
        ("generate", sub) => {
            let (dir, base) = run_dir_config(sub)?;
            let cfg = resolve(base, sub, DECODE_KEYS)?;
            let output = sub.get_one::<PathBuf>("output").expect("required");
            let records = commands::generate(
                &dir,
                sub.get_one::<PathBuf>("checkpoint").map(PathBuf::as_path),
                sub.get_one::<PathBuf>("prefixes").expect("required"),
                output,
                &cfg,
            )?;
            println!("wrote {} continuations to {}", records.len(), output.display());
        }
        ("eval", sub) => {
            let (dir, base) = run_dir_config(sub)?;
            let cfg = resolve(base, sub, &["batch_size", "max_len"])?;
            if let Some(t) = sub.get_one::<String>("tokenizer") {
                let wanted: TokenizerMode = t.parse()?;
                if wanted != cfg.tokenizer {
                    return Err(UsageError(format!(
                        "tokenizer mismatch: run uses {}, requested {wanted}",
                        cfg.tokenizer
                    ))
                    .into());
                }
            }
            let out_dir = sub.get_one::<PathBuf>("out_dir").expect("required");
            let report = commands::eval(
                &dir,
                sub.get_one::<PathBuf>("checkpoint").map(PathBuf::as_path),
                sub.get_one::<PathBuf>("corpus").expect("required"),
                sub.get_one::<PathBuf>("generations").map(PathBuf::as_path),
                out_dir,
                &cfg,
            )?;
            print!("{}", report.to_tsv());
        }
        ("gradcheck", sub) => {
            let opts = GradcheckOptions {
                trials: *sub.get_one("trials").expect("default"),
                vocab_cap: *sub.get_one("vocab_cap").expect("default"),
                seed: *sub.get_one("seed").expect("default"),
                step: *sub.get_one("step").expect("default"),
                tolerance: *sub.get_one("tolerance").expect("default"),
                inject_fault: sub.get_flag("inject_fault"),
            };
            let rows = commands::gradcheck(&opts)?;
            print!("{}", commands::format_gradcheck(&rows));
            commands::gradcheck_verdict(&rows)?;
        }
        ("figure", sub) => {
            let gammas: Vec<f64> = sub.get_many::<f64>("gammas").expect("default").copied().collect();
            let grid = commands::probability_grid(*sub.get_one::<usize>("points").expect("default"));
            match sub.get_one::<PathBuf>("output") {
                Some(path) => {
                    let mut buf = Vec::new();
                    commands::figure(&gammas, &grid, &mut buf)?;
                    write_file(path, &buf)?;
                }
                None => commands::figure(&gammas, &grid, std::io::stdout().lock())?,
            }
        }
        _ => unreachable!("clap rejects unknown subcommands"),
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
