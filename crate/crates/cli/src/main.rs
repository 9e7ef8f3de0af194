use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tokenfix::config::{CliConfig, Overrides, SHORTCUTS};
use tokenfix::corpus::{
    assign_folds, fold_split, load_corpus, save_corpus, seed_errors, split_folds, CorpusRecord,
    ToyGenerator,
};
use tokenfix::demos::{generate_demonstration, load_demos, save_demos, DemoOutcome};
use tokenfix::env::{Env, State};
use tokenfix::eval::{
    evaluate_corpus, export_embeddings, fix_program, silhouette, write_results, NetPolicy,
    Outcome, ProbeLabel,
};
use tokenfix::net::{load_checkpoint, save_checkpoint, ModelParams, Scalar};
use tokenfix::oracle::Oracle;
use tokenfix::par::par_map;
use tokenfix::token::{lex, render, TokenSeq};
use tokenfix::trainer::{train, Precision, TrainConfig, TrainProgram};
use tokenfix::vocab::Vocabulary;

/// Learns to repair typographic syntax errors in C programs.
#[derive(Parser, Debug)]
#[command(name = "tokenfix", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set train.gamma=0.95`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Seed for initialization, sampling and corpus generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Deterministic lockstep schedule on one thread.
    #[arg(long, global = true)]
    serial: bool,
    /// Share of training programs that replay their demonstration.
    #[arg(long, global = true)]
    demo_fraction: Option<f64>,
    /// Reward for each non-goal edit (0 removes the penalty).
    #[arg(long, global = true, allow_negative_numbers = true)]
    edit_penalty: Option<f64>,
    /// ADAM learning rate.
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Number of actor-learners.
    #[arg(long, global = true)]
    learners: Option<usize>,
    /// Passes over the training corpus.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Stop after this many episodes.
    #[arg(long, global = true)]
    max_episodes: Option<usize>,
    /// f32 or f64.
    #[arg(long, global = true)]
    precision: Option<String>,
    /// Episodes per training log row; 0 logs once per epoch.
    #[arg(long, global = true)]
    log_every: Option<usize>,
    /// Episodes between checkpoints; 0 disables them.
    #[arg(long, global = true)]
    checkpoint_every: Option<usize>,
    /// Where periodic checkpoints go.
    #[arg(long, global = true, value_name = "DIR")]
    checkpoint_dir: Option<PathBuf>,
    /// surrogate or external.
    #[arg(long, global = true)]
    oracle: Option<String>,
    /// Compiler command for the external oracle; `{src}` marks the file.
    #[arg(long, global = true)]
    oracle_command: Option<String>,
    /// Seconds before a compiler run counts as failed.
    #[arg(long, global = true)]
    oracle_timeout: Option<f64>,
    /// Vocabulary file (defaults to the built-in one).
    #[arg(long, global = true, value_name = "FILE")]
    vocab: Option<PathBuf>,
}

impl Global {
    fn flag_overrides(&self) -> Result<Overrides> {
        let mut o = Overrides::new();
        let mut put = |flag: &str, value: Option<String>| {
            if let Some(v) = value {
                let key = SHORTCUTS
                    .iter()
                    .find(|(f, _)| *f == flag)
                    .map(|(_, k)| *k)
                    .expect("every flag has a shortcut entry");
                o.set(key, v);
            }
        };
        let quoted = |s: &str| format!("{s:?}");
        put("seed", self.seed.map(|v| v.to_string()));
        put("serial", self.serial.then(|| "true".to_string()));
        put("demo-fraction", self.demo_fraction.map(|v| format!("{v:?}")));
        put("edit-penalty", self.edit_penalty.map(|v| format!("{v:?}")));
        put("learning-rate", self.learning_rate.map(|v| format!("{v:?}")));
        put("learners", self.learners.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("max-episodes", self.max_episodes.map(|v| v.to_string()));
        put("precision", self.precision.as_deref().map(quoted));
        put("log-every", self.log_every.map(|v| v.to_string()));
        put("checkpoint-every", self.checkpoint_every.map(|v| v.to_string()));
        put("checkpoint-dir", self.checkpoint_dir.as_ref().map(|p| quoted(&p.to_string_lossy())));
        put("oracle", self.oracle.as_deref().map(quoted));
        put("oracle-command", self.oracle_command.as_deref().map(quoted));
        put("oracle-timeout", self.oracle_timeout.map(|v| format!("{v:?}")));
        put("vocab", self.vocab.as_ref().map(|p| quoted(&p.to_string_lossy())));
        for s in &self.set {
            o.set_assignment(s)?;
        }
        Ok(o)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Show the token stream of a program and its error count.
    Lex {
        file: PathBuf,
        /// Also print the network input ids.
        #[arg(long)]
        ids: bool,
    },
    /// Write a synthetic corpus of programs with seeded errors.
    SeedCorpus {
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Seed errors into the clean programs of this corpus instead of
        /// generating toy programs.
        #[arg(long, value_name = "FILE")]
        from: Option<PathBuf>,
        /// First and one-past-last problem index, e.g. `0..30`.
        #[arg(long, default_value = "0..30")]
        problems: String,
        #[arg(long, default_value_t = 10)]
        variants: usize,
        /// Errors per program, e.g. `1..=2`.
        #[arg(long, default_value = "1..=2")]
        faults: String,
        /// Split problems into this many folds.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Derive expert demonstrations from (broken, fixed) pairs.
    GenDemos {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train the repair policy.
    Train {
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        #[arg(long, value_name = "FILE")]
        demos: Option<PathBuf>,
        /// Where the trained parameters go.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Continue from these parameters.
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
        /// Leave this fold out of training.
        #[arg(long)]
        held_out_fold: Option<u8>,
        /// Training curve as CSV.
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },
    /// Repair one program.
    Fix {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        file: PathBuf,
        /// Print every step.
        #[arg(long)]
        trace: bool,
        /// Write the step trace as JSON lines.
        #[arg(long, value_name = "FILE")]
        trace_out: Option<PathBuf>,
        /// Exit with status 1 unless the program ends up compiling.
        #[arg(long)]
        require_complete: bool,
    },
    /// Repair a corpus and report metrics.
    Eval {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// Evaluate only this fold.
        #[arg(long)]
        fold: Option<u8>,
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        /// Per-program results with action traces, as JSON lines.
        #[arg(long, value_name = "FILE")]
        results: Option<PathBuf>,
    },
    /// Embed probe states of single-error programs and project them to 3-D.
    ExportEmbeddings {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Use at most this many programs.
        #[arg(long)]
        limit: Option<usize>,
    },
}

/// Failures with a specific exit status.
#[derive(Debug)]
enum Exit {
    Usage(String),
    Domain(String),
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Exit::Usage(m) | Exit::Domain(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Exit {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Exit>() {
                Some(Exit::Usage(_)) => {
                    eprintln!("{}", Cli::command().render_usage());
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let env_layer = Overrides::from_env(std::env::vars());
    let flags = cli.global.flag_overrides().map_err(|e| Exit::Usage(e.to_string()))?;
    let cfg = CliConfig::resolve(cli.global.config.as_deref(), &env_layer, &flags)
        .map_err(|e| Exit::Usage(e.to_string()))?;
    if cli.global.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Exit::Usage("a subcommand is required; see --help".into()).into());
    };
    log::info!("effective configuration:\n{}", cfg.to_toml()?);
    let vocab = match &cfg.paths.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::builtin(),
    };
    let oracle = Oracle::new(cfg.oracle.clone())?;
    let env = Env::new(&oracle, cfg.train.env);

    match command {
        Command::Lex { file, ids } => {
            let seq = read_program(&file)?;
            for t in seq.code_tokens() {
                println!("{:>3}:{:<3} {:<16} {}", t.line, t.col, format!("{:?}", t.kind), t.lexeme);
            }
            if ids {
                let ids: Vec<String> = vocab.normalize(&seq).iter().map(u32::to_string).collect();
                println!("ids: {}", ids.join(" "));
            }
            let report = oracle.check(&seq)?;
            println!("errors: {}", report.count());
            for m in &report.messages {
                println!("  {m}");
            }
        }
        Command::SeedCorpus {
            out,
            from,
            problems,
            variants,
            faults,
            folds,
        } => {
            let faults = parse_range(&faults)?;
            let mut records = match from {
                Some(path) => seed_from(&path, faults, cfg.train.seed)?,
                None => {
                    let problems = parse_range(&problems)?;
                    ToyGenerator::new(cfg.train.seed).seeded_corpus(
                        *problems.start()..*problems.end() + 1,
                        variants,
                        faults,
                    )?
                }
            };
            if let Some(n) = folds {
                let map = split_folds(&records, n, cfg.train.seed)?;
                assign_folds(&mut records, &map);
            }
            save_corpus(&records, &out)?;
            println!("wrote {} programs to {}", records.len(), out.display());
        }
        Command::GenDemos { corpus, out } => {
            let records = nonempty(load_corpus(&corpus)?, &corpus)?;
            let outcomes = par_map(&records, |r| -> tokenfix::Result<Option<DemoOutcome>> {
                let Some(fixed) = &r.fixed_source else {
                    return Ok(None);
                };
                generate_demonstration(&env, &r.id, &lex(&r.source), &lex(fixed)).map(Some)
            });
            let mut demos = Vec::new();
            let (mut missing, mut inexpressible) = (0, 0);
            for (r, o) in records.iter().zip(outcomes) {
                match o? {
                    Some(DemoOutcome::Demo(d)) => demos.push(d),
                    Some(DemoOutcome::NotExpressible(why)) => {
                        log::warn!("{}: no demonstration ({why})", r.id);
                        inexpressible += 1;
                    }
                    None => missing += 1,
                }
            }
            save_demos(&demos, &out)?;
            println!(
                "wrote {} demonstrations to {} ({inexpressible} not expressible, {missing} without a fixed version)",
                demos.len(),
                out.display()
            );
        }
        Command::Train {
            corpus,
            demos,
            out,
            init,
            held_out_fold,
            log,
        } => {
            log::info!("effective configuration:\n{}", cfg.to_toml()?);
            let mut records = nonempty(load_corpus(&corpus)?, &corpus)?;
            if let Some(fold) = held_out_fold {
                records = fold_split(&records, fold).0;
                records = nonempty(records, &corpus)?;
            }
            let programs: Vec<TrainProgram> = records
                .iter()
                .map(|r| TrainProgram {
                    id: r.id.clone(),
                    program: lex(&r.source),
                })
                .collect();
            let demos = match demos {
                Some(p) => load_demos(&p)?,
                None => Vec::new(),
            };
            match cfg.train.precision {
                Precision::F32 => {
                    run_training::<f32>(&programs, &demos, &cfg.train, &oracle, &vocab, init, &out, log)?
                }
                Precision::F64 => {
                    run_training::<f64>(&programs, &demos, &cfg.train, &oracle, &vocab, init, &out, log)?
                }
            }
        }
        Command::Fix {
            model,
            file,
            trace,
            trace_out,
            require_complete,
        } => {
            let (params, _) = load_checkpoint::<f32>(&model)?;
            let program = read_program(&file)?;
            if oracle.check(&program)?.count() == 0 {
                println!("{}: already compiles", file.display());
                return Ok(());
            }
            let policy = NetPolicy {
                params: &params,
                vocab: &vocab,
            };
            let id = file.display().to_string();
            let result = fix_program(&policy, &env, &id, &program)?;
            if trace {
                print_trace(&env, &program, &result)?;
            }
            if let Some(path) = trace_out {
                tokenfix::env::write_trace(BufWriter::new(File::create(&path)?), &result.trace)?;
            }
            print!("{}", result.final_text);
            eprintln!(
                "{}: {:?}, errors {} -> {}, {} steps",
                file.display(),
                result.outcome,
                result.errors_before,
                result.errors_after,
                result.trace.len()
            );
            if require_complete && result.outcome != Outcome::Complete {
                return Err(Exit::Domain(format!("{} was not completely fixed", file.display())).into());
            }
        }
        Command::Eval {
            model,
            corpus,
            fold,
            csv,
            results,
        } => {
            let mut records = load_corpus(&corpus)?;
            if let Some(f) = fold {
                records = fold_split(&records, f).1;
            }
            let records = nonempty(records, &corpus)?;
            let (params, _) = load_checkpoint::<f32>(&model)?;
            let programs: Vec<(String, TokenSeq)> =
                records.iter().map(|r| (r.id.clone(), lex(&r.source))).collect();
            let policy = NetPolicy {
                params: &params,
                vocab: &vocab,
            };
            let ev = evaluate_corpus(&policy, &env, &programs)?;
            println!("{}", ev.metrics);
            if let Some(path) = csv {
                ev.metrics.write_csv(File::create(&path)?)?;
            }
            if let Some(path) = results {
                write_results(&ev.results, BufWriter::new(File::create(&path)?))?;
            }
        }
        Command::ExportEmbeddings {
            model,
            corpus,
            out,
            limit,
        } => {
            let records = nonempty(load_corpus(&corpus)?, &corpus)?;
            let (params, _) = load_checkpoint::<f32>(&model)?;
            let programs: Vec<(String, TokenSeq, TokenSeq)> = records
                .iter()
                .filter_map(|r| {
                    r.fixed_source
                        .as_ref()
                        .map(|f| (r.id.clone(), lex(&r.source), lex(f)))
                })
                .take(limit.unwrap_or(usize::MAX))
                .collect();
            if programs.is_empty() {
                return Err(Exit::Usage(format!("{}: no program has a fixed version", corpus.display())).into());
            }
            let ex = export_embeddings(&params, &vocab, &env, &programs)?;
            ex.write_csv(BufWriter::new(File::create(&out)?))?;
            let points: Vec<Vec<f64>> = ex.rows.iter().map(|r| ex.pca.project(&r.embedding)).collect();
            let labels: Vec<usize> = ex
                .rows
                .iter()
                .map(|r| ProbeLabel::ALL.iter().position(|l| *l == r.label).unwrap_or(0))
                .collect();
            println!(
                "wrote {} probe states ({} programs skipped) to {}; silhouette {:.3}",
                ex.rows.len(),
                ex.skipped,
                out.display(),
                silhouette(&points, &labels)
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_training<T: Scalar>(
    programs: &[TrainProgram],
    demos: &[tokenfix::demos::Demonstration],
    cfg: &TrainConfig,
    oracle: &Oracle,
    vocab: &Vocabulary,
    init: Option<PathBuf>,
    out: &Path,
    log_path: Option<PathBuf>,
) -> Result<()> {
    let init: Option<ModelParams<T>> = match init {
        Some(p) => Some(load_checkpoint::<T>(&p)?.0),
        None => None,
    };
    let outcome = train::<T>(programs, demos, cfg, oracle, vocab, init)?;
    let meta = serde_json::json!({
        "updates": outcome.updates,
        "episodes": outcome.log.episodes.len(),
        "config": cfg,
    });
    save_checkpoint(&outcome.params, meta, out)?;
    if let Some(p) = log_path {
        outcome.log.write_csv(File::create(&p)?)?;
    }
    for row in outcome.log.per_epoch() {
        println!("{row}");
    }
    println!("saved parameters to {} after {} updates", out.display(), outcome.updates);
    Ok(())
}

/// Replays `result` and prints one line per step: where the cursor was,
/// which token it was on, and what the action did.
fn print_trace(env: &Env<'_>, program: &TokenSeq, result: &tokenfix::eval::FixResult) -> Result<()> {
    let mut state: State = env.reset(program)?;
    let mut out = std::io::stdout().lock();
    for rec in &result.trace {
        let under = state.seq.get(state.cursor).map_or("", |t| t.lexeme.as_str()).to_string();
        env.step(&mut state, rec.action.0)?;
        let status = match rec.accepted {
            None => String::new(),
            Some(true) => format!("  errors {} -> {}", rec.errors_before, rec.errors_after),
            Some(false) => "  rejected".to_string(),
        };
        writeln!(
            out,
            "{:>3}  line {:>2} token {:>3} `{}`  -> {}{}",
            rec.step, rec.line, rec.cursor, under, rec.action.0, status
        )?;
    }
    writeln!(out, "end: {:?}", result.termination)?;
    Ok(())
}

fn read_program(path: &Path) -> Result<TokenSeq> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(lex(&text))
}

fn nonempty(records: Vec<CorpusRecord>, path: &Path) -> Result<Vec<CorpusRecord>> {
    if records.is_empty() {
        return Err(Exit::Usage(format!("{}: corpus is empty", path.display())).into());
    }
    Ok(records)
}

/// `a..b`, `a..=b` or a single number, as an inclusive range.
fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let bad = || Exit::Usage(format!("cannot read range `{s}`; expected a..b or a..=b"));
    let (lo, hi, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        (s, s, true)
    };
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    let hi = if inclusive { hi } else { hi.checked_sub(1).ok_or_else(bad)? };
    if hi < lo {
        bail!(bad());
    }
    Ok(lo..=hi)
}

/// Seeds errors into the clean sources of an existing corpus.
fn seed_from(path: &Path, faults: std::ops::RangeInclusive<usize>, seed: u64) -> Result<Vec<CorpusRecord>> {
    use rand::Rng;
    let clean = nonempty(load_corpus(path)?, path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(clean.len());
    for r in clean {
        let fixed = lex(r.fixed_source.as_deref().unwrap_or(&r.source));
        let k = rng.gen_range(faults.clone());
        match seed_errors(&fixed, k, &mut rng) {
            Ok((broken, _)) => out.push(CorpusRecord {
                source: render(&broken),
                fixed_source: Some(render(&fixed)),
                n_errors: Some(k),
                ..r
            }),
            Err(e) => log::warn!("{}: {e}", r.id),
        }
    }
    Ok(out)
}
