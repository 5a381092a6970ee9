use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use factorix::tokenize::Split;
use factorix::{PermKind, Tabular};

use crate::commands::{self, DiagOptions, Metric, PermSet, RunHandle, VerifySettings, APPENDIX_C};
use crate::config::ExperimentConfig;
use crate::run::{write, ManifestDiff, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "factorix", version, about = "Factorization-order consistency experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tokenizer operations.
    #[command(subcommand)]
    Tokenizer(TokenizerCmd),
    /// Tokenize a corpus and pack it into BOS-prefixed windows.
    Pack {
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long, default_value_t = 64)]
        window: usize,
        #[arg(long, default_value = "train", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the ordering × seed grid of a config.
    Train {
        config: PathBuf,
        /// Restrict to these orderings (forward, backward, fixed:<seed>).
        #[arg(long)]
        ordering: Vec<PermKind>,
        /// Restrict to these seeds.
        #[arg(long)]
        seed: Vec<u64>,
        /// Retrain runs that are already complete.
        #[arg(long)]
        force: bool,
    },
    /// Evaluation commands.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Attention, representation and paired-statistics diagnostics.
    Diag(DiagArgs),
    /// Two-alternative forced choice on an items file.
    Bench(BenchArgs),
    /// Check perplexity invariance over factorization orders exactly.
    Verify(VerifyArgs),
    /// Configuration helpers.
    #[command(subcommand)]
    Config(ConfigCmd),
    /// Run manifest helpers.
    #[command(subcommand)]
    Manifest(ManifestCmd),
}

#[derive(Debug, Subcommand)]
enum TokenizerCmd {
    /// Train a byte-level BPE on forward text.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long, default_value_t = 512)]
        vocab_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum EvalCmd {
    /// Per-sequence perplexity of a run on a packed dataset.
    Ppl {
        run: PathBuf,
        /// Packed dataset; the run's validation set by default.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Ordering to score in; the run's own by default.
        #[arg(long)]
        ordering: Option<PermKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct DiagArgs {
    runs: Vec<PathBuf>,
    /// Metric to compute; every metric enabled in the experiment's
    /// `[diagnostics]` section when omitted.
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long, default_value = "diag")]
    out: PathBuf,
    /// Validation sequences to trace; the experiment's setting by default.
    #[arg(long)]
    sequences: Option<usize>,
    /// Measure freshly initialized models instead of trained weights.
    #[arg(long)]
    at_init: bool,
    /// Imported ATTN files to analyze alongside the runs.
    #[arg(long)]
    attn: Vec<PathBuf>,
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    runs: Vec<PathBuf>,
    #[arg(long)]
    items: PathBuf,
    /// CSV of `item_id,value` correlated against the models.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Also score with the experiment's ground-truth Markov source.
    #[arg(long)]
    oracle: bool,
    /// Experiment config for the oracle when no runs are given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Distribution file: `V n` then V^n masses.
    distribution: Option<PathBuf>,
    /// Seeded random three-variable binary distribution, all six orders.
    #[arg(long)]
    appendix_c: bool,
    /// Random distribution: vocabulary, length, seed.
    #[arg(long, num_args = 3, value_names = ["V", "N", "SEED"])]
    random: Option<Vec<u64>>,
    /// `all` or a number of sampled permutations.
    #[arg(long, default_value = "all")]
    perms: PermSet,
    /// Relative tolerance; 1e-9, or 1e-12 with --appendix-c.
    #[arg(long, allow_negative_numbers = true)]
    tol: Option<f64>,
    /// Negative control: drop the BOS term and compare partial products.
    #[arg(long)]
    drop_bos: bool,
    /// Check only this sequence (comma-separated symbols); repeatable.
    #[arg(long, value_parser = parse_seq)]
    seq: Vec<Vec<u32>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ConfigCmd {
    /// Print the default configuration as TOML.
    PrintDefaults,
}

#[derive(Debug, Subcommand)]
enum ManifestCmd {
    /// Compare two run manifests field by field.
    Diff {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a run's artifacts against its manifest.
    Verify { run: PathBuf },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        other => Err(format!("unknown split '{other}'")),
    }
}

fn parse_seq(s: &str) -> Result<Vec<u32>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<u32>().map_err(|_| format!("bad symbol '{t}'")))
        .collect()
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.to_path_buf()
    } else {
        p.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let (dist, default_tol) = if args.appendix_c {
        let (v, n, seed) = APPENDIX_C;
        (Tabular::random(v, n, seed)?, 1e-12)
    } else if let Some(r) = &args.random {
        (Tabular::random(r[0] as usize, r[1] as usize, r[2])?, 1e-9)
    } else if let Some(p) = &args.distribution {
        (commands::load_distribution(p)?, 1e-9)
    } else {
        anyhow::bail!("give a distribution file, --random V n seed, or --appendix-c");
    };
    let settings = VerifySettings {
        perms: args.perms,
        tol: args.tol.unwrap_or(default_tol),
        sequences: args.seq,
        ..VerifySettings::default()
    };
    if args.drop_bos {
        let rows = commands::negative_control(&dist, &settings)?;
        let unequal = rows.iter().filter(|r| r.rel_gap() > 1e-3).count();
        eprintln!("NEGATIVE-CONTROL: BOS term dropped; forward and backward partial products are not comparable");
        eprintln!("{unequal} of {} sequences have unequal partial products (relative gap > 1e-3)", rows.len());
        emit(args.out.as_deref(), &commands::negative_control_csv(&rows))?;
        return Ok(ExitCode::SUCCESS);
    }
    let outcome = commands::verify_distribution(&dist, &settings)?;
    emit(args.out.as_deref(), &outcome.to_csv())?;
    let checks: usize = outcome.reports.iter().map(|(_, r)| r.rows.len()).sum();
    if outcome.passed {
        eprintln!(
            "pass: {checks} (sequence, ordering) checks, max relative deviation {:.3e} <= {:.1e}",
            outcome.max_rel_dev, settings.tol
        );
        Ok(ExitCode::SUCCESS)
    } else {
        let (seq, sigma) = outcome.first_failure().unwrap_or_default();
        eprintln!(
            "FAIL: max relative deviation {:.3e} > {:.1e}; first failure sequence ({seq}) sigma {sigma}",
            outcome.max_rel_dev, settings.tol
        );
        Ok(ExitCode::from(1))
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Tokenizer(TokenizerCmd::Train { corpus, vocab_size, out }) => {
            let tok = commands::tokenizer_train(&corpus, vocab_size, &out)?;
            eprintln!("{} tokens, hash {}", tok.vocab_size(), tok.content_hash());
        }
        Command::Pack {
            tokenizer,
            corpus,
            window,
            split,
            out,
        } => {
            let d = commands::pack(&tokenizer, &corpus, window, split, &out)?;
            eprintln!("{} sequences, hash {}", d.len(), d.content_hash());
        }
        Command::Train {
            config,
            ordering,
            seed,
            force,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            for dir in commands::train_grid(&cfg, &ordering, &seed, force)? {
                println!("{}", dir.display());
            }
        }
        Command::Eval(EvalCmd::Ppl {
            run,
            dataset,
            ordering,
            out,
        }) => {
            let handle = RunHandle::open(&run)?;
            let records = commands::eval_ppl(&handle, dataset.as_deref(), ordering)?;
            commands::write_records(out.as_deref(), &records)?;
        }
        Command::Diag(args) => {
            let runs = commands::open_runs(&args.runs)?;
            let sequences = args
                .sequences
                .or_else(|| runs.first().map(|r| r.experiment.config.diagnostics.sequences))
                .unwrap_or(64);
            let opts = DiagOptions {
                sequences,
                at_init: args.at_init,
                timestamp: !args.no_timestamp,
            };
            let metrics = match args.metric {
                Some(m) => vec![m],
                None => {
                    let first = runs.first().context("--metric is required without run directories")?;
                    first
                        .experiment
                        .config
                        .diagnostics
                        .enabled()
                        .into_iter()
                        .filter(|&m| m != "stats" || runs.len() > 1)
                        .map(str::parse)
                        .collect::<Result<_>>()?
                }
            };
            for metric in metrics {
                for f in commands::diag(&runs, &args.attn, metric, &opts, &args.out)? {
                    println!("{}", f.display());
                }
            }
        }
        Command::Bench(args) => {
            let runs = commands::open_runs(&args.runs)?;
            let oracle_cfg = match (&args.config, args.oracle) {
                (Some(p), _) => Some(ExperimentConfig::load(p)?),
                (None, true) => Some(
                    runs.first()
                        .context("--oracle needs a run directory or --config")?
                        .experiment
                        .config
                        .clone(),
                ),
                (None, false) => None,
            };
            let outcome = commands::bench(&runs, oracle_cfg.as_ref(), &args.items, args.reference.as_deref())?;
            for (label, o) in &outcome.results {
                eprintln!("{label}: accuracy {:.4} over {} items, {} flagged", o.accuracy, o.rows.len(), o.n_flagged);
            }
            for f in commands::write_bench(&args.out, &outcome)? {
                println!("{}", f.display());
            }
        }
        Command::Verify(args) => return verify(args),
        Command::Config(ConfigCmd::PrintDefaults) => print!("{}", ExperimentConfig::default().to_toml()),
        Command::Manifest(ManifestCmd::Diff { a, b, out }) => {
            let ma = RunManifest::load(&manifest_path(&a))?;
            let mb = RunManifest::load(&manifest_path(&b))?;
            let diff = ManifestDiff::new(&ma, &mb);
            emit(out.as_deref(), &diff.to_csv())?;
            eprintln!("differing fields: {}", diff.differing().join(", "));
            eprintln!(
                "differences explained by ordering alone: {}",
                if diff.only_ordering_differs() { "yes" } else { "no" }
            );
        }
        Command::Manifest(ManifestCmd::Verify { run }) => {
            RunManifest::load(&run)?.verify(&run)?;
            eprintln!("{}: all artifacts match", run.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Parses arguments and runs a command. Errors exit with status 2; a failed
/// invariance check exits with 1.
pub fn execute<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
