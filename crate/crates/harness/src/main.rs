use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use asrrl_core::agent::{load_checkpoint, save_checkpoint};
use asrrl_core::scoring::external::serve_echo;
use asrrl_core::Scenario;
use clap::{Args, Parser, Subcommand};

use asrrl_harness::ablate::{ablate, AblationMode};
use asrrl_harness::corpus::{gen_corpus, Corpus, CorpusSpec, EnvKind};
use asrrl_harness::records::{summarize, validate_rows, write_csv_file, Variant};
use asrrl_harness::run::{evaluate, experiment_for_checkpoint, train, Experiment};
use asrrl_harness::settings::ExperimentSpec;
use asrrl_harness::sweep::{parse_values, sweep, Axis};
use asrrl_harness::HarnessError;

#[derive(Parser)]
#[command(name = "asrrl", version, about = "Reinforcement-learning refinement of speaker embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Setting override, repeatable (`--set gamma=0.99`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    run_id: Option<String>,
}

impl ExperimentArgs {
    fn spec(&self) -> anyhow::Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::default();
        if let Some(path) = &self.config {
            spec.apply_file(path)?;
        }
        spec.apply_overrides(&self.overrides)?;
        if let Some(s) = self.scenario {
            spec.scenario = s;
        }
        if let Some(id) = &self.run_id {
            spec.run_id = id.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        speakers: usize,
        #[arg(long)]
        refs: usize,
        #[arg(long = "dim-e")]
        dim_e: usize,
        #[arg(long = "dim-t")]
        dim_t: usize,
        #[arg(long, default_value_t = 10)]
        texts: usize,
        #[arg(long, default_value = "voice")]
        env: String,
        #[arg(long, default_value_t = 0.05)]
        sigma_ref: f64,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train a policy and evaluate it on the held-out speakers.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long, default_value = "rl,raw,oracle")]
        variants: String,
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Write rows and summary CSVs here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a non-learning baseline on the held-out speakers.
    Baseline {
        #[arg(long)]
        method: Variant,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate once per value of one hyperparameter.
    Sweep {
        #[arg(long)]
        axis: Axis,
        #[arg(long)]
        values: String,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reward-term or state-segment ablation.
    Ablate {
        #[arg(long)]
        mode: AblationMode,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Few-sentence policy against the fine-tune proxy for several reference counts.
    Compare {
        #[arg(long, default_value = "2,3,5")]
        refs: String,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the loopback echo scorer on stdin/stdout.
    EchoScorer {
        /// Responses are returned in reverse order within windows of this size.
        #[arg(long, default_value_t = 8)]
        window: usize,
    },
}

fn load_corpus(path: &Path) -> anyhow::Result<Arc<Corpus>> {
    Ok(Arc::new(Corpus::read(path)?))
}

/// Corpus from `path`, or generated from the spec's corpus settings.
fn corpus_or_generated(path: Option<&Path>, spec: &ExperimentSpec, env: Option<EnvKind>) -> anyhow::Result<Arc<Corpus>> {
    match path {
        Some(p) => load_corpus(p),
        None => {
            let mut cs = spec.corpus;
            if let Some(env) = env {
                cs.env = env;
            }
            Ok(Arc::new(gen_corpus(&cs)?))
        }
    }
}

fn run_dir(out: &Path, run_id: &str) -> anyhow::Result<PathBuf> {
    let dir = out.join(run_id);
    if dir.exists() {
        return Err(HarnessError::Config(format!(
            "run id {run_id:?} already exists in {}",
            out.display()
        ))
        .into());
    }
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    Ok(dir)
}

fn print_summary(rows: &[asrrl_harness::records::RunRow]) {
    for s in summarize(rows) {
        println!(
            "{:<10} n={:<5} sim {:.4} ± {:.4}  mos {:.4} ± {:.4}  intell {:.4} ± {:.4}  fused {:.4} ± {:.4}",
            s.variant.to_string(),
            s.n,
            s.sim_mean,
            s.sim_std,
            s.mos_mean,
            s.mos_std,
            s.intell_mean,
            s.intell_std,
            s.fused_mean,
            s.fused_std
        );
    }
}

fn parse_variants(text: &str) -> anyhow::Result<Vec<Variant>> {
    text.split(',')
        .map(|v| v.trim().parse::<Variant>().map_err(Into::into))
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData {
            seed,
            speakers,
            refs,
            dim_e,
            dim_t,
            texts,
            env,
            sigma_ref,
            tau,
            out,
            force,
        } => {
            let spec = CorpusSpec {
                seed,
                env: env.parse()?,
                speakers,
                refs,
                texts_per_speaker: texts,
                d_e: dim_e,
                d_t: dim_t,
                sigma_ref,
                tau,
                ..CorpusSpec::default()
            };
            let corpus = gen_corpus(&spec)?;
            corpus.write(&out, force)?;
            println!("wrote {} speakers to {}", corpus.speakers.len(), out.display());
        }
        Command::Train { exp, corpus, out } => {
            let spec = exp.spec()?;
            let corpus = load_corpus(&corpus)?;
            let experiment = Experiment::new(spec, corpus)?;
            let dir = run_dir(&out, &experiment.spec.run_id)?;
            let outcome = train(&experiment)?;
            validate_rows(&outcome.rows)?;
            write_csv_file(&outcome.rows, &dir.join("train.csv"))?;
            save_checkpoint(&outcome.checkpoint(), &dir.join("checkpoint.json"))?;
            let mut variants = vec![Variant::Rl, Variant::Raw];
            if experiment.corpus.spec.d_e <= asrrl_harness::run::ORACLE_MAX_DIM {
                variants.push(Variant::Oracle);
            }
            let rows = evaluate(&experiment, Some(outcome.policy()), &variants)?;
            write_csv_file(&rows, &dir.join("eval.csv"))?;
            write_csv_file(&summarize(&rows), &dir.join("summary.csv"))?;
            println!(
                "trained {} ({} episodes, {} rejected updates); results in {}",
                experiment.spec.run_id,
                outcome.rows.len(),
                outcome.rejected_updates,
                dir.display()
            );
            print_summary(&rows);
        }
        Command::Eval {
            checkpoint,
            corpus,
            split,
            variants,
            exp,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let corpus = load_corpus(&corpus)?;
            let mut experiment = experiment_for_checkpoint(&ckpt, corpus, exp.spec()?)?;
            match split.as_str() {
                "eval" => {}
                "train" => experiment.split.eval = experiment.split.train.clone(),
                other => {
                    return Err(HarnessError::Config(format!(
                        "unknown split {other:?} (expected eval or train)"
                    ))
                    .into())
                }
            }
            let rows = evaluate(&experiment, Some(&ckpt.policy), &parse_variants(&variants)?)?;
            if let Some(dir) = out {
                write_csv_file(&rows, &dir.join("eval.csv"))?;
                write_csv_file(&summarize(&rows), &dir.join("summary.csv"))?;
            }
            print_summary(&rows);
        }
        Command::Baseline {
            method,
            exp,
            corpus,
            out,
        } => {
            if method == Variant::Rl {
                return Err(HarnessError::Config(
                    "rl is not a baseline; use train or eval".into(),
                )
                .into());
            }
            let experiment = Experiment::new(exp.spec()?, load_corpus(&corpus)?)?;
            let rows = evaluate(&experiment, None, &[method])?;
            if let Some(dir) = out {
                write_csv_file(&rows, &dir.join(format!("baseline-{method}.csv")))?;
            }
            print_summary(&rows);
        }
        Command::Sweep {
            axis,
            values,
            exp,
            corpus,
            out,
        } => {
            let spec = exp.spec()?;
            let values = parse_values(&values)?;
            let corpus = corpus_or_generated(corpus.as_deref(), &spec, None)?;
            let outcome = sweep(&spec, corpus, axis, &values)?;
            write_csv_file(&outcome.rows, &out.join(format!("sweep-{axis}.csv")))?;
            write_csv_file(&outcome.summary, &out.join(format!("sweep-{axis}-summary.csv")))?;
            for s in &outcome.summary {
                println!(
                    "{axis}={:<8} {:<4} n={} sim {:.4} mos {:.4} intell {:.4} fused {:.4}",
                    s.value,
                    s.variant.to_string(),
                    s.n,
                    s.sim_mean,
                    s.mos_mean,
                    s.intell_mean,
                    s.fused_mean
                );
            }
        }
        Command::Ablate {
            mode,
            exp,
            corpus,
            out,
        } => {
            let spec = exp.spec()?;
            let env = match mode {
                AblationMode::ScoreTerms => Some(EnvKind::Tradeoff),
                AblationMode::StateSegments => None,
            };
            let corpus = corpus_or_generated(corpus.as_deref(), &spec, env)?;
            let rows = ablate(&spec, corpus, mode)?;
            write_csv_file(&rows, &out.join(format!("ablate-{mode}.csv")))?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
        Command::Compare { refs, exp, out } => {
            let mut spec = exp.spec()?;
            spec.scenario = Scenario::Fs;
            let ks = parse_values(&refs)?;
            let max_k = ks.iter().fold(0.0f64, |a, &b| a.max(b)) as usize;
            spec.corpus.refs = spec.corpus.refs.max(max_k);
            let corpus = Arc::new(gen_corpus(&spec.corpus)?);
            let rows = asrrl_harness::run::compare_finetune(&spec, corpus, &ks)?;
            write_csv_file(&rows, &out.join("compare-finetune.csv"))?;
            print_summary(&rows);
        }
        Command::EchoScorer { window } => {
            let stdin = std::io::stdin();
            let input: Box<dyn BufRead> = Box::new(stdin.lock());
            let mut output = BufWriter::new(std::io::stdout().lock());
            serve_echo(input, &mut output, window)?;
            output.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<HarnessError>())
                .map_or(4, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
