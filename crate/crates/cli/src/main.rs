mod providers;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use kelp_core::encoder::{ranking_rate, separable_pairs, total_loss, train, LinearEncoder, TrainConfig, TrainingPair};
use kelp_core::graph::KnowledgeGraph;
use kelp_core::io::{read_jsonl, write_jsonl};
use kelp_core::path::aggregate_question_paths;
use kelp_core::pipeline::{answer_item, evaluate, select_for_item, AnswerConfig, Prediction};
use kelp_core::prompt::{check_shot_count, load_demonstrations};
use kelp_core::selection::SelectionConfig;
use kelp_core::trainset::{
    build_training_set, load_items, make_training_pairs, require_answers, LabeledSample, TrainsetConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use settings::{write_meta, Settings, Tuning};

#[derive(Debug, Parser)]
#[command(name = "kelp", version, about = "Select knowledge-graph paths as context for question answering")]
struct Cli {
    /// JSON file with tuning values; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(flatten)]
    tuning: Tuning,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the candidate paths of every question.
    Extract {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score candidate paths and apply the coverage rules.
    Select {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a linear encoder on labelled paths.
    TrainEncoder {
        /// Labelled samples from build-trainset.
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        trainset: Option<PathBuf>,
        /// Train on N generated separable pairs instead.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV; defaults to <out>.loss.csv.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Label candidate paths by probing the language model.
    BuildTrainset {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Counts report; defaults to <out>.report.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Answer every question with selected context.
    Answer {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of predictions against gold answers.
    Eval {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Report JSON; printed only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Extract { .. } => "extract",
            Command::Select { .. } => "select",
            Command::TrainEncoder { .. } => "train-encoder",
            Command::BuildTrainset { .. } => "build-trainset",
            Command::Answer { .. } => "answer",
            Command::Eval { .. } => "eval",
        }
    }
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    let (g, warnings) = KnowledgeGraph::load(path)?;
    log::info!(
        "{}: {} entities, {} relations, {} triples, {} skipped rows",
        path.display(),
        g.num_entities(),
        g.num_relations(),
        g.num_triples(),
        warnings.len()
    );
    Ok(g)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker pool")
}

fn write_records<T: Serialize>(out: &Path, records: &[T], s: &Settings, command: &str) -> Result<()> {
    write_jsonl(out, records)?;
    write_meta(out, s, command)?;
    log::info!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn write_json<T: Serialize>(out: &Path, value: &T, s: &Settings, command: &str) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    write_meta(out, s, command)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

#[derive(Serialize)]
struct ExtractRecord<'a> {
    id: &'a str,
    paths: &'a [String],
    unresolved: Vec<String>,
}

fn answer_config(s: &Settings) -> Result<AnswerConfig> {
    check_shot_count(s.shots)?;
    let few_shot = match (&s.few_shot, s.shots) {
        (_, 0) => Vec::new(),
        (None, _) => bail!("--shots {} needs --few-shot <file>", s.shots),
        (Some(path), n) => {
            let demos = load_demonstrations(path)?;
            if demos.len() < n {
                bail!("{} holds {} demonstrations, {n} requested", path.display(), demos.len());
            }
            demos.into_iter().take(n).collect()
        }
    };
    Ok(AnswerConfig {
        selection: SelectionConfig::new(s.k1, s.k2)?,
        relation_only: s.relation_only.then_some(s.k_rel),
        claim_recheck: s.claim_recheck,
        few_shot,
    })
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Tuning::load(path)?,
        None => Tuning::default(),
    };
    let s = cli.tuning.over(config).resolve();
    let name = cli.command.name();
    match &cli.command {
        Command::Extract { graph, questions, out } => {
            let g = load_graph(graph)?;
            let items = load_items(questions)?;
            let sets: Vec<_> = pool(s.jobs)?.install(|| {
                items
                    .par_iter()
                    .map(|it| aggregate_question_paths(&g, &it.entities))
                    .collect()
            });
            let records: Vec<ExtractRecord> = items
                .iter()
                .zip(&sets)
                .map(|(it, (ps, unresolved))| ExtractRecord {
                    id: &it.id,
                    paths: ps.sentences(),
                    unresolved: unresolved.clone(),
                })
                .collect();
            write_records(out, &records, &s, name)
        }
        Command::Select { graph, questions, out } => {
            let g = load_graph(graph)?;
            let items = load_items(questions)?;
            let provider = providers::embedding_provider(&s.provider, s.hash_dim, s.seed)?;
            let relation = providers::embedding_provider(&s.relation_provider, s.hash_dim, s.seed)?;
            let cfg = answer_config(&Settings { shots: 0, ..s.clone() })?;
            let records = pool(s.jobs)?.install(|| {
                items
                    .par_iter()
                    .map(|it| Ok(select_for_item(&g, it, &*provider, &*relation, &cfg)?.to_record(&g, &it.id)))
                    .collect::<Result<Vec<_>>>()
            })?;
            write_records(out, &records, &s, name)
        }
        Command::Answer { graph, questions, out } => {
            let g = load_graph(graph)?;
            let items = load_items(questions)?;
            let provider = providers::embedding_provider(&s.provider, s.hash_dim, s.seed)?;
            let relation = providers::embedding_provider(&s.relation_provider, s.hash_dim, s.seed)?;
            let llm = providers::llm_provider(s.llm.as_deref())?;
            let cfg = answer_config(&s)?;
            let predictions = pool(s.jobs)?.install(|| {
                items
                    .par_iter()
                    .map(|it| Ok(answer_item(&g, it, &*provider, &*relation, &*llm, &cfg)?))
                    .collect::<Result<Vec<_>>>()
            })?;
            write_records(out, &predictions, &s, name)
        }
        Command::Eval { questions, predictions, out } => {
            let items = load_items(questions)?;
            require_answers(&items)?;
            let preds: Vec<Prediction> = read_jsonl(predictions)?;
            let report = evaluate(&items, &preds);
            println!("accuracy {:.4} ({}/{}, {} missing)", report.accuracy, report.correct, report.total, report.missing);
            match out {
                Some(out) => write_json(out, &report, &s, name),
                None => Ok(()),
            }
        }
        Command::BuildTrainset { graph, questions, out, report } => {
            let g = load_graph(graph)?;
            let items = load_items(questions)?;
            let llm = providers::llm_provider(s.llm.as_deref())?;
            let cfg = TrainsetConfig {
                sample_fraction: s.sample_fraction,
                seed: s.seed,
                jobs: s.jobs,
            };
            let (samples, counts) = build_training_set(&*llm, &g, &items, &cfg)?;
            write_records(out, &samples, &s, name)?;
            let report_path = report.clone().unwrap_or_else(|| with_suffix(out, ".report.json"));
            write_json(&report_path, &counts, &s, name)
        }
        Command::TrainEncoder { trainset, synthetic, out, trace } => {
            let pairs: Vec<TrainingPair> = match (trainset, synthetic) {
                (Some(path), _) => {
                    let samples: Vec<LabeledSample> = read_jsonl(path)?;
                    make_training_pairs(&samples, s.pair_cap, s.seed)?
                }
                (None, Some(n)) => separable_pairs(*n),
                (None, None) => bail!("give --trainset or --synthetic"),
            };
            if pairs.is_empty() {
                bail!("no training pairs: every question needs at least one positive and one negative path");
            }
            let cfg = TrainConfig {
                margin: s.margin,
                learning_rate: s.learning_rate,
                epochs: s.epochs,
                seed: s.seed,
                init_scale: s.init_scale,
            };
            cfg.validate()?;
            let init = LinearEncoder::random(s.dim, s.hash_dim, s.init_scale, s.seed)?;
            let before = total_loss(&init, &pairs, s.margin);
            let outcome = train(&init, &pairs, &cfg)?;
            outcome.encoder.save(out)?;
            write_meta(out, &s, name)?;

            let trace_path = trace.clone().unwrap_or_else(|| with_suffix(out, ".loss.csv"));
            let mut csv = s.header_comment(name);
            csv.push_str("\nepoch,loss\n");
            for (epoch, loss) in outcome.loss_trace.iter().enumerate() {
                csv.push_str(&format!("{epoch},{loss:e}\n"));
            }
            csv.push_str(&format!("{},{:e}\n", outcome.loss_trace.len(), outcome.final_loss));
            std::fs::write(&trace_path, csv).with_context(|| format!("writing {}", trace_path.display()))?;
            println!(
                "{} pairs: loss {before:.6} -> {:.6}, ranking {:.1}%",
                pairs.len(),
                outcome.final_loss,
                100.0 * ranking_rate(&outcome.encoder, &pairs)
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
