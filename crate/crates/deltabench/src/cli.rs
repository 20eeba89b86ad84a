//! Command-line driver: ingest -> label -> generate -> update -> index ->
//! train-clf -> ask / evaluate over a workdir of run artifacts.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::{chunk_passages, load_snapshot, Passage, Snapshot};
use crate::dataset::maintain::{
    generate_initial_dialogues, generate_initial_qa, update_dialogue_dataset, update_qa_dataset,
};
use crate::dataset::{DialogueInstance, QaInstance};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, AnswerSystem, EvalDataset, RalmConcat, RalmDstar, Rilm, Vanilla,
};
use crate::labeler::{label_snapshot_pair, SnapshotDelta};
use crate::rilm::pipeline::answer;
use crate::rilm::{
    build_training_set_dialogue, build_training_set_qa, train_classifier, ClassCaps,
    ClassifierWeights, Task, TrainHyper,
};
use crate::store::{build_index, Index};

/// Dynamic knowledge-delta benchmark engine and retrieval-interactive QA
/// harness.
#[derive(Parser)]
#[command(name = "deltabench", version)]
pub struct Cli {
    /// Path to the run configuration TOML.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Epoch tag operated on, e.g. "2023-09".
    #[arg(long, global = true)]
    pub epoch: Option<String>,
    /// Override the configured task (qa or dialogue).
    #[arg(long, global = true, value_parser = parse_task)]
    pub task: Option<Task>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    match s {
        "qa" => Ok(Task::Qa),
        "dialogue" => Ok(Task::Dialogue),
        other => Err(format!("unknown task {other:?} (expected qa or dialogue)")),
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Normalize a raw JSONL snapshot into the workdir store.
    Ingest {
        /// Raw snapshot: one {"id", "title", "text"} object per line.
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Diff two ingested snapshots into a sentence-labeling delta.
    Label {
        #[arg(long)]
        old: String,
        #[arg(long)]
        new: String,
    },
    /// Generate the initial QA and dialogue datasets for an epoch.
    Generate,
    /// Temporally update datasets from one epoch to the next.
    Update {
        #[arg(long)]
        old: String,
        #[arg(long)]
        new: String,
    },
    /// Build and save the dense retrieval index for an epoch.
    Index,
    /// Train the certainty classifier for an epoch and task.
    TrainClf,
    /// Answer a single query and print the full trace.
    Ask {
        query: String,
        /// Optional chat history prepended for dialogue queries.
        #[arg(long)]
        history: Option<String>,
    },
    /// Evaluate a system over an epoch's dataset.
    Evaluate {
        /// One of: rilm, vanilla, ralm-concat, ralm-dstar.
        #[arg(long, default_value = "rilm")]
        system: String,
    },
}

/// Exit status contract: 0 success, 1 partial failures logged, 2 fatal.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(partial_failures) => {
            if partial_failures {
                1
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Parameter("--config is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(task) = cli.task {
        config.task = task;
    }
    Ok(config)
}

fn require_epoch(cli: &Cli) -> Result<&str> {
    cli.epoch
        .as_deref()
        .ok_or_else(|| Error::Parameter("--epoch is required for this command".into()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parameter(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|e| Error::MalformedRecord {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    let mut body = String::new();
    for item in items {
        body.push_str(
            &serde_json::to_string(item)
                .map_err(|e| Error::Parameter(format!("serialize {}: {e}", path.display())))?,
        );
        body.push('\n');
    }
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let body = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

fn load_stored_snapshot(config: &RunConfig, epoch: &str) -> Result<Snapshot> {
    read_json(&config.snapshot_path(epoch))
}

fn snapshot_passages(config: &RunConfig, snapshot: &Snapshot) -> Result<Vec<Passage>> {
    let mut passages = Vec::new();
    for article in &snapshot.articles {
        passages.extend(chunk_passages(
            article,
            config.chunk_size,
            config.chunk_overlap,
        )?);
    }
    Ok(passages)
}

fn load_index(config: &RunConfig, epoch: &str) -> Result<Index> {
    Index::load(&config.index_stem(epoch))
}

fn execute(cli: Cli) -> Result<bool> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Ingest { snapshot } => {
            let epoch = require_epoch(&cli)?;
            let snap = load_snapshot(snapshot, epoch)?;
            write_json(&config.snapshot_path(epoch), &snap)?;
            println!(
                "ingested {} articles into {}",
                snap.articles.len(),
                config.snapshot_path(epoch).display()
            );
            Ok(false)
        }
        Command::Label { old, new } => {
            let old_snap = load_stored_snapshot(&config, old)?;
            let new_snap = load_stored_snapshot(&config, new)?;
            let providers = config.build_providers()?;
            let delta = label_snapshot_pair(&old_snap, &new_snap, &providers, &config.thresholds);
            let partial = !delta.failures.is_empty();
            for (article_id, message) in &delta.failures {
                eprintln!("labeling failed for {article_id}: {message}");
            }
            write_json(&config.delta_path(old, new), &delta)?;
            println!(
                "labeled {} articles ({} failures, {} added, {} removed)",
                delta.labelings.len(),
                delta.failures.len(),
                delta.added_articles.len(),
                delta.removed_articles.len()
            );
            Ok(partial)
        }
        Command::Generate => {
            let epoch = require_epoch(&cli)?;
            let snapshot = load_stored_snapshot(&config, epoch)?;
            let providers = config.build_providers()?;
            let (qa, qa_log) = generate_initial_qa(&snapshot, &providers, config.seed);
            let (dlg, dlg_log) = generate_initial_dialogues(&snapshot, &providers);
            for line in qa_log.iter().chain(&dlg_log) {
                eprintln!("{line}");
            }
            write_jsonl(&config.dataset_path(Task::Qa, epoch), &qa)?;
            write_jsonl(&config.dataset_path(Task::Dialogue, epoch), &dlg)?;
            println!("generated {} qa instances, {} dialogues", qa.len(), dlg.len());
            Ok(!qa_log.is_empty() || !dlg_log.is_empty())
        }
        Command::Update { old, new } => {
            let old_snap = load_stored_snapshot(&config, old)?;
            let new_snap = load_stored_snapshot(&config, new)?;
            let delta: SnapshotDelta = read_json(&config.delta_path(old, new))?;
            let prev_qa: Vec<QaInstance> = read_jsonl(&config.dataset_path(Task::Qa, old))?;
            let prev_dlg: Vec<DialogueInstance> =
                read_jsonl(&config.dataset_path(Task::Dialogue, old))?;
            let providers = config.build_providers()?;
            let qa = update_qa_dataset(&prev_qa, &delta, &old_snap, &new_snap, &providers, config.seed);
            let dlg = update_dialogue_dataset(&prev_dlg, &delta, &new_snap, &providers);
            for line in qa.log.iter().chain(&dlg.log) {
                eprintln!("{line}");
            }
            write_jsonl(&config.dataset_path(Task::Qa, new), &qa.live)?;
            write_jsonl(&config.audit_path(Task::Qa, new), &qa.audit)?;
            write_jsonl(&config.dataset_path(Task::Dialogue, new), &dlg.live)?;
            println!(
                "updated: {} live qa ({} audited), {} live dialogues",
                qa.live.len(),
                qa.audit.len(),
                dlg.live.len()
            );
            Ok(!qa.log.is_empty() || !dlg.log.is_empty())
        }
        Command::Index => {
            let epoch = require_epoch(&cli)?;
            let snapshot = load_stored_snapshot(&config, epoch)?;
            let providers = config.build_providers()?;
            let passages = snapshot_passages(&config, &snapshot)?;
            let index = build_index(&passages, providers.embedder.as_ref())?;
            let stem = config.index_stem(epoch);
            if let Some(parent) = stem.parent() {
                fs::create_dir_all(parent).map_err(|source| Error::Io {
                    path: parent.display().to_string(),
                    source,
                })?;
            }
            index.save(&stem)?;
            println!("indexed {} passages into {}", index.len(), stem.display());
            Ok(false)
        }
        Command::TrainClf => {
            let epoch = require_epoch(&cli)?;
            let index = load_index(&config, epoch)?;
            let providers = config.build_providers()?;
            let task = config.task;
            let set = match task {
                Task::Qa => {
                    let data: Vec<QaInstance> = read_jsonl(&config.dataset_path(task, epoch))?;
                    build_training_set_qa(
                        &data,
                        &index,
                        providers.embedder.as_ref(),
                        providers.generator.as_ref(),
                        config.k,
                        ClassCaps::qa(),
                    )
                }
                Task::Dialogue => {
                    let data: Vec<DialogueInstance> =
                        read_jsonl(&config.dataset_path(task, epoch))?;
                    build_training_set_dialogue(
                        &data,
                        &index,
                        providers.embedder.as_ref(),
                        providers.generator.as_ref(),
                        config.k,
                        ClassCaps::dialogue(),
                    )
                }
            };
            for line in &set.log {
                eprintln!("{line}");
            }
            if set.examples.is_empty() {
                return Err(Error::Pipeline(
                    "no training examples produced; check datasets and index".into(),
                ));
            }
            let feature_dim = set.examples[0].feature.len();
            let hyper = TrainHyper {
                seed: config.seed,
                ..TrainHyper::default()
            };
            let weights = train_classifier(&set.examples, feature_dim, task.tag(), hyper)?;
            weights.save(&ensure_parent(config.classifier_path(task, epoch))?)?;
            write_json(&config.training_ids_path(task, epoch), &set.used_instance_ids)?;
            println!(
                "trained {} classifier on {} examples ({} ids recorded)",
                task.tag(),
                set.examples.len(),
                set.used_instance_ids.len()
            );
            Ok(!set.log.is_empty())
        }
        Command::Ask { query, history } => {
            let epoch = require_epoch(&cli)?;
            let index = load_index(&config, epoch)?;
            let weights = ClassifierWeights::load(&config.classifier_path(config.task, epoch))?;
            let providers = config.build_providers()?;
            let trace = answer(
                query,
                history.as_deref(),
                config.task,
                &index,
                &weights,
                providers.embedder.as_ref(),
                providers.generator.as_ref(),
                config.k,
                config.lambda,
            )?;
            println!("{}", serde_json::to_string_pretty(&trace).unwrap());
            Ok(false)
        }
        Command::Evaluate { system } => {
            let epoch = require_epoch(&cli)?;
            let index = load_index(&config, epoch)?;
            let providers = config.build_providers()?;
            let task = config.task;
            let exclude: HashSet<String> = match read_json::<Vec<String>>(
                &config.training_ids_path(task, epoch),
            ) {
                Ok(ids) => ids.into_iter().collect(),
                Err(Error::Io { .. }) => HashSet::new(),
                Err(e) => return Err(e),
            };
            let weights = || ClassifierWeights::load(&config.classifier_path(task, epoch));
            let embedder = providers.embedder.as_ref();
            let generator = providers.generator.as_ref();
            let run_eval = |sys: &dyn AnswerSystem| -> Result<crate::eval::EvalReport> {
                let report = match task {
                    Task::Qa => {
                        let data: Vec<QaInstance> = read_jsonl(&config.dataset_path(task, epoch))?;
                        evaluate(EvalDataset::Qa(&data), sys, &index, &exclude, epoch)
                    }
                    Task::Dialogue => {
                        let data: Vec<DialogueInstance> =
                            read_jsonl(&config.dataset_path(task, epoch))?;
                        evaluate(EvalDataset::Dialogue(&data), sys, &index, &exclude, epoch)
                    }
                };
                Ok(report)
            };
            let report = match system.as_str() {
                "vanilla" => run_eval(&Vanilla { generator })?,
                "ralm-concat" => run_eval(&RalmConcat {
                    index: &index,
                    embedder,
                    generator,
                    k: config.k,
                })?,
                "ralm-dstar" => {
                    let w = weights()?;
                    run_eval(&RalmDstar {
                        index: &index,
                        scorer: &w,
                        embedder,
                        generator,
                        k: config.k,
                    })?
                }
                "rilm" => {
                    let w = weights()?;
                    run_eval(&Rilm {
                        index: &index,
                        scorer: &w,
                        embedder,
                        generator,
                        k: config.k,
                        lambda: config.lambda,
                    })?
                }
                other => {
                    return Err(Error::Parameter(format!(
                        "unknown system {other:?} (expected rilm, vanilla, ralm-concat, ralm-dstar)"
                    )))
                }
            };
            for line in &report.errors {
                eprintln!("{line}");
            }
            write_json(&config.report_path(task, epoch, system), &report)?;
            print!("{}", report.table());
            Ok(!report.errors.is_empty())
        }
    }
}

fn ensure_parent(path: PathBuf) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    Ok(path)
}
