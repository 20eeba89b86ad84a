//! Temporal maintenance: keep, delete, and generate instances when a new
//! snapshot arrives, plus the initial-month generation entry points.
//!
//! An instance survives an update iff every evidence sentence maps through
//! an unchanged alignment; its evidence becomes the union of the aligned
//! new-side sentences. QA instances that fail this test move to an audit
//! stream; dialogue turns that fail are marked `Deleted` in place and the
//! dialogue survives. Ambiguous sentences never seed new instances.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::generate::{
    gen_changed_qa, gen_dialogue, gen_initial_qa, gen_new_qa, group_new_sentences, is_informative,
    select_paragraphs,
};
use super::{DialogueInstance, InstanceLabel, QaInstance};
use crate::corpus::{split_paragraphs, Article, Snapshot};
use crate::error::{Error, Result};
use crate::labeler::{SentenceLabeling, SnapshotDelta};
use crate::providers::Providers;

/// A deleted QA instance, retained for statistics and audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    #[serde(flatten)]
    pub instance: QaInstance,
    pub deleted_at_epoch: String,
}

#[derive(Debug, Default)]
pub struct QaUpdateOutcome {
    pub live: Vec<QaInstance>,
    pub audit: Vec<AuditRecord>,
    /// One line per dropped or failed generation.
    pub log: Vec<String>,
}

#[derive(Debug, Default)]
pub struct DialogueUpdateOutcome {
    pub live: Vec<DialogueInstance>,
    pub log: Vec<String>,
}

/// Map evidence indices through a labeling's unchanged alignments. Returns
/// the sorted union of the aligned new-side indices, or `None` if any
/// evidence sentence has no unchanged alignment.
fn remap_evidence(indices: &[usize], labeling: &SentenceLabeling) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for &idx in indices {
        out.extend(labeling.map_old_index(idx)?);
    }
    out.sort_unstable();
    out.dedup();
    Some(out)
}

/// Run a generation op, retrying once on malformed or rejected output.
fn with_retry<T>(mut op: impl FnMut() -> Result<T>) -> Result<T> {
    match op() {
        Err(Error::MalformedGeneration { .. }) | Err(Error::GenerationRejected(_)) => op(),
        other => other,
    }
}

struct IdAlloc<'a> {
    epoch: &'a str,
    kind: &'a str,
    counters: HashMap<String, usize>,
}

impl<'a> IdAlloc<'a> {
    fn new(epoch: &'a str, kind: &'a str) -> IdAlloc<'a> {
        IdAlloc {
            epoch,
            kind,
            counters: HashMap::new(),
        }
    }

    fn next(&mut self, article_id: &str) -> String {
        let n = self.counters.entry(article_id.to_string()).or_insert(0);
        let id = format!("{article_id}:{}:{}:{}", self.kind, self.epoch, n);
        *n += 1;
        id
    }
}

/// Generate the initial QA dataset for a snapshot (every instance `New`).
pub fn generate_initial_qa(
    snapshot: &Snapshot,
    providers: &Providers,
    seed: u64,
) -> (Vec<QaInstance>, Vec<String>) {
    let mut ids = IdAlloc::new(&snapshot.epoch, "qa");
    let mut out = Vec::new();
    let mut log = Vec::new();
    for article in &snapshot.articles {
        generate_article_initial_qa(
            article,
            providers,
            seed,
            &snapshot.epoch,
            &mut ids,
            &mut out,
            &mut log,
        );
    }
    (out, log)
}

fn generate_article_initial_qa(
    article: &Article,
    providers: &Providers,
    seed: u64,
    epoch: &str,
    ids: &mut IdAlloc,
    out: &mut Vec<QaInstance>,
    log: &mut Vec<String>,
) {
    let paragraphs = match select_paragraphs(article, providers.embedder.as_ref(), seed, 4) {
        Ok(p) => p,
        Err(e) => {
            log.push(format!("{}: paragraph selection failed: {e}", article.id));
            return;
        }
    };
    for paragraph in paragraphs {
        let id = ids.next(&article.id);
        match with_retry(|| {
            gen_initial_qa(&paragraph, article, providers.generator.as_ref(), &id, epoch)
        }) {
            Ok(qa) => out.push(qa),
            Err(e) => log.push(format!("{id}: initial QA dropped: {e}")),
        }
    }
}

/// Generate the initial dialogue dataset (informative paragraphs, all turns
/// `New`).
pub fn generate_initial_dialogues(
    snapshot: &Snapshot,
    providers: &Providers,
) -> (Vec<DialogueInstance>, Vec<String>) {
    let mut ids = IdAlloc::new(&snapshot.epoch, "dlg");
    let mut out = Vec::new();
    let mut log = Vec::new();
    for article in &snapshot.articles {
        generate_article_dialogues(
            article,
            providers,
            &snapshot.epoch,
            &|_| InstanceLabel::New,
            &|p| is_informative(p),
            &mut ids,
            &mut out,
            &mut log,
        );
    }
    (out, log)
}

#[allow(clippy::too_many_arguments)]
fn generate_article_dialogues(
    article: &Article,
    providers: &Providers,
    epoch: &str,
    label_of: &dyn Fn(usize) -> InstanceLabel,
    paragraph_filter: &dyn Fn(&crate::corpus::Paragraph) -> bool,
    ids: &mut IdAlloc,
    out: &mut Vec<DialogueInstance>,
    log: &mut Vec<String>,
) {
    for paragraph in split_paragraphs(article) {
        if !paragraph_filter(&paragraph) {
            continue;
        }
        let id = ids.next(&article.id);
        match with_retry(|| {
            gen_dialogue(
                &paragraph,
                article,
                label_of,
                providers.generator.as_ref(),
                &id,
                epoch,
            )
        }) {
            Ok(d) => out.push(d),
            Err(e) => log.push(format!("{id}: dialogue dropped: {e}")),
        }
    }
}

/// Apply one snapshot transition to the QA dataset: revalidate every prior
/// instance, then generate instances for new groups, changed pairs, and
/// brand-new articles.
pub fn update_qa_dataset(
    prev: &[QaInstance],
    delta: &SnapshotDelta,
    old_snapshot: &Snapshot,
    new_snapshot: &Snapshot,
    providers: &Providers,
    seed: u64,
) -> QaUpdateOutcome {
    let epoch = new_snapshot.epoch.clone();
    let labelings: HashMap<&str, &SentenceLabeling> = delta
        .labelings
        .iter()
        .map(|l| (l.article_id.as_str(), l))
        .collect();
    let old_articles: HashMap<&str, &Article> = old_snapshot
        .articles
        .iter()
        .map(|a| (a.id.as_str(), a))
        .collect();
    let new_articles: HashMap<&str, &Article> = new_snapshot
        .articles
        .iter()
        .map(|a| (a.id.as_str(), a))
        .collect();

    let mut outcome = QaUpdateOutcome::default();
    let delete = |instance: &QaInstance, outcome: &mut QaUpdateOutcome| {
        let mut audited = instance.clone();
        audited.label = InstanceLabel::Deleted;
        outcome.audit.push(AuditRecord {
            instance: audited,
            deleted_at_epoch: epoch.clone(),
        });
    };

    for instance in prev {
        match labelings.get(instance.article_id.as_str()) {
            Some(labeling) => match remap_evidence(&instance.evidence_indices, labeling) {
                Some(indices) => {
                    let article = new_articles[instance.article_id.as_str()];
                    let mut kept = instance.clone();
                    kept.label = InstanceLabel::Unchanged;
                    kept.previous_answer = None;
                    kept.evidence_text = indices
                        .iter()
                        .map(|&i| article.sentences[i].text.clone())
                        .collect();
                    kept.evidence_indices = indices;
                    kept.epoch = epoch.clone();
                    outcome.live.push(kept);
                }
                None => delete(instance, &mut outcome),
            },
            None => {
                // Article removed, or its labeling failed: either way the
                // evidence can no longer be validated.
                if !new_articles.contains_key(instance.article_id.as_str()) {
                    outcome
                        .log
                        .push(format!("{}: article removed", instance.id));
                } else {
                    outcome
                        .log
                        .push(format!("{}: labeling unavailable", instance.id));
                }
                delete(instance, &mut outcome);
            }
        }
    }

    let mut ids = IdAlloc::new(&epoch, "qa");
    for labeling in &delta.labelings {
        let article = new_articles[labeling.article_id.as_str()];
        for group_indices in group_new_sentences(labeling, article) {
            let group: Vec<_> = group_indices
                .iter()
                .map(|&i| article.sentences[i].clone())
                .collect();
            let id = ids.next(&article.id);
            match with_retry(|| {
                gen_new_qa(
                    &group,
                    &article.id,
                    Some(&article.text),
                    providers.generator.as_ref(),
                    &id,
                    &epoch,
                )
            }) {
                Ok(qa) => outcome.live.push(qa),
                Err(e) => outcome.log.push(format!("{id}: new QA dropped: {e}")),
            }
        }
        for &(old_idx, new_idx) in &labeling.changed {
            let Some(old_article) = old_articles.get(labeling.article_id.as_str()) else {
                continue;
            };
            let id = ids.next(&article.id);
            match with_retry(|| {
                gen_changed_qa(
                    &old_article.sentences[old_idx].text,
                    &article.sentences[new_idx],
                    &article.id,
                    &article.text,
                    providers.generator.as_ref(),
                    &id,
                    &epoch,
                )
            }) {
                Ok(qa) => outcome.live.push(qa),
                Err(e) => outcome.log.push(format!("{id}: changed QA dropped: {e}")),
            }
        }
    }

    for article_id in &delta.added_articles {
        let article = new_articles[article_id.as_str()];
        generate_article_initial_qa(
            article,
            providers,
            seed,
            &epoch,
            &mut ids,
            &mut outcome.live,
            &mut outcome.log,
        );
    }

    outcome
}

/// Per-sentence label lookup for a labeled article, used to tag dialogue
/// turns.
fn sentence_label(labeling: &SentenceLabeling, idx: usize) -> InstanceLabel {
    if labeling.changed.iter().any(|&(_, n)| n == idx) {
        InstanceLabel::Changed
    } else if labeling.new.contains(&idx) {
        InstanceLabel::New
    } else {
        InstanceLabel::Unchanged
    }
}

/// Apply one snapshot transition to the dialogue dataset. Deletion is per
/// turn: a turn whose evidence no longer maps stays in place labeled
/// `Deleted` with its last-known evidence.
pub fn update_dialogue_dataset(
    prev: &[DialogueInstance],
    delta: &SnapshotDelta,
    new_snapshot: &Snapshot,
    providers: &Providers,
) -> DialogueUpdateOutcome {
    let epoch = new_snapshot.epoch.clone();
    let labelings: HashMap<&str, &SentenceLabeling> = delta
        .labelings
        .iter()
        .map(|l| (l.article_id.as_str(), l))
        .collect();
    let new_articles: HashMap<&str, &Article> = new_snapshot
        .articles
        .iter()
        .map(|a| (a.id.as_str(), a))
        .collect();

    let mut outcome = DialogueUpdateOutcome::default();
    for instance in prev {
        let mut kept = instance.clone();
        kept.epoch = epoch.clone();
        let labeling = labelings.get(instance.article_id.as_str());
        let article = new_articles.get(instance.article_id.as_str());
        for turn in &mut kept.turns {
            if turn.label == InstanceLabel::Deleted {
                continue;
            }
            let remapped = match (labeling, article) {
                (Some(l), Some(a)) => {
                    remap_evidence(&[turn.evidence_index], l).map(|indices| (indices, *a))
                }
                _ => None,
            };
            match remapped {
                Some((indices, a)) => {
                    turn.label = InstanceLabel::Unchanged;
                    turn.evidence_text = indices
                        .iter()
                        .map(|&i| a.sentences[i].text.as_str())
                        .collect::<Vec<_>>()
                        .join(" ");
                    turn.evidence_index = indices[0];
                }
                None => turn.label = InstanceLabel::Deleted,
            }
        }
        outcome.live.push(kept);
    }

    let mut ids = IdAlloc::new(&epoch, "dlg");
    for labeling in &delta.labelings {
        let article = new_articles[labeling.article_id.as_str()];
        let has_delta = |range: (usize, usize)| {
            (range.0..range.1).any(|i| sentence_label(labeling, i) != InstanceLabel::Unchanged)
        };
        let no_ambiguous =
            |range: (usize, usize)| !(range.0..range.1).any(|i| labeling.ambiguous.contains(&i));
        generate_article_dialogues(
            article,
            providers,
            &epoch,
            &|i| sentence_label(labeling, i),
            &|p| is_informative(p) && has_delta(p.sentence_range) && no_ambiguous(p.sentence_range),
            &mut ids,
            &mut outcome.live,
            &mut outcome.log,
        );
    }
    for article_id in &delta.added_articles {
        let article = new_articles[article_id.as_str()];
        generate_article_dialogues(
            article,
            providers,
            &epoch,
            &|_| InstanceLabel::New,
            &|p| is_informative(p),
            &mut ids,
            &mut outcome.live,
            &mut outcome.log,
        );
    }
    outcome
}
