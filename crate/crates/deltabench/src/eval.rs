//! Metrics (token F1, sentence-level BLEU-4), baseline systems, and
//! per-label evaluation reporting.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{DialogueInstance, InstanceLabel, QaInstance};
use crate::error::Result;
use crate::providers::{Embedder, Generator};
use crate::rilm::classifier::CertaintyScorer;
use crate::rilm::pipeline::{
    answer, answer_prompt, dialogue_history, select_best_doc, GateDecision, Task,
};
use crate::store::{Index, SearchHit};

/// Lowercase, strip punctuation, drop the articles {a, an, the}, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    stripped
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_bag(text: &str) -> HashMap<&str, usize> {
    let mut bag = HashMap::new();
    for tok in text.split_whitespace() {
        *bag.entry(tok).or_insert(0) += 1;
    }
    bag
}

/// Token-overlap F1 over normalized tokens with multiplicity.
pub fn f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let (pb, gb) = (token_bag(&p), token_bag(&g));
    let np: usize = pb.values().sum();
    let ng: usize = gb.values().sum();
    if np == 0 && ng == 0 {
        return 1.0;
    }
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let overlap: usize = pb
        .iter()
        .map(|(tok, c)| (*c).min(*gb.get(tok).unwrap_or(&0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / np as f64;
    let recall = overlap as f64 / ng as f64;
    2.0 * precision * recall / (precision + recall)
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level BLEU-4: geometric mean of modified n-gram precisions
/// (n = 1..4), zero precisions smoothed to `1 / (2 * pred_len)`, times a
/// brevity penalty `exp(1 - ref_len / pred_len)` when the prediction is
/// shorter than the reference.
pub fn bleu(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() {
        return 0.0;
    }
    let eps = 1.0 / (2.0 * p.len() as f64);
    let mut log_sum = 0.0f64;
    for n in 1..=4 {
        let pn = ngram_counts(&p, n);
        let gn = ngram_counts(&g, n);
        let num: usize = pn
            .iter()
            .map(|(k, c)| (*c).min(*gn.get(k).unwrap_or(&0)))
            .sum();
        let den = p.len().saturating_sub(n - 1);
        let precision = if den == 0 || num == 0 {
            eps
        } else {
            num as f64 / den as f64
        };
        log_sum += precision.ln();
    }
    let geo = (log_sum / 4.0).exp();
    let bp = if p.len() < g.len() {
        (1.0 - g.len() as f64 / p.len() as f64).exp()
    } else {
        1.0
    };
    bp * geo
}

/// One system response: the answer plus enough retrieval bookkeeping for
/// the report's gate breakdown and evidence-hit rates.
#[derive(Debug, Clone)]
pub struct SystemResponse {
    pub answer: String,
    /// `None` for baselines without a gate.
    pub gate: Option<GateDecision>,
    pub initial_hits: Vec<SearchHit>,
    pub arr_hits: Option<Vec<SearchHit>>,
}

pub trait AnswerSystem {
    fn respond(&self, query: &str, history: Option<&str>, task: Task) -> Result<SystemResponse>;
}

/// Generator prompted with the query alone; never touches the index.
pub struct Vanilla<'a> {
    pub generator: &'a dyn Generator,
}

impl AnswerSystem for Vanilla<'_> {
    fn respond(&self, query: &str, history: Option<&str>, task: Task) -> Result<SystemResponse> {
        let prompt = answer_prompt(query, &[], history, task);
        let gen = self.generator.generate(&prompt, task.max_new_tokens())?;
        Ok(SystemResponse {
            answer: gen.text.trim().to_string(),
            gate: None,
            initial_hits: Vec::new(),
            arr_hits: None,
        })
    }
}

fn retrieval_query(query: &str, history: Option<&str>) -> String {
    match history {
        Some(h) => format!("{h} {query}"),
        None => query.to_string(),
    }
}

/// Generator prompted with all top-k passages concatenated in rank order.
pub struct RalmConcat<'a> {
    pub index: &'a Index,
    pub embedder: &'a dyn Embedder,
    pub generator: &'a dyn Generator,
    pub k: usize,
}

impl RalmConcat<'_> {
    /// The exact prompt used, exposed for snapshot testing.
    pub fn prompt(&self, query: &str, history: Option<&str>, task: Task) -> Result<(String, Vec<SearchHit>)> {
        let q = self.embedder.embed_one(&retrieval_query(query, history))?;
        let hits = self.index.search(&q, self.k, &HashSet::new());
        let docs: Vec<&str> = hits
            .iter()
            .filter_map(|h| self.index.passage(&h.passage_id))
            .map(|p| p.text.as_str())
            .collect();
        Ok((answer_prompt(query, &docs, history, task), hits))
    }
}

impl AnswerSystem for RalmConcat<'_> {
    fn respond(&self, query: &str, history: Option<&str>, task: Task) -> Result<SystemResponse> {
        let (prompt, hits) = self.prompt(query, history, task)?;
        let gen = self.generator.generate(&prompt, task.max_new_tokens())?;
        Ok(SystemResponse {
            answer: gen.text.trim().to_string(),
            gate: None,
            initial_hits: hits,
            arr_hits: None,
        })
    }
}

/// Classifier-selected single document, adopted unconditionally.
pub struct RalmDstar<'a> {
    pub index: &'a Index,
    pub scorer: &'a dyn CertaintyScorer,
    pub embedder: &'a dyn Embedder,
    pub generator: &'a dyn Generator,
    pub k: usize,
}

impl AnswerSystem for RalmDstar<'_> {
    fn respond(&self, query: &str, history: Option<&str>, task: Task) -> Result<SystemResponse> {
        let q = self.embedder.embed_one(&retrieval_query(query, history))?;
        let hits = self.index.search(&q, self.k, &HashSet::new());
        let best = select_best_doc(query, &hits, self.index, self.scorer, history, task, self.generator)?;
        Ok(SystemResponse {
            answer: best.answer,
            gate: None,
            initial_hits: hits,
            arr_hits: None,
        })
    }
}

/// The full certainty-gated pipeline.
pub struct Rilm<'a> {
    pub index: &'a Index,
    pub scorer: &'a dyn CertaintyScorer,
    pub embedder: &'a dyn Embedder,
    pub generator: &'a dyn Generator,
    pub k: usize,
    pub lambda: f64,
}

impl AnswerSystem for Rilm<'_> {
    fn respond(&self, query: &str, history: Option<&str>, task: Task) -> Result<SystemResponse> {
        let trace = answer(
            query,
            history,
            task,
            self.index,
            self.scorer,
            self.embedder,
            self.generator,
            self.k,
            self.lambda,
        )?;
        let to_hits = |ids: &[String]| {
            ids.iter()
                .map(|id| SearchHit {
                    passage_id: id.clone(),
                    score: 0.0,
                })
                .collect::<Vec<_>>()
        };
        Ok(SystemResponse {
            answer: trace.final_answer,
            gate: Some(trace.gate_decision),
            initial_hits: to_hits(&trace.initial_hits),
            arr_hits: trace.arr_hits.as_deref().map(to_hits),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMetric {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub epoch: String,
    pub task: Task,
    pub new: LabelMetric,
    pub changed: LabelMetric,
    pub unchanged: LabelMetric,
    pub all: LabelMetric,
    /// Gate breakdown; zero counts for gateless baselines.
    pub adopted: LabelMetric,
    pub not_adopted: LabelMetric,
    /// Fraction of scored instances whose initial retrieval contained the
    /// full evidence text in a single passage.
    pub initial_evidence_hit_rate: f64,
    /// Same over instances that triggered re-retrieval, when any did.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arr_evidence_hit_rate: Option<f64>,
    pub errors: Vec<String>,
}

impl EvalReport {
    /// Plain-text table mirroring the per-label row structure.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("epoch {}  task {}\n", self.epoch, self.task.tag()));
        out.push_str("label      mean     count\n");
        for (name, m) in [
            ("New", self.new),
            ("Changed", self.changed),
            ("Unchanged", self.unchanged),
            ("All", self.all),
        ] {
            out.push_str(&format!("{name:<10} {:.4}   {}\n", m.mean, m.count));
        }
        out.push_str(&format!(
            "gate: adopted {:.4} ({})  not-adopted {:.4} ({})\n",
            self.adopted.mean, self.adopted.count, self.not_adopted.mean, self.not_adopted.count
        ));
        out.push_str(&format!(
            "evidence hit: initial {:.4}",
            self.initial_evidence_hit_rate
        ));
        if let Some(r) = self.arr_evidence_hit_rate {
            out.push_str(&format!("  arr {r:.4}"));
        }
        out.push('\n');
        if !self.errors.is_empty() {
            out.push_str(&format!("errors: {}\n", self.errors.len()));
        }
        out
    }
}

pub enum EvalDataset<'a> {
    Qa(&'a [QaInstance]),
    Dialogue(&'a [DialogueInstance]),
}

struct EvalItem {
    id: String,
    label: InstanceLabel,
    query: String,
    history: Option<String>,
    gold: String,
    evidence_text: Vec<String>,
}

#[derive(Default)]
struct Acc {
    sum: f64,
    count: usize,
}

impl Acc {
    fn push(&mut self, score: f64) {
        self.sum += score;
        self.count += 1;
    }

    fn metric(&self) -> LabelMetric {
        LabelMetric {
            mean: if self.count == 0 {
                0.0
            } else {
                self.sum / self.count as f64
            },
            count: self.count,
        }
    }
}

/// Score every non-Deleted instance (per-turn for dialogue), excluding
/// classifier-training ids. System errors are logged and scored 0.
pub fn evaluate(
    dataset: EvalDataset<'_>,
    system: &dyn AnswerSystem,
    index: &Index,
    exclude_ids: &HashSet<String>,
    epoch: &str,
) -> EvalReport {
    let (task, items) = match dataset {
        EvalDataset::Qa(instances) => {
            let items = instances
                .iter()
                .filter(|i| i.label != InstanceLabel::Deleted)
                .map(|i| EvalItem {
                    id: i.id.clone(),
                    label: i.label,
                    query: i.question.clone(),
                    history: None,
                    gold: i.answer.clone(),
                    evidence_text: i.evidence_text.clone(),
                })
                .collect();
            (Task::Qa, items)
        }
        EvalDataset::Dialogue(instances) => {
            let mut items = Vec::new();
            for instance in instances {
                for (j, turn) in instance.turns.iter().enumerate() {
                    if turn.label == InstanceLabel::Deleted {
                        continue;
                    }
                    items.push(EvalItem {
                        id: format!("{}#t{j}", instance.id),
                        label: turn.label,
                        query: turn.user.clone(),
                        history: dialogue_history(instance, j),
                        gold: turn.expert.clone(),
                        evidence_text: vec![turn.evidence_text.clone()],
                    });
                }
            }
            (Task::Dialogue, items)
        }
    };

    let metric: fn(&str, &str) -> f64 = match task {
        Task::Qa => f1,
        Task::Dialogue => bleu,
    };

    let mut by_label: HashMap<InstanceLabel, Acc> = HashMap::new();
    let mut all = Acc::default();
    let mut adopted = Acc::default();
    let mut not_adopted = Acc::default();
    let mut initial_hit = Acc::default();
    let mut arr_hit = Acc::default();
    let mut errors = Vec::new();

    for item in items {
        if exclude_ids.contains(&item.id) {
            continue;
        }
        let response = system.respond(&item.query, item.history.as_deref(), task);
        let (score, response) = match response {
            Ok(r) => (metric(&r.answer, &item.gold), Some(r)),
            Err(e) => {
                errors.push(format!("{}: {e}", item.id));
                (0.0, None)
            }
        };
        by_label.entry(item.label).or_default().push(score);
        all.push(score);
        if let Some(r) = &response {
            match r.gate {
                Some(GateDecision::Adopted) => adopted.push(score),
                Some(GateDecision::ReRetrieved) => not_adopted.push(score),
                None => {}
            }
            initial_hit.push(f64::from(index.evidence_hit(&r.initial_hits, &item.evidence_text)));
            if let Some(hits) = &r.arr_hits {
                arr_hit.push(f64::from(index.evidence_hit(hits, &item.evidence_text)));
            }
        } else {
            initial_hit.push(0.0);
        }
    }

    let label_metric = |l: InstanceLabel| by_label.get(&l).map(|a| a.metric()).unwrap_or_default();
    EvalReport {
        epoch: epoch.to_string(),
        task,
        new: label_metric(InstanceLabel::New),
        changed: label_metric(InstanceLabel::Changed),
        unchanged: label_metric(InstanceLabel::Unchanged),
        all: all.metric(),
        adopted: adopted.metric(),
        not_adopted: not_adopted.metric(),
        initial_evidence_hit_rate: initial_hit.metric().mean,
        arr_evidence_hit_rate: if arr_hit.count > 0 {
            Some(arr_hit.metric().mean)
        } else {
            None
        },
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::providers::mock::MockProvider;
    use crate::rilm::classifier::CertaintyProbs;
    use crate::store::build_index;

    #[test]
    fn normalize_rules() {
        assert_eq!(normalize_answer("The Ghan"), "ghan");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("Hun Manet"), "hun manet");
        assert_eq!(normalize_answer("  An  apple, a day! "), "apple day");
    }

    #[test]
    fn f1_hand_cases() {
        assert_eq!(f1("The Ghan", "the ghan"), 1.0);
        assert!((f1("the Ghan train", "The Ghan") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1("cat", "dog"), 0.0);
        assert_eq!(f1("", ""), 1.0);
        assert_eq!(f1("the a an", "x"), 0.0);
        assert_eq!(f1("x", ""), 0.0);
    }

    #[test]
    fn f1_symmetry_and_whitespace() {
        let pairs = [("one two two", "two three"), ("a b c", "c b"), ("", "x")];
        for (a, b) in pairs {
            assert!((f1(a, b) - f1(b, a)).abs() < 1e-15);
            assert_eq!(f1(&format!("  {a} "), b), f1(a, b));
        }
    }

    #[test]
    fn bleu_edges() {
        assert_eq!(bleu("a b c d", "a b c d"), 1.0);
        assert_eq!(bleu("", "a b"), 0.0);
        assert_eq!(bleu("  the cat sat on the mat ", "the cat sat on the mat"), 1.0);
    }

    #[test]
    fn bleu_matches_reference_implementation() {
        // Values frozen from an independently written reference scorer.
        let cases: [(&str, &str, f64); 6] = [
            ("a b c d", "a b c e", 0.420448207626857),
            ("a", "a", 0.594603557501361),
            ("a b", "a b c d e", 0.111565080074215),
            ("the cat sat on the mat", "a cat sat on a mat", 0.273012086270907),
            ("one two three", "one two three four five six", 0.235054032130465),
            ("a a a a", "a", 0.14865088937534),
        ];
        for (pred, gold, want) in cases {
            assert!(
                (bleu(pred, gold) - want).abs() < 1e-6,
                "bleu({pred:?}, {gold:?}) = {}, want {want}",
                bleu(pred, gold)
            );
        }
    }

    fn passages(n: usize) -> Vec<Passage> {
        (0..n)
            .map(|i| Passage {
                passage_id: format!("a#{i}"),
                article_id: "a".into(),
                text: format!("Passage number {i} holds distinct content about topic {i}."),
                char_span: (0, 10),
            })
            .collect()
    }

    fn qa(id: &str, label: InstanceLabel, question: &str, gold: &str) -> QaInstance {
        QaInstance {
            id: id.into(),
            article_id: "a".into(),
            label,
            question: question.into(),
            answer: gold.into(),
            previous_answer: None,
            evidence_text: vec!["absent evidence".into()],
            evidence_indices: vec![0],
            epoch: "e".into(),
        }
    }

    #[test]
    fn vanilla_never_queries_index() {
        // No index handle at all: the type makes the property structural,
        // and the prompt contains no documents.
        let m = MockProvider::new(7, 32, 8);
        let sys = Vanilla { generator: &m };
        let r = sys.respond("anything", None, Task::Qa).unwrap();
        assert!(r.initial_hits.is_empty());
        assert!(r.arr_hits.is_none());
    }

    #[test]
    fn ralm_concat_prompt_has_all_docs_in_rank_order() {
        let m = MockProvider::new(7, 32, 8);
        let ps = passages(3);
        let index = build_index(&ps, &m).unwrap();
        let sys = RalmConcat {
            index: &index,
            embedder: &m,
            generator: &m,
            k: 3,
        };
        let (prompt, hits) = sys.prompt("query", None, Task::Qa).unwrap();
        assert_eq!(hits.len(), 3);
        let mut pos = 0;
        for h in &hits {
            let text = &index.passage(&h.passage_id).unwrap().text;
            let at = prompt[pos..].find(text.as_str()).expect("doc in prompt");
            pos += at + text.len();
        }
        assert!(prompt.ends_with("Answer:"));
    }

    struct ConstScorer(CertaintyProbs);
    impl CertaintyScorer for ConstScorer {
        fn classify(&self, _f: &[f64]) -> Result<CertaintyProbs> {
            Ok(self.0)
        }
    }

    #[test]
    fn ralm_dstar_has_no_arr_fields() {
        let m = MockProvider::new(7, 32, 8);
        let ps = passages(4);
        let index = build_index(&ps, &m).unwrap();
        let scorer = ConstScorer(CertaintyProbs {
            reliable: 0.1,
            misleading: 0.5,
            uncertain: 0.4,
        });
        let sys = RalmDstar {
            index: &index,
            scorer: &scorer,
            embedder: &m,
            generator: &m,
            k: 3,
        };
        let r = sys.respond("query", None, Task::Qa).unwrap();
        assert!(r.gate.is_none());
        assert!(r.arr_hits.is_none());
    }

    struct Scripted;
    impl AnswerSystem for Scripted {
        fn respond(&self, query: &str, _h: Option<&str>, _t: Task) -> Result<SystemResponse> {
            let answer = match query {
                "q-right" => "gold answer".to_string(),
                "q-half" => "gold noise".to_string(),
                "q-err" => return Err(crate::error::Error::Pipeline("boom".into())),
                _ => "wrong".to_string(),
            };
            Ok(SystemResponse {
                answer,
                gate: None,
                initial_hits: Vec::new(),
                arr_hits: None,
            })
        }
    }

    #[test]
    fn evaluate_weighted_mean_and_counts() {
        let m = MockProvider::new(7, 32, 8);
        let index = build_index(&passages(1), &m).unwrap();
        let data = vec![
            qa("i1", InstanceLabel::Unchanged, "q-right", "gold answer"),
            qa("i2", InstanceLabel::Unchanged, "q-wrong", "gold answer"),
            qa("i3", InstanceLabel::New, "q-half", "gold answer"),
        ];
        let report = evaluate(EvalDataset::Qa(&data), &Scripted, &index, &HashSet::new(), "e");
        assert_eq!(report.unchanged.count, 2);
        assert_eq!(report.new.count, 1);
        assert_eq!(report.all.count, 3);
        assert!((report.unchanged.mean - 0.5).abs() < 1e-12);
        assert!((report.new.mean - 0.5).abs() < 1e-12);
        let weighted = (report.unchanged.mean * 2.0 + report.new.mean) / 3.0;
        assert!((report.all.mean - weighted).abs() < 1e-12);
    }

    #[test]
    fn evaluate_excludes_training_ids_and_skips_deleted() {
        let m = MockProvider::new(7, 32, 8);
        let index = build_index(&passages(1), &m).unwrap();
        let data = vec![
            qa("i1", InstanceLabel::Unchanged, "q-right", "gold answer"),
            qa("i2", InstanceLabel::Deleted, "q-right", "gold answer"),
            qa("i3", InstanceLabel::New, "q-right", "gold answer"),
        ];
        let exclude: HashSet<String> = ["i3".to_string()].into();
        let report = evaluate(EvalDataset::Qa(&data), &Scripted, &index, &exclude, "e");
        assert_eq!(report.all.count, 1);
        assert_eq!(report.new.count, 0);
    }

    #[test]
    fn evaluate_scores_errors_as_zero() {
        let m = MockProvider::new(7, 32, 8);
        let index = build_index(&passages(1), &m).unwrap();
        let data = vec![
            qa("i1", InstanceLabel::Unchanged, "q-err", "gold answer"),
            qa("i2", InstanceLabel::Unchanged, "q-right", "gold answer"),
        ];
        let report = evaluate(EvalDataset::Qa(&data), &Scripted, &index, &HashSet::new(), "e");
        assert_eq!(report.all.count, 2);
        assert!((report.all.mean - 0.5).abs() < 1e-12);
        assert_eq!(report.errors.len(), 1);
    }

    #[test]
    fn evaluate_dialogue_skips_deleted_turns() {
        use crate::dataset::Turn;
        let m = MockProvider::new(7, 32, 8);
        let index = build_index(&passages(1), &m).unwrap();
        let turn = |label| Turn {
            user: "q-right".into(),
            expert: "gold answer".into(),
            label,
            evidence_text: "ev".into(),
            evidence_index: 0,
        };
        let dlg = DialogueInstance {
            id: "d1".into(),
            article_id: "a".into(),
            epoch: "e".into(),
            turns: vec![
                turn(InstanceLabel::Unchanged),
                turn(InstanceLabel::Deleted),
                turn(InstanceLabel::New),
            ],
        };
        let data = vec![dlg];
        let report = evaluate(
            EvalDataset::Dialogue(&data),
            &Scripted,
            &index,
            &HashSet::new(),
            "e",
        );
        assert_eq!(report.all.count, 2);
        assert_eq!(report.unchanged.count, 1);
        assert_eq!(report.new.count, 1);
    }

    #[test]
    fn rilm_gate_counts_reconcile() {
        let m = MockProvider::new(7, 32, 8);
        let index = build_index(&passages(6), &m).unwrap();
        let scorer = ConstScorer(CertaintyProbs {
            reliable: 0.2,
            misleading: 0.5,
            uncertain: 0.3,
        });
        let sys = Rilm {
            index: &index,
            scorer: &scorer,
            embedder: &m,
            generator: &m,
            k: 2,
            lambda: 2.0,
        };
        let data = vec![
            qa("i1", InstanceLabel::Unchanged, "one question", "gold"),
            qa("i2", InstanceLabel::New, "another question", "gold"),
        ];
        let report = evaluate(EvalDataset::Qa(&data), &sys, &index, &HashSet::new(), "e");
        assert_eq!(report.adopted.count + report.not_adopted.count, report.all.count);
        assert!(report.arr_evidence_hit_rate.is_some());
    }

    #[test]
    fn evaluate_deterministic() {
        let m = MockProvider::new(7, 32, 8);
        let index = build_index(&passages(6), &m).unwrap();
        let scorer = ConstScorer(CertaintyProbs {
            reliable: 0.6,
            misleading: 0.2,
            uncertain: 0.2,
        });
        let data = vec![qa("i1", InstanceLabel::Unchanged, "question one", "gold")];
        let run = || {
            let sys = Rilm {
                index: &index,
                scorer: &scorer,
                embedder: &m,
                generator: &m,
                k: 2,
                lambda: 2.0,
            };
            serde_json::to_string(&evaluate(
                EvalDataset::Qa(&data),
                &sys,
                &index,
                &HashSet::new(),
                "e",
            ))
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
