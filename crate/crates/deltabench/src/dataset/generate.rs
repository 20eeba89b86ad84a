//! Instance generation: paragraph selection, QA prompts for the initial /
//! new / changed paths, and dialogue generation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    indexed_sentence_list, parse_curly_fields, prompts, DialogueInstance, EvidenceBox,
    InstanceLabel, QaInstance, Turn,
};
use crate::corpus::{split_paragraphs, Article, Paragraph, Sentence};
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::labeler::SentenceLabeling;
use crate::providers::{Embedder, Generator};

/// Token budget for dataset-generation calls (not for answering).
const GEN_MAX_NEW_TOKENS: usize = 512;

/// QA-source paragraphs: fewer than five sentences and 300-600 characters.
fn qualifies_for_qa(p: &Paragraph) -> bool {
    let n = p.sentence_range.1 - p.sentence_range.0;
    n < 5 && (300..=600).contains(&p.char_length)
}

/// Dialogue-source paragraphs: at least 3 sentences and 300 characters.
pub fn is_informative(p: &Paragraph) -> bool {
    let n = p.sentence_range.1 - p.sentence_range.0;
    n >= 3 && p.char_length >= 300
}

/// Pick the QA-source paragraphs of an article. When more than `max_count`
/// qualify, k-means over paragraph embeddings picks one (seeded-random)
/// member per cluster; otherwise all qualifying paragraphs are returned.
pub fn select_paragraphs(
    article: &Article,
    embedder: &dyn Embedder,
    seed: u64,
    max_count: usize,
) -> Result<Vec<Paragraph>> {
    let qualifying: Vec<Paragraph> = split_paragraphs(article)
        .into_iter()
        .filter(qualifies_for_qa)
        .collect();
    if qualifying.len() <= max_count {
        return Ok(qualifying);
    }
    let texts: Vec<String> = qualifying.iter().map(|p| p.text.clone()).collect();
    let vecs = embedder.embed(&texts)?;
    let assignments = kmeans(&vecs, max_count, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for cluster in 0..max_count {
        let members: Vec<usize> = (0..qualifying.len())
            .filter(|&i| assignments[i] == cluster)
            .collect();
        if let Some(&m) = members.choose(&mut rng) {
            picked.push(m);
        }
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| qualifying[i].clone()).collect())
}

/// Generate one QA pair grounded in a paragraph, with a sentence bounding
/// box. Reply format: `{Question}{Answer}{start}{end}` with paragraph-local
/// indices, remapped to article indices in the result.
pub fn gen_initial_qa(
    paragraph: &Paragraph,
    article: &Article,
    generator: &dyn Generator,
    id: &str,
    epoch: &str,
) -> Result<QaInstance> {
    let sentences = &article.sentences[paragraph.sentence_range.0..paragraph.sentence_range.1];
    let prompt = prompts::render(
        prompts::INITIAL_QA,
        &[("paragraph", &indexed_sentence_list(sentences))],
    );
    let gen = generator.generate(&prompt, GEN_MAX_NEW_TOKENS)?;
    let fields = parse_curly_fields(&gen.text, 4)?;
    let parse_idx = |s: &str| -> Result<usize> {
        s.trim().parse().map_err(|_| Error::MalformedGeneration {
            message: format!("bad bounding-box index {s:?}"),
            raw: gen.text.clone(),
        })
    };
    let bbox = EvidenceBox::new(parse_idx(&fields[2])?, parse_idx(&fields[3])?)
        .map_err(|_| Error::GenerationRejected("bounding box reversed".into()))?;
    if bbox.end_index >= sentences.len() {
        return Err(Error::GenerationRejected(format!(
            "bounding box {}..={} outside paragraph of {} sentences",
            bbox.start_index,
            bbox.end_index,
            sentences.len()
        )));
    }
    let base = paragraph.sentence_range.0;
    let evidence_indices: Vec<usize> =
        (base + bbox.start_index..=base + bbox.end_index).collect();
    Ok(QaInstance {
        id: id.to_string(),
        article_id: article.id.clone(),
        label: InstanceLabel::New,
        question: fields[0].clone(),
        answer: fields[1].clone(),
        previous_answer: None,
        evidence_text: evidence_indices
            .iter()
            .map(|&i| article.sentences[i].text.clone())
            .collect(),
        evidence_indices,
        epoch: epoch.to_string(),
    })
}

/// Generate a QA pair from a group of new sentences. Reply format:
/// `{Question}{Answer}`; the source-content template variant is used when a
/// context is supplied.
pub fn gen_new_qa(
    group: &[Sentence],
    article_id: &str,
    source_context: Option<&str>,
    generator: &dyn Generator,
    id: &str,
    epoch: &str,
) -> Result<QaInstance> {
    if group.is_empty() {
        return Err(Error::Parameter("gen_new_qa requires a non-empty group".into()));
    }
    let listed = indexed_sentence_list(group);
    let prompt = match source_context {
        Some(ctx) => prompts::render(
            prompts::NEW_QA_WITH_SOURCE,
            &[("sentences", listed.as_str()), ("source content", ctx)],
        ),
        None => prompts::render(prompts::NEW_QA, &[("sentences", listed.as_str())]),
    };
    let gen = generator.generate(&prompt, GEN_MAX_NEW_TOKENS)?;
    let fields = parse_curly_fields(&gen.text, 2)?;
    Ok(QaInstance {
        id: id.to_string(),
        article_id: article_id.to_string(),
        label: InstanceLabel::New,
        question: fields[0].clone(),
        answer: fields[1].clone(),
        previous_answer: None,
        evidence_text: group.iter().map(|s| s.text.clone()).collect(),
        evidence_indices: group.iter().map(|s| s.index).collect(),
        epoch: epoch.to_string(),
    })
}

/// Generate a contradiction QA pair for a changed sentence pair. Reply
/// format: `{Question}{Answer based on Old Sentence}{Answer based on New
/// Sentence}`; identical answers are rejected. Evidence is the revised
/// sentence.
pub fn gen_changed_qa(
    s_old: &str,
    s_new: &Sentence,
    article_id: &str,
    source_context: &str,
    generator: &dyn Generator,
    id: &str,
    epoch: &str,
) -> Result<QaInstance> {
    let prompt = prompts::render(
        prompts::CHANGED_QA,
        &[
            ("old sentence", s_old),
            ("new sentence", s_new.text.as_str()),
            ("source content", source_context),
        ],
    );
    let gen = generator.generate(&prompt, GEN_MAX_NEW_TOKENS)?;
    let fields = parse_curly_fields(&gen.text, 3)?;
    if fields[1].trim() == fields[2].trim() {
        return Err(Error::GenerationRejected(
            "old and new answers are identical, not contradictory".into(),
        ));
    }
    Ok(QaInstance {
        id: id.to_string(),
        article_id: article_id.to_string(),
        label: InstanceLabel::Changed,
        question: fields[0].clone(),
        answer: fields[2].clone(),
        previous_answer: Some(fields[1].clone()),
        evidence_text: vec![s_new.text.clone()],
        evidence_indices: vec![s_new.index],
        epoch: epoch.to_string(),
    })
}

/// Generate a 3-4 turn dialogue grounded in a paragraph. Each reply block is
/// `{{Reference Sentence}}i{{User}}...{{Expert}}...` with paragraph-local
/// `i`; the turn label comes from `label_of` applied to the article-level
/// evidence index (initial month passes a constant `New`).
pub fn gen_dialogue(
    paragraph: &Paragraph,
    article: &Article,
    label_of: &dyn Fn(usize) -> InstanceLabel,
    generator: &dyn Generator,
    id: &str,
    epoch: &str,
) -> Result<DialogueInstance> {
    let sentences = &article.sentences[paragraph.sentence_range.0..paragraph.sentence_range.1];
    let prompt = prompts::render(
        prompts::DIALOGUE,
        &[
            ("topic", article.title.as_str()),
            ("sentences", &indexed_sentence_list(sentences)),
        ],
    );
    let gen = generator.generate(&prompt, GEN_MAX_NEW_TOKENS)?;
    let turns = parse_dialogue_blocks(&gen.text)?;
    if !(3..=4).contains(&turns.len()) {
        return Err(Error::GenerationRejected(format!(
            "dialogue has {} turns, expected 3-4",
            turns.len()
        )));
    }
    let mut out = Vec::with_capacity(turns.len());
    for (local_idx, user, expert) in turns {
        if local_idx >= sentences.len() {
            return Err(Error::GenerationRejected(format!(
                "reference sentence {local_idx} outside paragraph of {} sentences",
                sentences.len()
            )));
        }
        let evidence_index = paragraph.sentence_range.0 + local_idx;
        out.push(Turn {
            user,
            expert,
            label: label_of(evidence_index),
            evidence_text: article.sentences[evidence_index].text.clone(),
            evidence_index,
        });
    }
    Ok(DialogueInstance {
        id: id.to_string(),
        article_id: article.id.clone(),
        epoch: epoch.to_string(),
        turns: out,
    })
}

/// Parse `(reference index, user, expert)` triples out of a dialogue reply.
fn parse_dialogue_blocks(text: &str) -> Result<Vec<(usize, String, String)>> {
    const MARK: &str = "{{Reference Sentence}}";
    let malformed = |message: String| Error::MalformedGeneration {
        message,
        raw: text.to_string(),
    };
    let mut out = Vec::new();
    for block in text.split(MARK).skip(1) {
        let (idx_part, rest) = block
            .split_once("{{User}}")
            .ok_or_else(|| malformed("block missing {{User}} marker".into()))?;
        let (user, expert) = rest
            .split_once("{{Expert}}")
            .ok_or_else(|| malformed("block missing {{Expert}} marker".into()))?;
        let idx = idx_part
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad reference index {:?}", idx_part.trim())))?;
        out.push((idx, user.trim().to_string(), expert.trim().to_string()));
    }
    if out.is_empty() {
        return Err(malformed("no dialogue blocks found".into()));
    }
    Ok(out)
}

/// Maximal runs of consecutive new-labeled sentences, each split into
/// balanced contiguous parts of size <= 6.
pub fn group_new_sentences(labeling: &SentenceLabeling, article: &Article) -> Vec<Vec<usize>> {
    let mut sorted = labeling.new.clone();
    sorted.sort_unstable();
    sorted.retain(|&i| i < article.sentences.len());

    let mut runs: Vec<Vec<usize>> = Vec::new();
    for idx in sorted {
        match runs.last_mut() {
            Some(run) if *run.last().unwrap() + 1 == idx => run.push(idx),
            _ => runs.push(vec![idx]),
        }
    }

    let mut groups = Vec::new();
    for run in runs {
        let parts = run.len().div_ceil(6);
        let base = run.len() / parts;
        let rem = run.len() % parts;
        let mut start = 0;
        for p in 0..parts {
            let size = base + usize::from(p < rem);
            groups.push(run[start..start + size].to_vec());
            start += size;
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeler::Thresholds;
    use crate::providers::mock::{FixtureRule, MockProvider};

    fn mock(rules: Vec<FixtureRule>) -> MockProvider {
        MockProvider::new(5, 64, 8).with_rules(rules)
    }

    fn labeling_with_new(new: Vec<usize>) -> SentenceLabeling {
        SentenceLabeling {
            article_id: "a".into(),
            unchanged: vec![],
            changed: vec![],
            new,
            ambiguous: vec![],
            thresholds_used: Thresholds::default(),
        }
    }

    fn article_of(n: usize) -> Article {
        let text = (0..n)
            .map(|i| format!("Sentence number {i} sits here."))
            .collect::<Vec<_>>()
            .join(" ");
        Article::new("a", "A", text)
    }

    #[test]
    fn groups_consecutive_run() {
        let article = article_of(8);
        let groups = group_new_sentences(&labeling_with_new(vec![3, 4, 5]), &article);
        assert_eq!(groups, vec![vec![3, 4, 5]]);
    }

    #[test]
    fn groups_split_run_of_seven() {
        let article = article_of(8);
        let groups =
            group_new_sentences(&labeling_with_new(vec![0, 1, 2, 3, 4, 5, 6]), &article);
        assert_eq!(groups, vec![vec![0, 1, 2, 3], vec![4, 5, 6]]);
    }

    #[test]
    fn groups_nonconsecutive_singletons() {
        let article = article_of(8);
        let groups = group_new_sentences(&labeling_with_new(vec![1, 5]), &article);
        assert_eq!(groups, vec![vec![1], vec![5]]);
    }

    #[test]
    fn groups_cover_and_bound() {
        let article = article_of(20);
        let new: Vec<usize> = vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 15, 17, 18];
        let groups = group_new_sentences(&labeling_with_new(new.clone()), &article);
        let mut union: Vec<usize> = groups.iter().flatten().copied().collect();
        union.sort_unstable();
        assert_eq!(union, new);
        assert!(groups.iter().all(|g| !g.is_empty() && g.len() <= 6));
    }

    fn paragraph_article() -> Article {
        // Three paragraphs; the middle one qualifies for QA (4 sentences,
        // ~380 chars), the first is too short, the last too long in chars.
        let p1 = "Tiny opening paragraph sits here.";
        let p2 = (0..4)
            .map(|i| format!("The committee announced decision number {i} regarding the annual budget allocations for infrastructure."))
            .collect::<Vec<_>>()
            .join(" ");
        let p3 = (0..5)
            .map(|i| format!("Filler sentence {i} concerning routine procedural matters occupies additional space in this closing paragraph with many words."))
            .collect::<Vec<_>>()
            .join(" ");
        Article::new("a", "Committee", format!("{p1}\n\n{p2}\n\n{p3}"))
    }

    #[test]
    fn select_paragraphs_filters() {
        let article = paragraph_article();
        let m = mock(vec![]);
        let picked = select_paragraphs(&article, &m, 1, 4).unwrap();
        assert_eq!(picked.len(), 1);
        assert_eq!(picked[0].sentence_range, (1, 5));
    }

    #[test]
    fn select_paragraphs_clusters_when_many() {
        // 8 qualifying paragraphs -> 4 picks, one per cluster.
        let paras: Vec<String> = (0..8)
            .map(|i| {
                (0..3)
                    .map(|j| format!("Paragraph {i} delivers statement {j} about the ongoing municipal works and the related scheduling concerns."))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let article = Article::new("a", "A", paras.join("\n\n"));
        let m = mock(vec![]);
        let picked = select_paragraphs(&article, &m, 42, 4).unwrap();
        assert_eq!(picked.len(), 4);
        // Deterministic under the seed.
        let again = select_paragraphs(&article, &m, 42, 4).unwrap();
        assert_eq!(
            picked.iter().map(|p| p.sentence_range).collect::<Vec<_>>(),
            again.iter().map(|p| p.sentence_range).collect::<Vec<_>>()
        );
    }

    #[test]
    fn initial_qa_scripted() {
        let article = paragraph_article();
        let para = split_paragraphs(&article)
            .into_iter()
            .find(qualifies_for_qa)
            .unwrap();
        let m = mock(vec![FixtureRule::Script {
            key: "Generate a Q&A pair based on a given context".into(),
            answer: "{Who announced?}{The committee}{0}{0}".into(),
            label: None,
        }]);
        let qa = gen_initial_qa(&para, &article, &m, "a:qa:0", "2023-08").unwrap();
        assert_eq!(qa.question, "Who announced?");
        assert_eq!(qa.answer, "The committee");
        assert_eq!(qa.evidence_indices, vec![1]);
        assert_eq!(qa.evidence_text, vec![article.sentences[1].text.clone()]);
        assert_eq!(qa.label, InstanceLabel::New);
        assert!(qa.previous_answer.is_none());
    }

    #[test]
    fn initial_qa_out_of_range_box_rejected() {
        let article = paragraph_article();
        let para = split_paragraphs(&article)
            .into_iter()
            .find(qualifies_for_qa)
            .unwrap();
        let m = mock(vec![FixtureRule::Script {
            key: "Generate a Q&A pair based on a given context".into(),
            answer: "{Who?}{Them}{1}{5}".into(),
            label: None,
        }]);
        assert!(matches!(
            gen_initial_qa(&para, &article, &m, "x", "e"),
            Err(Error::GenerationRejected(_))
        ));
    }

    #[test]
    fn new_qa_with_and_without_source() {
        let article = article_of(3);
        let group = article.sentences[1..3].to_vec();
        let m = mock(vec![FixtureRule::Script {
            key: "Generate a Q&A pair based on".into(),
            answer: "{What number?}{Two}".into(),
            label: None,
        }]);
        let qa = gen_new_qa(&group, "a", None, &m, "id1", "e").unwrap();
        assert_eq!(qa.evidence_indices, vec![1, 2]);
        assert_eq!(qa.label, InstanceLabel::New);
        let qa2 = gen_new_qa(&group, "a", Some("full text"), &m, "id2", "e").unwrap();
        assert_eq!(qa2.answer, "Two");
        assert!(gen_new_qa(&[], "a", None, &m, "id3", "e").is_err());
    }

    #[test]
    fn changed_qa_answers() {
        let article = article_of(3);
        let m = mock(vec![FixtureRule::Script {
            key: "Identify the contradiction".into(),
            answer: "{Who is PM?}{Hun Sen}{Hun Manet}".into(),
            label: None,
        }]);
        let qa = gen_changed_qa(
            "Old sentence text.",
            &article.sentences[2],
            "a",
            "ctx",
            &m,
            "id",
            "e",
        )
        .unwrap();
        assert_eq!(qa.answer, "Hun Manet");
        assert_eq!(qa.previous_answer.as_deref(), Some("Hun Sen"));
        assert_eq!(qa.label, InstanceLabel::Changed);
        assert_eq!(qa.evidence_indices, vec![2]);
    }

    #[test]
    fn changed_qa_identical_answers_rejected() {
        let article = article_of(3);
        let m = mock(vec![FixtureRule::Script {
            key: "Identify the contradiction".into(),
            answer: "{Who?}{Same}{Same}".into(),
            label: None,
        }]);
        assert!(matches!(
            gen_changed_qa("Old.", &article.sentences[0], "a", "c", &m, "i", "e"),
            Err(Error::GenerationRejected(_))
        ));
    }

    #[test]
    fn changed_qa_missing_field_malformed() {
        let article = article_of(3);
        let m = mock(vec![FixtureRule::Script {
            key: "Identify the contradiction".into(),
            answer: "{Who?}{Only one answer}".into(),
            label: None,
        }]);
        assert!(matches!(
            gen_changed_qa("Old.", &article.sentences[0], "a", "c", &m, "i", "e"),
            Err(Error::MalformedGeneration { .. })
        ));
    }

    #[test]
    fn dialogue_four_blocks() {
        let article = paragraph_article();
        let para = split_paragraphs(&article)
            .into_iter()
            .find(|p| is_informative(p))
            .unwrap();
        let reply = "{{Reference Sentence}}0{{User}}Hi there{{Expert}}First fact\n\
                     {{Reference Sentence}}1{{User}}Go on{{Expert}}Second fact\n\
                     {{Reference Sentence}}2{{User}}More?{{Expert}}Third fact\n\
                     {{Reference Sentence}}3{{User}}Last one{{Expert}}Fourth fact";
        let m = mock(vec![FixtureRule::Script {
            key: "Create an Information Dialogue".into(),
            answer: reply.into(),
            label: None,
        }]);
        let d = gen_dialogue(
            &para,
            &article,
            &|_| InstanceLabel::New,
            &m,
            "a:d:0",
            "2023-08",
        )
        .unwrap();
        assert_eq!(d.turns.len(), 4);
        assert_eq!(d.turns[0].user, "Hi there");
        assert_eq!(d.turns[3].expert, "Fourth fact");
        // Local index 0 maps to the paragraph's first article sentence.
        assert_eq!(d.turns[0].evidence_index, para.sentence_range.0);
        assert!(d.turns.iter().all(|t| t.label == InstanceLabel::New));
    }

    #[test]
    fn dialogue_two_blocks_rejected() {
        let article = paragraph_article();
        let para = split_paragraphs(&article)
            .into_iter()
            .find(|p| is_informative(p))
            .unwrap();
        let reply = "{{Reference Sentence}}0{{User}}Hi{{Expert}}One\n\
                     {{Reference Sentence}}1{{User}}Go{{Expert}}Two";
        let m = mock(vec![FixtureRule::Script {
            key: "Create an Information Dialogue".into(),
            answer: reply.into(),
            label: None,
        }]);
        assert!(matches!(
            gen_dialogue(&para, &article, &|_| InstanceLabel::New, &m, "x", "e"),
            Err(Error::GenerationRejected(_))
        ));
    }

    #[test]
    fn dialogue_label_from_evidence() {
        let article = paragraph_article();
        let para = split_paragraphs(&article)
            .into_iter()
            .find(|p| is_informative(p))
            .unwrap();
        let reply = "{{Reference Sentence}}0{{User}}A{{Expert}}B\n\
                     {{Reference Sentence}}1{{User}}C{{Expert}}D\n\
                     {{Reference Sentence}}2{{User}}E{{Expert}}F";
        let m = mock(vec![FixtureRule::Script {
            key: "Create an Information Dialogue".into(),
            answer: reply.into(),
            label: None,
        }]);
        let changed_at = para.sentence_range.0 + 1;
        let d = gen_dialogue(
            &para,
            &article,
            &|i| {
                if i == changed_at {
                    InstanceLabel::Changed
                } else {
                    InstanceLabel::Unchanged
                }
            },
            &m,
            "x",
            "e",
        )
        .unwrap();
        assert_eq!(d.turns[1].label, InstanceLabel::Changed);
        assert_eq!(d.turns[0].label, InstanceLabel::Unchanged);
    }
}
