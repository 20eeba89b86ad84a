//! Sentence-level delta labeling between two versions of an article.
//!
//! The procedure runs in three stages:
//! 1. exact-pair matching: sentence pairs with cosine similarity above 0.99
//!    become *unchanged* anchors;
//! 2. group matching inside the gaps between anchors: contiguous subsets
//!    (length <= 3 per side) whose concatenated texts clear the same
//!    threshold are aligned, and the gap re-splits around each match;
//! 3. NLI over whatever remains: entailment -> unchanged, confirmed
//!    contradiction -> changed, neutral with no similar counterpart -> new.
//!
//! Sentences that fall through every branch are labeled *ambiguous* so the
//! result is total.

use serde::{Deserialize, Serialize};

use crate::corpus::Article;
use crate::error::{Error, Result};
use crate::providers::{Embedder, EmbeddingVector, NliLabel, Providers};

/// Similarity thresholds and the subset cap used by the labeler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Unchanged (exact/group) similarity gate.
    pub t_exact: f64,
    /// Minimum similarity for a confirmed contradiction to count as changed.
    pub t_changed: f64,
    /// Maximum similarity below which an all-neutral sentence counts as new.
    pub t_new: f64,
    /// Contiguous subset length cap for group matching.
    pub max_subset_len: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            t_exact: 0.99,
            t_changed: 0.6,
            t_new: 0.7,
            max_subset_len: 3,
        }
    }
}

/// Alignment result between an old and a new article version.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceLabeling {
    pub article_id: String,
    /// (old index set, new index set) alignments, disjoint on both sides.
    pub unchanged: Vec<(Vec<usize>, Vec<usize>)>,
    /// (old index, new index) confirmed contradictions.
    pub changed: Vec<(usize, usize)>,
    pub new: Vec<usize>,
    pub ambiguous: Vec<usize>,
    pub thresholds_used: Thresholds,
}

impl SentenceLabeling {
    /// Old-side indices covered by some unchanged alignment.
    pub fn unchanged_old_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.unchanged.iter().flat_map(|(o, _)| o.iter().copied())
    }

    /// Map an old sentence index to the new indices it aligns to, if any.
    pub fn map_old_index(&self, old_idx: usize) -> Option<&[usize]> {
        self.unchanged
            .iter()
            .find(|(o, _)| o.contains(&old_idx))
            .map(|(_, n)| n.as_slice())
    }
}

/// Unmatched region between two consecutive unchanged anchors. Half-open
/// ranges into the old and new sentence lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapPair {
    pub old_range: (usize, usize),
    pub new_range: (usize, usize),
}

impl GapPair {
    pub fn is_empty(&self) -> bool {
        self.old_range.0 >= self.old_range.1 && self.new_range.0 >= self.new_range.1
    }
}

fn embed_all(embedder: &dyn Embedder, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    embedder.embed(texts)
}

/// Match unchanged sentence pairs above the exact threshold.
///
/// Greedy by descending similarity; ties break toward smaller index distance
/// `|i - j|`, then smaller new index, then smaller old index. Each index is
/// used at most once per side.
pub fn match_unchanged_pairs(
    old: &Article,
    new: &Article,
    embedder: &dyn Embedder,
    thresholds: &Thresholds,
) -> Result<Vec<(usize, usize)>> {
    if old.sentences.is_empty() || new.sentences.is_empty() {
        return Ok(Vec::new());
    }
    let old_texts: Vec<String> = old.sentences.iter().map(|s| s.text.clone()).collect();
    let new_texts: Vec<String> = new.sentences.iter().map(|s| s.text.clone()).collect();
    let old_vecs = embed_all(embedder, &old_texts)?;
    let new_vecs = embed_all(embedder, &new_texts)?;

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, ov) in old_vecs.iter().enumerate() {
        for (j, nv) in new_vecs.iter().enumerate() {
            let sim = ov.dot(nv);
            if sim > thresholds.t_exact {
                candidates.push((sim, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| {
                let da = a.1.abs_diff(a.2);
                let db = b.1.abs_diff(b.2);
                da.cmp(&db)
            })
            .then(a.2.cmp(&b.2))
            .then(a.1.cmp(&b.1))
    });

    let mut used_old = vec![false; old.sentences.len()];
    let mut used_new = vec![false; new.sentences.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_old[i] && !used_new[j] {
            used_old[i] = true;
            used_new[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_by_key(|&(_, j)| j);
    Ok(pairs)
}

/// Keep the longest subsequence of pairs that is strictly monotone in both
/// coordinates. Input sorted by new index.
fn longest_monotone(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    if pairs.is_empty() {
        return Vec::new();
    }
    let n = pairs.len();
    let mut best = vec![1usize; n];
    let mut prev = vec![usize::MAX; n];
    for i in 0..n {
        for j in 0..i {
            if pairs[j].0 < pairs[i].0 && pairs[j].1 < pairs[i].1 && best[j] + 1 > best[i] {
                best[i] = best[j] + 1;
                prev[i] = j;
            }
        }
    }
    let mut end = (0..n).max_by_key(|&i| (best[i], std::cmp::Reverse(i))).unwrap();
    let mut out = Vec::new();
    loop {
        out.push(pairs[end]);
        if prev[end] == usize::MAX {
            break;
        }
        end = prev[end];
    }
    out.reverse();
    out
}

/// Compute the gaps between anchors, returning the retained (monotone)
/// anchors and the gap list. Gaps partition all unmatched indices.
pub fn compute_gaps(
    pairs: &[(usize, usize)],
    old_len: usize,
    new_len: usize,
) -> (Vec<(usize, usize)>, Vec<GapPair>) {
    let mut sorted = pairs.to_vec();
    sorted.sort_by_key(|&(_, j)| j);
    let anchors = longest_monotone(&sorted);

    let mut gaps = Vec::new();
    let mut prev_old = 0usize;
    let mut prev_new = 0usize;
    for &(i, j) in &anchors {
        let gap = GapPair {
            old_range: (prev_old, i),
            new_range: (prev_new, j),
        };
        if !gap.is_empty() {
            gaps.push(gap);
        }
        prev_old = i + 1;
        prev_new = j + 1;
    }
    let tail = GapPair {
        old_range: (prev_old, old_len),
        new_range: (prev_new, new_len),
    };
    if !tail.is_empty() {
        gaps.push(tail);
    }
    (anchors, gaps)
}

fn concat_sentences(article: &Article, range: (usize, usize)) -> String {
    article.sentences[range.0..range.1]
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Group alignments found within one gap, plus the residual sub-gaps left
/// after re-splitting around each match.
pub struct GapResolution {
    pub alignments: Vec<(Vec<usize>, Vec<usize>)>,
    pub residual: Vec<GapPair>,
}

/// Match contiguous subset groups within a gap.
///
/// Subsets are capped at `max_subset_len` per side; matches are greedy by
/// descending similarity, and the gap re-splits around each match so the
/// result stays monotone.
pub fn match_unchanged_groups(
    old: &Article,
    new: &Article,
    gap: GapPair,
    embedder: &dyn Embedder,
    thresholds: &Thresholds,
) -> Result<GapResolution> {
    let mut resolution = GapResolution {
        alignments: Vec::new(),
        residual: Vec::new(),
    };
    let mut stack = vec![gap];
    while let Some(gap) = stack.pop() {
        if gap.is_empty() {
            continue;
        }
        let (os, oe) = gap.old_range;
        let (ns, ne) = gap.new_range;
        if os >= oe || ns >= ne {
            resolution.residual.push(gap);
            continue;
        }

        // Enumerate contiguous subsets on both sides.
        let mut subset_texts: Vec<String> = Vec::new();
        let mut subset_meta: Vec<(bool, usize, usize)> = Vec::new(); // (is_old, start, end)
        for side in [true, false] {
            let (s, e) = if side { (os, oe) } else { (ns, ne) };
            let article = if side { old } else { new };
            for a in s..e {
                for b in a + 1..=e.min(a + thresholds.max_subset_len) {
                    subset_texts.push(concat_sentences(article, (a, b)));
                    subset_meta.push((side, a, b));
                }
            }
        }
        let vecs = embed_all(embedder, &subset_texts)?;

        let mut best: Option<(f64, (usize, usize), (usize, usize))> = None;
        for (i, (is_old_i, ai, bi)) in subset_meta.iter().enumerate() {
            if !is_old_i {
                continue;
            }
            for (j, (is_old_j, aj, bj)) in subset_meta.iter().enumerate() {
                if *is_old_j {
                    continue;
                }
                let sim = vecs[i].dot(&vecs[j]);
                if sim <= thresholds.t_exact {
                    continue;
                }
                let candidate = (sim, (*ai, *bi), (*aj, *bj));
                let better = match &best {
                    None => true,
                    Some((bs, bo, bn)) => {
                        match sim.partial_cmp(bs).unwrap() {
                            std::cmp::Ordering::Greater => true,
                            std::cmp::Ordering::Less => false,
                            std::cmp::Ordering::Equal => {
                                let dist_c = ai.abs_diff(*aj);
                                let dist_b = bo.0.abs_diff(bn.0);
                                (dist_c, *aj, *ai) < (dist_b, bn.0, bo.0)
                            }
                        }
                    }
                };
                if better {
                    best = Some(candidate);
                }
            }
        }

        match best {
            None => resolution.residual.push(gap),
            Some((_, (oa, ob), (na, nb))) => {
                resolution
                    .alignments
                    .push(((oa..ob).collect(), (na..nb).collect()));
                stack.push(GapPair {
                    old_range: (os, oa),
                    new_range: (ns, na),
                });
                stack.push(GapPair {
                    old_range: (ob, oe),
                    new_range: (nb, ne),
                });
            }
        }
    }
    resolution
        .alignments
        .sort_by_key(|(_, n)| n.first().copied().unwrap_or(0));
    resolution.residual.sort_by_key(|g| g.new_range.0);
    Ok(resolution)
}

/// Outcome for a single gap sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapLabel {
    Unchanged(usize),
    Changed(usize),
    New,
    Ambiguous,
}

/// Classify one new-article sentence against the remaining old sentences of
/// its gap.
///
/// Branch order: any entailment -> unchanged; else any contradiction ->
/// changed when similarity clears the gate and the judge confirms, otherwise
/// ambiguous; else (all neutral) new when no old sentence is similar,
/// otherwise ambiguous. A judge-format error counts as non-confirmation.
pub fn classify_gap_sentence(
    s_new: &str,
    old_candidates: &[(usize, String)],
    providers: &Providers,
    thresholds: &Thresholds,
) -> Result<GapLabel> {
    if old_candidates.is_empty() {
        return Ok(GapLabel::New);
    }
    let mut verdicts = Vec::with_capacity(old_candidates.len());
    for (_, old_text) in old_candidates {
        verdicts.push(providers.nli.nli_classify(old_text, s_new)?);
    }

    // (a) entailment
    let entailing = old_candidates
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.label == NliLabel::Entailment)
        .max_by(|a, b| {
            a.1.entailment()
                .partial_cmp(&b.1.entailment())
                .unwrap()
                .then(b.0 .0.cmp(&a.0 .0))
        });
    if let Some(((idx, _), _)) = entailing {
        return Ok(GapLabel::Unchanged(*idx));
    }

    // (b) contradiction
    let contradicting = old_candidates
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.label == NliLabel::Contradiction)
        .max_by(|a, b| {
            a.1.contradiction()
                .partial_cmp(&b.1.contradiction())
                .unwrap()
                .then(b.0 .0.cmp(&a.0 .0))
        });
    if let Some(((idx, old_text), _)) = contradicting {
        let vs = providers.embedder.embed(&[old_text.clone(), s_new.to_string()])?;
        let sim = vs[0].dot(&vs[1]);
        if sim > thresholds.t_changed {
            match providers.judge.judge_contradiction(old_text, s_new) {
                Ok(true) => return Ok(GapLabel::Changed(*idx)),
                Ok(false) => return Ok(GapLabel::Ambiguous),
                Err(Error::JudgeFormat(_)) => return Ok(GapLabel::Ambiguous),
                Err(e) => return Err(e),
            }
        }
        return Ok(GapLabel::Ambiguous);
    }

    // (c) all neutral
    let mut texts: Vec<String> = old_candidates.iter().map(|(_, t)| t.clone()).collect();
    texts.push(s_new.to_string());
    let vecs = providers.embedder.embed(&texts)?;
    let (new_vec, old_vecs) = vecs.split_last().unwrap();
    let max_sim = old_vecs
        .iter()
        .map(|v| v.dot(new_vec))
        .fold(f64::NEG_INFINITY, f64::max);
    if max_sim < thresholds.t_new {
        Ok(GapLabel::New)
    } else {
        Ok(GapLabel::Ambiguous)
    }
}

/// End-to-end labeling of one article pair.
pub fn label_article_pair(
    old: &Article,
    new: &Article,
    providers: &Providers,
    thresholds: &Thresholds,
) -> Result<SentenceLabeling> {
    let pairs = match_unchanged_pairs(old, new, providers.embedder.as_ref(), thresholds)?;
    let (anchors, gaps) = compute_gaps(&pairs, old.sentences.len(), new.sentences.len());

    let mut labeling = SentenceLabeling {
        article_id: new.id.clone(),
        unchanged: anchors.iter().map(|&(i, j)| (vec![i], vec![j])).collect(),
        changed: Vec::new(),
        new: Vec::new(),
        ambiguous: Vec::new(),
        thresholds_used: *thresholds,
    };

    for gap in gaps {
        let resolution =
            match_unchanged_groups(old, new, gap, providers.embedder.as_ref(), thresholds)?;
        labeling.unchanged.extend(resolution.alignments);

        for residual in resolution.residual {
            let mut remaining: Vec<(usize, String)> = (residual.old_range.0..residual.old_range.1)
                .map(|i| (i, old.sentences[i].text.clone()))
                .collect();
            // Old index of the most recent unchanged match in this gap;
            // entailment matches must keep old indices strictly increasing.
            let mut last_matched: Option<usize> = None;
            for n in residual.new_range.0..residual.new_range.1 {
                let s_new = &new.sentences[n].text;
                let label = classify_gap_sentence(s_new, &remaining, providers, thresholds)?;
                match label {
                    GapLabel::Unchanged(o) => {
                        if last_matched.is_some_and(|m| o <= m) {
                            // Taking this match would cross an earlier one.
                            labeling.ambiguous.push(n);
                        } else {
                            labeling.unchanged.push((vec![o], vec![n]));
                            remaining.retain(|(i, _)| *i != o);
                            last_matched = Some(o);
                        }
                    }
                    GapLabel::Changed(o) => labeling.changed.push((o, n)),
                    GapLabel::New => labeling.new.push(n),
                    GapLabel::Ambiguous => labeling.ambiguous.push(n),
                }
            }
        }
    }

    labeling
        .unchanged
        .sort_by_key(|(_, n)| n.first().copied().unwrap_or(0));
    labeling.changed.sort_by_key(|&(_, n)| n);
    labeling.new.sort_unstable();
    labeling.ambiguous.sort_unstable();
    Ok(labeling)
}

/// Per-article outcome of labeling a snapshot pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotDelta {
    pub labelings: Vec<SentenceLabeling>,
    /// Articles whose labeling aborted, with the error message. The pipeline
    /// continues on the other articles.
    pub failures: Vec<(String, String)>,
    /// Article ids present only in the new snapshot.
    pub added_articles: Vec<String>,
    /// Article ids present only in the old snapshot.
    pub removed_articles: Vec<String>,
}

/// Label every article pair shared by two snapshots. Article id equality is
/// the join key.
pub fn label_snapshot_pair(
    old: &crate::corpus::Snapshot,
    new: &crate::corpus::Snapshot,
    providers: &Providers,
    thresholds: &Thresholds,
) -> SnapshotDelta {
    let old_by_id: std::collections::HashMap<&str, &Article> =
        old.articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let new_ids: std::collections::HashSet<&str> =
        new.articles.iter().map(|a| a.id.as_str()).collect();

    let mut delta = SnapshotDelta {
        labelings: Vec::new(),
        failures: Vec::new(),
        added_articles: Vec::new(),
        removed_articles: old
            .articles
            .iter()
            .filter(|a| !new_ids.contains(a.id.as_str()))
            .map(|a| a.id.clone())
            .collect(),
    };
    for article in &new.articles {
        match old_by_id.get(article.id.as_str()) {
            None => delta.added_articles.push(article.id.clone()),
            Some(old_article) => {
                match label_article_pair(old_article, article, providers, thresholds) {
                    Ok(labeling) => delta.labelings.push(labeling),
                    Err(e) => delta.failures.push((article.id.clone(), e.to_string())),
                }
            }
        }
    }
    delta
}
