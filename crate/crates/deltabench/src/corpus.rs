//! Snapshot loading, sentence segmentation, paragraph splitting, and passage
//! chunking.
//!
//! A snapshot is a JSONL file with one article per line:
//! `{"id": str, "title": str, "text": str}`. The epoch tag is supplied
//! out-of-band (CLI flag or filename convention) and epochs are compared
//! lexicographically on their `YYYY-MM` form.
//!
//! All offsets in this module are byte offsets into the article text; fixture
//! corpora are ASCII so byte and character counts coincide there.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dated full copy of the corpus. Consecutive snapshots are diffed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    /// Ordinal tag, e.g. "2023-09". Tags order lexicographically.
    pub epoch: String,
    pub articles: Vec<Article>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// 0-based ordinal within the article.
    pub index: usize,
    /// Byte span `(start, end)` into the article text, trimmed of whitespace.
    pub span: (usize, usize),
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub article_id: String,
    /// Contiguous half-open sentence index interval `[start, end)`.
    pub sentence_range: (usize, usize),
    pub text: String,
    pub char_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub article_id: String,
    pub text: String,
    pub char_span: (usize, usize),
}

impl Article {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        let id = id.into();
        let title = title.into();
        let text = text.into();
        let sentences = segment_sentences(&text);
        Article {
            id,
            title,
            text,
            sentences,
        }
    }

    pub fn sentence_text(&self, index: usize) -> Option<&str> {
        self.sentences.get(index).map(|s| s.text.as_str())
    }
}

#[derive(Deserialize)]
struct RawArticle {
    id: String,
    title: String,
    text: String,
}

/// Load a snapshot from a JSONL file, segmenting every article.
///
/// Article order is preserved. Malformed records report their 1-based line
/// number; duplicate article ids are rejected.
pub fn load_snapshot(path: impl AsRef<Path>, epoch: &str) -> Result<Snapshot> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut articles = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawArticle =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateArticleId(raw.id));
        }
        articles.push(Article::new(raw.id, raw.title, raw.text));
    }
    Ok(Snapshot {
        epoch: epoch.to_string(),
        articles,
    })
}

/// Words that end with a period without terminating a sentence.
const ABBREVIATIONS: &[&str] = &[
    "Mr", "Mrs", "Ms", "Dr", "Prof", "Sr", "Jr", "St", "No", "vs", "etc", "e.g", "i.e", "U.S",
    "U.K", "U.N", "Inc", "Ltd", "Co", "Fig", "approx", "cf", "al",
];

fn is_abbreviation(word: &str) -> bool {
    ABBREVIATIONS.iter().any(|a| *a == word)
}

fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_ascii_digit() || c == '"' || c == '\'' || c == '“' || c == '‘'
}

/// Rule-based sentence segmentation.
///
/// Splits on `.`, `!`, or `?` (optionally followed by closing quotes) when the
/// next non-whitespace character is an uppercase letter, digit, or opening
/// quote, with an abbreviation exception list for periods. Deterministic and
/// total; never produces an empty sentence.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences: Vec<Sentence> = Vec::new();
    let mut start: Option<usize> = None;

    let push = |sentences: &mut Vec<Sentence>, start: usize, end: usize| {
        let raw = &text[start..end];
        let trimmed = raw.trim_end();
        if trimmed.is_empty() {
            return;
        }
        let lead = raw.len() - raw.trim_start().len();
        let s = start + lead;
        let e = start + trimmed.len();
        sentences.push(Sentence {
            index: sentences.len(),
            span: (s, e),
            text: text[s..e].to_string(),
        });
    };

    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if start.is_none() && !c.is_whitespace() {
            start = Some(pos);
        }
        if start.is_some() && matches!(c, '.' | '!' | '?') {
            // Swallow a run of terminators and closing quotes.
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?' | '"' | '\'' | '”' | '’')
            {
                j += 1;
            }
            let followed_by_ws = j >= chars.len() || chars[j].1.is_whitespace();
            let next_non_ws = chars[j..].iter().find(|(_, c)| !c.is_whitespace());
            let boundary = followed_by_ws
                && match next_non_ws {
                    Some((_, n)) => starts_sentence(*n),
                    None => true,
                };
            let abbrev = c == '.' && {
                let word_start = chars[..i]
                    .iter()
                    .rposition(|(_, c)| c.is_whitespace())
                    .map(|k| chars[k].0 + chars[k].1.len_utf8())
                    .unwrap_or(0);
                is_abbreviation(&text[word_start..pos])
            };
            if boundary && !abbrev {
                let end = if j < chars.len() { chars[j].0 } else { text.len() };
                push(&mut sentences, start.unwrap(), end);
                start = None;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if let Some(s) = start {
        push(&mut sentences, s, text.len());
    }
    sentences
}

/// Byte ranges of text blocks separated by one or more blank lines.
fn paragraph_blocks(text: &str) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let mut block_start: Option<usize> = None;
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            if let Some(s) = block_start.take() {
                blocks.push((s, pos));
            }
        } else if block_start.is_none() {
            block_start = Some(pos);
        }
        pos += line.len();
    }
    if let Some(s) = block_start {
        blocks.push((s, text.len()));
    }
    blocks
}

/// Split an article into paragraphs at blank-line delimiters.
///
/// The returned paragraphs partition the article's sentences.
pub fn split_paragraphs(article: &Article) -> Vec<Paragraph> {
    let mut out = Vec::new();
    for (bs, be) in paragraph_blocks(&article.text) {
        let first = article
            .sentences
            .iter()
            .position(|s| s.span.0 >= bs && s.span.0 < be);
        let Some(first) = first else { continue };
        let mut last = first;
        while last + 1 < article.sentences.len() && article.sentences[last + 1].span.0 < be {
            last += 1;
        }
        let text = article.text[bs..be].trim().to_string();
        out.push(Paragraph {
            article_id: article.id.clone(),
            sentence_range: (first, last + 1),
            char_length: text.len(),
            text,
        });
    }
    out
}

/// Splitting level for recursive boundary descent.
#[derive(Clone, Copy)]
enum Level {
    Paragraph,
    Sentence,
    Whitespace,
    Hard,
}

fn split_at_level(text: &str, base: usize, level: Level, max: usize) -> Vec<(usize, usize)> {
    let boundaries: Vec<usize> = match level {
        Level::Paragraph => paragraph_blocks(text)
            .into_iter()
            .skip(1)
            .map(|(s, _)| s)
            .collect(),
        Level::Sentence => segment_sentences(text)
            .into_iter()
            .skip(1)
            .map(|s| s.span.0)
            .collect(),
        Level::Whitespace => {
            let mut b = Vec::new();
            let mut in_ws = false;
            for (i, c) in text.char_indices() {
                if c.is_whitespace() {
                    in_ws = true;
                } else if in_ws {
                    b.push(i);
                    in_ws = false;
                }
            }
            b
        }
        Level::Hard => {
            let mut b = Vec::new();
            let mut count = 0;
            for (i, _) in text.char_indices() {
                if count > 0 && count % max == 0 {
                    b.push(i);
                }
                count += 1;
            }
            b
        }
    };

    let mut units = Vec::new();
    let mut prev = 0;
    for b in boundaries.into_iter().chain(std::iter::once(text.len())) {
        if b > prev {
            units.push((base + prev, base + b));
            prev = b;
        }
    }
    if units.is_empty() && !text.is_empty() {
        units.push((base, base + text.len()));
    }

    // Any unit still over budget descends to the next level.
    let next = match level {
        Level::Paragraph => Some(Level::Sentence),
        Level::Sentence => Some(Level::Whitespace),
        Level::Whitespace => Some(Level::Hard),
        Level::Hard => None,
    };
    if let Some(next) = next {
        let mut refined = Vec::new();
        for (s, e) in units {
            if e - s > max {
                refined.extend(split_at_level(&text[s - base..e - base], s, next, max));
            } else {
                refined.push((s, e));
            }
        }
        refined
    } else {
        units
    }
}

fn is_char_boundary_at(text: &str, mut pos: usize) -> usize {
    while pos < text.len() && !text.is_char_boundary(pos) {
        pos += 1;
    }
    pos
}

/// Chunk an article into retrieval passages of at most `chunk_size` characters
/// with roughly `overlap` characters shared between consecutive passages.
///
/// Split points prefer paragraph boundaries, then sentence boundaries, then
/// whitespace, then a hard cut.
pub fn chunk_passages(article: &Article, chunk_size: usize, overlap: usize) -> Result<Vec<Passage>> {
    if chunk_size <= overlap {
        return Err(Error::Parameter(format!(
            "chunk_size ({chunk_size}) must exceed overlap ({overlap})"
        )));
    }
    let text = &article.text;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let units = split_at_level(text, 0, Level::Paragraph, chunk_size);

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut cur: Option<(usize, usize)> = None;
    for (us, ue) in units {
        match cur {
            None => cur = Some((us, ue)),
            Some((cs, ce)) => {
                if ue - cs <= chunk_size {
                    cur = Some((cs, ue));
                } else {
                    spans.push((cs, ce));
                    // Carry a tail of the previous chunk into the next one.
                    let unit_len = ue - us;
                    let ov = overlap.min(chunk_size.saturating_sub(unit_len)).min(ce - cs);
                    let start = is_char_boundary_at(text, ce - ov);
                    cur = Some((start.min(us), ue));
                }
            }
        }
    }
    if let Some(span) = cur {
        spans.push(span);
    }

    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(n, (s, e))| Passage {
            passage_id: format!("{}#{}", article.id, n),
            article_id: article.id.clone(),
            text: text[s..e].to_string(),
            char_span: (s, e),
        })
        .collect())
}

pub const DEFAULT_CHUNK_SIZE: usize = 1500;
pub const DEFAULT_CHUNK_OVERLAP: usize = 10;
