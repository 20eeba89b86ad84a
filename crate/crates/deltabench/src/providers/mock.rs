//! Deterministic mock providers.
//!
//! Every capability is a pure function of its inputs plus a fixed seed, so
//! downstream runs reproduce bit-for-bit.
//!
//! Embeddings are hash-seeded unit vectors: distinct strings come out
//! pseudo-orthogonal, identical strings identical. A fixture table can declare
//! two strings *aliases* of one another, which forces their cosine similarity
//! to an exact target value (default 0.995) — this is how tests exercise the
//! 0.99 unchanged threshold. A sentence containing the `<NEG>` marker is
//! treated as the negation of the marker-free sentence: the pair embeds with
//! moderate similarity (default 0.65), NLI classifies it as contradiction, and
//! the judge affirms it.
//!
//! Generation is scripted: the first rule whose key occurs in the prompt wins;
//! unscripted prompts fall back to the answer `"UNKNOWN"`. The synthesized
//! feature vector is a hash of the prompt, shifted along a fixed per-label
//! direction when the script declares one, so classifier tests get
//! controllable structure.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    ContradictionJudge, Embedder, EmbeddingVector, GenerationResult, Generator, NliLabel,
    NliProvider, NliVerdict,
};
use crate::error::{Error, Result};

pub const NEG_MARKER: &str = "<NEG>";
pub const FALLBACK_ANSWER: &str = "UNKNOWN";

/// One line of a mock fixture table (JSONL).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FixtureRule {
    /// Force `sim(a, b)` to `sim` (default 0.995).
    Alias {
        a: String,
        b: String,
        #[serde(default = "default_alias_sim")]
        sim: f64,
    },
    /// Pin an NLI verdict for a (premise, hypothesis) pair.
    Nli {
        premise: String,
        hypothesis: String,
        label: NliLabel,
        #[serde(default)]
        probs: Option<[f64; 3]>,
    },
    /// Scripted generation: `answer` for any prompt containing `key`.
    Script {
        key: String,
        answer: String,
        #[serde(default)]
        label: Option<String>,
    },
    /// Pin a judge verdict for an (old, new) pair.
    Judge {
        old: String,
        new: String,
        contradiction: bool,
    },
}

fn default_alias_sim() -> f64 {
    0.995
}

pub struct MockProvider {
    seed: u64,
    dim: usize,
    feature_dim: usize,
    neg_sim: f64,
    /// string -> (canonical, forced similarity)
    aliases: HashMap<String, (String, f64)>,
    nli_rules: HashMap<(String, String), NliVerdict>,
    scripts: Vec<(String, String, Option<String>)>,
    judge_rules: HashMap<(String, String), bool>,
}

impl MockProvider {
    pub fn new(seed: u64, dim: usize, feature_dim: usize) -> MockProvider {
        MockProvider {
            seed,
            dim,
            feature_dim,
            neg_sim: 0.65,
            aliases: HashMap::new(),
            nli_rules: HashMap::new(),
            scripts: Vec::new(),
            judge_rules: HashMap::new(),
        }
    }

    pub fn with_rules(mut self, rules: impl IntoIterator<Item = FixtureRule>) -> MockProvider {
        for rule in rules {
            self.add_rule(rule);
        }
        self
    }

    pub fn add_rule(&mut self, rule: FixtureRule) {
        match rule {
            FixtureRule::Alias { a, b, sim } => {
                // `b` becomes the canonical form of `a`.
                self.aliases.insert(a, (b, sim));
            }
            FixtureRule::Nli {
                premise,
                hypothesis,
                label,
                probs,
            } => {
                let probs = probs.unwrap_or(match label {
                    NliLabel::Entailment => [0.9, 0.07, 0.03],
                    NliLabel::Neutral => [0.05, 0.9, 0.05],
                    NliLabel::Contradiction => [0.03, 0.07, 0.9],
                });
                self.nli_rules
                    .insert((premise, hypothesis), NliVerdict { label, probs });
            }
            FixtureRule::Script { key, answer, label } => {
                self.scripts.push((key, answer, label));
            }
            FixtureRule::Judge {
                old,
                new,
                contradiction,
            } => {
                self.judge_rules.insert((old, new), contradiction);
            }
        }
    }

    /// Load fixture rules from a JSONL file.
    pub fn load_rules(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: FixtureRule =
                serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            self.add_rule(rule);
        }
        Ok(())
    }

    fn hash_rng(&self, tag: &str, text: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(tag.as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }

    fn gaussian_vector(&self, tag: &str, text: &str, dim: usize) -> Vec<f64> {
        let mut rng = self.hash_rng(tag, text);
        (0..dim)
            .map(|_| {
                // Box-Muller from two uniforms.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen::<f64>();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    fn base_unit(&self, text: &str) -> EmbeddingVector {
        EmbeddingVector(self.gaussian_vector("emb", text, self.dim))
            .normalized()
            .expect("gaussian vector is nonzero")
    }

    /// Resolve a string to (canonical form, forced similarity to it).
    fn resolve(&self, text: &str) -> (String, f64) {
        if let Some((canon, sim)) = self.aliases.get(text) {
            return (canon.clone(), *sim);
        }
        if text.contains(NEG_MARKER) {
            return (strip_neg(text), self.neg_sim);
        }
        (text.to_string(), 1.0)
    }

    fn embed_single(&self, text: &str) -> EmbeddingVector {
        let text = text.trim();
        let (canon, sim) = self.resolve(text);
        let base = self.base_unit(&canon);
        if sim >= 1.0 {
            return base;
        }
        // Blend with a hash-derived direction orthogonal to the canonical
        // vector so the dot product comes out exactly at `sim`.
        let raw = EmbeddingVector(self.gaussian_vector("orth", text, self.dim));
        let proj = raw.dot(&base);
        let orth = EmbeddingVector(
            raw.0
                .iter()
                .zip(&base.0)
                .map(|(r, b)| r - proj * b)
                .collect(),
        )
        .normalized()
        .expect("orthogonal component nonzero");
        let w = (1.0 - sim * sim).sqrt();
        EmbeddingVector(
            base.0
                .iter()
                .zip(&orth.0)
                .map(|(b, o)| sim * b + w * o)
                .collect(),
        )
    }

    fn label_direction(&self, label: &str) -> Vec<f64> {
        self.gaussian_vector("label-dir", label, self.feature_dim)
    }
}

pub fn strip_neg(text: &str) -> String {
    text.replace(NEG_MARKER, " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_negated(text: &str) -> bool {
    text.contains(NEG_MARKER)
}

impl Embedder for MockProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Parameter("embed called with no texts".into()));
        }
        for t in texts {
            if t.trim().is_empty() {
                return Err(Error::Parameter("embed called with empty text".into()));
            }
        }
        Ok(texts.iter().map(|t| self.embed_single(t)).collect())
    }
}

impl NliProvider for MockProvider {
    fn nli_classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(Error::Parameter("nli requires non-empty inputs".into()));
        }
        let p = premise.trim();
        let h = hypothesis.trim();
        if let Some(v) = self.nli_rules.get(&(p.to_string(), h.to_string())) {
            return Ok(v.clone());
        }
        if p == h {
            return Ok(NliVerdict {
                label: NliLabel::Entailment,
                probs: [0.97, 0.02, 0.01],
            });
        }
        if strip_neg(p) == strip_neg(h) && is_negated(p) != is_negated(h) {
            return Ok(NliVerdict {
                label: NliLabel::Contradiction,
                probs: [0.01, 0.04, 0.95],
            });
        }
        // Aliases of a common canonical form entail each other.
        let (cp, _) = self.resolve(p);
        let (ch, _) = self.resolve(h);
        if cp == ch && !is_negated(p) && !is_negated(h) {
            return Ok(NliVerdict {
                label: NliLabel::Entailment,
                probs: [0.92, 0.06, 0.02],
            });
        }
        Ok(NliVerdict {
            label: NliLabel::Neutral,
            probs: [0.05, 0.9, 0.05],
        })
    }
}

impl Generator for MockProvider {
    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<GenerationResult> {
        if max_new_tokens == 0 {
            return Err(Error::Parameter("max_new_tokens must be positive".into()));
        }
        let hit = self.scripts.iter().find(|(key, _, _)| prompt.contains(key));
        let (text, label) = match hit {
            Some((_, answer, label)) => (answer.clone(), label.clone()),
            None => (FALLBACK_ANSWER.to_string(), None),
        };
        let mut feature = self.gaussian_vector("feat", prompt, self.feature_dim);
        if let Some(label) = label {
            let dir = self.label_direction(&label);
            for (f, d) in feature.iter_mut().zip(dir) {
                *f += 4.0 * d;
            }
        }
        Ok(GenerationResult { text, feature })
    }
}

impl ContradictionJudge for MockProvider {
    fn judge_contradiction(&self, s_old: &str, s_new: &str) -> Result<bool> {
        if s_old.trim().is_empty() || s_new.trim().is_empty() {
            return Err(Error::Parameter("judge requires non-empty inputs".into()));
        }
        let o = s_old.trim();
        let n = s_new.trim();
        if let Some(v) = self.judge_rules.get(&(o.to_string(), n.to_string())) {
            return Ok(*v);
        }
        if o == n {
            return Ok(false);
        }
        Ok(strip_neg(o) == strip_neg(n) && is_negated(o) != is_negated(n))
    }
}
