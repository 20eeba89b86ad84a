//! Client interfaces for the three external model capabilities — embedding,
//! NLI, and generation/judging — plus deterministic mock implementations used
//! by all tests.
//!
//! Every backend speaks a single JSON-over-HTTP shape (see [`http`]); the mock
//! in [`mock`] is a pure function of its inputs and a fixed seed.

pub mod http;
pub mod mock;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-norm dense vector. Cosine similarity is the plain dot product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Normalize in place; returns an error for the zero vector.
    pub fn normalized(mut self) -> Result<EmbeddingVector> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Parameter("cannot normalize zero vector".into()));
        }
        for v in &mut self.0 {
            *v /= n;
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NliVerdict {
    pub label: NliLabel,
    /// `[entailment, neutral, contradiction]`, summing to 1.
    pub probs: [f64; 3],
}

impl NliVerdict {
    pub fn from_probs(probs: [f64; 3]) -> NliVerdict {
        let label = match probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
        {
            Some(0) => NliLabel::Entailment,
            Some(1) => NliLabel::Neutral,
            _ => NliLabel::Contradiction,
        };
        NliVerdict { label, probs }
    }

    pub fn entailment(&self) -> f64 {
        self.probs[0]
    }

    pub fn contradiction(&self) -> f64 {
        self.probs[2]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    /// Final hidden state of the generator for the prompt, dimension `H`.
    pub feature: Vec<f64>,
}

/// Connection settings for a remote provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_retries() -> usize {
    2
}

impl ProviderConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

pub trait Embedder: Send + Sync {
    /// Embed a batch of texts, one unit vector per input, order-preserving.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }
}

pub trait NliProvider: Send + Sync {
    fn nli_classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict>;
}

pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<GenerationResult>;
}

pub trait ContradictionJudge: Send + Sync {
    /// Returns true iff the judge affirms that the two sentences contradict.
    fn judge_contradiction(&self, s_old: &str, s_new: &str) -> Result<bool>;
}

/// Bundle of provider handles threaded through the pipeline.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    pub nli: Arc<dyn NliProvider>,
    pub generator: Arc<dyn Generator>,
    pub judge: Arc<dyn ContradictionJudge>,
}

impl Providers {
    pub fn mocked(mock: Arc<mock::MockProvider>) -> Providers {
        Providers {
            embedder: mock.clone(),
            nli: mock.clone(),
            generator: mock.clone(),
            judge: mock,
        }
    }
}
