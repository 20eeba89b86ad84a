//! JSON-over-HTTP provider clients.
//!
//! Wire shapes:
//! - `POST /embed {"texts":[...]}` -> `{"vectors":[[...]]}`
//! - `POST /nli {"premise":..,"hypothesis":..}` -> `{"label":..,"probs":[..]}`
//! - `POST /generate {"prompt":..,"max_new_tokens":..,"return_feature":bool}`
//!   -> `{"text":..,"feature":[..]}`
//! - `POST /judge {"old":..,"new":..}` -> `{"contradiction":bool}`
//!
//! Transport failures (connect errors, 5xx) are retried with exponential
//! backoff, `max_retries + 1` attempts total. The API key, when configured, is
//! read from the environment and sent as a bearer token.

use std::time::Duration;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{
    ContradictionJudge, Embedder, EmbeddingVector, GenerationResult, Generator, NliLabel,
    NliProvider, NliVerdict, ProviderConfig,
};
use crate::error::{Error, Result};

pub struct HttpProvider {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
    /// First backoff delay; doubles per retry. Small in tests.
    base_backoff: Duration,
    feature_dim: usize,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig, feature_dim: usize) -> Result<HttpProvider> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| Error::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpProvider {
            config,
            client,
            base_backoff: Duration::from_millis(200),
            feature_dim,
        })
    }

    pub fn with_base_backoff(mut self, base: Duration) -> HttpProvider {
        self.base_backoff = base;
        self
    }

    fn api_key(&self) -> Option<String> {
        self.config
            .api_key_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, route: &str, req: &Req) -> Result<Resp> {
        let url = format!("{}{}", self.config.endpoint.trim_end_matches('/'), route);
        let attempts = self.config.max_retries + 1;
        let mut last_err = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.base_backoff * (1u32 << (attempt - 1).min(16)));
            }
            let mut builder = self.client.post(&url).json(req);
            if let Some(key) = self.api_key() {
                builder = builder.bearer_auth(key);
            }
            match builder.send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp.json::<Resp>().map_err(|e| Error::Transport {
                        attempts: attempt + 1,
                        message: format!("bad response body: {e}"),
                    });
                }
                Ok(resp) if resp.status().is_server_error() => {
                    last_err = format!("server returned {}", resp.status());
                }
                Ok(resp) => {
                    // Client errors are not retried.
                    return Err(Error::Transport {
                        attempts: attempt + 1,
                        message: format!("server returned {}", resp.status()),
                    });
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Transport {
            attempts,
            message: last_err,
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl Embedder for HttpProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::Parameter("embed requires non-empty texts".into()));
        }
        let resp: EmbedResponse = self.post("/embed", &EmbedRequest { texts })?;
        let mut out = Vec::with_capacity(resp.vectors.len());
        let expected = resp.vectors.first().map(|v| v.len()).unwrap_or(0);
        for v in resp.vectors {
            if v.len() != expected {
                return Err(Error::WrongDimension {
                    expected,
                    got: v.len(),
                });
            }
            out.push(EmbeddingVector(v).normalized()?);
        }
        if out.len() != texts.len() {
            return Err(Error::Transport {
                attempts: 1,
                message: format!("expected {} vectors, got {}", texts.len(), out.len()),
            });
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct NliResponse {
    label: NliLabel,
    probs: [f64; 3],
}

impl NliProvider for HttpProvider {
    fn nli_classify(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(Error::Parameter("nli requires non-empty inputs".into()));
        }
        let resp: NliResponse = self.post(
            "/nli",
            &NliRequest {
                premise,
                hypothesis,
            },
        )?;
        Ok(NliVerdict {
            label: resp.label,
            probs: resp.probs,
        })
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_new_tokens: usize,
    return_feature: bool,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
    #[serde(default)]
    feature: Option<Vec<f64>>,
}

impl Generator for HttpProvider {
    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<GenerationResult> {
        if max_new_tokens == 0 {
            return Err(Error::Parameter("max_new_tokens must be positive".into()));
        }
        let resp: GenerateResponse = self.post(
            "/generate",
            &GenerateRequest {
                prompt,
                max_new_tokens,
                return_feature: true,
            },
        )?;
        let feature = resp.feature.ok_or(Error::FeatureMissing)?;
        if feature.len() != self.feature_dim {
            return Err(Error::WrongDimension {
                expected: self.feature_dim,
                got: feature.len(),
            });
        }
        Ok(GenerationResult {
            text: resp.text,
            feature,
        })
    }
}

#[derive(Serialize)]
struct JudgeRequest<'a> {
    old: &'a str,
    new: &'a str,
}

#[derive(Deserialize)]
struct JudgeResponse {
    contradiction: bool,
}

impl ContradictionJudge for HttpProvider {
    fn judge_contradiction(&self, s_old: &str, s_new: &str) -> Result<bool> {
        if s_old.trim().is_empty() || s_new.trim().is_empty() {
            return Err(Error::Parameter("judge requires non-empty inputs".into()));
        }
        let resp: JudgeResponse = self.post(
            "/judge",
            &JudgeRequest {
                old: s_old,
                new: s_new,
            },
        )?;
        Ok(resp.contradiction)
    }
}

/// Render the live contradiction-judge prompt. The judge must answer with a
/// strict yes/no token; anything else is a judge-format error upstream.
pub fn judge_prompt(s_old: &str, s_new: &str) -> String {
    format!(
        "Do the following two sentences contradict each other? \
         Answer with exactly one word, yes or no.\n\
         Old sentence: {s_old}\nNew sentence: {s_new}\nAnswer:"
    )
}

/// Parse a strict yes/no judge reply.
pub fn parse_judge_reply(reply: &str) -> Result<bool> {
    match reply.trim().to_lowercase().trim_end_matches('.') {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(Error::JudgeFormat(reply.to_string())),
    }
}
