//! HTTP/JSON client for the model sidecar.
//!
//! Endpoints (all `POST`, JSON bodies):
//!
//! | path                 | request                      | response                                        |
//! |----------------------|------------------------------|-------------------------------------------------|
//! | `/v1/embed_image`    | `{image_b64}`                | `{embedding, dim, space:"cross_modal"}`         |
//! | `/v1/embed_text`     | `{texts}`                    | `{embeddings, dim, space:"cross_modal"}`        |
//! | `/v1/embed_sentence` | `{texts}`                    | `{embeddings, dim, space:"sentence"}`           |
//! | `/v1/lm_propose`     | `{tokens, locked, k_w}`      | `{actions, masks:[{position, candidates:[{token, p}]}]}` |
//! | `/v1/blip2_score`    | `{image_b64, text}`          | `{score}`                                       |
//!
//! Failures come back with a non-2xx status and `{error:{code, message}}`.

use std::time::Duration;

use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{
    Blip2Scorer, ConstrainedLm, GatewayError, ImageEmbedder, ImageInput, LmProposal, MaskProposal,
    SentenceEmbedder, SpaceTag, TextEmbedder,
};
use crate::fusion::CandidateWord;
use crate::refine::Action;
use crate::scalar::Scalar;

/// Base URL of the sidecar, e.g. `http://127.0.0.1:8750`.
pub const SIDECAR_URL_ENV: &str = "MEACAP_SIDECAR_URL";

const ECHO_LIMIT: usize = 512;

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedImageRequest {
    pub image_b64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedImageResponse {
    pub embedding: Vec<f32>,
    pub dim: usize,
    pub space: SpaceTag,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedTextsRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedTextsResponse {
    pub embeddings: Vec<Vec<f32>>,
    pub dim: usize,
    pub space: SpaceTag,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProposeRequest {
    pub tokens: Vec<String>,
    pub locked: Vec<bool>,
    pub k_w: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireCandidate {
    pub token: String,
    pub p: f32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireMask {
    pub position: usize,
    pub candidates: Vec<WireCandidate>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProposeResponse {
    pub actions: Vec<Action>,
    pub masks: Vec<WireMask>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Blip2Request {
    pub image_b64: String,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Blip2Response {
    pub score: f32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

/// Blocking client; safe to share across threads.
#[derive(Debug, Clone)]
pub struct SidecarClient {
    base_url: String,
    agent: Agent,
    expected_dim: Option<usize>,
}

impl SidecarClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let config = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            agent: Agent::new_with_config(config),
            expected_dim: None,
        }
    }

    /// Reads the base address from `MEACAP_SIDECAR_URL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        match std::env::var(SIDECAR_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => Ok(Self::new(url)),
            _ => Err(GatewayError::Precondition(format!("{SIDECAR_URL_ENV} is not set"))),
        }
    }

    /// Fail any cross-modal embedding whose dimension differs, e.g. the
    /// memory index dimension.
    pub fn with_expected_dim(mut self, dim: usize) -> Self {
        self.expected_dim = Some(dim);
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, request: &Req) -> Result<Resp, GatewayError> {
        let url = format!("{}{}", self.base_url, path);
        let mut response = self
            .agent
            .post(&url)
            .send_json(request)
            .map_err(|e| GatewayError::Unreachable(format!("{url}: {e}")))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Unreachable(format!("{url}: reading body: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(match serde_json::from_str::<ErrorEnvelope>(&body) {
                Ok(env) => GatewayError::Service {
                    status,
                    code: env.error.code,
                    message: env.error.message,
                },
                Err(_) => GatewayError::Service {
                    status,
                    code: "unstructured".into(),
                    message: truncate(&body),
                },
            });
        }
        serde_json::from_str(&body).map_err(|e| GatewayError::Protocol {
            message: format!("{path}: {e}"),
            request: echo(request),
        })
    }

    fn check_embeddings<S: Scalar>(
        &self,
        path: &str,
        rows: Vec<Vec<f32>>,
        dim: usize,
        space: SpaceTag,
        expected_space: SpaceTag,
        check_expected_dim: bool,
    ) -> Result<Vec<Vec<S>>, GatewayError> {
        if space != expected_space {
            return Err(GatewayError::SpaceMismatch {
                expected: format!("{expected_space:?}"),
                found: format!("{space:?}"),
            });
        }
        if check_expected_dim {
            if let Some(expected) = self.expected_dim {
                if dim != expected {
                    return Err(GatewayError::DimensionMismatch { expected, found: dim });
                }
            }
        }
        rows.into_iter()
            .map(|row| {
                if row.len() != dim {
                    return Err(GatewayError::Protocol {
                        message: format!("{path}: row of length {} but dim {dim}", row.len()),
                        request: String::new(),
                    });
                }
                Ok(row.into_iter().map(|v| S::from_f64_lossy(f64::from(v))).collect())
            })
            .collect()
    }

    fn embed_texts_at<S: Scalar>(
        &self,
        path: &str,
        texts: &[&str],
        space: SpaceTag,
    ) -> Result<Vec<Vec<S>>, GatewayError> {
        let request = EmbedTextsRequest {
            texts: texts.iter().map(|t| (*t).to_owned()).collect(),
        };
        let response: EmbedTextsResponse = self.post(path, &request)?;
        if response.embeddings.len() != texts.len() {
            return Err(GatewayError::Protocol {
                message: format!(
                    "{path}: {} embeddings for {} texts",
                    response.embeddings.len(),
                    texts.len()
                ),
                request: echo(&request),
            });
        }
        self.check_embeddings(
            path,
            response.embeddings,
            response.dim,
            response.space,
            space,
            space == SpaceTag::CrossModal,
        )
    }
}

fn encode_image(input: &ImageInput) -> String {
    base64::engine::general_purpose::STANDARD.encode(input.bytes())
}

fn truncate(s: &str) -> String {
    if s.len() <= ECHO_LIMIT {
        return s.to_owned();
    }
    let mut end = ECHO_LIMIT;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

fn echo<T: Serialize>(request: &T) -> String {
    truncate(&serde_json::to_string(request).unwrap_or_default())
}

impl<S: Scalar> ImageEmbedder<S> for SidecarClient {
    fn embed_image_raw(&self, input: &ImageInput) -> Result<Vec<S>, GatewayError> {
        let request = EmbedImageRequest {
            image_b64: encode_image(input),
        };
        let response: EmbedImageResponse = self.post("/v1/embed_image", &request)?;
        let mut rows = self.check_embeddings(
            "/v1/embed_image",
            vec![response.embedding],
            response.dim,
            response.space,
            SpaceTag::CrossModal,
            true,
        )?;
        Ok(rows.remove(0))
    }
}

impl<S: Scalar> TextEmbedder<S> for SidecarClient {
    fn embed_texts_raw(&self, texts: &[&str]) -> Result<Vec<Vec<S>>, GatewayError> {
        self.embed_texts_at("/v1/embed_text", texts, SpaceTag::CrossModal)
    }
}

impl<S: Scalar> SentenceEmbedder<S> for SidecarClient {
    fn embed_sentences_raw(&self, texts: &[&str]) -> Result<Vec<Vec<S>>, GatewayError> {
        self.embed_texts_at("/v1/embed_sentence", texts, SpaceTag::Sentence)
    }
}

impl<S: Scalar> ConstrainedLm<S> for SidecarClient {
    fn propose(&self, tokens: &[String], locked: &[bool], k_w: usize) -> Result<LmProposal<S>, GatewayError> {
        if tokens.is_empty() {
            return Err(GatewayError::Precondition("empty token list".into()));
        }
        let request = ProposeRequest {
            tokens: tokens.to_vec(),
            locked: locked.to_vec(),
            k_w,
        };
        let response: ProposeResponse = self.post("/v1/lm_propose", &request)?;
        let proposal = LmProposal {
            actions: response.actions,
            masks: response
                .masks
                .into_iter()
                .map(|m| MaskProposal {
                    position: m.position,
                    candidates: m
                        .candidates
                        .into_iter()
                        .map(|c| CandidateWord {
                            token: c.token,
                            lm_prob: S::from_f64_lossy(f64::from(c.p)),
                        })
                        .collect(),
                })
                .collect(),
        };
        proposal
            .validate(tokens.len(), k_w)
            .map_err(|message| GatewayError::Protocol {
                message: format!("/v1/lm_propose: {message}"),
                request: echo(&request),
            })?;
        Ok(proposal)
    }
}

impl Blip2Scorer for SidecarClient {
    fn blip2_score(&self, image: &ImageInput, text: &str) -> Result<f64, GatewayError> {
        let request = Blip2Request {
            image_b64: encode_image(image),
            text: text.to_owned(),
        };
        let response: Blip2Response = self.post("/v1/blip2_score", &request)?;
        Ok(f64::from(response.score))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_backend_is_reported() {
        // port 9 (discard) on localhost is closed in the sandbox
        let client = SidecarClient::new("http://127.0.0.1:9");
        let err = TextEmbedder::<f32>::embed_texts_raw(&client, &["a"]).unwrap_err();
        assert!(matches!(err, GatewayError::Unreachable(_)), "{err}");
    }

    #[test]
    fn long_echo_is_truncated_on_a_char_boundary() {
        let s = "é".repeat(600);
        let t = truncate(&s);
        assert!(t.ends_with("..."));
        assert!(t.len() <= ECHO_LIMIT + 3);
    }

    #[test]
    fn wire_action_names() {
        let r: ProposeResponse = serde_json::from_str(
            r#"{"actions":["copy","replace","insert"],"masks":[]}"#,
        )
        .unwrap();
        assert_eq!(r.actions, vec![Action::Copy, Action::Replace, Action::Insert]);
        assert!(serde_json::from_str::<ProposeResponse>(r#"{"actions":["delete"],"masks":[]}"#).is_err());
    }
}
