//! Model interfaces the captioning pipeline depends on.
//!
//! Four roles are modeled: the image encoder and the cross-modal text
//! encoder (one shared space), the sentence encoder (its own space), and the
//! keywords-to-sentence language model that proposes edit actions and
//! candidate words. [`mock`] holds deterministic implementations for tests
//! and offline runs; [`sidecar`] binds the same traits to the HTTP model
//! service.

pub mod mock;
pub mod sidecar;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{CrossModal, EmbeddingError, EmbeddingVector, SentenceSpace, Space};
use crate::fusion::CandidateWord;
use crate::refine::Action;
use crate::scalar::Scalar;

/// Weight applied to the BLIP-2 cosine in the BLIP2-S metric.
pub const BLIP2_WEIGHT: f64 = 2.0;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("model backend unreachable: {0}")]
    Unreachable(String),
    #[error("model service returned {status}: [{code}] {message}")]
    Service {
        status: u16,
        code: String,
        message: String,
    },
    #[error("protocol error: {message} (request: {request})")]
    Protocol { message: String, request: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("space mismatch: expected {expected}, got {found}")]
    SpaceMismatch { expected: String, found: String },
    #[error("degenerate embedding for input {index}: {source}")]
    Degenerate {
        index: usize,
        #[source]
        source: EmbeddingError,
    },
}

/// Raw image file content passed through to the image encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInput {
    bytes: Vec<u8>,
    format_hint: Option<String>,
}

impl ImageInput {
    pub fn new(bytes: Vec<u8>, format_hint: Option<String>) -> Result<Self, GatewayError> {
        if bytes.is_empty() {
            return Err(GatewayError::Precondition("image input is empty".into()));
        }
        Ok(Self { bytes, format_hint })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn format_hint(&self) -> Option<&str> {
        self.format_hint.as_deref()
    }
}

/// Candidate words the language model offers for one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskProposal<S> {
    /// Index into the submitted tokens of the action that created the mask.
    pub position: usize,
    pub candidates: Vec<CandidateWord<S>>,
}

/// Output of one encoder/decoder round of the constrained LM.
#[derive(Debug, Clone, PartialEq)]
pub struct LmProposal<S> {
    pub actions: Vec<Action>,
    pub masks: Vec<MaskProposal<S>>,
}

impl<S: Scalar> LmProposal<S> {
    pub fn all_copy(len: usize) -> Self {
        Self {
            actions: vec![Action::Copy; len],
            masks: Vec::new(),
        }
    }

    /// Checks the proposal against the request it answers.
    pub fn validate(&self, token_count: usize, k_w: usize) -> Result<(), String> {
        if self.actions.len() != token_count {
            return Err(format!(
                "{} actions for {} tokens",
                self.actions.len(),
                token_count
            ));
        }
        let mut seen = vec![false; token_count];
        for mask in &self.masks {
            let Some(action) = self.actions.get(mask.position) else {
                return Err(format!("mask position {} out of range", mask.position));
            };
            if *action == Action::Copy {
                return Err(format!("mask at position {} has a copy action", mask.position));
            }
            if std::mem::replace(&mut seen[mask.position], true) {
                return Err(format!("duplicate mask at position {}", mask.position));
            }
            if mask.candidates.len() > k_w {
                return Err(format!(
                    "mask at position {} has {} candidates, k_w is {}",
                    mask.position,
                    mask.candidates.len(),
                    k_w
                ));
            }
            for c in &mask.candidates {
                if !c.lm_prob.is_finite() || c.lm_prob < S::zero() {
                    return Err(format!("invalid probability for candidate {:?}", c.token));
                }
            }
            if mask
                .candidates
                .windows(2)
                .any(|w| w[0].lm_prob < w[1].lm_prob)
            {
                return Err(format!(
                    "candidates at position {} are not sorted by probability",
                    mask.position
                ));
            }
        }
        Ok(())
    }

    pub fn mask_at(&self, position: usize) -> Option<&MaskProposal<S>> {
        self.masks.iter().find(|m| m.position == position)
    }
}

/// Image encoder of the cross-modal model.
pub trait ImageEmbedder<S: Scalar>: Send + Sync {
    /// Unnormalized encoder output.
    fn embed_image_raw(&self, input: &ImageInput) -> Result<Vec<S>, GatewayError>;

    fn embed_image(&self, input: &ImageInput) -> Result<EmbeddingVector<S, CrossModal>, GatewayError> {
        let raw = self.embed_image_raw(input)?;
        EmbeddingVector::normalize(raw).map_err(|source| GatewayError::Degenerate { index: 0, source })
    }
}

/// Text encoder of the cross-modal model.
pub trait TextEmbedder<S: Scalar>: Send + Sync {
    fn embed_texts_raw(&self, texts: &[&str]) -> Result<Vec<Vec<S>>, GatewayError>;

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<S, CrossModal>>, GatewayError> {
        check_texts(texts)?;
        normalize_batch(self.embed_texts_raw(texts)?, texts.len())
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector<S, CrossModal>, GatewayError> {
        Ok(self.embed_texts(&[text])?.remove(0))
    }
}

/// Sentence encoder, used for concept merging and caption-memory similarity.
pub trait SentenceEmbedder<S: Scalar>: Send + Sync {
    fn embed_sentences_raw(&self, texts: &[&str]) -> Result<Vec<Vec<S>>, GatewayError>;

    fn embed_sentences(
        &self,
        texts: &[&str],
    ) -> Result<Vec<EmbeddingVector<S, SentenceSpace>>, GatewayError> {
        check_texts(texts)?;
        normalize_batch(self.embed_sentences_raw(texts)?, texts.len())
    }

    fn embed_sentence(&self, text: &str) -> Result<EmbeddingVector<S, SentenceSpace>, GatewayError> {
        Ok(self.embed_sentences(&[text])?.remove(0))
    }
}

/// Keywords-to-sentence language model.
pub trait ConstrainedLm<S: Scalar>: Send + Sync {
    /// Returns one action per token plus the top-`k_w` candidates for every
    /// mask those actions imply.
    fn propose(&self, tokens: &[String], locked: &[bool], k_w: usize) -> Result<LmProposal<S>, GatewayError>;
}

/// Reference-free image-text score used only for evaluation.
pub trait Blip2Scorer: Send + Sync {
    /// `BLIP2_WEIGHT * cos(image, text)`.
    fn blip2_score(&self, image: &ImageInput, text: &str) -> Result<f64, GatewayError>;
}

/// BLIP2-S from precomputed encoder outputs.
pub fn blip2_from_embeddings<S: Scalar>(
    image: &EmbeddingVector<S, CrossModal>,
    text: &EmbeddingVector<S, CrossModal>,
) -> f64 {
    BLIP2_WEIGHT * image.cosine(text).to_f64_lossy()
}

/// Borrowed handles to every model the pipeline needs.
#[derive(Clone, Copy)]
pub struct Models<'a, S: Scalar> {
    pub image: &'a dyn ImageEmbedder<S>,
    pub text: &'a dyn TextEmbedder<S>,
    pub sentence: &'a dyn SentenceEmbedder<S>,
    pub lm: &'a dyn ConstrainedLm<S>,
}

impl<'a, S: Scalar> Models<'a, S> {
    /// All four roles served by one backend.
    pub fn from_backend<B>(backend: &'a B) -> Self
    where
        B: ImageEmbedder<S> + TextEmbedder<S> + SentenceEmbedder<S> + ConstrainedLm<S>,
    {
        Self {
            image: backend,
            text: backend,
            sentence: backend,
            lm: backend,
        }
    }
}

/// Wire name of an embedding space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceTag {
    CrossModal,
    Sentence,
}

impl SpaceTag {
    pub fn of<Sp: Space>() -> Self {
        if Sp::NAME == CrossModal::NAME {
            SpaceTag::CrossModal
        } else {
            SpaceTag::Sentence
        }
    }
}

fn check_texts(texts: &[&str]) -> Result<(), GatewayError> {
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(GatewayError::Precondition(format!("text {i} is empty")));
    }
    Ok(())
}

fn normalize_batch<S: Scalar, Sp: Space>(
    raw: Vec<Vec<S>>,
    expected: usize,
) -> Result<Vec<EmbeddingVector<S, Sp>>, GatewayError> {
    if raw.len() != expected {
        return Err(GatewayError::Protocol {
            message: format!("expected {expected} embeddings, got {}", raw.len()),
            request: format!("{expected} texts"),
        });
    }
    let dim = raw.first().map_or(0, Vec::len);
    raw.into_iter()
        .enumerate()
        .map(|(index, v)| {
            if v.len() != dim {
                return Err(GatewayError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            EmbeddingVector::normalize(v).map_err(|source| GatewayError::Degenerate { index, source })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(token: &str, p: f64) -> CandidateWord<f64> {
        CandidateWord {
            token: token.into(),
            lm_prob: p,
        }
    }

    #[test]
    fn empty_image_is_a_precondition_error() {
        assert!(matches!(
            ImageInput::new(Vec::new(), None),
            Err(GatewayError::Precondition(_))
        ));
    }

    #[test]
    fn proposal_validation() {
        let ok = LmProposal {
            actions: vec![Action::Insert, Action::Copy],
            masks: vec![MaskProposal {
                position: 0,
                candidates: vec![cand("a", 0.5), cand("the", 0.2)],
            }],
        };
        assert!(ok.validate(2, 200).is_ok());
        assert!(ok.validate(3, 200).is_err());
        assert!(ok.validate(2, 1).is_err());

        let mut unsorted = ok.clone();
        unsorted.masks[0].candidates.reverse();
        assert!(unsorted.validate(2, 200).is_err());

        let mut on_copy = ok.clone();
        on_copy.masks[0].position = 1;
        assert!(on_copy.validate(2, 200).is_err());

        let mut negative = ok;
        negative.masks[0].candidates[1].lm_prob = -0.1;
        assert!(negative.validate(2, 200).is_err());
    }
}
