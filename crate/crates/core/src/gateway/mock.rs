//! Deterministic stand-ins for the neural models.
//!
//! Every output is a pure function of `(seed, input)`. Text embeddings are
//! the normalized mean of per-token pseudo-random vectors, so texts that
//! share tokens are partially similar ("bear" vs "teddy bear" sits near
//! 1/sqrt(2)) and clustering sees non-trivial structure.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Blip2Scorer, ConstrainedLm, GatewayError, ImageEmbedder, ImageInput, LmProposal, MaskProposal,
    SentenceEmbedder, TextEmbedder,
};
use super::blip2_from_embeddings;
use crate::fusion::CandidateWord;
use crate::refine::Action;
use crate::scalar::Scalar;
use crate::text::tokenize;

pub const DEFAULT_MOCK_DIM: usize = 512;

const SALT_CROSS_MODAL: u64 = 0x436c_6970;
const SALT_SENTENCE: u64 = 0x5342_6572;
const SALT_IMAGE: u64 = 0x496d_6167;
const SALT_LM: u64 = 0x4c4d_5f5f;

/// 64-bit FNV-1a; stable across platforms and compiler versions.
pub fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn seeded_vector(key: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

type TokenCache = HashMap<(u64, String), Arc<Vec<f64>>>;

/// Embedders and BLIP-2 scorer backed by seeded hashes.
#[derive(Debug)]
pub struct MockEmbedder {
    seed: u64,
    dim: usize,
    token_cache: RwLock<TokenCache>,
}

impl MockEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "mock dimension must be positive");
        Self {
            seed,
            dim,
            token_cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn token_vector(&self, salt: u64, token: &str) -> Arc<Vec<f64>> {
        let key = (salt, token.to_owned());
        if let Some(v) = self.token_cache.read().expect("cache poisoned").get(&key) {
            return Arc::clone(v);
        }
        let v = Arc::new(seeded_vector(
            fnv1a(self.seed ^ salt, token.as_bytes()),
            self.dim,
        ));
        self.token_cache
            .write()
            .expect("cache poisoned")
            .entry(key)
            .or_insert(v)
            .clone()
    }

    /// Mean of token vectors; the raw text is the single token when it has
    /// no word characters.
    fn text_vector(&self, salt: u64, text: &str) -> Vec<f64> {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(text.to_owned());
        }
        let mut acc = vec![0.0f64; self.dim];
        for t in &tokens {
            for (a, x) in acc.iter_mut().zip(self.token_vector(salt, t).iter()) {
                *a += x;
            }
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    fn image_vector(&self, bytes: &[u8]) -> Vec<f64> {
        seeded_vector(fnv1a(self.seed ^ SALT_IMAGE, bytes), self.dim)
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(0, DEFAULT_MOCK_DIM)
    }
}

fn cast_vec<S: Scalar>(v: Vec<f64>) -> Vec<S> {
    v.into_iter().map(S::from_f64_lossy).collect()
}

impl<S: Scalar> ImageEmbedder<S> for MockEmbedder {
    fn embed_image_raw(&self, input: &ImageInput) -> Result<Vec<S>, GatewayError> {
        Ok(cast_vec(self.image_vector(input.bytes())))
    }
}

impl<S: Scalar> TextEmbedder<S> for MockEmbedder {
    fn embed_texts_raw(&self, texts: &[&str]) -> Result<Vec<Vec<S>>, GatewayError> {
        Ok(texts
            .iter()
            .map(|t| cast_vec(self.text_vector(SALT_CROSS_MODAL, t)))
            .collect())
    }
}

impl<S: Scalar> SentenceEmbedder<S> for MockEmbedder {
    fn embed_sentences_raw(&self, texts: &[&str]) -> Result<Vec<Vec<S>>, GatewayError> {
        Ok(texts
            .iter()
            .map(|t| cast_vec(self.text_vector(SALT_SENTENCE, t)))
            .collect())
    }
}

impl Blip2Scorer for MockEmbedder {
    fn blip2_score(&self, image: &ImageInput, text: &str) -> Result<f64, GatewayError> {
        let img = ImageEmbedder::<f64>::embed_image(self, image)?;
        let txt = TextEmbedder::<f64>::embed_text(self, text)?;
        Ok(blip2_from_embeddings(&img, &txt))
    }
}

/// Filler-word language model.
///
/// Proposes an insertion before every locked token that starts the sentence
/// or directly follows another locked token, and a replacement for an
/// unlocked token that repeats its left neighbour. Candidates are a fixed
/// vocabulary ranked by a hash of the left context.
#[derive(Debug, Clone)]
pub struct MockLm {
    seed: u64,
    vocabulary: Vec<String>,
    max_tokens: usize,
}

const DEFAULT_VOCABULARY: &[&str] = &[
    "a", "the", "is", "on", "in", "with", "of", "and", "near", "at", "sitting", "standing",
    "next", "to", "under", "by", "holding", "some", "two", "large",
];

impl MockLm {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            vocabulary: DEFAULT_VOCABULARY.iter().map(|s| (*s).to_owned()).collect(),
            max_tokens: 32,
        }
    }

    pub fn with_vocabulary(seed: u64, vocabulary: Vec<String>) -> Self {
        assert!(!vocabulary.is_empty(), "vocabulary must not be empty");
        Self {
            seed,
            vocabulary,
            max_tokens: 32,
        }
    }

    fn candidates<S: Scalar>(&self, left: &str, position: usize, k_w: usize) -> Vec<CandidateWord<S>> {
        let weights: Vec<(usize, f64)> = self
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let key = format!("{left}\u{1f}{position}\u{1f}{w}");
                let h = fnv1a(self.seed ^ SALT_LM, key.as_bytes());
                (i, 1.0 + (h % 1000) as f64)
            })
            .collect();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let mut ranked: Vec<(usize, f64)> = weights.into_iter().map(|(i, w)| (i, w / total)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
            .into_iter()
            .take(k_w)
            .map(|(i, p)| CandidateWord {
                token: self.vocabulary[i].clone(),
                lm_prob: S::from_f64_lossy(p),
            })
            .collect()
    }
}

impl<S: Scalar> ConstrainedLm<S> for MockLm {
    fn propose(&self, tokens: &[String], locked: &[bool], k_w: usize) -> Result<LmProposal<S>, GatewayError> {
        if tokens.is_empty() || tokens.len() != locked.len() {
            return Err(GatewayError::Precondition(format!(
                "{} tokens with {} lock flags",
                tokens.len(),
                locked.len()
            )));
        }
        let mut actions = vec![Action::Copy; tokens.len()];
        let mut masks = Vec::new();
        let room = tokens.len() < self.max_tokens;
        for i in 0..tokens.len() {
            let action = if locked[i] && room && (i == 0 || locked[i - 1]) {
                Action::Insert
            } else if !locked[i] && i > 0 && tokens[i - 1] == tokens[i] {
                Action::Replace
            } else {
                Action::Copy
            };
            actions[i] = action;
            if action != Action::Copy {
                let left = if i == 0 { "" } else { tokens[i - 1].as_str() };
                masks.push(MaskProposal {
                    position: i,
                    candidates: self.candidates(left, i, k_w),
                });
            }
        }
        Ok(LmProposal { actions, masks })
    }
}

/// Mock embedders plus mock LM behind every gateway trait.
#[derive(Debug)]
pub struct MockBackend {
    pub embedder: MockEmbedder,
    pub lm: MockLm,
}

impl MockBackend {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            embedder: MockEmbedder::new(seed, dim),
            lm: MockLm::new(seed),
        }
    }
}

impl<S: Scalar> ImageEmbedder<S> for MockBackend {
    fn embed_image_raw(&self, input: &ImageInput) -> Result<Vec<S>, GatewayError> {
        self.embedder.embed_image_raw(input)
    }
}

impl<S: Scalar> TextEmbedder<S> for MockBackend {
    fn embed_texts_raw(&self, texts: &[&str]) -> Result<Vec<Vec<S>>, GatewayError> {
        self.embedder.embed_texts_raw(texts)
    }
}

impl<S: Scalar> SentenceEmbedder<S> for MockBackend {
    fn embed_sentences_raw(&self, texts: &[&str]) -> Result<Vec<Vec<S>>, GatewayError> {
        self.embedder.embed_sentences_raw(texts)
    }
}

impl<S: Scalar> ConstrainedLm<S> for MockBackend {
    fn propose(&self, tokens: &[String], locked: &[bool], k_w: usize) -> Result<LmProposal<S>, GatewayError> {
        self.lm.propose(tokens, locked, k_w)
    }
}

impl Blip2Scorer for MockBackend {
    fn blip2_score(&self, image: &ImageInput, text: &str) -> Result<f64, GatewayError> {
        self.embedder.blip2_score(image, text)
    }
}

/// Replays a fixed list of proposals, then answers all-copy.
///
/// Masks are truncated to the requested `k_w` and every request is recorded.
#[derive(Debug, Default)]
pub struct ScriptedLm<S> {
    script: Vec<LmProposal<S>>,
    calls: Mutex<Vec<Vec<String>>>,
}

impl<S: Scalar> ScriptedLm<S> {
    pub fn new(script: Vec<LmProposal<S>>) -> Self {
        Self {
            script,
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Token sequences this LM has been asked about, in call order.
    pub fn requests(&self) -> Vec<Vec<String>> {
        self.calls.lock().expect("poisoned").clone()
    }
}

impl<S: Scalar> ConstrainedLm<S> for ScriptedLm<S> {
    fn propose(&self, tokens: &[String], _locked: &[bool], k_w: usize) -> Result<LmProposal<S>, GatewayError> {
        let mut calls = self.calls.lock().expect("poisoned");
        let index = calls.len();
        calls.push(tokens.to_vec());
        let mut proposal = match self.script.get(index) {
            Some(p) => p.clone(),
            None => LmProposal::all_copy(tokens.len()),
        };
        for mask in &mut proposal.masks {
            mask.candidates.truncate(k_w);
        }
        Ok(proposal)
    }
}

/// LM driven by a closure, for property tests that need state-dependent
/// behaviour.
pub struct FnLm<F>(pub F);

impl<S, F> ConstrainedLm<S> for FnLm<F>
where
    S: Scalar,
    F: Fn(&[String], &[bool], usize) -> LmProposal<S> + Send + Sync,
{
    fn propose(&self, tokens: &[String], locked: &[bool], k_w: usize) -> Result<LmProposal<S>, GatewayError> {
        Ok((self.0)(tokens, locked, k_w))
    }
}
