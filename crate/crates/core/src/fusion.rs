//! Candidate scoring: `fused = alpha * lm + beta * its + gamma * tts`.
//!
//! `its` is the cross-modal cosine between the image and the candidate
//! sentence; `tts` is the mean sentence-space cosine between the candidate
//! sentence and each retrieved memory caption.

use serde::Serialize;
use thiserror::Error;

use crate::embedding::{CrossModal, EmbeddingVector, SentenceSpace};
use crate::gateway::{GatewayError, SentenceEmbedder, TextEmbedder};
use crate::memory::RetrievedSet;
use crate::refine::Action;
use crate::scalar::Scalar;

/// Number of ranked candidates kept in each trace record.
pub const TRACE_TOP: usize = 5;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("weights must be finite, non-negative and not all zero")]
    InvalidWeights,
    #[error("no candidates to score")]
    Empty,
    #[error("score lists differ in length: {candidates} candidates, {its} its, {tts} tts")]
    LengthMismatch { candidates: usize, its: usize, tts: usize },
    #[error("every candidate has a non-finite score")]
    AllRejected { rejected: Vec<usize> },
    #[error("no memory captions to compare against")]
    EmptyMemory,
    #[error("embedding candidate {candidate:?} failed: {source}")]
    Embedding {
        candidate: Option<usize>,
        #[source]
        source: GatewayError,
    },
}

impl FusionError {
    fn from_gateway(source: GatewayError) -> Self {
        let candidate = match &source {
            GatewayError::Degenerate { index, .. } => Some(*index),
            _ => None,
        };
        FusionError::Embedding { candidate, source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateWord<S> {
    pub token: String,
    pub lm_prob: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FusionWeights<S> {
    pub alpha: S,
    pub beta: S,
    pub gamma: S,
}

impl<S: Scalar> FusionWeights<S> {
    pub fn new(alpha: S, beta: S, gamma: S) -> Result<Self, FusionError> {
        let w = [alpha, beta, gamma];
        if w.iter().any(|x| !x.is_finite() || *x < S::zero()) || w.iter().all(|x| *x == S::zero()) {
            return Err(FusionError::InvalidWeights);
        }
        Ok(Self { alpha, beta, gamma })
    }

    /// Always evaluated as `(alpha*lm + beta*its) + gamma*tts`.
    #[inline]
    pub fn fuse(&self, lm: S, its: S, tts: S) -> S {
        let a = self.alpha * lm;
        let b = self.beta * its;
        let c = self.gamma * tts;
        (a + b) + c
    }
}

impl<S: Scalar> Default for FusionWeights<S> {
    fn default() -> Self {
        Self {
            alpha: S::from_f64_lossy(0.1),
            beta: S::from_f64_lossy(0.4),
            gamma: S::from_f64_lossy(0.2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreBreakdown<S> {
    pub lm: S,
    pub its: S,
    pub tts: S,
    pub fused: S,
}

/// Result of [`fuse_and_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<S> {
    pub index: usize,
    pub breakdowns: Vec<ScoreBreakdown<S>>,
    /// Candidates with a non-finite component, excluded from the argmax.
    pub rejected: Vec<usize>,
}

impl<S: Scalar> Selection<S> {
    /// Indices of the `k` best admissible candidates, best first.
    pub fn ranked(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.breakdowns.len())
            .filter(|i| !self.rejected.contains(i))
            .collect();
        order.sort_by(|&a, &b| {
            self.breakdowns[b]
                .fused
                .partial_cmp(&self.breakdowns[a].fused)
                .expect("admissible scores are finite")
                .then(a.cmp(&b))
        });
        order.truncate(k);
        order
    }
}

/// Cosine between the image and each candidate sentence.
pub fn score_its<S, E>(
    sentences: &[&str],
    image: &EmbeddingVector<S, CrossModal>,
    embedder: &E,
) -> Result<Vec<S>, FusionError>
where
    S: Scalar,
    E: TextEmbedder<S> + ?Sized,
{
    if sentences.is_empty() {
        return Err(FusionError::Empty);
    }
    let embedded = embedder.embed_texts(sentences).map_err(FusionError::from_gateway)?;
    Ok(embedded.iter().map(|e| image.cosine(e)).collect())
}

/// Sentence embeddings of the retrieved captions, computed once per image.
#[derive(Debug, Clone)]
pub struct MemorySentenceCache<S> {
    embeddings: Vec<EmbeddingVector<S, SentenceSpace>>,
}

impl<S: Scalar> MemorySentenceCache<S> {
    pub fn build<R, E>(retrieved: &RetrievedSet<R>, embedder: &E) -> Result<Self, FusionError>
    where
        E: SentenceEmbedder<S> + ?Sized,
    {
        Self::from_captions(&retrieved.captions(), embedder)
    }

    pub fn from_captions<E>(captions: &[&str], embedder: &E) -> Result<Self, FusionError>
    where
        E: SentenceEmbedder<S> + ?Sized,
    {
        if captions.is_empty() {
            return Err(FusionError::EmptyMemory);
        }
        let embeddings = embedder
            .embed_sentences(captions)
            .map_err(|source| FusionError::Embedding { candidate: None, source })?;
        Ok(Self { embeddings })
    }

    pub fn from_embeddings(embeddings: Vec<EmbeddingVector<S, SentenceSpace>>) -> Result<Self, FusionError> {
        if embeddings.is_empty() {
            return Err(FusionError::EmptyMemory);
        }
        Ok(Self { embeddings })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Mean cosine of `sentence` against every cached caption.
    pub fn mean_similarity(&self, sentence: &EmbeddingVector<S, SentenceSpace>) -> S {
        let mut sum = S::zero();
        for m in &self.embeddings {
            sum += m.cosine(sentence);
        }
        sum / S::from_count(self.embeddings.len())
    }
}

/// Mean sentence-space cosine of each candidate against the memory captions.
pub fn score_tts<S, E>(sentences: &[&str], memory: &MemorySentenceCache<S>, embedder: &E) -> Result<Vec<S>, FusionError>
where
    S: Scalar,
    E: SentenceEmbedder<S> + ?Sized,
{
    if sentences.is_empty() {
        return Err(FusionError::Empty);
    }
    let embedded = embedder.embed_sentences(sentences).map_err(FusionError::from_gateway)?;
    Ok(embedded.iter().map(|e| memory.mean_similarity(e)).collect())
}

/// Picks the candidate with the highest fused score, lowest index on ties.
pub fn fuse_and_select<S: Scalar>(
    candidates: &[CandidateWord<S>],
    its: &[S],
    tts: &[S],
    weights: &FusionWeights<S>,
) -> Result<Selection<S>, FusionError> {
    if candidates.len() != its.len() || candidates.len() != tts.len() {
        return Err(FusionError::LengthMismatch {
            candidates: candidates.len(),
            its: its.len(),
            tts: tts.len(),
        });
    }
    if candidates.is_empty() {
        return Err(FusionError::Empty);
    }
    let mut breakdowns: Vec<ScoreBreakdown<S>> = Vec::with_capacity(candidates.len());
    let mut rejected = Vec::new();
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let b = ScoreBreakdown {
            lm: c.lm_prob,
            its: its[i],
            tts: tts[i],
            fused: weights.fuse(c.lm_prob, its[i], tts[i]),
        };
        if [b.lm, b.its, b.tts, b.fused].iter().any(|x| !x.is_finite()) {
            rejected.push(i);
        } else if best.is_none_or(|j| b.fused > breakdowns[j].fused) {
            best = Some(i);
        }
        breakdowns.push(b);
    }
    match best {
        Some(index) => Ok(Selection {
            index,
            breakdowns,
            rejected,
        }),
        None => Err(FusionError::AllRejected { rejected }),
    }
}

/// Everything needed to score candidate sentences for one image.
pub struct FusionScorer<'a, S: Scalar> {
    pub image: EmbeddingVector<S, CrossModal>,
    pub text: &'a dyn TextEmbedder<S>,
    pub sentence: &'a dyn SentenceEmbedder<S>,
    pub memory: MemorySentenceCache<S>,
    pub weights: FusionWeights<S>,
}

impl<S: Scalar> FusionScorer<'_, S> {
    /// Scores full candidate sentences, one per candidate word.
    pub fn select(&self, candidates: &[CandidateWord<S>], sentences: &[&str]) -> Result<Selection<S>, FusionError> {
        if candidates.len() != sentences.len() {
            return Err(FusionError::LengthMismatch {
                candidates: candidates.len(),
                its: sentences.len(),
                tts: sentences.len(),
            });
        }
        let its = score_its(sentences, &self.image, self.text)?;
        let tts = score_tts(sentences, &self.memory, self.sentence)?;
        fuse_and_select(candidates, &its, &tts, &self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidate {
    pub token: String,
    pub lm: f64,
    pub its: f64,
    pub tts: f64,
    pub fused: f64,
}

/// One trace line: the word chosen for one mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub iteration: usize,
    /// Position of the mask in the token list after masks were placed.
    pub position: usize,
    pub action: Action,
    pub chosen_token: String,
    pub top5: Vec<RankedCandidate>,
}

impl DecisionRecord {
    pub fn new<S: Scalar>(
        iteration: usize,
        position: usize,
        action: Action,
        candidates: &[CandidateWord<S>],
        selection: &Selection<S>,
    ) -> Self {
        let top5 = selection
            .ranked(TRACE_TOP)
            .into_iter()
            .map(|i| {
                let b = &selection.breakdowns[i];
                RankedCandidate {
                    token: candidates[i].token.clone(),
                    lm: b.lm.to_f64_lossy(),
                    its: b.its.to_f64_lossy(),
                    tts: b.tts.to_f64_lossy(),
                    fused: b.fused.to_f64_lossy(),
                }
            })
            .collect();
        Self {
            iteration,
            position,
            action,
            chosen_token: candidates[selection.index].token.clone(),
            top5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cands(p: &[f64]) -> Vec<CandidateWord<f64>> {
        p.iter()
            .enumerate()
            .map(|(i, &lm_prob)| CandidateWord {
                token: format!("w{i}"),
                lm_prob,
            })
            .collect()
    }

    struct Table(Vec<(&'static str, Vec<f64>)>);

    impl TextEmbedder<f64> for Table {
        fn embed_texts_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, GatewayError> {
            Ok(texts
                .iter()
                .map(|t| self.0.iter().find(|(k, _)| k == t).unwrap().1.clone())
                .collect())
        }
    }

    impl SentenceEmbedder<f64> for Table {
        fn embed_sentences_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, GatewayError> {
            TextEmbedder::embed_texts_raw(self, texts)
        }
    }

    #[test]
    fn weights_are_validated() {
        assert!(FusionWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(FusionWeights::new(-0.1, 1.0, 0.0).is_err());
        assert!(FusionWeights::new(f64::NAN, 1.0, 0.0).is_err());
        assert!(FusionWeights::new(0.0, 0.0, 1.0).is_ok());
        let d = FusionWeights::<f32>::default();
        assert_eq!((d.alpha, d.beta, d.gamma), (0.1, 0.4, 0.2));
    }

    #[test]
    fn degenerate_weights() {
        let c = cands(&[0.1, 0.5, 0.3]);
        let zeros = [0.0; 3];
        let lm_only = FusionWeights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(fuse_and_select(&c, &zeros, &zeros, &lm_only).unwrap().index, 1);
        let its_only = FusionWeights::new(0.0, 1.0, 0.0).unwrap();
        assert_eq!(fuse_and_select(&c, &[0.2, 0.9, 0.5], &zeros, &its_only).unwrap().index, 1);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let c = cands(&[0.5, 0.5, 0.5]);
        let s = fuse_and_select(&c, &[0.0; 3], &[0.0; 3], &FusionWeights::default()).unwrap();
        assert_eq!(s.index, 0);
    }

    #[test]
    fn non_finite_candidates_are_rejected() {
        let c = cands(&[0.9, 0.1]);
        let s = fuse_and_select(&c, &[f64::NAN, 0.0], &[0.0, 0.0], &FusionWeights::default()).unwrap();
        assert_eq!(s.index, 1);
        assert_eq!(s.rejected, vec![0]);
        assert!(matches!(
            fuse_and_select(&c, &[f64::NAN, f64::INFINITY], &[0.0, 0.0], &FusionWeights::default()),
            Err(FusionError::AllRejected { .. })
        ));
    }

    #[test]
    fn length_mismatch() {
        let c = cands(&[0.5, 0.5]);
        assert!(matches!(
            fuse_and_select(&c, &[0.0], &[0.0, 0.0], &FusionWeights::default()),
            Err(FusionError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn its_identity_and_orthogonal() {
        let t = Table(vec![("same", vec![0.0, 3.0]), ("orth", vec![2.0, 0.0])]);
        let img = EmbeddingVector::normalize(vec![0.0, 1.0]).unwrap();
        assert_eq!(score_its(&["same", "orth"], &img, &t).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn tts_is_the_mean_cosine() {
        // memory captions at cos 0.4 and 0.8 from the candidate
        let t = Table(vec![
            ("m1", vec![0.4, (1.0f64 - 0.16).sqrt()]),
            ("m2", vec![0.8, 0.6]),
            ("cand", vec![1.0, 0.0]),
        ]);
        let memory = MemorySentenceCache::from_captions(&["m1", "m2"], &t).unwrap();
        let tts = score_tts(&["cand"], &memory, &t).unwrap();
        assert!((tts[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn trace_record_shape() {
        let c = cands(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let zeros = [0.0; 6];
        let s = fuse_and_select(&c, &zeros, &zeros, &FusionWeights::default()).unwrap();
        let rec = DecisionRecord::new(0, 2, Action::Insert, &c, &s);
        assert_eq!(rec.chosen_token, "w5");
        assert_eq!(rec.top5.len(), 5);
        assert_eq!(rec.top5[0].token, "w5");
        let json = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["action"], "insert");
        for key in ["iteration", "position", "chosen_token", "top5"] {
            assert!(json.get(key).is_some());
        }
    }

    proptest! {
        #[test]
        fn fused_is_linear_in_its(lm in 0.0f64..1.0, its in -1.0f64..1.0, tts in -1.0f64..1.0, d in -0.5f64..0.5) {
            let w = FusionWeights::<f64>::default();
            let delta = w.fuse(lm, its + d, tts) - w.fuse(lm, its, tts);
            prop_assert!((delta - w.beta * d).abs() < 1e-12);
        }

        #[test]
        fn lm_only_weights_reduce_to_lm_argmax(
            rows in prop::collection::vec((0.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..50),
        ) {
            let c = cands(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
            let its: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let tts: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let w = FusionWeights::new(1.0, 0.0, 0.0).unwrap();
            let got = fuse_and_select(&c, &its, &tts, &w).unwrap().index;
            let mut want = 0;
            for i in 1..c.len() {
                if c[i].lm_prob > c[want].lm_prob {
                    want = i;
                }
            }
            prop_assert_eq!(got, want);
        }

        #[test]
        fn shifting_its_keeps_the_winner(
            rows in prop::collection::vec((0.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..50),
            shift in -0.5f64..0.5,
        ) {
            // dyadic weights and values keep the shifted sums exact
            let q = |x: f64| (x * 1024.0).round() / 1024.0;
            let c = cands(&rows.iter().map(|r| q(r.0)).collect::<Vec<_>>());
            let its: Vec<f64> = rows.iter().map(|r| q(r.1)).collect();
            let tts: Vec<f64> = rows.iter().map(|r| q(r.2)).collect();
            let shifted: Vec<f64> = its.iter().map(|x| x + q(shift)).collect();
            let w = FusionWeights::new(0.125, 0.5, 0.25).unwrap();
            let a = fuse_and_select(&c, &its, &tts, &w).unwrap().index;
            let b = fuse_and_select(&c, &shifted, &tts, &w).unwrap().index;
            prop_assert_eq!(a, b);
        }
    }
}
