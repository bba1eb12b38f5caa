//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use memcap::fusion::{CandidateWord, FusionScorer, FusionWeights, MemorySentenceCache};
use memcap::gateway::mock::{fnv1a, FnLm, MockEmbedder};
use memcap::gateway::{ImageEmbedder, ImageInput, LmProposal, MaskProposal};
use memcap::refine::SentenceState;
use memcap::Action;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLERS: &[&str] = &["a", "the", "on", "in", "big", "small", "with", "near", "two", "of"];

/// Proposals drawn from a generator keyed by `(seed, tokens)`: any action
/// at any position, locked or not, with 1 to 4 sorted candidates.
pub fn random_lm(seed: u64, max_tokens: usize) -> FnLm<impl Fn(&[String], &[bool], usize) -> LmProposal<f64> + Send + Sync> {
    FnLm(move |tokens: &[String], _locked: &[bool], k_w: usize| {
        let key = fnv1a(seed, tokens.join("\u{1f}").as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let mut actions = Vec::with_capacity(tokens.len());
        let mut masks = Vec::new();
        for position in 0..tokens.len() {
            let r: f64 = rng.random();
            let action = if r < 0.6 {
                Action::Copy
            } else if r < 0.8 || tokens.len() >= max_tokens {
                Action::Replace
            } else {
                Action::Insert
            };
            actions.push(action);
            if action != Action::Copy {
                let n = rng.random_range(1..=4usize).min(k_w);
                let mut probs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
                probs.sort_by(|a, b| b.total_cmp(a));
                let candidates = probs
                    .into_iter()
                    .map(|p| CandidateWord {
                        token: FILLERS[rng.random_range(0..FILLERS.len())].to_owned(),
                        lm_prob: p,
                    })
                    .collect();
                masks.push(MaskProposal { position, candidates });
            }
        }
        LmProposal { actions, masks }
    })
}

pub fn mock_scorer<'a>(embedder: &'a MockEmbedder, image: &[u8], memory: &[&str]) -> FusionScorer<'a, f64> {
    FusionScorer {
        image: embedder.embed_image(&ImageInput::new(image.to_vec(), None).unwrap()).unwrap(),
        text: embedder,
        sentence: embedder,
        memory: MemorySentenceCache::from_captions(memory, embedder).unwrap(),
        weights: FusionWeights::default(),
    }
}

/// Whether `keyword`'s tokens occur contiguously in the state.
pub fn contains_keyword(state: &SentenceState, keyword: &str) -> bool {
    let k: Vec<&str> = keyword.split_whitespace().collect();
    state
        .tokens()
        .windows(k.len())
        .any(|w| w.iter().zip(&k).all(|(a, b)| a == b))
}
