//! Keywords-to-sentence refinement.
//!
//! Each iteration asks the LM for one action per token. Replace puts a mask
//! at the token's position, insert puts a mask just before it. Masks are then
//! filled left to right, each with the fusion-best candidate, and every fill
//! is committed before the next mask is scored. Refinement stops when the
//! effective actions are all copy or the iteration cap is reached.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{DecisionRecord, FusionError, FusionScorer, FusionWeights, ScoreBreakdown};
use crate::gateway::{ConstrainedLm, GatewayError};
use crate::scalar::Scalar;

pub const DEFAULT_PREFIX: &str = "The image above depicts that";
pub const DEFAULT_K_W: usize = 200;
pub const DEFAULT_N_D: usize = 5;
pub const DEFAULT_MAX_ITERATIONS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Copy,
    Replace,
    Insert,
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("no keywords and no prefix to start from")]
    NoConstraints,
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lm(#[from] GatewayError),
    #[error("LM proposal rejected: {0}")]
    Protocol(String),
    #[error("LM returned no candidates for the mask at position {position}")]
    NoCandidates { position: usize },
    #[error("scoring the mask at position {position} failed: {source}")]
    Scoring {
        position: usize,
        #[source]
        source: FusionError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeConfig<S> {
    pub k_w: usize,
    pub n_d: usize,
    pub max_iterations: usize,
    pub prefix: Option<String>,
    pub weights: FusionWeights<S>,
}

impl<S: Scalar> Default for DecodeConfig<S> {
    fn default() -> Self {
        Self {
            k_w: DEFAULT_K_W,
            n_d: DEFAULT_N_D,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            prefix: Some(DEFAULT_PREFIX.to_owned()),
            weights: FusionWeights::default(),
        }
    }
}

impl<S: Scalar> DecodeConfig<S> {
    pub fn validate(&self) -> Result<(), RefineError> {
        if self.k_w == 0 {
            return Err(RefineError::InvalidConfig("k_w must be at least 1".into()));
        }
        if self.n_d == 0 {
            return Err(RefineError::InvalidConfig("n_d must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(RefineError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        FusionWeights::new(self.weights.alpha, self.weights.beta, self.weights.gamma)
            .map_err(|e| RefineError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    fn prefix_tokens(&self) -> Vec<String> {
        self.prefix
            .as_deref()
            .map(|p| p.split_whitespace().map(str::to_owned).collect())
            .unwrap_or_default()
    }
}

/// The sentence being refined.
///
/// Prefix and keyword tokens are locked. Tokens flagged `insert_blocked`
/// (every prefix token and every non-initial keyword token) also refuse an
/// insert in front of them, so neither the prefix nor a multi-word keyword
/// can be split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SentenceState {
    tokens: Vec<String>,
    locked: Vec<bool>,
    insert_blocked: Vec<bool>,
    prefix_len: usize,
    iteration: usize,
}

impl SentenceState {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn locked(&self) -> &[bool] {
        &self.locked
    }

    pub fn insert_blocked(&self) -> &[bool] {
        &self.insert_blocked
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Whole sentence including the prefix.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Sentence with the prefix tokens removed.
    pub fn caption(&self) -> String {
        self.tokens[self.prefix_len..].join(" ")
    }

    /// Effective action for the LM's `proposed` action at `index`.
    pub fn coerce(&self, index: usize, proposed: Action) -> Action {
        match proposed {
            Action::Replace if self.locked[index] => Action::Copy,
            Action::Insert if self.insert_blocked[index] => Action::Copy,
            a => a,
        }
    }
}

/// Per-token actions of one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ActionSequence(pub Vec<Action>);

impl ActionSequence {
    pub fn is_all_copy(&self) -> bool {
        self.0.iter().all(|a| *a == Action::Copy)
    }

    pub fn inserts(&self) -> usize {
        self.0.iter().filter(|a| **a == Action::Insert).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    FullCopy,
    MaxIterations,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::FullCopy => "full_copy",
            Termination::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementTrace<S> {
    pub states: Vec<SentenceState>,
    pub decisions: Vec<DecisionRecord>,
    /// Breakdown of the chosen candidate, parallel to `decisions`.
    pub chosen: Vec<ScoreBreakdown<S>>,
    pub termination: Termination,
}

/// Prefix tokens followed by each keyword's tokens, all locked.
pub fn initialize_from_keywords<S: Scalar>(keywords: &[&str], config: &DecodeConfig<S>) -> Result<SentenceState, RefineError> {
    let prefix = config.prefix_tokens();
    let mut tokens = prefix.clone();
    let mut insert_blocked = vec![true; prefix.len()];
    for keyword in keywords {
        for (i, tok) in keyword.split_whitespace().enumerate() {
            tokens.push(tok.to_owned());
            insert_blocked.push(i > 0);
        }
    }
    if tokens.is_empty() {
        return Err(RefineError::NoConstraints);
    }
    Ok(SentenceState {
        locked: vec![true; tokens.len()],
        tokens,
        insert_blocked,
        prefix_len: prefix.len(),
        iteration: 0,
    })
}

/// Outcome of one [`refine_step`].
#[derive(Debug, Clone)]
pub struct Step<S> {
    pub state: SentenceState,
    /// Actions after coercion, aligned with the input state.
    pub actions: ActionSequence,
    pub decisions: Vec<DecisionRecord>,
    pub chosen: Vec<ScoreBreakdown<S>>,
}

enum Slot {
    Token(usize),
    Mask { source: usize, action: Action },
}

pub fn refine_step<S: Scalar>(
    state: &SentenceState,
    lm: &dyn ConstrainedLm<S>,
    scorer: &FusionScorer<'_, S>,
    config: &DecodeConfig<S>,
) -> Result<Step<S>, RefineError> {
    let proposal = lm.propose(&state.tokens, &state.locked, config.k_w)?;
    proposal
        .validate(state.len(), config.k_w)
        .map_err(RefineError::Protocol)?;
    let actions = ActionSequence(
        proposal
            .actions
            .iter()
            .enumerate()
            .map(|(i, &a)| state.coerce(i, a))
            .collect(),
    );

    let mut next = state.clone();
    next.iteration += 1;
    if actions.is_all_copy() {
        return Ok(Step {
            state: next,
            actions,
            decisions: Vec::new(),
            chosen: Vec::new(),
        });
    }

    let mut slots = Vec::with_capacity(state.len() + actions.inserts());
    let mut prefix_len = state.prefix_len;
    for (i, &a) in actions.0.iter().enumerate() {
        match a {
            Action::Copy => slots.push(Slot::Token(i)),
            Action::Replace => slots.push(Slot::Mask { source: i, action: a }),
            Action::Insert => {
                slots.push(Slot::Mask { source: i, action: a });
                slots.push(Slot::Token(i));
                if i < state.prefix_len {
                    prefix_len += 1;
                }
            }
        }
    }

    let mut filled: Vec<Option<String>> = slots
        .iter()
        .map(|s| match s {
            Slot::Token(i) => Some(state.tokens[*i].clone()),
            Slot::Mask { .. } => None,
        })
        .collect();
    let mut decisions = Vec::new();
    let mut chosen = Vec::new();
    for (position, slot) in slots.iter().enumerate() {
        let Slot::Mask { source, action } = *slot else { continue };
        let candidates = proposal
            .mask_at(source)
            .map(|m| m.candidates.as_slice())
            .unwrap_or_default();
        if candidates.is_empty() {
            return Err(RefineError::NoCandidates { position: source });
        }
        if let Some(bad) = candidates.iter().find(|c| c.token.trim().is_empty() || c.token.contains(char::is_whitespace)) {
            return Err(RefineError::Protocol(format!(
                "candidate {:?} for position {source} is not a single token",
                bad.token
            )));
        }
        let sentences: Vec<String> = candidates
            .iter()
            .map(|c| {
                let mut words: Vec<&str> = Vec::with_capacity(filled.len());
                for (j, w) in filled.iter().enumerate() {
                    if j == position {
                        words.push(&c.token);
                    } else if let Some(w) = w {
                        words.push(w);
                    }
                }
                words.join(" ")
            })
            .collect();
        let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
        let selection = scorer
            .select(candidates, &refs)
            .map_err(|source| RefineError::Scoring { position, source })?;
        decisions.push(DecisionRecord::new(state.iteration, position, action, candidates, &selection));
        chosen.push(selection.breakdowns[selection.index]);
        filled[position] = Some(candidates[selection.index].token.clone());
    }

    next.tokens = filled.into_iter().map(|w| w.expect("every mask filled")).collect();
    next.locked = slots
        .iter()
        .map(|s| match s {
            Slot::Token(i) => state.locked[*i],
            Slot::Mask { .. } => false,
        })
        .collect();
    next.insert_blocked = slots
        .iter()
        .map(|s| match s {
            Slot::Token(i) => state.insert_blocked[*i],
            Slot::Mask { .. } => false,
        })
        .collect();
    next.prefix_len = prefix_len;
    Ok(Step {
        state: next,
        actions,
        decisions,
        chosen,
    })
}

/// Refines `keywords` into a caption. Returns the caption without the prefix.
pub fn run_refinement<S: Scalar>(
    keywords: &[&str],
    lm: &dyn ConstrainedLm<S>,
    scorer: &FusionScorer<'_, S>,
    config: &DecodeConfig<S>,
) -> Result<(String, RefinementTrace<S>), RefineError> {
    config.validate()?;
    let mut state = initialize_from_keywords(keywords, config)?;
    let mut trace = RefinementTrace {
        states: vec![state.clone()],
        decisions: Vec::new(),
        chosen: Vec::new(),
        termination: Termination::MaxIterations,
    };
    for _ in 0..config.max_iterations {
        let step = refine_step(&state, lm, scorer, config)?;
        state = step.state;
        trace.states.push(state.clone());
        trace.decisions.extend(step.decisions);
        trace.chosen.extend(step.chosen);
        if step.actions.is_all_copy() {
            trace.termination = Termination::FullCopy;
            break;
        }
    }
    Ok((state.caption(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{CandidateWord, MemorySentenceCache};
    use crate::gateway::mock::{FnLm, MockEmbedder, ScriptedLm};
    use crate::gateway::{ImageEmbedder, ImageInput, LmProposal, MaskProposal};

    fn scorer(embedder: &MockEmbedder) -> FusionScorer<'_, f64> {
        let image = embedder
            .embed_image(&ImageInput::new(vec![1, 2, 3], None).unwrap())
            .unwrap();
        FusionScorer {
            image,
            text: embedder,
            sentence: embedder,
            memory: MemorySentenceCache::from_captions(&["a bear on a chair"], embedder).unwrap(),
            weights: FusionWeights::default(),
        }
    }

    fn no_prefix() -> DecodeConfig<f64> {
        DecodeConfig {
            prefix: None,
            ..DecodeConfig::default()
        }
    }

    fn cand(token: &str, p: f64) -> CandidateWord<f64> {
        CandidateWord {
            token: token.into(),
            lm_prob: p,
        }
    }

    #[test]
    fn initial_state() {
        let s = initialize_from_keywords(&["bear", "chair"], &no_prefix()).unwrap();
        assert_eq!(s.tokens(), ["bear", "chair"]);
        assert!(s.locked().iter().all(|l| *l));

        let s = initialize_from_keywords(&["bear"], &DecodeConfig::<f64>::default()).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.locked().iter().all(|l| *l));
        assert_eq!(s.caption(), "bear");

        let s = initialize_from_keywords(&[], &DecodeConfig::<f64>::default()).unwrap();
        assert_eq!(s.caption(), "");
        assert!(matches!(
            initialize_from_keywords(&[], &no_prefix()),
            Err(RefineError::NoConstraints)
        ));
    }

    #[test]
    fn all_copy_is_a_fixed_point() {
        let e = MockEmbedder::new(1, 32);
        let lm = ScriptedLm::<f64>::new(vec![]);
        let (caption, trace) = run_refinement(&["teddy bear", "chair"], &lm, &scorer(&e), &no_prefix()).unwrap();
        assert_eq!(caption, "teddy bear chair");
        assert_eq!(trace.termination, Termination::FullCopy);
        assert_eq!(trace.states.len(), 2);
        assert_eq!(trace.states[0].tokens(), trace.states[1].tokens());
        assert!(trace.decisions.is_empty());
    }

    #[test]
    fn single_insert_at_front() {
        let e = MockEmbedder::new(1, 32);
        let lm = ScriptedLm::new(vec![LmProposal {
            actions: vec![Action::Insert, Action::Copy],
            masks: vec![MaskProposal {
                position: 0,
                candidates: vec![cand("the", 1.0)],
            }],
        }]);
        let (caption, trace) = run_refinement(&["bear", "chair"], &lm, &scorer(&e), &no_prefix()).unwrap();
        assert_eq!(caption, "the bear chair");
        assert_eq!(trace.states[1].len(), 3);
        assert_eq!(trace.decisions.len(), 1);
        assert_eq!(trace.termination, Termination::FullCopy);
    }

    #[test]
    fn locked_and_glued_positions_are_coerced() {
        let e = MockEmbedder::new(1, 32);
        // replace on a keyword, insert inside "teddy bear": both become copy
        let lm = ScriptedLm::new(vec![LmProposal {
            actions: vec![Action::Replace, Action::Insert],
            masks: vec![
                MaskProposal {
                    position: 0,
                    candidates: vec![cand("x", 1.0)],
                },
                MaskProposal {
                    position: 1,
                    candidates: vec![cand("y", 1.0)],
                },
            ],
        }]);
        let (caption, trace) = run_refinement(&["teddy bear"], &lm, &scorer(&e), &no_prefix()).unwrap();
        assert_eq!(caption, "teddy bear");
        assert_eq!(trace.termination, Termination::FullCopy);
    }

    #[test]
    fn insert_before_first_keyword_lands_after_prefix() {
        let e = MockEmbedder::new(1, 32);
        let config = DecodeConfig::<f64>::default();
        let lm = FnLm(|tokens: &[String], _: &[bool], _: usize| {
            let actions = vec![Action::Insert; tokens.len()];
            let masks = (0..tokens.len())
                .map(|position| MaskProposal {
                    position,
                    candidates: vec![cand("a", 1.0)],
                })
                .collect();
            LmProposal { actions, masks }
        });
        let step = refine_step(
            &initialize_from_keywords(&["bear"], &config).unwrap(),
            &lm,
            &scorer(&e),
            &config,
        )
        .unwrap();
        assert_eq!(step.state.text(), "The image above depicts that a bear");
        assert_eq!(step.state.caption(), "a bear");
        assert_eq!(step.actions.inserts(), 1);
    }

    #[test]
    fn never_copy_stops_at_the_cap() {
        let e = MockEmbedder::new(1, 32);
        // always replace the last unlocked token, or insert before token 0
        let lm = FnLm(|tokens: &[String], locked: &[bool], _: usize| {
            let mut actions = vec![Action::Copy; tokens.len()];
            let pos = locked.iter().rposition(|l| !l).unwrap_or(0);
            actions[pos] = if locked[pos] { Action::Insert } else { Action::Replace };
            LmProposal {
                actions,
                masks: vec![MaskProposal {
                    position: pos,
                    candidates: vec![cand("big", 0.6), cand("small", 0.4)],
                }],
            }
        });
        let (caption, trace) = run_refinement(&["bear"], &lm, &scorer(&e), &no_prefix()).unwrap();
        assert_eq!(trace.termination, Termination::MaxIterations);
        assert_eq!(trace.states.len(), DEFAULT_MAX_ITERATIONS + 1);
        assert_eq!(trace.decisions.len(), DEFAULT_MAX_ITERATIONS);
        assert!(caption.ends_with("bear"));
        assert_eq!(trace.states.last().unwrap().len(), 2);
    }

    #[test]
    fn empty_candidate_list_is_an_error() {
        let e = MockEmbedder::new(1, 32);
        let lm = ScriptedLm::new(vec![LmProposal {
            actions: vec![Action::Insert],
            masks: vec![MaskProposal {
                position: 0,
                candidates: vec![],
            }],
        }]);
        assert!(matches!(
            run_refinement(&["bear"], &lm, &scorer(&e), &no_prefix()),
            Err(RefineError::NoCandidates { position: 0 })
        ));
    }

    #[test]
    fn termination_names() {
        assert_eq!(serde_json::to_string(&Termination::FullCopy).unwrap(), "\"full_copy\"");
        assert_eq!(Termination::MaxIterations.as_str(), "max_iterations");
    }
}
