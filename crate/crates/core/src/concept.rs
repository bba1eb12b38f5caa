//! Merge, filter and select: turns the candidate concepts of the retrieved
//! captions into a short ordered list of key concepts.
//!
//! 1. Merge: nodes whose sentence embeddings have cosine above `tau` are
//!    linked, and clusters are the connected components of that graph.
//! 2. Filter: a cluster survives when its concept-cluster frequency, the
//!    number of (member, caption) pairs where the member occurs in the
//!    caption divided by the number of captions, is strictly above the
//!    threshold.
//! 3. Select: each surviving cluster is represented by the member closest
//!    to the image in the cross-modal space.
//! 4. Order: subject-before-object relations from the triplets, with image
//!    similarity as the fallback.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::embedding::{CrossModal, EmbeddingVector, Space};
use crate::gateway::{GatewayError, SentenceEmbedder, TextEmbedder};
use crate::memory::RetrievedSet;
use crate::scalar::Scalar;
use crate::text::{same_noun, tokenize};
use crate::triplet::{ConceptNode, TextGraph};

/// Similarity threshold for memories other than web-scale corpora.
pub const DEFAULT_TAU: f64 = 0.6;
/// Similarity threshold for a web-scale caption memory.
pub const WEB_SCALE_TAU: f64 = 0.55;
pub const DEFAULT_CF_THRESHOLD: f64 = 0.5;
/// Upper bound on the number of key concepts handed to refinement.
pub const DEFAULT_MAX_CONCEPTS: usize = 8;

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("tau must lie strictly between 0 and 1, got {0}")]
    InvalidTau(f64),
    #[error("cf threshold must be finite and non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("no concept nodes to cluster")]
    NoNodes,
    #[error("no clusters to select key concepts from")]
    NoClusters,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterConfig<S> {
    pub tau: S,
    pub cf_threshold: S,
    pub max_concepts: usize,
}

impl<S: Scalar> ClusterConfig<S> {
    pub fn new(tau: S, cf_threshold: S, max_concepts: usize) -> Result<Self, ConceptError> {
        if !(tau > S::zero() && tau < S::one()) {
            return Err(ConceptError::InvalidTau(tau.to_f64_lossy()));
        }
        if !cf_threshold.is_finite() || cf_threshold < S::zero() {
            return Err(ConceptError::InvalidThreshold(cf_threshold.to_f64_lossy()));
        }
        Ok(Self {
            tau,
            cf_threshold,
            max_concepts: max_concepts.max(1),
        })
    }

    pub fn with_tau(tau: S) -> Result<Self, ConceptError> {
        Self::new(tau, S::from_f64_lossy(DEFAULT_CF_THRESHOLD), DEFAULT_MAX_CONCEPTS)
    }
}

impl<S: Scalar> Default for ClusterConfig<S> {
    fn default() -> Self {
        Self {
            tau: S::from_f64_lossy(DEFAULT_TAU),
            cf_threshold: S::from_f64_lossy(DEFAULT_CF_THRESHOLD),
            max_concepts: DEFAULT_MAX_CONCEPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptCluster<S> {
    pub members: Vec<ConceptNode>,
    /// Indices of the members in the node list given to clustering.
    pub node_indices: Vec<usize>,
    pub cf: S,
    pub key_concept: Option<String>,
}

impl<S> ConceptCluster<S> {
    pub fn member_texts(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.text.as_str())
    }
}

/// Disjoint-set forest with path compression and union by rank.
#[derive(Debug, Clone)]
struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] = self.rank[a].saturating_add(1);
        }
    }

    /// Components ordered by smallest member; members ascending.
    fn components(mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut slot_of_root: HashMap<usize, usize> = HashMap::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let root = self.find(i);
            let slot = *slot_of_root.entry(root).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[slot].push(i);
        }
        out
    }
}

/// Connected components of the graph with an edge wherever cosine > `tau`.
pub fn threshold_components<S: Scalar, Sp: Space>(embeddings: &[EmbeddingVector<S, Sp>], tau: S) -> Vec<Vec<usize>> {
    let mut sets = DisjointSet::new(embeddings.len());
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            if embeddings[i].cosine(&embeddings[j]) > tau {
                sets.union(i, j);
            }
        }
    }
    sets.components()
}

/// Clusters candidate concepts by sentence-embedding similarity.
///
/// Each distinct text is embedded once; nodes sharing a text always land in
/// the same cluster.
pub fn cluster_concepts<S, E>(
    nodes: &[ConceptNode],
    embedder: &E,
    config: &ClusterConfig<S>,
) -> Result<Vec<ConceptCluster<S>>, ConceptError>
where
    S: Scalar,
    E: SentenceEmbedder<S> + ?Sized,
{
    if nodes.is_empty() {
        return Err(ConceptError::NoNodes);
    }
    let mut unique: Vec<&str> = Vec::new();
    let mut slot_of: HashMap<&str, usize> = HashMap::new();
    let node_slot: Vec<usize> = nodes
        .iter()
        .map(|n| {
            *slot_of.entry(n.text.as_str()).or_insert_with(|| {
                unique.push(n.text.as_str());
                unique.len() - 1
            })
        })
        .collect();
    let embeddings = embedder.embed_sentences(&unique)?;

    let mut sets = DisjointSet::new(nodes.len());
    let text_groups = threshold_components(&embeddings, config.tau);
    let mut first_node_of_slot = vec![usize::MAX; unique.len()];
    for (i, &slot) in node_slot.iter().enumerate() {
        if first_node_of_slot[slot] == usize::MAX {
            first_node_of_slot[slot] = i;
        } else {
            sets.union(first_node_of_slot[slot], i);
        }
    }
    for group in &text_groups {
        for pair in group.windows(2) {
            sets.union(first_node_of_slot[pair[0]], first_node_of_slot[pair[1]]);
        }
    }

    Ok(sets
        .components()
        .into_iter()
        .map(|indices| ConceptCluster {
            members: indices.iter().map(|&i| nodes[i].clone()).collect(),
            node_indices: indices,
            cf: S::zero(),
            key_concept: None,
        })
        .collect())
}

/// Whether `concept` occurs in the caption as a contiguous token run.
///
/// Tokens compare after normalization; the last concept token also matches
/// its plural or singular form ("chair" in "two chairs").
pub fn occurs_in(concept_tokens: &[String], caption_tokens: &[String]) -> bool {
    let k = concept_tokens.len();
    if k == 0 || k > caption_tokens.len() {
        return false;
    }
    caption_tokens.windows(k).any(|window| {
        window[..k - 1] == concept_tokens[..k - 1] && same_noun(&window[k - 1], &concept_tokens[k - 1])
    })
}

/// Concept-cluster frequency of `members` over `captions`.
pub fn concept_frequency<S: Scalar>(members: &[ConceptNode], captions: &[&str]) -> S {
    if captions.is_empty() {
        return S::zero();
    }
    let caption_tokens: Vec<Vec<String>> = captions.iter().map(|c| tokenize(c)).collect();
    let hits: usize = members
        .iter()
        .map(|m| {
            let concept = tokenize(&m.text);
            caption_tokens.iter().filter(|c| occurs_in(&concept, c)).count()
        })
        .sum();
    S::from_count(hits) / S::from_count(captions.len())
}

pub fn compute_cf<S: Scalar, R>(cluster: &ConceptCluster<S>, retrieved: &RetrievedSet<R>) -> S {
    concept_frequency(&cluster.members, &retrieved.captions())
}

/// Fills in `cf` for every cluster.
pub fn assign_cf<S: Scalar, R>(clusters: &mut [ConceptCluster<S>], retrieved: &RetrievedSet<R>) {
    let captions = retrieved.captions();
    for c in clusters {
        c.cf = concept_frequency(&c.members, &captions);
    }
}

/// Keeps clusters with `cf > cf_threshold`, in order.
pub fn filter_clusters<S: Scalar>(clusters: Vec<ConceptCluster<S>>, config: &ClusterConfig<S>) -> Vec<ConceptCluster<S>> {
    clusters.into_iter().filter(|c| c.cf > config.cf_threshold).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyConcept<S> {
    pub text: String,
    /// Cosine between the image and the concept text.
    pub image_similarity: S,
    /// Every member text of the cluster this concept represents.
    pub cluster_members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyConceptSet<S> {
    pub concepts: Vec<KeyConcept<S>>,
    /// `(before, after)` pairs that constrained the order.
    pub ordering_relations: Vec<(String, String)>,
}

impl<S> KeyConceptSet<S> {
    pub fn empty() -> Self {
        Self {
            concepts: Vec::new(),
            ordering_relations: Vec::new(),
        }
    }

    pub fn texts(&self) -> Vec<&str> {
        self.concepts.iter().map(|c| c.text.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

/// Image similarity of every text, embedding each distinct text once.
pub fn image_similarities<S, E>(
    texts: &[&str],
    image: &EmbeddingVector<S, CrossModal>,
    embedder: &E,
) -> Result<Vec<S>, GatewayError>
where
    S: Scalar,
    E: TextEmbedder<S> + ?Sized,
{
    let mut unique: Vec<&str> = Vec::new();
    let mut slot_of: HashMap<&str, usize> = HashMap::new();
    let slots: Vec<usize> = texts
        .iter()
        .map(|t| {
            *slot_of.entry(t).or_insert_with(|| {
                unique.push(t);
                unique.len() - 1
            })
        })
        .collect();
    if unique.is_empty() {
        return Ok(Vec::new());
    }
    let embedded = embedder.embed_texts(&unique)?;
    let sims: Vec<S> = embedded.iter().map(|e| image.cosine(e)).collect();
    Ok(slots.into_iter().map(|s| sims[s]).collect())
}

/// Index of the maximum, first one on ties. `None` for an empty slice.
pub(crate) fn argmax_first<S: PartialOrd + Copy>(values: &[S]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Picks the member of each cluster most similar to the image.
///
/// Duplicate key concepts across clusters keep the first occurrence. When
/// more than `max_concepts` remain, the most image-similar ones are kept in
/// their original relative order.
pub fn select_key_concepts<S, E>(
    clusters: &mut [ConceptCluster<S>],
    image: &EmbeddingVector<S, CrossModal>,
    embedder: &E,
    max_concepts: usize,
) -> Result<KeyConceptSet<S>, ConceptError>
where
    S: Scalar,
    E: TextEmbedder<S> + ?Sized,
{
    if clusters.is_empty() {
        return Err(ConceptError::NoClusters);
    }
    let all_texts: Vec<&str> = clusters.iter().flat_map(|c| c.member_texts()).collect();
    let all_sims = image_similarities(&all_texts, image, embedder)?;

    let mut concepts: Vec<KeyConcept<S>> = Vec::new();
    let mut offset = 0;
    for cluster in clusters.iter_mut() {
        let sims = &all_sims[offset..offset + cluster.members.len()];
        offset += cluster.members.len();
        let best = argmax_first(sims).expect("clusters are non-empty");
        let text = cluster.members[best].text.clone();
        cluster.key_concept = Some(text.clone());
        if concepts.iter().any(|c| c.text == text) {
            continue;
        }
        let mut members: Vec<String> = Vec::new();
        for m in cluster.member_texts() {
            if !members.iter().any(|x| x == m) {
                members.push(m.to_owned());
            }
        }
        concepts.push(KeyConcept {
            text,
            image_similarity: sims[best],
            cluster_members: members,
        });
    }

    if concepts.len() > max_concepts {
        let mut ranked: Vec<usize> = (0..concepts.len()).collect();
        ranked.sort_by(|&a, &b| {
            concepts[b]
                .image_similarity
                .partial_cmp(&concepts[a].image_similarity)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut keep = vec![false; concepts.len()];
        for &i in ranked.iter().take(max_concepts) {
            keep[i] = true;
        }
        let mut i = 0;
        concepts.retain(|_| {
            i += 1;
            keep[i - 1]
        });
    }

    Ok(KeyConceptSet {
        concepts,
        ordering_relations: Vec::new(),
    })
}

/// Orders key concepts so that triplet subjects precede their objects.
///
/// A concept stands for every member of its cluster when matching triplet
/// endpoints. Among concepts free to go next, the most image-similar goes
/// first; a cycle is broken the same way.
pub fn order_concepts<S: Scalar>(mut set: KeyConceptSet<S>, graphs: &[TextGraph]) -> KeyConceptSet<S> {
    let n = set.concepts.len();
    let owner = |text: &str| {
        set.concepts
            .iter()
            .position(|c| c.cluster_members.iter().any(|m| m == text))
    };
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for g in graphs {
        for t in &g.triplets {
            let Some(object) = &t.object else { continue };
            if let (Some(a), Some(b)) = (owner(&t.subject), owner(object)) {
                if a != b && !edges.contains(&(a, b)) {
                    edges.push((a, b));
                }
            }
        }
    }

    let mut placed = vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let better = |a: usize, b: usize| {
        let (sa, sb) = (set.concepts[a].image_similarity, set.concepts[b].image_similarity);
        sa > sb || (sa == sb && a < b)
    };
    while order.len() < n {
        let free: Vec<usize> = (0..n)
            .filter(|&i| !placed[i])
            .filter(|&i| !edges.iter().any(|&(a, b)| b == i && !placed[a]))
            .collect();
        let pool: Vec<usize> = if free.is_empty() {
            (0..n).filter(|&i| !placed[i]).collect()
        } else {
            free
        };
        let mut pick = pool[0];
        for &i in &pool[1..] {
            if better(i, pick) {
                pick = i;
            }
        }
        placed[pick] = true;
        order.push(pick);
    }

    set.ordering_relations = edges
        .iter()
        .map(|&(a, b)| (set.concepts[a].text.clone(), set.concepts[b].text.clone()))
        .collect();
    let mut old: Vec<Option<KeyConcept<S>>> = set.concepts.into_iter().map(Some).collect();
    set.concepts = order.into_iter().map(|i| old[i].take().expect("each index once")).collect();
    set
}
