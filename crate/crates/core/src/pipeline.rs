//! End-to-end captioning for one image: embed, retrieve, parse, pick key
//! concepts, refine.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::concept::{
    argmax_first, assign_cf, cluster_concepts, filter_clusters, image_similarities, order_concepts,
    select_key_concepts, ClusterConfig, ConceptCluster, ConceptError, KeyConcept, KeyConceptSet,
};
use crate::embedding::{CrossModal, EmbeddingVector};
use crate::fusion::{FusionError, FusionScorer, MemorySentenceCache};
use crate::gateway::{GatewayError, ImageInput, Models};
use crate::memory::{MemoryError, MemoryIndex, RetrievedSet};
use crate::refine::{run_refinement, DecodeConfig, RefineError, RefinementTrace, Termination};
use crate::scalar::Scalar;
use crate::triplet::{collect_nodes, parse_caption, TextGraph, TripletStore};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

impl PipelineError {
    /// True when the failure came from a model backend rather than the data.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            PipelineError::Gateway(_)
                | PipelineError::Memory(MemoryError::Gateway(_))
                | PipelineError::Concept(ConceptError::Gateway(_))
                | PipelineError::Fusion(FusionError::Embedding { .. })
                | PipelineError::Refine(RefineError::Lm(_) | RefineError::Protocol(_))
                | PipelineError::Refine(RefineError::Scoring {
                    source: FusionError::Embedding { .. },
                    ..
                })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig<S> {
    pub cluster: ClusterConfig<S>,
    pub decode: DecodeConfig<S>,
}

impl<S: Scalar> Default for PipelineConfig<S> {
    fn default() -> Self {
        Self {
            cluster: ClusterConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

/// Intermediate results up to and including key-concept ordering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inspection<S> {
    pub retrieved: RetrievedSet<S>,
    pub graphs: Vec<TextGraph>,
    pub clusters: Vec<ConceptCluster<S>>,
    /// Indices into `clusters` of the ones that passed the cf filter.
    pub kept: Vec<usize>,
    pub key_concepts: KeyConceptSet<S>,
    /// Set when no cluster survived and the best single node was used.
    pub fallback: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub embed_ms: f64,
    pub retrieve_ms: f64,
    pub parse_ms: f64,
    pub concepts_ms: f64,
    pub refine_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptionOutput<S> {
    pub caption: String,
    pub key_concepts: Vec<String>,
    pub retrieved_ids: Vec<usize>,
    pub termination: Termination,
    pub inspection: Inspection<S>,
    pub trace: RefinementTrace<S>,
    pub timings: Timings,
}

pub struct Captioner<'a, S: Scalar> {
    pub models: Models<'a, S>,
    pub index: &'a MemoryIndex<S>,
    pub triplets: Option<&'a TripletStore>,
    pub config: PipelineConfig<S>,
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

impl<'a, S: Scalar> Captioner<'a, S> {
    pub fn new(models: Models<'a, S>, index: &'a MemoryIndex<S>, config: PipelineConfig<S>) -> Self {
        Self {
            models,
            index,
            triplets: None,
            config,
        }
    }

    pub fn with_triplets(mut self, store: &'a TripletStore) -> Self {
        self.triplets = Some(store);
        self
    }

    fn graph(&self, caption: &str) -> TextGraph {
        match self.triplets {
            Some(store) => store.graph_for(caption),
            None => parse_caption(caption),
        }
    }

    pub fn inspect(&self, image: &ImageInput) -> Result<Inspection<S>, PipelineError> {
        let mut timings = Timings::default();
        self.inspect_timed(image, &mut timings).map(|(i, _)| i)
    }

    fn inspect_timed(
        &self,
        image: &ImageInput,
        timings: &mut Timings,
    ) -> Result<(Inspection<S>, EmbeddingVector<S, CrossModal>), PipelineError> {
        let t = Instant::now();
        let image_embedding = self.models.image.embed_image(image)?;
        if image_embedding.dim() != self.index.dimension() {
            return Err(GatewayError::DimensionMismatch {
                expected: self.index.dimension(),
                found: image_embedding.dim(),
            }
            .into());
        }
        timings.embed_ms = ms_since(t);

        let t = Instant::now();
        let retrieved = self.index.retrieve_top_n(&image_embedding, self.config.decode.n_d)?;
        timings.retrieve_ms = ms_since(t);

        let t = Instant::now();
        let graphs: Vec<TextGraph> = retrieved.items.iter().map(|r| self.graph(&r.caption)).collect();
        let nodes = collect_nodes(&graphs);
        timings.parse_ms = ms_since(t);

        let t = Instant::now();
        let mut clusters = if nodes.is_empty() {
            Vec::new()
        } else {
            cluster_concepts(&nodes, self.models.sentence, &self.config.cluster)?
        };
        assign_cf(&mut clusters, &retrieved);
        let kept: Vec<usize> = (0..clusters.len())
            .filter(|&i| clusters[i].cf > self.config.cluster.cf_threshold)
            .collect();
        let mut survivors = filter_clusters(clusters.clone(), &self.config.cluster);

        let (key_concepts, fallback) = if !survivors.is_empty() {
            let set = select_key_concepts(
                &mut survivors,
                &image_embedding,
                self.models.text,
                self.config.cluster.max_concepts,
            )?;
            for (slot, survivor) in kept.iter().zip(&survivors) {
                clusters[*slot].key_concept = survivor.key_concept.clone();
            }
            (order_concepts(set, &graphs), false)
        } else if !nodes.is_empty() {
            let texts: Vec<&str> = nodes.iter().map(|n| n.text.as_str()).collect();
            let sims = image_similarities(&texts, &image_embedding, self.models.text)?;
            let best = argmax_first(&sims).expect("nodes are non-empty");
            let set = KeyConceptSet {
                concepts: vec![KeyConcept {
                    text: texts[best].to_owned(),
                    image_similarity: sims[best],
                    cluster_members: vec![texts[best].to_owned()],
                }],
                ordering_relations: Vec::new(),
            };
            (set, true)
        } else {
            (KeyConceptSet::empty(), true)
        };
        timings.concepts_ms = ms_since(t);

        Ok((
            Inspection {
                retrieved,
                graphs,
                clusters,
                kept,
                key_concepts,
                fallback,
            },
            image_embedding,
        ))
    }

    pub fn caption(&self, image: &ImageInput) -> Result<CaptionOutput<S>, PipelineError> {
        let start = Instant::now();
        let mut timings = Timings::default();
        let (inspection, image_embedding) = self.inspect_timed(image, &mut timings)?;

        let t = Instant::now();
        let scorer = FusionScorer {
            image: image_embedding,
            text: self.models.text,
            sentence: self.models.sentence,
            memory: MemorySentenceCache::build(&inspection.retrieved, self.models.sentence)?,
            weights: self.config.decode.weights,
        };
        let keywords = inspection.key_concepts.texts();
        let (caption, trace) = run_refinement(&keywords, self.models.lm, &scorer, &self.config.decode)?;
        timings.refine_ms = ms_since(t);
        timings.total_ms = ms_since(start);

        Ok(CaptionOutput {
            caption,
            key_concepts: keywords.iter().map(|k| (*k).to_owned()).collect(),
            retrieved_ids: inspection.retrieved.ids(),
            termination: trace.termination,
            inspection,
            trace,
            timings,
        })
    }
}
