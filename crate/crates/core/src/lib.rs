//! Memory-augmented zero-shot image captioning.
//!
//! An image is matched against a caption memory, the best captions are
//! parsed into subject-predicate-object triplets, their noun phrases are
//! merged and filtered into a few key concepts, and a constrained language
//! model grows those concepts into a sentence. Every model sits behind the
//! traits in [`gateway`], so the whole pipeline runs on deterministic mocks.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f32` instantiations.

pub mod bleu;
pub mod concept;
pub mod embedding;
pub mod fusion;
pub mod gateway;
pub mod memory;
pub mod pipeline;
pub mod refine;
pub mod scalar;
pub mod text;
pub mod triplet;

pub use concept::{ClusterConfig, ConceptCluster, KeyConcept, KeyConceptSet};
pub use embedding::{CrossModal, EmbeddingError, EmbeddingVector, SentenceSpace, Space};
pub use fusion::{CandidateWord, FusionWeights, ScoreBreakdown};
pub use gateway::{GatewayError, ImageInput, Models};
pub use memory::{MemoryError, MemoryIndex, Retrieved, RetrievedSet};
pub use pipeline::{Captioner, PipelineConfig, PipelineError};
pub use refine::{Action, ActionSequence, DecodeConfig, RefinementTrace, SentenceState, Termination};
pub use scalar::Scalar;
pub use triplet::{ConceptNode, TextGraph, Triplet, TripletStore};

pub type Index32 = MemoryIndex<f32>;
pub type Index64 = MemoryIndex<f64>;
pub type ClipVec = EmbeddingVector<f32, CrossModal>;
pub type SentenceVec = EmbeddingVector<f32, SentenceSpace>;
pub type Weights = FusionWeights<f32>;
pub type Config = PipelineConfig<f32>;
