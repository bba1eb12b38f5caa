//! Caption memory: a dense matrix of unit-norm cross-modal embeddings with
//! exact top-N cosine retrieval.

mod format;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use format::{encoded_len, FormatError, MAGIC, VERSION};

use crate::embedding::{CrossModal, EmbeddingError, EmbeddingVector, NORM_TOLERANCE};
use crate::gateway::{GatewayError, TextEmbedder};
use crate::scalar::{dot, l2_norm, Scalar};

/// Embedding dimension of the default CLIP text/image encoder.
pub const DEFAULT_DIMENSION: usize = 512;

/// Rows scanned per parallel task during retrieval.
const SCAN_CHUNK_ROWS: usize = 16_384;

/// Captions embedded per request while building.
const BUILD_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("caption list is empty")]
    EmptyCorpus,
    #[error("memory index is empty")]
    EmptyIndex,
    #[error("retrieval size must be at least 1")]
    ZeroRetrieval,
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedder failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("invalid embedding for row {row}: {source}")]
    InvalidRow {
        row: usize,
        #[source]
        source: EmbeddingError,
    },
}

/// Why a caption did not make it into the index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedCaption {
    /// Position in the input caption list.
    pub input_index: usize,
    pub reason: String,
}

/// One row of the index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryEntry<'a, S> {
    pub id: usize,
    pub caption: &'a str,
    pub embedding: &'a [S],
}

/// Immutable caption memory.
///
/// Row `i` of the embedding matrix belongs to caption `i`; ids are the row
/// numbers. Safe to share between threads once built.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryIndex<S> {
    dimension: usize,
    corpus_tag: String,
    embeddings: Vec<S>,
    captions: Vec<String>,
    rejected: Vec<RejectedCaption>,
}

/// One retrieved caption with its cosine score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieved<S> {
    pub id: usize,
    pub caption: String,
    pub score: S,
}

/// Retrieval result, best first; equal scores are ordered by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedSet<S> {
    pub items: Vec<Retrieved<S>>,
}

impl<S> RetrievedSet<S> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.items.iter().map(|r| r.id).collect()
    }

    pub fn captions(&self) -> Vec<&str> {
        self.items.iter().map(|r| r.caption.as_str()).collect()
    }
}

impl<S> FromIterator<Retrieved<S>> for RetrievedSet<S> {
    fn from_iter<I: IntoIterator<Item = Retrieved<S>>>(iter: I) -> Self {
        Self {
            items: iter.into_iter().collect(),
        }
    }
}

impl<S: Scalar> MemoryIndex<S> {
    /// Builds an index from already-embedded rows.
    ///
    /// Rows are normalized; a zero or non-finite row is an error.
    pub fn from_rows(
        dimension: usize,
        corpus_tag: impl Into<String>,
        rows: Vec<(String, Vec<S>)>,
    ) -> Result<Self, MemoryError> {
        let mut embeddings = Vec::with_capacity(rows.len() * dimension);
        let mut captions = Vec::with_capacity(rows.len());
        for (row, (caption, values)) in rows.into_iter().enumerate() {
            if values.len() != dimension {
                return Err(MemoryError::DimensionMismatch {
                    expected: dimension,
                    found: values.len(),
                });
            }
            let unit = EmbeddingVector::<S, CrossModal>::normalize(values)
                .map_err(|source| MemoryError::InvalidRow { row, source })?;
            embeddings.extend_from_slice(unit.as_slice());
            captions.push(caption);
        }
        Ok(Self {
            dimension,
            corpus_tag: corpus_tag.into(),
            embeddings,
            captions,
            rejected: Vec::new(),
        })
    }

    /// Builds an index from a row-major matrix, normalizing rows in place.
    pub fn from_matrix(
        dimension: usize,
        corpus_tag: impl Into<String>,
        mut embeddings: Vec<S>,
        captions: Vec<String>,
    ) -> Result<Self, MemoryError> {
        if dimension == 0 || embeddings.len() != dimension * captions.len() {
            return Err(MemoryError::DimensionMismatch {
                expected: dimension * captions.len(),
                found: embeddings.len(),
            });
        }
        for (row, values) in embeddings.chunks_exact_mut(dimension).enumerate() {
            let unit = EmbeddingVector::<S, CrossModal>::normalize(values.to_vec())
                .map_err(|source| MemoryError::InvalidRow { row, source })?;
            values.copy_from_slice(unit.as_slice());
        }
        Ok(Self::from_parts(dimension, corpus_tag.into(), embeddings, captions))
    }

    /// Embeds every caption and stores the normalized vectors in input order.
    ///
    /// Blank captions and captions whose embedding has zero norm are skipped
    /// and listed in [`MemoryIndex::rejected`]; ids stay dense.
    pub fn build<E>(captions: &[String], embedder: &E, corpus_tag: impl Into<String>) -> Result<Self, MemoryError>
    where
        E: TextEmbedder<S> + ?Sized,
    {
        if captions.is_empty() {
            return Err(MemoryError::EmptyCorpus);
        }
        let mut dimension: Option<usize> = None;
        let mut embeddings = Vec::new();
        let mut kept = Vec::new();
        let mut rejected = Vec::new();

        let candidates: Vec<usize> = captions
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                if c.trim().is_empty() {
                    rejected.push(RejectedCaption {
                        input_index: i,
                        reason: "blank caption".into(),
                    });
                    None
                } else {
                    Some(i)
                }
            })
            .collect();

        for batch in candidates.chunks(BUILD_BATCH) {
            let texts: Vec<&str> = batch.iter().map(|&i| captions[i].as_str()).collect();
            let raw = embedder.embed_texts_raw(&texts)?;
            if raw.len() != texts.len() {
                return Err(GatewayError::Protocol {
                    message: format!("{} embeddings for {} captions", raw.len(), texts.len()),
                    request: format!("batch starting at caption {}", batch[0]),
                }
                .into());
            }
            for (&input_index, values) in batch.iter().zip(raw) {
                let expected = *dimension.get_or_insert(values.len());
                if values.len() != expected {
                    return Err(MemoryError::DimensionMismatch {
                        expected,
                        found: values.len(),
                    });
                }
                match EmbeddingVector::<S, CrossModal>::normalize(values) {
                    Ok(unit) => {
                        embeddings.extend_from_slice(unit.as_slice());
                        kept.push(captions[input_index].clone());
                    }
                    Err(e) => {
                        log::warn!("rejecting caption {input_index}: {e}");
                        rejected.push(RejectedCaption {
                            input_index,
                            reason: e.to_string(),
                        });
                    }
                }
            }
        }
        rejected.sort_by_key(|r| r.input_index);
        Ok(Self {
            dimension: dimension.unwrap_or(0),
            corpus_tag: corpus_tag.into(),
            embeddings,
            captions: kept,
            rejected,
        })
    }

    pub(crate) fn from_parts(dimension: usize, corpus_tag: String, embeddings: Vec<S>, captions: Vec<String>) -> Self {
        debug_assert_eq!(embeddings.len(), dimension * captions.len());
        Self {
            dimension,
            corpus_tag,
            embeddings,
            captions,
            rejected: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn corpus_tag(&self) -> &str {
        &self.corpus_tag
    }

    /// Captions dropped during [`MemoryIndex::build`]. Not persisted.
    pub fn rejected(&self) -> &[RejectedCaption] {
        &self.rejected
    }

    pub fn captions(&self) -> &[String] {
        &self.captions
    }

    /// Row-major embedding matrix.
    pub fn embedding_matrix(&self) -> &[S] {
        &self.embeddings
    }

    pub fn entry(&self, id: usize) -> Option<MemoryEntry<'_, S>> {
        let caption = self.captions.get(id)?;
        let start = id * self.dimension;
        Some(MemoryEntry {
            id,
            caption,
            embedding: &self.embeddings[start..start + self.dimension],
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = MemoryEntry<'_, S>> + '_ {
        (0..self.len()).map(move |id| self.entry(id).expect("id in range"))
    }

    /// Checks every row against the unit-norm tolerance.
    pub fn verify_norms(&self) -> Result<(), MemoryError> {
        for entry in self.entries() {
            let norm = l2_norm(entry.embedding).to_f64_lossy();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(MemoryError::InvalidRow {
                    row: entry.id,
                    source: EmbeddingError::NotUnitNorm { norm },
                });
            }
        }
        Ok(())
    }

    /// Exact top-`n` by cosine similarity.
    ///
    /// Scans fixed-size row chunks in parallel, keeps a bounded heap per
    /// chunk and merges them; the result equals a full sort of all scores
    /// with ties broken by ascending id.
    pub fn retrieve_top_n(
        &self,
        query: &EmbeddingVector<S, CrossModal>,
        n: usize,
    ) -> Result<RetrievedSet<S>, MemoryError> {
        if n == 0 {
            return Err(MemoryError::ZeroRetrieval);
        }
        if self.is_empty() {
            return Err(MemoryError::EmptyIndex);
        }
        if query.dim() != self.dimension {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dimension,
                found: query.dim(),
            });
        }
        let k = n.min(self.len());
        let q = query.as_slice();
        let chunk_len = SCAN_CHUNK_ROWS * self.dimension;
        let merged = self
            .embeddings
            .par_chunks(chunk_len)
            .enumerate()
            .map(|(chunk, rows)| {
                let base = chunk * SCAN_CHUNK_ROWS;
                let mut heap = TopK::new(k);
                for (offset, row) in rows.chunks_exact(self.dimension).enumerate() {
                    heap.offer(Hit {
                        score: dot(row, q),
                        id: base + offset,
                    });
                }
                heap
            })
            .reduce(|| TopK::new(k), TopK::merge);
        Ok(merged
            .into_sorted()
            .into_iter()
            .map(|hit| Retrieved {
                id: hit.id,
                caption: self.captions[hit.id].clone(),
                score: hit.score,
            })
            .collect())
    }

    /// Converts the stored embeddings to another scalar type.
    pub fn cast<T: Scalar>(&self) -> MemoryIndex<T> {
        MemoryIndex {
            dimension: self.dimension,
            corpus_tag: self.corpus_tag.clone(),
            embeddings: self
                .embeddings
                .iter()
                .map(|v| T::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
            captions: self.captions.clone(),
            rejected: self.rejected.clone(),
        }
    }
}

/// Candidate hit; `Ord` puts the better hit first (higher score, then
/// lower id). Scores are finite because rows and queries are validated.
#[derive(Debug, Clone, Copy)]
struct Hit<S> {
    score: S,
    id: usize,
}

impl<S: Scalar> Hit<S> {
    fn rank(&self, other: &Self) -> Ordering {
        other
            .score
            .partial_cmp(&self.score)
            .unwrap_or(Ordering::Equal)
            .then(self.id.cmp(&other.id))
    }
}

impl<S: Scalar> PartialEq for Hit<S> {
    fn eq(&self, other: &Self) -> bool {
        self.rank(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Hit<S> {}

impl<S: Scalar> PartialOrd for Hit<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Hit<S> {
    /// "Less" means better, so a max-heap keeps the worst hit on top.
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank(other)
    }
}

struct TopK<S: Scalar> {
    k: usize,
    heap: BinaryHeap<Hit<S>>,
}

impl<S: Scalar> TopK<S> {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, hit: Hit<S>) {
        if self.heap.len() < self.k {
            self.heap.push(hit);
        } else if let Some(worst) = self.heap.peek() {
            if hit < *worst {
                self.heap.pop();
                self.heap.push(hit);
            }
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for hit in other.heap {
            self.offer(hit);
        }
        self
    }

    fn into_sorted(self) -> Vec<Hit<S>> {
        self.heap.into_sorted_vec()
    }
}
