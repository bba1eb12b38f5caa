//! Unit-norm embedding vectors tagged with the space they live in.
//!
//! Two spaces exist: the cross-modal space shared by image and caption
//! embeddings (used for retrieval, key-concept selection and image-text
//! scoring), and the sentence space used for concept merging and
//! caption-memory similarity. The space is a type parameter, so comparing a
//! vector from one space against the other does not compile.

use std::fmt;
use std::marker::PhantomData;

use thiserror::Error;

use crate::scalar::{dot, l2_norm, Scalar};

/// Absolute tolerance on `| ||v|| - 1 |` for stored vectors.
pub const NORM_TOLERANCE: f64 = 1e-4;

pub trait Space: Copy + Default + fmt::Debug + Send + Sync + 'static {
    const NAME: &'static str;
}

/// Joint image/text space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CrossModal;

/// Sentence-encoder space.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SentenceSpace;

impl Space for CrossModal {
    const NAME: &'static str = "cross_modal";
}

impl Space for SentenceSpace {
    const NAME: &'static str = "sentence";
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding is empty")]
    Empty,
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding contains a non-finite component at {0}")]
    NonFinite(usize),
    #[error("embedding norm {norm} is not within {NORM_TOLERANCE} of 1")]
    NotUnitNorm { norm: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// A unit-norm vector in space `Sp`.
pub struct EmbeddingVector<S, Sp> {
    values: Vec<S>,
    _space: PhantomData<Sp>,
}

impl<S: Scalar, Sp: Space> EmbeddingVector<S, Sp> {
    /// Normalizes `values` to unit length.
    pub fn normalize(mut values: Vec<S>) -> Result<Self, EmbeddingError> {
        check_finite(&values)?;
        let norm = l2_norm(&values);
        if norm == S::zero() {
            return Err(EmbeddingError::ZeroNorm);
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self::wrap(values))
    }

    /// Accepts already-normalized values as-is, checking the norm tolerance.
    pub fn from_unit(values: Vec<S>) -> Result<Self, EmbeddingError> {
        check_finite(&values)?;
        let norm = l2_norm(&values).to_f64_lossy();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbeddingError::NotUnitNorm { norm });
        }
        Ok(Self::wrap(values))
    }

    pub(crate) fn wrap(values: Vec<S>) -> Self {
        Self {
            values,
            _space: PhantomData,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<S> {
        self.values
    }

    /// Cosine similarity; both sides are unit-norm so this is a dot product.
    #[inline]
    pub fn cosine(&self, other: &Self) -> S {
        debug_assert_eq!(self.dim(), other.dim());
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> S {
        l2_norm(&self.values)
    }

    pub fn cast<T: Scalar>(&self) -> EmbeddingVector<T, Sp> {
        EmbeddingVector::wrap(
            self.values
                .iter()
                .map(|v| T::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        )
    }
}

fn check_finite<S: Scalar>(values: &[S]) -> Result<(), EmbeddingError> {
    if values.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(EmbeddingError::NonFinite(i)),
        None => Ok(()),
    }
}

impl<S: Clone, Sp> Clone for EmbeddingVector<S, Sp> {
    fn clone(&self) -> Self {
        Self {
            values: self.values.clone(),
            _space: PhantomData,
        }
    }
}

impl<S: PartialEq, Sp> PartialEq for EmbeddingVector<S, Sp> {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl<S: fmt::Debug, Sp: Space> fmt::Debug for EmbeddingVector<S, Sp> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingVector")
            .field("space", &Sp::NAME)
            .field("dim", &self.values.len())
            .finish()
    }
}
