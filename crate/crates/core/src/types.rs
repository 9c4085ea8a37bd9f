//! Domain types shared by every stage of the optimization loop.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A tokenized string lifted into the latent space: one `d`-dimensional row
/// per token, in sequence order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSeq {
    token_ids: Vec<u32>,
    vectors: Array2<f64>,
}

impl TokenEmbeddingSeq {
    pub fn new(token_ids: Vec<u32>, vectors: Array2<f64>) -> Result<Self> {
        let (n, d) = vectors.dim();
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        if d == 0 {
            return Err(Error::Shape("embedding dimension must be at least 1".into()));
        }
        if token_ids.len() != n {
            return Err(Error::Shape(format!(
                "{} token ids for {} embedding rows",
                token_ids.len(),
                n
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token embedding"));
        }
        Ok(Self { token_ids, vectors })
    }

    /// Builds a sequence from raw rows, e.g. as received over the wire.
    pub fn from_rows(token_ids: Vec<u32>, rows: &[Vec<f64>]) -> Result<Self> {
        let vectors = rows_to_array(rows)?;
        Self::new(token_ids, vectors)
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

pub(crate) fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("embedding rows have unequal widths".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((n, d), flat).map_err(|e| Error::Shape(e.to_string()))
}

pub(crate) fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// An evaluated string. The embedding is filled lazily by the campaign loop,
/// so records restored from a checkpoint may carry none until re-encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedRecord {
    pub text: String,
    pub embedding: Option<TokenEmbeddingSeq>,
    pub score: f64,
}

impl ObservedRecord {
    pub fn new(text: impl Into<String>, embedding: Option<TokenEmbeddingSeq>, score: f64) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::invalid("text", "must be non-empty"));
        }
        if !score.is_finite() {
            return Err(Error::NonFinite("score"));
        }
        Ok(Self {
            text,
            embedding,
            score,
        })
    }
}

/// A perturbed latent point together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEmbedding {
    pub vectors: Array2<f64>,
    pub source_index: usize,
    pub noise_seed: u64,
    pub acquisition: Option<f64>,
    pub prediction: Option<PredictiveDistribution>,
}

impl CandidateEmbedding {
    /// An unperturbed candidate wrapping an existing embedding.
    pub fn from_seq(seq: &TokenEmbeddingSeq, source_index: usize) -> Self {
        Self {
            vectors: seq.vectors().clone(),
            source_index,
            noise_seed: 0,
            acquisition: None,
            prediction: None,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Gaussian predictive distribution in score units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub std: f64,
}

impl PredictiveDistribution {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() {
            return Err(Error::NonFinite("predictive distribution"));
        }
        if std < 0.0 {
            return Err(Error::invalid("std", "must be non-negative"));
        }
        Ok(Self { mean, std })
    }
}
