//! Pooling of variable-length embedding sequences into fixed `2d` vectors.
//!
//! The position-aware pooling weights token `t` (1-indexed position `p`) by
//! `p / l_max` in the first half and `(l_max - p) / l_max` in the second half,
//! then averages over the sequence. The two halves therefore always sum to the
//! plain token mean, which is used as a numerical health check.

use itertools::Itertools;
use ndarray::{s, Array1, ArrayView2};

use crate::error::{Error, Result};

/// Largest sequence for which [`permutation_expectation`] enumerates orderings.
pub const MAX_ENUMERATION_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedEmbedding {
    pub values: Array1<f64>,
    pub n: usize,
    pub l_max: usize,
}

impl AggregatedEmbedding {
    pub fn first_half(&self) -> ndarray::ArrayView1<'_, f64> {
        let d = self.values.len() / 2;
        self.values.slice(s![..d])
    }

    pub fn second_half(&self) -> ndarray::ArrayView1<'_, f64> {
        let d = self.values.len() / 2;
        self.values.slice(s![d..])
    }
}

/// Which pooling operator the surrogate uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    PositionAware,
    /// `concat(mean, mean)`; the position-free ablation.
    Mean,
}

impl Pooling {
    pub fn apply(self, vectors: ArrayView2<'_, f64>, l_max: usize) -> Result<AggregatedEmbedding> {
        match self {
            Pooling::PositionAware => aggregate(vectors, l_max),
            Pooling::Mean => aggregate_mean_baseline(vectors, l_max),
        }
    }
}

fn check_len(n: usize, l_max: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    if n > l_max {
        return Err(Error::LengthExceeded { n, l_max });
    }
    Ok(())
}

pub fn aggregate(vectors: ArrayView2<'_, f64>, l_max: usize) -> Result<AggregatedEmbedding> {
    let (n, d) = vectors.dim();
    check_len(n, l_max)?;
    let mut out = Array1::<f64>::zeros(2 * d);
    let lm = l_max as f64;
    for (t, row) in vectors.outer_iter().enumerate() {
        let p = (t + 1) as f64;
        let (w_front, w_back) = (p / lm, (lm - p) / lm);
        for (j, &z) in row.iter().enumerate() {
            out[j] += w_front * z;
            out[d + j] += w_back * z;
        }
    }
    out /= n as f64;
    Ok(AggregatedEmbedding {
        values: out,
        n,
        l_max,
    })
}

pub fn aggregate_mean_baseline(vectors: ArrayView2<'_, f64>, l_max: usize) -> Result<AggregatedEmbedding> {
    let (n, d) = vectors.dim();
    check_len(n, l_max)?;
    let mean = vectors.sum_axis(ndarray::Axis(0)) / n as f64;
    let mut out = Array1::<f64>::zeros(2 * d);
    out.slice_mut(s![..d]).assign(&mean);
    out.slice_mut(s![d..]).assign(&mean);
    Ok(AggregatedEmbedding {
        values: out,
        n,
        l_max,
    })
}

/// Exact average of [`aggregate`] over all orderings of the token vectors.
pub fn permutation_expectation(vectors: ArrayView2<'_, f64>, l_max: usize) -> Result<AggregatedEmbedding> {
    let (n, d) = vectors.dim();
    check_len(n, l_max)?;
    if n > MAX_ENUMERATION_LEN {
        return Err(Error::EnumerationCapacity {
            n,
            max: MAX_ENUMERATION_LEN,
        });
    }
    let mut acc = Array1::<f64>::zeros(2 * d);
    let mut count = 0usize;
    for perm in (0..n).permutations(n) {
        let permuted = vectors.select(ndarray::Axis(0), &perm);
        acc += &aggregate(permuted.view(), l_max)?.values;
        count += 1;
    }
    acc /= count as f64;
    Ok(AggregatedEmbedding {
        values: acc,
        n,
        l_max,
    })
}
