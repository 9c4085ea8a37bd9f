//! Deterministic per-character codec.
//!
//! Each alphabet character owns one row of a seeded standard-normal table.
//! Encoding is a position-free lookup; decoding maps every row to the
//! character with the nearest table row, ties going to the lower token id.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};

use super::{Codec, PromptId};
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{rows_to_array, CandidateEmbedding, TokenEmbeddingSeq};

#[derive(Debug, Clone, PartialEq)]
pub struct MockCodec {
    alphabet: Vec<char>,
    index: HashMap<char, u32>,
    table: Array2<f64>,
    l_max: usize,
}

impl MockCodec {
    /// Draws the table from a seeded standard normal and checks that every
    /// pair of rows is separated.
    pub fn new(alphabet: &str, d: usize, l_max: usize, seed: u64) -> Result<Self> {
        let n = alphabet.chars().count();
        if d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        let mut r = rng::stream(seed);
        let table = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut r));
        let codec = Self::with_table(alphabet, table, l_max)?;
        if codec.min_row_distance() <= 0.0 {
            return Err(Error::invalid("table", "embedding rows are not pairwise distinct"));
        }
        Ok(codec)
    }

    /// Uses `table` as given. Row separation is not checked, which allows
    /// building deliberately broken codecs.
    pub fn with_table(alphabet: &str, table: Array2<f64>, l_max: usize) -> Result<Self> {
        let chars: Vec<char> = alphabet.chars().collect();
        if chars.is_empty() {
            return Err(Error::invalid("alphabet", "must be non-empty"));
        }
        if l_max == 0 {
            return Err(Error::invalid("l_max", "must be at least 1"));
        }
        let mut index = HashMap::new();
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i as u32).is_some() {
                return Err(Error::invalid("alphabet", format!("duplicate character {c:?}")));
            }
        }
        if table.nrows() != chars.len() || table.ncols() == 0 {
            return Err(Error::Shape(format!(
                "table is {}x{} for an alphabet of {}",
                table.nrows(),
                table.ncols(),
                chars.len()
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codec table"));
        }
        Ok(Self {
            alphabet: chars,
            index,
            table,
            l_max,
        })
    }

    /// [`MockCodec::with_table`] from row vectors.
    pub fn with_rows(alphabet: &str, rows: &[Vec<f64>], l_max: usize) -> Result<Self> {
        Self::with_table(alphabet, rows_to_array(rows)?, l_max)
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    pub fn min_row_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.table.nrows() {
            for j in 0..i {
                best = best.min(sq_dist(self.table.row(i), self.table.row(j)).sqrt());
            }
        }
        best
    }

    pub fn token_id(&self, c: char) -> Option<u32> {
        self.index.get(&c).copied()
    }

    /// Token id whose table row is nearest to `v`; ties resolve to the lowest id.
    pub fn nearest_token(&self, v: ArrayView1<'_, f64>) -> u32 {
        let mut best = (f64::INFINITY, 0u32);
        for (i, row) in self.table.outer_iter().enumerate() {
            let d = sq_dist(row, v);
            if d < best.0 {
                best = (d, i as u32);
            }
        }
        best.1
    }

    fn check_vectors(&self, z: &CandidateEmbedding) -> Result<()> {
        if z.is_empty() {
            return Err(Error::EmptySequence);
        }
        if z.dim() != self.table.ncols() {
            return Err(Error::Shape(format!(
                "candidate width {} but codec width {}",
                z.dim(),
                self.table.ncols()
            )));
        }
        if z.vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("candidate embedding"));
        }
        Ok(())
    }
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codec for MockCodec {
    fn dim(&self) -> usize {
        self.table.ncols()
    }

    fn max_len(&self) -> usize {
        self.l_max
    }

    fn encode(&mut self, text: &str) -> Result<TokenEmbeddingSeq> {
        if text.is_empty() {
            return Err(Error::EmptySequence);
        }
        let ids = text
            .chars()
            .map(|ch| self.token_id(ch).ok_or(Error::UnknownCharacter { ch }))
            .collect::<Result<Vec<u32>>>()?;
        if ids.len() > self.l_max {
            return Err(Error::LengthExceeded {
                n: ids.len(),
                l_max: self.l_max,
            });
        }
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let vectors = self.table.select(ndarray::Axis(0), &rows);
        TokenEmbeddingSeq::new(ids, vectors)
    }

    fn decode_repair(&mut self, z: &CandidateEmbedding, _prompt: PromptId) -> Result<String> {
        self.check_vectors(z)?;
        Ok(z
            .vectors
            .outer_iter()
            .take(self.l_max)
            .map(|row| self.alphabet[self.nearest_token(row) as usize])
            .collect())
    }

    fn validate(&mut self, text: &str) -> Result<bool> {
        let n = text.chars().count();
        Ok(n > 0 && n <= self.l_max && text.chars().all(|c| self.index.contains_key(&c)))
    }
}
