//! The encode/decode boundary between strings and latent embeddings.
//!
//! Two implementations exist: [`MockCodec`], an in-process per-character
//! embedding table with nearest-neighbour decoding, and [`ExternalCodec`],
//! which speaks the line-delimited JSON protocol in [`protocol`] to a child
//! process (for example a language-model adapter).

pub mod external;
pub mod mock;
pub mod prompts;
pub mod protocol;
pub mod server;

use crate::error::Result;
use crate::types::{CandidateEmbedding, TokenEmbeddingSeq};

pub use external::ExternalCodec;
pub use mock::MockCodec;
pub use prompts::PromptId;

pub trait Codec {
    /// Embedding width `d`.
    fn dim(&self) -> usize;
    /// Maximum tokens per string.
    fn max_len(&self) -> usize;
    fn encode(&mut self, text: &str) -> Result<TokenEmbeddingSeq>;
    /// Maps a (possibly off-manifold) latent candidate back to a string.
    fn decode_repair(&mut self, z: &CandidateEmbedding, prompt: PromptId) -> Result<String>;
    fn validate(&mut self, text: &str) -> Result<bool>;
}

impl<C: Codec + ?Sized> Codec for Box<C> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn encode(&mut self, text: &str) -> Result<TokenEmbeddingSeq> {
        (**self).encode(text)
    }
    fn decode_repair(&mut self, z: &CandidateEmbedding, prompt: PromptId) -> Result<String> {
        (**self).decode_repair(z, prompt)
    }
    fn validate(&mut self, text: &str) -> Result<bool> {
        (**self).validate(text)
    }
}
