use super::protocol::{self, EndpointCommand, ProtocolClient, Request};
use super::{Codec, PromptId};
use crate::error::{Error, Result};
use crate::types::{array_to_rows, CandidateEmbedding, TokenEmbeddingSeq};

/// Codec backed by an endpoint process speaking the line protocol.
pub struct ExternalCodec {
    client: ProtocolClient,
}

impl ExternalCodec {
    /// Spawns the endpoint. When `expect_d` / `expect_l_max` are given, the
    /// handshake must declare exactly those values.
    pub fn spawn(cmd: &EndpointCommand, expect_d: Option<usize>, expect_l_max: Option<usize>) -> Result<Self> {
        let client = ProtocolClient::spawn(cmd)?;
        let info = client.info();
        if let Some(d) = expect_d {
            if info.d != d {
                return Err(Error::Protocol(format!("endpoint declares d={} but d={d} is configured", info.d)));
            }
        }
        if let Some(l) = expect_l_max {
            if info.l_max != l {
                return Err(Error::Protocol(format!(
                    "endpoint declares l_max={} but l_max={l} is configured",
                    info.l_max
                )));
            }
        }
        Ok(Self { client })
    }

    pub fn from_client(client: ProtocolClient) -> Self {
        Self { client }
    }

    pub fn name(&self) -> &str {
        &self.client.info().name
    }

    pub fn client_mut(&mut self) -> &mut ProtocolClient {
        &mut self.client
    }
}

impl Codec for ExternalCodec {
    fn dim(&self) -> usize {
        self.client.info().d
    }

    fn max_len(&self) -> usize {
        self.client.info().l_max
    }

    fn encode(&mut self, text: &str) -> Result<TokenEmbeddingSeq> {
        if text.is_empty() {
            return Err(Error::EmptySequence);
        }
        let obj = self.client.call(Request::Encode { text: text.to_string() })?;
        let rows = protocol::field_matrix(&obj, "embedding")?;
        let (d, l_max) = (self.dim(), self.max_len());
        if rows.is_empty() {
            return Err(Error::Protocol("endpoint returned an empty embedding".into()));
        }
        if rows.len() > l_max {
            return Err(Error::Shape(format!("endpoint returned {} rows, l_max is {l_max}", rows.len())));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Shape(format!("endpoint returned a row of width {}, expected {d}", bad.len())));
        }
        // token ids are optional on the wire; fall back to row positions
        let ids = match obj.get("token_ids").and_then(|v| v.as_array()) {
            Some(ids) => ids
                .iter()
                .map(|v| v.as_u64().map(|x| x as u32))
                .collect::<Option<Vec<u32>>>()
                .ok_or_else(|| Error::Protocol("token_ids must be non-negative integers".into()))?,
            None => (0..rows.len() as u32).collect(),
        };
        TokenEmbeddingSeq::from_rows(ids, &rows)
    }

    fn decode_repair(&mut self, z: &CandidateEmbedding, prompt: PromptId) -> Result<String> {
        if z.is_empty() {
            return Err(Error::EmptySequence);
        }
        if z.dim() != self.dim() {
            return Err(Error::Shape(format!("candidate width {} but endpoint width {}", z.dim(), self.dim())));
        }
        let obj = self.client.call(Request::Decode {
            embedding: array_to_rows(&z.vectors),
            prompt_id: prompt.as_str().to_string(),
        })?;
        let text = protocol::field_str(&obj, "text")?;
        if text.is_empty() {
            return Err(Error::Protocol("endpoint decoded to an empty string".into()));
        }
        Ok(text)
    }

    fn validate(&mut self, text: &str) -> Result<bool> {
        let obj = self.client.call(Request::Validate { text: text.to_string() })?;
        protocol::field(&obj, "valid")?
            .as_bool()
            .ok_or_else(|| Error::Protocol("field \"valid\" is not a boolean".into()))
    }
}
