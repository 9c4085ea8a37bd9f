//! Endpoint side of the line protocol: a generic request loop, the mock
//! service used by the `mock-endpoint` binary, and transcript replay.

use std::io::{self, BufRead, Write};

use serde_json::Value;

use super::mock::MockCodec;
use super::protocol::{error_line, ok_line, Envelope, Reply, Request};
use super::{Codec, PromptId};
use crate::error::{Error, Result};
use crate::oracle::{Objective, SyntheticObjective};
use crate::types::{array_to_rows, rows_to_array, CandidateEmbedding};

pub trait Service {
    fn handle(&mut self, request: &Request) -> Result<Reply>;
}

/// Answers one request line. Never fails: malformed input becomes an
/// `ok:false` line.
pub fn respond(service: &mut dyn Service, line: &str) -> String {
    match serde_json::from_str::<Envelope>(line) {
        Ok(env) => match service.handle(&env.request).and_then(|r| ok_line(env.id, &r)) {
            Ok(out) => out,
            Err(e) => error_line(env.id, &e.to_string()),
        },
        Err(e) => {
            let id = serde_json::from_str::<Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(Value::as_u64))
                .unwrap_or(0);
            error_line(id, &format!("bad request: {e}"))
        }
    }
}

/// Serves until end of input.
pub fn serve(service: &mut dyn Service, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let out = respond(service, &line);
        output.write_all(out.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// Mock codec plus synthetic objective behind the protocol.
pub struct MockService {
    pub codec: MockCodec,
    pub objective: Option<SyntheticObjective>,
}

impl Service for MockService {
    fn handle(&mut self, request: &Request) -> Result<Reply> {
        match request {
            Request::Hello => Ok(Reply::Hello {
                name: "mock".into(),
                d: self.codec.dim(),
                l_max: self.codec.max_len(),
            }),
            Request::Encode { text } => {
                let seq = self.codec.encode(text)?;
                Ok(Reply::Embedding {
                    embedding: array_to_rows(seq.vectors()),
                })
            }
            Request::Decode { embedding, prompt_id } => {
                let prompt: PromptId = prompt_id.parse()?;
                let cand = CandidateEmbedding {
                    vectors: rows_to_array(embedding)?,
                    source_index: 0,
                    noise_seed: 0,
                    acquisition: None,
                    prediction: None,
                };
                Ok(Reply::Text {
                    text: self.codec.decode_repair(&cand, prompt)?,
                })
            }
            Request::Validate { text } => Ok(Reply::Valid {
                valid: self.codec.validate(text)?,
            }),
            Request::Score { text } => {
                if !self.codec.validate(text)? {
                    return Err(Error::invalid("text", format!("{text:?} is not valid for this codec")));
                }
                let obj = self
                    .objective
                    .as_mut()
                    .ok_or_else(|| Error::Protocol("this endpoint has no objective".into()))?;
                Ok(Reply::Score {
                    score: obj.evaluate(text)?,
                })
            }
        }
    }
}

/// A recorded exchange: request line followed by its response line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub request: String,
    pub response: String,
}

/// Parses a transcript where request lines start with `> ` and response
/// lines with `< `. Other lines are ignored.
pub fn parse_transcript(text: &str) -> Result<Vec<Exchange>> {
    let mut out = Vec::new();
    let mut pending: Option<String> = None;
    for (no, line) in text.lines().enumerate() {
        if let Some(req) = line.strip_prefix("> ") {
            if pending.replace(req.to_string()).is_some() {
                return Err(Error::Protocol(format!("transcript line {}: two requests in a row", no + 1)));
            }
        } else if let Some(resp) = line.strip_prefix("< ") {
            let request = pending
                .take()
                .ok_or_else(|| Error::Protocol(format!("transcript line {}: response without request", no + 1)))?;
            out.push(Exchange {
                request,
                response: resp.to_string(),
            });
        }
    }
    if pending.is_some() {
        return Err(Error::Protocol("transcript ends with an unanswered request".into()));
    }
    Ok(out)
}

/// Replays `exchanges`, requiring every incoming line to match the recorded
/// request byte for byte. Returns an error on the first mismatch.
pub fn serve_replay(exchanges: &[Exchange], input: impl BufRead, mut output: impl Write) -> Result<()> {
    let mut lines = input.lines();
    for (i, ex) in exchanges.iter().enumerate() {
        let got = match lines.next() {
            Some(l) => l?,
            None => return Err(Error::Protocol(format!("input ended before exchange {i}"))),
        };
        if got != ex.request {
            let id = serde_json::from_str::<Value>(&got)
                .ok()
                .and_then(|v| v.get("id").and_then(Value::as_u64))
                .unwrap_or(0);
            writeln!(output, "{}", error_line(id, "request does not match transcript"))?;
            return Err(Error::Protocol(format!(
                "exchange {i}: expected {:?}, got {got:?}",
                ex.request
            )));
        }
        writeln!(output, "{}", ex.response)?;
        output.flush()?;
    }
    Ok(())
}
