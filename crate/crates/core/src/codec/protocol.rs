//! Line-delimited JSON protocol spoken with external endpoints over a child
//! process's standard streams.
//!
//! Every request is one compact JSON object on one line carrying a numeric
//! `id` and an `op`; every response echoes the `id` and carries `ok`. The
//! handshake uses id 0, later requests count up from 1.
//!
//! ```text
//! {"id":0,"op":"hello"}                      -> {"id":0,"ok":true,"name":..,"d":..,"l_max":..}
//! {"id":n,"op":"encode","text":..}           -> {"id":n,"ok":true,"embedding":[[..],..]}
//! {"id":n,"op":"decode","embedding":..,"prompt_id":..} -> {"id":n,"ok":true,"text":..}
//! {"id":n,"op":"validate","text":..}         -> {"id":n,"ok":true,"valid":..}
//! {"id":n,"op":"score","text":..}            -> {"id":n,"ok":true,"score":..}
//! failure                                    -> {"id":n,"ok":false,"error":..}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello,
    Encode { text: String },
    Decode { embedding: Vec<Vec<f64>>, prompt_id: String },
    Validate { text: String },
    Score { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub id: u64,
    #[serde(flatten)]
    pub request: Request,
}

impl Envelope {
    /// Serializes to a single line without the trailing newline.
    pub fn to_line(&self) -> Result<String> {
        if let Request::Decode { embedding, .. } = &self.request {
            if embedding.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("decode request embedding"));
            }
        }
        Ok(serde_json::to_string(self)?)
    }
}

/// Successful response payloads, serialized after `"id"` and `"ok":true`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Reply {
    Hello { name: String, d: usize, l_max: usize },
    Embedding { embedding: Vec<Vec<f64>> },
    Text { text: String },
    Valid { valid: bool },
    Score { score: f64 },
}

#[derive(Serialize)]
struct OkLine<'a> {
    id: u64,
    ok: bool,
    #[serde(flatten)]
    reply: &'a Reply,
}

#[derive(Serialize)]
struct ErrLine<'a> {
    id: u64,
    ok: bool,
    error: &'a str,
}

pub fn ok_line(id: u64, reply: &Reply) -> Result<String> {
    Ok(serde_json::to_string(&OkLine { id, ok: true, reply })?)
}

pub fn error_line(id: u64, error: &str) -> String {
    serde_json::to_string(&ErrLine { id, ok: false, error }).expect("string fields always serialize")
}

/// Handshake information declared by an endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelloInfo {
    pub name: String,
    pub d: usize,
    pub l_max: usize,
}

/// Parses a response line and checks that it answers request `id`.
pub fn parse_response(line: &str, id: u64) -> Result<Map<String, Value>> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed response {line:?}: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(Error::Protocol(format!("response is not an object: {line:?}")));
    };
    match obj.get("id").and_then(Value::as_u64) {
        Some(got) if got == id => {}
        Some(got) => return Err(Error::Protocol(format!("expected response id {id}, got {got}"))),
        None => return Err(Error::Protocol("response without numeric id".into())),
    }
    match obj.get("ok").and_then(Value::as_bool) {
        Some(true) => Ok(obj),
        Some(false) => {
            let msg = obj.get("error").and_then(Value::as_str).unwrap_or("unspecified error");
            Err(Error::Endpoint(msg.to_string()))
        }
        None => Err(Error::Protocol("response without boolean ok".into())),
    }
}

pub fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::Protocol(format!("response missing field {name:?}")))
}

pub fn field_str(obj: &Map<String, Value>, name: &str) -> Result<String> {
    field(obj, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Protocol(format!("field {name:?} is not a string")))
}

pub fn field_usize(obj: &Map<String, Value>, name: &str) -> Result<usize> {
    field(obj, name)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::Protocol(format!("field {name:?} is not a non-negative integer")))
}

pub fn field_f64(obj: &Map<String, Value>, name: &str) -> Result<f64> {
    let v = field(obj, name)?
        .as_f64()
        .ok_or_else(|| Error::Protocol(format!("field {name:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Protocol(format!("field {name:?} is not finite")));
    }
    Ok(v)
}

pub fn field_matrix(obj: &Map<String, Value>, name: &str) -> Result<Vec<Vec<f64>>> {
    let rows = field(obj, name)?
        .as_array()
        .ok_or_else(|| Error::Protocol(format!("field {name:?} is not an array")))?;
    rows.iter()
        .map(|row| {
            row.as_array()
                .ok_or_else(|| Error::Protocol(format!("{name:?} row is not an array")))?
                .iter()
                .map(|v| {
                    v.as_f64()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Protocol(format!("{name:?} holds a non-numeric entry")))
                })
                .collect()
        })
        .collect()
}

/// How to launch an endpoint process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointCommand {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    60_000
}

/// One child process; requests are strictly serialized.
pub struct ProtocolClient {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    info: HelloInfo,
}

impl ProtocolClient {
    /// Spawns the endpoint and performs the handshake.
    pub fn spawn(cmd: &EndpointCommand) -> Result<Self> {
        let mut child = Command::new(&cmd.command)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("failed to spawn {:?}: {e}", cmd.command)))?;
        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| Error::Protocol("child has no stdout".into()))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut client = Self {
            child,
            stdin,
            lines: rx,
            next_id: 0,
            timeout: Duration::from_millis(cmd.timeout_ms),
            info: HelloInfo {
                name: String::new(),
                d: 0,
                l_max: 0,
            },
        };
        let obj = client.call(Request::Hello)?;
        client.info = HelloInfo {
            name: field_str(&obj, "name")?,
            d: field_usize(&obj, "d")?,
            l_max: field_usize(&obj, "l_max")?,
        };
        if client.info.d == 0 || client.info.l_max == 0 {
            return Err(Error::Protocol("endpoint declared d or l_max of zero".into()));
        }
        Ok(client)
    }

    pub fn info(&self) -> &HelloInfo {
        &self.info
    }

    /// Sends one request and waits for its response.
    pub fn call(&mut self, request: Request) -> Result<Map<String, Value>> {
        let id = self.next_id;
        self.next_id += 1;
        let line = Envelope { id, request }.to_line()?;
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Protocol("endpoint stdin closed".into()))?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Protocol(format!("write to endpoint failed: {e}")))?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(resp)) => parse_response(&resp, id),
            Ok(Err(e)) => Err(Error::Protocol(format!("read from endpoint failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("endpoint closed its output".into())),
        }
    }
}

impl Drop for ProtocolClient {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
