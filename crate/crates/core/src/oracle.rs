//! Black-box objectives (lower is better) and the persistent score cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::protocol::{self, EndpointCommand, ProtocolClient, Request};
use crate::error::{Error, Result};
use crate::similarity::{bigrams, jaccard, Bigrams};

pub trait Objective {
    fn evaluate(&mut self, text: &str) -> Result<f64>;
}

impl<O: Objective + ?Sized> Objective for Box<O> {
    fn evaluate(&mut self, text: &str) -> Result<f64> {
        (**self).evaluate(text)
    }
}

/// `-w_match * J(B(text), B(T)) + w_len * ||text| - |T||` over character
/// bigram sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObjective {
    target: String,
    target_bigrams: Bigrams,
    target_len: usize,
    w_match: f64,
    w_len: f64,
}

impl SyntheticObjective {
    pub const DEFAULT_W_MATCH: f64 = 10.0;
    pub const DEFAULT_W_LEN: f64 = 0.01;

    pub fn new(target: &str, w_match: f64, w_len: f64) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::invalid("target", "must be non-empty"));
        }
        if !w_match.is_finite() || !w_len.is_finite() {
            return Err(Error::NonFinite("objective weights"));
        }
        Ok(Self {
            target: target.to_string(),
            target_bigrams: bigrams(target),
            target_len: target.chars().count(),
            w_match,
            w_len,
        })
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn value(&self, text: &str) -> f64 {
        let j = jaccard(&bigrams(text), &self.target_bigrams);
        let len = text.chars().count();
        -self.w_match * j + self.w_len * len.abs_diff(self.target_len) as f64
    }
}

impl Objective for SyntheticObjective {
    fn evaluate(&mut self, text: &str) -> Result<f64> {
        if text.is_empty() {
            return Err(Error::invalid("text", "cannot score an empty string"));
        }
        Ok(self.value(text))
    }
}

/// Objective served by an endpoint's `score` op. A failed call is retried
/// once on a freshly spawned process.
pub struct ExternalObjective {
    command: EndpointCommand,
    client: Option<ProtocolClient>,
}

impl ExternalObjective {
    pub fn spawn(command: EndpointCommand) -> Result<Self> {
        let client = ProtocolClient::spawn(&command)?;
        Ok(Self {
            command,
            client: Some(client),
        })
    }

    fn call(&mut self, text: &str) -> Result<f64> {
        if self.client.is_none() {
            self.client = Some(ProtocolClient::spawn(&self.command)?);
        }
        let client = self.client.as_mut().expect("client spawned above");
        let result = client
            .call(Request::Score { text: text.to_string() })
            .and_then(|obj| protocol::field_f64(&obj, "score"));
        if result.is_err() {
            self.client = None;
        }
        result
    }
}

impl Objective for ExternalObjective {
    fn evaluate(&mut self, text: &str) -> Result<f64> {
        match self.call(text) {
            Ok(v) => Ok(v),
            // the endpoint answered: retrying the same text won't change the verdict
            Err(e @ Error::Endpoint(_)) => Err(e),
            Err(_) => self.call(text),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    text: String,
    score: f64,
}

/// Text to score map, optionally mirrored to an append-only JSON-lines file.
#[derive(Debug, Default)]
pub struct ScoreCache {
    scores: HashMap<String, f64>,
    path: Option<PathBuf>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the cache file at `path`. Existing entries are
    /// loaded; a text listed twice keeps its first score.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut scores = HashMap::new();
        if path.exists() {
            for (no, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine = serde_json::from_str(&line)
                    .map_err(|e| Error::Log(format!("{}:{}: {e}", path.display(), no + 1)))?;
                scores.entry(entry.text).or_insert(entry.score);
            }
        }
        Ok(Self {
            scores,
            path: Some(path),
        })
    }

    pub fn get(&self, text: &str) -> Option<f64> {
        self.scores.get(text).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Records a score. An already cached text keeps its original value,
    /// which is returned.
    pub fn insert(&mut self, text: &str, score: f64) -> Result<f64> {
        if let Some(&old) = self.scores.get(text) {
            return Ok(old);
        }
        if !score.is_finite() {
            return Err(Error::NonFinite("score"));
        }
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&CacheLine {
                text: text.to_string(),
                score,
            })?;
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.scores.insert(text.to_string(), score);
        Ok(score)
    }
}

/// Objective plus cache plus a count of real objective evaluations.
pub struct ObjectiveOracle {
    objective: Box<dyn Objective>,
    cache: ScoreCache,
    calls: u64,
}

impl ObjectiveOracle {
    pub fn new(objective: Box<dyn Objective>, cache: ScoreCache) -> Self {
        Self {
            objective,
            cache,
            calls: 0,
        }
    }

    /// Number of times the underlying objective was evaluated.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    pub fn score(&mut self, text: &str) -> Result<f64> {
        if let Some(v) = self.cache.get(text) {
            return Ok(v);
        }
        self.calls += 1;
        let v = self.objective.evaluate(text)?;
        if !v.is_finite() {
            return Err(Error::NonFinite("objective value"));
        }
        self.cache.insert(text, v)
    }

    /// Scores `texts` in order, consulting the cache first. Each distinct
    /// uncached text costs one evaluation.
    pub fn batch_score<S: AsRef<str>>(&mut self, texts: &[S]) -> Result<Vec<f64>> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                self.score(t.as_ref()).map_err(|e| Error::Scoring {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(target: &str) -> ObjectiveOracle {
        let obj = SyntheticObjective::new(target, 10.0, 0.01).unwrap();
        ObjectiveOracle::new(Box::new(obj), ScoreCache::in_memory())
    }

    #[test]
    fn synthetic_examples() {
        let o = SyntheticObjective::new("ABAB", 10.0, 0.01).unwrap();
        assert_eq!(o.value("ABAB"), -10.0);
        assert_eq!(o.value("CDCD"), 0.0);
        assert!((o.value("AB") - -4.98).abs() < 1e-12);
        assert!(SyntheticObjective::new("", 10.0, 0.01).is_err());
        assert!(SyntheticObjective::new("A", f64::NAN, 0.01).is_err());
    }

    #[test]
    fn call_counting() {
        let mut o = oracle("ABAB");
        let a = o.batch_score(&["AB", "AB", "BA"]).unwrap();
        assert_eq!(a[0].to_bits(), a[1].to_bits());
        assert_eq!(o.calls(), 2);
        o.batch_score(&["AB", "BA"]).unwrap();
        assert_eq!(o.calls(), 2);
        o.batch_score(&["AB", "CC", "DD", "CC"]).unwrap();
        assert_eq!(o.calls(), 4);
    }

    #[test]
    fn batch_errors_carry_index() {
        let mut o = oracle("ABAB");
        match o.batch_score(&["AB", ""]) {
            Err(Error::Scoring { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    struct Noisy(u64);

    impl Objective for Noisy {
        fn evaluate(&mut self, _text: &str) -> Result<f64> {
            self.0 += 1;
            Ok(self.0 as f64 * 0.1)
        }
    }

    #[test]
    fn cache_pins_stochastic_objectives() {
        let mut o = ObjectiveOracle::new(Box::new(Noisy(0)), ScoreCache::in_memory());
        let a = o.score("x").unwrap();
        let b = o.score("x").unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        let entries = [
            ("CCO", -4.123456789012345),
            ("tab\there", 1e-300),
            ("new\nline \"quoted\" \u{1}", -0.1 - 0.2),
            ("ünïcode", 7.0),
        ];
        {
            let mut c = ScoreCache::open(&path).unwrap();
            for (t, s) in entries {
                c.insert(t, s).unwrap();
            }
            assert_eq!(c.insert("CCO", 99.0).unwrap(), -4.123456789012345);
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), entries.len());
        let c = ScoreCache::open(&path).unwrap();
        assert_eq!(c.len(), entries.len());
        for (t, s) in entries {
            assert_eq!(c.get(t).unwrap().to_bits(), s.to_bits());
        }
    }
}
