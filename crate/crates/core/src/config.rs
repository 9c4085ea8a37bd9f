//! Campaign configuration, read from TOML. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::Pooling;
use crate::codec::protocol::EndpointCommand;
use crate::codec::PromptId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Candidates drawn uniformly from the explore set.
    NoGuide,
    /// Token-mean pooling instead of position-aware aggregation.
    NoPosition,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoGuide => "no-guide",
            Ablation::NoPosition => "no-position",
        }
    }

    pub fn pooling(self) -> Pooling {
        match self {
            Ablation::NoPosition => Pooling::Mean,
            _ => Pooling::PositionAware,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Ablation::None, Ablation::NoGuide, Ablation::NoPosition]
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}; expected none, no-guide or no-position")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CodecConfig {
    Mock { alphabet: String, table_seed: u64 },
    External(EndpointCommand),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OracleConfig {
    Synthetic {
        target: String,
        #[serde(default = "default_w_match")]
        w_match: f64,
        #[serde(default = "default_w_len")]
        w_len: f64,
    },
    External(EndpointCommand),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialConfig {
    /// Uniform random strings over the mock codec alphabet.
    Random { count: usize, min_len: usize, max_len: usize },
    /// One text per line; relative paths resolve against the config file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    pub d: usize,
    #[serde(default = "default_l_max")]
    pub l_max: usize,
    #[serde(default = "default_lambda")]
    pub lambda_perturb: f64,
    /// Perturbations per record; `None` picks `clamp(ceil(2000 / |D|), 5, 200)`.
    #[serde(default)]
    pub samples_per_record: Option<usize>,
    #[serde(default = "default_n_cand")]
    pub n_cand: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Target number of new molecules.
    pub budget: usize,
    /// Layer widths of the feature network; `None` means `2d-256-256-256-20`.
    #[serde(default)]
    pub mlp_dims: Option<Vec<usize>>,
    #[serde(default = "default_mlp_lr")]
    pub mlp_lr: f64,
    #[serde(default = "default_epochs")]
    pub mlp_epochs: usize,
    #[serde(default = "default_gp_lr")]
    pub gp_lr: f64,
    #[serde(default = "default_epochs")]
    pub gp_epochs: usize,
    #[serde(default = "default_jitter")]
    pub gp_jitter: f64,
    /// Iteration cap; `None` means `ceil(10 * budget / n_cand)`.
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub prompt_id: PromptId,
    /// When set, only the best `ceil(fraction * |D|)` records are perturbed.
    #[serde(default)]
    pub elite_fraction: Option<f64>,
    pub codec: CodecConfig,
    pub oracle: OracleConfig,
    pub initial: InitialConfig,
}

fn default_l_max() -> usize {
    80
}
fn default_lambda() -> f64 {
    0.4
}
fn default_n_cand() -> usize {
    5
}
fn default_delta() -> f64 {
    0.1
}
fn default_mlp_lr() -> f64 {
    1e-3
}
fn default_gp_lr() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    100
}
fn default_jitter() -> f64 {
    1e-6
}
fn default_w_match() -> f64 {
    10.0
}
fn default_w_len() -> f64 {
    0.01
}

impl CampaignConfig {
    /// Parses and validates TOML text. Error messages name the offending
    /// field and, when it can be located, its line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate().map_err(|e| match e {
            Error::InvalidArgument { name, reason } => match find_key_line(text, name) {
                Some(line) => Error::Config(format!("field `{name}` (line {line}): {reason}")),
                None => Error::Config(format!("field `{name}`: {reason}")),
            },
            other => other,
        })?;
        Ok(cfg)
    }

    /// Reads a config file; a relative initial-library path is resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let InitialConfig::File { path: p } = &mut cfg.initial {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        if self.l_max == 0 {
            return Err(Error::invalid("l_max", "must be at least 1"));
        }
        if !(self.lambda_perturb.is_finite() && self.lambda_perturb >= 0.0) {
            return Err(Error::invalid("lambda_perturb", format!("must be finite and >= 0, got {}", self.lambda_perturb)));
        }
        if self.samples_per_record == Some(0) {
            return Err(Error::invalid("samples_per_record", "must be at least 1"));
        }
        if self.n_cand == 0 {
            return Err(Error::invalid("n_cand", "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if self.budget == 0 {
            return Err(Error::invalid("budget", "must be at least 1"));
        }
        if let Some(dims) = &self.mlp_dims {
            if dims.len() < 2 || dims.contains(&0) {
                return Err(Error::invalid("mlp_dims", "needs at least two positive widths"));
            }
            if dims[0] != 2 * self.d {
                return Err(Error::invalid("mlp_dims", format!("first width must be 2d = {}, got {}", 2 * self.d, dims[0])));
            }
        }
        for (name, v) in [("mlp_lr", self.mlp_lr), ("gp_lr", self.gp_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.gp_jitter.is_finite() && self.gp_jitter > 0.0) {
            return Err(Error::invalid("gp_jitter", format!("must be finite and > 0, got {}", self.gp_jitter)));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::invalid("max_iterations", "must be at least 1"));
        }
        if let Some(f) = self.elite_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid("elite_fraction", format!("must lie in (0, 1], got {f}")));
            }
        }
        if let CodecConfig::Mock { alphabet, .. } = &self.codec {
            if alphabet.is_empty() {
                return Err(Error::invalid("alphabet", "must be non-empty"));
            }
        }
        if let OracleConfig::Synthetic { target, w_match, w_len } = &self.oracle {
            if target.is_empty() {
                return Err(Error::invalid("target", "must be non-empty"));
            }
            if !w_match.is_finite() || !w_len.is_finite() {
                return Err(Error::invalid("w_match", "weights must be finite"));
            }
        }
        match &self.initial {
            InitialConfig::Random { count, min_len, max_len } => {
                if *count < 2 {
                    return Err(Error::invalid("count", "the initial library needs at least 2 strings"));
                }
                if *min_len == 0 || min_len > max_len || *max_len > self.l_max {
                    return Err(Error::invalid("min_len", format!("need 1 <= min_len <= max_len <= l_max ({})", self.l_max)));
                }
                if !matches!(self.codec, CodecConfig::Mock { .. }) {
                    return Err(Error::invalid("initial", "random initial strings need a mock codec; use kind = \"file\""));
                }
            }
            InitialConfig::File { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::invalid("path", "must be non-empty"));
                }
            }
        }
        Ok(())
    }

    pub fn mlp_dims(&self) -> Vec<usize> {
        self.mlp_dims
            .clone()
            .unwrap_or_else(|| vec![2 * self.d, 256, 256, 256, 20])
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
            .unwrap_or_else(|| (10 * self.budget).div_ceil(self.n_cand).max(1))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config always serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn find_key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
d = 8
budget = 10

[codec]
kind = "mock"
alphabet = "ABCD"
table_seed = 1

[oracle]
kind = "synthetic"
target = "ABCD"

[initial]
kind = "random"
count = 5
min_len = 2
max_len = 6
"#;

    #[test]
    fn defaults() {
        let c = CampaignConfig::from_toml(BASE).unwrap();
        assert_eq!(c.l_max, 80);
        assert_eq!(c.lambda_perturb, 0.4);
        assert_eq!(c.n_cand, 5);
        assert_eq!(c.delta, 0.1);
        assert_eq!(c.mlp_dims(), vec![16, 256, 256, 256, 20]);
        assert_eq!((c.mlp_lr, c.gp_lr, c.mlp_epochs, c.gp_epochs), (1e-3, 0.1, 100, 100));
        assert_eq!(c.max_iterations(), 20);
        assert_eq!(c.ablation, Ablation::None);
        assert_eq!(c.prompt_id, PromptId::Repair);
        assert_eq!(
            c.oracle,
            OracleConfig::Synthetic {
                target: "ABCD".into(),
                w_match: 10.0,
                w_len: 0.01
            }
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = BASE.replace("budget = 10", "budget = 10\nmlp_lrr = 0.1");
        let err = CampaignConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("mlp_lrr"), "{err}");
        let text = BASE.replace("table_seed = 1", "table_seed = 1\ncolour = 2");
        assert!(CampaignConfig::from_toml(&text).is_err());
    }

    #[test]
    fn invalid_values_name_field_and_line() {
        let text = BASE.replace("budget = 10", "budget = 10\nlambda_perturb = -1");
        let err = CampaignConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("lambda_perturb"), "{err}");
        assert!(err.contains("line 5"), "{err}");
        let text = BASE.replace("d = 8", "d = 8\nmlp_dims = [8, 4]");
        let err = CampaignConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("mlp_dims"), "{err}");
    }

    #[test]
    fn round_trip_and_hash() {
        let c = CampaignConfig::from_toml(BASE).unwrap();
        let back = CampaignConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut other = c.clone();
        other.seed = 4;
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn ablation_names() {
        for a in ["none", "no-guide", "no-position"] {
            assert_eq!(a.parse::<Ablation>().unwrap().as_str(), a);
        }
        assert!("no-pos".parse::<Ablation>().is_err());
        let text = BASE.replace("budget = 10", "budget = 10\nablation = \"no-guide\"");
        assert_eq!(CampaignConfig::from_toml(&text).unwrap().ablation, Ablation::NoGuide);
    }
}
