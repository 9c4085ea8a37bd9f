//! Reads campaign directories back from their logs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::campaign::{self, CampaignStatus, LogBody, LogLine, Outcome, ScoredText};
use crate::error::{Error, Result};
use crate::similarity::{self, WindowSimilarity};
use crate::stats::{self, WilcoxonResult};

pub const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignReport {
    pub dir: PathBuf,
    pub status: Option<CampaignStatus>,
    pub iterations: u64,
    pub initial: Vec<ScoredText>,
    pub generated: Vec<ScoredText>,
    pub top_k: Vec<(usize, Option<f64>)>,
}

impl CampaignReport {
    pub fn best(&self) -> Option<f64> {
        self.best_within(self.generated.len())
    }

    /// Best score among the first `budget` generated molecules.
    pub fn best_within(&self, budget: usize) -> Option<f64> {
        self.generated.iter().take(budget).map(|r| r.score).min_by(f64::total_cmp)
    }

    pub fn similarity(&self, window: usize) -> Result<Vec<WindowSimilarity>> {
        let gen: Vec<String> = self.generated.iter().map(|r| r.text.clone()).collect();
        let init: Vec<String> = self.initial.iter().map(|r| r.text.clone()).collect();
        similarity::similarity_report(&gen, &init, window)
    }
}

/// Parses `dir/log.jsonl`.
pub fn read_campaign(dir: impl AsRef<Path>) -> Result<CampaignReport> {
    let dir = dir.as_ref();
    let path = dir.join(LOG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Log(format!("cannot read {}: {e}", path.display())))?;
    let mut initial = None;
    let mut generated = Vec::new();
    let mut status = None;
    let mut iterations = 0;
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogLine =
            serde_json::from_str(line).map_err(|e| Error::Log(format!("{}:{}: {e}", path.display(), no + 1)))?;
        iterations = iterations.max(rec.iter);
        match rec.body {
            LogBody::Init { records, .. } => initial = Some(records),
            LogBody::Candidate { record, .. } if record.outcome == Outcome::New => {
                let score = record.score.ok_or_else(|| {
                    Error::Log(format!("{}:{}: new molecule without a score", path.display(), no + 1))
                })?;
                generated.push((
                    rec.iter,
                    ScoredText {
                        text: record.text,
                        score,
                    },
                ));
            }
            // iterations logged after the checkpoint a resume starts from are rerun
            LogBody::Resume { .. } => {
                generated.retain(|(it, _)| *it <= rec.iter);
                iterations = rec.iter;
                status = None;
            }
            LogBody::Done { status: s, .. } => status = Some(s),
            _ => {}
        }
    }
    let generated: Vec<ScoredText> = generated.into_iter().map(|(_, g)| g).collect();
    let initial = initial.ok_or_else(|| Error::Log(format!("{}: no init record", path.display())))?;
    let scores: Vec<f64> = generated.iter().map(|r| r.score).collect();
    Ok(CampaignReport {
        dir: dir.to_path_buf(),
        status,
        iterations,
        initial,
        top_k: campaign::top_k_means(&scores),
        generated,
    })
}

/// A directory holding one campaign, or one campaign per subdirectory
/// (keyed by subdirectory name).
pub fn read_campaigns(dir: impl AsRef<Path>) -> Result<BTreeMap<String, CampaignReport>> {
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    if dir.join(LOG_FILE).is_file() {
        out.insert(String::new(), read_campaign(dir)?);
        return Ok(out);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::Log(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.join(LOG_FILE).is_file() {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            out.insert(name, read_campaign(&path)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Log(format!("no campaign logs under {}", dir.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedBest {
    pub name: String,
    /// Generated molecules counted on both sides.
    pub budget: usize,
    pub best_a: f64,
    pub best_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub pairs: Vec<PairedBest>,
    pub wilcoxon: WilcoxonResult,
}

/// Pairs campaigns by name and compares their best scores at equal
/// oracle budgets, testing whether `a` is lower than `b`.
pub fn compare(a: &BTreeMap<String, CampaignReport>, b: &BTreeMap<String, CampaignReport>) -> Result<Comparison> {
    let pairs = paired_best(a, b)?;
    let xa: Vec<f64> = pairs.iter().map(|p| p.best_a).collect();
    let xb: Vec<f64> = pairs.iter().map(|p| p.best_b).collect();
    Ok(Comparison {
        wilcoxon: stats::wilcoxon_one_sided(&xa, &xb)?,
        pairs,
    })
}

pub fn paired_best(a: &BTreeMap<String, CampaignReport>, b: &BTreeMap<String, CampaignReport>) -> Result<Vec<PairedBest>> {
    let mut pairs = Vec::new();
    for (name, ra) in a {
        let Some(rb) = b.get(name) else { continue };
        let budget = ra.generated.len().min(rb.generated.len());
        if let (Some(best_a), Some(best_b)) = (ra.best_within(budget), rb.best_within(budget)) {
            pairs.push(PairedBest {
                name: name.clone(),
                budget,
                best_a,
                best_b,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::Log("no campaigns with generated molecules pair up by name".into()));
    }
    Ok(pairs)
}
