//! The optimization loop: train the surrogate on everything observed,
//! perturb observed embeddings, pick candidates, decode, filter, score, and
//! grow the dataset. Each iteration either commits fully or leaves the state
//! untouched.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Codec, ExternalCodec, MockCodec};
use crate::config::{Ablation, CampaignConfig, CodecConfig, InitialConfig, OracleConfig};
use crate::dataset::ObservedDataset;
use crate::error::{Error, Result};
use crate::explorer::{self, ExploreSet};
use crate::oracle::{ExternalObjective, ObjectiveOracle, ScoreCache, SyntheticObjective};
use crate::rng::{self, Purpose};
use crate::surrogate::{SurrogateConfig, SurrogateModel};
use crate::types::{CandidateEmbedding, ObservedRecord};

/// Top-K cut-offs reported in summaries.
pub const TOP_KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CampaignStatus {
    /// The budget of new molecules was reached.
    Complete,
    /// The iteration cap tripped first.
    Partial,
    /// Stopped from outside; resumable.
    Interrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    New,
    Duplicate,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub text: String,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acquisition: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pred_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pred_std: Option<f64>,
    pub source_index: usize,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSummary {
    pub final_mse: f64,
    pub final_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: u64,
    pub explore_size: usize,
    pub surrogate: Option<SurrogateSummary>,
    pub candidates: Vec<CandidateRecord>,
    pub new_molecules: usize,
    pub oracle_calls: u64,
    /// Best score over the whole observed dataset after this iteration.
    pub best_so_far: f64,
    /// Best score among generated molecules so far.
    pub best_generated: Option<f64>,
    pub wall_ms: u64,
}

/// One line of the campaign log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub iter: u64,
    #[serde(flatten)]
    pub body: LogBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "lowercase")]
pub enum LogBody {
    Init {
        config_hash: String,
        seed: u64,
        ablation: Ablation,
        records: Vec<ScoredText>,
    },
    Resume {
        config_hash: String,
    },
    Surrogate {
        final_mse: f64,
        final_nll: f64,
    },
    Candidate {
        slot: usize,
        #[serde(flatten)]
        record: CandidateRecord,
    },
    Iteration {
        explore_size: usize,
        new_molecules: usize,
        oracle_calls: u64,
        best_so_far: f64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        best_generated: Option<f64>,
        wall_ms: u64,
    },
    Done {
        status: CampaignStatus,
        iterations: u64,
        generated: usize,
    },
}

impl IterationLog {
    pub fn log_lines(&self) -> Vec<LogLine> {
        let mut out = Vec::with_capacity(self.candidates.len() + 2);
        if let Some(s) = self.surrogate {
            out.push(LogLine {
                iter: self.iter,
                body: LogBody::Surrogate {
                    final_mse: s.final_mse,
                    final_nll: s.final_nll,
                },
            });
        }
        for (slot, c) in self.candidates.iter().enumerate() {
            out.push(LogLine {
                iter: self.iter,
                body: LogBody::Candidate {
                    slot,
                    record: c.clone(),
                },
            });
        }
        out.push(LogLine {
            iter: self.iter,
            body: LogBody::Iteration {
                explore_size: self.explore_size,
                new_molecules: self.new_molecules,
                oracle_calls: self.oracle_calls,
                best_so_far: self.best_so_far,
                best_generated: self.best_generated,
                wall_ms: self.wall_ms,
            },
        });
        out
    }
}

/// Everything needed to continue a campaign. The observed dataset is always
/// the initial library followed by the generated molecules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub seed: u64,
    pub iteration: u64,
    pub status: Option<CampaignStatus>,
    pub initial: Vec<ScoredText>,
    pub generated: Vec<ScoredText>,
    pub logs: Vec<IterationLog>,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Log(format!("{}: {e}", path.display())))
    }

    /// Writes through a temporary file and a rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignState {
    config: CampaignConfig,
    dataset: ObservedDataset,
    initial: Vec<ScoredText>,
    generated: Vec<ScoredText>,
    iteration: u64,
    logs: Vec<IterationLog>,
}

impl CampaignState {
    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn dataset(&self) -> &ObservedDataset {
        &self.dataset
    }

    pub fn initial(&self) -> &[ScoredText] {
        &self.initial
    }

    /// Generated molecules in discovery order.
    pub fn generated(&self) -> &[ScoredText] {
        &self.generated
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn logs(&self) -> &[IterationLog] {
        &self.logs
    }

    pub fn checkpoint(&self, status: Option<CampaignStatus>) -> Checkpoint {
        Checkpoint {
            config_hash: self.config.hash(),
            seed: self.config.seed,
            iteration: self.iteration,
            status,
            initial: self.initial.clone(),
            generated: self.generated.clone(),
            logs: self.logs.clone(),
        }
    }

    /// Serialized form used to check that failed iterations change nothing.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.checkpoint(None)).expect("state always serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub status: CampaignStatus,
    pub iterations: u64,
    pub generated: usize,
    pub oracle_calls: u64,
    /// `(k, mean of the k best generated scores)`; `None` when fewer than k exist.
    pub top_k: Vec<(usize, Option<f64>)>,
}

/// Means of the 1, 5, 10 and 20 lowest scores.
pub fn top_k_means(scores: &[f64]) -> Vec<(usize, Option<f64>)> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    TOP_KS
        .iter()
        .map(|&k| (k, (sorted.len() >= k).then(|| sorted[..k].iter().sum::<f64>() / k as f64)))
        .collect()
}

/// Ranked `(text, score)` rows, best first, ties by discovery order.
pub fn ranked(generated: &[ScoredText]) -> Vec<&ScoredText> {
    let mut rows: Vec<&ScoredText> = generated.iter().collect();
    rows.sort_by(|a, b| a.score.total_cmp(&b.score));
    rows
}

pub fn write_summary_csv(generated: &[ScoredText], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "text", "score"])?;
    for (i, row) in ranked(generated).into_iter().enumerate() {
        w.write_record([(i + 1).to_string(), row.text.clone(), row.score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// File layout of a campaign directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("log.jsonl")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.jsonl")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
}

pub fn build_codec(cfg: &CampaignConfig) -> Result<Box<dyn Codec>> {
    Ok(match &cfg.codec {
        CodecConfig::Mock { alphabet, table_seed } => Box::new(MockCodec::new(alphabet, cfg.d, cfg.l_max, *table_seed)?),
        CodecConfig::External(cmd) => Box::new(ExternalCodec::spawn(cmd, Some(cfg.d), Some(cfg.l_max))?),
    })
}

pub fn build_oracle(cfg: &CampaignConfig, cache: ScoreCache) -> Result<ObjectiveOracle> {
    Ok(match &cfg.oracle {
        OracleConfig::Synthetic { target, w_match, w_len } => {
            ObjectiveOracle::new(Box::new(SyntheticObjective::new(target, *w_match, *w_len)?), cache)
        }
        OracleConfig::External(cmd) => ObjectiveOracle::new(Box::new(ExternalObjective::spawn(cmd.clone())?), cache),
    })
}

/// The starting library described by `cfg.initial`, deduplicated, in order.
pub fn initial_texts(cfg: &CampaignConfig) -> Result<Vec<String>> {
    match &cfg.initial {
        InitialConfig::Random { count, min_len, max_len } => {
            let CodecConfig::Mock { alphabet, .. } = &cfg.codec else {
                return Err(Error::Config("random initial strings need a mock codec".into()));
            };
            let chars: Vec<char> = alphabet.chars().collect();
            let mut r = rng::stream(rng::purpose_seed(cfg.seed, 0, Purpose::InitialLibrary));
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(*count);
            let mut attempts = 0usize;
            while out.len() < *count {
                attempts += 1;
                if attempts > 1000 * count {
                    return Err(Error::Config(format!(
                        "could not draw {count} distinct strings from the alphabet"
                    )));
                }
                let len = r.random_range(*min_len..=*max_len);
                let s: String = (0..len).map(|_| chars[r.random_range(0..chars.len())]).collect();
                if seen.insert(s.clone()) {
                    out.push(s);
                }
            }
            Ok(out)
        }
        InitialConfig::File { path } => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read initial library {}: {e}", path.display())))?;
            let mut seen = HashSet::new();
            Ok(text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && seen.insert(l.to_string()))
                .map(str::to_string)
                .collect())
        }
    }
}

struct LogSink {
    out: OutputDir,
    writer: BufWriter<File>,
}

impl LogSink {
    fn open(out: OutputDir, truncate: bool) -> Result<Self> {
        let file = if truncate {
            File::create(out.log())?
        } else {
            OpenOptions::new().create(true).append(true).open(out.log())?
        };
        Ok(Self {
            out,
            writer: BufWriter::new(file),
        })
    }

    fn write(&mut self, lines: &[LogLine]) -> Result<()> {
        for l in lines {
            serde_json::to_writer(&mut self.writer, l)?;
            self.writer.write_all(b"\n")?;
        }
        self.writer.flush()?;
        Ok(())
    }
}

pub struct Campaign {
    state: CampaignState,
    codec: Box<dyn Codec>,
    oracle: ObjectiveOracle,
    sink: Option<LogSink>,
}

impl Campaign {
    /// Scores the initial library and sets up iteration 0. With `out`, the
    /// log, config copy, and checkpoint are written there.
    pub fn start(
        config: CampaignConfig,
        mut codec: Box<dyn Codec>,
        mut oracle: ObjectiveOracle,
        initial: Vec<String>,
        out: Option<OutputDir>,
    ) -> Result<Self> {
        config.validate()?;
        check_codec(&config, codec.as_ref())?;
        if initial.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                have: initial.len(),
            });
        }
        for t in &initial {
            if !codec.validate(t)? {
                return Err(Error::invalid("initial", format!("{t:?} is not valid for the codec")));
            }
        }
        let scores = oracle.batch_score(&initial)?;
        let initial: Vec<ScoredText> = initial
            .into_iter()
            .zip(scores)
            .map(|(text, score)| ScoredText { text, score })
            .collect();
        let state = CampaignState {
            dataset: dataset_from(&initial, &[])?,
            config,
            initial,
            generated: Vec::new(),
            iteration: 0,
            logs: Vec::new(),
        };
        let mut campaign = Self {
            state,
            codec,
            oracle,
            sink: None,
        };
        if let Some(out) = out {
            fs::write(out.config(), campaign.state.config.to_toml()?)?;
            let mut sink = LogSink::open(out, true)?;
            sink.write(&[LogLine {
                iter: 0,
                body: LogBody::Init {
                    config_hash: campaign.state.config.hash(),
                    seed: campaign.state.config.seed,
                    ablation: campaign.state.config.ablation,
                    records: campaign.state.initial.clone(),
                },
            }])?;
            campaign.sink = Some(sink);
            campaign.save_checkpoint(None)?;
        }
        Ok(campaign)
    }

    /// Rebuilds a campaign from a checkpoint written under the same config.
    pub fn resume(
        config: CampaignConfig,
        codec: Box<dyn Codec>,
        oracle: ObjectiveOracle,
        checkpoint: Checkpoint,
        out: Option<OutputDir>,
    ) -> Result<Self> {
        config.validate()?;
        check_codec(&config, codec.as_ref())?;
        let expected = config.hash();
        if checkpoint.config_hash != expected {
            return Err(Error::ConfigHashMismatch {
                expected,
                found: checkpoint.config_hash,
            });
        }
        let state = CampaignState {
            dataset: dataset_from(&checkpoint.initial, &checkpoint.generated)?,
            config,
            initial: checkpoint.initial,
            generated: checkpoint.generated,
            iteration: checkpoint.iteration,
            logs: checkpoint.logs,
        };
        let mut campaign = Self {
            state,
            codec,
            oracle,
            sink: None,
        };
        if let Some(out) = out {
            let mut sink = LogSink::open(out, false)?;
            sink.write(&[LogLine {
                iter: campaign.state.iteration,
                body: LogBody::Resume {
                    config_hash: expected,
                },
            }])?;
            campaign.sink = Some(sink);
        }
        Ok(campaign)
    }

    pub fn state(&self) -> &CampaignState {
        &self.state
    }

    pub fn oracle(&self) -> &ObjectiveOracle {
        &self.oracle
    }

    pub fn codec_mut(&mut self) -> &mut dyn Codec {
        self.codec.as_mut()
    }

    fn save_checkpoint(&self, status: Option<CampaignStatus>) -> Result<()> {
        if let Some(sink) = &self.sink {
            self.state.checkpoint(status).save(sink.out.checkpoint())?;
        }
        Ok(())
    }

    /// Runs one iteration. On error nothing in the state changes.
    pub fn run_iteration(&mut self) -> Result<&IterationLog> {
        let started = Instant::now();
        let cfg = &self.state.config;
        let iter = self.state.iteration + 1;
        let calls_before = self.oracle.calls();
        let mut ds = self.state.dataset.clone();

        for rec in ds.records_mut() {
            if rec.embedding.is_none() {
                rec.embedding = Some(self.codec.encode(&rec.text)?);
            }
        }

        let guided = cfg.ablation != Ablation::NoGuide;
        let model = if guided {
            let views: Vec<_> = ds
                .records()
                .iter()
                .map(|r| r.embedding.as_ref().expect("encoded above").vectors().view())
                .collect();
            let scores: Vec<f64> = ds.records().iter().map(|r| r.score).collect();
            let (model, report) = SurrogateModel::fit(
                &views,
                &scores,
                &SurrogateConfig {
                    l_max: cfg.l_max,
                    pooling: cfg.ablation.pooling(),
                    mlp_dims: cfg.mlp_dims(),
                    mlp_lr: cfg.mlp_lr,
                    mlp_epochs: cfg.mlp_epochs,
                    gp_lr: cfg.gp_lr,
                    gp_epochs: cfg.gp_epochs,
                    gp_jitter: cfg.gp_jitter,
                    seed: rng::purpose_seed(cfg.seed, iter, Purpose::FeatureInit),
                },
            )?;
            let final_mse = report.mse_curve.last().copied().unwrap_or(f64::NAN);
            Some((model, SurrogateSummary {
                final_mse,
                final_nll: report.final_nll,
            }))
        } else {
            None
        };

        let sources = source_indices(&ds, cfg.elite_fraction);
        let per_record = cfg
            .samples_per_record
            .unwrap_or_else(|| explorer::default_samples_per_record(sources.len()));
        let explore: ExploreSet = explorer::build_explore_set(
            &ds,
            &sources,
            per_record,
            cfg.lambda_perturb,
            rng::purpose_seed(cfg.seed, iter, Purpose::Explore),
        )?;

        let selected: Vec<CandidateEmbedding> = match &model {
            Some((m, _)) => explorer::select_candidates(&explore, m, cfg.n_cand, ds.len() as u64 + 1, cfg.delta)?,
            None => {
                let mut r = rng::stream(rng::purpose_seed(cfg.seed, iter, Purpose::RandomSelect));
                explorer::select_random(&explore, cfg.n_cand, &mut r)
            }
        };

        let mut records = Vec::with_capacity(selected.len());
        let mut batch: HashSet<String> = HashSet::new();
        let mut to_score = Vec::new();
        for c in &selected {
            let text = self.codec.decode_repair(c, cfg.prompt_id)?;
            let outcome = if text.is_empty() || !self.codec.validate(&text)? {
                Outcome::Invalid
            } else if ds.contains(&text) || !batch.insert(text.clone()) {
                Outcome::Duplicate
            } else {
                to_score.push(text.clone());
                Outcome::New
            };
            records.push(CandidateRecord {
                text,
                outcome,
                score: None,
                acquisition: c.acquisition,
                pred_mean: c.prediction.map(|p| p.mean),
                pred_std: c.prediction.map(|p| p.std),
                source_index: c.source_index,
                noise_seed: c.noise_seed,
            });
        }

        let scores = self.oracle.batch_score(&to_score)?;
        let mut new_rows = Vec::with_capacity(scores.len());
        let mut next = scores.iter();
        for rec in records.iter_mut().filter(|r| r.outcome == Outcome::New) {
            let score = *next.next().expect("one score per new text");
            rec.score = Some(score);
            ds.insert(ObservedRecord::new(rec.text.clone(), None, score)?);
            new_rows.push(ScoredText {
                text: rec.text.clone(),
                score,
            });
        }

        let best_generated = self
            .state
            .generated
            .iter()
            .chain(&new_rows)
            .map(|r| r.score)
            .min_by(f64::total_cmp);
        let log = IterationLog {
            iter,
            explore_size: explore.len(),
            surrogate: model.map(|(_, s)| s),
            candidates: records,
            new_molecules: new_rows.len(),
            oracle_calls: self.oracle.calls() - calls_before,
            best_so_far: ds.best_score().expect("dataset is non-empty"),
            best_generated,
            wall_ms: started.elapsed().as_millis() as u64,
        };

        // commit
        self.state.dataset = ds;
        self.state.generated.extend(new_rows);
        self.state.iteration = iter;
        self.state.logs.push(log);
        let log = self.state.logs.last().expect("just pushed");
        if let Some(sink) = &mut self.sink {
            sink.write(&log.log_lines())?;
        }
        self.save_checkpoint(None)?;
        Ok(self.state.logs.last().expect("just pushed"))
    }

    /// Iterates until the budget is met, the iteration cap trips, or `stop`
    /// is raised. `progress` sees every completed iteration.
    pub fn run(&mut self, stop: Option<&AtomicBool>, mut progress: impl FnMut(&IterationLog)) -> Result<CampaignSummary> {
        let cap = self.state.config.max_iterations() as u64;
        let budget = self.state.config.budget;
        let status = loop {
            if self.state.generated.len() >= budget {
                break CampaignStatus::Complete;
            }
            if self.state.iteration >= cap {
                break CampaignStatus::Partial;
            }
            if stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
                break CampaignStatus::Interrupted;
            }
            let log = self.run_iteration()?;
            progress(log);
        };
        self.finish(status)
    }

    /// Writes the summary table, final checkpoint, and `done` record.
    pub fn finish(&mut self, status: CampaignStatus) -> Result<CampaignSummary> {
        let summary = self.summary(status);
        if let Some(sink) = &mut self.sink {
            write_summary_csv(&self.state.generated, sink.out.summary())?;
            sink.write(&[LogLine {
                iter: self.state.iteration,
                body: LogBody::Done {
                    status,
                    iterations: self.state.iteration,
                    generated: self.state.generated.len(),
                },
            }])?;
        }
        self.save_checkpoint(Some(status))?;
        Ok(summary)
    }

    pub fn summary(&self, status: CampaignStatus) -> CampaignSummary {
        let scores: Vec<f64> = self.state.generated.iter().map(|r| r.score).collect();
        CampaignSummary {
            status,
            iterations: self.state.iteration,
            generated: scores.len(),
            oracle_calls: self.oracle.calls(),
            top_k: top_k_means(&scores),
        }
    }
}

fn check_codec(cfg: &CampaignConfig, codec: &dyn Codec) -> Result<()> {
    if codec.dim() != cfg.d || codec.max_len() != cfg.l_max {
        return Err(Error::Config(format!(
            "codec has d={} l_max={} but the config says d={} l_max={}",
            codec.dim(),
            codec.max_len(),
            cfg.d,
            cfg.l_max
        )));
    }
    Ok(())
}

fn dataset_from(initial: &[ScoredText], generated: &[ScoredText]) -> Result<ObservedDataset> {
    let mut ds = ObservedDataset::new();
    for row in initial.iter().chain(generated) {
        if !ds.insert(ObservedRecord::new(row.text.clone(), None, row.score)?) {
            return Err(Error::Log(format!("duplicate text {:?} in campaign state", row.text)));
        }
    }
    Ok(ds)
}

/// Records to perturb: all of them, or the best `ceil(fraction * n)`.
fn source_indices(ds: &ObservedDataset, elite_fraction: Option<f64>) -> Vec<usize> {
    let n = ds.len();
    match elite_fraction {
        None => (0..n).collect(),
        Some(f) => {
            let keep = ((f * n as f64).ceil() as usize).clamp(1, n);
            let recs = ds.records();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| recs[a].score.total_cmp(&recs[b].score).then(a.cmp(&b)));
            idx.truncate(keep);
            idx.sort_unstable();
            idx
        }
    }
}
