use std::collections::HashSet;
use std::path::Path;

use latent_bo::campaign::{self, Campaign, CampaignStatus, Checkpoint, Outcome, OutputDir};
use latent_bo::config::{Ablation, CampaignConfig};
use latent_bo::oracle::{Objective, ObjectiveOracle, ScoreCache, SyntheticObjective};
use latent_bo::Error;

const BASE: &str = r#"
seed = 3
d = 4
l_max = 24
budget = 12
max_iterations = 6
n_cand = 5
mlp_dims = [8, 16, 16, 4]
mlp_epochs = 60
gp_epochs = 40

[codec]
kind = "mock"
alphabet = "CNO()=#1"
table_seed = 7

[oracle]
kind = "synthetic"
target = "CC(=O)N1CCN(C)CC1"

[initial]
kind = "random"
count = 10
min_len = 6
max_len = 16
"#;

fn config(edits: &[(&str, &str)]) -> CampaignConfig {
    let mut text = BASE.to_string();
    for (key, value) in edits {
        let line = text
            .lines()
            .find(|l| l.starts_with(&format!("{key} =")))
            .map(str::to_string);
        match line {
            Some(l) => text = text.replace(&l, &format!("{key} = {value}")),
            None => text = format!("{key} = {value}\n{text}"),
        }
    }
    CampaignConfig::from_toml(&text).unwrap()
}

fn start(cfg: CampaignConfig, out: Option<&Path>) -> Campaign {
    let texts = campaign::initial_texts(&cfg).unwrap();
    let codec = campaign::build_codec(&cfg).unwrap();
    let (cache, out) = match out {
        Some(p) => {
            let o = OutputDir::create(p).unwrap();
            (ScoreCache::open(o.scores()).unwrap(), Some(o))
        }
        None => (ScoreCache::in_memory(), None),
    };
    let oracle = campaign::build_oracle(&cfg, cache).unwrap();
    Campaign::start(cfg, codec, oracle, texts, out).unwrap()
}

fn strip_wall_time(log: &str) -> String {
    log.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v.to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn zero_noise_single_sample_only_rediscovers_sources() {
    let cfg = config(&[("lambda_perturb", "0.0"), ("samples_per_record", "1"), ("max_iterations", "3")]);
    let mut c = start(cfg, None);
    let before = c.state().to_json();
    let calls = c.oracle().calls();
    let summary = c.run(None, |_| {}).unwrap();
    assert_eq!(summary.status, CampaignStatus::Partial);
    assert_eq!(summary.generated, 0);
    assert_eq!(c.oracle().calls(), calls);
    for log in c.state().logs() {
        assert_eq!(log.candidates.len(), 5);
        assert!(log.candidates.iter().all(|r| r.outcome == Outcome::Duplicate));
    }
    let after: serde_json::Value = serde_json::from_str(&c.state().to_json()).unwrap();
    let before: serde_json::Value = serde_json::from_str(&before).unwrap();
    assert_eq!(after["initial"], before["initial"]);
    assert_eq!(after["generated"], before["generated"]);
}

#[test]
fn bookkeeping_invariants_hold_every_iteration() {
    let cfg = config(&[("lambda_perturb", "1.0")]);
    let target = "CC(=O)N1CCN(C)CC1";
    let obj = SyntheticObjective::new(target, 10.0, 0.01).unwrap();
    let mut c = start(cfg, None);
    let initial: HashSet<String> = c.state().initial().iter().map(|r| r.text.clone()).collect();
    let mut prev_best = f64::INFINITY;
    let mut total_calls = c.oracle().calls();
    while c.state().iteration() < 6 && c.state().generated().len() < 12 {
        let log = c.run_iteration().unwrap().clone();
        let st = c.state();
        assert!(log.candidates.len() <= 5);
        assert!(log.oracle_calls <= 5);
        assert_eq!(log.oracle_calls as usize, log.new_molecules);
        assert!(log.best_so_far <= prev_best);
        prev_best = log.best_so_far;
        assert_eq!(st.dataset().len(), st.initial().len() + st.generated().len());
        let texts: HashSet<&str> = st.generated().iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts.len(), st.generated().len());
        for g in st.generated() {
            assert!(!initial.contains(&g.text));
            assert_eq!(g.score, obj.value(&g.text));
        }
        for rec in &log.candidates {
            assert_eq!(rec.score.is_some(), rec.outcome == Outcome::New);
            assert!(rec.pred_std.is_some_and(|s| s >= 0.0));
        }
        total_calls += log.oracle_calls;
        assert_eq!(c.oracle().calls(), total_calls);
        let best = st.dataset().best_score().unwrap();
        assert_eq!(best, log.best_so_far);
    }
    assert!(!c.state().generated().is_empty());
}

#[test]
fn identical_seed_gives_identical_outputs() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        start(config(&[]), Some(d.path())).run(None, |_| {}).unwrap();
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&dirs[0], "summary.csv"), read(&dirs[1], "summary.csv"));
    assert_eq!(read(&dirs[0], "scores.jsonl"), read(&dirs[1], "scores.jsonl"));
    let log = |d: &tempfile::TempDir| strip_wall_time(&String::from_utf8(read(d, "log.jsonl")).unwrap());
    assert_eq!(log(&dirs[0]), log(&dirs[1]));

    let other = tempfile::tempdir().unwrap();
    start(config(&[("seed", "4")]), Some(other.path())).run(None, |_| {}).unwrap();
    assert_ne!(read(&dirs[0], "summary.csv"), read(&other, "summary.csv"));
}

struct FailAfter {
    inner: SyntheticObjective,
    left: usize,
}

impl Objective for FailAfter {
    fn evaluate(&mut self, text: &str) -> latent_bo::Result<f64> {
        if self.left == 0 {
            return Err(Error::Endpoint("scoring backend went away".into()));
        }
        self.left -= 1;
        Ok(self.inner.value(text))
    }
}

#[test]
fn failed_iteration_leaves_state_untouched() {
    let cfg = config(&[("lambda_perturb", "1.0")]);
    let texts = campaign::initial_texts(&cfg).unwrap();
    let n = texts.len();
    let oracle = ObjectiveOracle::new(
        Box::new(FailAfter {
            inner: SyntheticObjective::new("CC(=O)N1CCN(C)CC1", 10.0, 0.01).unwrap(),
            left: n + 1,
        }),
        ScoreCache::in_memory(),
    );
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::create(dir.path()).unwrap();
    let mut c = Campaign::start(cfg.clone(), campaign::build_codec(&cfg).unwrap(), oracle, texts, Some(out)).unwrap();
    let mut before = c.state().to_json();
    let mut failed = false;
    for _ in 0..6 {
        let ckpt = std::fs::read(dir.path().join("checkpoint.json")).unwrap();
        match c.run_iteration() {
            Ok(_) => before = c.state().to_json(),
            Err(e) => {
                assert!(matches!(e, Error::Scoring { .. }), "{e}");
                assert_eq!(c.state().to_json(), before);
                assert_eq!(std::fs::read(dir.path().join("checkpoint.json")).unwrap(), ckpt);
                failed = true;
                break;
            }
        }
    }
    assert!(failed, "the oracle never ran out");
}

#[test]
fn single_candidate_campaign_terminates() {
    let cfg = config(&[("n_cand", "1"), ("budget", "1"), ("lambda_perturb", "1.0"), ("max_iterations", "20")]);
    let mut c = start(cfg, None);
    let s = c.run(None, |_| {}).unwrap();
    assert_eq!(s.status, CampaignStatus::Complete);
    assert_eq!(s.generated, 1);
    assert_eq!(s.top_k[0].1, Some(c.state().generated()[0].score));
    assert_eq!(s.top_k[1].1, None);
}

#[test]
fn iteration_cap_reports_partial() {
    let cfg = config(&[("budget", "1000"), ("max_iterations", "2")]);
    let s = start(cfg, None).run(None, |_| {}).unwrap();
    assert_eq!(s.status, CampaignStatus::Partial);
    assert_eq!(s.iterations, 2);
}

#[test]
fn raised_stop_flag_interrupts_before_work() {
    let stop = std::sync::atomic::AtomicBool::new(true);
    let s = start(config(&[]), None).run(Some(&stop), |_| {}).unwrap();
    assert_eq!(s.status, CampaignStatus::Interrupted);
    assert_eq!(s.iterations, 0);
}

#[test]
fn resumed_campaign_matches_uninterrupted_one() {
    let full = tempfile::tempdir().unwrap();
    let summary = start(config(&[]), Some(full.path())).run(None, |_| {}).unwrap();

    let split = tempfile::tempdir().unwrap();
    {
        let mut c = start(config(&[]), Some(split.path()));
        c.run_iteration().unwrap();
        c.run_iteration().unwrap();
    }
    let out = OutputDir::open(split.path());
    let cfg = CampaignConfig::load(out.config()).unwrap();
    let ckpt = Checkpoint::load(out.checkpoint()).unwrap();
    assert_eq!(ckpt.iteration, 2);
    let oracle = campaign::build_oracle(&cfg, ScoreCache::open(out.scores()).unwrap()).unwrap();
    let mut c = Campaign::resume(cfg.clone(), campaign::build_codec(&cfg).unwrap(), oracle, ckpt, Some(out)).unwrap();
    let resumed = c.run(None, |_| {}).unwrap();

    assert_eq!(resumed.iterations, summary.iterations);
    assert_eq!(resumed.top_k, summary.top_k);
    let read = |d: &Path| std::fs::read(d.join("summary.csv")).unwrap();
    assert_eq!(read(full.path()), read(split.path()));
    let log = std::fs::read_to_string(split.path().join("log.jsonl")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains(r#""phase":"resume""#)).count(), 1);
}

#[test]
fn resume_rejects_a_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    start(config(&[("max_iterations", "1")]), Some(dir.path())).run(None, |_| {}).unwrap();
    let out = OutputDir::open(dir.path());
    let ckpt = Checkpoint::load(out.checkpoint()).unwrap();
    let cfg = config(&[("max_iterations", "1"), ("n_cand", "3")]);
    let oracle = campaign::build_oracle(&cfg, ScoreCache::in_memory()).unwrap();
    let r = Campaign::resume(cfg.clone(), campaign::build_codec(&cfg).unwrap(), oracle, ckpt, None);
    assert!(matches!(r, Err(Error::ConfigHashMismatch { .. })));
}

#[test]
fn codec_width_must_match_config() {
    let cfg = config(&[]);
    let other = config(&[("d", "6"), ("mlp_dims", "[12, 4]")]);
    let oracle = campaign::build_oracle(&cfg, ScoreCache::in_memory()).unwrap();
    let r = Campaign::start(
        cfg.clone(),
        campaign::build_codec(&other).unwrap(),
        oracle,
        campaign::initial_texts(&cfg).unwrap(),
        None,
    );
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn ablations_run_end_to_end() {
    for ablation in [Ablation::NoPosition, Ablation::NoGuide] {
        let mut cfg = config(&[("max_iterations", "2"), ("lambda_perturb", "1.0")]);
        cfg.ablation = ablation;
        let mut c = start(cfg, None);
        c.run(None, |_| {}).unwrap();
        for log in c.state().logs() {
            assert_eq!(log.surrogate.is_some(), ablation == Ablation::NoPosition);
            for rec in &log.candidates {
                assert_eq!(rec.acquisition.is_some(), ablation == Ablation::NoPosition);
            }
        }
    }
}

#[test]
fn elite_sources_restrict_perturbation() {
    let cfg = config(&[("elite_fraction", "0.2"), ("max_iterations", "1"), ("lambda_perturb", "1.0")]);
    let mut c = start(cfg, None);
    let mut ranked: Vec<(usize, f64)> =
        c.state().dataset().records().iter().map(|r| r.score).enumerate().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    let elite: HashSet<usize> = ranked.iter().take(2).map(|(i, _)| *i).collect();
    let log = c.run_iteration().unwrap();
    assert!(log.candidates.iter().all(|r| elite.contains(&r.source_index)));
}
