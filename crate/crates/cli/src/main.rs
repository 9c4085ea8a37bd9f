use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use latent_bo::campaign::{
    self, Campaign, CampaignStatus, CampaignSummary, Checkpoint, IterationLog, OutputDir,
};
use latent_bo::codec::MockCodec;
use latent_bo::config::{Ablation, CampaignConfig};
use latent_bo::oracle::ScoreCache;
use latent_bo::report::{self, CampaignReport};
use latent_bo::selftest::{self, SelftestOptions};
use latent_bo::{Error, Result};

const OUT_ENV: &str = "LATENT_BO_OUT";
const DEFAULT_OUT: &str = "campaign-out";

#[derive(Parser)]
#[command(name = "latent-bo", version, about = "Latent-space Bayesian optimization campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a campaign from a config file.
    Run(RunArgs),
    /// Continue a campaign from its checkpoint.
    Resume(ResumeArgs),
    /// Summarize one campaign directory, or compare two.
    Report(ReportArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct Overrides {
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Overrides the number of new molecules to generate.
    #[arg(long)]
    budget: Option<usize>,
    /// Output directory; falls back to $LATENT_BO_OUT, then ./campaign-out.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Only print the final summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Replace an existing campaign in the output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ResumeArgs {
    /// Defaults to the config copy stored in the output directory.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ReportArgs {
    /// Campaign directory, or a directory of per-seed campaign directories.
    dir: PathBuf,
    /// Second directory to compare against; tests whether DIR scores lower.
    other: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    window: usize,
}

#[derive(Args)]
struct SelftestArgs {
    /// JSON file `{"alphabet": str, "table": [[f64]]}` replacing the default
    /// mock codec table.
    #[arg(long)]
    mock_table: Option<PathBuf>,
    #[arg(long, default_value_t = 20240601)]
    seed: u64,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Overrides {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn apply(&self, cfg: &mut CampaignConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.ablation {
            cfg.ablation = a;
        }
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        cfg.validate()
    }
}

fn stop_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    // a second handler registration only fails if one exists already
    let _ = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst));
    flag
}

fn progress(quiet: bool) -> impl FnMut(&IterationLog) {
    move |log| {
        if !quiet {
            let best = log
                .best_generated
                .map(|b| format!("{b:.4}"))
                .unwrap_or_else(|| "-".into());
            eprintln!(
                "iter {:>4}: {} candidates, {} new, best generated {best} ({} ms)",
                log.iter,
                log.candidates.len(),
                log.new_molecules,
                log.wall_ms
            );
        }
    }
}

fn print_summary(out: &Path, s: &CampaignSummary) {
    println!(
        "status {}, iterations {}, generated {}, oracle calls {}",
        status_name(s.status),
        s.iterations,
        s.generated,
        s.oracle_calls
    );
    for (k, v) in &s.top_k {
        println!("top-{k:<3} {}", fmt_opt(*v));
    }
    println!("output {}", out.display());
}

fn status_name(s: CampaignStatus) -> &'static str {
    match s {
        CampaignStatus::Complete => "complete",
        CampaignStatus::Partial => "partial",
        CampaignStatus::Interrupted => "interrupted",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into())
}

fn status_code(s: CampaignStatus) -> u8 {
    match s {
        CampaignStatus::Complete => 0,
        CampaignStatus::Partial | CampaignStatus::Interrupted => 2,
    }
}

fn cmd_run(args: RunArgs) -> Result<u8> {
    let mut cfg = CampaignConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg)?;
    let root = args.overrides.out_dir();
    let out = OutputDir::create(&root)?;
    if out.checkpoint().exists() && !args.force {
        return Err(Error::Config(format!(
            "{} already holds a campaign; use `resume` or pass --force",
            root.display()
        )));
    }
    for p in [out.scores(), out.checkpoint(), out.summary(), out.log()] {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    let texts = campaign::initial_texts(&cfg)?;
    let codec = campaign::build_codec(&cfg)?;
    let oracle = campaign::build_oracle(&cfg, ScoreCache::open(out.scores())?)?;
    let mut c = Campaign::start(cfg, codec, oracle, texts, Some(out))?;
    let stop = stop_flag();
    let summary = c.run(Some(&stop), progress(args.overrides.quiet))?;
    print_summary(&root, &summary);
    Ok(status_code(summary.status))
}

fn cmd_resume(args: ResumeArgs) -> Result<u8> {
    let root = args.overrides.out_dir();
    let out = OutputDir::open(&root);
    let mut cfg = CampaignConfig::load(args.config.clone().unwrap_or_else(|| out.config()))?;
    args.overrides.apply(&mut cfg)?;
    let ckpt = Checkpoint::load(out.checkpoint())?;
    let codec = campaign::build_codec(&cfg)?;
    let oracle = campaign::build_oracle(&cfg, ScoreCache::open(out.scores())?)?;
    let mut c = Campaign::resume(cfg, codec, oracle, ckpt, Some(out))?;
    let stop = stop_flag();
    let summary = c.run(Some(&stop), progress(args.overrides.quiet))?;
    print_summary(&root, &summary);
    Ok(status_code(summary.status))
}

fn print_campaign(name: &str, r: &CampaignReport, window: usize) -> Result<()> {
    let label = if name.is_empty() { r.dir.display().to_string() } else { name.to_string() };
    println!("campaign {label}");
    println!(
        "status {}, iterations {}, initial {}, generated {}",
        r.status.map(status_name).unwrap_or("unfinished"),
        r.iterations,
        r.initial.len(),
        r.generated.len()
    );
    for (k, v) in &r.top_k {
        println!("top-{k:<3} {}", fmt_opt(*v));
    }
    if !r.generated.is_empty() {
        println!("similarity to initial library (window {window})");
        println!("{:>6} {:>4} {:>9} {:>9}", "start", "n", "mean_sim", "max_sim");
        for w in r.similarity(window)? {
            println!("{:>6} {:>4} {:>9.4} {:>9.4}", w.start, w.len, w.mean_sim, w.max_sim);
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<u8> {
    let a = report::read_campaigns(&args.dir)?;
    for (name, r) in &a {
        print_campaign(name, r, args.window)?;
        println!();
    }
    if let Some(other) = &args.other {
        let b = report::read_campaigns(other)?;
        let cmp = report::compare(&a, &b)?;
        println!("paired best scores at equal budgets ({} vs {})", args.dir.display(), other.display());
        println!("{:<16} {:>6} {:>10} {:>10}", "name", "budget", "best_a", "best_b");
        for p in &cmp.pairs {
            println!("{:<16} {:>6} {:>10.4} {:>10.4}", p.name, p.budget, p.best_a, p.best_b);
        }
        let w = cmp.wilcoxon;
        println!(
            "wilcoxon one-sided (a < b): p = {:.6}, W+ = {}, n = {}, {:?}",
            w.p_value, w.w_plus, w.n, w.method
        );
    }
    Ok(0)
}

#[derive(Deserialize)]
struct TableFile {
    alphabet: String,
    table: Vec<Vec<f64>>,
    #[serde(default = "default_l_max")]
    l_max: usize,
}

fn default_l_max() -> usize {
    80
}

fn cmd_selftest(args: SelftestArgs) -> Result<u8> {
    let mut opts = SelftestOptions {
        seed: args.seed,
        ..SelftestOptions::default()
    };
    if let Some(path) = &args.mock_table {
        let t: TableFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        opts.codec = MockCodec::with_rows(&t.alphabet, &t.table, t.l_max)?;
    }
    let results = selftest::run(&mut opts);
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    println!("{} of {} properties passed", results.len() - failed, results.len());
    Ok(if failed == 0 { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Resume(a) => cmd_resume(a),
        Command::Report(a) => cmd_report(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
