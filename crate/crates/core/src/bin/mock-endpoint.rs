//! Protocol endpoint backed by the mock codec and the synthetic objective.
//! With `--replay`, plays back a recorded transcript instead.

use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use latent_bo::codec::mock::MockCodec;
use latent_bo::codec::server::{parse_transcript, serve, serve_replay, MockService};
use latent_bo::oracle::SyntheticObjective;

#[derive(Parser)]
#[command(about = "Mock codec endpoint speaking the line protocol on stdin/stdout")]
struct Args {
    #[arg(long, default_value = "CNO()=#1")]
    alphabet: String,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 80)]
    l_max: usize,
    #[arg(long, default_value_t = 0)]
    table_seed: u64,
    /// Enables the `score` op with this target string.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value_t = SyntheticObjective::DEFAULT_W_MATCH)]
    w_match: f64,
    #[arg(long, default_value_t = SyntheticObjective::DEFAULT_W_LEN)]
    w_len: f64,
    /// Replays a transcript, failing on the first request that differs.
    #[arg(long, conflicts_with = "target")]
    replay: Option<PathBuf>,
}

fn run(args: Args) -> latent_bo::Result<()> {
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    if let Some(path) = args.replay {
        let exchanges = parse_transcript(&std::fs::read_to_string(path)?)?;
        return serve_replay(&exchanges, stdin, stdout);
    }
    let objective = args
        .target
        .map(|t| SyntheticObjective::new(&t, args.w_match, args.w_len))
        .transpose()?;
    let mut service = MockService {
        codec: MockCodec::new(&args.alphabet, args.d, args.l_max, args.table_seed)?,
        objective,
    };
    serve(&mut service, stdin, stdout)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mock-endpoint: {e}");
            ExitCode::FAILURE
        }
    }
}
