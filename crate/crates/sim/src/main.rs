use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use warp_core::time::SimTime;
use warp_sim::{report, run_text, Format, RunOptions};

#[derive(Parser)]
#[command(name = "warp-sim", version, about = "Replays scripted scenarios on the warp simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop at this virtual time, in seconds.
        #[arg(long)]
        until: Option<f64>,
        /// Write the metrics as key=value lines here.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Write the message transcript here.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Format of the report printed to stdout.
        #[arg(long, default_value = "table")]
        format: Format,
    },
}

fn main() -> ExitCode {
    let Command::Run {
        scenario,
        seed,
        until,
        metrics,
        transcript,
        format,
    } = Cli::parse().command;
    let text = match fs::read_to_string(&scenario) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", scenario.display());
            return ExitCode::from(2);
        }
    };
    let options = RunOptions {
        seed,
        until: until.map(SimTime::from_secs_f64),
    };
    let outcome = match run_text(&text, &options) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {}: {e}", scenario.display());
            return ExitCode::from(2);
        }
    };
    let writes = [
        (metrics, outcome.metrics.render_kv()),
        (transcript, outcome.transcript_text()),
    ];
    for (path, body) in writes {
        if let Some(path) = path {
            if let Err(e) = fs::write(&path, body) {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
    }
    print!("{}", report(&outcome.metrics, format));
    for f in &outcome.failures {
        eprintln!("{f}");
    }
    let stale = outcome.metrics.total("stale_serves");
    if stale > 0 {
        eprintln!("{stale} stale serves");
    }
    println!(
        "\n{} expectations, {} failed, finished at t={}",
        outcome.expectations,
        outcome.failures.len(),
        outcome.finished_at
    );
    if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
