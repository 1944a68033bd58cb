use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tracesim::analysis::MetricKind;
use tracesim::cli::{self, CliError, Overrides};

#[derive(Parser)]
#[command(name = "tracesim", version, about = "Trace-driven 802.11a link simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct OverrideArgs {
    /// Root seed for all random streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Directory for output files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            seed: a.seed,
            duration_s: a.duration,
            out_dir: a.out_dir,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Throughput,
    Rtt,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config (or rerun a manifest.json).
    Run {
        config: PathBuf,
        #[command(flatten)]
        ov: OverrideArgs,
    },
    /// Record the per-frame receiver SNR of an analytic run as a trace.
    RecordTrace {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        ov: OverrideArgs,
    },
    /// Compare per-second series against a reference.
    Compare {
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long)]
        reference: PathBuf,
        #[arg(required = true)]
        candidates: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config, ov } => {
            let out = cli::run(&config, &ov.into())?;
            println!("wrote {} ({} files)", out.out_dir.display(), out.manifest.outputs.len() + 1);
        }
        Command::RecordTrace { config, output, ov } => {
            let n = cli::record_trace(&config, &output, &ov.into())?;
            println!("wrote {n} SNR samples to {}", output.display());
        }
        Command::Compare {
            metric,
            reference,
            candidates,
            out_dir,
        } => {
            let metric = match metric {
                Metric::Throughput => MetricKind::ThroughputKbps,
                Metric::Rtt => MetricKind::RttMedianMs,
            };
            let report = cli::compare(metric, &reference, &candidates, &out_dir)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}
