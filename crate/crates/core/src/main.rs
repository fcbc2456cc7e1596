use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use weakkam::config::ExperimentConfig;
use weakkam::pipeline::{self, error_report, Command, Stage};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Alpha,
    Aubry,
    Barrier,
    Faces,
    Subsolution,
    VerifyLemma,
    ClosedLp,
    All,
}

impl Sub {
    fn command(self) -> Command {
        match self {
            Sub::Alpha => Command::Stage(Stage::Alpha),
            Sub::Aubry => Command::Stage(Stage::Aubry),
            Sub::Barrier => Command::Stage(Stage::Barrier),
            Sub::Faces => Command::Stage(Stage::Faces),
            Sub::Subsolution => Command::Stage(Stage::Subsolution),
            Sub::VerifyLemma => Command::Stage(Stage::VerifyLemma),
            Sub::ClosedLp => Command::Stage(Stage::ClosedLp),
            Sub::All => Command::All,
        }
    }
}

/// Weak KAM / Aubry-Mather experiments on a space-time grid.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to `WEAKKAM_OUT`, then the config, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let mut cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            let report = error_report(None, &e);
            eprintln!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            return ExitCode::from(report.exit_code as u8);
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .or_else(|| std::env::var_os("WEAKKAM_OUT").map(PathBuf::from))
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let manifest = pipeline::run(cli.command.command(), cfg, &out);
    for c in manifest.checks.iter().filter(|c| !c.pass) {
        eprintln!("FAIL {}/{}: {:e} (threshold {:e})", c.stage, c.name, c.value, c.threshold);
    }
    if let Some(e) = &manifest.error {
        eprintln!("{}", serde_json::to_string_pretty(e).expect("report serializes"));
    }
    println!("{} -> {} (exit {})", manifest.command, out.display(), manifest.exit_code);
    ExitCode::from(manifest.exit_code as u8)
}
