// The full configured pipeline, as the `weakkam all` command runs it.
//
//     cargo run --release --example pipeline [CONFIG] [OUT_DIR]

use std::path::PathBuf;

use weakkam::config::ExperimentConfig;
use weakkam::pipeline::{run as run_pipeline, Command};
use weakkam::Result;

pub fn run(config: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let config = config.unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/pendulum.toml"));
    let out = out.unwrap_or_else(|| std::env::temp_dir().join("weakkam-pipeline"));
    let cfg = ExperimentConfig::load(&config)?;
    let m = run_pipeline(Command::All, cfg, &out);
    for s in &m.stages {
        println!("{:<13} {:>7.2}s", s.stage, s.wall_seconds);
    }
    for c in &m.checks {
        println!("{} {:<12} {:<40} {:.3e}", if c.pass { "ok  " } else { "FAIL" }, c.stage, c.name, c.value);
    }
    println!("exit code {} ({} artifacts under {})", m.exit_code, m.artifacts.len(), out.display());
    assert_eq!(m.exit_code, 0);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    let mut args = std::env::args().skip(1).map(PathBuf::from);
    if let Err(e) = run(args.next(), args.next()) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
