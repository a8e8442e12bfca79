// SPDX-License-Identifier: Apache-2.0

//! Replays a trace through the in-process pipeline and reports the run.
//!
//! Exit status: 0 when every expectation passed, 1 when some failed, 2 on
//! usage, config or trace errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use omnilive::backends::hashed_vector;
use omnilive::config::{load_config, split_override_args};
use omnilive::harness::{measure, replay, scenarios, ReplayMode, Trace};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Virtual,
    RealTime,
}

/// Config overrides may be passed as `--section.key=value`.
#[derive(Parser, Debug)]
#[command(name = "ol-replay", version, about = "Replay a JSONL trace and report timings and verdicts")]
struct Args {
    /// Trace file (JSONL).
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "virtual")]
    mode: Mode,
    /// Clock speed for real-time mode, as a multiple of wall time.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Write the full run report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the IEEE-754 bits of hashed_vector(KEY, --dim), one hex word per line.
    #[arg(long, value_name = "KEY")]
    hashed_vector: Option<String>,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Write the bundled scenario traces into DIR.
    #[arg(long, value_name = "DIR")]
    write_bundled: Option<PathBuf>,
}

fn run() -> Result<bool, String> {
    let (rest, overrides) = split_override_args(std::env::args());
    let args = Args::parse_from(rest);

    if let Some(key) = &args.hashed_vector {
        let v = hashed_vector(key.as_bytes(), args.dim).map_err(|e| e.to_string())?;
        for x in v {
            println!("{:016x}", x.to_bits());
        }
        return Ok(true);
    }
    if let Some(dir) = &args.write_bundled {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        for t in scenarios::bundled() {
            let path = dir.join(format!("{}.jsonl", t.name));
            std::fs::write(&path, t.to_jsonl()).map_err(|e| format!("{}: {e}", path.display()))?;
            println!("{}", path.display());
        }
        return Ok(true);
    }

    let path = args.trace.ok_or("a trace file is required")?;
    let trace = Trace::load(&path).map_err(|e| e.to_string())?;
    let cfg = load_config(args.config.as_deref(), &overrides).map_err(|e| e.to_string())?;
    let mode = match args.mode {
        Mode::Virtual => ReplayMode::Virtual,
        Mode::RealTime => {
            if !(args.speed > 0.0 && args.speed.is_finite()) {
                return Err(format!("--speed must be positive, got {}", args.speed));
            }
            ReplayMode::RealTime { speed: args.speed }
        }
    };
    let report = replay(&trace, &cfg, mode).map_err(|e| e.to_string())?;
    for v in &report.expects {
        println!("{} {} ({}): {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.check, v.detail);
    }
    println!("{}", serde_json::to_string_pretty(&measure(&report)).expect("metrics serialize"));
    if let Some(out) = &args.report {
        std::fs::write(out, report.to_json()).map_err(|e| format!("{}: {e}", out.display()))?;
    }
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("ol-replay: {e}");
            ExitCode::from(2)
        }
    }
}
