use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hybridx::harness::{
    self, generate_script, replay_check, run_suites, ReplayVerdict, Scenario, ScriptParams,
};

/// Environment variable naming the directory run artifacts go to.
const OUT_ENV: &str = "HYBRIDX_OUT";

#[derive(Parser)]
#[command(name = "hybridx", version, about = "Hybrid exchange simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario, write its logs and metrics, and check the run's invariants.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory; defaults to $HYBRIDX_OUT/<name>-<seed>, or runs/<name>-<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a run's input log through a fresh core and compare outputs.
    ReplayCheck { dir: PathBuf },
    /// Print a seeded order-flow script, one `at_us|session|message` per line.
    Genscript {
        /// Take instruments, senders and script parameters from this scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        duration_ms: u64,
        /// Events per second when no scenario is given.
        #[arg(long, default_value_t = 100)]
        rate: u64,
        #[arg(long, value_delimiter = ',', default_value = "A,B")]
        instruments: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the metrics of a run from its logs.
    Report { dir: PathBuf },
}

fn artifact_dir(scenario: &Path, seed: u64, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| {
        let name = scenario
            .file_stem()
            .map_or("run".into(), |s| s.to_string_lossy().into_owned());
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(format!("{name}-{seed}"))
    })
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<bool> {
    let mut scenario = Scenario::load(path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let dir = artifact_dir(path, scenario.seed, out);
    let result = harness::run(&scenario)?;
    result
        .write_dir(&dir)
        .with_context(|| format!("writing {}", dir.display()))?;
    let recomputed = harness::report(&dir)?;
    let summary = result.metrics.to_text();
    if let Some(i) = summary.find("== summary ==") {
        print!("{}", &summary[i..]);
    }
    println!("artifacts: {}", dir.display());
    let suites = run_suites(&result, &recomputed);
    for s in &suites {
        println!(
            "{} {} {}",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.detail
        );
    }
    Ok(suites.iter().all(|s| s.passed))
}

fn cmd_replay(dir: &Path) -> Result<bool> {
    match replay_check(dir).with_context(|| format!("reading logs in {}", dir.display()))? {
        ReplayVerdict::Pass { records, outputs } => {
            println!("PASS {records} input records, {outputs} output lines");
            Ok(true)
        }
        ReplayVerdict::Fail { seq, detail } => {
            println!("FAIL at seq {seq}: {detail}");
            Ok(false)
        }
    }
}

fn cmd_genscript(
    scenario: Option<PathBuf>,
    seed: u64,
    duration_ms: u64,
    rate: u64,
    instruments: Vec<String>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let (params, instruments, senders, duration_ms) = match scenario {
        Some(path) => {
            let s = Scenario::load(&path)?;
            s.validate()?;
            let senders = s
                .session_by_role(hybridx::gateway::Role::Client)
                .filter(|c| s.script.senders.is_empty() || s.script.senders.contains(&c.session_id))
                .map(|c| (c.session_id, c.participant.clone()))
                .collect();
            (
                s.script.clone(),
                s.instruments.clone(),
                senders,
                s.duration_ms,
            )
        }
        None => {
            let params = ScriptParams {
                rate_per_s: rate,
                ..ScriptParams::default()
            };
            (
                params,
                instruments,
                vec![(1, "p1".to_string())],
                duration_ms,
            )
        }
    };
    let script = generate_script(seed, &params, &instruments, &senders, duration_ms)?;
    let mut text = String::new();
    for e in &script {
        text.push_str(&format!("{}|{}|{}\n", e.at_us, e.session_id, e.line));
    }
    match out {
        Some(path) => {
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(true)
}

fn cmd_report(dir: &Path) -> Result<bool> {
    let report =
        harness::report(dir).with_context(|| format!("reading logs in {}", dir.display()))?;
    print!("{}", report.to_text());
    if report.partial {
        bail!(
            "logs in {} are truncated; the report is partial",
            dir.display()
        );
    }
    let ordered = report.distributions().iter().all(|(_, d)| d.ordered());
    Ok(ordered && report.fates.balanced())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
        } => cmd_run(&scenario, seed, out),
        Cmd::ReplayCheck { dir } => cmd_replay(&dir),
        Cmd::Genscript {
            scenario,
            seed,
            duration_ms,
            rate,
            instruments,
            out,
        } => cmd_genscript(scenario, seed, duration_ms, rate, instruments, out),
        Cmd::Report { dir } => cmd_report(&dir),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
