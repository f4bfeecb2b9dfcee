//! Scenario runner and metrics: seeded scripts, end-to-end runs, replay
//! verification and log-derived reports.

mod check;
mod logs;
mod metrics;
pub mod presets;
mod scenario;
mod script;
mod world;

pub use check::{
    agent_projection, non_ats_projection, replay_check, replay_check_text, run_suites,
    ReplayVerdict, SuiteResult,
};
pub use logs::{
    lines_text, NetEvent, RunLogs, ATS_LOG, INPUT_LOG, METRICS_FILE, NET_LOG, OUTPUT_LOG,
};
pub use metrics::{fates_from_logs, Distribution, Fates, MetricsReport};
pub use scenario::{AgentSpec, AtsSection, MetricsConfig, Scenario, ScenarioError};
pub use script::{generate_script, ScriptError, ScriptEvent, ScriptParams};
pub use world::{agent_ids, run, RunOutput};

/// Recomputes the metrics of a finished run from its directory alone.
pub fn report(dir: &std::path::Path) -> std::io::Result<MetricsReport> {
    Ok(MetricsReport::compute(&RunLogs::read_dir(dir)?, None))
}

#[cfg(test)]
mod tests;
