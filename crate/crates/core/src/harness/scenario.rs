//! Scenario files.
//!
//! ```toml
//! seed = 7
//! duration_ms = 10000
//! instruments = ["A", "B"]
//!
//! [script]            # order flow; see ScriptParams
//! rate_per_s = 1000
//!
//! [[links]]
//! link_id = 1
//! base_latency_ms = 20.0
//! jitter_ms = 2.0
//! loss_prob = 0.01
//! retransmit_penalty_ms = 200.0
//! bandwidth = 0
//! delay_box_group = "wan"
//!
//! [[sessions]]
//! session_id = 1
//! participant = "p1"
//! link_id = 1
//! subscriptions = ["A"]
//! role = "client"     # client | ats | operator
//!
//! [throttle]          # high_watermark, beta, r_min, base_rate
//! [replication]       # enabled, heartbeat_interval_ms, detection_timeout_ms, lag_events, catch_up_us_per_event
//! [ats]               # session, recover_after_ms, budget_cap, order_id_base, eval_us_per_sample, index
//! [metrics]           # staleness_ms, send_window_us, bucket_ms
//!
//! [[agents]]
//! file = "agents/breakout.toml"   # or text = "..."; relative to the scenario file
//! host = 3                        # optional client session; the ATS hosts it otherwise
//!
//! [[faults]]
//! at_ms = 5000
//! action = "crash_primary"        # crash_agent (id), congestion_burst (link, depth), restore
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::script::{ScriptError, ScriptParams};
use crate::ats::{AgentInstruction, AtsConfig, Template};
use crate::engine::is_valid_symbol;
use crate::gateway::{Role, SessionConfig, SessionId, ThrottleConfig};
use crate::sim::{
    validate_plan, FaultEntry, FaultError, LinkProfile, Network, NetworkError, ReplicationConfig,
};

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(default)]
pub struct AtsSection {
    /// Gateway session the trade server uses.
    pub session: Option<SessionId>,
    /// Restart killed agents from their stored instruction after this delay.
    pub recover_after_ms: Option<u64>,
    #[serde(flatten)]
    pub config: AtsConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub text: Option<String>,
    /// Client session that runs this agent itself instead of the ATS.
    #[serde(default)]
    pub host: Option<SessionId>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Market data received later than this after it was produced counts
    /// against the data time bound.
    pub staleness_ms: f64,
    /// Deliberation longer than this misses the agent's send window.
    pub send_window_us: u64,
    pub bucket_ms: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            staleness_ms: 50.0,
            send_window_us: 1000,
            bucket_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration_ms: u64,
    pub instruments: Vec<String>,
    #[serde(default)]
    pub script: ScriptParams,
    #[serde(default)]
    pub links: Vec<LinkProfile>,
    #[serde(default)]
    pub sessions: Vec<SessionConfig>,
    #[serde(default)]
    pub throttle: ThrottleConfig,
    #[serde(default)]
    pub replication: ReplicationConfig,
    #[serde(default)]
    pub ats: AtsSection,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub faults: Vec<FaultEntry>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("scenario syntax: {0}")]
    Syntax(String),
    #[error("invalid instrument symbol `{0}`")]
    Instrument(String),
    #[error("script: {0}")]
    Script(#[from] ScriptError),
    #[error("links: {0}")]
    Network(#[from] NetworkError),
    #[error("session {session} uses unknown link {link}")]
    SessionLink { session: SessionId, link: u32 },
    #[error("sessions: {0}")]
    Sessions(String),
    #[error("agent {0} has neither `file` nor `text`, or both")]
    AgentSource(usize),
    #[error("agents need an ATS session")]
    NoAtsSession,
    #[error("agent {index} is hosted on session {host}, which is not a client session")]
    BadHost { index: usize, host: SessionId },
    #[error("instruction id {0} appears twice")]
    DuplicateAgent(u64),
    #[error("faults: {0}")]
    Fault(#[from] FaultError),
    #[error("session 0 is reserved for the operator console")]
    ReservedSession,
}

/// Session the runner uses to list instruments before the script starts.
pub const CONSOLE_SESSION: SessionId = 0;

impl Scenario {
    /// Parses scenario text; agent files are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ScenarioError> {
        let mut s: Scenario =
            toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        for a in &mut s.agents {
            if let (Some(file), None) = (&a.file, &a.text) {
                let path = base.join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| ScenarioError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                a.text = Some(text);
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn session_by_role(&self, role: Role) -> impl Iterator<Item = &SessionConfig> {
        self.sessions.iter().filter(move |s| s.role == role)
    }

    /// Agent instruction texts with their hosting session (`None` for the ATS).
    pub fn agent_texts(&self) -> impl Iterator<Item = (&str, Option<SessionId>)> {
        self.agents
            .iter()
            .map(|a| (a.text.as_deref().unwrap_or(""), a.host))
    }

    /// Instruments the operator lists at start: the scripted ones, then any
    /// other instrument an agent template trades.
    pub fn listed_instruments(&self) -> Vec<String> {
        let mut out = self.instruments.clone();
        for (text, _) in self.agent_texts() {
            let Ok(i) = AgentInstruction::from_toml(text) else {
                continue;
            };
            let used: Vec<String> = match i.template {
                Template::Order(o) => vec![o.instrument],
                Template::Combo(c) => c.legs.into_iter().map(|l| l.instrument).collect(),
            };
            for inst in used {
                if !out.contains(&inst) {
                    out.push(inst);
                }
            }
        }
        out
    }

    /// Everything that can be checked before the run starts.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if let Some(bad) = self.instruments.iter().find(|i| !is_valid_symbol(i)) {
            return Err(ScenarioError::Instrument(bad.clone()));
        }
        self.script.check()?;
        if self.instruments.is_empty() {
            return Err(ScriptError::NoInstruments.into());
        }
        if self.session_by_role(Role::Client).next().is_none() {
            return Err(ScriptError::NoSenders.into());
        }
        if let Some(bad) = self.script.senders.iter().find(|id| {
            !self
                .session_by_role(Role::Client)
                .any(|c| c.session_id == **id)
        }) {
            return Err(ScenarioError::Sessions(format!(
                "script sender {bad} is not a client session"
            )));
        }
        let net = Network::new(self.seed, &self.links)?;
        let mut gw = crate::gateway::Gateway::new();
        for s in &self.sessions {
            if s.session_id == CONSOLE_SESSION {
                return Err(ScenarioError::ReservedSession);
            }
            if !net.has_link(s.link_id) {
                return Err(ScenarioError::SessionLink {
                    session: s.session_id,
                    link: s.link_id,
                });
            }
            gw.add_session(s.clone())
                .map_err(|e| ScenarioError::Sessions(e.to_string()))?;
        }
        if let Some(id) = self.ats.session {
            if gw.session(id).is_none_or(|s| s.role != Role::Ats) {
                return Err(ScenarioError::Sessions(format!(
                    "ATS session {id} must exist with role ats"
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for (index, a) in self.agents.iter().enumerate() {
            if a.text.is_none() {
                return Err(ScenarioError::AgentSource(index));
            }
            match a.host {
                None if self.ats.session.is_none() => return Err(ScenarioError::NoAtsSession),
                Some(host) if gw.session(host).is_none_or(|s| s.role != Role::Client) => {
                    return Err(ScenarioError::BadHost { index, host })
                }
                _ => {}
            }
            // Malformed instructions are rejected by the ATS at upload time,
            // so only readable ids take part in this check.
            if let Ok(i) = AgentInstruction::from_toml(a.text.as_deref().unwrap_or("")) {
                if !ids.insert(i.id) {
                    return Err(ScenarioError::DuplicateAgent(i.id));
                }
            }
        }
        let links = self.links.iter().map(|l| l.link_id).collect();
        validate_plan(&self.faults, &ids, &links)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
seed = 7
duration_ms = 1000
instruments = ["A", "B"]

[[links]]
link_id = 1
base_latency_ms = 20.0
jitter_ms = 2.0

[[links]]
link_id = 2
base_latency_ms = 0.1

[[sessions]]
session_id = 1
participant = "p1"
link_id = 1
subscriptions = ["A", "B"]

[[sessions]]
session_id = 2
participant = "ats"
link_id = 2
subscriptions = ["A", "B"]
role = "ats"

[ats]
session = 2
budget_cap = 32

[[agents]]
text = """
id = 4
owner = "p1"
trigger = "price_above(A,1) AND price_above(B,1)"
q_min = 0.5
budget = 8
[template.order]
instrument = "A"
side = "buy"
price = 90
qty = 1
"""

[[faults]]
at_ms = 500
action = "crash_agent"
id = 4
"#;

    #[test]
    fn sample_parses_and_validates() {
        let s = Scenario::parse(SAMPLE, Path::new(".")).unwrap();
        assert_eq!(s.ats.config.budget_cap, 32);
        assert_eq!(s.throttle, ThrottleConfig::default());
        s.validate().unwrap();
    }

    #[test]
    fn unknown_fault_target_is_rejected_up_front() {
        let bad = SAMPLE.replace(
            "action = \"crash_agent\"\nid = 4",
            "action = \"crash_agent\"\nid = 9",
        );
        let s = Scenario::parse(&bad, Path::new(".")).unwrap();
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::Fault(FaultError::UnknownAgent { id: 9, .. }))
        ));
    }

    #[test]
    fn agents_need_a_host() {
        let bad = SAMPLE.replace("session = 2\n", "");
        let s = Scenario::parse(&bad, Path::new(".")).unwrap();
        assert_eq!(s.validate(), Err(ScenarioError::NoAtsSession));
    }
}
