use std::collections::BTreeSet;

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::LinkId;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum FaultAction {
    CrashPrimary,
    CrashAgent {
        id: u64,
    },
    /// Adds `depth` phantom messages to the outbound queue of `link`, or of
    /// the gateway as a whole when no link is given.
    CongestionBurst {
        #[serde(default)]
        link: Option<LinkId>,
        depth: u64,
    },
    /// Clears every congestion burst.
    Restore,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct FaultEntry {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FaultError {
    #[error("fault {index} is earlier than the one before it")]
    Unordered { index: usize },
    #[error("fault {index} targets unknown agent {id}")]
    UnknownAgent { index: usize, id: u64 },
    #[error("fault {index} targets unknown link {link}")]
    UnknownLink { index: usize, link: LinkId },
}

/// Checked before the run starts: times must be non-decreasing and every
/// target must exist.
pub fn validate_plan(
    plan: &[FaultEntry],
    agents: &BTreeSet<u64>,
    links: &BTreeSet<LinkId>,
) -> Result<(), FaultError> {
    let mut prev = 0;
    for (index, f) in plan.iter().enumerate() {
        if f.at_ms < prev {
            return Err(FaultError::Unordered { index });
        }
        prev = f.at_ms;
        match &f.action {
            FaultAction::CrashAgent { id } if !agents.contains(id) => {
                return Err(FaultError::UnknownAgent { index, id: *id })
            }
            FaultAction::CongestionBurst {
                link: Some(link), ..
            } if !links.contains(link) => {
                return Err(FaultError::UnknownLink { index, link: *link })
            }
            _ => {}
        }
    }
    Ok(())
}
