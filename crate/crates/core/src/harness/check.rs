//! Post-run verification.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::logs::{lines_text, RunLogs, INPUT_LOG, OUTPUT_LOG};
use super::metrics::MetricsReport;
use super::world::RunOutput;
use crate::ats::AtsEvent;
use crate::engine::{replay_lines, Command, Origin, OutMsg, OutRecord, Party, Ref, SeqNo, TradeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayVerdict {
    Pass {
        records: usize,
        outputs: usize,
    },
    /// `seq` is the first input event whose outputs differ, or the first
    /// input record that could not be replayed.
    Fail {
        seq: SeqNo,
        detail: String,
    },
}

impl ReplayVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, ReplayVerdict::Pass { .. })
    }
}

fn seq_of_line(line: &str) -> Option<SeqNo> {
    line.split('|').next()?.parse().ok()
}

/// Replays `input` through a fresh core and compares the result line by
/// line with `output`.
pub fn replay_check_text(input: &str, output: &str) -> ReplayVerdict {
    let stream = match replay_lines(input.lines()) {
        Ok(s) => s,
        Err(e) => {
            return ReplayVerdict::Fail {
                seq: e.bad_seq(),
                detail: e.to_string(),
            }
        }
    };
    let stored: Vec<&str> = output.lines().filter(|l| !l.is_empty()).collect();
    let n = stream.lines.len().max(stored.len());
    for i in 0..n {
        let (got, want) = (
            stream.lines.get(i).map(String::as_str),
            stored.get(i).copied(),
        );
        if got != want {
            let seq = want
                .and_then(seq_of_line)
                .into_iter()
                .chain(got.and_then(seq_of_line))
                .min()
                .unwrap_or(0);
            let detail = format!(
                "output line {}: stored `{}`, replayed `{}`",
                i + 1,
                want.unwrap_or("<missing>"),
                got.unwrap_or("<missing>")
            );
            return ReplayVerdict::Fail { seq, detail };
        }
    }
    ReplayVerdict::Pass {
        records: input.lines().filter(|l| !l.is_empty()).count(),
        outputs: stored.len(),
    }
}

/// Reads a run directory and checks that its output log is exactly what the
/// core produces from its input log.
pub fn replay_check(dir: &Path) -> std::io::Result<ReplayVerdict> {
    let input = fs::read_to_string(dir.join(INPUT_LOG))?;
    let output = fs::read_to_string(dir.join(OUTPUT_LOG))?;
    Ok(replay_check_text(&input, &output))
}

/// Core output that concerns neither agent orders nor books they rested in,
/// with sequence numbers removed so that runs with different agent traffic
/// can be compared.
pub fn non_ats_projection(logs: &RunLogs) -> Vec<String> {
    let mut refs = BTreeSet::new();
    let mut instruments = BTreeSet::new();
    for rec in &logs.input {
        match &rec.cmd {
            Command::Submit(o) if o.origin == Origin::Ats => {
                refs.insert(Ref::Order(o.order_id));
                instruments.insert(o.instrument.clone());
            }
            Command::Combo(c) if c.origin == Origin::Ats => {
                refs.insert(Ref::Combo(c.combo_id));
                instruments.extend(c.legs.iter().map(|l| l.instrument.clone()));
            }
            _ => {}
        }
    }
    let party_ref = |p: Party| match p {
        Party::Order(id) => Ref::Order(id),
        Party::ComboLeg(id, _) => Ref::Combo(id),
    };
    logs.output
        .iter()
        .filter(|r| match &r.msg {
            OutMsg::Ack(t)
            | OutMsg::Reject { target: t, .. }
            | OutMsg::Cancelled { target: t, .. } => !refs.contains(t),
            OutMsg::Trade(t) => {
                !refs.contains(&party_ref(t.buy)) && !refs.contains(&party_ref(t.sell))
            }
            OutMsg::ComboFill { combo, .. } | OutMsg::Virtual { combo, .. } => {
                !refs.contains(&Ref::Combo(*combo))
            }
            OutMsg::Top(t) => !instruments.contains(&t.instrument),
            OutMsg::Halt(_) | OutMsg::Nullified { .. } => true,
        })
        .map(|r| {
            let mut msg = r.msg.clone();
            if let OutMsg::Trade(t) = &mut msg {
                t.trade_id = TradeId {
                    seq: 0,
                    n: t.trade_id.n,
                };
            }
            OutRecord { seq: 0, msg }.encode()
        })
        .collect()
}

/// Evaluation and activation records of every agent except `skip`, with
/// each activation's triggering sequence number replaced by the command that
/// produced it, so that agent traffic elsewhere does not shift them.
pub fn agent_projection(logs: &RunLogs, skip: u64) -> Vec<String> {
    let by_seq: BTreeMap<SeqNo, String> = logs
        .input
        .iter()
        .map(|r| (r.seq, r.cmd.to_wire()))
        .collect();
    logs.ats
        .iter()
        .filter_map(|e| match e {
            AtsEvent::Evaluated { id, .. } if *id != skip => Some(e.encode()),
            AtsEvent::Activated {
                t,
                id,
                src,
                quality,
                q_min,
                refs,
            } if *id != skip => {
                let refs: Vec<String> = refs.iter().map(Ref::to_string).collect();
                Some(format!(
                    "ACT|{t}|{id}|{}|{}|{}|{q_min}|{}",
                    by_seq.get(src).map_or("?", String::as_str),
                    quality.num,
                    quality.den,
                    refs.join(";")
                ))
            }
            _ => None,
        })
        .collect()
}

/// Outcome of one invariant suite on a finished run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        SuiteResult {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

/// Checks a run against the invariants every run must satisfy. `recomputed`
/// is the report rebuilt from the run's logs alone.
pub fn run_suites(out: &RunOutput, recomputed: &MetricsReport) -> Vec<SuiteResult> {
    let m = &out.metrics;
    let replay = replay_check_text(
        &lines_text(&out.input_lines()),
        &lines_text(&out.output_lines()),
    );
    let unordered: Vec<&str> = m
        .distributions()
        .iter()
        .filter(|(_, d)| !d.ordered())
        .map(|(n, _)| *n)
        .collect();
    let stopped = match (&out.halted, &out.down) {
        (Some(h), _) => format!("halted at seq {}: {}", h.seq, h.reason),
        (None, Some(d)) => format!("marketplace down after seq {}", d.published_through),
        (None, None) => "running at end".to_string(),
    };
    vec![
        SuiteResult::new("replay", replay.passed(), format!("{replay:?}")),
        SuiteResult::new("conservation", m.fates.balanced(), format!("{:?}", m.fates)),
        SuiteResult::new(
            "percentile-order",
            unordered.is_empty(),
            unordered.join(","),
        ),
        SuiteResult::new(
            "recompute",
            recomputed == m,
            if recomputed == m {
                "live report equals log-derived report"
            } else {
                "reports differ"
            },
        ),
        SuiteResult::new(
            "quality-gate",
            m.quality_gate_violations == 0,
            m.quality_gate_violations.to_string(),
        ),
        SuiteResult::new(
            "failover-bound",
            m.failovers.iter().all(|f| f.within_bound()),
            format!("{} failovers", m.failovers.len()),
        ),
        SuiteResult::new(
            "no-stop",
            out.halted.is_none() && out.down.is_none(),
            stopped,
        ),
    ]
}
