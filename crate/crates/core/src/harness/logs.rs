//! Run artifacts: the four logs and their on-disk layout.
//!
//! The network trace records what happens outside the core (sends, gateway
//! sequencing, core processing times, deliveries, throttle and fault events)
//! so that every metric can be recomputed from the logs alone.

use std::fs;
use std::path::Path;

use crate::ats::AtsEvent;
use crate::engine::{seal, unseal, LogRecord, OutRecord, RecordError, Ref, SeqNo};
use crate::gateway::{LinkId, SessionId};

pub const INPUT_LOG: &str = "input.log";
pub const OUTPUT_LOG: &str = "output.log";
pub const ATS_LOG: &str = "ats.log";
pub const NET_LOG: &str = "net.log";
pub const METRICS_FILE: &str = "metrics.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetEvent {
    /// First line of every trace.
    Run {
        seed: u64,
        duration_ms: u64,
        bucket_ms: u64,
        staleness_us: u64,
        send_window_us: u64,
        eval_us: u64,
    },
    /// A participant or agent put a message on its link.
    Tx {
        us: u64,
        session: SessionId,
        subject: Option<Ref>,
    },
    /// The gateway refused a message; the core never saw it.
    Refused {
        us: u64,
        session: SessionId,
        reason: String,
    },
    Seq {
        us: u64,
        seq: SeqNo,
        session: SessionId,
        delivery_us: u64,
    },
    Core {
        us: u64,
        seq: SeqNo,
    },
    /// Output line `line` (0-based) reached a session.
    Rx {
        us: u64,
        session: SessionId,
        line: u64,
    },
    /// Matching rate factor in thousandths.
    Rate {
        us: u64,
        milli: u64,
    },
    Crash {
        us: u64,
    },
    Promote {
        us: u64,
        crash_us: u64,
        published_through: SeqNo,
        detected_us: u64,
        catch_up: u64,
        bound_us: u64,
    },
    Down {
        us: u64,
        published_through: SeqNo,
    },
    Burst {
        us: u64,
        link: Option<LinkId>,
        depth: u64,
    },
    Restore {
        us: u64,
    },
    Kill {
        us: u64,
        id: u64,
    },
    Recover {
        us: u64,
        id: u64,
    },
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

impl NetEvent {
    pub fn encode(&self) -> String {
        let body = match self {
            NetEvent::Run {
                seed,
                duration_ms,
                bucket_ms,
                staleness_us,
                send_window_us,
                eval_us,
            } => {
                format!("RUN|{seed}|{duration_ms}|{bucket_ms}|{staleness_us}|{send_window_us}|{eval_us}")
            }
            NetEvent::Tx {
                us,
                session,
                subject,
            } => format!("TX|{us}|{session}|{}", opt(subject)),
            NetEvent::Refused {
                us,
                session,
                reason,
            } => {
                format!(
                    "REFUSED|{us}|{session}|{}",
                    reason.replace(['|', '\n'], " ")
                )
            }
            NetEvent::Seq {
                us,
                seq,
                session,
                delivery_us,
            } => format!("SEQ|{us}|{seq}|{session}|{delivery_us}"),
            NetEvent::Core { us, seq } => format!("CORE|{us}|{seq}"),
            NetEvent::Rx { us, session, line } => format!("RX|{us}|{session}|{line}"),
            NetEvent::Rate { us, milli } => format!("RATE|{us}|{milli}"),
            NetEvent::Crash { us } => format!("CRASH|{us}"),
            NetEvent::Promote {
                us,
                crash_us,
                published_through,
                detected_us,
                catch_up,
                bound_us,
            } => {
                format!("PROMOTE|{us}|{crash_us}|{published_through}|{detected_us}|{catch_up}|{bound_us}")
            }
            NetEvent::Down {
                us,
                published_through,
            } => format!("DOWN|{us}|{published_through}"),
            NetEvent::Burst { us, link, depth } => format!("BURST|{us}|{}|{depth}", opt(link)),
            NetEvent::Restore { us } => format!("RESTORE|{us}"),
            NetEvent::Kill { us, id } => format!("KILL|{us}|{id}"),
            NetEvent::Recover { us, id } => format!("RECOVER|{us}|{id}"),
        };
        seal(body)
    }

    pub fn parse(line: &str) -> Result<NetEvent, RecordError> {
        let body = unseal(line)?;
        let f: Vec<&str> = body.split('|').collect();
        let want = |n: usize| {
            if f.len() == n {
                Ok(())
            } else {
                Err(RecordError::Arity {
                    kind: f[0].to_string(),
                    expected: n,
                    got: f.len(),
                })
            }
        };
        let n = |i: usize| -> Result<u64, RecordError> {
            f[i].parse()
                .map_err(|_| RecordError::Field("number", f[i].to_string()))
        };
        let kind = f[0];
        let arity = match kind {
            "RUN" => 7,
            "TX" | "REFUSED" | "RX" | "BURST" => 4,
            "SEQ" => 5,
            "CORE" | "RATE" | "DOWN" | "KILL" | "RECOVER" => 3,
            "CRASH" | "RESTORE" => 2,
            "PROMOTE" => 7,
            other => return Err(RecordError::UnknownType(other.to_string())),
        };
        want(arity)?;
        Ok(match kind {
            "RUN" => NetEvent::Run {
                seed: n(1)?,
                duration_ms: n(2)?,
                bucket_ms: n(3)?,
                staleness_us: n(4)?,
                send_window_us: n(5)?,
                eval_us: n(6)?,
            },
            "TX" => NetEvent::Tx {
                us: n(1)?,
                session: n(2)? as SessionId,
                subject: if f[3] == "-" {
                    None
                } else {
                    Some(f[3].parse()?)
                },
            },
            "REFUSED" => NetEvent::Refused {
                us: n(1)?,
                session: n(2)? as SessionId,
                reason: f[3].to_string(),
            },
            "SEQ" => NetEvent::Seq {
                us: n(1)?,
                seq: n(2)?,
                session: n(3)? as SessionId,
                delivery_us: n(4)?,
            },
            "CORE" => NetEvent::Core {
                us: n(1)?,
                seq: n(2)?,
            },
            "RX" => NetEvent::Rx {
                us: n(1)?,
                session: n(2)? as SessionId,
                line: n(3)?,
            },
            "RATE" => NetEvent::Rate {
                us: n(1)?,
                milli: n(2)?,
            },
            "CRASH" => NetEvent::Crash { us: n(1)? },
            "PROMOTE" => NetEvent::Promote {
                us: n(1)?,
                crash_us: n(2)?,
                published_through: n(3)?,
                detected_us: n(4)?,
                catch_up: n(5)?,
                bound_us: n(6)?,
            },
            "DOWN" => NetEvent::Down {
                us: n(1)?,
                published_through: n(2)?,
            },
            "BURST" => NetEvent::Burst {
                us: n(1)?,
                link: if f[2] == "-" {
                    None
                } else {
                    Some(n(2)? as LinkId)
                },
                depth: n(3)?,
            },
            "RESTORE" => NetEvent::Restore { us: n(1)? },
            "KILL" => NetEvent::Kill {
                us: n(1)?,
                id: n(2)?,
            },
            _ => NetEvent::Recover {
                us: n(1)?,
                id: n(2)?,
            },
        })
    }
}

/// Parsed contents of a run directory.
#[derive(Debug, Clone, Default)]
pub struct RunLogs {
    pub input: Vec<LogRecord>,
    pub output: Vec<OutRecord>,
    pub ats: Vec<AtsEvent>,
    pub net: Vec<NetEvent>,
    /// Some line failed to parse; everything after it in that log was dropped.
    pub truncated: bool,
}

fn parse_all<T>(
    text: &str,
    parse: impl Fn(&str) -> Result<T, RecordError>,
    truncated: &mut bool,
) -> Vec<T> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        match parse(line) {
            Ok(v) => out.push(v),
            Err(_) => {
                *truncated = true;
                break;
            }
        }
    }
    if !text.is_empty() && !text.ends_with('\n') {
        *truncated = true;
    }
    out
}

impl RunLogs {
    pub fn read_dir(dir: &Path) -> std::io::Result<RunLogs> {
        let read = |name: &str| fs::read_to_string(dir.join(name));
        let mut truncated = false;
        let input = parse_all(&read(INPUT_LOG)?, LogRecord::parse, &mut truncated);
        let output = parse_all(&read(OUTPUT_LOG)?, OutRecord::parse, &mut truncated);
        let ats = parse_all(&read(ATS_LOG)?, AtsEvent::parse, &mut truncated);
        let net = parse_all(&read(NET_LOG)?, NetEvent::parse, &mut truncated);
        Ok(RunLogs {
            input,
            output,
            ats,
            net,
            truncated,
        })
    }
}

/// Joins lines into newline-terminated text.
pub fn lines_text<S: AsRef<str>>(lines: &[S]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(l.as_ref());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::OrderId;

    #[test]
    fn net_events_round_trip() {
        let all = [
            NetEvent::Run {
                seed: 1,
                duration_ms: 2,
                bucket_ms: 3,
                staleness_us: 4,
                send_window_us: 5,
                eval_us: 6,
            },
            NetEvent::Tx {
                us: 1,
                session: 2,
                subject: Some(Ref::Order(OrderId(3))),
            },
            NetEvent::Tx {
                us: 1,
                session: 2,
                subject: None,
            },
            NetEvent::Refused {
                us: 1,
                session: 2,
                reason: "owner-mismatch".into(),
            },
            NetEvent::Seq {
                us: 1,
                seq: 2,
                session: 3,
                delivery_us: 4,
            },
            NetEvent::Core { us: 1, seq: 2 },
            NetEvent::Rx {
                us: 1,
                session: 2,
                line: 3,
            },
            NetEvent::Rate { us: 1, milli: 500 },
            NetEvent::Crash { us: 1 },
            NetEvent::Promote {
                us: 1,
                crash_us: 2,
                published_through: 3,
                detected_us: 4,
                catch_up: 5,
                bound_us: 6,
            },
            NetEvent::Down {
                us: 1,
                published_through: 2,
            },
            NetEvent::Burst {
                us: 1,
                link: None,
                depth: 9,
            },
            NetEvent::Burst {
                us: 1,
                link: Some(4),
                depth: 9,
            },
            NetEvent::Restore { us: 1 },
            NetEvent::Kill { us: 1, id: 2 },
            NetEvent::Recover { us: 1, id: 2 },
        ];
        for e in all {
            assert_eq!(NetEvent::parse(&e.encode()).unwrap(), e);
        }
        assert!(NetEvent::parse("CORE|1|2|00000000").is_err());
    }
}
