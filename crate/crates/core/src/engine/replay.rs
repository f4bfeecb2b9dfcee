//! Log replay and rollback recovery.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Engine, EngineHalt, LogRecord, OutMsg, OutRecord, RecordError, SeqNo};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("sequence gap: expected {expected}, found {found}")]
    Gap { expected: SeqNo, found: SeqNo },
    #[error("corrupt record at seq {seq}: {source}")]
    Corrupt { seq: SeqNo, source: RecordError },
    #[error("nullification target {0} is not in the log")]
    UnknownTarget(SeqNo),
}

impl ReplayError {
    /// The first sequence number that could not be replayed.
    pub fn bad_seq(&self) -> SeqNo {
        match self {
            ReplayError::Gap { expected, .. } => *expected,
            ReplayError::Corrupt { seq, .. } => *seq,
            ReplayError::UnknownTarget(s) => *s,
        }
    }
}

/// Encoded output lines of a replay, plus the halt that ended it, if any.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OutputStream {
    pub lines: Vec<String>,
    pub halted: Option<EngineHalt>,
}

impl OutputStream {
    pub fn push(&mut self, rec: &OutRecord) {
        self.lines.push(rec.encode());
    }

    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s
    }

    /// Hex SHA-256 of the newline-terminated stream.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.lines {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Feeds one record to the engine, appending outputs. Returns false once halted.
pub fn step_into(engine: &mut Engine, rec: &LogRecord, out: &mut OutputStream) -> bool {
    match engine.apply(rec) {
        Ok(msgs) => {
            for m in &msgs {
                out.push(m);
            }
            true
        }
        Err(h) => {
            out.push(&h.record());
            out.halted = Some(h);
            false
        }
    }
}

/// Replays a parsed log from an empty engine. Sequence numbers must run 1, 2, 3...
pub fn replay(log: &[LogRecord]) -> Result<OutputStream, ReplayError> {
    let mut engine = Engine::new();
    let mut out = OutputStream::default();
    for (i, rec) in log.iter().enumerate() {
        let expected = i as SeqNo + 1;
        if rec.seq != expected {
            return Err(ReplayError::Gap {
                expected,
                found: rec.seq,
            });
        }
        if !step_into(&mut engine, rec, &mut out) {
            break;
        }
    }
    Ok(out)
}

/// Replays raw log lines, verifying each record's checksum first. A corrupt
/// line aborts the replay with that line's sequence number.
pub fn replay_lines<'a, I>(lines: I) -> Result<OutputStream, ReplayError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut log = Vec::new();
    for (i, line) in lines.into_iter().filter(|l| !l.is_empty()).enumerate() {
        let expected = i as SeqNo + 1;
        let rec = LogRecord::parse(line).map_err(|source| ReplayError::Corrupt {
            seq: LogRecord::peek_seq(line).unwrap_or(expected),
            source,
        })?;
        if rec.seq != expected {
            return Err(ReplayError::Gap {
                expected,
                found: rec.seq,
            });
        }
        log.push(rec);
    }
    replay(&log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NullificationNotice {
    pub seq: SeqNo,
    /// Outputs for this event had already been disseminated before recovery.
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub engine: Engine,
    pub stream: OutputStream,
    pub notices: Vec<NullificationNotice>,
}

/// Rebuilds state from the log, skipping the nullified events. Each skipped
/// event yields a nullification notice in the output stream, flagged when its
/// original outputs were already published.
pub fn rollback_restart(
    log: &[LogRecord],
    nullify: &BTreeSet<SeqNo>,
    published_through: SeqNo,
) -> Result<Recovery, ReplayError> {
    let present: BTreeSet<SeqNo> = log.iter().map(|r| r.seq).collect();
    if let Some(missing) = nullify.iter().find(|s| !present.contains(s)) {
        return Err(ReplayError::UnknownTarget(*missing));
    }
    let mut engine = Engine::new();
    let mut stream = OutputStream::default();
    let mut notices = Vec::new();
    for (i, rec) in log.iter().enumerate() {
        let expected = i as SeqNo + 1;
        if rec.seq != expected {
            return Err(ReplayError::Gap {
                expected,
                found: rec.seq,
            });
        }
        if nullify.contains(&rec.seq) {
            let flagged = rec.seq <= published_through;
            notices.push(NullificationNotice {
                seq: rec.seq,
                flagged,
            });
            stream.push(&OutRecord {
                seq: rec.seq,
                msg: OutMsg::Nullified { flagged },
            });
            continue;
        }
        if !step_into(&mut engine, rec, &mut stream) {
            break;
        }
    }
    Ok(Recovery {
        engine,
        stream,
        notices,
    })
}
