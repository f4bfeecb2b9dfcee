//! Active replication of the core.
//!
//! Both replicas consume the same sequenced input log. The standby may trail
//! the primary by a configured number of events. When the primary crashes,
//! the standby is promoted once the failure has been detected and it has
//! caught up on every event the primary already published; it then
//! publishes from the next sequence number on, so the combined output has
//! neither gaps nor duplicates.

use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::Deserialize;
use thiserror::Error;

use super::fault::{FaultAction, FaultEntry};
use super::link::ms_to_us;
use crate::engine::{Engine, EngineHalt, LogRecord, OutRecord, OutputStream, SeqNo};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    pub enabled: bool,
    pub heartbeat_interval_ms: f64,
    pub detection_timeout_ms: f64,
    /// Events by which the standby trails the primary.
    pub lag_events: u64,
    /// Cost of one catch-up event on the standby.
    pub catch_up_us_per_event: u64,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        ReplicationConfig {
            enabled: true,
            heartbeat_interval_ms: 1.0,
            detection_timeout_ms: 5.0,
            lag_events: 0,
            catch_up_us_per_event: 20,
        }
    }
}

/// One completed fail-over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailoverRecord {
    pub crash_us: u64,
    /// Last sequence number whose outputs the crashed primary published.
    pub published_through: SeqNo,
    pub detected_us: u64,
    /// Events the standby replayed between the crash and promotion, counted
    /// as they were applied.
    pub catch_up_events: u64,
    pub promoted_us: u64,
    /// Detection timeout plus the catch-up time.
    pub bound_us: u64,
}

impl FailoverRecord {
    pub fn within_bound(&self) -> bool {
        self.promoted_us - self.crash_us <= self.bound_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("marketplace down at {at_us} us; outputs published through seq {published_through}")]
pub struct MarketplaceDown {
    pub at_us: u64,
    pub published_through: SeqNo,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    crash_us: u64,
    published_through: SeqNo,
    detected_us: u64,
    gap: u64,
}

#[derive(Debug, Clone)]
struct Replica {
    engine: Engine,
    applied: usize,
}

enum Applied {
    Out(Vec<OutRecord>),
    Halt(EngineHalt),
    Crashed,
}

#[derive(Debug, Clone)]
pub struct ReplicaPair {
    cfg: ReplicationConfig,
    log: Vec<LogRecord>,
    primary: Option<Replica>,
    standby: Option<Replica>,
    published_through: SeqNo,
    pending: Option<Pending>,
    failovers: Vec<FailoverRecord>,
    down: Option<MarketplaceDown>,
    poison: Option<SeqNo>,
}

fn apply(r: &mut Replica, rec: &LogRecord, poison: Option<SeqNo>) -> Applied {
    let res = catch_unwind(AssertUnwindSafe(|| {
        if poison == Some(rec.seq) {
            panic!("replica fault on seq {}", rec.seq);
        }
        r.engine.apply(rec)
    }));
    r.applied += 1;
    match res {
        Ok(Ok(out)) => Applied::Out(out),
        Ok(Err(h)) => Applied::Halt(h),
        Err(_) => Applied::Crashed,
    }
}

impl ReplicaPair {
    pub fn new(cfg: ReplicationConfig) -> Self {
        let fresh = || Replica {
            engine: Engine::new(),
            applied: 0,
        };
        ReplicaPair {
            standby: cfg.enabled.then(fresh),
            primary: Some(fresh()),
            cfg,
            log: Vec::new(),
            published_through: 0,
            pending: None,
            failovers: Vec::new(),
            down: None,
            poison: None,
        }
    }

    /// Test hook: applying `seq` crashes whichever replica processes it, as a
    /// logic bug would.
    pub fn with_poisoned_input(mut self, seq: SeqNo) -> Self {
        self.poison = Some(seq);
        self
    }

    pub fn failovers(&self) -> &[FailoverRecord] {
        &self.failovers
    }

    pub fn down(&self) -> Option<MarketplaceDown> {
        self.down
    }

    pub fn published_through(&self) -> SeqNo {
        self.published_through
    }

    pub fn awaiting_promotion(&self) -> Option<u64> {
        self.pending.map(|p| self.promotion_time(p))
    }

    /// The engine currently serving, if any.
    pub fn active(&self) -> Option<&Engine> {
        self.primary.as_ref().map(|r| &r.engine)
    }

    pub fn halted(&self) -> Option<&EngineHalt> {
        self.active().and_then(Engine::halted)
    }

    fn promotion_time(&self, p: Pending) -> u64 {
        p.detected_us
            .max(p.crash_us + p.gap * self.cfg.catch_up_us_per_event)
    }

    /// Appends one sequenced event to the log and returns the outputs
    /// published for it. While a promotion is pending the event is only logged.
    pub fn submit(
        &mut self,
        rec: LogRecord,
        now_us: u64,
    ) -> Result<Vec<OutRecord>, MarketplaceDown> {
        if let Some(d) = self.down {
            return Err(d);
        }
        self.log.push(rec);
        let mut out = Vec::new();
        if let Some(p) = self.primary.as_mut() {
            let rec = &self.log[self.log.len() - 1];
            match apply(p, rec, self.poison) {
                Applied::Out(o) => {
                    self.published_through = rec.seq;
                    out = o;
                }
                Applied::Halt(h) => {
                    self.published_through = rec.seq;
                    out.push(h.record());
                }
                Applied::Crashed => {
                    // The event is logged but its outputs were never published.
                    self.crash_primary(now_us)?;
                }
            }
        }
        self.advance_standby(now_us)?;
        Ok(out)
    }

    fn advance_standby(&mut self, now_us: u64) -> Result<(), MarketplaceDown> {
        let lag = self.cfg.lag_events as usize;
        let Some(s) = self.standby.as_mut() else {
            return Ok(());
        };
        // A standby never runs ahead of what the primary has published.
        let limit = if self.pending.is_some() {
            s.applied
        } else {
            self.log.len().saturating_sub(lag)
        };
        while s.applied < limit {
            if let Applied::Crashed = apply(s, &self.log[s.applied], self.poison) {
                self.standby = None;
                if self.primary.is_none() {
                    return Err(self.go_down(now_us));
                }
                break;
            }
        }
        Ok(())
    }

    fn go_down(&mut self, at_us: u64) -> MarketplaceDown {
        let d = MarketplaceDown {
            at_us,
            published_through: self.published_through,
        };
        self.primary = None;
        self.standby = None;
        self.pending = None;
        self.down = Some(d);
        d
    }

    /// Kills the primary. Returns the time at which the standby will be
    /// promoted, or reports the marketplace down when there is no standby.
    pub fn crash_primary(&mut self, now_us: u64) -> Result<u64, MarketplaceDown> {
        if let Some(d) = self.down {
            return Err(d);
        }
        if let Some(at) = self.awaiting_promotion() {
            return Ok(at);
        }
        self.primary = None;
        let Some(s) = &self.standby else {
            return Err(self.go_down(now_us));
        };
        let hb = ms_to_us(self.cfg.heartbeat_interval_ms).max(1);
        let last_heartbeat = now_us / hb * hb;
        let published = self
            .log
            .iter()
            .take_while(|r| r.seq <= self.published_through)
            .count();
        let p = Pending {
            crash_us: now_us,
            published_through: self.published_through,
            detected_us: (last_heartbeat + ms_to_us(self.cfg.detection_timeout_ms)).max(now_us),
            gap: published.saturating_sub(s.applied) as u64,
        };
        self.pending = Some(p);
        Ok(self.promotion_time(p))
    }

    /// Completes a pending promotion: the standby catches up on published
    /// events silently, then processes and publishes everything logged
    /// during the outage.
    pub fn promote(&mut self, now_us: u64) -> Result<Vec<OutRecord>, MarketplaceDown> {
        if let Some(d) = self.down {
            return Err(d);
        }
        let Some(p) = self.pending.take() else {
            return Ok(Vec::new());
        };
        let Some(mut s) = self.standby.take() else {
            return Err(self.go_down(now_us));
        };
        let mut caught_up = 0;
        let mut out = Vec::new();
        while s.applied < self.log.len() {
            let rec = &self.log[s.applied];
            let seq = rec.seq;
            let published = seq <= p.published_through;
            match apply(&mut s, rec, self.poison) {
                Applied::Crashed => return Err(self.go_down(now_us)),
                Applied::Out(o) if !published => {
                    out.extend(o);
                    self.published_through = seq;
                }
                Applied::Halt(h) if !published => {
                    out.push(h.record());
                    self.published_through = seq;
                }
                _ => caught_up += 1,
            }
        }
        self.failovers.push(FailoverRecord {
            crash_us: p.crash_us,
            published_through: p.published_through,
            detected_us: p.detected_us,
            catch_up_events: caught_up,
            promoted_us: now_us,
            bound_us: ms_to_us(self.cfg.detection_timeout_ms)
                + caught_up * self.cfg.catch_up_us_per_event,
        });
        self.primary = Some(s);
        Ok(out)
    }
}

/// Processing time of each record for a core that handles one event every
/// `service_us` and never starts before the record's arrival millisecond.
pub fn processing_times(log: &[LogRecord], service_us: u64) -> Vec<u64> {
    let mut t = 0u64;
    log.iter()
        .enumerate()
        .map(|(i, r)| {
            let arrival = r.ts * 1000;
            t = if i == 0 {
                arrival
            } else {
                arrival.max(t + service_us)
            };
            t
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub stream: OutputStream,
    pub failovers: Vec<FailoverRecord>,
    pub down: Option<MarketplaceDown>,
}

/// Drives a replica pair through a recorded log, applying the plan's
/// `crash_primary` entries. Other fault kinds do not concern the core.
pub fn run_replicated(
    log: &[LogRecord],
    plan: &[FaultEntry],
    cfg: &ReplicationConfig,
) -> ReplicationOutcome {
    run_pair(ReplicaPair::new(cfg.clone()), log, plan)
}

pub(crate) fn run_pair(
    mut pair: ReplicaPair,
    log: &[LogRecord],
    plan: &[FaultEntry],
) -> ReplicationOutcome {
    let times = processing_times(log, pair.cfg.catch_up_us_per_event);
    let mut crashes = plan
        .iter()
        .filter(|f| f.action == FaultAction::CrashPrimary)
        .map(|f| f.at_ms * 1000)
        .peekable();
    let mut stream = OutputStream::default();
    let publish =
        |stream: &mut OutputStream, out: Result<Vec<OutRecord>, MarketplaceDown>| match out {
            Ok(o) => {
                o.iter().for_each(|r| stream.push(r));
                true
            }
            Err(_) => false,
        };
    'records: for (rec, &t) in log.iter().zip(&times) {
        loop {
            let promo = pair.awaiting_promotion().filter(|p| *p <= t);
            let crash = crashes.peek().copied().filter(|c| *c <= t);
            match (promo, crash) {
                (Some(p), c) if c.is_none_or(|c| p <= c) => {
                    if !publish(&mut stream, pair.promote(p)) {
                        break 'records;
                    }
                }
                (_, Some(c)) => {
                    crashes.next();
                    if pair.crash_primary(c).is_err() {
                        break 'records;
                    }
                }
                _ => break,
            }
        }
        if !publish(&mut stream, pair.submit(rec.clone(), t)) || pair.halted().is_some() {
            break;
        }
    }
    if let Some(p) = pair.awaiting_promotion() {
        publish(&mut stream, pair.promote(p));
    }
    stream.halted = pair.halted().cloned();
    ReplicationOutcome {
        stream,
        failovers: pair.failovers.clone(),
        down: pair.down,
    }
}
