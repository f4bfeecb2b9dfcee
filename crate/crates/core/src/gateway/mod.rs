//! Access point in front of the core: validates and sequences inbound wire
//! messages, fans out market data, and computes the congestion throttle.
//!
//! Deliveries are bucketed by arrival millisecond. A bucket is sequenced once
//! the clock has moved past it, in `(ms, link_id, session_id, arrival)` order,
//! so the sequence is a pure function of delivery times.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Deserialize;
use thiserror::Error;

use crate::engine::{seal, Command, LogRecord, Origin, OutMsg, OutRecord, Party, Ref, SeqNo};

pub type SessionId = u32;
pub type LinkId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Client,
    Ats,
    Operator,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct SessionConfig {
    pub session_id: SessionId,
    pub participant: String,
    pub link_id: LinkId,
    #[serde(default)]
    pub subscriptions: BTreeSet<String>,
    #[serde(default)]
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("participant {participant} already has a session on link {link}")]
    DuplicateSession { participant: String, link: LinkId },
    #[error("session {0} already exists")]
    DuplicateSessionId(SessionId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
}

/// A reject sent back to the originating session only; the core never sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionReject {
    pub session_id: SessionId,
    pub at_us: u64,
    pub reason: String,
}

impl SessionReject {
    pub fn to_wire(&self) -> String {
        seal(format!("GREJ|{}", self.reason))
    }
}

#[derive(Debug, Clone)]
struct Pending {
    ms: u64,
    delivery_us: u64,
    link_id: LinkId,
    session_id: SessionId,
    arrival: u64,
    cmd: Command,
}

/// A sequenced record with the session it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequenced {
    pub record: LogRecord,
    pub session_id: SessionId,
    pub delivery_us: u64,
}

/// Linear throttle on the matching rate driven by outbound queue depth.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThrottleConfig {
    pub high_watermark: u64,
    pub beta: f64,
    pub r_min: f64,
    /// Core events per simulated second at rate factor 1.
    pub base_rate: u64,
}

impl Default for ThrottleConfig {
    fn default() -> Self {
        ThrottleConfig {
            high_watermark: 200,
            beta: 0.5,
            r_min: 0.2,
            base_rate: 50_000,
        }
    }
}

impl ThrottleConfig {
    pub fn congestion(&self, depth: u64) -> f64 {
        if self.high_watermark == 0 {
            return if depth > 0 { 1.0 } else { 0.0 };
        }
        (depth as f64 / self.high_watermark as f64).min(1.0)
    }

    pub fn rate_factor(&self, depth: u64) -> f64 {
        (1.0 - self.beta * self.congestion(depth)).max(self.r_min)
    }

    /// Simulated microseconds between two core events at this depth.
    pub fn service_interval_us(&self, depth: u64) -> u64 {
        let rate = self.base_rate as f64 * self.rate_factor(depth);
        (1e6 / rate).ceil() as u64
    }
}

#[derive(Debug, Default)]
pub struct Gateway {
    sessions: BTreeMap<SessionId, SessionConfig>,
    by_participant_link: BTreeSet<(String, LinkId)>,
    pending: Vec<Pending>,
    arrivals: u64,
    next_seq: SeqNo,
    owners: HashMap<Ref, SessionId>,
}

impl Gateway {
    pub fn new() -> Self {
        Gateway {
            next_seq: 1,
            ..Default::default()
        }
    }

    pub fn add_session(&mut self, cfg: SessionConfig) -> Result<(), GatewayError> {
        if self.sessions.contains_key(&cfg.session_id) {
            return Err(GatewayError::DuplicateSessionId(cfg.session_id));
        }
        let key = (cfg.participant.clone(), cfg.link_id);
        if self.by_participant_link.contains(&key) {
            return Err(GatewayError::DuplicateSession {
                participant: key.0,
                link: key.1,
            });
        }
        self.by_participant_link.insert(key);
        self.sessions.insert(cfg.session_id, cfg);
        Ok(())
    }

    pub fn session(&self, id: SessionId) -> Option<&SessionConfig> {
        self.sessions.get(&id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionConfig> {
        self.sessions.values()
    }

    pub fn next_seq(&self) -> SeqNo {
        self.next_seq
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Earliest simulated time at which buffered deliveries can be sequenced.
    pub fn next_flush_us(&self) -> Option<u64> {
        self.pending.iter().map(|p| (p.ms + 1) * 1000).min()
    }

    /// Accepts one wire line delivered at `delivery_us`. Malformed or
    /// unauthorized messages are rejected to the session only.
    pub fn ingest(
        &mut self,
        delivery_us: u64,
        session_id: SessionId,
        line: &str,
    ) -> Result<(), SessionReject> {
        let reject = |reason: String| SessionReject {
            session_id,
            at_us: delivery_us,
            reason,
        };
        let Some(session) = self.sessions.get(&session_id) else {
            return Err(reject("unknown-session".into()));
        };
        let cmd = Command::from_wire(line).map_err(|e| reject(format!("malformed: {e}")))?;
        match (&cmd, session.role) {
            (Command::Admin(_), Role::Operator) => {}
            (Command::Admin(_), _) => return Err(reject("not-permitted".into())),
            (_, Role::Operator) => return Err(reject("not-permitted".into())),
            _ => {}
        }
        // The ATS submits on behalf of instruction owners; its origin is checked instead.
        if let (Some(owner), false) = (cmd.owner(), session.role == Role::Ats) {
            if owner != session.participant {
                return Err(reject("owner-mismatch".into()));
            }
        }
        if let Some(origin) = cmd.origin() {
            let expected = match session.role {
                Role::Ats => Origin::Ats,
                _ => Origin::Client,
            };
            if origin != expected {
                return Err(reject("origin-mismatch".into()));
            }
        }
        self.arrivals += 1;
        self.pending.push(Pending {
            ms: delivery_us / 1000,
            delivery_us,
            link_id: session.link_id,
            session_id,
            arrival: self.arrivals,
            cmd,
        });
        Ok(())
    }

    /// Sequences every buffered delivery whose millisecond has fully elapsed
    /// at `now_us`.
    pub fn flush(&mut self, now_us: u64) -> Vec<LogRecord> {
        self.flush_detailed(now_us)
            .into_iter()
            .map(|s| s.record)
            .collect()
    }

    /// Like [`Gateway::flush`], keeping each record's session and delivery time.
    pub fn flush_detailed(&mut self, now_us: u64) -> Vec<Sequenced> {
        let now_ms = now_us / 1000;
        let (mut ready, rest): (Vec<Pending>, Vec<Pending>) =
            self.pending.drain(..).partition(|p| p.ms < now_ms);
        self.pending = rest;
        ready.sort_by_key(|p| (p.ms, p.link_id, p.session_id, p.arrival));
        ready
            .into_iter()
            .map(|p| {
                let seq = self.next_seq;
                self.next_seq += 1;
                if !matches!(p.cmd, Command::Cancel { .. }) {
                    self.owners.entry(p.cmd.subject()).or_insert(p.session_id);
                }
                Sequenced {
                    record: LogRecord::new(seq, p.ms, p.cmd),
                    session_id: p.session_id,
                    delivery_us: p.delivery_us,
                }
            })
            .collect()
    }

    /// Sequences everything still buffered, regardless of the clock.
    pub fn flush_all(&mut self) -> Vec<LogRecord> {
        self.flush(u64::MAX)
    }

    /// Recipients of one core output message: subscribers of its instrument
    /// for market data, plus the owning session(s) for private reports.
    pub fn disseminate(&self, rec: &OutRecord) -> Vec<SessionId> {
        let mut to: BTreeSet<SessionId> = BTreeSet::new();
        let public = match &rec.msg {
            OutMsg::Top(t) => Some(t.instrument.as_str()),
            OutMsg::Trade(t) => Some(t.instrument.as_str()),
            _ => None,
        };
        if let Some(inst) = public {
            to.extend(
                self.sessions
                    .values()
                    .filter(|s| s.subscriptions.contains(inst))
                    .map(|s| s.session_id),
            );
        }
        let mut owner_of = |r: Ref| {
            if let Some(s) = self.owners.get(&r) {
                to.insert(*s);
            }
        };
        match &rec.msg {
            OutMsg::Ack(r)
            | OutMsg::Reject { target: r, .. }
            | OutMsg::Cancelled { target: r, .. } => owner_of(*r),
            OutMsg::Trade(t) => {
                for p in [t.buy, t.sell] {
                    owner_of(match p {
                        Party::Order(id) => Ref::Order(id),
                        Party::ComboLeg(id, _) => Ref::Combo(id),
                    });
                }
            }
            OutMsg::ComboFill { combo, .. } | OutMsg::Virtual { combo, .. } => {
                owner_of(Ref::Combo(*combo))
            }
            OutMsg::Halt(_) | OutMsg::Nullified { .. } => to.extend(self.sessions.keys().copied()),
            OutMsg::Top(_) => {}
        }
        to.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{OrderId, OrderRequest, Side, TopOfBook};

    fn session(id: SessionId, who: &str, link: LinkId, subs: &[&str]) -> SessionConfig {
        SessionConfig {
            session_id: id,
            participant: who.into(),
            link_id: link,
            subscriptions: subs.iter().map(|s| s.to_string()).collect(),
            role: Role::Client,
        }
    }

    fn order_line(id: u64, who: &str) -> String {
        Command::Submit(OrderRequest {
            order_id: OrderId(id),
            instrument: "A".into(),
            side: Side::Buy,
            price: 100,
            qty: 1,
            origin: Origin::Client,
            owner: who.into(),
        })
        .to_wire()
    }

    fn gw() -> Gateway {
        let mut g = Gateway::new();
        g.add_session(session(1, "p1", 3, &["A"])).unwrap();
        g.add_session(session(2, "p2", 1, &["A"])).unwrap();
        g.add_session(session(3, "p3", 1, &[])).unwrap();
        g
    }

    #[test]
    fn sequenced_by_delivery_time() {
        let mut g = gw();
        g.ingest(7_000, 1, &order_line(2, "p1")).unwrap();
        g.ingest(5_000, 2, &order_line(1, "p2")).unwrap();
        let recs = g.flush(10_000);
        let ids: Vec<(u64, u64)> = recs.iter().map(|r| (r.seq, r.ts)).collect();
        assert_eq!(ids, vec![(1, 5), (2, 7)]);
    }

    #[test]
    fn same_millisecond_ties_break_on_link_then_session() {
        let mut g = gw();
        g.ingest(5_100, 1, &order_line(1, "p1")).unwrap();
        g.ingest(5_200, 3, &order_line(3, "p3")).unwrap();
        g.ingest(5_900, 2, &order_line(2, "p2")).unwrap();
        assert!(g.flush(5_999).is_empty(), "bucket still open");
        let owners: Vec<String> = g
            .flush(6_000)
            .iter()
            .map(|r| r.cmd.owner().unwrap().to_string())
            .collect();
        assert_eq!(owners, vec!["p2", "p3", "p1"]);
    }

    #[test]
    fn malformed_input_never_reaches_core() {
        let mut g = gw();
        let mut bad = order_line(1, "p1");
        bad.replace_range(4..5, "9");
        let r = g.ingest(1_000, 1, &bad).unwrap_err();
        assert_eq!(r.session_id, 1);
        assert!(r.to_wire().starts_with("GREJ|malformed"));
        assert!(g.ingest(1_000, 1, &order_line(1, "p2")).is_err());
        assert!(g.ingest(1_000, 1, "SUB|1|A|B").is_err());
        assert!(g.flush_all().is_empty());
        assert_eq!(g.next_seq(), 1);
    }

    #[test]
    fn one_session_per_participant_and_link() {
        let mut g = gw();
        assert!(matches!(
            g.add_session(session(9, "p1", 3, &[])),
            Err(GatewayError::DuplicateSession { .. })
        ));
        assert!(g.add_session(session(9, "p1", 4, &[])).is_ok());
    }

    #[test]
    fn market_data_goes_to_subscribers_only() {
        let g = gw();
        let top = OutRecord {
            seq: 1,
            msg: OutMsg::Top(TopOfBook {
                instrument: "A".into(),
                bid: None,
                ask: None,
            }),
        };
        assert_eq!(g.disseminate(&top), vec![1, 2]);
    }

    #[test]
    fn private_reports_reach_the_owner() {
        let mut g = gw();
        g.ingest(0, 3, &order_line(5, "p3")).unwrap();
        g.flush_all();
        let ack = OutRecord {
            seq: 1,
            msg: OutMsg::Ack(Ref::Order(OrderId(5))),
        };
        assert_eq!(g.disseminate(&ack), vec![3]);
    }

    #[test]
    fn throttle_formula() {
        let t = ThrottleConfig {
            high_watermark: 100,
            beta: 0.5,
            r_min: 0.2,
            base_rate: 1000,
        };
        assert_eq!(t.rate_factor(0), 1.0);
        assert_eq!(t.rate_factor(100), 0.5);
        assert_eq!(t.rate_factor(1000), 0.5);
        let steep = ThrottleConfig { beta: 0.9, ..t };
        assert_eq!(steep.rate_factor(100), 0.2);
        assert_eq!(t.service_interval_us(0), 1000);
        assert_eq!(t.service_interval_us(100), 2000);
        let mut prev = f64::INFINITY;
        for d in 0..300 {
            let r = steep.rate_factor(d);
            assert!(r <= prev);
            prev = r;
        }
    }
}
