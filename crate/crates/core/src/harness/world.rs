//! End-to-end run: script and agents send over simulated links, the gateway
//! sequences, a replicated core matches under the throttle, and market data
//! flows back out to sessions and agents.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use super::logs::{
    lines_text, NetEvent, RunLogs, ATS_LOG, INPUT_LOG, METRICS_FILE, NET_LOG, OUTPUT_LOG,
};
use super::metrics::{fates_from_logs, Fates, MetricsReport};
use super::scenario::{Scenario, ScenarioError, CONSOLE_SESSION};
use super::script::generate_script;
use crate::ats::{AgentInstruction, AtsServer};
use crate::engine::{AdminAction, Command, EngineHalt, Origin, OutMsg, OutRecord, Ref};
use crate::gateway::{Gateway, LinkId, Role, Sequenced, SessionConfig, SessionId};
use crate::sim::{
    ms_to_us, Direction, FaultAction, MarketplaceDown, Network, ReplicaPair, Scheduler,
};

#[derive(Debug, Clone)]
enum Ev {
    Send { session: SessionId, line: String },
    Arrive { session: SessionId, line: String },
    Flush,
    CoreTick,
    Deliver { session: SessionId, line: usize },
    Fault(FaultAction),
    Promote,
    Recover(u64),
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub logs: RunLogs,
    /// Metrics computed during the run, with order dispositions taken from
    /// the surviving engine.
    pub metrics: MetricsReport,
    pub halted: Option<EngineHalt>,
    pub down: Option<MarketplaceDown>,
}

impl RunOutput {
    pub fn input_lines(&self) -> Vec<String> {
        self.logs.input.iter().map(|r| r.encode()).collect()
    }

    pub fn output_lines(&self) -> Vec<String> {
        self.logs.output.iter().map(|r| r.encode()).collect()
    }

    pub fn ats_lines(&self) -> Vec<String> {
        self.logs.ats.iter().map(|e| e.encode()).collect()
    }

    pub fn net_lines(&self) -> Vec<String> {
        self.logs.net.iter().map(NetEvent::encode).collect()
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(INPUT_LOG), lines_text(&self.input_lines()))?;
        fs::write(dir.join(OUTPUT_LOG), lines_text(&self.output_lines()))?;
        fs::write(dir.join(ATS_LOG), lines_text(&self.ats_lines()))?;
        fs::write(dir.join(NET_LOG), lines_text(&self.net_lines()))?;
        fs::write(dir.join(METRICS_FILE), self.metrics.to_text())
    }
}

struct World<'a> {
    s: &'a Scenario,
    sched: Scheduler<Ev>,
    net: Network,
    gw: Gateway,
    pair: ReplicaPair,
    /// Agent hosts keyed by session: the ATS session and client sessions
    /// that run agents themselves.
    hosts: BTreeMap<SessionId, AtsServer>,
    agent_host: BTreeMap<u64, SessionId>,
    ref_agent: HashMap<Ref, u64>,
    queue: VecDeque<Sequenced>,
    core_busy: bool,
    flush_at: Option<u64>,
    bursts: BTreeMap<Option<LinkId>, u64>,
    last_rate: u64,
    logs: RunLogs,
    orders_in: u64,
    rejected: u64,
    promote_pending: bool,
    stopped: bool,
}

/// Runs a scenario to completion.
pub fn run(s: &Scenario) -> Result<RunOutput, ScenarioError> {
    s.validate()?;
    let senders: Vec<(SessionId, String)> = s
        .session_by_role(Role::Client)
        .filter(|c| s.script.senders.is_empty() || s.script.senders.contains(&c.session_id))
        .map(|c| (c.session_id, c.participant.clone()))
        .collect();
    let script = generate_script(s.seed, &s.script, &s.instruments, &senders, s.duration_ms)?;
    let mut gw = Gateway::new();
    for c in &s.sessions {
        gw.add_session(c.clone())
            .map_err(|e| ScenarioError::Sessions(e.to_string()))?;
    }
    gw.add_session(SessionConfig {
        session_id: CONSOLE_SESSION,
        participant: "operator".into(),
        link_id: 0,
        subscriptions: Default::default(),
        role: Role::Operator,
    })
    .map_err(|e| ScenarioError::Sessions(e.to_string()))?;
    let mut hosts = BTreeMap::new();
    if let Some(id) = s.ats.session {
        hosts.insert(id, AtsServer::new(s.ats.config.clone(), Origin::Ats));
    }
    let mut w = World {
        s,
        sched: Scheduler::new(),
        net: Network::new(s.seed, &s.links)?,
        gw,
        pair: ReplicaPair::new(s.replication.clone()),
        hosts,
        agent_host: BTreeMap::new(),
        ref_agent: HashMap::new(),
        queue: VecDeque::new(),
        core_busy: false,
        flush_at: None,
        bursts: BTreeMap::new(),
        last_rate: 1000,
        logs: RunLogs::default(),
        orders_in: 0,
        rejected: 0,
        promote_pending: false,
        stopped: false,
    };
    w.logs.net.push(NetEvent::Run {
        seed: s.seed,
        duration_ms: s.duration_ms,
        bucket_ms: s.metrics.bucket_ms,
        staleness_us: ms_to_us(s.metrics.staleness_ms),
        send_window_us: s.metrics.send_window_us,
        eval_us: s.ats.config.eval_us_per_sample,
    });
    for (text, host) in s.agent_texts() {
        let session = host.or(s.ats.session).expect("validated");
        let server = w
            .hosts
            .entry(session)
            .or_insert_with(|| AtsServer::new(s.ats.config.clone(), Origin::Client));
        if let Ok(id) = server.upload(0, text) {
            w.agent_host.insert(id, session);
        }
        w.logs.ats.extend(server.take_events());
    }
    for inst in s.listed_instruments() {
        let line = Command::Admin(AdminAction::List(inst)).to_wire();
        w.sched.schedule(
            0,
            Ev::Arrive {
                session: CONSOLE_SESSION,
                line,
            },
        );
    }
    for e in script {
        w.sched.schedule(
            e.at_us,
            Ev::Send {
                session: e.session_id,
                line: e.line,
            },
        );
    }
    for f in &s.faults {
        w.sched
            .schedule(f.at_ms * 1000, Ev::Fault(f.action.clone()));
    }
    while let Some((now, ev)) = w.sched.pop() {
        w.handle(now, ev);
        if w.stopped {
            break;
        }
    }
    Ok(w.finish())
}

impl World<'_> {
    fn link_of(&self, session: SessionId) -> LinkId {
        self.gw.session(session).expect("known session").link_id
    }

    fn handle(&mut self, now: u64, ev: Ev) {
        match ev {
            Ev::Send { session, line } => {
                let subject = Command::from_wire(&line).ok().map(|c| c.subject());
                self.logs.net.push(NetEvent::Tx {
                    us: now,
                    session,
                    subject,
                });
                let d = self
                    .net
                    .send(self.link_of(session), Direction::Up, now)
                    .expect("validated link");
                self.sched.schedule(d.at_us, Ev::Arrive { session, line });
            }
            Ev::Arrive { session, line } => match self.gw.ingest(now, session, &line) {
                Ok(()) => {
                    let t = self.gw.next_flush_us().expect("just buffered");
                    if self.flush_at.is_none_or(|f| t < f) {
                        self.flush_at = Some(t);
                        self.sched.schedule(t, Ev::Flush);
                    }
                }
                Err(rej) => {
                    self.logs.net.push(NetEvent::Refused {
                        us: now,
                        session,
                        reason: rej.reason.clone(),
                    });
                    let agent = Command::from_wire(&line)
                        .ok()
                        .and_then(|c| self.ref_agent.get(&c.subject()).copied());
                    if let (Some(id), Some(server)) = (agent, self.hosts.get_mut(&session)) {
                        server.record_gateway_reject(now / 1000, id, &rej.reason);
                        self.logs.ats.extend(server.take_events());
                    }
                }
            },
            Ev::Flush => {
                self.flush_at = None;
                for sq in self.gw.flush_detailed(now) {
                    self.logs.net.push(NetEvent::Seq {
                        us: now,
                        seq: sq.record.seq,
                        session: sq.session_id,
                        delivery_us: sq.delivery_us,
                    });
                    self.queue.push_back(sq);
                }
                if let Some(t) = self.gw.next_flush_us() {
                    self.flush_at = Some(t);
                    self.sched.schedule(t, Ev::Flush);
                }
                self.kick_core(now);
            }
            Ev::CoreTick => self.core_tick(now),
            Ev::Deliver { session, line } => {
                self.logs.net.push(NetEvent::Rx {
                    us: now,
                    session,
                    line: line as u64,
                });
                let Some(server) = self.hosts.get_mut(&session) else {
                    return;
                };
                let acts = server.on_market_event(now / 1000, &self.logs.output[line]);
                self.logs.ats.extend(server.take_events());
                for a in acts {
                    for r in &a.refs {
                        self.ref_agent.insert(*r, a.instr_id);
                    }
                    for l in a.lines {
                        self.sched
                            .schedule(now + a.deliberation_us, Ev::Send { session, line: l });
                    }
                }
            }
            Ev::Fault(action) => self.fault(now, action),
            Ev::Promote => {
                self.promote_pending = false;
                match self.pair.promote(now) {
                    Ok(outs) => {
                        if let Some(f) = self.pair.failovers().last() {
                            self.logs.net.push(NetEvent::Promote {
                                us: now,
                                crash_us: f.crash_us,
                                published_through: f.published_through,
                                detected_us: f.detected_us,
                                catch_up: f.catch_up_events,
                                bound_us: f.bound_us,
                            });
                        }
                        self.publish(now, outs);
                        self.kick_core(now);
                    }
                    Err(d) => self.go_down(d),
                }
            }
            Ev::Recover(id) => {
                self.logs.net.push(NetEvent::Recover { us: now, id });
                if let Some(server) = self.agent_host.get(&id).and_then(|h| self.hosts.get_mut(h)) {
                    let _ = server.recover(now / 1000, id);
                    self.logs.ats.extend(server.take_events());
                }
            }
        }
    }

    fn fault(&mut self, now: u64, action: FaultAction) {
        match action {
            FaultAction::CrashPrimary => {
                self.logs.net.push(NetEvent::Crash { us: now });
                match self.pair.crash_primary(now) {
                    Ok(at) => self.schedule_promotion(at),
                    Err(d) => self.go_down(d),
                }
            }
            FaultAction::CrashAgent { id } => {
                self.logs.net.push(NetEvent::Kill { us: now, id });
                if let Some(server) = self.agent_host.get(&id).and_then(|h| self.hosts.get_mut(h)) {
                    server.kill(now / 1000, id);
                    self.logs.ats.extend(server.take_events());
                }
                if let Some(ms) = self.s.ats.recover_after_ms {
                    self.sched.schedule(now + ms * 1000, Ev::Recover(id));
                }
            }
            FaultAction::CongestionBurst { link, depth } => {
                self.logs.net.push(NetEvent::Burst {
                    us: now,
                    link,
                    depth,
                });
                self.bursts.insert(link, depth);
            }
            FaultAction::Restore => {
                self.logs.net.push(NetEvent::Restore { us: now });
                self.bursts.clear();
            }
        }
    }

    fn schedule_promotion(&mut self, at: u64) {
        if !self.promote_pending {
            self.promote_pending = true;
            self.sched.schedule(at, Ev::Promote);
        }
    }

    fn go_down(&mut self, d: MarketplaceDown) {
        self.logs.net.push(NetEvent::Down {
            us: d.at_us,
            published_through: d.published_through,
        });
        self.stopped = true;
    }

    fn kick_core(&mut self, now: u64) {
        if !self.core_busy && !self.queue.is_empty() && self.pair.awaiting_promotion().is_none() {
            self.core_busy = true;
            self.sched.schedule(now, Ev::CoreTick);
        }
    }

    fn core_tick(&mut self, now: u64) {
        if self.pair.awaiting_promotion().is_some() {
            // Input waits in the queue until the standby takes over.
            self.core_busy = false;
            return;
        }
        let Some(sq) = self.queue.pop_front() else {
            self.core_busy = false;
            return;
        };
        let rec = sq.record;
        self.logs.net.push(NetEvent::Core {
            us: now,
            seq: rec.seq,
        });
        let submitted = match &rec.cmd {
            Command::Submit(o) => Some(Ref::Order(o.order_id)),
            _ => None,
        };
        self.logs.input.push(rec.clone());
        match self.pair.submit(rec, now) {
            Ok(outs) => {
                if let Some(r) = submitted {
                    self.orders_in += 1;
                    if outs
                        .iter()
                        .any(|o| matches!(o.msg, OutMsg::Reject { target, .. } if target == r))
                    {
                        self.rejected += 1;
                    }
                }
                self.publish(now, outs);
                if self.pair.halted().is_some() {
                    self.stopped = true;
                    return;
                }
            }
            Err(d) => return self.go_down(d),
        }
        if let Some(at) = self.pair.awaiting_promotion() {
            // The primary failed while processing this event.
            self.logs.net.push(NetEvent::Crash { us: now });
            self.schedule_promotion(at);
            self.core_busy = false;
            return;
        }
        // The core stays busy for a full service interval even when nothing
        // is waiting; the next tick picks up whatever arrived meanwhile.
        let depth = self.net.queued_outbound(now) + self.bursts.values().sum::<u64>();
        let rate = (self.s.throttle.rate_factor(depth) * 1000.0).round() as u64;
        if rate != self.last_rate {
            self.last_rate = rate;
            self.logs.net.push(NetEvent::Rate {
                us: now,
                milli: rate,
            });
        }
        self.sched.schedule(
            now + self.s.throttle.service_interval_us(depth),
            Ev::CoreTick,
        );
    }

    fn publish(&mut self, now: u64, outs: Vec<OutRecord>) {
        for out in outs {
            let line = self.logs.output.len();
            for session in self.gw.disseminate(&out) {
                if session == CONSOLE_SESSION {
                    continue;
                }
                let d = self
                    .net
                    .send(self.link_of(session), Direction::Down, now)
                    .expect("validated link");
                self.sched.schedule(d.at_us, Ev::Deliver { session, line });
            }
            self.logs.output.push(out);
        }
    }

    fn finish(mut self) -> RunOutput {
        let down = self.pair.down();
        if let Some(d) = down {
            self.logs.input.retain(|r| r.seq <= d.published_through);
        }
        let fates = match self.pair.active() {
            Some(engine) if down.is_none() => {
                Fates::from_engine(engine, self.orders_in, self.rejected)
            }
            _ => fates_from_logs(&self.logs),
        };
        let metrics = MetricsReport::compute(&self.logs, Some(fates));
        RunOutput {
            halted: self.pair.halted().cloned(),
            logs: self.logs,
            metrics,
            down,
        }
    }
}

/// Instruction ids of the scenario's agents that parse, in file order.
pub fn agent_ids(s: &Scenario) -> Vec<u64> {
    s.agent_texts()
        .filter_map(|(t, _)| AgentInstruction::from_toml(t).ok())
        .map(|i| i.id)
        .collect()
}
