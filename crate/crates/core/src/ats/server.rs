//! The agent trade server: stores instructions, feeds agents market data,
//! gates activations on trigger quality, and restarts dead agents from their
//! stored instruction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::Deserialize;
use thiserror::Error;

use super::decompose::decompose_combination;
use super::instruction::{AgentInstruction, InstructionError, Template};
use crate::engine::{
    seal, unseal, ComboId, Command, OrderId, OrderRequest, Origin, OutMsg, OutRecord, RecordError,
    Ref, SeqNo,
};
use crate::trigger::{evaluate_anytime, EvalResult, Expr, Quality, Sample, WindowStore};

/// A synthetic series whose value is the sum of its members' last trade prices.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct IndexDef {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct AtsConfig {
    /// Operator-wide ceiling on any instruction's per-event budget.
    pub budget_cap: u64,
    /// Agent-generated order and combination ids start above this value.
    pub order_id_base: u64,
    /// Simulated cost of one sample evaluation.
    pub eval_us_per_sample: u64,
    pub index: Option<IndexDef>,
}

impl Default for AtsConfig {
    fn default() -> Self {
        AtsConfig {
            budget_cap: 64,
            order_id_base: 1_000_000_000,
            eval_us_per_sample: 1,
            index: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentStatus {
    Latent,
    Fired,
    Dead,
}

/// One line of the ATS event log.
#[derive(Debug, Clone, PartialEq)]
pub enum AtsEvent {
    Uploaded {
        t: u64,
        id: u64,
    },
    Revised {
        t: u64,
        id: u64,
    },
    UploadRejected {
        t: u64,
        id: Option<u64>,
        reason: String,
    },
    Evaluated {
        t: u64,
        id: u64,
        used: u64,
        quality: Quality,
        fired: bool,
    },
    /// `src` is the sequence number of the market record that fired the agent.
    Activated {
        t: u64,
        id: u64,
        src: SeqNo,
        quality: Quality,
        q_min: f64,
        refs: Vec<Ref>,
    },
    GatewayRejected {
        t: u64,
        id: u64,
        reason: String,
    },
    Dead {
        t: u64,
        id: u64,
        cause: String,
    },
    Recovered {
        t: u64,
        id: u64,
        fired: bool,
    },
    Unrecoverable {
        t: u64,
        id: u64,
    },
}

fn clean(s: &str) -> String {
    s.replace(['|', '\n'], " ")
}

impl AtsEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            AtsEvent::Uploaded { .. } => "UPL",
            AtsEvent::Revised { .. } => "REV",
            AtsEvent::UploadRejected { .. } => "UREJ",
            AtsEvent::Evaluated { .. } => "EVL",
            AtsEvent::Activated { .. } => "ACT",
            AtsEvent::GatewayRejected { .. } => "GREJ",
            AtsEvent::Dead { .. } => "DEAD",
            AtsEvent::Recovered { .. } => "RECV",
            AtsEvent::Unrecoverable { .. } => "UNREC",
        }
    }

    pub fn t(&self) -> u64 {
        match self {
            AtsEvent::Uploaded { t, .. }
            | AtsEvent::Revised { t, .. }
            | AtsEvent::UploadRejected { t, .. }
            | AtsEvent::Evaluated { t, .. }
            | AtsEvent::Activated { t, .. }
            | AtsEvent::GatewayRejected { t, .. }
            | AtsEvent::Dead { t, .. }
            | AtsEvent::Recovered { t, .. }
            | AtsEvent::Unrecoverable { t, .. } => *t,
        }
    }

    pub fn instruction(&self) -> Option<u64> {
        match self {
            AtsEvent::UploadRejected { id, .. } => *id,
            AtsEvent::Uploaded { id, .. }
            | AtsEvent::Revised { id, .. }
            | AtsEvent::Evaluated { id, .. }
            | AtsEvent::Activated { id, .. }
            | AtsEvent::GatewayRejected { id, .. }
            | AtsEvent::Dead { id, .. }
            | AtsEvent::Recovered { id, .. }
            | AtsEvent::Unrecoverable { id, .. } => Some(*id),
        }
    }

    /// `TYPE|t|fields|crc`
    pub fn encode(&self) -> String {
        let body = match self {
            AtsEvent::Uploaded { t, id }
            | AtsEvent::Revised { t, id }
            | AtsEvent::Unrecoverable { t, id } => {
                format!("{}|{t}|{id}", self.kind())
            }
            AtsEvent::UploadRejected { t, id, reason } => {
                let id = id.map_or_else(|| "-".to_string(), |i| i.to_string());
                format!("UREJ|{t}|{id}|{}", clean(reason))
            }
            AtsEvent::Evaluated {
                t,
                id,
                used,
                quality,
                fired,
            } => {
                format!(
                    "EVL|{t}|{id}|{used}|{}|{}|{}",
                    quality.num,
                    quality.den,
                    u8::from(*fired)
                )
            }
            AtsEvent::Activated {
                t,
                id,
                src,
                quality,
                q_min,
                refs,
            } => {
                let refs: Vec<String> = refs.iter().map(Ref::to_string).collect();
                format!(
                    "ACT|{t}|{id}|{src}|{}|{}|{q_min}|{}",
                    quality.num,
                    quality.den,
                    refs.join(";")
                )
            }
            AtsEvent::GatewayRejected { t, id, reason } => {
                format!("GREJ|{t}|{id}|{}", clean(reason))
            }
            AtsEvent::Dead { t, id, cause } => format!("DEAD|{t}|{id}|{}", clean(cause)),
            AtsEvent::Recovered { t, id, fired } => format!("RECV|{t}|{id}|{}", u8::from(*fired)),
        };
        seal(body)
    }

    pub fn parse(line: &str) -> Result<AtsEvent, RecordError> {
        let body = unseal(line)?;
        let f: Vec<&str> = body.split('|').collect();
        let num = |i: usize, name: &'static str| -> Result<u64, RecordError> {
            f.get(i)
                .ok_or(RecordError::Truncated)?
                .parse()
                .map_err(|_| RecordError::Field(name, f[i].to_string()))
        };
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
        let t = num(1, "t")?;
        let text = |i: usize| {
            f.get(i)
                .map(|s| s.to_string())
                .ok_or(RecordError::Truncated)
        };
        let flag = |i: usize| -> Result<bool, RecordError> {
            match f.get(i) {
                Some(&"0") => Ok(false),
                Some(&"1") => Ok(true),
                _ => Err(RecordError::Field(
                    "flag",
                    f.get(i).unwrap_or(&"").to_string(),
                )),
            }
        };
        let quality = |i: usize| -> Result<Quality, RecordError> {
            let den = num(i + 1, "quality")?;
            if den == 0 {
                return Err(RecordError::Field("quality", "0".into()));
            }
            Ok(Quality {
                num: num(i, "quality")?,
                den,
            })
        };
        Ok(match f[0] {
            "UPL" => {
                want(3)?;
                AtsEvent::Uploaded {
                    t,
                    id: num(2, "id")?,
                }
            }
            "REV" => {
                want(3)?;
                AtsEvent::Revised {
                    t,
                    id: num(2, "id")?,
                }
            }
            "UNREC" => {
                want(3)?;
                AtsEvent::Unrecoverable {
                    t,
                    id: num(2, "id")?,
                }
            }
            "UREJ" => {
                want(4)?;
                let id = if f[2] == "-" {
                    None
                } else {
                    Some(num(2, "id")?)
                };
                AtsEvent::UploadRejected {
                    t,
                    id,
                    reason: text(3)?,
                }
            }
            "EVL" => {
                want(7)?;
                AtsEvent::Evaluated {
                    t,
                    id: num(2, "id")?,
                    used: num(3, "used")?,
                    quality: quality(4)?,
                    fired: flag(6)?,
                }
            }
            "ACT" => {
                want(8)?;
                let q_min: f64 = f[6]
                    .parse()
                    .map_err(|_| RecordError::Field("q_min", f[6].to_string()))?;
                let refs = if f[7].is_empty() {
                    Vec::new()
                } else {
                    f[7].split(';')
                        .map(str::parse)
                        .collect::<Result<Vec<Ref>, _>>()?
                };
                AtsEvent::Activated {
                    t,
                    id: num(2, "id")?,
                    src: num(3, "src")?,
                    quality: quality(4)?,
                    q_min,
                    refs,
                }
            }
            "GREJ" => {
                want(4)?;
                AtsEvent::GatewayRejected {
                    t,
                    id: num(2, "id")?,
                    reason: text(3)?,
                }
            }
            "DEAD" => {
                want(4)?;
                AtsEvent::Dead {
                    t,
                    id: num(2, "id")?,
                    cause: text(3)?,
                }
            }
            "RECV" => {
                want(4)?;
                AtsEvent::Recovered {
                    t,
                    id: num(2, "id")?,
                    fired: flag(3)?,
                }
            }
            other => return Err(RecordError::UnknownType(other.to_string())),
        })
    }
}

impl fmt::Display for AtsEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Orders an agent sends when it fires.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Activation {
    pub instr_id: u64,
    pub at_ms: u64,
    pub src: SeqNo,
    /// Time spent deliberating before the orders leave the server.
    pub deliberation_us: u64,
    pub lines: Vec<String>,
    pub refs: Vec<Ref>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AtsError {
    #[error("no stored instruction {0}")]
    Unrecoverable(u64),
}

#[derive(Debug, Clone)]
struct Stored {
    text: String,
    instr: AgentInstruction,
    fired: bool,
}

#[derive(Debug, Clone)]
struct Agent {
    expr: Expr,
    series: BTreeSet<String>,
    status: AgentStatus,
    store: WindowStore,
    last: Option<EvalResult>,
}

impl Agent {
    fn spawn(expr: Expr, fired: bool) -> Agent {
        let series = expr.leaves().iter().map(|p| p.series.clone()).collect();
        let cap = expr.max_lookback() as usize;
        Agent {
            expr,
            series,
            status: if fired {
                AgentStatus::Fired
            } else {
                AgentStatus::Latent
            },
            store: WindowStore::new(cap),
            last: None,
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Feed {
    last_price: BTreeMap<String, i64>,
    last_quote: BTreeMap<String, (Option<i64>, Option<i64>)>,
}

impl Feed {
    /// Converts one disseminated core message into series samples.
    fn samples(
        &mut self,
        now_ms: u64,
        rec: &OutRecord,
        index: Option<&IndexDef>,
    ) -> Vec<(String, Sample)> {
        let mut out = Vec::new();
        match &rec.msg {
            OutMsg::Trade(t) => {
                self.last_price.insert(t.instrument.clone(), t.price);
                let (bid, ask) = self
                    .last_quote
                    .get(&t.instrument)
                    .copied()
                    .unwrap_or((None, None));
                out.push((
                    t.instrument.clone(),
                    Sample {
                        ts: now_ms,
                        price: t.price,
                        volume: t.qty,
                        bid,
                        ask,
                    },
                ));
                if let Some(ix) = index.filter(|ix| ix.members.contains(&t.instrument)) {
                    let prices: Option<Vec<i64>> = ix
                        .members
                        .iter()
                        .map(|m| self.last_price.get(m).copied())
                        .collect();
                    if let Some(ps) = prices {
                        let price = ps.iter().sum();
                        out.push((
                            ix.name.clone(),
                            Sample {
                                ts: now_ms,
                                price,
                                volume: t.qty,
                                bid: None,
                                ask: None,
                            },
                        ));
                    }
                }
            }
            OutMsg::Top(top) => {
                let bid = top.bid.map(|(p, _)| p);
                let ask = top.ask.map(|(p, _)| p);
                self.last_quote.insert(top.instrument.clone(), (bid, ask));
                let price = self
                    .last_price
                    .get(&top.instrument)
                    .copied()
                    .or(match (bid, ask) {
                        (Some(b), Some(a)) => Some((b + a) / 2),
                        _ => None,
                    });
                if let Some(price) = price {
                    out.push((
                        top.instrument.clone(),
                        Sample {
                            ts: now_ms,
                            price,
                            volume: 0,
                            bid,
                            ask,
                        },
                    ));
                }
            }
            _ => {}
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct AtsServer {
    cfg: AtsConfig,
    origin: Origin,
    stored: BTreeMap<u64, Stored>,
    agents: BTreeMap<u64, Agent>,
    feed: Feed,
    events: Vec<AtsEvent>,
    poisoned: BTreeSet<u64>,
}

impl AtsServer {
    /// `origin` is `Ats` for the trade server proper and `Client` when the
    /// same logic runs on a participant's own machine.
    pub fn new(cfg: AtsConfig, origin: Origin) -> Self {
        AtsServer {
            cfg,
            origin,
            stored: BTreeMap::new(),
            agents: BTreeMap::new(),
            feed: Feed::default(),
            events: Vec::new(),
            poisoned: BTreeSet::new(),
        }
    }

    pub fn events(&self) -> &[AtsEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<AtsEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn status(&self, id: u64) -> Option<AgentStatus> {
        self.agents.get(&id).map(|a| a.status)
    }

    pub fn last_eval(&self, id: u64) -> Option<&EvalResult> {
        self.agents.get(&id).and_then(|a| a.last.as_ref())
    }

    pub fn instruction_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.stored.keys().copied()
    }

    /// Stored instruction text, verbatim as uploaded.
    pub fn stored_text(&self, id: u64) -> Option<&str> {
        self.stored.get(&id).map(|s| s.text.as_str())
    }

    pub fn is_sensitive(&self, id: u64) -> Option<bool> {
        self.stored.get(&id).map(|s| s.instr.sensitive)
    }

    /// Validates and stores an instruction. Re-uploading an existing id
    /// revises the running agent in place and keeps its fired flag.
    pub fn upload(&mut self, now_ms: u64, text: &str) -> Result<u64, InstructionError> {
        let parsed = AgentInstruction::from_toml(text);
        let checked = parsed
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|i| i.check().map(|e| (i.clone(), e)));
        let (instr, expr) = match checked {
            Ok(v) => v,
            Err(e) => {
                let id = parsed.as_ref().ok().map(|i| i.id);
                self.events.push(AtsEvent::UploadRejected {
                    t: now_ms,
                    id,
                    reason: e.to_string(),
                });
                return Err(e);
            }
        };
        let id = instr.id;
        match self.stored.get_mut(&id) {
            Some(s) => {
                s.text = text.to_string();
                s.instr = instr;
                let fired = s.fired;
                match self.agents.get_mut(&id) {
                    Some(a) if a.status != AgentStatus::Dead => {
                        let keep = std::mem::take(&mut a.store);
                        *a = Agent::spawn(expr, fired);
                        // Keep the history gathered so far when the new trigger still fits in it.
                        for (series, q) in keep_samples(&keep, &a.series) {
                            for s in q {
                                a.store.push(&series, s);
                            }
                        }
                    }
                    _ => {
                        self.agents.insert(id, Agent::spawn(expr, fired));
                    }
                }
                self.events.push(AtsEvent::Revised { t: now_ms, id });
            }
            None => {
                self.stored.insert(
                    id,
                    Stored {
                        text: text.to_string(),
                        instr,
                        fired: false,
                    },
                );
                self.agents.insert(id, Agent::spawn(expr, false));
                self.events.push(AtsEvent::Uploaded { t: now_ms, id });
            }
        }
        Ok(id)
    }

    /// Fault injection: kill one agent task, discarding its in-memory state.
    pub fn kill(&mut self, now_ms: u64, id: u64) -> bool {
        match self.agents.get_mut(&id) {
            Some(a) if a.status != AgentStatus::Dead => {
                a.status = AgentStatus::Dead;
                a.store = WindowStore::new(1);
                a.last = None;
                self.events.push(AtsEvent::Dead {
                    t: now_ms,
                    id,
                    cause: "killed".into(),
                });
                true
            }
            _ => false,
        }
    }

    /// Test hook: the agent raises an internal error on its next evaluation.
    pub fn poison(&mut self, id: u64) {
        self.poisoned.insert(id);
    }

    /// Restarts an agent from its stored instruction with an empty window.
    pub fn recover(&mut self, now_ms: u64, id: u64) -> Result<AgentStatus, AtsError> {
        let Some(s) = self.stored.get(&id) else {
            self.events.push(AtsEvent::Unrecoverable { t: now_ms, id });
            return Err(AtsError::Unrecoverable(id));
        };
        let expr = s.instr.check().expect("stored instructions were validated");
        let agent = Agent::spawn(expr, s.fired);
        let status = agent.status;
        self.agents.insert(id, agent);
        self.poisoned.remove(&id);
        self.events.push(AtsEvent::Recovered {
            t: now_ms,
            id,
            fired: s.fired,
        });
        Ok(status)
    }

    pub fn record_gateway_reject(&mut self, now_ms: u64, id: u64, reason: &str) {
        self.events.push(AtsEvent::GatewayRejected {
            t: now_ms,
            id,
            reason: reason.to_string(),
        });
    }

    /// Feeds one disseminated core message to every latent agent whose
    /// trigger reads an updated series. Agents run in id order and in
    /// isolation: a failing agent is marked dead and the loop continues.
    pub fn on_market_event(&mut self, now_ms: u64, rec: &OutRecord) -> Vec<Activation> {
        let samples = self.feed.samples(now_ms, rec, self.cfg.index.as_ref());
        if samples.is_empty() {
            return Vec::new();
        }
        let mut activations = Vec::new();
        let ids: Vec<u64> = self.agents.keys().copied().collect();
        for id in ids {
            let agent = self.agents.get_mut(&id).expect("listed");
            if agent.status != AgentStatus::Latent
                || !samples.iter().any(|(s, _)| agent.series.contains(s))
            {
                continue;
            }
            let stored = &self.stored[&id];
            let poisoned = self.poisoned.contains(&id);
            let cfg = &self.cfg;
            let origin = self.origin;
            let outcome = catch_unwind(AssertUnwindSafe(|| {
                if poisoned {
                    panic!("agent {id}: injected fault");
                }
                for (series, s) in &samples {
                    if agent.series.contains(series) {
                        agent.store.push(series, *s);
                    }
                }
                let budget = stored.instr.budget.min(cfg.budget_cap);
                let r = evaluate_anytime(&agent.expr, &agent.store, budget);
                let act = (r.fired && r.quality.at_least(stored.instr.q_min))
                    .then(|| build_orders(&stored.instr, cfg, origin));
                agent.last = Some(r.clone());
                (r, act)
            }));
            match outcome {
                Ok((r, act)) => {
                    self.events.push(AtsEvent::Evaluated {
                        t: now_ms,
                        id,
                        used: r.used,
                        quality: r.quality,
                        fired: r.fired,
                    });
                    if let Some((lines, refs)) = act {
                        agent.status = AgentStatus::Fired;
                        let stored = self.stored.get_mut(&id).expect("stored");
                        stored.fired = true;
                        self.events.push(AtsEvent::Activated {
                            t: now_ms,
                            id,
                            src: rec.seq,
                            quality: r.quality,
                            q_min: stored.instr.q_min,
                            refs: refs.clone(),
                        });
                        activations.push(Activation {
                            instr_id: id,
                            at_ms: now_ms,
                            src: rec.seq,
                            deliberation_us: r.used * self.cfg.eval_us_per_sample,
                            lines,
                            refs,
                        });
                    }
                }
                Err(_) => {
                    agent.status = AgentStatus::Dead;
                    self.events.push(AtsEvent::Dead {
                        t: now_ms,
                        id,
                        cause: "internal-error".into(),
                    });
                }
            }
        }
        activations
    }
}

fn keep_samples(store: &WindowStore, series: &BTreeSet<String>) -> Vec<(String, Vec<Sample>)> {
    series
        .iter()
        .filter_map(|s| {
            store
                .get(s)
                .map(|q| (s.clone(), q.iter().copied().collect()))
        })
        .collect()
}

/// Instantiates the latent order: one order, or a basket of combinations
/// sent back to back.
fn build_orders(
    instr: &AgentInstruction,
    cfg: &AtsConfig,
    origin: Origin,
) -> (Vec<String>, Vec<Ref>) {
    let base = cfg.order_id_base + instr.id * 1000;
    match &instr.template {
        Template::Order(o) => {
            let id = OrderId(base + 1);
            let cmd = Command::Submit(OrderRequest {
                order_id: id,
                instrument: o.instrument.clone(),
                side: o.side,
                price: o.price,
                qty: o.qty,
                origin,
                owner: instr.owner.clone(),
            });
            (vec![cmd.to_wire()], vec![Ref::Order(id)])
        }
        Template::Combo(c) => {
            let ratios: Vec<u64> = c.legs.iter().map(|l| l.ratio).collect();
            let basket = decompose_combination(c.qty, &ratios, instr.chunk_bound, instr.epsilon)
                .expect("feasibility checked at upload");
            let mut lines = Vec::new();
            let mut refs = Vec::new();
            for (k, chunk) in basket.chunks.iter().enumerate() {
                let id = ComboId(base + 1 + k as u64);
                let mut combo = instr.combo_order(c, id);
                combo.combo_qty = *chunk;
                combo.origin = origin;
                lines.push(Command::Combo(combo).to_wire());
                refs.push(Ref::Combo(id));
            }
            (lines, refs)
        }
    }
}
