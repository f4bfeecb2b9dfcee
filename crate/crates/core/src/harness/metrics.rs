//! Run metrics, computed from the logs of a run.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use super::logs::{NetEvent, RunLogs};
use crate::ats::AtsEvent;
use crate::engine::{Command, Engine, OrderId, OutMsg, Party, Ref, SeqNo};
use crate::gateway::SessionId;
use crate::sim::FailoverRecord;

/// Order statistics with nearest-rank percentiles, in integer units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Distribution {
    pub count: u64,
    pub min: u64,
    pub p50: u64,
    pub p95: u64,
    pub p99: u64,
    pub max: u64,
    pub sum: u64,
}

impl Distribution {
    pub fn from_samples(mut v: Vec<u64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_unstable();
        let rank = |p: u64| v[((p * v.len() as u64).div_ceil(100) as usize).max(1) - 1];
        Distribution {
            count: v.len() as u64,
            min: v[0],
            p50: rank(50),
            p95: rank(95),
            p99: rank(99),
            max: v[v.len() - 1],
            sum: v.iter().sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum as f64 / self.count as f64
        }
    }

    pub fn ordered(&self) -> bool {
        self.min <= self.p50 && self.p50 <= self.p95 && self.p95 <= self.p99 && self.p99 <= self.max
    }
}

/// Final disposition of every submitted single order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Fates {
    pub orders_in: u64,
    pub filled: u64,
    pub resting: u64,
    pub cancelled: u64,
    pub rejected: u64,
}

impl Fates {
    pub fn balanced(&self) -> bool {
        self.orders_in == self.filled + self.resting + self.cancelled + self.rejected
    }

    /// Accepted orders classified from engine state; `orders_in` and
    /// `rejected` come from the caller's own count.
    pub fn from_engine(engine: &Engine, orders_in: u64, rejected: u64) -> Self {
        let mut f = Fates {
            orders_in,
            rejected,
            ..Fates::default()
        };
        for o in engine.orders() {
            if o.filled == o.qty {
                f.filled += 1;
            } else if o.remaining == 0 {
                f.cancelled += 1;
            } else {
                f.resting += 1;
            }
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    /// A log was truncated or corrupt; figures cover what could be read.
    pub partial: bool,
    pub seed: u64,
    pub duration_ms: u64,
    pub input_events: u64,
    pub output_messages: u64,
    pub trades: u64,
    pub gateway_refusals: u64,
    pub fates: Fates,
    /// Send of an order or combination until its acknowledgement reaches the sender.
    pub rtt_us: Distribution,
    /// Gateway delivery of an event until the core has processed it.
    pub receive_interval_us: Distribution,
    /// Sample evaluations per agent evaluation.
    pub deliberation_samples: Distribution,
    /// Core processing of the triggering event until core processing of the
    /// agent's order.
    pub activation_latency_us: Distribution,
    pub throughput_per_s: f64,
    pub messages_per_s: f64,
    pub deals_per_minute: f64,
    pub deals_per_bucket: Vec<u64>,
    pub evaluations: u64,
    pub activations: u64,
    /// Evaluation quality by tenths; the last bucket is exactly 1.
    pub quality_histogram: [u64; 11],
    pub quality_gate_violations: u64,
    /// Market data delivered later than the staleness bound.
    pub staleness_violations: u64,
    /// Activations whose deliberation overran the send window.
    pub send_window_violations: u64,
    pub rate_factor_min_milli: u64,
    pub rate_factor_final_milli: u64,
    pub failovers: Vec<FailoverRecord>,
    pub marketplace_down: Option<SeqNo>,
    pub halted_at: Option<SeqNo>,
}

fn subject(cmd: &Command) -> Option<Ref> {
    matches!(cmd, Command::Submit(_) | Command::Combo(_)).then(|| cmd.subject())
}

/// Order dispositions derived from the input and output logs.
pub fn fates_from_logs(logs: &RunLogs) -> Fates {
    let mut rejected_at: BTreeSet<(SeqNo, Ref)> = BTreeSet::new();
    let mut cancelled: BTreeSet<OrderId> = BTreeSet::new();
    let mut filled: HashMap<OrderId, u64> = HashMap::new();
    for r in &logs.output {
        match &r.msg {
            OutMsg::Reject { target, .. } => {
                rejected_at.insert((r.seq, *target));
            }
            OutMsg::Cancelled {
                target: Ref::Order(id),
                ..
            } => {
                cancelled.insert(*id);
            }
            OutMsg::Trade(t) => {
                for p in [t.buy, t.sell] {
                    if let Party::Order(id) = p {
                        *filled.entry(id).or_default() += t.qty;
                    }
                }
            }
            _ => {}
        }
    }
    let mut f = Fates::default();
    for rec in &logs.input {
        let Command::Submit(o) = &rec.cmd else {
            continue;
        };
        f.orders_in += 1;
        if rejected_at.contains(&(rec.seq, Ref::Order(o.order_id))) {
            f.rejected += 1;
        } else if filled.get(&o.order_id).copied().unwrap_or(0) == o.qty {
            f.filled += 1;
        } else if cancelled.contains(&o.order_id) {
            f.cancelled += 1;
        } else {
            f.resting += 1;
        }
    }
    f
}

impl MetricsReport {
    /// Computes every metric from the logs. `fates` overrides the log-derived
    /// order dispositions, which lets a live run supply engine state instead.
    pub fn compute(logs: &RunLogs, fates: Option<Fates>) -> Self {
        let mut m = MetricsReport {
            partial: logs.truncated,
            ..Self::default()
        };
        let (mut bucket_ms, mut staleness_us, mut send_window_us, mut eval_us) =
            (1000, u64::MAX, u64::MAX, 0);
        match logs.net.first() {
            Some(NetEvent::Run {
                seed,
                duration_ms,
                bucket_ms: b,
                staleness_us: s,
                send_window_us: w,
                eval_us: e,
            }) => {
                m.seed = *seed;
                m.duration_ms = *duration_ms;
                bucket_ms = (*b).max(1);
                staleness_us = *s;
                send_window_us = *w;
                eval_us = *e;
            }
            _ if logs.net.is_empty() && logs.input.is_empty() => {}
            _ => m.partial = true,
        }

        m.input_events = logs.input.len() as u64;
        m.output_messages = logs.output.len() as u64;
        m.trades = logs
            .output
            .iter()
            .filter(|r| matches!(r.msg, OutMsg::Trade(_)))
            .count() as u64;
        m.halted_at = logs
            .output
            .iter()
            .find(|r| matches!(r.msg, OutMsg::Halt(_)))
            .map(|r| r.seq);
        m.fates = fates.unwrap_or_else(|| fates_from_logs(logs));

        let mut core_us: HashMap<SeqNo, u64> = HashMap::new();
        let mut delivery: HashMap<SeqNo, u64> = HashMap::new();
        let mut sent: HashMap<(SessionId, Ref), u64> = HashMap::new();
        let (mut rtt, mut recv) = (Vec::new(), Vec::new());
        m.rate_factor_min_milli = 1000;
        m.rate_factor_final_milli = 1000;
        for e in &logs.net {
            match e {
                NetEvent::Tx {
                    us,
                    session,
                    subject: Some(r),
                } => {
                    sent.entry((*session, *r)).or_insert(*us);
                }
                NetEvent::Refused { .. } => m.gateway_refusals += 1,
                NetEvent::Seq {
                    seq, delivery_us, ..
                } => {
                    delivery.insert(*seq, *delivery_us);
                }
                NetEvent::Core { us, seq } => {
                    core_us.insert(*seq, *us);
                    if let Some(d) = delivery.get(seq) {
                        recv.push(us - d);
                    }
                }
                NetEvent::Rx { us, session, line } => {
                    let Some(rec) = logs.output.get(*line as usize) else {
                        m.partial = true;
                        continue;
                    };
                    match &rec.msg {
                        OutMsg::Ack(r) | OutMsg::Reject { target: r, .. } => {
                            if let Some(t) = sent.remove(&(*session, *r)) {
                                rtt.push(us - t);
                            }
                        }
                        OutMsg::Top(_) | OutMsg::Trade(_)
                            if core_us.get(&rec.seq).is_some_and(|c| us - c > staleness_us) =>
                        {
                            m.staleness_violations += 1;
                        }
                        _ => {}
                    }
                }
                NetEvent::Rate { milli, .. } => {
                    m.rate_factor_min_milli = m.rate_factor_min_milli.min(*milli);
                    m.rate_factor_final_milli = *milli;
                }
                NetEvent::Promote {
                    us,
                    crash_us,
                    published_through,
                    detected_us,
                    catch_up,
                    bound_us,
                } => {
                    m.failovers.push(FailoverRecord {
                        crash_us: *crash_us,
                        published_through: *published_through,
                        detected_us: *detected_us,
                        catch_up_events: *catch_up,
                        promoted_us: *us,
                        bound_us: *bound_us,
                    });
                }
                NetEvent::Down {
                    published_through, ..
                } => m.marketplace_down = Some(*published_through),
                _ => {}
            }
        }
        m.rtt_us = Distribution::from_samples(rtt);
        m.receive_interval_us = Distribution::from_samples(recv);

        let mut seq_of: HashMap<Ref, SeqNo> = HashMap::new();
        for rec in &logs.input {
            if let Some(r) = subject(&rec.cmd) {
                seq_of.entry(r).or_insert(rec.seq);
            }
        }
        let (mut used, mut latency) = (Vec::new(), Vec::new());
        let mut last_used: HashMap<u64, (u64, u64)> = HashMap::new();
        for e in &logs.ats {
            match e {
                AtsEvent::Evaluated {
                    t,
                    id,
                    used: u,
                    quality,
                    ..
                } => {
                    m.evaluations += 1;
                    used.push(*u);
                    m.quality_histogram
                        [(quality.num * 10 / quality.den.max(1)).min(10) as usize] += 1;
                    last_used.insert(*id, (*t, *u));
                }
                AtsEvent::Activated {
                    t,
                    id,
                    src,
                    quality,
                    q_min,
                    refs,
                } => {
                    m.activations += 1;
                    if !quality.at_least(*q_min) {
                        m.quality_gate_violations += 1;
                    }
                    if last_used
                        .get(id)
                        .is_some_and(|(te, u)| te == t && u * eval_us > send_window_us)
                    {
                        m.send_window_violations += 1;
                    }
                    let order_core = refs
                        .first()
                        .and_then(|r| seq_of.get(r))
                        .and_then(|s| core_us.get(s));
                    if let (Some(o), Some(s)) = (order_core, core_us.get(src)) {
                        latency.push(o.saturating_sub(*s));
                    }
                }
                _ => {}
            }
        }
        m.deliberation_samples = Distribution::from_samples(used);
        m.activation_latency_us = Distribution::from_samples(latency);

        if m.duration_ms > 0 {
            let secs = m.duration_ms as f64 / 1000.0;
            m.throughput_per_s = m.input_events as f64 / secs;
            m.messages_per_s = (m.input_events + m.output_messages) as f64 / secs;
            m.deals_per_minute = m.trades as f64 / (secs / 60.0);
        }
        let mut buckets = vec![0u64; m.duration_ms.div_ceil(bucket_ms) as usize];
        for r in logs
            .output
            .iter()
            .filter(|r| matches!(r.msg, OutMsg::Trade(_)))
        {
            if let Some(us) = core_us.get(&r.seq) {
                let b = (us / 1000 / bucket_ms) as usize;
                if b >= buckets.len() {
                    buckets.resize(b + 1, 0);
                }
                buckets[b] += 1;
            }
        }
        m.deals_per_bucket = buckets;
        m
    }

    /// Latency distributions reported, by name.
    pub fn distributions(&self) -> [(&'static str, &Distribution); 4] {
        [
            ("rtt_us", &self.rtt_us),
            ("receive_interval_us", &self.receive_interval_us),
            ("deliberation_samples", &self.deliberation_samples),
            ("activation_latency_us", &self.activation_latency_us),
        ]
    }

    /// `key|value` lines, one distribution per `dist|` line, then a summary block.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}|{v}");
        };
        kv("partial", u8::from(self.partial).to_string());
        kv("seed", self.seed.to_string());
        kv("duration_ms", self.duration_ms.to_string());
        kv("input_events", self.input_events.to_string());
        kv("output_messages", self.output_messages.to_string());
        kv("trades", self.trades.to_string());
        kv("gateway_refusals", self.gateway_refusals.to_string());
        let f = &self.fates;
        kv("orders_in", f.orders_in.to_string());
        kv("orders_filled", f.filled.to_string());
        kv("orders_resting", f.resting.to_string());
        kv("orders_cancelled", f.cancelled.to_string());
        kv("orders_rejected", f.rejected.to_string());
        kv("throughput_per_s", format!("{:.3}", self.throughput_per_s));
        kv("messages_per_s", format!("{:.3}", self.messages_per_s));
        kv("deals_per_minute", format!("{:.3}", self.deals_per_minute));
        let buckets: Vec<String> = self.deals_per_bucket.iter().map(u64::to_string).collect();
        kv("deals_per_bucket", buckets.join(","));
        kv("evaluations", self.evaluations.to_string());
        kv("activations", self.activations.to_string());
        let hist: Vec<String> = self.quality_histogram.iter().map(u64::to_string).collect();
        kv("quality_histogram", hist.join(","));
        kv(
            "quality_gate_violations",
            self.quality_gate_violations.to_string(),
        );
        kv(
            "staleness_violations",
            self.staleness_violations.to_string(),
        );
        kv(
            "send_window_violations",
            self.send_window_violations.to_string(),
        );
        kv(
            "rate_factor_min",
            format!("{:.3}", self.rate_factor_min_milli as f64 / 1000.0),
        );
        kv(
            "rate_factor_final",
            format!("{:.3}", self.rate_factor_final_milli as f64 / 1000.0),
        );
        for fo in &self.failovers {
            kv(
                "failover",
                format!(
                    "crash_us={} detected_us={} promoted_us={} catch_up={} bound_us={} within_bound={}",
                    fo.crash_us,
                    fo.detected_us,
                    fo.promoted_us,
                    fo.catch_up_events,
                    fo.bound_us,
                    fo.within_bound()
                ),
            );
        }
        kv(
            "marketplace_down",
            self.marketplace_down
                .map_or("-".into(), |s| format!("after seq {s}")),
        );
        kv(
            "halted_at",
            self.halted_at.map_or("-".into(), |s| s.to_string()),
        );
        for (name, d) in self.distributions() {
            let _ = writeln!(
                s,
                "dist|{name}|count={}|min={}|p50={}|p95={}|p99={}|max={}|mean={:.1}",
                d.count,
                d.min,
                d.p50,
                d.p95,
                d.p99,
                d.max,
                d.mean()
            );
        }
        let _ = writeln!(s, "\n== summary ==");
        let _ = writeln!(
            s,
            "{} input events, {} trades ({:.1} deals/min), {} activations",
            self.input_events, self.trades, self.deals_per_minute, self.activations
        );
        let _ = writeln!(
            s,
            "orders in {} = filled {} + resting {} + cancelled {} + rejected {} ({})",
            f.orders_in,
            f.filled,
            f.resting,
            f.cancelled,
            f.rejected,
            if f.balanced() {
                "balanced"
            } else {
                "UNBALANCED"
            }
        );
        let _ = writeln!(
            s,
            "rtt p50/p95/p99 = {}/{}/{} us; activation latency p50/p95/p99 = {}/{}/{} us",
            self.rtt_us.p50,
            self.rtt_us.p95,
            self.rtt_us.p99,
            self.activation_latency_us.p50,
            self.activation_latency_us.p95,
            self.activation_latency_us.p99
        );
        if self.partial {
            let _ = writeln!(s, "PARTIAL: logs were truncated");
        }
        s
    }
}
