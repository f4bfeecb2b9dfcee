//! Ready-made scenarios for tests and experiments.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{AgentSpec, AtsSection, MetricsConfig, Scenario};
use super::script::ScriptParams;
use crate::ats::{AtsConfig, IndexDef};
use crate::gateway::{Role, SessionConfig, SessionId, ThrottleConfig};
use crate::sim::{FaultAction, FaultEntry, LinkProfile, ReplicationConfig};

const WAN_A: u32 = 1;
const WAN_B: u32 = 2;
const COLO: u32 = 3;

fn session(id: SessionId, who: &str, link: u32, subs: &[&str], role: Role) -> SessionConfig {
    SessionConfig {
        session_id: id,
        participant: who.to_string(),
        link_id: link,
        subscriptions: subs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
        role,
    }
}

fn wan(id: u32, jitter_ms: f64, group: Option<&str>) -> LinkProfile {
    LinkProfile {
        jitter_ms,
        loss_prob: 0.001,
        retransmit_penalty_ms: 30.0,
        delay_box_group: group.map(str::to_string),
        ..LinkProfile::fixed(id, 20.0)
    }
}

fn colo(id: u32) -> LinkProfile {
    LinkProfile {
        jitter_ms: 0.05,
        ..LinkProfile::fixed(id, 0.1)
    }
}

fn text(t: String) -> AgentSpec {
    AgentSpec {
        file: None,
        text: Some(t),
        host: None,
    }
}

fn order_agent(
    id: u64,
    owner: &str,
    trigger: &str,
    q_min: f64,
    budget: u64,
    order: (&str, &str, i64, u64),
) -> String {
    let (instrument, side, price, qty) = order;
    format!(
        "id = {id}\nowner = \"{owner}\"\ntrigger = \"{trigger}\"\nq_min = {q_min}\nbudget = {budget}\n\
         [template.order]\ninstrument = \"{instrument}\"\nside = \"{side}\"\nprice = {price}\nqty = {qty}\n"
    )
}

fn base(seed: u64, duration_ms: u64, instruments: &[&str]) -> Scenario {
    Scenario {
        seed,
        duration_ms,
        instruments: instruments.iter().map(|s| s.to_string()).collect(),
        script: ScriptParams::default(),
        links: vec![],
        sessions: vec![],
        throttle: ThrottleConfig::default(),
        replication: ReplicationConfig::default(),
        ats: AtsSection::default(),
        agents: vec![],
        faults: vec![],
        metrics: MetricsConfig::default(),
    }
}

/// Two WAN clients trading A, B and C, a co-located trade server with five
/// agents (one of them placing combinations) and one agent that a client
/// runs itself. `events` script events are spread over ten seconds.
pub fn baseline(seed: u64, events: u64) -> Scenario {
    let all = ["A", "B", "C"];
    let mut s = base(seed, 10_000, &["A", "B", "C"]);
    s.script.rate_per_s = (events / 10).max(1);
    s.links = vec![
        wan(WAN_A, 2.0, Some("wan")),
        wan(WAN_B, 4.0, Some("wan")),
        colo(COLO),
    ];
    s.sessions = vec![
        session(1, "p1", WAN_A, &all, Role::Client),
        session(2, "p2", WAN_B, &all, Role::Client),
        session(3, "ats", COLO, &all, Role::Ats),
    ];
    s.ats = AtsSection {
        session: Some(3),
        recover_after_ms: Some(500),
        config: AtsConfig {
            index: Some(IndexDef {
                name: "IDX".into(),
                members: vec!["A".into(), "B".into(), "C".into()],
            }),
            ..AtsConfig::default()
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut lvl = |lo: i64, hi: i64| rng.gen_range(lo..=hi);
    let (a_hi, b_lo, c_hi, a_lo, c_lo, b_dip) = (
        lvl(101, 106),
        lvl(94, 99),
        lvl(101, 106),
        lvl(94, 99),
        lvl(94, 99),
        lvl(95, 99),
    );
    s.agents = vec![
        text(order_agent(
            1,
            "p1",
            &format!("price_above(A,{a_hi}) AND price_below(B,{b_lo})"),
            0.8,
            8,
            ("A", "buy", a_hi + 2, 3),
        )),
        text(order_agent(
            2,
            "p1",
            "ma_cross(A,3,8) AND volume_above(B,5,20)",
            0.9,
            4,
            ("B", "sell", 90, 2),
        )),
        text(order_agent(
            3,
            "p2",
            &format!("index_change_pct(IDX,5,1) AND spread_below(C,4) AND price_above(C,{c_hi})"),
            0.5,
            16,
            ("C", "buy", c_hi + 1, 4),
        )),
        text(order_agent(
            4,
            "p2",
            &format!("(price_below(A,{a_lo}) OR price_below(C,{c_lo})) AND NOT index_change_pct(IDX,4,2)"),
            0.7,
            12,
            ("A", "sell", a_lo - 1, 2),
        )),
        text(format!(
            "id = 5\nowner = \"p1\"\ntrigger = \"time_window(B,2000,6000) AND price_above(C,{c_hi})\"\n\
             q_min = 0.5\nbudget = 8\nchunk_bound = 3\nepsilon = 1\n\
             [template.combo]\nnet_limit = {}\nqty = 5\nlegs = [\n\
             {{ instrument = \"A\", side = \"buy\", ratio = 2 }},\n\
             {{ instrument = \"B\", side = \"sell\", ratio = 1 }},\n]\n",
            c_hi + 5
        )),
        AgentSpec {
            host: Some(2),
            ..text(order_agent(
                6,
                "p2",
                &format!("price_below(B,{b_dip}) AND volume_above(A,3,10)"),
                0.6,
                8,
                ("B", "buy", b_dip, 1),
            ))
        },
    ];
    s
}

/// `baseline` with a hot standby and the primary crashing at `crash_ms`.
pub fn failover(seed: u64, events: u64, crash_ms: u64) -> Scenario {
    let mut s = baseline(seed, events);
    s.replication = ReplicationConfig {
        enabled: true,
        lag_events: 3,
        ..ReplicationConfig::default()
    };
    s.faults.push(FaultEntry {
        at_ms: crash_ms,
        action: FaultAction::CrashPrimary,
    });
    s
}

/// Order flow close to the core's base rate, with an optional congestion
/// burst that saturates the throttle from 2 s to 4 s. No agents, so the
/// input does not depend on timing.
pub fn congestion(seed: u64, burst: bool) -> Scenario {
    let mut s = base(seed, 10_000, &["A", "B"]);
    s.script.rate_per_s = 150;
    s.links = vec![wan(WAN_A, 1.0, Some("wan")), wan(WAN_B, 1.0, Some("wan"))];
    s.sessions = vec![
        session(1, "p1", WAN_A, &["A", "B"], Role::Client),
        session(2, "p2", WAN_B, &["A", "B"], Role::Client),
    ];
    s.throttle = ThrottleConfig {
        high_watermark: 100,
        beta: 0.8,
        r_min: 0.2,
        base_rate: 200,
    };
    if burst {
        s.faults = vec![
            FaultEntry {
                at_ms: 2000,
                action: FaultAction::CongestionBurst {
                    link: None,
                    depth: 100,
                },
            },
            FaultEntry {
                at_ms: 4000,
                action: FaultAction::Restore,
            },
        ];
    }
    s
}

/// Number of agents in the containment scenario.
pub const CONTAINMENT_AGENTS: u64 = 10;

/// Ten agents with staggered trading windows resting buy orders on Z, an
/// instrument no client trades. `kill` crashes that agent halfway through.
pub fn containment(seed: u64, kill: Option<u64>) -> Scenario {
    let mut s = base(seed, 10_000, &["A", "B"]);
    s.links = vec![wan(WAN_A, 2.0, None), LinkProfile::fixed(COLO, 0.1)];
    s.sessions = vec![
        session(1, "p1", WAN_A, &["A", "B"], Role::Client),
        session(3, "ats", COLO, &["A", "B"], Role::Ats),
    ];
    // Fast enough that agent orders never push client events into a later
    // millisecond.
    s.throttle.base_rate = 1_000_000;
    s.ats.session = Some(3);
    s.agents = (1..=CONTAINMENT_AGENTS)
        .map(|i| {
            let from = 500 + 900 * (i - 1);
            let trigger = format!("time_window(A,{from},{}) AND price_above(B,1)", from + 1500);
            text(order_agent(
                i,
                "p1",
                &trigger,
                0.5,
                4,
                ("Z", "buy", 10 + i as i64, 1),
            ))
        })
        .collect();
    if let Some(id) = kill {
        s.faults.push(FaultEntry {
            at_ms: 5000,
            action: FaultAction::CrashAgent { id },
        });
    }
    s
}

/// Ids of the two competing agents in a proximity trial.
pub const PROXIMITY_ATS_AGENT: u64 = 1;
pub const PROXIMITY_CLIENT_AGENT: u64 = 2;

/// One contested tick: the same trigger and order run once on the trade
/// server and once on a WAN client, both buying A at a marketable price.
pub fn proximity(seed: u64) -> Scenario {
    let mut s = base(seed, 3000, &["A", "B"]);
    s.links = vec![wan(WAN_A, 2.0, None), colo(COLO), wan(WAN_B, 5.0, None)];
    s.sessions = vec![
        session(1, "p1", WAN_A, &["A", "B"], Role::Client),
        session(2, "p9", WAN_B, &["A", "B"], Role::Client),
        session(3, "ats", COLO, &["A", "B"], Role::Ats),
    ];
    s.ats.session = Some(3);
    s.script.senders = vec![1];
    let level = ChaCha8Rng::seed_from_u64(seed).gen_range(100..=104);
    let trigger = format!("price_above(A,{level}) AND price_above(B,1)");
    let agent = |id| order_agent(id, "p9", &trigger, 0.5, 4, ("A", "buy", 150, 1));
    s.agents = vec![
        text(agent(PROXIMITY_ATS_AGENT)),
        AgentSpec {
            host: Some(2),
            ..text(agent(PROXIMITY_CLIENT_AGENT))
        },
    ];
    s
}
