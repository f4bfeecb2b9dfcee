//! Simulated point-to-point links.
//!
//! Each link carries two independent FIFO channels, one per direction, with
//! their own seeded generator. A lost packet is never dropped: it arrives
//! late by the retransmission penalty.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::gateway::LinkId;

/// Link parameters as written in a scenario file. Times are in milliseconds.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkProfile {
    pub link_id: LinkId,
    #[serde(default)]
    pub base_latency_ms: f64,
    /// Upper bound of a uniform extra delay.
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub retransmit_penalty_ms: f64,
    /// Messages per simulated second; 0 means unlimited.
    #[serde(default)]
    pub bandwidth: u64,
    #[serde(default)]
    pub delay_box_group: Option<String>,
}

impl LinkProfile {
    pub fn fixed(link_id: LinkId, base_latency_ms: f64) -> Self {
        LinkProfile {
            link_id,
            base_latency_ms,
            jitter_ms: 0.0,
            loss_prob: 0.0,
            retransmit_penalty_ms: 0.0,
            bandwidth: 0,
            delay_box_group: None,
        }
    }

    fn check(&self) -> Result<(), NetworkError> {
        let bad = |field| NetworkError::BadProfile {
            link: self.link_id,
            field,
        };
        for (v, name) in [
            (self.base_latency_ms, "base_latency_ms"),
            (self.jitter_ms, "jitter_ms"),
            (self.retransmit_penalty_ms, "retransmit_penalty_ms"),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(bad(name));
            }
        }
        if !(0.0..1.0).contains(&self.loss_prob) {
            return Err(bad("loss_prob"));
        }
        Ok(())
    }
}

pub fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("link {link}: invalid {field}")]
    BadProfile { link: LinkId, field: &'static str },
    #[error("link {0} defined twice")]
    DuplicateLink(LinkId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("delay box group `{0}` needs at least two links")]
    LonelyGroup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// Participant towards the gateway.
    Up,
    /// Gateway towards the participant.
    Down,
}

/// Effective base latency per link in microseconds after delay-box
/// equalization: every member of a group is raised to the group maximum.
pub fn apply_delay_boxes(profiles: &[LinkProfile]) -> Result<BTreeMap<LinkId, u64>, NetworkError> {
    let mut groups: BTreeMap<&str, Vec<&LinkProfile>> = BTreeMap::new();
    for p in profiles {
        if let Some(g) = &p.delay_box_group {
            groups.entry(g.as_str()).or_default().push(p);
        }
    }
    let mut out: BTreeMap<LinkId, u64> = profiles
        .iter()
        .map(|p| (p.link_id, ms_to_us(p.base_latency_ms)))
        .collect();
    for (name, members) in groups {
        if members.len() < 2 {
            return Err(NetworkError::LonelyGroup(name.to_string()));
        }
        let max = members.iter().map(|p| out[&p.link_id]).max().unwrap_or(0);
        for p in members {
            out.insert(p.link_id, max);
        }
    }
    Ok(out)
}

/// Outcome of one send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub at_us: u64,
    pub lost: bool,
    /// Time spent waiting for bandwidth before transmission.
    pub queued_us: u64,
}

#[derive(Debug, Clone)]
struct Channel {
    base_us: u64,
    jitter_us: u64,
    penalty_us: u64,
    loss_prob: f64,
    service_us: u64,
    rng: ChaCha8Rng,
    busy_until: u64,
    last_delivery: u64,
}

impl Channel {
    fn send(&mut self, now: u64) -> Delivery {
        let start = now.max(self.busy_until);
        self.busy_until = start + self.service_us;
        let jitter = self.rng.gen_range(0..=self.jitter_us);
        let lost = self.rng.gen::<f64>() < self.loss_prob;
        let mut at = start + self.base_us + jitter;
        if lost {
            at += self.penalty_us;
        }
        at = at.max(self.last_delivery);
        self.last_delivery = at;
        Delivery {
            at_us: at,
            lost,
            queued_us: start - now,
        }
    }

    fn queued(&self, now: u64) -> u64 {
        if self.service_us == 0 || self.busy_until <= now {
            0
        } else {
            (self.busy_until - now).div_ceil(self.service_us)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    channels: BTreeMap<(LinkId, Direction), Channel>,
    effective: BTreeMap<LinkId, u64>,
}

impl Network {
    pub fn new(seed: u64, profiles: &[LinkProfile]) -> Result<Self, NetworkError> {
        let mut seen = std::collections::BTreeSet::new();
        for p in profiles {
            p.check()?;
            if !seen.insert(p.link_id) {
                return Err(NetworkError::DuplicateLink(p.link_id));
            }
        }
        let effective = apply_delay_boxes(profiles)?;
        let mut channels = BTreeMap::new();
        for p in profiles {
            for (k, dir) in [Direction::Up, Direction::Down].into_iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(u64::from(p.link_id) * 2 + k as u64);
                channels.insert(
                    (p.link_id, dir),
                    Channel {
                        base_us: effective[&p.link_id],
                        jitter_us: ms_to_us(p.jitter_ms),
                        penalty_us: ms_to_us(p.retransmit_penalty_ms),
                        loss_prob: p.loss_prob,
                        service_us: if p.bandwidth == 0 {
                            0
                        } else {
                            1_000_000u64.div_ceil(p.bandwidth)
                        },
                        rng,
                        busy_until: 0,
                        last_delivery: 0,
                    },
                );
            }
        }
        Ok(Network {
            channels,
            effective,
        })
    }

    pub fn send(
        &mut self,
        link: LinkId,
        dir: Direction,
        now_us: u64,
    ) -> Result<Delivery, NetworkError> {
        let ch = self
            .channels
            .get_mut(&(link, dir))
            .ok_or(NetworkError::UnknownLink(link))?;
        Ok(ch.send(now_us))
    }

    pub fn effective_base_us(&self, link: LinkId) -> Option<u64> {
        self.effective.get(&link).copied()
    }

    pub fn has_link(&self, link: LinkId) -> bool {
        self.effective.contains_key(&link)
    }

    /// Messages waiting for bandwidth on one link's outbound channel.
    pub fn queued_on(&self, link: LinkId, now_us: u64) -> u64 {
        self.channels
            .get(&(link, Direction::Down))
            .map_or(0, |c| c.queued(now_us))
    }

    /// Messages waiting for bandwidth across all outbound channels.
    pub fn queued_outbound(&self, now_us: u64) -> u64 {
        self.channels
            .iter()
            .filter(|((_, d), _)| *d == Direction::Down)
            .map(|(_, c)| c.queued(now_us))
            .sum()
    }
}
