//! Seeded synthetic order flow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::engine::{Command, OrderId, OrderRequest, Origin, Ref, Side};
use crate::gateway::SessionId;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptParams {
    /// Events per simulated second, evenly spaced.
    pub rate_per_s: u64,
    pub start_ms: u64,
    pub price_start: i64,
    /// Largest move of an instrument's mid price per event.
    pub price_step: i64,
    pub price_min: i64,
    pub price_max: i64,
    /// Largest distance of a limit price from the mid.
    pub spread: i64,
    pub qty_min: u64,
    pub qty_max: u64,
    /// Share of events, in percent, that cancel an earlier order.
    pub cancel_pct: u32,
    /// Client sessions that carry the flow; empty means all of them.
    pub senders: Vec<SessionId>,
}

impl Default for ScriptParams {
    fn default() -> Self {
        ScriptParams {
            rate_per_s: 100,
            start_ms: 1,
            price_start: 100,
            price_step: 1,
            price_min: 50,
            price_max: 150,
            spread: 3,
            qty_min: 1,
            qty_max: 10,
            cancel_pct: 10,
            senders: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("no instruments")]
    NoInstruments,
    #[error("no client sessions to send from")]
    NoSenders,
    #[error("event rate must be positive")]
    ZeroRate,
    #[error("price band must satisfy 1 <= price_min <= price_start <= price_max")]
    PriceBand,
    #[error("size bounds must satisfy 1 <= qty_min <= qty_max")]
    SizeBounds,
    #[error("cancel_pct must be at most 100")]
    CancelPct,
    #[error("price_step and spread must be non-negative")]
    Negative,
}

/// One participant message at a fixed simulated time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEvent {
    pub at_us: u64,
    pub session_id: SessionId,
    pub line: String,
}

impl ScriptParams {
    pub fn check(&self) -> Result<(), ScriptError> {
        if self.rate_per_s == 0 {
            return Err(ScriptError::ZeroRate);
        }
        if self.price_min < 1
            || self.price_min > self.price_start
            || self.price_start > self.price_max
        {
            return Err(ScriptError::PriceBand);
        }
        if self.qty_min == 0 || self.qty_min > self.qty_max {
            return Err(ScriptError::SizeBounds);
        }
        if self.cancel_pct > 100 {
            return Err(ScriptError::CancelPct);
        }
        if self.price_step < 0 || self.spread < 0 {
            return Err(ScriptError::Negative);
        }
        Ok(())
    }

    pub fn event_count(&self, duration_ms: u64) -> u64 {
        self.rate_per_s * duration_ms / 1000
    }
}

/// Fixed-rate script: each event moves one instrument's mid by a bounded
/// random step and then either submits a limit order near the mid or
/// cancels one of the sender's earlier orders.
pub fn generate_script(
    seed: u64,
    params: &ScriptParams,
    instruments: &[String],
    senders: &[(SessionId, String)],
    duration_ms: u64,
) -> Result<Vec<ScriptEvent>, ScriptError> {
    params.check()?;
    if instruments.is_empty() {
        return Err(ScriptError::NoInstruments);
    }
    if senders.is_empty() {
        return Err(ScriptError::NoSenders);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut mids = vec![params.price_start; instruments.len()];
    let mut open: Vec<Vec<OrderId>> = vec![Vec::new(); senders.len()];
    let mut next_id = 1;
    let start_us = params.start_ms * 1000;
    let n = params.event_count(duration_ms);
    let mut out = Vec::with_capacity(n as usize);
    for i in 0..n {
        let at_us = start_us + i * 1_000_000 / params.rate_per_s;
        let who = rng.gen_range(0..senders.len());
        let (session_id, owner) = &senders[who];
        let k = rng.gen_range(0..instruments.len());
        let step = rng.gen_range(-params.price_step..=params.price_step);
        mids[k] = (mids[k] + step).clamp(params.price_min, params.price_max);
        let cancel = rng.gen_range(0..100) < params.cancel_pct && !open[who].is_empty();
        let cmd = if cancel {
            let j = rng.gen_range(0..open[who].len());
            let id = open[who].swap_remove(j);
            Command::Cancel {
                target: Ref::Order(id),
                owner: owner.clone(),
            }
        } else {
            let side = if rng.gen_bool(0.5) {
                Side::Buy
            } else {
                Side::Sell
            };
            let offset = rng.gen_range(-params.spread..=params.spread);
            let price = (mids[k] + offset).clamp(params.price_min, params.price_max);
            let qty = rng.gen_range(params.qty_min..=params.qty_max);
            let id = OrderId(next_id);
            next_id += 1;
            open[who].push(id);
            Command::Submit(OrderRequest {
                order_id: id,
                instrument: instruments[k].clone(),
                side,
                price,
                qty,
                origin: Origin::Client,
                owner: owner.clone(),
            })
        };
        out.push(ScriptEvent {
            at_us,
            session_id: *session_id,
            line: cmd.to_wire(),
        });
    }
    Ok(out)
}
