//! Deterministic matching core.
//!
//! One [`LogRecord`] in, a list of [`OutRecord`]s out. Every input event is
//! processed to completion (matching, combination execution, linked-order
//! cancellations, virtual-order re-derivation) before the next is read; the
//! output stream is a pure function of the input log.

mod book;
mod combo;
mod record;
mod replay;
mod types;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

pub use book::{crosses, BookSide, DepthOverflow, Key, OrderBook, Slot};
pub use record::{
    checksum, seal, unseal, AdminAction, CancelReason, Command, LogRecord, OutMsg, OutRecord,
    RejectReason,
};
pub use replay::{
    replay, replay_lines, rollback_restart, NullificationNotice, OutputStream, Recovery,
    ReplayError,
};
pub use types::*;

use combo::Plan;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("checksum mismatch")]
    Checksum,
    #[error("truncated record")]
    Truncated,
    #[error("unknown record type `{0}`")]
    UnknownType(String),
    #[error("{kind}: expected {expected} fields, got {got}")]
    Arity {
        kind: String,
        expected: usize,
        got: usize,
    },
    #[error("bad {0} field `{1}`")]
    Field(&'static str, String),
}

/// A self-check failed. The engine stops accepting input rather than keep trading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HaltReason {
    DepthOverflow(Instrument),
    NotionalOverflow(Instrument),
    CrossedBook(Instrument),
    SequenceRegression { last: SeqNo, got: SeqNo },
    LinkedXor(SpiderId),
}

impl fmt::Display for HaltReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HaltReason::DepthOverflow(i) => write!(f, "depth-overflow:{i}"),
            HaltReason::NotionalOverflow(i) => write!(f, "notional-overflow:{i}"),
            HaltReason::CrossedBook(i) => write!(f, "crossed-book:{i}"),
            HaltReason::SequenceRegression { last, got } => {
                write!(f, "sequence-regression:{last}>{got}")
            }
            HaltReason::LinkedXor(s) => write!(f, "linked-xor:{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("engine halted at seq {seq}: {reason}")]
pub struct EngineHalt {
    pub seq: SeqNo,
    pub reason: HaltReason,
}

impl EngineHalt {
    pub fn record(&self) -> OutRecord {
        OutRecord {
            seq: self.seq,
            msg: OutMsg::Halt(self.reason.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
struct Posted {
    key: Key,
    price: Price,
    qty: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct ComboState {
    pub order: CombinationOrder,
    pub seq: SeqNo,
    pub ts: u64,
    pub remaining: u64,
    pub live: bool,
    posted: Vec<Option<Posted>>,
    published: Vec<Option<(Price, u64)>>,
}

#[derive(Debug, Clone)]
struct Spider {
    owner: String,
    members: Vec<OrderId>,
    filled: Option<OrderId>,
}

struct Step {
    seq: SeqNo,
    out: Vec<OutMsg>,
    trades: u32,
    retired: BTreeSet<ComboId>,
}

impl Step {
    fn push(&mut self, msg: OutMsg) {
        self.out.push(msg);
    }
}

fn order_key(o: &Order) -> Key {
    Key::new(
        o.side,
        o.price,
        o.arrival_ts,
        o.seq_no,
        Slot::Real(o.order_id),
    )
}

#[derive(Debug, Clone, Default)]
pub struct Engine {
    books: BTreeMap<Instrument, OrderBook>,
    orders: HashMap<OrderId, Order>,
    combos: BTreeMap<ComboId, ComboState>,
    live_combos: BTreeSet<ComboId>,
    spiders: HashMap<SpiderId, Spider>,
    order_spider: HashMap<OrderId, SpiderId>,
    last_tops: BTreeMap<Instrument, TopOfBook>,
    last_seq: SeqNo,
    halted: Option<EngineHalt>,
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_seq(&self) -> SeqNo {
        self.last_seq
    }

    pub fn halted(&self) -> Option<&EngineHalt> {
        self.halted.as_ref()
    }

    pub fn instruments(&self) -> impl Iterator<Item = &str> {
        self.books.keys().map(String::as_str)
    }

    pub fn book(&self, instrument: &str) -> Option<&OrderBook> {
        self.books.get(instrument)
    }

    pub fn order(&self, id: OrderId) -> Option<&Order> {
        self.orders.get(&id)
    }

    pub fn orders(&self) -> impl Iterator<Item = &Order> {
        self.orders.values()
    }

    /// Resting real quantity on one side of a book.
    pub fn depth(&self, instrument: &str, side: Side) -> u64 {
        self.books
            .get(instrument)
            .map_or(0, |b| b.side(side).depth())
    }

    pub fn combo_remaining(&self, id: ComboId) -> Option<u64> {
        self.combos.get(&id).map(|c| c.remaining)
    }

    /// The virtual order currently resting for a combination leg, as (price, qty).
    pub fn virtual_order(&self, id: ComboId, leg: usize) -> Option<(Price, u64)> {
        let cs = self.combos.get(&id)?;
        cs.posted.get(leg)?.as_ref().map(|p| (p.price, p.qty))
    }

    /// Best bid/ask snapshot stamped with the last processed sequence number.
    pub fn quote_top(&self, instrument: &str) -> Option<OutRecord> {
        let book = self.books.get(instrument)?;
        Some(OutRecord {
            seq: self.last_seq,
            msg: OutMsg::Top(book.top()),
        })
    }

    /// Processes one sequenced input event to completion.
    pub fn apply(&mut self, rec: &LogRecord) -> Result<Vec<OutRecord>, EngineHalt> {
        if let Some(h) = &self.halted {
            return Err(h.clone());
        }
        match self.apply_inner(rec) {
            Ok(msgs) => Ok(msgs
                .into_iter()
                .map(|msg| OutRecord { seq: rec.seq, msg })
                .collect()),
            Err(reason) => {
                let h = EngineHalt {
                    seq: rec.seq,
                    reason,
                };
                self.halted = Some(h.clone());
                Err(h)
            }
        }
    }

    fn apply_inner(&mut self, rec: &LogRecord) -> Result<Vec<OutMsg>, HaltReason> {
        if rec.seq <= self.last_seq {
            return Err(HaltReason::SequenceRegression {
                last: self.last_seq,
                got: rec.seq,
            });
        }
        self.last_seq = rec.seq;
        let mut step = Step {
            seq: rec.seq,
            out: Vec::new(),
            trades: 0,
            retired: BTreeSet::new(),
        };
        match &rec.cmd {
            Command::Submit(req) => self.submit(req, rec.ts, &mut step)?,
            Command::Cancel { target, owner } => self.cancel(*target, owner, &mut step),
            Command::Combo(c) => self.submit_combo(c, rec.ts, &mut step)?,
            Command::Link(l) => self.link(l, &mut step),
            Command::Admin(AdminAction::List(inst)) => self.list(inst, &mut step),
        }
        self.settle(&mut step)?;
        self.rederive_virtuals(&mut step)?;
        for (inst, book) in &self.books {
            if book.is_crossed() {
                return Err(HaltReason::CrossedBook(inst.clone()));
            }
        }
        self.emit_tops(&mut step);
        Ok(step.out)
    }

    fn list(&mut self, inst: &str, step: &mut Step) {
        if self.books.contains_key(inst) {
            step.push(OutMsg::Reject {
                target: Ref::Admin,
                reason: RejectReason::AlreadyListed,
            });
            return;
        }
        let book = OrderBook::new(inst);
        self.last_tops.insert(inst.to_string(), book.top());
        self.books.insert(inst.to_string(), book);
        step.push(OutMsg::Ack(Ref::Admin));
    }

    fn submit(&mut self, req: &OrderRequest, ts: u64, step: &mut Step) -> Result<(), HaltReason> {
        let target = Ref::Order(req.order_id);
        let reject = |step: &mut Step, reason| step.push(OutMsg::Reject { target, reason });
        if !self.books.contains_key(&req.instrument) {
            reject(step, RejectReason::UnknownInstrument);
            return Ok(());
        }
        if self.orders.contains_key(&req.order_id) {
            reject(step, RejectReason::DuplicateId);
            return Ok(());
        }
        if req.origin == Origin::Virtual {
            reject(step, RejectReason::VirtualOrigin);
            return Ok(());
        }
        if req.price <= 0 || req.qty == 0 {
            reject(step, RejectReason::InvalidOrder);
            return Ok(());
        }
        let mut order = Order::from_request(req, step.seq, ts);
        step.push(OutMsg::Ack(target));
        self.match_incoming(&mut order, step)?;
        if order.remaining > 0 {
            let book = self.books.get_mut(&order.instrument).expect("listed");
            book.insert(order.side, order_key(&order), order.remaining)
                .map_err(|_| HaltReason::DepthOverflow(order.instrument.clone()))?;
        }
        self.orders.insert(order.order_id, order);
        Ok(())
    }

    fn match_incoming(&mut self, order: &mut Order, step: &mut Step) -> Result<(), HaltReason> {
        let contra = order.side.opposite();
        while order.remaining > 0 {
            let book = &self.books[&order.instrument];
            let Some((key, qty)) = book.best(contra) else {
                break;
            };
            let px = key.price(contra);
            if !crosses(order.side, order.price, px) {
                break;
            }
            match key.slot {
                Slot::Real(rid) => {
                    let fill = order.remaining.min(qty);
                    self.fill_resting(rid, fill);
                    order.remaining -= fill;
                    order.filled += fill;
                    let (buy, sell) = match order.side {
                        Side::Buy => (Party::Order(order.order_id), Party::Order(rid)),
                        Side::Sell => (Party::Order(rid), Party::Order(order.order_id)),
                    };
                    self.record_trade(step, &order.instrument, px, fill, buy, sell)?;
                    self.on_member_fill(rid, step)?;
                }
                Slot::Virtual(cid) => self.hit_virtual(cid, key, px, order, step)?,
            }
        }
        Ok(())
    }

    fn fill_resting(&mut self, id: OrderId, qty: u64) {
        let o = self.orders.get_mut(&id).expect("resting order is known");
        let key = order_key(o);
        o.remaining -= qty;
        o.filled += qty;
        let side = o.side;
        self.books
            .get_mut(&o.instrument)
            .expect("listed")
            .reduce(side, &key, qty);
    }

    fn record_trade(
        &mut self,
        step: &mut Step,
        instrument: &str,
        price: Price,
        qty: u64,
        buy: Party,
        sell: Party,
    ) -> Result<(), HaltReason> {
        i64::try_from(qty)
            .ok()
            .and_then(|q| price.checked_mul(q))
            .ok_or_else(|| HaltReason::NotionalOverflow(instrument.to_string()))?;
        step.trades += 1;
        step.push(OutMsg::Trade(Trade {
            trade_id: TradeId {
                seq: step.seq,
                n: step.trades,
            },
            instrument: instrument.to_string(),
            price,
            qty,
            buy,
            sell,
        }));
        Ok(())
    }

    /// Exclusive-or enforcement: the first member of a linked set to trade
    /// cancels every sibling in the same step.
    fn on_member_fill(&mut self, id: OrderId, step: &mut Step) -> Result<(), HaltReason> {
        let Some(sid) = self.order_spider.get(&id).copied() else {
            return Ok(());
        };
        let spider = self.spiders.get_mut(&sid).expect("indexed spider exists");
        match spider.filled {
            None => spider.filled = Some(id),
            Some(f) if f == id => return Ok(()),
            Some(_) => return Err(HaltReason::LinkedXor(sid)),
        }
        let siblings: Vec<OrderId> = spider
            .members
            .iter()
            .copied()
            .filter(|m| *m != id)
            .collect();
        for m in siblings {
            self.cancel_live(m, CancelReason::Spider, step);
        }
        Ok(())
    }

    fn cancel_live(&mut self, id: OrderId, reason: CancelReason, step: &mut Step) {
        let Some(o) = self.orders.get_mut(&id) else {
            return;
        };
        if o.remaining == 0 {
            return;
        }
        let key = order_key(o);
        let qty = o.remaining;
        o.remaining = 0;
        let side = o.side;
        self.books
            .get_mut(&o.instrument)
            .expect("listed")
            .remove(side, &key);
        step.push(OutMsg::Cancelled {
            target: Ref::Order(id),
            qty,
            reason,
        });
    }

    fn cancel(&mut self, target: Ref, owner: &str, step: &mut Step) {
        let reject = |step: &mut Step, reason| step.push(OutMsg::Reject { target, reason });
        match target {
            Ref::Order(id) => {
                let Some(o) = self.orders.get(&id) else {
                    return reject(step, RejectReason::UnknownOrder);
                };
                if o.owner != owner {
                    return reject(step, RejectReason::NotOwner);
                }
                if o.is_terminal() {
                    return reject(step, RejectReason::Terminal);
                }
                self.cancel_live(id, CancelReason::User, step);
                // Members of a linked set are all live or all terminal.
                if let Some(sid) = self.order_spider.get(&id).copied() {
                    let members = self.spiders[&sid].members.clone();
                    for m in members {
                        self.cancel_live(m, CancelReason::Spider, step);
                    }
                }
            }
            Ref::Combo(id) => {
                let Some(cs) = self.combos.get(&id) else {
                    return reject(step, RejectReason::UnknownOrder);
                };
                if cs.order.owner != owner {
                    return reject(step, RejectReason::NotOwner);
                }
                if !cs.live {
                    return reject(step, RejectReason::Terminal);
                }
                let qty = cs.remaining;
                self.retire_combo(id, step);
                step.push(OutMsg::Cancelled {
                    target,
                    qty,
                    reason: CancelReason::User,
                });
            }
            Ref::Link(id) => {
                let Some(sp) = self.spiders.get(&id) else {
                    return reject(step, RejectReason::UnknownOrder);
                };
                if sp.owner != owner {
                    return reject(step, RejectReason::NotOwner);
                }
                let members = sp.members.clone();
                if members.iter().all(|m| self.orders[m].is_terminal()) {
                    return reject(step, RejectReason::Terminal);
                }
                for m in members {
                    self.cancel_live(m, CancelReason::User, step);
                }
            }
            Ref::Admin => reject(step, RejectReason::UnknownOrder),
        }
    }

    fn link(&mut self, req: &LinkRequest, step: &mut Step) {
        let target = Ref::Link(req.spider_id);
        if self.spiders.contains_key(&req.spider_id) {
            step.push(OutMsg::Reject {
                target,
                reason: RejectReason::DuplicateId,
            });
            return;
        }
        let distinct: BTreeSet<OrderId> = req.members.iter().copied().collect();
        let valid = distinct.len() == req.members.len()
            && distinct.len() >= 2
            && req.members.iter().all(|m| {
                self.orders.get(m).is_some_and(|o| {
                    o.owner == req.owner && o.remaining == o.qty && o.remaining > 0
                }) && !self.order_spider.contains_key(m)
            });
        if !valid {
            step.push(OutMsg::Reject {
                target,
                reason: RejectReason::InvalidLink,
            });
            return;
        }
        for m in &req.members {
            self.order_spider.insert(*m, req.spider_id);
        }
        self.spiders.insert(
            req.spider_id,
            Spider {
                owner: req.owner.clone(),
                members: req.members.clone(),
                filled: None,
            },
        );
        step.push(OutMsg::Ack(target));
    }

    fn submit_combo(
        &mut self,
        c: &CombinationOrder,
        ts: u64,
        step: &mut Step,
    ) -> Result<(), HaltReason> {
        let target = Ref::Combo(c.combo_id);
        if c.legs
            .iter()
            .any(|l| !self.books.contains_key(&l.instrument))
        {
            step.push(OutMsg::Reject {
                target,
                reason: RejectReason::UnknownInstrument,
            });
            return Ok(());
        }
        if self.combos.contains_key(&c.combo_id) {
            step.push(OutMsg::Reject {
                target,
                reason: RejectReason::DuplicateId,
            });
            return Ok(());
        }
        if c.origin == Origin::Virtual {
            step.push(OutMsg::Reject {
                target,
                reason: RejectReason::VirtualOrigin,
            });
            return Ok(());
        }
        if c.check_shape().is_err() {
            step.push(OutMsg::Reject {
                target,
                reason: RejectReason::InvalidCombo,
            });
            return Ok(());
        }
        let legs = c.legs.len();
        self.combos.insert(
            c.combo_id,
            ComboState {
                order: c.clone(),
                seq: step.seq,
                ts,
                remaining: c.combo_qty,
                live: true,
                posted: vec![None; legs],
                published: vec![None; legs],
            },
        );
        self.live_combos.insert(c.combo_id);
        step.push(OutMsg::Ack(target));
        self.execute_at_tops(c.combo_id, step)?;
        Ok(())
    }

    fn retire_combo(&mut self, id: ComboId, step: &mut Step) {
        let cs = self.combos.get_mut(&id).expect("known combo");
        cs.live = false;
        self.live_combos.remove(&id);
        step.retired.insert(id);
        self.withdraw_all_virtuals(id);
    }

    fn withdraw_all_virtuals(&mut self, id: ComboId) {
        let legs = self.combos[&id].order.legs.len();
        for leg in 0..legs {
            self.withdraw_virtual(id, leg);
        }
    }

    fn withdraw_virtual(&mut self, id: ComboId, leg: usize) {
        let cs = self.combos.get_mut(&id).expect("known combo");
        if let Some(p) = cs.posted[leg].take() {
            let l = &cs.order.legs[leg];
            self.books
                .get_mut(&l.instrument)
                .expect("listed")
                .remove(l.side, &p.key);
        }
    }

    fn commit_plan(
        &mut self,
        cid: ComboId,
        plan: &Plan,
        step: &mut Step,
    ) -> Result<(), HaltReason> {
        let legs = self.combos[&cid].order.legs.clone();
        for f in &plan.fills {
            let leg = &legs[f.leg];
            self.fill_resting(f.order, f.qty);
            let me = Party::ComboLeg(cid, f.leg);
            let (buy, sell) = match leg.side {
                Side::Buy => (me, Party::Order(f.order)),
                Side::Sell => (Party::Order(f.order), me),
            };
            self.record_trade(step, &leg.instrument, f.price, f.qty, buy, sell)?;
            self.on_member_fill(f.order, step)?;
        }
        Ok(())
    }

    fn after_combo_fill(&mut self, cid: ComboId, units: u64, step: &mut Step) {
        let cs = self.combos.get_mut(&cid).expect("known combo");
        cs.remaining -= units;
        let remaining = cs.remaining;
        step.push(OutMsg::ComboFill {
            combo: cid,
            units,
            remaining,
        });
        if remaining == 0 {
            self.retire_combo(cid, step);
        }
    }

    /// Executes as many units as book tops allow in one atomic step. With
    /// all-or-none, either every remaining unit executes or none does.
    fn execute_at_tops(&mut self, cid: ComboId, step: &mut Step) -> Result<u64, HaltReason> {
        let cs = &self.combos[&cid];
        let want = cs.remaining;
        let aon = cs.order.all_or_none;
        let plan = self.plan(cid, want, None, 0);
        if plan.units == 0 || (aon && plan.units < want) {
            return Ok(0);
        }
        self.commit_plan(cid, &plan, step)?;
        self.after_combo_fill(cid, plan.units, step);
        Ok(plan.units)
    }

    /// An incoming order reached a virtual order: execute the combination
    /// with the incoming order filling this leg, or withdraw a stale quote.
    fn hit_virtual(
        &mut self,
        cid: ComboId,
        key: Key,
        price: Price,
        order: &mut Order,
        step: &mut Step,
    ) -> Result<(), HaltReason> {
        let cs = &self.combos[&cid];
        let leg_idx = cs
            .order
            .legs
            .iter()
            .position(|l| l.instrument == order.instrument)
            .expect("virtual order sits on a leg instrument");
        let leg = cs.order.legs[leg_idx].clone();
        let fresh = self.implied_quote(cid, leg_idx);
        let max_units = (order.remaining / leg.ratio).min(cs.remaining);
        if fresh.is_none_or(|q| q.price != price) || max_units == 0 {
            self.withdraw_virtual(cid, leg_idx);
            return Ok(());
        }
        let fixed = leg.side.cost_sign() * i128::from(leg.ratio) * i128::from(price);
        let plan = self.plan(cid, max_units, Some(leg_idx), fixed);
        if plan.units == 0 {
            self.withdraw_virtual(cid, leg_idx);
            return Ok(());
        }
        let qty = plan.units * leg.ratio;
        order.remaining -= qty;
        order.filled += qty;
        let me = Party::ComboLeg(cid, leg_idx);
        let (buy, sell) = match leg.side {
            Side::Buy => (me, Party::Order(order.order_id)),
            Side::Sell => (Party::Order(order.order_id), me),
        };
        self.record_trade(step, &leg.instrument, price, qty, buy, sell)?;
        self.commit_plan(cid, &plan, step)?;
        self.after_combo_fill(cid, plan.units, step);

        if self.combos[&cid].live {
            match self.implied_quote(cid, leg_idx) {
                Some(q) if q.price == price => {
                    let cs = self.combos.get_mut(&cid).expect("known combo");
                    if let Some(p) = cs.posted[leg_idx].as_mut() {
                        p.qty = q.qty;
                    }
                    self.books
                        .get_mut(&leg.instrument)
                        .expect("listed")
                        .set_qty(leg.side, &key, q.qty);
                }
                _ => self.withdraw_virtual(cid, leg_idx),
            }
        }
        Ok(())
    }

    /// Re-runs combination execution until no resting combination can trade.
    fn settle(&mut self, step: &mut Step) -> Result<(), HaltReason> {
        loop {
            let ids: Vec<ComboId> = self.live_combos.iter().copied().collect();
            let mut progressed = false;
            for cid in ids {
                if self.combos[&cid].live && self.execute_at_tops(cid, step)? > 0 {
                    progressed = true;
                }
            }
            if !progressed {
                return Ok(());
            }
        }
    }

    /// Re-derives every virtual order from current real book tops and
    /// publishes the differences.
    fn rederive_virtuals(&mut self, step: &mut Step) -> Result<(), HaltReason> {
        let mut ids: BTreeSet<ComboId> = self.live_combos.clone();
        ids.extend(step.retired.iter().copied());
        for cid in ids {
            let legs = self.combos[&cid].order.legs.clone();
            let (live, aon, seq, ts) = {
                let cs = &self.combos[&cid];
                (cs.live, cs.order.all_or_none, cs.seq, cs.ts)
            };
            for (i, leg) in legs.iter().enumerate() {
                let desired = if live && !aon {
                    self.implied_quote(cid, i).filter(|q| {
                        let book = &self.books[&leg.instrument];
                        // Never rest crossed, against real or other virtual liquidity.
                        book.best_price(leg.side.opposite())
                            .is_none_or(|c| !crosses(leg.side, q.price, c))
                    })
                } else {
                    None
                };
                let current = self.combos[&cid].posted[i]
                    .as_ref()
                    .map(|p| (p.price, p.qty, p.key));
                match (current, desired) {
                    (Some((p, q, key)), Some(d)) if p == d.price => {
                        if q != d.qty {
                            self.books
                                .get_mut(&leg.instrument)
                                .expect("listed")
                                .set_qty(leg.side, &key, d.qty);
                            self.combos.get_mut(&cid).expect("known").posted[i]
                                .as_mut()
                                .expect("posted")
                                .qty = d.qty;
                        }
                    }
                    (cur, d) => {
                        if cur.is_some() {
                            self.withdraw_virtual(cid, i);
                        }
                        if let Some(d) = d {
                            let key = Key::new(leg.side, d.price, ts, seq, Slot::Virtual(cid));
                            self.books
                                .get_mut(&leg.instrument)
                                .expect("listed")
                                .insert(leg.side, key, d.qty)
                                .map_err(|_| HaltReason::DepthOverflow(leg.instrument.clone()))?;
                            self.combos.get_mut(&cid).expect("known").posted[i] = Some(Posted {
                                key,
                                price: d.price,
                                qty: d.qty,
                            });
                        }
                    }
                }
                let cs = self.combos.get_mut(&cid).expect("known");
                let now = cs.posted[i].as_ref().map(|p| (p.price, p.qty));
                if now != cs.published[i] {
                    let (price, qty) = match now {
                        Some(v) => v,
                        None => (cs.published[i].map_or(0, |(p, _)| p), 0),
                    };
                    step.push(OutMsg::Virtual {
                        combo: cid,
                        leg: i,
                        instrument: leg.instrument.clone(),
                        side: leg.side,
                        price,
                        qty,
                    });
                    cs.published[i] = now;
                }
            }
        }
        Ok(())
    }

    fn emit_tops(&mut self, step: &mut Step) {
        for (inst, book) in &self.books {
            let top = book.top();
            let last = self
                .last_tops
                .get_mut(inst)
                .expect("listed instruments have a last top");
            if *last != top {
                *last = top.clone();
                step.push(OutMsg::Top(top));
            }
        }
    }

    /// Canonical text rendering of the full matching state, for equality
    /// checks between engines.
    pub fn state_digest(&self) -> String {
        let mut s = String::new();
        for (inst, book) in &self.books {
            for side in [Side::Buy, Side::Sell] {
                for (k, q) in book.side(side).iter() {
                    let slot = match k.slot {
                        Slot::Real(o) => format!("O{o}"),
                        Slot::Virtual(c) => format!("V{c}"),
                    };
                    writeln!(
                        s,
                        "book {inst} {} {} {} {} {slot} {q}",
                        side.code(),
                        k.price(side),
                        k.ts,
                        k.seq
                    )
                    .expect("infallible");
                }
            }
        }
        let mut ids: Vec<&OrderId> = self.orders.keys().collect();
        ids.sort();
        for id in ids {
            let o = &self.orders[id];
            writeln!(
                s,
                "order {} {} {} {}",
                o.order_id, o.qty, o.remaining, o.filled
            )
            .expect("infallible");
        }
        for (id, c) in &self.combos {
            writeln!(s, "combo {id} {} {}", c.remaining, c.live).expect("infallible");
        }
        let mut sp: Vec<(&SpiderId, &Spider)> = self.spiders.iter().collect();
        sp.sort_by_key(|(id, _)| **id);
        for (id, spd) in sp {
            writeln!(s, "spider {id} {:?}", spd.filled).expect("infallible");
        }
        writeln!(s, "seq {}", self.last_seq).expect("infallible");
        s
    }
}

#[cfg(test)]
mod tests;
