use std::collections::BTreeMap;

use super::types::*;

/// What occupies a book slot: a real order or the virtual order of a resting combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Real(OrderId),
    Virtual(ComboId),
}

/// Priority key. Ordering is (price priority, arrival_ts, seq_no); bids store
/// the negated price so both sides iterate best-first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key {
    price_key: i64,
    pub ts: u64,
    pub seq: SeqNo,
    pub slot: Slot,
}

impl Key {
    pub fn new(side: Side, price: Price, ts: u64, seq: SeqNo, slot: Slot) -> Self {
        let price_key = match side {
            Side::Buy => -price,
            Side::Sell => price,
        };
        Key {
            price_key,
            ts,
            seq,
            slot,
        }
    }

    pub fn price(&self, side: Side) -> Price {
        match side {
            Side::Buy => -self.price_key,
            Side::Sell => self.price_key,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct BookSide {
    entries: BTreeMap<Key, u64>,
    /// Resting real quantity; virtual liquidity is excluded.
    depth: u64,
}

impl BookSide {
    pub fn best(&self) -> Option<(Key, u64)> {
        self.entries.iter().next().map(|(k, q)| (*k, *q))
    }

    pub fn iter(&self) -> std::collections::btree_map::Iter<'_, Key, u64> {
        self.entries.iter()
    }

    pub fn depth(&self) -> u64 {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct OrderBook {
    pub instrument: Instrument,
    bids: BookSide,
    asks: BookSide,
}

/// Arithmetic on the book's running totals overflowed. Surfaces as an engine halt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthOverflow;

impl OrderBook {
    pub fn new(instrument: impl Into<Instrument>) -> Self {
        OrderBook {
            instrument: instrument.into(),
            bids: BookSide::default(),
            asks: BookSide::default(),
        }
    }

    pub fn side(&self, side: Side) -> &BookSide {
        match side {
            Side::Buy => &self.bids,
            Side::Sell => &self.asks,
        }
    }

    fn side_mut(&mut self, side: Side) -> &mut BookSide {
        match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        }
    }

    pub fn insert(&mut self, side: Side, key: Key, qty: u64) -> Result<(), DepthOverflow> {
        let s = self.side_mut(side);
        if let Slot::Real(_) = key.slot {
            s.depth = s.depth.checked_add(qty).ok_or(DepthOverflow)?;
        }
        let prev = s.entries.insert(key, qty);
        debug_assert!(prev.is_none(), "book key collision");
        Ok(())
    }

    /// Removes up to `qty` from the slot; drops the entry when it reaches zero.
    pub fn reduce(&mut self, side: Side, key: &Key, qty: u64) -> u64 {
        let s = self.side_mut(side);
        let Some(cur) = s.entries.get_mut(key) else {
            return 0;
        };
        let take = qty.min(*cur);
        *cur -= take;
        if *cur == 0 {
            s.entries.remove(key);
        }
        if let Slot::Real(_) = key.slot {
            s.depth -= take;
        }
        take
    }

    pub fn remove(&mut self, side: Side, key: &Key) -> u64 {
        let s = self.side_mut(side);
        match s.entries.remove(key) {
            Some(q) => {
                if let Slot::Real(_) = key.slot {
                    s.depth -= q;
                }
                q
            }
            None => 0,
        }
    }

    pub fn set_qty(&mut self, side: Side, key: &Key, qty: u64) {
        debug_assert!(
            matches!(key.slot, Slot::Virtual(_)),
            "only virtual quantities are rewritten"
        );
        if let Some(cur) = self.side_mut(side).entries.get_mut(key) {
            *cur = qty;
        }
    }

    pub fn best(&self, side: Side) -> Option<(Key, u64)> {
        self.side(side).best()
    }

    pub fn best_price(&self, side: Side) -> Option<Price> {
        self.best(side).map(|(k, _)| k.price(side))
    }

    /// Aggregate quantity at the best price level, virtual liquidity included.
    pub fn top_level(&self, side: Side) -> Option<(Price, u64)> {
        let mut it = self.side(side).iter();
        let (k, q) = it.next()?;
        let price = k.price(side);
        let mut total = *q;
        for (k, q) in it {
            if k.price(side) != price {
                break;
            }
            total = total.saturating_add(*q);
        }
        Some((price, total))
    }

    /// Best price and aggregate quantity among real orders only.
    pub fn real_top_level(&self, side: Side) -> Option<(Price, u64)> {
        let mut top: Option<(Price, u64)> = None;
        for (k, q) in self.side(side).iter() {
            if !matches!(k.slot, Slot::Real(_)) {
                continue;
            }
            let p = k.price(side);
            match &mut top {
                None => top = Some((p, *q)),
                Some((tp, tq)) if *tp == p => *tq = tq.saturating_add(*q),
                Some(_) => break,
            }
        }
        top
    }

    pub fn top(&self) -> TopOfBook {
        TopOfBook {
            instrument: self.instrument.clone(),
            bid: self.top_level(Side::Buy),
            ask: self.top_level(Side::Sell),
        }
    }

    pub fn is_crossed(&self) -> bool {
        match (self.best_price(Side::Buy), self.best_price(Side::Sell)) {
            (Some(b), Some(a)) => b >= a,
            _ => false,
        }
    }
}

/// Whether an order on `side` at `price` is marketable against a resting contra price.
pub fn crosses(side: Side, price: Price, contra: Price) -> bool {
    match side {
        Side::Buy => price >= contra,
        Side::Sell => price <= contra,
    }
}
