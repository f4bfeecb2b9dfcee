//! Combination execution planning and implied (virtual) pricing.
//!
//! Plans are computed against real liquidity only; virtual orders of other
//! combinations are never used as a leg's contra side.

use std::collections::btree_map;
use std::collections::{BTreeMap, HashMap};

use super::book::{Key, Slot};
use super::types::*;
use super::Engine;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct PlanFill {
    pub leg: usize,
    pub order: OrderId,
    pub price: Price,
    pub qty: u64,
}

#[derive(Debug, Default)]
pub(crate) struct Plan {
    pub units: u64,
    pub fills: Vec<PlanFill>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Quote {
    pub price: Price,
    pub qty: u64,
}

struct Cursor<'a> {
    iter: btree_map::Iter<'a, Key, u64>,
    side: Side,
    cur: Option<(OrderId, Price, u64)>,
}

impl<'a> Cursor<'a> {
    /// Takes `need` units from real liquidity in priority order, skipping
    /// linked orders whose set has already been claimed by a sibling.
    fn take(
        &mut self,
        need: u64,
        leg: usize,
        spider_of: &HashMap<OrderId, SpiderId>,
        claimed: &mut BTreeMap<SpiderId, OrderId>,
        out: &mut Vec<PlanFill>,
    ) -> Option<i128> {
        let mut need = need;
        let mut cost: i128 = 0;
        while need > 0 {
            if self.cur.is_none_or(|(_, _, avail)| avail == 0) {
                self.cur = None;
                for (k, q) in self.iter.by_ref() {
                    let Slot::Real(oid) = k.slot else { continue };
                    if let Some(s) = spider_of.get(&oid) {
                        if claimed.get(s).is_some_and(|m| *m != oid) {
                            continue;
                        }
                    }
                    self.cur = Some((oid, k.price(self.side), *q));
                    break;
                }
                self.cur?;
            }
            let (oid, px, avail) = self.cur.as_mut().expect("cursor positioned");
            let t = need.min(*avail);
            if let Some(s) = spider_of.get(oid) {
                claimed.insert(*s, *oid);
            }
            out.push(PlanFill {
                leg,
                order: *oid,
                price: *px,
                qty: t,
            });
            cost += i128::from(*px) * i128::from(t);
            *avail -= t;
            need -= t;
        }
        Some(cost)
    }
}

fn floor_div(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn ceil_div(a: i128, b: i128) -> i128 {
    -floor_div(-a, b)
}

/// Most aggressive integer price for one leg such that the net cost per unit
/// stays within `net_limit`, given the other legs' summed contributions.
pub(crate) fn implied_price(
    side: Side,
    ratio: u64,
    net_limit: Price,
    others_cost: i128,
) -> Option<Price> {
    let room = i128::from(net_limit) - others_cost;
    let r = i128::from(ratio);
    let p = match side {
        Side::Buy => floor_div(room, r),
        // Any sell price at or above the bound is acceptable; ticks start at 1.
        Side::Sell => ceil_div(-room, r).max(1),
    };
    if p < 1 {
        return None;
    }
    Price::try_from(p).ok()
}

impl Engine {
    /// Greedy per-unit plan for up to `max_units` combo units. `skip_leg` is
    /// filled externally (against an incoming order) and contributes
    /// `fixed_cost` per unit.
    pub(crate) fn plan(
        &self,
        cid: ComboId,
        max_units: u64,
        skip_leg: Option<usize>,
        fixed_cost: i128,
    ) -> Plan {
        let cs = &self.combos[&cid];
        let limit = i128::from(cs.order.net_limit);
        let legs = &cs.order.legs;
        let mut cursors: Vec<Option<Cursor<'_>>> = legs
            .iter()
            .enumerate()
            .map(|(j, leg)| {
                if Some(j) == skip_leg {
                    return None;
                }
                let contra = leg.side.opposite();
                let book = &self.books[&leg.instrument];
                Some(Cursor {
                    iter: book.side(contra).iter(),
                    side: contra,
                    cur: None,
                })
            })
            .collect();
        let mut claimed: BTreeMap<SpiderId, OrderId> = BTreeMap::new();
        let mut plan = Plan::default();

        while plan.units < max_units {
            let mut unit_fills = Vec::new();
            let mut cost = fixed_cost;
            let mut ok = true;
            for (j, leg) in legs.iter().enumerate() {
                let Some(cur) = cursors[j].as_mut() else {
                    continue;
                };
                match cur.take(
                    leg.ratio,
                    j,
                    &self.order_spider,
                    &mut claimed,
                    &mut unit_fills,
                ) {
                    Some(c) => cost += leg.side.cost_sign() * c,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            // A failed unit ends planning, so its partial cursor moves are harmless.
            if !ok || cost > limit {
                break;
            }
            plan.units += 1;
            plan.fills.extend(unit_fills);

            // Units that fit entirely inside the current entries share one price vector.
            let mut batch = max_units - plan.units;
            let mut batch_cost = fixed_cost;
            for (j, leg) in legs.iter().enumerate() {
                let Some(cur) = &cursors[j] else { continue };
                match cur.cur {
                    Some((_, px, avail)) => {
                        batch = batch.min(avail / leg.ratio);
                        batch_cost += leg.side.cost_sign() * i128::from(px) * i128::from(leg.ratio);
                    }
                    None => batch = 0,
                }
            }
            if batch > 0 && batch_cost <= limit {
                for (j, leg) in legs.iter().enumerate() {
                    let Some(cur) = cursors[j].as_mut() else {
                        continue;
                    };
                    let (oid, px, avail) = cur.cur.as_mut().expect("checked above");
                    let qty = batch * leg.ratio;
                    *avail -= qty;
                    plan.fills.push(PlanFill {
                        leg: j,
                        order: *oid,
                        price: *px,
                        qty,
                    });
                }
                plan.units += batch;
            }
        }

        // Merge consecutive fills against the same resting order.
        let mut merged: Vec<PlanFill> = Vec::with_capacity(plan.fills.len());
        for f in plan.fills.drain(..) {
            match merged
                .iter_mut()
                .find(|m| m.leg == f.leg && m.order == f.order)
            {
                Some(m) => m.qty += f.qty,
                None => merged.push(f),
            }
        }
        merged.sort_by_key(|f| f.leg);
        plan.fills = merged;
        plan
    }

    /// Implied price and size for leg `i` from the other legs' real book tops.
    /// `None` when any other leg lacks contra liquidity at its top level.
    pub(crate) fn implied_quote(&self, cid: ComboId, i: usize) -> Option<Quote> {
        let cs = &self.combos[&cid];
        let legs = &cs.order.legs;
        let mut others: i128 = 0;
        let mut units = cs.remaining;
        for (j, leg) in legs.iter().enumerate() {
            if j == i {
                continue;
            }
            let (p, q) = self.books[&leg.instrument].real_top_level(leg.side.opposite())?;
            others += leg.side.cost_sign() * i128::from(leg.ratio) * i128::from(p);
            units = units.min(q / leg.ratio);
        }
        if units == 0 {
            return None;
        }
        let leg = &legs[i];
        let price = implied_price(leg.side, leg.ratio, cs.order.net_limit, others)?;
        Some(Quote {
            price,
            qty: units.checked_mul(leg.ratio)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_toward_the_limit() {
        assert_eq!(floor_div(7, 2), 3);
        assert_eq!(floor_div(-7, 2), -4);
        assert_eq!(ceil_div(7, 2), 4);
        assert_eq!(ceil_div(-7, 2), -3);
    }

    /// Enumerates candidate prices and keeps the most aggressive one within the limit.
    fn implied_by_scan(side: Side, ratio: u64, limit: i64, others: i128) -> Option<i64> {
        let ok = |p: i64| {
            side.cost_sign() * i128::from(ratio) * i128::from(p) + others <= i128::from(limit)
        };
        let candidates = 1..=400i64;
        match side {
            Side::Buy => candidates.filter(|p| ok(*p)).max(),
            Side::Sell => candidates.filter(|p| ok(*p)).min(),
        }
    }

    #[test]
    fn implied_price_matches_enumeration() {
        for side in [Side::Buy, Side::Sell] {
            for ratio in 1..=4u64 {
                for limit in -20..=20i64 {
                    for others in [-210i128, -100, -37, 0, 55, 150] {
                        let got = implied_price(side, ratio, limit, others);
                        let want = implied_by_scan(side, ratio, limit, others);
                        assert_eq!(got, want, "{side:?} r={ratio} L={limit} o={others}");
                    }
                }
            }
        }
    }
}
