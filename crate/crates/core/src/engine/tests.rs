use proptest::prelude::*;

use super::*;

fn req(id: u64, inst: &str, side: Side, price: i64, qty: u64, owner: &str) -> OrderRequest {
    OrderRequest {
        order_id: OrderId(id),
        instrument: inst.into(),
        side,
        price,
        qty,
        origin: Origin::Client,
        owner: owner.into(),
    }
}

struct Harness {
    e: Engine,
    seq: u64,
    log: Vec<LogRecord>,
    out: Vec<OutRecord>,
}

impl Harness {
    fn new(instruments: &[&str]) -> Self {
        let mut h = Harness {
            e: Engine::new(),
            seq: 0,
            log: Vec::new(),
            out: Vec::new(),
        };
        for i in instruments {
            h.cmd(0, Command::Admin(AdminAction::List((*i).into())));
        }
        h
    }

    fn cmd(&mut self, ts: u64, cmd: Command) -> Vec<OutMsg> {
        self.seq += 1;
        let rec = LogRecord::new(self.seq, ts, cmd);
        self.log.push(rec.clone());
        let out = self.e.apply(&rec).expect("no halt");
        self.out.extend(out.iter().cloned());
        out.into_iter().map(|r| r.msg).collect()
    }

    fn sub(
        &mut self,
        ts: u64,
        id: u64,
        inst: &str,
        side: Side,
        price: i64,
        qty: u64,
    ) -> Vec<OutMsg> {
        self.cmd(ts, Command::Submit(req(id, inst, side, price, qty, "p1")))
    }

    fn cancel(&mut self, target: Ref) -> Vec<OutMsg> {
        self.cmd(
            self.seq,
            Command::Cancel {
                target,
                owner: "p1".into(),
            },
        )
    }

    fn combo(
        &mut self,
        id: u64,
        legs: &[(&str, Side, u64)],
        net_limit: i64,
        qty: u64,
        aon: bool,
    ) -> Vec<OutMsg> {
        self.cmd(
            self.seq,
            Command::Combo(CombinationOrder {
                combo_id: ComboId(id),
                origin: Origin::Client,
                owner: "p1".into(),
                net_limit,
                combo_qty: qty,
                all_or_none: aon,
                legs: legs
                    .iter()
                    .map(|(i, s, r)| Leg {
                        instrument: (*i).into(),
                        side: *s,
                        ratio: *r,
                    })
                    .collect(),
            }),
        )
    }

    fn link(&mut self, id: u64, members: &[u64]) -> Vec<OutMsg> {
        self.cmd(
            self.seq,
            Command::Link(LinkRequest {
                spider_id: SpiderId(id),
                owner: "p1".into(),
                members: members.iter().map(|m| OrderId(*m)).collect(),
            }),
        )
    }
}

fn trades(msgs: &[OutMsg]) -> Vec<Trade> {
    msgs.iter()
        .filter_map(|m| match m {
            OutMsg::Trade(t) => Some(t.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn partial_fill_at_resting_price() {
    let mut h = Harness::new(&["A"]);
    h.sub(1, 1, "A", Side::Sell, 101, 10);
    let t = trades(&h.sub(2, 2, "A", Side::Buy, 102, 4));
    assert_eq!(t.len(), 1);
    assert_eq!(
        (t[0].price, t[0].qty, t[0].sell),
        (101, 4, Party::Order(OrderId(1)))
    );
    assert_eq!(h.e.order(OrderId(1)).unwrap().remaining, 6);
}

#[test]
fn rests_into_empty_book() {
    let mut h = Harness::new(&["A"]);
    assert!(trades(&h.sub(1, 1, "A", Side::Buy, 102, 4)).is_empty());
    assert_eq!(h.e.order(OrderId(1)).unwrap().remaining, 4);
    assert_eq!(h.e.depth("A", Side::Buy), 4);
}

#[test]
fn earlier_millisecond_has_priority() {
    let mut h = Harness::new(&["A"]);
    h.sub(5, 1, "A", Side::Sell, 101, 5);
    h.sub(7, 2, "A", Side::Sell, 101, 5);
    let t = trades(&h.sub(8, 3, "A", Side::Buy, 101, 5));
    assert_eq!(t.len(), 1);
    assert_eq!(t[0].sell, Party::Order(OrderId(1)));
    assert_eq!(h.e.order(OrderId(2)).unwrap().remaining, 5);
    let top = h.e.quote_top("A").unwrap();
    assert_eq!(top.seq, h.seq);
    match top.msg {
        OutMsg::Top(t) => assert_eq!((t.bid, t.ask), (None, Some((101, 5)))),
        _ => unreachable!(),
    }
}

#[test]
fn empty_book_top_has_no_levels() {
    let h = Harness::new(&["A"]);
    match h.e.quote_top("A").unwrap().msg {
        OutMsg::Top(t) => assert_eq!((t.bid, t.ask), (None, None)),
        _ => unreachable!(),
    }
    assert!(h.e.quote_top("Q").is_none());
}

#[test]
fn rejections_are_events() {
    let mut h = Harness::new(&["A"]);
    h.sub(1, 1, "A", Side::Buy, 100, 1);
    let dup = h.sub(1, 1, "A", Side::Buy, 100, 1);
    assert_eq!(
        dup,
        vec![OutMsg::Reject {
            target: Ref::Order(OrderId(1)),
            reason: RejectReason::DuplicateId
        }]
    );
    let unk = h.sub(1, 2, "ZZ", Side::Buy, 100, 1);
    assert_eq!(
        unk,
        vec![OutMsg::Reject {
            target: Ref::Order(OrderId(2)),
            reason: RejectReason::UnknownInstrument
        }]
    );
    let bad = h.sub(1, 3, "A", Side::Buy, 0, 1);
    assert!(matches!(
        bad[0],
        OutMsg::Reject {
            reason: RejectReason::InvalidOrder,
            ..
        }
    ));
    let combo = h.combo(
        4,
        &[("A", Side::Buy, 1), ("ZZ", Side::Sell, 1)],
        2,
        5,
        false,
    );
    assert!(matches!(
        combo[0],
        OutMsg::Reject {
            reason: RejectReason::UnknownInstrument,
            ..
        }
    ));
}

#[test]
fn cancel_paths() {
    let mut h = Harness::new(&["A"]);
    h.sub(1, 1, "A", Side::Sell, 101, 10);
    h.sub(2, 2, "A", Side::Buy, 102, 4);
    let out = h.cancel(Ref::Order(OrderId(1)));
    assert!(out.contains(&OutMsg::Cancelled {
        target: Ref::Order(OrderId(1)),
        qty: 6,
        reason: CancelReason::User
    }));
    assert_eq!(h.e.depth("A", Side::Sell), 0);
    let again = h.cancel(Ref::Order(OrderId(1)));
    assert_eq!(
        again,
        vec![OutMsg::Reject {
            target: Ref::Order(OrderId(1)),
            reason: RejectReason::Terminal
        }]
    );
    let filled = h.cancel(Ref::Order(OrderId(2)));
    assert!(matches!(
        filled[0],
        OutMsg::Reject {
            reason: RejectReason::Terminal,
            ..
        }
    ));
    let unknown = h.cancel(Ref::Order(OrderId(99)));
    assert!(matches!(
        unknown[0],
        OutMsg::Reject {
            reason: RejectReason::UnknownOrder,
            ..
        }
    ));
    let stranger = h.cmd(
        9,
        Command::Cancel {
            target: Ref::Order(OrderId(2)),
            owner: "p2".into(),
        },
    );
    assert!(matches!(
        stranger[0],
        OutMsg::Reject {
            reason: RejectReason::NotOwner,
            ..
        }
    ));

    let a = replay(&h.log).unwrap();
    let b = replay(&h.log).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        a.lines,
        h.out.iter().map(OutRecord::encode).collect::<Vec<_>>()
    );
}

#[test]
fn combination_executes_atomically_at_tops() {
    let mut h = Harness::new(&["A", "B"]);
    h.sub(1, 1, "A", Side::Sell, 101, 10);
    h.sub(1, 2, "B", Side::Buy, 100, 10);
    let out = h.combo(1, &[("A", Side::Buy, 1), ("B", Side::Sell, 1)], 2, 5, false);
    let t = trades(&out);
    assert_eq!(t.len(), 2);
    assert_eq!(
        (t[0].instrument.as_str(), t[0].price, t[0].qty),
        ("A", 101, 5)
    );
    assert_eq!(
        (t[1].instrument.as_str(), t[1].price, t[1].qty),
        ("B", 100, 5)
    );
    assert!(out.contains(&OutMsg::ComboFill {
        combo: ComboId(1),
        units: 5,
        remaining: 0
    }));
    assert!(t.iter().all(|t| t.trade_id.seq == h.seq));
}

/// Exhaustive scan over unit counts and price levels of two small leg books.
#[test]
fn combination_units_match_scan() {
    for (asks, bids, limit, qty) in [
        (vec![(101, 3), (102, 4)], vec![(100, 2), (99, 10)], 3, 9),
        (vec![(101, 3), (102, 4)], vec![(100, 2), (99, 10)], 2, 9),
        (vec![(101, 3)], vec![(100, 2), (99, 10)], 1, 9),
        (vec![(101, 1), (105, 1)], vec![(100, 5)], 1, 9),
    ] {
        let mut h = Harness::new(&["A", "B"]);
        let mut id = 0;
        for (p, q) in &asks {
            id += 1;
            h.sub(1, id, "A", Side::Sell, *p, *q);
        }
        for (p, q) in &bids {
            id += 1;
            h.sub(1, id, "B", Side::Buy, *p, *q);
        }
        let out = h.combo(
            100,
            &[("A", Side::Buy, 1), ("B", Side::Sell, 1)],
            limit,
            qty,
            false,
        );
        // Oracle: unit k costs ask_k - bid_k with both sides expanded into unit prices.
        let expand = |lv: &[(i64, u64)]| {
            lv.iter()
                .flat_map(|(p, q)| std::iter::repeat_n(*p, *q as usize))
                .collect::<Vec<_>>()
        };
        let (ua, ub) = (expand(&asks), expand(&bids));
        let want = ua
            .iter()
            .zip(&ub)
            .take(qty as usize)
            .take_while(|(a, b)| *a - *b <= limit)
            .count() as u64;
        let got: u64 = out
            .iter()
            .filter_map(|m| match m {
                OutMsg::ComboFill { units, .. } => Some(*units),
                _ => None,
            })
            .sum();
        assert_eq!(got, want, "asks {asks:?} bids {bids:?} limit {limit}");
    }
}

#[test]
fn combination_rests_without_contra() {
    let mut h = Harness::new(&["A", "B"]);
    h.sub(1, 1, "A", Side::Sell, 101, 10);
    let out = h.combo(1, &[("A", Side::Buy, 1), ("B", Side::Sell, 1)], 2, 5, false);
    assert!(trades(&out).is_empty());
    assert_eq!(h.e.combo_remaining(ComboId(1)), Some(5));
    // B has no bid, so A's implied price is undefined.
    assert_eq!(h.e.virtual_order(ComboId(1), 0), None);
}

#[test]
fn all_or_none_needs_full_quantity() {
    let mut h = Harness::new(&["A", "B"]);
    h.sub(1, 1, "A", Side::Sell, 101, 3);
    h.sub(1, 2, "B", Side::Buy, 100, 10);
    let out = h.combo(1, &[("A", Side::Buy, 1), ("B", Side::Sell, 1)], 2, 5, true);
    assert!(trades(&out).is_empty());
    let out = h.sub(2, 3, "A", Side::Sell, 101, 2);
    let t = trades(&out);
    assert_eq!(t.iter().map(|t| t.qty).sum::<u64>(), 10);
    assert!(out.contains(&OutMsg::ComboFill {
        combo: ComboId(1),
        units: 5,
        remaining: 0
    }));
}

#[test]
fn virtual_order_tracks_book_top() {
    let mut h = Harness::new(&["A", "B"]);
    h.sub(1, 1, "B", Side::Buy, 100, 10);
    let out = h.combo(1, &[("A", Side::Buy, 1), ("B", Side::Sell, 1)], 2, 5, false);
    assert_eq!(h.e.virtual_order(ComboId(1), 0), Some((102, 5)));
    assert!(out.iter().any(|m| matches!(
        m,
        OutMsg::Virtual {
            price: 102,
            qty: 5,
            leg: 0,
            ..
        }
    )));
    h.sub(2, 2, "B", Side::Buy, 101, 3);
    assert_eq!(h.e.virtual_order(ComboId(1), 0), Some((103, 3)));
    // Only the added liquidity is displayed on A.
    match h.e.quote_top("A").unwrap().msg {
        OutMsg::Top(t) => assert_eq!(t.bid, Some((103, 3))),
        _ => unreachable!(),
    }
    // Hitting the virtual order executes the sibling leg in the same step.
    let out = h.sub(3, 3, "A", Side::Sell, 103, 2);
    let t = trades(&out);
    assert_eq!(t.len(), 2);
    assert_eq!(
        (t[0].price, t[0].qty, t[0].buy),
        (103, 2, Party::ComboLeg(ComboId(1), 0))
    );
    assert_eq!(
        (t[1].instrument.as_str(), t[1].price, t[1].qty),
        ("B", 101, 2)
    );
    assert_eq!(h.e.combo_remaining(ComboId(1)), Some(3));
    assert_eq!(h.e.virtual_order(ComboId(1), 0), Some((103, 1)));
    h.cancel(Ref::Order(OrderId(1)));
    h.cancel(Ref::Order(OrderId(2)));
    assert_eq!(h.e.virtual_order(ComboId(1), 0), None);
    assert!(h
        .out
        .iter()
        .any(|r| matches!(r.msg, OutMsg::Virtual { qty: 0, leg: 0, .. })));
}

#[test]
fn all_or_none_posts_no_virtuals() {
    let mut h = Harness::new(&["A", "B"]);
    h.sub(1, 1, "B", Side::Buy, 100, 10);
    h.combo(1, &[("A", Side::Buy, 1), ("B", Side::Sell, 1)], 2, 5, true);
    assert_eq!(h.e.virtual_order(ComboId(1), 0), None);
}

#[test]
fn spider_first_fill_cancels_siblings() {
    let mut h = Harness::new(&["A", "B"]);
    h.sub(1, 1, "A", Side::Buy, 100, 10);
    h.sub(1, 2, "B", Side::Buy, 50, 10);
    h.link(1, &[1, 2]);
    let out = h.sub(2, 3, "A", Side::Sell, 100, 4);
    assert!(out.contains(&OutMsg::Cancelled {
        target: Ref::Order(OrderId(2)),
        qty: 10,
        reason: CancelReason::Spider
    }));
    assert_eq!(h.e.order(OrderId(1)).unwrap().remaining, 6);
    // Further fills on the same member are fine; the sibling stays dead.
    let out = h.sub(3, 4, "A", Side::Sell, 100, 1);
    assert_eq!(trades(&out).len(), 1);
    assert_eq!(h.e.depth("B", Side::Buy), 0);
}

#[test]
fn link_validation() {
    let mut h = Harness::new(&["A"]);
    h.sub(1, 1, "A", Side::Buy, 100, 10);
    h.sub(1, 2, "A", Side::Buy, 99, 10);
    assert!(matches!(
        h.link(1, &[1])[0],
        OutMsg::Reject {
            reason: RejectReason::InvalidLink,
            ..
        }
    ));
    assert!(matches!(
        h.link(1, &[1, 7])[0],
        OutMsg::Reject {
            reason: RejectReason::InvalidLink,
            ..
        }
    ));
    assert_eq!(
        h.link(1, &[1, 2]),
        vec![OutMsg::Ack(Ref::Link(SpiderId(1)))]
    );
    h.sub(1, 3, "A", Side::Buy, 98, 10);
    assert!(matches!(
        h.link(2, &[2, 3])[0],
        OutMsg::Reject {
            reason: RejectReason::InvalidLink,
            ..
        }
    ));
    let out = h.cancel(Ref::Link(SpiderId(1)));
    assert_eq!(
        out.iter()
            .filter(|m| matches!(m, OutMsg::Cancelled { .. }))
            .count(),
        2
    );
    assert!(matches!(
        h.cancel(Ref::Link(SpiderId(1)))[0],
        OutMsg::Reject {
            reason: RejectReason::Terminal,
            ..
        }
    ));
}

#[test]
fn combo_never_uses_both_members_of_a_spider() {
    let mut h = Harness::new(&["A", "B"]);
    h.sub(1, 1, "A", Side::Sell, 101, 5);
    h.sub(1, 2, "A", Side::Sell, 101, 5);
    h.link(1, &[1, 2]);
    h.sub(1, 3, "B", Side::Buy, 100, 10);
    let out = h.combo(1, &[("A", Side::Buy, 1), ("B", Side::Sell, 1)], 2, 8, false);
    let a_fills: u64 = trades(&out)
        .iter()
        .filter(|t| t.instrument == "A")
        .map(|t| t.qty)
        .sum();
    assert_eq!(a_fills, 5);
    assert_eq!(h.e.order(OrderId(2)).unwrap().remaining, 0);
    assert_eq!(h.e.order(OrderId(2)).unwrap().filled, 0);
}

#[test]
fn overflow_halts_and_nullification_recovers() {
    let mut h = Harness::new(&["A"]);
    h.sub(1, 1, "A", Side::Sell, 200, 10);
    h.seq += 1;
    let poison = LogRecord::new(
        h.seq,
        2,
        Command::Submit(req(2, "A", Side::Sell, 201, u64::MAX - 3, "p1")),
    );
    h.log.push(poison.clone());
    let err = h.e.apply(&poison).unwrap_err();
    assert!(matches!(err.reason, HaltReason::DepthOverflow(_)));
    assert!(
        h.e.apply(&poison).is_err(),
        "a halted engine accepts nothing"
    );
    h.log.push(LogRecord::new(
        h.seq + 1,
        3,
        Command::Submit(req(3, "A", Side::Buy, 200, 4, "p1")),
    ));

    let plain = replay(&h.log).unwrap();
    assert!(plain.halted.is_some());
    assert!(plain.lines.last().unwrap().contains("|HLT|"));

    let rec = rollback_restart(&h.log, &[h.seq].into_iter().collect(), h.seq).unwrap();
    assert!(rec.stream.halted.is_none());
    assert_eq!(
        rec.notices,
        vec![NullificationNotice {
            seq: h.seq,
            flagged: true
        }]
    );
    assert_eq!(rec.engine.order(OrderId(1)).unwrap().remaining, 6);
}

#[test]
fn rollback_with_nothing_nullified_is_replay() {
    let mut h = Harness::new(&["A"]);
    h.sub(1, 1, "A", Side::Sell, 101, 10);
    h.sub(2, 2, "A", Side::Buy, 102, 4);
    let r = rollback_restart(&h.log, &Default::default(), 0).unwrap();
    assert_eq!(r.stream, replay(&h.log).unwrap());
    assert_eq!(r.engine.state_digest(), h.e.state_digest());
    let err = rollback_restart(&h.log, &[99].into_iter().collect(), 0).unwrap_err();
    assert_eq!(err, ReplayError::UnknownTarget(99));
}

#[test]
fn nullifying_a_fill_matches_filtered_replay() {
    let mut h = Harness::new(&["A"]);
    h.sub(1, 1, "A", Side::Sell, 101, 10);
    let target = h.seq + 1;
    h.sub(2, 2, "A", Side::Buy, 102, 4);
    h.sub(3, 3, "A", Side::Buy, 101, 1);
    let r = rollback_restart(&h.log, &[target].into_iter().collect(), 1).unwrap();
    assert_eq!(
        r.notices,
        vec![NullificationNotice {
            seq: target,
            flagged: false
        }]
    );
    // Oracle: the same inputs without the nullified order, on a fresh engine.
    let mut oracle = Harness::new(&["A"]);
    oracle.sub(1, 1, "A", Side::Sell, 101, 10);
    oracle.sub(3, 3, "A", Side::Buy, 101, 1);
    assert_eq!(
        r.engine.order(OrderId(1)).unwrap().remaining,
        oracle.e.order(OrderId(1)).unwrap().remaining
    );
    assert_eq!(
        r.engine.depth("A", Side::Sell),
        oracle.e.depth("A", Side::Sell)
    );
    assert!(r.engine.order(OrderId(2)).is_none());
}

#[test]
fn replay_reports_first_bad_seq() {
    let mut h = Harness::new(&["A"]);
    for i in 0..20 {
        h.sub(i, i + 1, "A", Side::Buy, 100 - i as i64, 1);
    }
    let lines: Vec<String> = h
        .log
        .iter()
        .filter(|r| r.seq != 17)
        .map(LogRecord::encode)
        .collect();
    let err = replay_lines(lines.iter().map(String::as_str)).unwrap_err();
    assert_eq!(err.bad_seq(), 17);

    let mut lines: Vec<String> = h.log.iter().map(LogRecord::encode).collect();
    let (body, crc) = lines[9].rsplit_once('|').unwrap();
    lines[9] = format!("{}|{crc}", body.replace("|p1", "|p2"));
    let err = replay_lines(lines.iter().map(String::as_str)).unwrap_err();
    assert_eq!(err.bad_seq(), 10);
}

// ---- randomized properties ----

#[derive(Debug, Clone)]
struct Resting {
    id: u64,
    side: Side,
    price: i64,
    ts: u64,
    qty: u64,
}

/// Linear-scan price-time oracle: repeatedly picks the best crossing contra
/// order by (price, ts, insertion) and fills against it.
fn oracle_match(book: &[Resting], side: Side, price: i64, qty: u64) -> Vec<(u64, i64, u64)> {
    let mut rest: Vec<Resting> = book.to_vec();
    let mut left = qty;
    let mut fills = Vec::new();
    while left > 0 {
        let mut best: Option<usize> = None;
        for (i, r) in rest.iter().enumerate() {
            if r.side == side || r.qty == 0 {
                continue;
            }
            let ok = match side {
                Side::Buy => r.price <= price,
                Side::Sell => r.price >= price,
            };
            if !ok {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let cur = &rest[b];
                    let pb = match side {
                        Side::Buy => r.price < cur.price,
                        Side::Sell => r.price > cur.price,
                    };
                    pb || (r.price == cur.price && r.ts < cur.ts)
                }
            };
            if better {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        let f = left.min(rest[b].qty);
        rest[b].qty -= f;
        left -= f;
        fills.push((rest[b].id, rest[b].price, f));
    }
    fills
}

fn arb_book() -> impl Strategy<Value = Vec<(bool, i64, u64, u64)>> {
    prop::collection::vec((any::<bool>(), 95i64..106, 0u64..6, 1u64..8), 0..=20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn matching_equals_oracle(raw in arb_book(), buy in any::<bool>(), price in 95i64..106, qty in 1u64..40) {
        let mut h = Harness::new(&["A"]);
        let mut resting = Vec::new();
        let mut ts = 0;
        for (i, (is_buy, p, dt, q)) in raw.into_iter().enumerate() {
            ts += dt;
            let side = if is_buy { Side::Buy } else { Side::Sell };
            let id = i as u64 + 1;
            h.sub(ts, id, "A", side, p, q);
            resting.push(Resting { id, side, price: p, ts, qty: 0 });
        }
        for r in resting.iter_mut() {
            r.qty = h.e.order(OrderId(r.id)).unwrap().remaining;
        }
        let side = if buy { Side::Buy } else { Side::Sell };
        let want = oracle_match(&resting, side, price, qty);
        let got: Vec<(u64, i64, u64)> = trades(&h.sub(ts, 1000, "A", side, price, qty))
            .into_iter()
            .map(|t| {
                let other = if buy { t.sell } else { t.buy };
                let Party::Order(id) = other else { panic!("no combos here") };
                (id.0, t.price, t.qty)
            })
            .collect();
        prop_assert_eq!(got, want);
    }
}

/// Small random event stream over two instruments with combos and links.
fn stream(seed: u64, n: usize) -> Vec<LogRecord> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut log = vec![
        LogRecord::new(1, 0, Command::Admin(AdminAction::List("A".into()))),
        LogRecord::new(2, 0, Command::Admin(AdminAction::List("B".into()))),
    ];
    let mut next_id = 1u64;
    for k in 0..n {
        let seq = log.len() as u64 + 1;
        let ts = k as u64 / 3;
        let owner = format!("p{}", rng.gen_range(0..3));
        let cmd = match rng.gen_range(0..20) {
            0..=12 => {
                let inst = if rng.gen_bool(0.5) { "A" } else { "B" };
                let side = if rng.gen_bool(0.5) {
                    Side::Buy
                } else {
                    Side::Sell
                };
                next_id += 1;
                Command::Submit(req(
                    next_id,
                    inst,
                    side,
                    rng.gen_range(95..106),
                    rng.gen_range(1..10),
                    &owner,
                ))
            }
            13..=15 => Command::Cancel {
                target: Ref::Order(OrderId(rng.gen_range(1..=next_id))),
                owner,
            },
            16..=17 => {
                let (sa, sb) = if rng.gen_bool(0.5) {
                    (Side::Buy, Side::Sell)
                } else {
                    (Side::Sell, Side::Buy)
                };
                next_id += 1;
                Command::Combo(CombinationOrder {
                    combo_id: ComboId(next_id),
                    origin: Origin::Client,
                    owner,
                    net_limit: rng.gen_range(-6..7),
                    combo_qty: rng.gen_range(1..8),
                    all_or_none: rng.gen_bool(0.3),
                    legs: vec![
                        Leg {
                            instrument: "A".into(),
                            side: sa,
                            ratio: rng.gen_range(1..3),
                        },
                        Leg {
                            instrument: "B".into(),
                            side: sb,
                            ratio: rng.gen_range(1..3),
                        },
                    ],
                })
            }
            _ => {
                next_id += 1;
                let a = rng.gen_range(1..next_id);
                let b = rng.gen_range(1..next_id);
                Command::Link(LinkRequest {
                    spider_id: SpiderId(next_id),
                    owner,
                    members: vec![OrderId(a), OrderId(b)],
                })
            }
        };
        log.push(LogRecord::new(seq, ts, cmd));
    }
    log
}

fn check_properties(log: &[LogRecord]) -> Result<(), TestCaseError> {
    let mut e = Engine::new();
    let mut fills: HashMap<OrderId, u64> = HashMap::new();
    let mut combo_units: HashMap<ComboId, u64> = HashMap::new();
    let mut aon: HashMap<ComboId, u64> = HashMap::new();
    for rec in log {
        if let Command::Combo(c) = &rec.cmd {
            if c.all_or_none {
                aon.insert(c.combo_id, c.combo_qty);
            }
        }
        let out = e
            .apply(rec)
            .map_err(|h| TestCaseError::fail(h.to_string()))?;
        for r in &out {
            match &r.msg {
                OutMsg::Trade(t) => {
                    prop_assert!(t.qty > 0);
                    for p in [t.buy, t.sell] {
                        if let Party::Order(id) = p {
                            *fills.entry(id).or_default() += t.qty;
                        }
                    }
                }
                OutMsg::ComboFill { combo, units, .. } => {
                    *combo_units.entry(*combo).or_default() += units;
                }
                _ => {}
            }
        }
        for inst in ["A", "B"] {
            if let Some(b) = e.book(inst) {
                prop_assert!(!b.is_crossed());
            }
        }
    }
    for o in e.orders() {
        let f = fills.get(&o.order_id).copied().unwrap_or(0);
        prop_assert_eq!(o.filled, f);
        prop_assert!(o.remaining + o.filled <= o.qty);
    }
    for (c, q) in aon {
        let u = combo_units.get(&c).copied().unwrap_or(0);
        prop_assert!(
            u == 0 || u == q,
            "all-or-none combo executed {} of {}",
            u,
            q
        );
    }
    for rec in log {
        if let Command::Link(l) = &rec.cmd {
            if e.spiders.contains_key(&l.spider_id) {
                let with_fills = l
                    .members
                    .iter()
                    .filter(|m| fills.get(m).copied().unwrap_or(0) > 0)
                    .count();
                prop_assert!(
                    with_fills <= 1,
                    "spider {} has {} filled members",
                    l.spider_id,
                    with_fills
                );
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_streams_hold_invariants(seed in any::<u64>()) {
        check_properties(&stream(seed, 600))?;
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>()) {
        let log = stream(seed, 400);
        let a = replay(&log).unwrap();
        let b = replay(&log).unwrap();
        prop_assert_eq!(a.digest(), b.digest());
        let lines: Vec<String> = log.iter().map(LogRecord::encode).collect();
        let c = replay_lines(lines.iter().map(String::as_str)).unwrap();
        prop_assert_eq!(a, c);
    }

    #[test]
    fn empty_rollback_equals_replay(seed in any::<u64>()) {
        let log = stream(seed, 200);
        let r = rollback_restart(&log, &BTreeSet::new(), 0).unwrap();
        prop_assert_eq!(r.stream, replay(&log).unwrap());
    }
}
