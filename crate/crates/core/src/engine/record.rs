//! Canonical line format shared by the transaction log, the output stream,
//! and the gateway wire protocol.
//!
//! Every line is `|`-separated with a trailing CRC-32 (lower-case hex, 8
//! digits) computed over everything before the final `|`.
//!
//! Input log: `seq|TYPE|ts|fields...|crc`
//!
//! | TYPE | fields after `ts` |
//! |------|-------------------|
//! | SUB  | `order_id|instrument|side|price|qty|origin|owner` |
//! | CXL  | `ref|owner` |
//! | CMB  | `combo_id|origin|owner|net_limit|qty|aon|legs` with legs `inst:side:ratio;...` |
//! | LNK  | `spider_id|owner|order_id;order_id;...` |
//! | ADM  | `LIST|instrument` |
//!
//! Wire messages drop `seq` and `ts`: `TYPE|fields...|crc`.
//!
//! Output stream: `seq|TYPE|fields...|crc`
//!
//! | TYPE | fields |
//! |------|--------|
//! | ACK  | `ref` |
//! | REJ  | `ref|reason` |
//! | TRD  | `trade_id|instrument|price|qty|buy|sell` |
//! | CXL  | `ref|qty|reason` |
//! | VIR  | `combo_id|leg|instrument|side|price|qty` (qty 0 = withdrawn) |
//! | CFL  | `combo_id|units|remaining` |
//! | TOP  | `instrument|bid_px|bid_qty|ask_px|ask_qty` (`-` when absent) |
//! | HLT  | `reason` |
//! | NUL  | `flagged` (1 if the record's effects were already published) |

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use super::types::*;
use super::RecordError;

pub fn checksum(body: &str) -> u32 {
    crc32fast::hash(body.as_bytes())
}

/// Appends `|crc` to a line body.
pub fn seal(mut body: String) -> String {
    let crc = checksum(&body);
    write!(body, "|{crc:08x}").expect("writing to String cannot fail");
    body
}

/// Splits a sealed line into its body and verifies the checksum.
pub fn unseal(line: &str) -> Result<&str, RecordError> {
    let (body, crc) = line.rsplit_once('|').ok_or(RecordError::Truncated)?;
    if crc.len() != 8 || !crc.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(RecordError::Field("checksum", crc.to_string()));
    }
    let expected = u32::from_str_radix(crc, 16).map_err(|_| RecordError::Truncated)?;
    if checksum(body) != expected {
        return Err(RecordError::Checksum);
    }
    Ok(body)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdminAction {
    List(Instrument),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Submit(OrderRequest),
    Cancel { target: Ref, owner: String },
    Combo(CombinationOrder),
    Link(LinkRequest),
    Admin(AdminAction),
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::Submit(_) => "SUB",
            Command::Cancel { .. } => "CXL",
            Command::Combo(_) => "CMB",
            Command::Link(_) => "LNK",
            Command::Admin(_) => "ADM",
        }
    }

    /// The reference this command creates or targets; used to route replies.
    pub fn subject(&self) -> Ref {
        match self {
            Command::Submit(o) => Ref::Order(o.order_id),
            Command::Cancel { target, .. } => *target,
            Command::Combo(c) => Ref::Combo(c.combo_id),
            Command::Link(l) => Ref::Link(l.spider_id),
            Command::Admin(_) => Ref::Admin,
        }
    }

    pub fn owner(&self) -> Option<&str> {
        match self {
            Command::Submit(o) => Some(&o.owner),
            Command::Cancel { owner, .. } => Some(owner),
            Command::Combo(c) => Some(&c.owner),
            Command::Link(l) => Some(&l.owner),
            Command::Admin(_) => None,
        }
    }

    pub fn origin(&self) -> Option<Origin> {
        match self {
            Command::Submit(o) => Some(o.origin),
            Command::Combo(c) => Some(c.origin),
            _ => None,
        }
    }

    fn write_fields(&self, out: &mut String) {
        let r = match self {
            Command::Submit(o) => write!(
                out,
                "{}|{}|{}|{}|{}|{}|{}",
                o.order_id,
                o.instrument,
                o.side.code(),
                o.price,
                o.qty,
                o.origin.code(),
                o.owner
            ),
            Command::Cancel { target, owner } => write!(out, "{target}|{owner}"),
            Command::Combo(c) => {
                let legs: Vec<String> = c
                    .legs
                    .iter()
                    .map(|l| format!("{}:{}:{}", l.instrument, l.side.code(), l.ratio))
                    .collect();
                write!(
                    out,
                    "{}|{}|{}|{}|{}|{}|{}",
                    c.combo_id,
                    c.origin.code(),
                    c.owner,
                    c.net_limit,
                    c.combo_qty,
                    u8::from(c.all_or_none),
                    legs.join(";")
                )
            }
            Command::Link(l) => {
                let members: Vec<String> = l.members.iter().map(|m| m.to_string()).collect();
                write!(out, "{}|{}|{}", l.spider_id, l.owner, members.join(";"))
            }
            Command::Admin(AdminAction::List(inst)) => write!(out, "LIST|{inst}"),
        };
        r.expect("writing to String cannot fail");
    }

    /// Gateway wire form: `TYPE|fields|crc`.
    pub fn to_wire(&self) -> String {
        let mut body = String::with_capacity(64);
        body.push_str(self.kind());
        body.push('|');
        self.write_fields(&mut body);
        seal(body)
    }

    pub fn from_wire(line: &str) -> Result<Command, RecordError> {
        let body = unseal(line)?;
        let mut parts = body.split('|');
        let kind = parts.next().ok_or(RecordError::Truncated)?;
        let fields: Vec<&str> = parts.collect();
        Command::parse_fields(kind, &fields)
    }

    fn parse_fields(kind: &str, f: &[&str]) -> Result<Command, RecordError> {
        let want = |n: usize| {
            if f.len() == n {
                Ok(())
            } else {
                Err(RecordError::Arity {
                    kind: kind.to_string(),
                    expected: n,
                    got: f.len(),
                })
            }
        };
        match kind {
            "SUB" => {
                want(7)?;
                Ok(Command::Submit(OrderRequest {
                    order_id: OrderId(u64_field("order_id", f[0])?),
                    instrument: symbol_field("instrument", f[1])?,
                    side: f[2].parse()?,
                    price: i64_field("price", f[3])?,
                    qty: u64_field("qty", f[4])?,
                    origin: f[5].parse()?,
                    owner: symbol_field("owner", f[6])?,
                }))
            }
            "CXL" => {
                want(2)?;
                Ok(Command::Cancel {
                    target: f[0].parse()?,
                    owner: symbol_field("owner", f[1])?,
                })
            }
            "CMB" => {
                want(7)?;
                let aon = match f[5] {
                    "0" => false,
                    "1" => true,
                    other => return Err(RecordError::Field("aon", other.to_string())),
                };
                let mut legs = Vec::new();
                for leg in f[6].split(';') {
                    let mut p = leg.split(':');
                    let (Some(inst), Some(side), Some(ratio), None) =
                        (p.next(), p.next(), p.next(), p.next())
                    else {
                        return Err(RecordError::Field("leg", leg.to_string()));
                    };
                    legs.push(Leg {
                        instrument: symbol_field("leg instrument", inst)?,
                        side: side.parse()?,
                        ratio: u64_field("ratio", ratio)?,
                    });
                }
                Ok(Command::Combo(CombinationOrder {
                    combo_id: ComboId(u64_field("combo_id", f[0])?),
                    origin: f[1].parse()?,
                    owner: symbol_field("owner", f[2])?,
                    net_limit: i64_field("net_limit", f[3])?,
                    combo_qty: u64_field("qty", f[4])?,
                    all_or_none: aon,
                    legs,
                }))
            }
            "LNK" => {
                want(3)?;
                let members = f[2]
                    .split(';')
                    .map(|m| u64_field("member", m).map(OrderId))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Command::Link(LinkRequest {
                    spider_id: SpiderId(u64_field("spider_id", f[0])?),
                    owner: symbol_field("owner", f[1])?,
                    members,
                }))
            }
            "ADM" => {
                want(2)?;
                match f[0] {
                    "LIST" => Ok(Command::Admin(AdminAction::List(symbol_field(
                        "instrument",
                        f[1],
                    )?))),
                    other => Err(RecordError::Field("admin action", other.to_string())),
                }
            }
            other => Err(RecordError::UnknownType(other.to_string())),
        }
    }
}

fn u64_field(name: &'static str, s: &str) -> Result<u64, RecordError> {
    parse_u64(s).map_err(|_| RecordError::Field(name, s.to_string()))
}

fn i64_field(name: &'static str, s: &str) -> Result<i64, RecordError> {
    parse_i64(s).map_err(|_| RecordError::Field(name, s.to_string()))
}

fn symbol_field(name: &'static str, s: &str) -> Result<String, RecordError> {
    if is_valid_symbol(s) {
        Ok(s.to_string())
    } else {
        Err(RecordError::Field(name, s.to_string()))
    }
}

/// One sequenced input event: the unit of determinism and replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub seq: SeqNo,
    /// Arrival timestamp in simulated milliseconds.
    pub ts: u64,
    pub cmd: Command,
}

impl LogRecord {
    pub fn new(seq: SeqNo, ts: u64, cmd: Command) -> Self {
        LogRecord { seq, ts, cmd }
    }

    pub fn encode(&self) -> String {
        let mut body = String::with_capacity(80);
        write!(body, "{}|{}|{}|", self.seq, self.cmd.kind(), self.ts).expect("infallible");
        self.cmd.write_fields(&mut body);
        seal(body)
    }

    pub fn parse(line: &str) -> Result<LogRecord, RecordError> {
        let body = unseal(line)?;
        let mut parts = body.split('|');
        let seq = u64_field("seq", parts.next().ok_or(RecordError::Truncated)?)?;
        let kind = parts.next().ok_or(RecordError::Truncated)?;
        let ts = u64_field("ts", parts.next().ok_or(RecordError::Truncated)?)?;
        let fields: Vec<&str> = parts.collect();
        Ok(LogRecord {
            seq,
            ts,
            cmd: Command::parse_fields(kind, &fields)?,
        })
    }

    /// Best-effort extraction of the sequence number from a possibly corrupt line.
    pub fn peek_seq(line: &str) -> Option<SeqNo> {
        line.split('|').next().and_then(|s| parse_u64(s).ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    DuplicateId,
    UnknownInstrument,
    UnknownOrder,
    Terminal,
    InvalidOrder,
    InvalidCombo,
    InvalidLink,
    NotOwner,
    AlreadyListed,
    VirtualOrigin,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::DuplicateId => "duplicate-id",
            RejectReason::UnknownInstrument => "unknown-instrument",
            RejectReason::UnknownOrder => "unknown-order",
            RejectReason::Terminal => "terminal",
            RejectReason::InvalidOrder => "invalid-order",
            RejectReason::InvalidCombo => "invalid-combo",
            RejectReason::InvalidLink => "invalid-link",
            RejectReason::NotOwner => "not-owner",
            RejectReason::AlreadyListed => "already-listed",
            RejectReason::VirtualOrigin => "virtual-origin",
        }
    }
}

impl FromStr for RejectReason {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use RejectReason::*;
        [
            DuplicateId,
            UnknownInstrument,
            UnknownOrder,
            Terminal,
            InvalidOrder,
            InvalidCombo,
            InvalidLink,
            NotOwner,
            AlreadyListed,
            VirtualOrigin,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| RecordError::Field("reject reason", s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CancelReason {
    User,
    Spider,
}

impl CancelReason {
    pub fn as_str(self) -> &'static str {
        match self {
            CancelReason::User => "user",
            CancelReason::Spider => "spider",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutMsg {
    Ack(Ref),
    Reject {
        target: Ref,
        reason: RejectReason,
    },
    Trade(Trade),
    Cancelled {
        target: Ref,
        qty: u64,
        reason: CancelReason,
    },
    Virtual {
        combo: ComboId,
        leg: usize,
        instrument: Instrument,
        side: Side,
        price: Price,
        qty: u64,
    },
    ComboFill {
        combo: ComboId,
        units: u64,
        remaining: u64,
    },
    Top(TopOfBook),
    Halt(String),
    Nullified {
        flagged: bool,
    },
}

impl OutMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            OutMsg::Ack(_) => "ACK",
            OutMsg::Reject { .. } => "REJ",
            OutMsg::Trade(_) => "TRD",
            OutMsg::Cancelled { .. } => "CXL",
            OutMsg::Virtual { .. } => "VIR",
            OutMsg::ComboFill { .. } => "CFL",
            OutMsg::Top(_) => "TOP",
            OutMsg::Halt(_) => "HLT",
            OutMsg::Nullified { .. } => "NUL",
        }
    }
}

fn opt_px(v: Option<(Price, u64)>) -> (String, String) {
    match v {
        Some((p, q)) => (p.to_string(), q.to_string()),
        None => ("-".to_string(), "-".to_string()),
    }
}

/// One line of the output stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutRecord {
    pub seq: SeqNo,
    pub msg: OutMsg,
}

impl OutRecord {
    pub fn encode(&self) -> String {
        let mut b = String::with_capacity(64);
        write!(b, "{}|{}|", self.seq, self.msg.kind()).expect("infallible");
        let r = match &self.msg {
            OutMsg::Ack(r) => write!(b, "{r}"),
            OutMsg::Reject { target, reason } => write!(b, "{target}|{}", reason.as_str()),
            OutMsg::Trade(t) => write!(
                b,
                "{}|{}|{}|{}|{}|{}",
                t.trade_id, t.instrument, t.price, t.qty, t.buy, t.sell
            ),
            OutMsg::Cancelled {
                target,
                qty,
                reason,
            } => write!(b, "{target}|{qty}|{}", reason.as_str()),
            OutMsg::Virtual {
                combo,
                leg,
                instrument,
                side,
                price,
                qty,
            } => {
                write!(
                    b,
                    "{combo}|{leg}|{instrument}|{}|{price}|{qty}",
                    side.code()
                )
            }
            OutMsg::ComboFill {
                combo,
                units,
                remaining,
            } => write!(b, "{combo}|{units}|{remaining}"),
            OutMsg::Top(t) => {
                let (bp, bq) = opt_px(t.bid);
                let (ap, aq) = opt_px(t.ask);
                write!(b, "{}|{bp}|{bq}|{ap}|{aq}", t.instrument)
            }
            OutMsg::Halt(reason) => write!(b, "{reason}"),
            OutMsg::Nullified { flagged } => write!(b, "{}", u8::from(*flagged)),
        };
        r.expect("infallible");
        seal(b)
    }

    pub fn parse(line: &str) -> Result<OutRecord, RecordError> {
        let body = unseal(line)?;
        let mut parts = body.split('|');
        let seq = u64_field("seq", parts.next().ok_or(RecordError::Truncated)?)?;
        let kind = parts.next().ok_or(RecordError::Truncated)?;
        let f: Vec<&str> = parts.collect();
        let want = |n: usize| {
            if f.len() == n {
                Ok(())
            } else {
                Err(RecordError::Arity {
                    kind: kind.to_string(),
                    expected: n,
                    got: f.len(),
                })
            }
        };
        let msg = match kind {
            "ACK" => {
                want(1)?;
                OutMsg::Ack(f[0].parse()?)
            }
            "REJ" => {
                want(2)?;
                OutMsg::Reject {
                    target: f[0].parse()?,
                    reason: f[1].parse()?,
                }
            }
            "TRD" => {
                want(6)?;
                OutMsg::Trade(Trade {
                    trade_id: f[0].parse()?,
                    instrument: symbol_field("instrument", f[1])?,
                    price: i64_field("price", f[2])?,
                    qty: u64_field("qty", f[3])?,
                    buy: f[4].parse()?,
                    sell: f[5].parse()?,
                })
            }
            "CXL" => {
                want(3)?;
                let reason = match f[2] {
                    "user" => CancelReason::User,
                    "spider" => CancelReason::Spider,
                    other => return Err(RecordError::Field("cancel reason", other.to_string())),
                };
                OutMsg::Cancelled {
                    target: f[0].parse()?,
                    qty: u64_field("qty", f[1])?,
                    reason,
                }
            }
            "VIR" => {
                want(6)?;
                OutMsg::Virtual {
                    combo: ComboId(u64_field("combo", f[0])?),
                    leg: u64_field("leg", f[1])? as usize,
                    instrument: symbol_field("instrument", f[2])?,
                    side: f[3].parse()?,
                    price: i64_field("price", f[4])?,
                    qty: u64_field("qty", f[5])?,
                }
            }
            "CFL" => {
                want(3)?;
                OutMsg::ComboFill {
                    combo: ComboId(u64_field("combo", f[0])?),
                    units: u64_field("units", f[1])?,
                    remaining: u64_field("remaining", f[2])?,
                }
            }
            "TOP" => {
                want(5)?;
                let level = |p: &str, q: &str| -> Result<Option<(Price, u64)>, RecordError> {
                    match (p, q) {
                        ("-", "-") => Ok(None),
                        _ => Ok(Some((i64_field("price", p)?, u64_field("qty", q)?))),
                    }
                };
                OutMsg::Top(TopOfBook {
                    instrument: symbol_field("instrument", f[0])?,
                    bid: level(f[1], f[2])?,
                    ask: level(f[3], f[4])?,
                })
            }
            "HLT" => {
                want(1)?;
                OutMsg::Halt(f[0].to_string())
            }
            "NUL" => {
                want(1)?;
                OutMsg::Nullified {
                    flagged: match f[0] {
                        "0" => false,
                        "1" => true,
                        other => return Err(RecordError::Field("flagged", other.to_string())),
                    },
                }
            }
            other => return Err(RecordError::UnknownType(other.to_string())),
        };
        Ok(OutRecord { seq, msg })
    }
}

impl fmt::Display for OutRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(id: u64) -> Command {
        Command::Submit(OrderRequest {
            order_id: OrderId(id),
            instrument: "A".into(),
            side: Side::Buy,
            price: 102,
            qty: 4,
            origin: Origin::Client,
            owner: "alice".into(),
        })
    }

    #[test]
    fn log_line_layout_is_fixed() {
        let rec = LogRecord::new(7, 12, sub(3));
        let line = rec.encode();
        let body = "7|SUB|12|3|A|B|102|4|C|alice";
        assert_eq!(
            line,
            format!("{body}|{:08x}", crc32fast::hash(body.as_bytes()))
        );
        assert_eq!(LogRecord::parse(&line).unwrap(), rec);
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let line = LogRecord::new(7, 12, sub(3)).encode().replace("102", "103");
        assert_eq!(LogRecord::parse(&line), Err(RecordError::Checksum));
    }

    #[test]
    fn combo_and_link_parse() {
        let combo = Command::Combo(CombinationOrder {
            combo_id: ComboId(9),
            origin: Origin::Ats,
            owner: "bob".into(),
            net_limit: -3,
            combo_qty: 5,
            all_or_none: true,
            legs: vec![
                Leg {
                    instrument: "A".into(),
                    side: Side::Buy,
                    ratio: 2,
                },
                Leg {
                    instrument: "B".into(),
                    side: Side::Sell,
                    ratio: 3,
                },
            ],
        });
        let wire = combo.to_wire();
        assert!(wire.starts_with("CMB|9|A|bob|-3|5|1|A:B:2;B:S:3|"));
        assert_eq!(Command::from_wire(&wire).unwrap(), combo);

        let link = Command::Link(LinkRequest {
            spider_id: SpiderId(1),
            owner: "bob".into(),
            members: vec![OrderId(4), OrderId(5)],
        });
        assert_eq!(Command::from_wire(&link.to_wire()).unwrap(), link);
    }

    #[test]
    fn non_canonical_numbers_rejected() {
        for body in [
            "SUB|03|A|B|102|4|C|alice",
            "SUB|3|A|B|+102|4|C|alice",
            "SUB|3|A|B|-0|4|C|alice",
        ] {
            let line = seal(body.to_string());
            assert!(Command::from_wire(&line).is_err(), "{body}");
        }
    }

    #[test]
    fn out_records_round_trip() {
        let msgs = vec![
            OutMsg::Ack(Ref::Admin),
            OutMsg::Reject {
                target: Ref::Order(OrderId(1)),
                reason: RejectReason::Terminal,
            },
            OutMsg::Trade(Trade {
                trade_id: TradeId { seq: 4, n: 1 },
                instrument: "A".into(),
                price: 101,
                qty: 4,
                buy: Party::ComboLeg(ComboId(2), 0),
                sell: Party::Order(OrderId(8)),
            }),
            OutMsg::Cancelled {
                target: Ref::Link(SpiderId(3)),
                qty: 6,
                reason: CancelReason::Spider,
            },
            OutMsg::Virtual {
                combo: ComboId(2),
                leg: 1,
                instrument: "B".into(),
                side: Side::Sell,
                price: 99,
                qty: 5,
            },
            OutMsg::ComboFill {
                combo: ComboId(2),
                units: 5,
                remaining: 0,
            },
            OutMsg::Top(TopOfBook {
                instrument: "A".into(),
                bid: None,
                ask: Some((101, 6)),
            }),
            OutMsg::Halt("depth-overflow".into()),
            OutMsg::Nullified { flagged: true },
        ];
        for msg in msgs {
            let rec = OutRecord { seq: 4, msg };
            assert_eq!(OutRecord::parse(&rec.encode()).unwrap(), rec);
        }
    }
}
