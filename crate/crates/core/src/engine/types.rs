use std::fmt;
use std::str::FromStr;

use super::RecordError;

/// Integer price in ticks.
pub type Price = i64;
/// Gateway-assigned position in the core's total order of inputs.
pub type SeqNo = u64;
/// Instrument symbol. Restricted to `[A-Za-z0-9_]`.
pub type Instrument = String;

macro_rules! id_newtype {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl $name {
            pub const PREFIX: char = $prefix;
        }
    };
}

id_newtype!(OrderId, 'O');
id_newtype!(ComboId, 'C');
id_newtype!(SpiderId, 'L');

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Side::Buy => "B",
            Side::Sell => "S",
        }
    }

    /// +1 for buys, -1 for sells: the sign of this side's contribution to a net cost.
    pub fn cost_sign(self) -> i128 {
        match self {
            Side::Buy => 1,
            Side::Sell => -1,
        }
    }
}

impl FromStr for Side {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "B" => Ok(Side::Buy),
            "S" => Ok(Side::Sell),
            _ => Err(RecordError::Field("side", s.to_string())),
        }
    }
}

/// Where an order came from. Virtual orders are engine-generated and never
/// accepted on the input stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    Client,
    Ats,
    Virtual,
}

impl Origin {
    pub fn code(self) -> &'static str {
        match self {
            Origin::Client => "C",
            Origin::Ats => "A",
            Origin::Virtual => "V",
        }
    }
}

impl FromStr for Origin {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "C" => Ok(Origin::Client),
            "A" => Ok(Origin::Ats),
            "V" => Ok(Origin::Virtual),
            _ => Err(RecordError::Field("origin", s.to_string())),
        }
    }
}

/// A reference to anything an input event can create or target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ref {
    Order(OrderId),
    Combo(ComboId),
    Link(SpiderId),
    Admin,
}

impl fmt::Display for Ref {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ref::Order(id) => write!(f, "O{id}"),
            Ref::Combo(id) => write!(f, "C{id}"),
            Ref::Link(id) => write!(f, "L{id}"),
            Ref::Admin => f.write_str("ADM"),
        }
    }
}

impl FromStr for Ref {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ADM" {
            return Ok(Ref::Admin);
        }
        let bad = || RecordError::Field("ref", s.to_string());
        let mut chars = s.chars();
        let prefix = chars.next().ok_or_else(bad)?;
        let num: u64 = parse_u64(chars.as_str()).map_err(|_| bad())?;
        match prefix {
            'O' => Ok(Ref::Order(OrderId(num))),
            'C' => Ok(Ref::Combo(ComboId(num))),
            'L' => Ok(Ref::Link(SpiderId(num))),
            _ => Err(bad()),
        }
    }
}

/// One side of a trade: either a plain order or one leg of a combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    Order(OrderId),
    ComboLeg(ComboId, usize),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Order(id) => write!(f, "O{id}"),
            Party::ComboLeg(id, leg) => write!(f, "C{id}/{leg}"),
        }
    }
}

impl FromStr for Party {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RecordError::Field("party", s.to_string());
        if let Some(rest) = s.strip_prefix('O') {
            return Ok(Party::Order(OrderId(parse_u64(rest).map_err(|_| bad())?)));
        }
        let rest = s.strip_prefix('C').ok_or_else(bad)?;
        let (id, leg) = rest.split_once('/').ok_or_else(bad)?;
        Ok(Party::ComboLeg(
            ComboId(parse_u64(id).map_err(|_| bad())?),
            leg.parse().map_err(|_| bad())?,
        ))
    }
}

/// Strict unsigned parse: digits only, no sign, no leading zeros except "0".
/// Canonical text must round-trip byte-for-byte.
pub(crate) fn parse_u64(s: &str) -> Result<u64, ()> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0'))
    {
        return Err(());
    }
    s.parse().map_err(|_| ())
}

pub(crate) fn parse_i64(s: &str) -> Result<i64, ()> {
    match s.strip_prefix('-') {
        Some(rest) if rest != "0" => {
            parse_u64(rest)?;
            s.parse().map_err(|_| ())
        }
        Some(_) => Err(()),
        None => {
            parse_u64(s)?;
            s.parse().map_err(|_| ())
        }
    }
}

pub fn is_valid_symbol(s: &str) -> bool {
    !s.is_empty() && s.len() <= 32 && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// An order request as it travels on the wire and in the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderRequest {
    pub order_id: OrderId,
    pub instrument: Instrument,
    pub side: Side,
    pub price: Price,
    pub qty: u64,
    pub origin: Origin,
    pub owner: String,
}

/// A live or terminal order inside the core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Order {
    pub order_id: OrderId,
    pub instrument: Instrument,
    pub side: Side,
    pub price: Price,
    pub qty: u64,
    pub remaining: u64,
    pub filled: u64,
    pub arrival_ts: u64,
    pub seq_no: SeqNo,
    pub origin: Origin,
    pub owner: String,
}

impl Order {
    pub fn from_request(req: &OrderRequest, seq_no: SeqNo, arrival_ts: u64) -> Self {
        Order {
            order_id: req.order_id,
            instrument: req.instrument.clone(),
            side: req.side,
            price: req.price,
            qty: req.qty,
            remaining: req.qty,
            filled: 0,
            arrival_ts,
            seq_no,
            origin: req.origin,
            owner: req.owner.clone(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.remaining == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leg {
    pub instrument: Instrument,
    pub side: Side,
    pub ratio: u64,
}

/// Atomic multi-leg order. `net_limit` is the maximum net cost per combo
/// unit: buy legs add `ratio * price`, sell legs subtract it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinationOrder {
    pub combo_id: ComboId,
    pub origin: Origin,
    pub owner: String,
    pub net_limit: Price,
    pub combo_qty: u64,
    pub all_or_none: bool,
    pub legs: Vec<Leg>,
}

impl CombinationOrder {
    /// Structural checks: at least two legs on distinct instruments, every
    /// ratio at least one, positive quantity.
    pub fn check_shape(&self) -> Result<(), &'static str> {
        if self.legs.len() < 2 {
            return Err("fewer than two legs");
        }
        if self.legs.iter().any(|l| l.ratio == 0) {
            return Err("zero ratio");
        }
        if self.combo_qty == 0 {
            return Err("zero quantity");
        }
        for (i, a) in self.legs.iter().enumerate() {
            if self.legs[i + 1..]
                .iter()
                .any(|b| b.instrument == a.instrument)
            {
                return Err("duplicate leg instrument");
            }
        }
        Ok(())
    }
}

/// Request to bind existing orders into an exclusive-or set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkRequest {
    pub spider_id: SpiderId,
    pub owner: String,
    pub members: Vec<OrderId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TradeId {
    pub seq: SeqNo,
    pub n: u32,
}

impl fmt::Display for TradeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.seq, self.n)
    }
}

impl FromStr for TradeId {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RecordError::Field("trade_id", s.to_string());
        let (seq, n) = s.split_once('.').ok_or_else(bad)?;
        Ok(TradeId {
            seq: parse_u64(seq).map_err(|_| bad())?,
            n: parse_u64(n)
                .map_err(|_| bad())?
                .try_into()
                .map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trade {
    pub trade_id: TradeId,
    pub instrument: Instrument,
    pub price: Price,
    pub qty: u64,
    pub buy: Party,
    pub sell: Party,
}

impl Trade {
    pub fn seq_no(&self) -> SeqNo {
        self.trade_id.seq
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopOfBook {
    pub instrument: Instrument,
    pub bid: Option<(Price, u64)>,
    pub ask: Option<(Price, u64)>,
}
