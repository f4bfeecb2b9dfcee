//! Anytime evaluation under a sample budget.
//!
//! Each leaf reads its series newest-first, one sample per budget unit. Steps
//! go round-robin (in leaf order) over the incomplete leaves that can still
//! affect the outcome; a subtree already decided by completed leaves
//! short-circuits its siblings. Leaves that have not read any sample are
//! unknown, so the result never fires without evidence.
//!
//! Quality is the minimum, over decision-relevant leaves, of `processed / N`;
//! a leaf that has read every available sample counts as 1.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use super::ast::{Expr, Kind, Primitive};

/// One observation of a market data series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Sample {
    pub ts: u64,
    pub price: i64,
    pub volume: u64,
    pub bid: Option<i64>,
    pub ask: Option<i64>,
}

/// Bounded per-series history, oldest first.
#[derive(Debug, Clone, Default)]
pub struct WindowStore {
    capacity: usize,
    series: BTreeMap<String, VecDeque<Sample>>,
}

impl WindowStore {
    pub fn new(capacity: usize) -> Self {
        WindowStore {
            capacity: capacity.max(1),
            series: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, series: &str, s: Sample) {
        let q = self.series.entry(series.to_string()).or_default();
        if q.len() == self.capacity {
            q.pop_front();
        }
        q.push_back(s);
    }

    pub fn get(&self, series: &str) -> Option<&VecDeque<Sample>> {
        self.series.get(series)
    }

    /// The `i`-th newest sample.
    pub fn newest(&self, series: &str, i: usize) -> Option<&Sample> {
        let q = self.series.get(series)?;
        q.len().checked_sub(i + 1).and_then(|j| q.get(j))
    }

    pub fn len(&self, series: &str) -> usize {
        self.series.get(series).map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.series.values().all(VecDeque::is_empty)
    }
}

/// Exact fraction in [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct Quality {
    pub num: u64,
    pub den: u64,
}

impl Quality {
    pub const ONE: Quality = Quality { num: 1, den: 1 };
    pub const ZERO: Quality = Quality { num: 0, den: 1 };

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn at_least(self, threshold: f64) -> bool {
        self.as_f64() >= threshold
    }
}

impl PartialEq for Quality {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Quality {}
impl PartialOrd for Quality {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Quality {
    fn cmp(&self, o: &Self) -> Ordering {
        (u128::from(self.num) * u128::from(o.den)).cmp(&(u128::from(o.num) * u128::from(self.den)))
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalResult {
    pub fired: bool,
    pub quality: Quality,
    /// Samples read per leaf, in leaf order.
    pub processed: Vec<u64>,
    /// Budget units consumed.
    pub used: u64,
}

/// Predicate of one primitive over its `k` newest samples, computed from scratch.
pub fn leaf_value(p: &Primitive, store: &WindowStore, k: usize) -> bool {
    let s = |i: usize| {
        store
            .newest(&p.series, i)
            .copied()
            .expect("k within history")
    };
    if k == 0 {
        return false;
    }
    let x = &p.params;
    match p.kind {
        Kind::PriceAbove => s(0).price > x[0],
        Kind::PriceBelow => s(0).price < x[0],
        Kind::SpreadBelow => match (s(0).bid, s(0).ask) {
            (Some(b), Some(a)) => a - b < x[0],
            _ => false,
        },
        Kind::TimeWindow => {
            let t = s(0).ts as i64;
            x[0] <= t && t <= x[1]
        }
        Kind::VolumeAbove => (0..k).map(|i| u128::from(s(i).volume)).sum::<u128>() > x[1] as u128,
        Kind::MaCross => {
            let short = x[0] as usize;
            if k < short {
                return false;
            }
            let sum = |n: usize| (0..n).map(|i| i128::from(s(i).price)).sum::<i128>();
            // short/short_n > long/long_n, cross-multiplied.
            sum(short) * k as i128 > sum(k) * short as i128
        }
        Kind::IndexChangePct => {
            if k < 2 {
                return false;
            }
            let newest = i128::from(s(0).price);
            let oldest = i128::from(s(k - 1).price);
            let lhs = (newest - oldest) * 100;
            let rhs = i128::from(x[1]) * oldest;
            if x[1] >= 0 {
                lhs >= rhs
            } else {
                lhs <= rhs
            }
        }
    }
}

/// Reference evaluation: every leaf over all of its available samples.
pub fn evaluate_exhaustive(e: &Expr, store: &WindowStore) -> bool {
    match e {
        Expr::Prim(p) => {
            let k = (p.lookback() as usize).min(store.len(&p.series));
            leaf_value(p, store, k)
        }
        Expr::Not(x) => !evaluate_exhaustive(x, store),
        Expr::And(xs) => xs.iter().all(|x| evaluate_exhaustive(x, store)),
        Expr::Or(xs) => xs.iter().any(|x| evaluate_exhaustive(x, store)),
    }
}

/// Three-valued truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tv {
    True,
    False,
    Unknown,
}

impl Tv {
    fn from_bool(b: bool) -> Tv {
        if b {
            Tv::True
        } else {
            Tv::False
        }
    }

    fn not(self) -> Tv {
        match self {
            Tv::True => Tv::False,
            Tv::False => Tv::True,
            Tv::Unknown => Tv::Unknown,
        }
    }
}

struct LeafState<'a> {
    prim: &'a Primitive,
    /// Samples this leaf will read before it is complete.
    target: u64,
    processed: u64,
    value: bool,
}

impl LeafState<'_> {
    fn complete(&self) -> bool {
        self.processed >= self.target
    }

    fn quality(&self) -> Quality {
        if self.complete() {
            Quality::ONE
        } else {
            Quality {
                num: self.processed,
                den: self.prim.lookback(),
            }
        }
    }

    /// Value from completed evaluation only.
    fn definite(&self) -> Tv {
        if self.complete() {
            Tv::from_bool(self.value)
        } else {
            Tv::Unknown
        }
    }

    /// Best current guess: the predicate over what has been read so far.
    fn provisional(&self) -> Tv {
        if self.complete() || self.processed > 0 {
            Tv::from_bool(self.value)
        } else {
            Tv::Unknown
        }
    }
}

struct Evaluator<'a> {
    expr: &'a Expr,
    leaves: Vec<LeafState<'a>>,
}

impl<'a> Evaluator<'a> {
    fn new(expr: &'a Expr, store: &WindowStore) -> Self {
        let leaves = expr
            .leaves()
            .into_iter()
            .map(|prim| {
                let target = prim.lookback().min(store.len(&prim.series) as u64);
                LeafState {
                    prim,
                    target,
                    processed: 0,
                    value: false,
                }
            })
            .collect();
        Evaluator { expr, leaves }
    }

    fn kleene(&self, e: &Expr, next: &mut usize, def: bool) -> Tv {
        match e {
            Expr::Prim(_) => {
                let l = &self.leaves[*next];
                *next += 1;
                if def {
                    l.definite()
                } else {
                    l.provisional()
                }
            }
            Expr::Not(x) => self.kleene(x, next, def).not(),
            Expr::And(xs) | Expr::Or(xs) => {
                let (absorb, identity) = if matches!(e, Expr::And(_)) {
                    (Tv::False, Tv::True)
                } else {
                    (Tv::True, Tv::False)
                };
                let mut acc = identity;
                for x in xs {
                    let v = self.kleene(x, next, def);
                    if v == absorb {
                        acc = absorb;
                    } else if v == Tv::Unknown && acc != absorb {
                        acc = Tv::Unknown;
                    }
                }
                acc
            }
        }
    }

    /// Decision-relevant leaves of `e` and their quality. Under an AND (OR)
    /// with a child already definitely false (true), only the best such child
    /// matters.
    fn relevant(&self, e: &Expr, next: &mut usize, out: &mut Vec<usize>) -> Quality {
        match e {
            Expr::Prim(_) => {
                let i = *next;
                *next += 1;
                out.push(i);
                self.leaves[i].quality()
            }
            Expr::Not(x) => self.relevant(x, next, out),
            Expr::And(xs) | Expr::Or(xs) => {
                let absorb = if matches!(e, Expr::And(_)) {
                    Tv::False
                } else {
                    Tv::True
                };
                let mut children = Vec::with_capacity(xs.len());
                for x in xs {
                    let start = *next;
                    let mut probe = start;
                    let def = self.kleene(x, &mut probe, true);
                    let mut sub = Vec::new();
                    let q = self.relevant(x, next, &mut sub);
                    children.push((def == absorb, q, sub));
                }
                let mut best: Option<usize> = None;
                for (i, (decided, q, _)) in children.iter().enumerate() {
                    if *decided && best.is_none_or(|b| *q > children[b].1) {
                        best = Some(i);
                    }
                }
                match best {
                    Some(b) => {
                        let (_, q, sub) = children.swap_remove(b);
                        out.extend(sub);
                        q
                    }
                    None => {
                        let mut q = Quality::ONE;
                        for (_, cq, sub) in children {
                            q = q.min(cq);
                            out.extend(sub);
                        }
                        q
                    }
                }
            }
        }
    }

    fn step(&mut self, leaf: usize, store: &WindowStore) {
        let l = &mut self.leaves[leaf];
        l.processed += 1;
        l.value = leaf_value(l.prim, store, l.processed as usize);
    }

    fn run(mut self, store: &WindowStore, budget: u64) -> EvalResult {
        let mut used = 0;
        let mut last: Option<usize> = None;
        while used < budget {
            let mut rel = Vec::new();
            self.relevant(self.expr, &mut 0, &mut rel);
            let pending: Vec<usize> = rel
                .into_iter()
                .filter(|i| !self.leaves[*i].complete())
                .collect();
            if pending.is_empty() {
                break;
            }
            let pick = match last {
                Some(l) => pending
                    .iter()
                    .copied()
                    .find(|i| *i > l)
                    .unwrap_or(pending[0]),
                None => pending[0],
            };
            self.step(pick, store);
            last = Some(pick);
            used += 1;
        }
        let mut rel = Vec::new();
        let quality = self.relevant(self.expr, &mut 0, &mut rel);
        let fired = self.kleene(self.expr, &mut 0, false) == Tv::True;
        EvalResult {
            fired,
            quality,
            processed: self.leaves.iter().map(|l| l.processed).collect(),
            used,
        }
    }
}

pub fn evaluate_anytime(e: &Expr, store: &WindowStore, budget: u64) -> EvalResult {
    Evaluator::new(e, store).run(store, budget)
}
