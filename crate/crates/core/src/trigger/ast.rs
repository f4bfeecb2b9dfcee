use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    PriceAbove,
    PriceBelow,
    MaCross,
    IndexChangePct,
    VolumeAbove,
    SpreadBelow,
    TimeWindow,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::PriceAbove,
        Kind::PriceBelow,
        Kind::MaCross,
        Kind::IndexChangePct,
        Kind::VolumeAbove,
        Kind::SpreadBelow,
        Kind::TimeWindow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::PriceAbove => "price_above",
            Kind::PriceBelow => "price_below",
            Kind::MaCross => "ma_cross",
            Kind::IndexChangePct => "index_change_pct",
            Kind::VolumeAbove => "volume_above",
            Kind::SpreadBelow => "spread_below",
            Kind::TimeWindow => "time_window",
        }
    }

    pub fn from_name(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Number of integer parameters after the series id.
    pub fn arity(self) -> usize {
        match self {
            Kind::PriceAbove | Kind::PriceBelow | Kind::SpreadBelow => 1,
            Kind::MaCross | Kind::IndexChangePct | Kind::VolumeAbove | Kind::TimeWindow => 2,
        }
    }
}

/// A primitive scenario trigger over one data series.
///
/// | kind | params | lookback N | fires when |
/// |------|--------|------------|------------|
/// | `price_above(S,x)` | x | 1 | last price > x |
/// | `price_below(S,x)` | x | 1 | last price < x |
/// | `ma_cross(S,short,long)` | short ≤ long | long | short MA > long MA |
/// | `index_change_pct(S,w,pct)` | w ≥ 2 | w | change over the window ≥ pct % (≤ when pct < 0) |
/// | `volume_above(S,w,x)` | w ≥ 1 | w | summed volume > x |
/// | `spread_below(S,x)` | x | 1 | ask − bid < x |
/// | `time_window(S,from,to)` | from ≤ to | 1 | last sample time in [from, to] ms |
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Primitive {
    pub kind: Kind,
    pub series: String,
    pub params: Vec<i64>,
}

impl Primitive {
    pub fn lookback(&self) -> u64 {
        match self.kind {
            Kind::MaCross => self.params[1] as u64,
            Kind::IndexChangePct | Kind::VolumeAbove => self.params[0] as u64,
            _ => 1,
        }
    }

    pub(crate) fn check_params(&self) -> Result<(), String> {
        let p = &self.params;
        if p.len() != self.kind.arity() {
            return Err(format!(
                "{} takes {} parameters after the series, got {}",
                self.kind.name(),
                self.kind.arity(),
                p.len()
            ));
        }
        let ok = match self.kind {
            Kind::MaCross => p[0] >= 1 && p[0] <= p[1],
            Kind::IndexChangePct => p[0] >= 2,
            Kind::VolumeAbove => p[0] >= 1,
            Kind::TimeWindow => p[0] <= p[1],
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid parameters for {}", self.kind.name()))
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}", self.kind.name(), self.series)?;
        for p in &self.params {
            write!(f, ",{p}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Prim(Primitive),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

impl Expr {
    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&Primitive> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Primitive>) {
        match self {
            Expr::Prim(p) => out.push(p),
            Expr::Not(e) => e.collect_leaves(out),
            Expr::And(es) | Expr::Or(es) => es.iter().for_each(|e| e.collect_leaves(out)),
        }
    }

    pub fn max_lookback(&self) -> u64 {
        self.leaves()
            .iter()
            .map(|p| p.lookback())
            .max()
            .unwrap_or(0)
    }

    /// Σ N over leaves: a budget this large always completes evaluation.
    pub fn total_lookback(&self) -> u64 {
        self.leaves().iter().map(|p| p.lookback()).sum()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, wrap: bool) -> fmt::Result {
            if wrap {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Prim(p) => write!(f, "{p}"),
            Expr::Not(e) => {
                f.write_str("NOT ")?;
                child(f, e, matches!(**e, Expr::And(_) | Expr::Or(_)))
            }
            Expr::And(es) => {
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    child(f, e, matches!(e, Expr::And(_) | Expr::Or(_)))?;
                }
                Ok(())
            }
            Expr::Or(es) => {
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" OR ")?;
                    }
                    child(f, e, matches!(e, Expr::Or(_)))?;
                }
                Ok(())
            }
        }
    }
}
