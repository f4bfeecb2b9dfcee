//! Anti-resonance rule: every conjunct of the expression's disjunctive normal
//! form must involve at least two distinct data series.
//!
//! Full DNF expansion is exponential. Instead, for each subtree we track the
//! series `s` for which some DNF conjunct uses only `s`, with one such conjunct
//! as a witness. AND intersects these sets (a conjunct of an AND is a union of
//! child conjuncts), OR unions them. The expression is valid iff the root's
//! set is empty.

use std::collections::BTreeMap;
use std::fmt;

use super::ast::{Expr, Primitive};

/// A literal of the DNF: a primitive, possibly negated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literal {
    pub negated: bool,
    pub prim: Primitive,
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("NOT ")?;
        }
        write!(f, "{}", self.prim)
    }
}

/// Rejection: a conjunct that can fire on a single series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub conjunct: Vec<Literal>,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.conjunct.iter().map(Literal::to_string).collect();
        write!(
            f,
            "conjunct `{}` uses fewer than two distinct series",
            parts.join(" AND ")
        )
    }
}

type Witnesses = BTreeMap<String, Vec<Literal>>;

fn single_series(e: &Expr, negated: bool) -> Witnesses {
    match e {
        Expr::Prim(p) => {
            let lit = Literal {
                negated,
                prim: p.clone(),
            };
            BTreeMap::from([(p.series.clone(), vec![lit])])
        }
        Expr::Not(inner) => single_series(inner, !negated),
        // Under negation, AND becomes OR and vice versa (De Morgan).
        Expr::And(es) | Expr::Or(es) => {
            let conj = matches!(e, Expr::And(_)) != negated;
            let mut iter = es.iter().map(|c| single_series(c, negated));
            let mut acc = iter.next().unwrap_or_default();
            for w in iter {
                if conj {
                    acc = acc
                        .into_iter()
                        .filter_map(|(s, mut lits)| {
                            let other = w.get(&s)?;
                            lits.extend(other.iter().cloned());
                            Some((s, lits))
                        })
                        .collect();
                } else {
                    for (s, lits) in w {
                        acc.entry(s).or_insert(lits);
                    }
                }
            }
            acc
        }
    }
}

pub fn validate(e: &Expr) -> Result<(), Rejection> {
    match single_series(e, false).into_iter().next() {
        None => Ok(()),
        Some((_, conjunct)) => Err(Rejection { conjunct }),
    }
}
