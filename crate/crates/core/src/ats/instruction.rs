//! Agent Instruction files.
//!
//! ```toml
//! id = 7
//! owner = "p1"
//! trigger = "price_above(A,100) AND volume_above(B,10,500)"
//! q_min = 0.8
//! budget = 40          # sample evaluations per market event
//! chunk_bound = 3      # combination templates only
//! epsilon = 1          # max residual units after decomposition
//! sensitive = false    # marks the stored text as containing sensitive data
//!
//! [template.order]
//! instrument = "A"
//! side = "buy"
//! price = 101
//! qty = 5
//! ```
//!
//! A combination template uses `[template.combo]` with `net_limit`, `qty`,
//! `all_or_none` and `legs = [{ instrument, side, ratio }, ...]`.

use serde::{Deserialize, Deserializer};
use thiserror::Error;

use super::decompose::{decompose_combination, DecomposeError};
use crate::engine::{is_valid_symbol, CombinationOrder, ComboId, Leg, Origin, Side};
use crate::trigger::{parse, validate, Expr};

fn side_de<'de, D: Deserializer<'de>>(d: D) -> Result<Side, D::Error> {
    let s = String::deserialize(d)?;
    match s.to_ascii_lowercase().as_str() {
        "buy" | "b" => Ok(Side::Buy),
        "sell" | "s" => Ok(Side::Sell),
        _ => Err(serde::de::Error::custom(format!("unknown side `{s}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderTemplate {
    pub instrument: String,
    #[serde(deserialize_with = "side_de")]
    pub side: Side,
    pub price: i64,
    pub qty: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegTemplate {
    pub instrument: String,
    #[serde(deserialize_with = "side_de")]
    pub side: Side,
    pub ratio: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComboTemplate {
    pub net_limit: i64,
    pub qty: u64,
    #[serde(default)]
    pub all_or_none: bool,
    pub legs: Vec<LegTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    Order(OrderTemplate),
    Combo(ComboTemplate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// Latent order plus trigger, the only kind hosted.
    #[default]
    Instruction,
    /// User-programmable agent; not supported.
    Program,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentInstruction {
    pub id: u64,
    pub owner: String,
    pub trigger: String,
    pub q_min: f64,
    pub budget: u64,
    #[serde(default = "one")]
    pub chunk_bound: u64,
    #[serde(default)]
    pub epsilon: u64,
    #[serde(default)]
    pub sensitive: bool,
    #[serde(default)]
    pub kind: AgentKind,
    pub template: Template,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstructionError {
    #[error("malformed instruction: {0}")]
    Malformed(String),
    #[error("unsupported")]
    Unsupported,
    #[error("trigger: {0}")]
    Syntax(String),
    #[error("anti-resonance: {0}")]
    AntiResonance(String),
    #[error("invalid field: {0}")]
    Field(&'static str),
    #[error("basket: {0}")]
    Basket(DecomposeError),
}

impl AgentInstruction {
    pub fn from_toml(text: &str) -> Result<Self, InstructionError> {
        toml::from_str(text)
            .map_err(|e| InstructionError::Malformed(e.message().replace('\n', " ")))
    }

    /// Full upload check: kind, trigger grammar and anti-resonance, ranges,
    /// and template shape. Returns the parsed trigger.
    pub fn check(&self) -> Result<Expr, InstructionError> {
        if self.kind == AgentKind::Program {
            return Err(InstructionError::Unsupported);
        }
        let expr = parse(&self.trigger).map_err(|e| InstructionError::Syntax(e.to_string()))?;
        validate(&expr).map_err(|r| InstructionError::AntiResonance(r.to_string()))?;
        if !(0.0..=1.0).contains(&self.q_min) {
            return Err(InstructionError::Field("q_min"));
        }
        if self.budget == 0 {
            return Err(InstructionError::Field("budget"));
        }
        if !is_valid_symbol(&self.owner) {
            return Err(InstructionError::Field("owner"));
        }
        match &self.template {
            Template::Order(o) => {
                if o.price <= 0 || o.qty == 0 || !is_valid_symbol(&o.instrument) {
                    return Err(InstructionError::Field("template"));
                }
            }
            Template::Combo(c) => {
                if c.legs.iter().any(|l| !is_valid_symbol(&l.instrument)) {
                    return Err(InstructionError::Field("template"));
                }
                self.combo_order(c, ComboId(0))
                    .check_shape()
                    .map_err(|_| InstructionError::Field("template"))?;
                let ratios: Vec<u64> = c.legs.iter().map(|l| l.ratio).collect();
                decompose_combination(c.qty, &ratios, self.chunk_bound, self.epsilon)
                    .map_err(InstructionError::Basket)?;
            }
        }
        Ok(expr)
    }

    pub(crate) fn combo_order(&self, c: &ComboTemplate, id: ComboId) -> CombinationOrder {
        CombinationOrder {
            combo_id: id,
            origin: Origin::Ats,
            owner: self.owner.clone(),
            net_limit: c.net_limit,
            combo_qty: c.qty,
            all_or_none: c.all_or_none,
            legs: c
                .legs
                .iter()
                .map(|l| Leg {
                    instrument: l.instrument.clone(),
                    side: l.side,
                    ratio: l.ratio,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ORDER: &str = r#"
id = 7
owner = "p1"
trigger = "price_above(A,100) AND volume_above(B,10,500)"
q_min = 0.8
budget = 40

[template.order]
instrument = "A"
side = "buy"
price = 101
qty = 5
"#;

    #[test]
    fn parses_order_template() {
        let i = AgentInstruction::from_toml(ORDER).unwrap();
        assert_eq!(i.id, 7);
        assert!(matches!(
            i.template,
            Template::Order(OrderTemplate {
                side: Side::Buy,
                qty: 5,
                ..
            })
        ));
        assert!(i.check().is_ok());
    }

    #[test]
    fn parses_combo_template() {
        let text = r#"
id = 1
owner = "p1"
trigger = "price_above(A,100) AND price_below(B,90)"
q_min = 0.5
budget = 10
chunk_bound = 3
epsilon = 0
[template.combo]
net_limit = 2
qty = 10
legs = [{ instrument = "A", side = "buy", ratio = 1 }, { instrument = "B", side = "sell", ratio = 1 }]
"#;
        let i = AgentInstruction::from_toml(text).unwrap();
        assert!(i.check().is_ok());
    }

    #[test]
    fn rejections() {
        let single = ORDER.replace(
            "price_above(A,100) AND volume_above(B,10,500)",
            "price_above(A,100)",
        );
        let e = AgentInstruction::from_toml(&single)
            .unwrap()
            .check()
            .unwrap_err();
        assert!(matches!(e, InstructionError::AntiResonance(_)));
        let prog = ORDER.replace("budget = 40", "budget = 40\nkind = \"program\"");
        assert_eq!(
            AgentInstruction::from_toml(&prog)
                .unwrap()
                .check()
                .unwrap_err(),
            InstructionError::Unsupported
        );
        let bad_q = ORDER.replace("q_min = 0.8", "q_min = 1.5");
        assert_eq!(
            AgentInstruction::from_toml(&bad_q)
                .unwrap()
                .check()
                .unwrap_err(),
            InstructionError::Field("q_min")
        );
        assert!(matches!(
            AgentInstruction::from_toml("id = \"x\""),
            Err(InstructionError::Malformed(_))
        ));
    }
}
