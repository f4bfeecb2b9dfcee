//! Named trigger templates with `{KEY}` placeholders.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::trigger::{parse, validate, Expr};

pub const DEFAULT_GALLERY: &str = include_str!("../../gallery/default.toml");

#[derive(Debug, Clone, Deserialize)]
pub struct GalleryEntry {
    #[serde(default)]
    pub description: String,
    pub text: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Gallery {
    pub templates: BTreeMap<String, GalleryEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GalleryError {
    #[error("gallery file: {0}")]
    Load(String),
    #[error("no template named `{0}`")]
    Unknown(String),
    #[error("missing value for `{{{0}}}`")]
    Missing(String),
    #[error("instantiated trigger is invalid: {0}")]
    Invalid(String),
}

impl Gallery {
    pub fn load(text: &str) -> Result<Self, GalleryError> {
        toml::from_str(text).map_err(|e| GalleryError::Load(e.message().to_string()))
    }

    pub fn builtin() -> Self {
        Self::load(DEFAULT_GALLERY).expect("shipped gallery parses")
    }

    /// Substitutes every placeholder and returns the trigger text together
    /// with its parsed, validated expression.
    pub fn instantiate(
        &self,
        name: &str,
        values: &BTreeMap<String, String>,
    ) -> Result<(String, Expr), GalleryError> {
        let entry = self
            .templates
            .get(name)
            .ok_or_else(|| GalleryError::Unknown(name.to_string()))?;
        let mut out = String::with_capacity(entry.text.len());
        let mut rest = entry.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| GalleryError::Invalid("unclosed `{`".into()))?
                + open;
            let key = &rest[open + 1..close];
            out.push_str(
                values
                    .get(key)
                    .ok_or_else(|| GalleryError::Missing(key.to_string()))?,
            );
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        let expr = parse(&out).map_err(|e| GalleryError::Invalid(e.to_string()))?;
        validate(&expr).map_err(|r| GalleryError::Invalid(r.to_string()))?;
        Ok((out, expr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn builtin_templates_instantiate() {
        let g = Gallery::builtin();
        let (text, _) = g
            .instantiate(
                "pair_divergence",
                &vals(&[
                    ("LONG", "A"),
                    ("HIGH", "105"),
                    ("SHORT", "B"),
                    ("LOW", "95"),
                ]),
            )
            .unwrap();
        assert_eq!(text, "price_above(A,105) AND price_below(B,95)");
        assert!(matches!(
            g.instantiate("pair_divergence", &vals(&[("LONG", "A")])),
            Err(GalleryError::Missing(_))
        ));
        assert!(matches!(
            g.instantiate("nope", &vals(&[])),
            Err(GalleryError::Unknown(_))
        ));
    }

    #[test]
    fn calibration_can_still_violate_the_rule() {
        let g = Gallery::builtin();
        let same = vals(&[
            ("LONG", "A"),
            ("HIGH", "105"),
            ("SHORT", "A"),
            ("LOW", "95"),
        ]);
        assert!(matches!(
            g.instantiate("pair_divergence", &same),
            Err(GalleryError::Invalid(_))
        ));
    }
}
