//! Scenario trigger expressions: parsing, the anti-resonance check, and
//! budgeted anytime evaluation.

mod ast;
mod eval;
mod parse;
mod validate;

pub use ast::{Expr, Kind, Primitive};
pub use eval::{
    evaluate_anytime, evaluate_exhaustive, leaf_value, EvalResult, Quality, Sample, WindowStore,
};
pub use parse::{parse, ParseError};
pub use validate::{validate, Literal, Rejection};
