//! Hybrid exchange: a deterministic matching core, a sequencing gateway, an
//! agent trade server with a trigger language, and a simulated network for
//! resilience and proximity experiments.

pub mod ats;
pub mod engine;
pub mod gateway;
pub mod harness;
pub mod sim;
pub mod trigger;
