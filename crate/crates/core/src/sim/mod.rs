//! Discrete-event environment: seeded links with delay boxes, a fault plan,
//! and a replicated core.

mod fault;
mod link;
mod replica;
mod scheduler;

pub use fault::{validate_plan, FaultAction, FaultEntry, FaultError};
pub use link::{
    apply_delay_boxes, ms_to_us, Delivery, Direction, LinkProfile, Network, NetworkError,
};
pub use replica::{
    processing_times, run_replicated, FailoverRecord, MarketplaceDown, ReplicaPair,
    ReplicationConfig, ReplicationOutcome,
};
pub use scheduler::Scheduler;
