//! The three cooperating agents, their message bus and the supervisor.
//!
//! Agents share no mutable state. Each is a state machine over its own
//! perception stream; everything they say goes through [`bus::MessageBus`],
//! which assigns a total order within the session.

pub mod a2a;
pub mod agntcy;
pub mod bus;
pub mod mcp;
pub mod session;
pub mod supervisor;

pub use bus::{AgentId, AgentMessage, MessageBus, Payload};
pub use session::{
    run_session, Ablation, SessionConfig, SessionError, SessionOutcome, SessionPolicy, RETENTION_FAILED, RETENTION_RELEASED,
};
pub use supervisor::{HealthRecord, HealthStatus, SupervisorDecision};
