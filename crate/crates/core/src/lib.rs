pub mod advisory;
pub mod agents;
pub mod canonical;
pub mod compliance;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod purl;
pub mod redact;
pub mod registry;
pub mod snapshot;
pub mod store;
pub mod version;
pub mod workload;
pub mod vex;

pub use advisory::{Advisory, AdvisoryMatch, Feed, FeedSet};
pub use agents::{
    run_session, Ablation, AgentId, AgentMessage, Payload, SessionConfig, SessionError, SessionOutcome, SessionPolicy,
    SupervisorDecision,
};
pub use compliance::{ComplianceResult, ComplianceRule, EvaluationContext, RuleStatus};
pub use harness::{
    ablate, capture, replay, report, AblationReport, CaptureReport, CaptureStatus, HarnessError, ReplayOptions,
    ReplayReport, SessionReport,
};
pub use metrics::{CaptureMetrics, DecomposedScore, ParityClass, ParityConfig, ParityResult};
pub use model::{AibomDocument, Component, DependencyEdge, DeploymentExtensions, EnvironmentSnapshot};
pub use purl::Purl;
pub use redact::{RedactionManifest, ViewTier};
pub use snapshot::{ReconciliationOutcome, ReconciliationStatus, SnapshotDiff};
pub use store::{SessionRecord, Store, StoreError};
pub use vex::{Tristate, VexAssertion, VexStatus};
pub use workload::{DriftInjection, GroundTruthTrace, InjectionKind, WorkloadSpec};
