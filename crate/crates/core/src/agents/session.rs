//! One capture session driven by a single virtual-time event loop.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisory::{match_advisories, AdvisoryMatch, FeedSet};
use crate::agents::a2a::{a2a_classify, A2aError, A2aInput, A2aState, AnomalyThresholds};
use crate::agents::agntcy::{run_agntcy, AgntcyState};
use crate::agents::bus::{AgentId, AgentMessage, BusError, Heartbeat, MessageBus, Payload, VexAssertionMsg};
use crate::agents::mcp::{run_mcp, McpConfig};
use crate::agents::supervisor::{health_from_log, supervise, HealthRecord, SessionSignals, SupervisorConfig, SupervisorDecision};
use crate::canonical::sha256_hex;
use crate::model::{
    validate_component, validate_for_seal, AibomDocument, Component, DeploymentExtensions, DocMetadata,
    ValidationReport, SHA256,
};
use crate::purl::Purl;
use crate::snapshot::{ReconciliationOutcome, ReconciliationStatus, Snapshot, SnapshotCapture, SnapshotError, SnapshotPhase, SnapshotSource};
use crate::vex::{PolicyGraph, VexDecision, VexError};
use crate::workload::{run_workload_replica, DriftInjection, ExecutionResult, WorkloadError, WorkloadSpec};

pub const RETENTION_RELEASED: &str = "released-output";
pub const RETENTION_FAILED: &str = "failed-withdrawn";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Telemetry(#[from] A2aError),
    #[error(transparent)]
    Vex(#[from] VexError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("assembled document is invalid: {0}")]
    InvalidDocument(ValidationReport),
}

/// Agents replaced by pass-throughs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub disable_mcp: bool,
    pub disable_a2a: bool,
    pub disable_agntcy: bool,
}

impl Ablation {
    pub fn enabled_agents(&self) -> Vec<AgentId> {
        AgentId::AGENTS
            .into_iter()
            .filter(|a| match a {
                AgentId::Mcp => !self.disable_mcp,
                AgentId::A2a => !self.disable_a2a,
                AgentId::Agntcy => !self.disable_agntcy,
                AgentId::Supervisor => true,
            })
            .collect()
    }
}

/// Deployment policy the session is evaluated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionPolicy {
    pub policy_version: String,
    /// Package ids of statistical disclosure-control tools.
    pub disclosure_tools: Vec<String>,
    pub policy_graph: PolicyGraph,
    pub mcp: McpConfig,
    pub supervisor: SupervisorConfig,
}

impl Default for SessionPolicy {
    fn default() -> Self {
        Self {
            policy_version: "tre-sdc-2025.1".into(),
            disclosure_tools: vec!["pkg:cran/sdcMicro".into(), "pkg:pypi/sdc-tools".into()],
            policy_graph: PolicyGraph::tre_default(),
            mcp: McpConfig::default(),
            supervisor: SupervisorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockSkew {
    /// First capture attempt only; a resync recovers.
    Transient,
    Persistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilentAgent {
    pub agent: AgentId,
    /// Last virtual time at which the agent still acts.
    pub after: u64,
}

/// Failures injected for exercising the supervisor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Faults {
    pub silent_agent: Option<SilentAgent>,
    pub malformed_fragment: bool,
    pub clock_skew: Option<ClockSkew>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    /// RFC 3339 instant recorded in the document.
    pub timestamp: String,
    pub analyst_pseudonym: String,
    pub reviewer_pseudonym: String,
    pub tool_version: String,
    pub ablation: Ablation,
    pub policy: SessionPolicy,
    pub injections: Vec<DriftInjection>,
    pub replica: u64,
    pub faults: Faults,
}

impl SessionConfig {
    pub fn new(session_id: impl Into<String>, timestamp: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            timestamp: timestamp.into(),
            analyst_pseudonym: "analyst-01".into(),
            reviewer_pseudonym: "reviewer-01".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            ablation: Ablation::default(),
            policy: SessionPolicy::default(),
            injections: vec![],
            replica: 0,
            faults: Faults::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session_id: String,
    pub execution: ExecutionResult,
    /// Snapshots of the last reconciliation attempt.
    pub snapshots: Vec<Snapshot>,
    pub reconciliation: Option<ReconciliationOutcome>,
    pub health: Vec<HealthRecord>,
    pub decision: SupervisorDecision,
    pub supervisor_log: Vec<String>,
    /// Absent for fail-closed sessions.
    pub document: Option<AibomDocument>,
    pub matches: Vec<AdvisoryMatch>,
    pub vex: Vec<VexDecision>,
    pub messages: Vec<AgentMessage>,
}

impl SessionOutcome {
    pub fn is_fail_closed(&self) -> bool {
        self.decision.is_fail_closed()
    }

    pub fn sbom_purls(&self) -> BTreeSet<Purl> {
        self.document
            .iter()
            .flat_map(|d| d.components.iter().map(|c| c.purl.clone()))
            .collect()
    }

    pub fn baseline_purls(&self) -> BTreeSet<Purl> {
        self.snapshots
            .iter()
            .find(|s| s.phase == SnapshotPhase::Baseline)
            .map(Snapshot::purls)
            .unwrap_or_default()
    }
}

fn rank(agent: AgentId) -> u8 {
    match agent {
        AgentId::Mcp => 0,
        AgentId::A2a => 1,
        AgentId::Agntcy => 2,
        AgentId::Supervisor => 3,
    }
}

fn valid_components(components: &[Component]) -> Vec<Component> {
    components
        .iter()
        .filter(|c| {
            let mut r = ValidationReport::default();
            validate_component(c, &mut r);
            r.is_empty()
        })
        .cloned()
        .collect()
}

/// Run one session end to end. Deterministic in `(spec, feeds, config)`:
/// the message log is identical across runs.
pub fn run_session(spec: &WorkloadSpec, feeds: &FeedSet, config: &SessionConfig) -> Result<SessionOutcome, SessionError> {
    let execution = run_workload_replica(spec, &config.injections, config.replica)?;
    let env = &execution.spec;
    let phases = env.header.phases;
    let policy = &config.policy;
    let ablation = config.ablation;
    let enabled = ablation.enabled_agents();
    let silent = |agent: AgentId, at: u64| {
        config
            .faults
            .silent_agent
            .is_some_and(|s| s.agent == agent && at > s.after)
    };

    let mut outbox: Vec<(u64, AgentId, Payload)> = Vec::new();

    // MCP: baseline reconstruction at t=0.
    let mut mcp_completeness = 1.0;
    if !ablation.disable_mcp {
        let run = run_mcp(env, &policy.mcp);
        mcp_completeness = run.state.completeness;
        for request in run.probe_requests {
            outbox.push((0, AgentId::Mcp, Payload::ProbeRequest(request)));
        }
        if !run.budget_exceeded {
            let mut fragment = run.fragment;
            if config.faults.malformed_fragment {
                if let Some(c) = fragment.components.first_mut() {
                    c.hashes.clear();
                }
            }
            outbox.push((0, AgentId::Mcp, Payload::BaselineSbomFragment(fragment)));
            if let Some(drift) = run.drift {
                outbox.push((0, AgentId::Mcp, Payload::BaselineDriftAdvisory(drift)));
            }
        }
    }

    // A2A: telemetry stream.
    let total_events = execution.telemetry.len();
    if !ablation.disable_a2a {
        let thresholds = AnomalyThresholds {
            disclosure_tools: policy.disclosure_tools.iter().cloned().collect(),
        };
        let mut state = A2aState::new(&env.raw_scan(), thresholds);
        a2a_classify(
            &mut state,
            A2aInput::AdvisoryDelta {
                at: 0,
                advisories: feeds.advisories(),
            },
        )?;
        for event in &execution.telemetry {
            if silent(AgentId::A2a, event.at) {
                break;
            }
            let mut observed = env
                .catalogue(&event.purl)
                .cloned()
                .ok_or_else(|| WorkloadError::InvalidSpec(format!("{} not in catalogue", event.purl)))?;
            if let Some(digest) = &event.sha256 {
                observed.hashes.insert(SHA256.to_string(), digest.clone());
            }
            let out = a2a_classify(
                &mut state,
                A2aInput::Load {
                    event,
                    observed: &observed,
                },
            )?;
            if let Some(drift) = out.drift {
                outbox.push((event.at, AgentId::A2a, Payload::RuntimeDriftSignal(drift)));
            }
            for packet in out.packets {
                outbox.push((event.at, AgentId::A2a, Payload::VulnContextPacket(packet)));
            }
        }
    }

    // Heartbeats for every enabled agent until it falls silent.
    let interval = policy.supervisor.heartbeat_interval.max(1);
    let mut heartbeats = Vec::new();
    for agent in &enabled {
        let mut t = 0;
        while t <= phases.end {
            if !silent(*agent, t) {
                let completeness = match agent {
                    AgentId::Mcp => mcp_completeness,
                    AgentId::A2a if total_events > 0 => {
                        execution.telemetry.iter().filter(|e| e.at <= t).count() as f64 / total_events as f64
                    }
                    _ => 1.0,
                };
                heartbeats.push((
                    t,
                    *agent,
                    Payload::Heartbeat(Heartbeat {
                        agent: *agent,
                        resource_note: "simulated: no resource metering".into(),
                        capture_completeness: completeness,
                    }),
                ));
            }
            t += interval;
        }
    }
    heartbeats.extend(outbox);
    let mut outbox = heartbeats;
    outbox.sort_by_key(|(at, agent, _)| (*at, rank(*agent)));

    let mut bus = MessageBus::new();
    for (at, agent, payload) in outbox {
        bus.send(agent, at, payload)?;
    }

    // Supervisor: validate the fragment, capture and reconcile snapshots.
    let mut supervisor_log = Vec::new();
    let mut signals = SessionSignals::default();
    let log = bus.messages();
    signals.probe_budget_exceeded = log
        .iter()
        .any(|m| matches!(&m.body, Payload::ProbeRequest(p) if p.round > policy.mcp.max_probe_rounds));
    let baseline_source: Option<Vec<Component>> = if ablation.disable_mcp {
        Some(valid_components(&env.raw_scan()))
    } else {
        log.iter().rev().find_map(|m| match &m.body {
            Payload::BaselineSbomFragment(f) => Some(f.components.clone()),
            _ => None,
        })
    };
    if let Some(components) = &baseline_source {
        let mut report = ValidationReport::default();
        for c in components {
            validate_component(c, &mut report);
        }
        signals
            .malformed_fragments
            .extend(report.violations.iter().map(ToString::to_string));
    }
    let runtime: Vec<(u64, Component)> = log
        .iter()
        .filter_map(|m| match &m.body {
            Payload::RuntimeDriftSignal(s) => Some((m.at, s.component.clone())),
            _ => None,
        })
        .collect();

    let mut snapshots = Vec::new();
    let mut reconciliation = None;
    match &baseline_source {
        Some(base) if signals.malformed_fragments.is_empty() && !signals.probe_budget_exceeded => {
            let mut expected: BTreeSet<Purl> = base.iter().map(|c| c.purl.clone()).collect();
            if !ablation.disable_mcp {
                expected.extend(env.header.historical_baseline.iter().cloned());
            }
            for attempt in 0..=policy.supervisor.max_resync {
                let skewed = match config.faults.clock_skew {
                    Some(ClockSkew::Transient) => attempt == 0,
                    Some(ClockSkew::Persistent) => true,
                    None => false,
                };
                let mut capture = SnapshotCapture::new();
                let baseline_at = if skewed { phases.end + 1 } else { 0 };
                let baseline = capture.capture(SnapshotPhase::Baseline, baseline_at, SnapshotSource::DeclaredScan, base)?;
                let mut visible = base.clone();
                visible.extend(runtime.iter().filter(|(at, _)| *at < phases.post_start).map(|(_, c)| c.clone()));
                let mid = capture.capture(SnapshotPhase::Mid, phases.post_start, SnapshotSource::Telemetry, &visible)?;
                let mut visible = base.clone();
                visible.extend(runtime.iter().map(|(_, c)| c.clone()));
                let final_ = capture.capture(SnapshotPhase::Final, phases.end, SnapshotSource::Telemetry, &visible)?;
                let outcome = crate::snapshot::reconcile_and_merge(&baseline, &mid, &final_, &expected);
                supervisor_log.push(format!(
                    "reconcile attempt {}: {:?}, missing fraction {:.4}",
                    attempt + 1,
                    outcome.status,
                    outcome.missing_fraction
                ));
                let done = outcome.status == ReconciliationStatus::Merged;
                snapshots = vec![baseline, mid, final_];
                reconciliation = Some(outcome);
                if done {
                    break;
                }
            }
        }
        None if !signals.probe_budget_exceeded => {
            signals.malformed_fragments.push("no baseline fragment received from MCP".into());
        }
        _ => {}
    }
    signals.reconciliation = reconciliation.clone();

    let health = health_from_log(bus.messages(), &enabled, phases.end, &policy.supervisor);
    let decision = supervise(&health, &signals);
    supervisor_log.push(match &decision {
        SupervisorDecision::Continue => "decision: continue".to_string(),
        SupervisorDecision::FailClosed(i) => format!("decision: fail-closed ({})", i.reason),
    });

    let mut outcome = SessionOutcome {
        session_id: config.session_id.clone(),
        snapshots,
        reconciliation,
        health,
        decision: decision.clone(),
        supervisor_log,
        document: None,
        matches: vec![],
        vex: vec![],
        messages: vec![],
        execution: execution.clone(),
    };

    if let SupervisorDecision::FailClosed(incident) = decision {
        bus.send(AgentId::Supervisor, phases.end, Payload::IncidentEvent(*incident))?;
        outcome.messages = bus.into_messages();
        return Ok(outcome);
    }

    let merged = outcome
        .reconciliation
        .as_ref()
        .and_then(|r| r.merged_components.clone())
        .unwrap_or_default();
    let mut document = assemble_document(&execution, &merged, config);
    let matches = match_advisories(&document, feeds.advisories());
    document.deployment_extensions.cve_refs = matches.iter().map(AdvisoryMatch::reference).collect();
    let csaf: BTreeSet<String> = matches
        .iter()
        .flat_map(|m| m.advisory.csaf_refs.iter().cloned())
        .collect();
    document.deployment_extensions.csaf_refs = csaf.into_iter().collect();

    if !ablation.disable_agntcy {
        let mut state = AgntcyState::new(policy.policy_graph.clone());
        let decisions = run_agntcy(&mut state, &matches, bus.messages(), &env.header.mitigations, feeds, phases.end)?;
        for d in &decisions {
            bus.send(
                AgentId::Agntcy,
                phases.end,
                Payload::VexAssertionMsg(VexAssertionMsg {
                    assertion: d.assertion.clone(),
                    step: d.step,
                    confidence: d.confidence,
                }),
            )?;
            for c in &d.compliance_advisories {
                bus.send(AgentId::Agntcy, phases.end, Payload::ComplianceAdvisory(c.clone()))?;
            }
        }
        let ptrs: BTreeSet<String> = decisions
            .iter()
            .flat_map(|d| d.assertion.evidence_ptrs.iter().cloned())
            .collect();
        document.deployment_extensions.evidence_ptrs = ptrs.into_iter().collect();
        document.vex_assertions = decisions.iter().map(|d| d.assertion.clone()).collect();
        outcome.vex = decisions;
    }
    let document = document.normalized();
    let report = validate_for_seal(&document);
    if !report.is_empty() {
        return Err(SessionError::InvalidDocument(report));
    }
    outcome.document = Some(document);
    outcome.matches = matches;
    outcome.messages = bus.into_messages();
    Ok(outcome)
}

fn assemble_document(execution: &ExecutionResult, merged: &[Component], config: &SessionConfig) -> AibomDocument {
    let env = &execution.spec;
    let purls: BTreeSet<&Purl> = merged.iter().map(|c| &c.purl).collect();
    let output_hash = sha256_hex(&execution.output);
    let tools: Vec<String> = merged
        .iter()
        .filter(|c| config.policy.disclosure_tools.contains(&c.package_id()))
        .map(|c| format!("{}@{}", c.name, c.version))
        .collect();
    let mut environment = execution.environment.clone();
    environment.load_order.retain(|p| purls.contains(p));
    let run_material = format!("{}|{}", config.session_id, env.header.workload_id);
    AibomDocument {
        metadata: DocMetadata {
            timestamp: config.timestamp.clone(),
            tool_version: config.tool_version.clone(),
            analyst_pseudonym: config.analyst_pseudonym.clone(),
            execution_run_id: format!("run-{}", &sha256_hex(run_material.as_bytes())[..16]),
            session_id: config.session_id.clone(),
            composite_hash: None,
        },
        components: merged.to_vec(),
        dependencies: env
            .header
            .dependencies
            .iter()
            .filter(|e| purls.contains(&e.parent) && purls.contains(&e.child))
            .cloned()
            .collect(),
        environment,
        deployment_extensions: DeploymentExtensions {
            execution_context_id: format!("ctx-{}", config.session_id),
            module_type: env.header.params.module_type.clone(),
            linked_output_id: format!("out-{}", &output_hash[..16]),
            disclosure_tool_version: if tools.is_empty() { "none".into() } else { tools.join(",") },
            output_file_hash: output_hash,
            disclosure_threshold: env.header.params.disclosure_threshold,
            policy_version: config.policy.policy_version.clone(),
            sdc_checks_summary: execution.table.sdc_summary_line(),
            reviewer_pseudonym: config.reviewer_pseudonym.clone(),
            data_handling_flags: env.header.params.data_handling_flags.clone(),
            retention_class: if execution.table.sdc.passed {
                RETENTION_RELEASED.into()
            } else {
                RETENTION_FAILED.into()
            },
            csaf_refs: vec![],
            evidence_ptrs: vec![],
            cve_refs: vec![],
        },
        vex_assertions: vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisory::Feed;
    use crate::agents::bus::Payload;
    use crate::vex::VexStatus;

    const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

    fn spec(name: &str) -> WorkloadSpec {
        let text = std::fs::read_to_string(format!("{FIXTURES}/workloads/{name}.jsonl")).unwrap();
        WorkloadSpec::from_jsonl(&text).unwrap()
    }

    fn feeds() -> FeedSet {
        let feeds: Vec<Feed> = ["osv.json", "nvd.json", "csaf-tre-2025-0007.json"]
            .iter()
            .map(|f| Feed::load(std::path::Path::new(&format!("{FIXTURES}/feeds/{f}"))).unwrap())
            .collect();
        FeedSet::new(&feeds)
    }

    fn config() -> SessionConfig {
        SessionConfig::new("sess-test", "2025-03-01T12:00:00Z")
    }

    fn run(name: &str, config: &SessionConfig) -> SessionOutcome {
        run_session(&spec(name), &feeds(), config).unwrap()
    }

    const WORKLOADS: [&str; 5] = ["anonymisation-sdc", "etl-merge", "logit-glm", "late-bind-heavy", "gpu-late-bind"];

    #[test]
    fn full_runs_cover_ground_truth() {
        for name in WORKLOADS {
            let out = run(name, &config());
            assert!(!out.is_fail_closed(), "{name}: {:?}", out.decision);
            let sbom = out.sbom_purls();
            for p in &out.execution.trace.loaded {
                assert!(sbom.contains(p), "{name}: {p} missing");
            }
        }
    }

    #[test]
    fn session_is_deterministic() {
        let a = run("late-bind-heavy", &config());
        let b = run("late-bind-heavy", &config());
        assert_eq!(a.messages, b.messages);
        assert_eq!(a.document, b.document);
    }

    #[test]
    fn disabling_a2a_drops_exactly_the_late_bound() {
        for name in WORKLOADS {
            let mut cfg = config();
            cfg.ablation.disable_a2a = true;
            let out = run(name, &cfg);
            let sbom = out.sbom_purls();
            let missed: BTreeSet<Purl> = out.execution.trace.loaded.difference(&sbom).cloned().collect();
            assert_eq!(missed, out.execution.late_bound(), "{name}");
        }
    }

    #[test]
    fn a2a_output_does_not_depend_on_mcp() {
        let a2a = |out: &SessionOutcome| -> Vec<(u64, Payload)> {
            out.messages
                .iter()
                .filter(|m| m.sender == AgentId::A2a)
                .map(|m| (m.at, m.body.clone()))
                .collect()
        };
        let full = run("etl-merge", &config());
        let mut cfg = config();
        cfg.ablation.disable_mcp = true;
        let no_mcp = run("etl-merge", &cfg);
        assert_eq!(a2a(&full), a2a(&no_mcp));
    }

    #[test]
    fn agntcy_does_not_influence_the_supervisor() {
        let full = run("late-bind-heavy", &config());
        let mut cfg = config();
        cfg.ablation.disable_agntcy = true;
        let off = run("late-bind-heavy", &cfg);
        assert_eq!(full.supervisor_log, off.supervisor_log);
        assert_eq!(full.matches, off.matches);
        assert!(!full.vex.is_empty());
        assert!(off.document.unwrap().vex_assertions.is_empty());
    }

    #[test]
    fn fixtures_exercise_every_vex_status() {
        let statuses: BTreeSet<String> = WORKLOADS
            .iter()
            .flat_map(|w| run(w, &config()).vex)
            .map(|d| d.assertion.status.to_string())
            .collect();
        for s in [
            VexStatus::NotAffected,
            VexStatus::AffectedMitigated,
            VexStatus::AffectedRequiresReview,
            VexStatus::UnderInvestigation,
        ] {
            assert!(statuses.contains(&s.to_string()), "{s} not produced");
        }
    }

    #[test]
    fn anomalous_late_load_carries_execution_evidence() {
        let out = run("late-bind-heavy", &config());
        let packet = out
            .messages
            .iter()
            .find_map(|m| match &m.body {
                Payload::VulnContextPacket(p) if p.advisory_id == "CVE-FIX-0001" => Some(p.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(packet.purl.to_string(), "pkg:pypi/pyarrow@14.0.0");
        assert_eq!(packet.executed, crate::vex::Tristate::Yes);
        assert_eq!(packet.event_at, 2100);
    }

    fn assert_fail_closed(out: &SessionOutcome, reason: &str) {
        match &out.decision {
            SupervisorDecision::FailClosed(i) => assert!(i.reason.contains(reason), "{}", i.reason),
            other => panic!("expected fail-closed, got {other:?}"),
        }
        assert!(out.document.is_none());
        assert!(matches!(out.messages.last().unwrap().body, Payload::IncidentEvent(_)));
    }

    #[test]
    fn fail_closed_fixtures() {
        assert_fail_closed(&run("missing-components", &config()), "reconciliation");
        assert_fail_closed(&run("probe-unresolvable", &config()), "probe budget");
        assert_fail_closed(&run("tampered-hash", &config()), "reconciliation");
    }

    #[test]
    fn injected_faults_fail_closed() {
        let mut cfg = config();
        cfg.faults.silent_agent = Some(SilentAgent {
            agent: AgentId::A2a,
            after: 2200,
        });
        assert_fail_closed(&run("late-bind-heavy", &cfg), "silent");

        let mut cfg = config();
        cfg.faults.malformed_fragment = true;
        assert_fail_closed(&run("logit-glm", &cfg), "malformed");

        let mut cfg = config();
        cfg.faults.clock_skew = Some(ClockSkew::Persistent);
        assert_fail_closed(&run("logit-glm", &cfg), "reconciliation");
    }

    #[test]
    fn transient_skew_recovers_after_one_resync() {
        let mut cfg = config();
        cfg.faults.clock_skew = Some(ClockSkew::Transient);
        let out = run("logit-glm", &cfg);
        assert!(!out.is_fail_closed());
        assert_eq!(out.supervisor_log.len(), 3);
    }

    #[test]
    fn disclosure_drift_is_material_and_reported() {
        let out = run("anonymisation-sdc", &config());
        assert!(out.messages.iter().any(|m| matches!(&m.body, Payload::BaselineDriftAdvisory(d) if d.absent.len() == 1)));
        let doc = out.document.unwrap();
        assert_eq!(doc.deployment_extensions.disclosure_tool_version, "sdcMicro@5.6.0");
        assert_eq!(doc.deployment_extensions.csaf_refs, vec!["CSAF-TRE-2025-0007".to_string()]);
        assert_eq!(doc.deployment_extensions.retention_class, RETENTION_RELEASED);
    }

    #[test]
    fn uncorroborated_advisory_is_flagged() {
        let out = run("anonymisation-sdc", &config());
        let d = out.vex.iter().find(|d| d.assertion.advisory_id == "CVE-FIX-0004").unwrap();
        assert_eq!(d.assertion.status, VexStatus::AffectedMitigated);
        assert!(d.assertion.justification.contains("uncorroborated: reported only by osv.json"));
    }
}
