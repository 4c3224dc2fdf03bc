//! Health checks and the fail-closed decision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::bus::{AgentId, AgentMessage, Incident, IncidentCategory, Payload};
use crate::snapshot::{ReconciliationOutcome, ReconciliationStatus};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisorConfig {
    pub heartbeat_interval: u64,
    /// Longest tolerated silence before an agent is declared failed.
    pub heartbeat_gap_limit: u64,
    pub max_resync: u32,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            heartbeat_interval: 1000,
            heartbeat_gap_limit: 5000,
            max_resync: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HealthStatus {
    Healthy,
    Anomalous,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthRecord {
    pub agent: AgentId,
    pub last_heartbeat: Option<u64>,
    pub resource_note: String,
    pub capture_completeness: f64,
    pub status: HealthStatus,
}

/// Health of each enabled agent as of virtual time `now`, derived from its
/// heartbeats in the log.
pub fn health_from_log(
    log: &[AgentMessage],
    enabled: &[AgentId],
    now: u64,
    config: &SupervisorConfig,
) -> Vec<HealthRecord> {
    let mut latest: BTreeMap<AgentId, (u64, String, f64)> = BTreeMap::new();
    for m in log {
        if let Payload::Heartbeat(h) = &m.body {
            latest.insert(h.agent, (m.at, h.resource_note.clone(), h.capture_completeness));
        }
    }
    enabled
        .iter()
        .map(|agent| {
            let (last, note, completeness) = match latest.get(agent) {
                Some((at, note, c)) => (Some(*at), note.clone(), *c),
                None => (None, "no heartbeat received".to_string(), 0.0),
            };
            let gap = now.saturating_sub(last.unwrap_or(0));
            let status = if last.is_none() || gap > config.heartbeat_gap_limit {
                HealthStatus::Failed
            } else if gap > 2 * config.heartbeat_interval {
                HealthStatus::Anomalous
            } else {
                HealthStatus::Healthy
            };
            HealthRecord {
                agent: *agent,
                last_heartbeat: last,
                resource_note: note,
                capture_completeness: completeness,
                status,
            }
        })
        .collect()
}

/// Integrity observations the supervisor gathered besides heartbeats.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionSignals {
    pub malformed_fragments: Vec<String>,
    pub probe_budget_exceeded: bool,
    /// Outcome after the permitted resync attempts.
    pub reconciliation: Option<ReconciliationOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SupervisorDecision {
    Continue,
    FailClosed(Box<Incident>),
}

impl SupervisorDecision {
    pub fn is_fail_closed(&self) -> bool {
        matches!(self, SupervisorDecision::FailClosed(_))
    }
}

pub fn supervise(health: &[HealthRecord], signals: &SessionSignals) -> SupervisorDecision {
    let mut reasons = Vec::new();
    let mut details = Vec::new();
    for h in health.iter().filter(|h| h.status == HealthStatus::Failed) {
        reasons.push("silent termination");
        details.push(format!(
            "{} last heartbeat at {}",
            h.agent,
            h.last_heartbeat.map_or("never".to_string(), |t| t.to_string())
        ));
    }
    if !signals.malformed_fragments.is_empty() {
        reasons.push("malformed SBOM fragment");
        details.extend(signals.malformed_fragments.iter().cloned());
    }
    if signals.probe_budget_exceeded {
        reasons.push("probe budget exceeded");
        details.push("baseline could not be completed within the probe budget".into());
    }
    let mut diff = None;
    if let Some(outcome) = &signals.reconciliation {
        match outcome.status {
            ReconciliationStatus::Merged => {}
            ReconciliationStatus::IntegrityViolation => reasons.push("reconciliation integrity violation"),
            ReconciliationStatus::ResyncRequired => reasons.push("reconciliation resync failed"),
        }
        if outcome.status != ReconciliationStatus::Merged {
            details.extend(outcome.diagnostics.iter().cloned());
            diff = Some(outcome.diff.clone());
        }
    }
    if reasons.is_empty() {
        return SupervisorDecision::Continue;
    }
    reasons.dedup();
    SupervisorDecision::FailClosed(Box::new(Incident {
        category: IncidentCategory::FailClosed,
        reason: reasons.join("; "),
        details,
        diff,
        adjudication: None,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::bus::{Heartbeat, MessageBus};
    use crate::snapshot::SnapshotDiff;

    fn beats(agent_stops: &[(AgentId, u64)], end: u64) -> Vec<AgentMessage> {
        let mut bus = MessageBus::new();
        for t in (0..=end).step_by(1000) {
            for (agent, stop) in agent_stops {
                if t <= *stop {
                    bus.send(
                        *agent,
                        t,
                        Payload::Heartbeat(Heartbeat {
                            agent: *agent,
                            resource_note: "static".into(),
                            capture_completeness: 1.0,
                        }),
                    )
                    .unwrap();
                }
            }
        }
        bus.into_messages()
    }

    #[test]
    fn healthy_session_continues() {
        let cfg = SupervisorConfig::default();
        let log = beats(&[(AgentId::Mcp, u64::MAX), (AgentId::A2a, u64::MAX)], 10_000);
        let health = health_from_log(&log, &[AgentId::Mcp, AgentId::A2a], 10_000, &cfg);
        assert!(health.iter().all(|h| h.status == HealthStatus::Healthy));
        assert_eq!(supervise(&health, &SessionSignals::default()), SupervisorDecision::Continue);
    }

    #[test]
    fn silent_agent_fails_closed() {
        let cfg = SupervisorConfig::default();
        let log = beats(&[(AgentId::Mcp, u64::MAX), (AgentId::A2a, 4000)], 10_000);
        let health = health_from_log(&log, &[AgentId::Mcp, AgentId::A2a], 10_000, &cfg);
        assert_eq!(health[1].status, HealthStatus::Failed);
        match supervise(&health, &SessionSignals::default()) {
            SupervisorDecision::FailClosed(i) => {
                assert!(i.reason.contains("silent termination"));
                assert!(i.details[0].starts_with("A2A"));
            }
            other => panic!("{other:?}"),
        }
        // exactly at the limit is tolerated
        let log = beats(&[(AgentId::A2a, 5000)], 10_000);
        let health = health_from_log(&log, &[AgentId::A2a], 10_000, &cfg);
        assert_eq!(health[0].status, HealthStatus::Anomalous);
    }

    #[test]
    fn integrity_violation_attaches_diff() {
        let outcome = ReconciliationOutcome {
            status: ReconciliationStatus::IntegrityViolation,
            merged_components: None,
            missing_fraction: 0.03,
            missing: vec!["pkg:pypi/x".into()],
            hash_mismatched: vec![],
            diff: SnapshotDiff::default(),
            diagnostics: vec!["3 of 100 expected components missing".into()],
        };
        let signals = SessionSignals {
            reconciliation: Some(outcome),
            ..SessionSignals::default()
        };
        match supervise(&[], &signals) {
            SupervisorDecision::FailClosed(i) => {
                assert!(i.diff.is_some());
                assert_eq!(i.details.len(), 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_fragment_and_probe_budget_fail_closed() {
        let signals = SessionSignals {
            malformed_fragments: vec!["pkg:pypi/a@1 [hashes]: SHA-256 hash missing".into()],
            probe_budget_exceeded: true,
            reconciliation: None,
        };
        assert!(supervise(&[], &signals).is_fail_closed());
    }
}
