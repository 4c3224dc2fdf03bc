//! Schema-constrained message envelope and the per-session ordered bus.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Component;
use crate::purl::Purl;
use crate::snapshot::SnapshotDiff;
use crate::vex::{ComplianceAdvisory, DecisionStep, Tristate, VexAssertion};

/// Bumped whenever a payload shape changes; logs with another version are rejected.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AgentId {
    Mcp,
    A2a,
    Agntcy,
    Supervisor,
}

impl AgentId {
    pub const AGENTS: [AgentId; 3] = [AgentId::Mcp, AgentId::A2a, AgentId::Agntcy];
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentId::Mcp => "MCP",
            AgentId::A2a => "A2A",
            AgentId::Agntcy => "AGNTCY",
            AgentId::Supervisor => "SUPERVISOR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineFragment {
    pub components: Vec<Component>,
    pub completeness: f64,
    pub unresolved: Vec<Purl>,
    pub probe_rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftAdvisory {
    /// Historical purls with no exact counterpart in the baseline.
    pub absent: Vec<Purl>,
    pub absent_fraction: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRequest {
    pub round: u32,
    pub targets: Vec<Purl>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftClass {
    Benign,
    Material,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum DriftChange {
    Added,
    VersionChanged { from: String },
    HashMismatch { expected: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSignal {
    pub classification: DriftClass,
    pub change: DriftChange,
    pub component: Component,
    pub anomalous: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VulnContext {
    pub purl: Purl,
    pub advisory_id: String,
    pub executed: Tristate,
    pub reachable: Tristate,
    pub event_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VexAssertionMsg {
    pub assertion: VexAssertion,
    pub step: DecisionStep,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heartbeat {
    pub agent: AgentId,
    pub resource_note: String,
    pub capture_completeness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentCategory {
    FailClosed,
    Adjudication,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjudicationAction {
    Approve,
    Escalate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adjudication {
    pub action: AdjudicationAction,
    pub reviewer_pseudonym: String,
    pub note: String,
    pub recorded_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Incident {
    pub category: IncidentCategory,
    pub reason: String,
    pub details: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff: Option<SnapshotDiff>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjudication: Option<Adjudication>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Payload {
    BaselineSbomFragment(BaselineFragment),
    BaselineDriftAdvisory(DriftAdvisory),
    ProbeRequest(ProbeRequest),
    RuntimeDriftSignal(DriftSignal),
    VulnContextPacket(VulnContext),
    VexAssertionMsg(VexAssertionMsg),
    ComplianceAdvisory(ComplianceAdvisory),
    Heartbeat(Heartbeat),
    IncidentEvent(Incident),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::BaselineSbomFragment(_) => "BaselineSbomFragment",
            Payload::BaselineDriftAdvisory(_) => "BaselineDriftAdvisory",
            Payload::ProbeRequest(_) => "ProbeRequest",
            Payload::RuntimeDriftSignal(_) => "RuntimeDriftSignal",
            Payload::VulnContextPacket(_) => "VulnContextPacket",
            Payload::VexAssertionMsg(_) => "VexAssertionMsg",
            Payload::ComplianceAdvisory(_) => "ComplianceAdvisory",
            Payload::Heartbeat(_) => "Heartbeat",
            Payload::IncidentEvent(_) => "IncidentEvent",
        }
    }

    fn allowed_from(&self, sender: AgentId) -> bool {
        use AgentId::*;
        match self {
            Payload::Heartbeat(h) => h.agent == sender,
            Payload::BaselineSbomFragment(_) | Payload::BaselineDriftAdvisory(_) | Payload::ProbeRequest(_) => {
                sender == Mcp
            }
            Payload::RuntimeDriftSignal(_) | Payload::VulnContextPacket(_) => sender == A2a,
            Payload::VexAssertionMsg(_) | Payload::ComplianceAdvisory(_) => sender == Agntcy,
            Payload::IncidentEvent(_) => sender == Supervisor,
        }
    }

    /// Field-level schema checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), String> {
        let ratio = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} {v} outside [0, 1]"))
            }
        };
        match self {
            Payload::BaselineSbomFragment(f) => ratio("completeness", f.completeness),
            Payload::BaselineDriftAdvisory(d) => {
                ratio("absent_fraction", d.absent_fraction)?;
                if d.absent.is_empty() {
                    return Err("drift advisory lists no absent purls".into());
                }
                Ok(())
            }
            Payload::ProbeRequest(p) if p.round == 0 || p.targets.is_empty() => {
                Err("probe request needs a round >= 1 and at least one target".into())
            }
            Payload::RuntimeDriftSignal(s) if s.reasons.is_empty() => Err("drift signal without reasons".into()),
            Payload::VulnContextPacket(p) if p.advisory_id.trim().is_empty() => Err("packet without advisory id".into()),
            Payload::VexAssertionMsg(v) => {
                ratio("confidence", v.confidence)?;
                if v.assertion.justification.trim().is_empty() {
                    return Err("assertion without justification".into());
                }
                Ok(())
            }
            Payload::ComplianceAdvisory(c) if c.requirement_id.trim().is_empty() => {
                Err("compliance advisory without requirement id".into())
            }
            Payload::Heartbeat(h) => ratio("capture_completeness", h.capture_completeness),
            Payload::IncidentEvent(i) => {
                if i.reason.trim().is_empty() {
                    return Err("incident without reason".into());
                }
                if (i.category == IncidentCategory::Adjudication) != i.adjudication.is_some() {
                    return Err("adjudication record and category disagree".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub schema_version: u32,
    pub seq: u64,
    pub sender: AgentId,
    /// Virtual time offset in ms.
    pub at: u64,
    #[serde(flatten)]
    pub body: Payload,
}

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("{sender} may not send {kind}")]
    Unauthorized { sender: AgentId, kind: &'static str },
    #[error("invalid {kind} payload: {reason}")]
    InvalidPayload { kind: &'static str, reason: String },
    #[error("message at {at} precedes the last delivered message at {last}")]
    TimeRegression { at: u64, last: u64 },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: seq {seq} does not follow {prev}")]
    SequenceGap { line: usize, seq: u64, prev: u64 },
}

fn check(message: &AgentMessage) -> Result<(), BusError> {
    let kind = message.body.kind();
    if !message.body.allowed_from(message.sender) {
        return Err(BusError::Unauthorized {
            sender: message.sender,
            kind,
        });
    }
    message
        .body
        .validate()
        .map_err(|reason| BusError::InvalidPayload { kind, reason })
}

/// Totally ordered delivery: seq increases by one per message and virtual
/// time never runs backwards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageBus {
    messages: Vec<AgentMessage>,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, sender: AgentId, at: u64, body: Payload) -> Result<u64, BusError> {
        if let Some(last) = self.messages.last() {
            if at < last.at {
                return Err(BusError::TimeRegression { at, last: last.at });
            }
        }
        let message = AgentMessage {
            schema_version: SCHEMA_VERSION,
            seq: self.messages.len() as u64 + 1,
            sender,
            at,
            body,
        };
        check(&message)?;
        let seq = message.seq;
        self.messages.push(message);
        Ok(seq)
    }

    pub fn messages(&self) -> &[AgentMessage] {
        &self.messages
    }

    pub fn into_messages(self) -> Vec<AgentMessage> {
        self.messages
    }
}

pub fn to_jsonl(messages: &[AgentMessage]) -> String {
    messages
        .iter()
        .map(|m| serde_json::to_string(m).expect("message serializes") + "\n")
        .collect()
}

/// Parse and validate a stored message log. Unknown kinds, schema versions,
/// unauthorized senders or seq gaps reject the whole log.
pub fn parse_log(text: &str) -> Result<Vec<AgentMessage>, BusError> {
    let mut out: Vec<AgentMessage> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let line_no = i + 1;
        let message: AgentMessage = serde_json::from_str(line).map_err(|e| BusError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if message.schema_version != SCHEMA_VERSION {
            return Err(BusError::Malformed {
                line: line_no,
                reason: format!("schema version {} unsupported", message.schema_version),
            });
        }
        let prev = out.last().map_or(0, |m| m.seq);
        if message.seq != prev + 1 {
            return Err(BusError::SequenceGap {
                line: line_no,
                seq: message.seq,
                prev,
            });
        }
        check(&message)?;
        out.push(message);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heartbeat(agent: AgentId) -> Payload {
        Payload::Heartbeat(Heartbeat {
            agent,
            resource_note: "static".into(),
            capture_completeness: 1.0,
        })
    }

    #[test]
    fn seq_is_strictly_increasing() {
        let mut bus = MessageBus::new();
        assert_eq!(bus.send(AgentId::Mcp, 0, heartbeat(AgentId::Mcp)).unwrap(), 1);
        assert_eq!(bus.send(AgentId::A2a, 0, heartbeat(AgentId::A2a)).unwrap(), 2);
        assert!(matches!(
            bus.send(AgentId::A2a, 0, heartbeat(AgentId::Mcp)),
            Err(BusError::Unauthorized { .. })
        ));
        assert!(matches!(
            bus.send(AgentId::Mcp, 0, Payload::ProbeRequest(ProbeRequest { round: 1, targets: vec![] })),
            Err(BusError::InvalidPayload { .. })
        ));
        bus.send(AgentId::Mcp, 10, heartbeat(AgentId::Mcp)).unwrap();
        assert!(matches!(
            bus.send(AgentId::Mcp, 5, heartbeat(AgentId::Mcp)),
            Err(BusError::TimeRegression { .. })
        ));
    }

    #[test]
    fn log_roundtrip() {
        let mut bus = MessageBus::new();
        bus.send(AgentId::Mcp, 0, heartbeat(AgentId::Mcp)).unwrap();
        bus.send(
            AgentId::Supervisor,
            3,
            Payload::IncidentEvent(Incident {
                category: IncidentCategory::FailClosed,
                reason: "silent termination".into(),
                details: vec![],
                diff: None,
                adjudication: None,
            }),
        )
        .unwrap();
        let text = to_jsonl(bus.messages());
        assert!(text.contains("\"kind\":\"Heartbeat\""));
        assert_eq!(parse_log(&text).unwrap(), bus.messages());
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let line = r#"{"schema_version":1,"seq":1,"sender":"MCP","at":0,"kind":"Gossip","payload":{}}"#;
        assert!(matches!(parse_log(line), Err(BusError::Malformed { .. })));
        let wrong_version = r#"{"schema_version":9,"seq":1,"sender":"MCP","at":0,"kind":"Heartbeat","payload":{"agent":"MCP","resource_note":"","capture_completeness":1.0}}"#;
        assert!(parse_log(wrong_version).is_err());
    }

    #[test]
    fn seq_gaps_are_rejected() {
        let mut bus = MessageBus::new();
        bus.send(AgentId::Mcp, 0, heartbeat(AgentId::Mcp)).unwrap();
        bus.send(AgentId::Mcp, 1, heartbeat(AgentId::Mcp)).unwrap();
        let mut messages = bus.into_messages();
        messages.remove(0);
        assert!(matches!(parse_log(&to_jsonl(&messages)), Err(BusError::SequenceGap { .. })));
    }
}
