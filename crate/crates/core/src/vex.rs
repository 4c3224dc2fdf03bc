//! Contextual VEX determination.
//!
//! The decision procedure walks four steps: whether the vulnerable path was
//! executed (and is consistent with reachability), whether the execution
//! environment structurally prevents exploitation, whether other mitigations
//! are active, and finally the mapping onto one of four statuses.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisory::AdvisoryMatch;
use crate::purl::Purl;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VexError {
    #[error("evidence is about {evidence} but the match is for {matched}")]
    EvidenceMismatch { matched: String, evidence: String },
    #[error("evidence for {0} asserts a yes/no fact without any evidence pointer")]
    UnanchoredEvidence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tristate {
    Yes,
    No,
    Unknown,
}

impl Tristate {
    pub const ALL: [Tristate; 3] = [Tristate::Yes, Tristate::No, Tristate::Unknown];

    pub fn from_bool(value: bool) -> Self {
        if value {
            Tristate::Yes
        } else {
            Tristate::No
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VexStatus {
    NotAffected,
    AffectedMitigated,
    AffectedRequiresReview,
    UnderInvestigation,
}

impl fmt::Display for VexStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VexStatus::NotAffected => "Not Affected",
            VexStatus::AffectedMitigated => "Affected: Mitigated",
            VexStatus::AffectedRequiresReview => "Affected: Requires Review",
            VexStatus::UnderInvestigation => "Under Investigation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MitigationKind {
    SandboxRestriction,
    DisabledFlag,
    PatchedVariant,
}

/// Runtime facts about one component, each anchored to evidence pointers
/// (message log sequence numbers, telemetry offsets or policy entries).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub purl: Purl,
    pub executed: Tristate,
    pub reachable: Tristate,
    pub mitigation_active: Tristate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mitigation_kind: Option<MitigationKind>,
    pub evidence_ptrs: Vec<String>,
}

impl EvidenceBundle {
    pub fn new(
        purl: Purl,
        executed: Tristate,
        reachable: Tristate,
        mitigation_active: Tristate,
        mitigation_kind: Option<MitigationKind>,
        evidence_ptrs: Vec<String>,
    ) -> Result<Self, VexError> {
        let bundle = Self {
            purl,
            executed,
            reachable,
            mitigation_active,
            mitigation_kind,
            evidence_ptrs,
        };
        if !bundle.is_anchored() {
            return Err(VexError::UnanchoredEvidence(bundle.purl.to_string()));
        }
        Ok(bundle)
    }

    pub fn is_anchored(&self) -> bool {
        let asserts_fact = [self.executed, self.reachable, self.mitigation_active]
            .iter()
            .any(|t| *t != Tristate::Unknown);
        !asserts_fact || !self.evidence_ptrs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VexAssertion {
    pub advisory_id: String,
    pub purl: Purl,
    pub status: VexStatus,
    pub justification: String,
    pub evidence_ptrs: Vec<String>,
    #[serde(default)]
    pub csaf_refs: Vec<String>,
    /// Virtual time offset (ms) at which the assertion was issued.
    pub issued_at: u64,
}

/// Which step of the procedure settled the status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionStep {
    Execution = 1,
    StructuralPrevention = 2,
    Mitigation = 3,
    Mapping = 4,
}

/// Pure status mapping over the three evidence facts.
pub fn classify(
    executed: Tristate,
    reachable: Tristate,
    mitigation: Tristate,
    mitigation_kind: Option<MitigationKind>,
) -> (VexStatus, DecisionStep, &'static str) {
    use Tristate::*;
    // Step 1: execution and its consistency with reachability.
    match (executed, reachable) {
        (Yes, No) => {
            return (
                VexStatus::UnderInvestigation,
                DecisionStep::Execution,
                "telemetry conflicts: vulnerable path executed yet reported unreachable",
            )
        }
        (No, No) => {
            return (
                VexStatus::NotAffected,
                DecisionStep::Execution,
                "vulnerable code path neither executed nor reachable",
            )
        }
        (Unknown, _) | (_, Unknown) => {
            return (
                VexStatus::UnderInvestigation,
                DecisionStep::Execution,
                "execution or reachability telemetry inconclusive",
            )
        }
        _ => {}
    }
    // Steps 2-3: structural prevention and other mitigations.
    match mitigation {
        Yes => {
            let (step, reason) = match mitigation_kind {
                Some(MitigationKind::SandboxRestriction) => (
                    DecisionStep::StructuralPrevention,
                    "vulnerable path present but exploitation prevented by execution environment controls",
                ),
                _ => (
                    DecisionStep::Mitigation,
                    "vulnerable path present but mitigated (patched variant or disabled feature)",
                ),
            };
            (VexStatus::AffectedMitigated, step, reason)
        }
        Unknown => (
            VexStatus::UnderInvestigation,
            DecisionStep::Mitigation,
            "mitigation status could not be established",
        ),
        // Step 4: exposed and unmitigated.
        No if executed == Yes => (
            VexStatus::AffectedRequiresReview,
            DecisionStep::Mapping,
            "vulnerable path executed with no active mitigation",
        ),
        No => (
            VexStatus::AffectedRequiresReview,
            DecisionStep::Mapping,
            "vulnerable path reachable with no active mitigation",
        ),
    }
}

/// A deployment rule the VEX outcome is compared against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyPredicate {
    pub description: String,
    pub forbidden_statuses: Vec<VexStatus>,
    /// Severities the rule applies to; empty means every severity.
    #[serde(default)]
    pub severities: Vec<String>,
}

/// Requirement id to predicate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyGraph {
    pub requirements: BTreeMap<String, PolicyPredicate>,
}

impl PolicyGraph {
    /// Default rule: unmitigated exposure to high or critical advisories is
    /// reported for reviewer attention.
    pub fn tre_default() -> Self {
        Self {
            requirements: BTreeMap::from([(
                "TRE-VULN-01".to_string(),
                PolicyPredicate {
                    description: "no unmitigated high or critical vulnerability on the execution path".into(),
                    forbidden_statuses: vec![VexStatus::AffectedRequiresReview],
                    severities: vec!["high".into(), "critical".into()],
                },
            )]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceAdvisory {
    pub requirement_id: String,
    pub advisory_id: String,
    pub purl: Purl,
    pub status: VexStatus,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VexDecision {
    pub assertion: VexAssertion,
    pub step: DecisionStep,
    /// 1.0 for a settled status, 0.5 while under investigation.
    pub confidence: f64,
    pub compliance_advisories: Vec<ComplianceAdvisory>,
}

pub fn decide_vex(
    matched: &AdvisoryMatch,
    evidence: &EvidenceBundle,
    policy: &PolicyGraph,
    issued_at: u64,
) -> Result<VexDecision, VexError> {
    if evidence.purl != matched.component.purl {
        return Err(VexError::EvidenceMismatch {
            matched: matched.component.purl.to_string(),
            evidence: evidence.purl.to_string(),
        });
    }
    if !evidence.is_anchored() {
        return Err(VexError::UnanchoredEvidence(evidence.purl.to_string()));
    }
    let (status, step, reason) = classify(
        evidence.executed,
        evidence.reachable,
        evidence.mitigation_active,
        evidence.mitigation_kind,
    );
    let advisory = &matched.advisory;
    let compliance_advisories = policy
        .requirements
        .iter()
        .filter(|(_, p)| p.forbidden_statuses.contains(&status))
        .filter(|(_, p)| {
            p.severities.is_empty() || p.severities.iter().any(|s| s.eq_ignore_ascii_case(&advisory.severity))
        })
        .map(|(id, p)| ComplianceAdvisory {
            requirement_id: id.clone(),
            advisory_id: advisory.id.clone(),
            purl: evidence.purl.clone(),
            status,
            note: format!("{status} violates: {}", p.description),
        })
        .collect();
    let confidence = if status == VexStatus::UnderInvestigation { 0.5 } else { 1.0 };
    Ok(VexDecision {
        assertion: VexAssertion {
            advisory_id: advisory.id.clone(),
            purl: evidence.purl.clone(),
            status,
            justification: format!("step {}: {reason}", step as u8),
            evidence_ptrs: evidence.evidence_ptrs.clone(),
            csaf_refs: advisory.csaf_refs.clone(),
            issued_at,
        },
        step,
        confidence,
        compliance_advisories,
    })
}
