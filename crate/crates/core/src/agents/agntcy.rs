//! Contextual VEX agent: turns advisory matches plus runtime evidence from
//! the message log into exploitability assertions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::advisory::{AdvisoryMatch, FeedSet};
use crate::agents::bus::{AgentMessage, Payload, VulnContext};
use crate::vex::{decide_vex, EvidenceBundle, PolicyGraph, Tristate, VexAssertion, VexDecision, VexError};
use crate::workload::Mitigation;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgntcyState {
    pub policy_graph: PolicyGraph,
    /// (advisory id, purl) to the assertion issued for it.
    pub vex_cache: BTreeMap<(String, String), VexAssertion>,
    pub confidence: BTreeMap<(String, String), f64>,
}

impl AgntcyState {
    pub fn new(policy_graph: PolicyGraph) -> Self {
        Self {
            policy_graph,
            ..Self::default()
        }
    }
}

/// Assemble evidence for one match from the packets in the log and the
/// environment's mitigation register.
pub fn build_evidence(matched: &AdvisoryMatch, log: &[AgentMessage], mitigations: &[Mitigation]) -> EvidenceBundle {
    let purl = &matched.component.purl;
    let latest: Option<(u64, &VulnContext)> = log
        .iter()
        .filter_map(|m| match &m.body {
            Payload::VulnContextPacket(p) if &p.purl == purl && p.advisory_id == matched.advisory.id => Some((m.seq, p)),
            _ => None,
        })
        .next_back();
    let mut evidence_ptrs = vec![format!("advisory:{}", matched.advisory.id)];
    let (executed, reachable) = match latest {
        Some((seq, packet)) => {
            evidence_ptrs.push(format!("msg:{seq}"));
            (packet.executed, packet.reachable)
        }
        None => (Tristate::Unknown, Tristate::Unknown),
    };
    let mitigation = mitigations.iter().find(|m| m.package == purl.package_id());
    let (mitigation_active, mitigation_kind) = match mitigation {
        Some(m) => {
            evidence_ptrs.push(format!("policy:{}", m.id));
            (Tristate::Yes, Some(m.kind))
        }
        None => {
            evidence_ptrs.push("policy:mitigation-register".into());
            (Tristate::No, None)
        }
    };
    EvidenceBundle {
        purl: purl.clone(),
        executed,
        reachable,
        mitigation_active,
        mitigation_kind,
        evidence_ptrs,
    }
}

/// Decide every match once. Assertions already cached are not reissued.
pub fn run_agntcy(
    state: &mut AgntcyState,
    matches: &[AdvisoryMatch],
    log: &[AgentMessage],
    mitigations: &[Mitigation],
    feeds: &FeedSet,
    issued_at: u64,
) -> Result<Vec<VexDecision>, VexError> {
    let mut decisions = Vec::new();
    for matched in matches {
        let key = (matched.advisory.id.clone(), matched.component.purl.to_string());
        if state.vex_cache.contains_key(&key) {
            continue;
        }
        let evidence = build_evidence(matched, log, mitigations);
        let mut decision = decide_vex(matched, &evidence, &state.policy_graph, issued_at)?;
        if let Some(feed) = feeds.uncorroborated_source(&matched.advisory.id) {
            decision
                .assertion
                .justification
                .push_str(&format!(" [uncorroborated: reported only by {feed}]"));
        }
        state.vex_cache.insert(key.clone(), decision.assertion.clone());
        state.confidence.insert(key, decision.confidence);
        decisions.push(decision);
    }
    Ok(decisions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisory::{Advisory, AdvisorySource, AffectedRange, Feed};
    use crate::agents::bus::{AgentId, MessageBus};
    use crate::model::fixtures::component;
    use crate::vex::{MitigationKind, VexStatus};

    fn matched() -> AdvisoryMatch {
        AdvisoryMatch {
            component: component("pkg:pypi/fetcher@0.1.5", "f"),
            advisory: Advisory {
                id: "CVE-FIX-0001".into(),
                affected: vec![AffectedRange {
                    package: "pkg:pypi/fetcher".into(),
                    introduced: "0.1.0".into(),
                    fixed: "0.2.0".into(),
                }],
                severity: "high".into(),
                source: AdvisorySource::OsvMirror,
                csaf_refs: vec![],
                remediation_note: None,
            },
        }
    }

    fn log_with_packet(executed: Tristate) -> Vec<AgentMessage> {
        let mut bus = MessageBus::new();
        bus.send(
            AgentId::A2a,
            20,
            Payload::VulnContextPacket(VulnContext {
                purl: "pkg:pypi/fetcher@0.1.5".parse().unwrap(),
                advisory_id: "CVE-FIX-0001".into(),
                executed,
                reachable: Tristate::Yes,
                event_at: 20,
            }),
        )
        .unwrap();
        bus.into_messages()
    }

    #[test]
    fn evidence_points_into_log() {
        let ev = build_evidence(&matched(), &log_with_packet(Tristate::Yes), &[]);
        assert_eq!(ev.executed, Tristate::Yes);
        assert_eq!(ev.mitigation_active, Tristate::No);
        assert!(ev.evidence_ptrs.contains(&"msg:1".to_string()));

        let ev = build_evidence(&matched(), &[], &[]);
        assert_eq!((ev.executed, ev.reachable), (Tristate::Unknown, Tristate::Unknown));
    }

    #[test]
    fn mitigation_register_feeds_step_two() {
        let mitigations = vec![Mitigation {
            id: "sandbox-net".into(),
            package: "pkg:pypi/fetcher".into(),
            kind: MitigationKind::SandboxRestriction,
            note: "no egress".into(),
        }];
        let mut state = AgntcyState::new(PolicyGraph::default());
        let feeds = FeedSet::new(&[]);
        let d = run_agntcy(&mut state, &[matched()], &log_with_packet(Tristate::Yes), &mitigations, &feeds, 9).unwrap();
        assert_eq!(d[0].assertion.status, VexStatus::AffectedMitigated);
        assert!(d[0].assertion.evidence_ptrs.contains(&"policy:sandbox-net".to_string()));
    }

    #[test]
    fn cache_prevents_reissue_and_flags_uncorroborated() {
        let feeds = FeedSet::new(&[
            Feed {
                name: "osv.json".into(),
                advisories: vec![matched().advisory],
            },
            Feed {
                name: "nvd.json".into(),
                advisories: vec![],
            },
        ]);
        let mut state = AgntcyState::new(PolicyGraph::tre_default());
        let log = log_with_packet(Tristate::Yes);
        let first = run_agntcy(&mut state, &[matched()], &log, &[], &feeds, 1).unwrap();
        assert_eq!(first[0].assertion.status, VexStatus::AffectedRequiresReview);
        assert!(first[0].assertion.justification.contains("uncorroborated: reported only by osv.json"));
        assert_eq!(first[0].compliance_advisories.len(), 1);
        let second = run_agntcy(&mut state, &[matched()], &log, &[], &feeds, 2).unwrap();
        assert!(second.is_empty());
        assert_eq!(state.vex_cache.len(), 1);
    }
}
