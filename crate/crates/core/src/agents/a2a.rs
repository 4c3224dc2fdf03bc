//! Runtime drift and vulnerability-context agent.
//!
//! Consumes the telemetry stream in time order, maintains a drift graph
//! against the declared environment it observed at start-up, and tags loads
//! of components that carry advisories.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisory::Advisory;
use crate::agents::bus::{DriftChange, DriftClass, DriftSignal, VulnContext};
use crate::model::{validate_component, Component, ValidationReport};
use crate::purl::Purl;
use crate::snapshot::{diff_components, SnapshotDiff};
use crate::version::{change_level, ChangeLevel};
use crate::workload::LoadEvent;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum A2aError {
    #[error("telemetry at {at} arrived after {last}")]
    OutOfOrderTelemetry { at: u64, last: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyThresholds {
    /// Package ids of disclosure-control tools; any change to them is material.
    pub disclosure_tools: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2aState {
    pub drift_graph: SnapshotDiff,
    pub cve_relevance_buffer: Vec<(Purl, String)>,
    pub anomaly_thresholds: AnomalyThresholds,
    initial: Vec<Component>,
    current: BTreeMap<String, Component>,
    advisories: Vec<Advisory>,
    last_at: Option<u64>,
}

/// What A2A perceives: a load observed by the import hooks, or a batch of
/// advisories arriving from the feeds.
#[derive(Debug, Clone, PartialEq)]
pub enum A2aInput<'a> {
    Load { event: &'a LoadEvent, observed: &'a Component },
    AdvisoryDelta { at: u64, advisories: &'a [Advisory] },
}

/// `drift` is `None` when the event was suppressed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct A2aOutcome {
    pub drift: Option<DriftSignal>,
    pub packets: Vec<VulnContext>,
}

impl A2aState {
    /// Start from the declared manifest entries the scan could validate.
    pub fn new(declared: &[Component], thresholds: AnomalyThresholds) -> Self {
        let initial: Vec<Component> = declared
            .iter()
            .filter(|c| {
                let mut r = ValidationReport::default();
                validate_component(c, &mut r);
                r.is_empty()
            })
            .cloned()
            .collect();
        Self {
            drift_graph: SnapshotDiff::default(),
            cve_relevance_buffer: Vec::new(),
            anomaly_thresholds: thresholds,
            current: initial.iter().map(|c| (c.package_id(), c.clone())).collect(),
            initial,
            advisories: Vec::new(),
            last_at: None,
        }
    }

    /// Components A2A currently believes are present.
    pub fn observed(&self) -> Vec<Component> {
        self.current.values().cloned().collect()
    }

    fn refresh_graph(&mut self) {
        let current: Vec<Component> = self.current.values().cloned().collect();
        self.drift_graph = diff_components(&self.initial, &current);
    }
}

fn advance(state: &mut A2aState, at: u64) -> Result<(), A2aError> {
    if let Some(last) = state.last_at {
        if at < last {
            return Err(A2aError::OutOfOrderTelemetry { at, last });
        }
    }
    state.last_at = Some(at);
    Ok(())
}

pub fn a2a_classify(state: &mut A2aState, input: A2aInput<'_>) -> Result<A2aOutcome, A2aError> {
    match input {
        A2aInput::AdvisoryDelta { at, advisories } => {
            advance(state, at)?;
            for advisory in advisories {
                if state.advisories.iter().any(|a| a.id == advisory.id) {
                    continue;
                }
                for c in state.current.values() {
                    if advisory.affects(c) {
                        state.cve_relevance_buffer.push((c.purl.clone(), advisory.id.clone()));
                    }
                }
                state.advisories.push(advisory.clone());
            }
            Ok(A2aOutcome::default())
        }
        A2aInput::Load { event, observed } => {
            advance(state, event.at)?;
            let drift = classify_load(state, event, observed);
            state.current.insert(observed.package_id(), observed.clone());
            state.refresh_graph();

            let mut packets = Vec::new();
            for advisory in &state.advisories {
                if advisory.affects(observed) {
                    let entry = (observed.purl.clone(), advisory.id.clone());
                    if !state.cve_relevance_buffer.contains(&entry) {
                        state.cve_relevance_buffer.push(entry);
                    }
                    packets.push(VulnContext {
                        purl: observed.purl.clone(),
                        advisory_id: advisory.id.clone(),
                        executed: event.executed,
                        reachable: event.reachable,
                        event_at: event.at,
                    });
                }
            }
            Ok(A2aOutcome { drift, packets })
        }
    }
}

fn classify_load(state: &A2aState, event: &LoadEvent, observed: &Component) -> Option<DriftSignal> {
    let package = observed.package_id();
    let is_tool = state.anomaly_thresholds.disclosure_tools.contains(&package);
    let mut reasons = Vec::new();
    let change = match state.current.get(&package) {
        None => {
            reasons.push(format!("{} loaded at runtime without being declared", observed.purl));
            DriftChange::Added
        }
        Some(known) if known.version != observed.version => {
            let level = change_level(&known.version, &observed.version);
            reasons.push(format!(
                "{package} changed {} -> {} ({level:?} level)",
                known.version, observed.version
            ));
            if matches!(level, ChangeLevel::Major | ChangeLevel::Minor) {
                reasons.push("change crosses a major/minor boundary".into());
            }
            DriftChange::VersionChanged {
                from: known.version.clone(),
            }
        }
        Some(known) if known.sha256() != observed.sha256() => {
            reasons.push(format!("{} loaded with an unexpected digest", observed.purl));
            DriftChange::HashMismatch {
                expected: known.sha256().unwrap_or_default().to_string(),
            }
        }
        Some(_) => return None,
    };
    if is_tool {
        reasons.push(format!("{package} is a disclosure-control tool"));
    }
    if event.anomalous {
        reasons.push("load flagged anomalous by telemetry".into());
    }
    let material = is_tool
        || event.anomalous
        || matches!(change, DriftChange::HashMismatch { .. })
        || matches!(
            &change,
            DriftChange::VersionChanged { from }
                if matches!(change_level(from, &observed.version), ChangeLevel::Major | ChangeLevel::Minor)
        );
    Some(DriftSignal {
        classification: if material { DriftClass::Material } else { DriftClass::Benign },
        change,
        component: observed.clone(),
        anomalous: event.anomalous,
        reasons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisory::{AdvisorySource, AffectedRange};
    use crate::model::fixtures::component;
    use crate::vex::Tristate;
    use crate::workload::Phase;

    fn event(at: u64, purl: &str, anomalous: bool) -> LoadEvent {
        LoadEvent {
            at,
            purl: purl.parse().unwrap(),
            phase: Phase::Mid,
            anomalous,
            executed: Tristate::Yes,
            reachable: Tristate::Yes,
            sha256: None,
        }
    }

    fn state() -> A2aState {
        A2aState::new(
            &[
                component("pkg:pypi/matplotlib@3.7.1", "mpl"),
                component("pkg:cran/sdcMicro@5.5.0", "sdc"),
            ],
            AnomalyThresholds {
                disclosure_tools: BTreeSet::from(["pkg:cran/sdcMicro".to_string()]),
            },
        )
    }

    fn load(s: &mut A2aState, e: &LoadEvent, seed: &str) -> A2aOutcome {
        let c = component(&e.purl.to_string(), seed);
        a2a_classify(s, A2aInput::Load { event: e, observed: &c }).unwrap()
    }

    #[test]
    fn patch_bump_outside_tools_is_benign() {
        let mut s = state();
        let out = load(&mut s, &event(10, "pkg:pypi/matplotlib@3.7.2", false), "mpl2");
        assert_eq!(out.drift.unwrap().classification, DriftClass::Benign);
        assert_eq!(s.drift_graph.version_changed.len(), 1);
    }

    #[test]
    fn any_tool_change_is_material() {
        let mut s = state();
        let out = load(&mut s, &event(10, "pkg:cran/sdcMicro@5.5.1", false), "sdc2");
        assert_eq!(out.drift.unwrap().classification, DriftClass::Material);
    }

    #[test]
    fn minor_bump_and_anomalous_loads_are_material() {
        let mut s = state();
        let out = load(&mut s, &event(10, "pkg:pypi/matplotlib@3.8.0", false), "m");
        assert_eq!(out.drift.unwrap().classification, DriftClass::Material);
        let out = load(&mut s, &event(20, "pkg:pypi/fetcher@0.1.0", true), "f");
        let drift = out.drift.unwrap();
        assert_eq!(drift.classification, DriftClass::Material);
        assert_eq!(drift.change, DriftChange::Added);
        let out = load(&mut s, &event(30, "pkg:pypi/tqdm@4.0.0", false), "t");
        assert_eq!(out.drift.unwrap().classification, DriftClass::Benign);
    }

    #[test]
    fn reload_of_known_component_is_suppressed() {
        let mut s = state();
        let out = load(&mut s, &event(10, "pkg:pypi/matplotlib@3.7.1", false), "mpl");
        assert!(out.drift.is_none());
        let out = load(&mut s, &event(11, "pkg:pypi/matplotlib@3.7.1", false), "other");
        assert!(matches!(out.drift.unwrap().change, DriftChange::HashMismatch { .. }));
    }

    #[test]
    fn advisory_match_emits_packet() {
        let mut s = state();
        let advisory = Advisory {
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
        };
        a2a_classify(&mut s, A2aInput::AdvisoryDelta { at: 0, advisories: &[advisory] }).unwrap();
        let out = load(&mut s, &event(20, "pkg:pypi/fetcher@0.1.5", true), "f");
        assert_eq!(out.packets.len(), 1);
        assert_eq!(out.packets[0].executed, Tristate::Yes);
        assert_eq!(out.packets[0].advisory_id, "CVE-FIX-0001");
        assert_eq!(s.cve_relevance_buffer.len(), 1);
    }

    #[test]
    fn out_of_order_telemetry_is_rejected() {
        let mut s = state();
        load(&mut s, &event(10, "pkg:pypi/a@1", false), "a");
        let e = event(5, "pkg:pypi/b@1", false);
        let c = component("pkg:pypi/b@1", "b");
        assert_eq!(
            a2a_classify(&mut s, A2aInput::Load { event: &e, observed: &c }),
            Err(A2aError::OutOfOrderTelemetry { at: 5, last: 10 })
        );
    }
}
