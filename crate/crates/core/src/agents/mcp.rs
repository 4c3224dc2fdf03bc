//! Baseline reconstruction agent.
//!
//! Perceives the static scan of the declared manifest and the historical
//! profile, tracks how much of the expected package universe is resolved,
//! probes the environment for ambiguous entries, and hands a validated
//! baseline fragment to the supervisor.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::bus::{BaselineFragment, DriftAdvisory, ProbeRequest};
use crate::model::{validate_component, Component, ValidationReport};
use crate::purl::Purl;
use crate::workload::WorkloadSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McpConfig {
    pub completeness_target: f64,
    /// Pending entries tolerated before a probe is forced.
    pub ambiguity_threshold: usize,
    /// Share of historical purls that may be absent before drift is reported.
    pub drift_threshold: f64,
    pub max_probe_rounds: u32,
}

impl Default for McpConfig {
    fn default() -> Self {
        Self {
            completeness_target: 0.95,
            ambiguity_threshold: 3,
            drift_threshold: 0.05,
            max_probe_rounds: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum McpError {
    #[error("probe budget of {0} round(s) exceeded")]
    ProbeBudgetExceeded(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyFlag {
    Resolved,
    Ambiguous,
    HistoricalOnly,
    Probed,
    Unresolvable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McpState {
    pub completeness: f64,
    pub pending_resolution: Vec<Purl>,
    pub consistency_flags: BTreeMap<Purl, ConsistencyFlag>,
    pub historical_baseline: BTreeSet<Purl>,
    /// Package id to resolved component.
    pub resolved: BTreeMap<String, Component>,
    pub probe_rounds: u32,
    universe: BTreeSet<String>,
}

impl McpState {
    pub fn perceive(raw_scan: &[Component], historical: &[Purl]) -> Self {
        let mut state = Self {
            completeness: 0.0,
            pending_resolution: Vec::new(),
            consistency_flags: BTreeMap::new(),
            historical_baseline: historical.iter().cloned().collect(),
            resolved: BTreeMap::new(),
            probe_rounds: 0,
            universe: BTreeSet::new(),
        };
        for c in raw_scan {
            state.universe.insert(c.package_id());
            let mut report = ValidationReport::default();
            validate_component(c, &mut report);
            if report.is_empty() {
                state.resolved.insert(c.package_id(), c.clone());
                state.consistency_flags.insert(c.purl.clone(), ConsistencyFlag::Resolved);
            } else {
                state.pending_resolution.push(c.purl.clone());
                state.consistency_flags.insert(c.purl.clone(), ConsistencyFlag::Ambiguous);
            }
        }
        for h in historical {
            state.universe.insert(h.package_id());
            if !state.resolved.contains_key(&h.package_id()) && !state.pending_resolution.contains(h) {
                state.pending_resolution.push(h.clone());
                state.consistency_flags.insert(h.clone(), ConsistencyFlag::HistoricalOnly);
            }
        }
        state.pending_resolution.sort();
        state.recompute();
        state
    }

    fn recompute(&mut self) {
        self.completeness = if self.universe.is_empty() {
            1.0
        } else {
            self.resolved.len() as f64 / self.universe.len() as f64
        };
    }

    /// Historical purls with no exact match among resolved components.
    pub fn absent_historical(&self) -> Vec<Purl> {
        let present: BTreeSet<&Purl> = self.resolved.values().map(|c| &c.purl).collect();
        self.historical_baseline
            .iter()
            .filter(|h| !present.contains(h))
            .cloned()
            .collect()
    }

    pub fn fragment(&self) -> BaselineFragment {
        BaselineFragment {
            components: self.resolved.values().cloned().collect(),
            completeness: self.completeness,
            unresolved: self.pending_resolution.clone(),
            probe_rounds: self.probe_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum McpDecision {
    BaselineAccepted(BaselineFragment),
    ProbeRequested(Vec<Purl>),
    BaselineDriftAdvisory(BaselineFragment, DriftAdvisory),
}

pub fn mcp_decide(state: &McpState, config: &McpConfig) -> McpDecision {
    if state.completeness < config.completeness_target || state.pending_resolution.len() > config.ambiguity_threshold {
        return McpDecision::ProbeRequested(state.pending_resolution.clone());
    }
    let absent = state.absent_historical();
    if !state.historical_baseline.is_empty() {
        let fraction = absent.len() as f64 / state.historical_baseline.len() as f64;
        if fraction > config.drift_threshold {
            return McpDecision::BaselineDriftAdvisory(
                state.fragment(),
                DriftAdvisory {
                    absent,
                    absent_fraction: fraction,
                    threshold: config.drift_threshold,
                },
            );
        }
    }
    McpDecision::BaselineAccepted(state.fragment())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub resolved: Vec<Purl>,
    pub unresolvable: Vec<Purl>,
}

/// Controlled import of each target in the simulated environment. A target
/// resolves to the environment's record for the same package.
pub fn probe(
    state: &mut McpState,
    targets: &[Purl],
    env: &WorkloadSpec,
    config: &McpConfig,
) -> Result<ProbeReport, McpError> {
    if state.probe_rounds >= config.max_probe_rounds {
        return Err(McpError::ProbeBudgetExceeded(config.max_probe_rounds));
    }
    state.probe_rounds += 1;
    let mut report = ProbeReport {
        resolved: vec![],
        unresolvable: vec![],
    };
    for target in targets {
        let found = env.catalogue(target).cloned().or_else(|| {
            env.header
                .declared_components
                .iter()
                .chain(&env.header.installed)
                .find(|c| c.package_id() == target.package_id())
                .cloned()
        });
        match found {
            Some(component) => {
                state.consistency_flags.insert(target.clone(), ConsistencyFlag::Probed);
                state.resolved.insert(component.package_id(), component);
                report.resolved.push(target.clone());
            }
            None => {
                state.consistency_flags.insert(target.clone(), ConsistencyFlag::Unresolvable);
                report.unresolvable.push(target.clone());
            }
        }
    }
    state.pending_resolution = report.unresolvable.clone();
    state.recompute();
    Ok(report)
}

/// Everything MCP said during a session, in emission order, plus the
/// fragment it settled on.
#[derive(Debug, Clone, PartialEq)]
pub struct McpRun {
    pub probe_requests: Vec<ProbeRequest>,
    pub fragment: BaselineFragment,
    pub drift: Option<DriftAdvisory>,
    pub budget_exceeded: bool,
    pub state: McpState,
}

pub fn run_mcp(env: &WorkloadSpec, config: &McpConfig) -> McpRun {
    let mut state = McpState::perceive(&env.raw_scan(), &env.header.historical_baseline);
    let mut probe_requests = Vec::new();
    loop {
        match mcp_decide(&state, config) {
            McpDecision::ProbeRequested(targets) => {
                let round = state.probe_rounds + 1;
                let request_targets = if targets.is_empty() { state.absent_historical() } else { targets };
                probe_requests.push(ProbeRequest {
                    round,
                    targets: request_targets.clone(),
                });
                if probe(&mut state, &request_targets, env, config).is_err() {
                    return McpRun {
                        probe_requests,
                        fragment: state.fragment(),
                        drift: None,
                        budget_exceeded: true,
                        state,
                    };
                }
            }
            McpDecision::BaselineAccepted(fragment) => {
                return McpRun {
                    probe_requests,
                    fragment,
                    drift: None,
                    budget_exceeded: false,
                    state,
                }
            }
            McpDecision::BaselineDriftAdvisory(fragment, drift) => {
                return McpRun {
                    probe_requests,
                    fragment,
                    drift: Some(drift),
                    budget_exceeded: false,
                    state,
                }
            }
        }
    }
}
