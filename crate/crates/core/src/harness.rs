//! Session-level operations: capture and seal, replay from the store,
//! ablation sweeps and stored-session reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisory::FeedSet;
use crate::agents::bus::Incident;
use crate::agents::{run_session, Ablation, SessionConfig, SessionError, SessionOutcome, SupervisorDecision};
use crate::compliance::{default_ruleset, evaluate, ComplianceError, ComplianceResult, EvaluationContext};
use crate::metrics::{
    capture_metrics, compare_components, compare_vex, decomposed_score, parity, Agreement, CaptureMetrics,
    DecomposedScore, MetricsError, ParityConfig, ParityResult, ScoreWeights,
};
use crate::model::{AibomDocument, Component};
use crate::registry::PackageRegistry;
use crate::snapshot::{diff_components, SnapshotDiff};
use crate::store::{SessionRecord, Store, StoreError, CONFIG_FILE, OUTPUT_FILE, SCRIPT_FILE, SESSION_FILE, TRACE_FILE};
use crate::workload::{DriftInjection, GroundTruthTrace, InjectionKind, WorkloadConfig, WorkloadScript, WorkloadSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Compliance(#[from] ComplianceError),
    #[error("cannot reconstruct session {session_id}: {reason}")]
    ReconstructionFailure { session_id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaptureStatus {
    Sealed,
    FailClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureReport {
    pub session_id: String,
    pub workload_id: String,
    pub status: CaptureStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<SessionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CaptureMetrics>,
    pub advisory_matches: usize,
    pub vex_assertions: usize,
    pub supervisor_log: Vec<String>,
}

fn outcome_metrics(outcome: &SessionOutcome) -> Result<Option<CaptureMetrics>, MetricsError> {
    if outcome.is_fail_closed() {
        return Ok(None);
    }
    capture_metrics(&outcome.sbom_purls(), &outcome.execution.trace).map(Some)
}

/// Run a session and seal it, or record its incident when it fails closed.
pub fn capture(store: &Store, spec: &WorkloadSpec, feeds: &FeedSet, config: &SessionConfig) -> Result<CaptureReport, HarnessError> {
    let outcome = run_session(spec, feeds, config)?;
    let metrics = outcome_metrics(&outcome)?;
    let (status, reason, record) = match &outcome.decision {
        SupervisorDecision::FailClosed(incident) => {
            store.record_incident(&outcome, config)?;
            (CaptureStatus::FailClosed, Some(incident.reason.clone()), None)
        }
        SupervisorDecision::Continue => (CaptureStatus::Sealed, None, Some(store.seal_outcome(&outcome, config)?)),
    };
    Ok(CaptureReport {
        session_id: outcome.session_id.clone(),
        workload_id: spec.header.workload_id.clone(),
        status,
        reason,
        record,
        metrics,
        advisory_matches: outcome.matches.len(),
        vex_assertions: outcome.vex.len(),
        supervisor_log: outcome.supervisor_log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: String,
    pub ablation: Ablation,
    pub fail_closed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CaptureMetrics>,
    pub advisory_matches: usize,
    pub vex_assertions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub workload_id: String,
    pub gt_size: usize,
    pub late_bound: usize,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn run(&self, variant: &str) -> Option<&AblationRun> {
        self.runs.iter().find(|r| r.variant == variant)
    }

    pub fn fnr(&self, variant: &str) -> Option<f64> {
        self.run(variant)?.metrics.as_ref().map(|m| m.fnr)
    }
}

pub const ABLATION_VARIANTS: [&str; 4] = ["full", "no-mcp", "no-a2a", "no-agntcy"];

pub fn ablation_for(variant: &str) -> Option<Ablation> {
    let none = Ablation::default();
    Some(match variant {
        "full" => none,
        "no-mcp" => Ablation {
            disable_mcp: true,
            ..none
        },
        "no-a2a" => Ablation {
            disable_a2a: true,
            ..none
        },
        "no-agntcy" => Ablation {
            disable_agntcy: true,
            ..none
        },
        _ => return None,
    })
}

/// Run the full pipeline and each single-agent ablation. Nothing is stored.
pub fn ablate(spec: &WorkloadSpec, feeds: &FeedSet, config: &SessionConfig) -> Result<AblationReport, HarnessError> {
    let mut runs = Vec::new();
    let mut sizes = (0, 0);
    for variant in ABLATION_VARIANTS {
        let mut cfg = config.clone();
        cfg.session_id = format!("{}-{variant}", config.session_id);
        cfg.ablation = ablation_for(variant).expect("known variant");
        let outcome = run_session(spec, feeds, &cfg)?;
        sizes = (outcome.execution.trace.loaded.len(), outcome.execution.late_bound().len());
        runs.push(AblationRun {
            variant: variant.into(),
            ablation: cfg.ablation,
            fail_closed: outcome.is_fail_closed(),
            metrics: outcome_metrics(&outcome)?,
            advisory_matches: outcome.matches.len(),
            vex_assertions: outcome.vex.len(),
        });
    }
    Ok(AblationReport {
        workload_id: spec.header.workload_id.clone(),
        gt_size: sizes.0,
        late_bound: sizes.1,
        runs,
    })
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// Registry profile directory; the store's own registry when absent.
    pub registry: Option<PathBuf>,
    pub runs: u32,
    pub parity: ParityConfig,
    pub weights: ScoreWeights,
    /// Extra drift applied to every replay run on top of the sealed session.
    pub injections: Vec<DriftInjection>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            registry: None,
            runs: 10,
            parity: ParityConfig::default(),
            weights: ScoreWeights::default(),
            injections: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRun {
    pub index: u32,
    pub parity: ParityResult,
    pub sbom_diff: SnapshotDiff,
    pub env_state: Agreement,
    pub vex: Agreement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_closed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub workload_id: String,
    pub registry: PathBuf,
    pub runs: Vec<ReplayRun>,
    pub score: DecomposedScore,
}

impl ReplayReport {
    pub fn ep_pct(&self) -> Option<f64> {
        self.score.ep.pct
    }

    pub fn sp_pct(&self) -> Option<f64> {
        self.score.sp.pct
    }
}

fn reconstruction(session_id: &str) -> impl Fn(String) -> HarnessError + '_ {
    move |reason| HarnessError::ReconstructionFailure {
        session_id: session_id.to_string(),
        reason,
    }
}

/// Rebuild the sealed environment from the stored script, config and locked
/// SBOM through the registry, rerun it `runs` times and score each replay
/// against the sealed output. The store is only read.
pub fn replay(store: &Store, session_id: &str, feeds: &FeedSet, options: &ReplayOptions) -> Result<ReplayReport, HarnessError> {
    let fail = reconstruction(session_id);
    let stored = store.load(session_id)?;
    let problems = store.integrity_problems(&stored);
    if !problems.is_empty() {
        return Err(fail(format!("sealed session does not verify: {}", problems.join("; "))));
    }
    let script: WorkloadScript = stored.parse(SCRIPT_FILE).map_err(&fail)?;
    let config: WorkloadConfig = stored.parse(CONFIG_FILE).map_err(&fail)?;
    let session: SessionConfig = stored.parse(SESSION_FILE).map_err(&fail)?;
    let doc = stored.document().map_err(&fail)?;
    let baseline = stored.part(OUTPUT_FILE).map_err(&fail)?;

    let registry_dir = options.registry.clone().unwrap_or_else(|| store.registry_dir());
    let registry = PackageRegistry::load(&registry_dir).map_err(|e| fail(e.to_string()))?;
    let environment = registry
        .install_locked(&locked_set(&doc, &config))
        .map_err(|e| fail(e.to_string()))?;
    let spec = WorkloadSpec::reconstruct(&script, &config, environment).map_err(|e| fail(e.to_string()))?;

    let mut runs = Vec::new();
    for index in 1..=options.runs {
        let mut cfg = session.clone();
        cfg.session_id = format!("{session_id}-replay-{index}");
        cfg.replica = u64::from(index);
        // Version and parameter injections are already in the stored spec.
        cfg.injections.retain(|i| i.kind == InjectionKind::SilentDeprecation);
        cfg.injections.extend(options.injections.iter().cloned());
        let outcome = run_session(&spec, feeds, &cfg)?;
        let fail_closed = match &outcome.decision {
            SupervisorDecision::FailClosed(i) => Some(i.reason.clone()),
            SupervisorDecision::Continue => None,
        };
        let sdc_ok = fail_closed.is_none() && outcome.execution.table.sdc.passed;
        let parity = parity(baseline, &outcome.execution.output, &options.parity, sdc_ok)?;
        let (components, assertions) = outcome
            .document
            .as_ref()
            .map(|d| (d.components.as_slice(), d.vex_assertions.as_slice()))
            .unwrap_or_default();
        runs.push(ReplayRun {
            index,
            parity,
            sbom_diff: diff_components(&doc.components, components),
            env_state: compare_components(&doc.components, components),
            vex: compare_vex(&doc.vex_assertions, assertions),
            fail_closed,
        });
    }
    let parities: Vec<ParityResult> = runs.iter().map(|r| r.parity.clone()).collect();
    let env: Vec<Agreement> = runs.iter().map(|r| r.env_state).collect();
    let vex: Vec<Agreement> = runs.iter().map(|r| r.vex).collect();
    Ok(ReplayReport {
        session_id: session_id.into(),
        workload_id: script.workload_id,
        registry: registry_dir,
        score: decomposed_score(&parities, &env, &vex, options.weights)?,
        runs,
    })
}

/// The locked SBOM plus declared manifest entries it no longer lists
/// (declared versions superseded at runtime).
fn locked_set(doc: &AibomDocument, config: &WorkloadConfig) -> Vec<Component> {
    let listed: BTreeSet<_> = doc.components.iter().map(|c| &c.purl).collect();
    doc.components
        .iter()
        .chain(config.declared_manifest.iter().filter(|c| !listed.contains(&c.purl)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub status: CaptureStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite_hash: Option<String>,
    pub integrity_problems: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<CaptureMetrics>,
    pub vex_status_counts: BTreeMap<String, usize>,
    pub compliance: Vec<ComplianceResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incident: Option<Incident>,
}

/// Summarise a stored session: integrity, capture against the stored ground
/// truth, VEX statuses and the default ruleset.
pub fn report(store: &Store, session_id: &str, ctx: &EvaluationContext) -> Result<SessionReport, HarnessError> {
    let compliance = evaluate(&default_ruleset(), store, session_id, ctx)?;
    let stored = match store.load(session_id) {
        Ok(s) => s,
        Err(StoreError::SessionNotFound(_)) => {
            return Ok(SessionReport {
                session_id: session_id.into(),
                status: CaptureStatus::FailClosed,
                workload_id: store
                    .incidents()?
                    .into_iter()
                    .find(|r| r.session_id == session_id)
                    .map(|r| r.workload_id),
                composite_hash: None,
                integrity_problems: vec![],
                capture: None,
                vex_status_counts: BTreeMap::new(),
                compliance,
                incident: store.incident(session_id)?,
            });
        }
        Err(e) => return Err(e.into()),
    };
    let doc = stored.document().ok();
    let capture = match (&doc, stored.parse::<GroundTruthTrace>(TRACE_FILE)) {
        (Some(d), Ok(gt)) => Some(capture_metrics(&d.components.iter().map(|c| c.purl.clone()).collect(), &gt)?),
        _ => None,
    };
    let mut vex_status_counts = BTreeMap::new();
    for a in doc.iter().flat_map(|d| &d.vex_assertions) {
        *vex_status_counts.entry(a.status.to_string()).or_insert(0) += 1;
    }
    Ok(SessionReport {
        session_id: session_id.into(),
        status: CaptureStatus::Sealed,
        workload_id: stored.record().ok().map(|r| r.workload_id),
        composite_hash: Some(stored.row.composite_hash.clone()),
        integrity_problems: store.integrity_problems(&stored),
        capture,
        vex_status_counts,
        compliance,
        incident: None,
    })
}
