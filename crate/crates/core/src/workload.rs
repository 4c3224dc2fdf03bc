//! Trace-driven workload simulation.
//!
//! A workload is a declarative trace: the declared environment, components the
//! static scan could not resolve, a historical baseline, and a time-ordered
//! stream of runtime load events. Running it yields the ground-truth load set
//! and a deterministic tabular output subject to disclosure control.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::canonical::{is_sha256_hex, sha256_hex, to_canonical_bytes};
use crate::model::{validate_component, Component, DependencyEdge, EnvironmentSnapshot, ValidationReport, SHA256};
use crate::purl::Purl;
use crate::vex::{MitigationKind, Tristate};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
}

fn invalid(msg: impl Into<String>) -> WorkloadError {
    WorkloadError::InvalidSpec(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Mid,
    Post,
}

/// Virtual-time partition of a run: `pre` is `[0, mid_start)`, `mid` is
/// `[mid_start, post_start)`, `post` is `[post_start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseBounds {
    pub mid_start: u64,
    pub post_start: u64,
    pub end: u64,
}

impl PhaseBounds {
    pub fn phase_of(&self, at: u64) -> Option<Phase> {
        if at < self.mid_start {
            Some(Phase::Pre)
        } else if at < self.post_start {
            Some(Phase::Mid)
        } else if at <= self.end {
            Some(Phase::Post)
        } else {
            None
        }
    }
}

fn unknown() -> Tristate {
    Tristate::Unknown
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEvent {
    pub at: u64,
    pub purl: Purl,
    pub phase: Phase,
    /// Unexpected native extension or dynamic fetch.
    #[serde(default)]
    pub anomalous: bool,
    /// Whether the component's vulnerable entry points ran, per telemetry.
    #[serde(default = "unknown")]
    pub executed: Tristate,
    #[serde(default = "unknown")]
    pub reachable: Tristate,
    /// Digest observed at load time when it differs from the catalogue.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    Deterministic,
    Float32Noisy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputProgram {
    pub seed: u64,
    pub kind: OutputKind,
    /// Package ids whose loaded versions feed the computation.
    #[serde(default)]
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadParams {
    pub module_type: String,
    pub disclosure_threshold: f64,
    pub min_threshold: f64,
    #[serde(default)]
    pub data_handling_flags: Vec<String>,
}

/// A runtime control that blunts exploitation for one package.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mitigation {
    pub id: String,
    pub package: String,
    pub kind: MitigationKind,
    pub note: String,
}

/// First line of a workload trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadHeader {
    pub workload_id: String,
    pub environment: EnvironmentSnapshot,
    pub declared_components: Vec<Component>,
    /// Present in the environment but not declared.
    #[serde(default)]
    pub installed: Vec<Component>,
    /// Declared entries the static scan cannot resolve (no digest or licence).
    #[serde(default)]
    pub scan_gaps: Vec<Purl>,
    #[serde(default)]
    pub historical_baseline: Vec<Purl>,
    #[serde(default)]
    pub dependencies: Vec<DependencyEdge>,
    pub phases: PhaseBounds,
    pub output_program: OutputProgram,
    pub params: WorkloadParams,
    #[serde(default)]
    pub mitigations: Vec<Mitigation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    #[serde(flatten)]
    pub header: WorkloadHeader,
    pub runtime_events: Vec<LoadEvent>,
}

/// The analysis program as stored with a sealed session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadScript {
    pub workload_id: String,
    pub phases: PhaseBounds,
    pub output_program: OutputProgram,
    pub runtime_events: Vec<LoadEvent>,
}

/// Run parameters and environment context stored with a sealed session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    /// The declared manifest, pinned with digests.
    pub declared_manifest: Vec<Component>,
    pub params: WorkloadParams,
    pub environment: EnvironmentSnapshot,
    pub historical_baseline: Vec<Purl>,
    pub dependencies: Vec<DependencyEdge>,
    pub mitigations: Vec<Mitigation>,
}

impl WorkloadSpec {
    /// Parse a JSON Lines trace: header object, then one [`LoadEvent`] per line.
    pub fn from_jsonl(text: &str) -> Result<Self, WorkloadError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| invalid("empty trace file"))?;
        let header: WorkloadHeader =
            serde_json::from_str(first).map_err(|e| invalid(format!("header: {e}")))?;
        let runtime_events = lines
            .map(|(n, line)| {
                serde_json::from_str(line).map_err(|e| invalid(format!("line {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<LoadEvent>, _>>()?;
        let spec = Self {
            header,
            runtime_events,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for event in &self.runtime_events {
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let h = &self.header;
        if h.workload_id.trim().is_empty() {
            return Err(invalid("empty workload_id"));
        }
        let p = h.phases;
        if !(p.mid_start <= p.post_start && p.post_start <= p.end) {
            return Err(invalid("phase bounds out of order"));
        }
        let mut report = ValidationReport::default();
        let mut purls = BTreeSet::new();
        let mut packages = BTreeSet::new();
        for c in h.declared_components.iter().chain(&h.installed) {
            validate_component(c, &mut report);
            if !purls.insert(c.purl.clone()) {
                return Err(invalid(format!("duplicate catalogue entry {}", c.purl)));
            }
        }
        for c in &h.declared_components {
            if !packages.insert(c.package_id()) {
                return Err(invalid(format!("package {} declared twice", c.package_id())));
            }
        }
        if !report.is_empty() {
            return Err(invalid(format!("catalogue: {report}")));
        }
        for gap in &h.scan_gaps {
            if !h.declared_components.iter().any(|c| &c.purl == gap) {
                return Err(invalid(format!("scan gap {gap} is not declared")));
            }
        }
        let mut last = None;
        for event in &self.runtime_events {
            if last.is_some_and(|t| event.at <= t) {
                return Err(invalid(format!("event times not strictly increasing at {}", event.at)));
            }
            last = Some(event.at);
            if p.phase_of(event.at) != Some(event.phase) {
                return Err(invalid(format!(
                    "event at {} tagged {:?} outside its phase window",
                    event.at, event.phase
                )));
            }
            if !purls.contains(&event.purl) {
                return Err(invalid(format!("event purl {} not in the environment catalogue", event.purl)));
            }
            if let Some(h) = &event.sha256 {
                if !is_sha256_hex(h) {
                    return Err(invalid(format!("event digest for {} is not hex", event.purl)));
                }
            }
        }
        for input in &h.output_program.inputs {
            if self.resolve_package(input).is_none() {
                return Err(invalid(format!("output input {input} is not present")));
            }
        }
        if !(h.params.disclosure_threshold.is_finite() && h.params.min_threshold.is_finite()) {
            return Err(invalid("thresholds must be finite"));
        }
        Ok(())
    }

    /// Catalogue record for an exact purl.
    pub fn catalogue(&self, purl: &Purl) -> Option<&Component> {
        self.header
            .declared_components
            .iter()
            .chain(&self.header.installed)
            .find(|c| &c.purl == purl)
    }

    /// Version of a package the program actually uses: the latest runtime load,
    /// else the declared or installed record.
    pub fn resolve_package(&self, package: &str) -> Option<Purl> {
        self.runtime_events
            .iter()
            .rev()
            .find(|e| e.purl.package_id() == package)
            .map(|e| e.purl.clone())
            .or_else(|| {
                self.header
                    .declared_components
                    .iter()
                    .chain(&self.header.installed)
                    .find(|c| c.package_id() == package)
                    .map(|c| c.purl.clone())
            })
    }

    /// The declared manifest as the static scanner sees it: gap entries lose
    /// their digests and licences.
    pub fn raw_scan(&self) -> Vec<Component> {
        self.header
            .declared_components
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if self.header.scan_gaps.contains(&c.purl) {
                    c.hashes.clear();
                    c.licenses.clear();
                }
                c
            })
            .collect()
    }

    pub fn script(&self) -> WorkloadScript {
        WorkloadScript {
            workload_id: self.header.workload_id.clone(),
            phases: self.header.phases,
            output_program: self.header.output_program.clone(),
            runtime_events: self.runtime_events.clone(),
        }
    }

    pub fn config(&self) -> WorkloadConfig {
        WorkloadConfig {
            declared_manifest: self.header.declared_components.clone(),
            params: self.header.params.clone(),
            environment: self.header.environment.clone(),
            historical_baseline: self.header.historical_baseline.clone(),
            dependencies: self.header.dependencies.clone(),
            mitigations: self.header.mitigations.clone(),
        }
    }

    pub fn script_bytes(&self) -> Vec<u8> {
        to_canonical_bytes(&self.script()).expect("script serializes")
    }

    pub fn config_bytes(&self) -> Vec<u8> {
        to_canonical_bytes(&self.config()).expect("config serializes")
    }

    /// Rebuild a spec from stored script and config plus the components
    /// installed for it. Installed components on the declared manifest become
    /// the declared set; the rest are the late-binding catalogue.
    pub fn reconstruct(
        script: &WorkloadScript,
        config: &WorkloadConfig,
        environment: Vec<Component>,
    ) -> Result<Self, WorkloadError> {
        let mut available: BTreeMap<Purl, Component> = environment.into_iter().map(|c| (c.purl.clone(), c)).collect();
        let declared = config
            .declared_manifest
            .iter()
            .map(|c| {
                available
                    .remove(&c.purl)
                    .ok_or_else(|| invalid(format!("declared component {} was not installed", c.purl)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let installed = available.into_values().collect();
        let spec = Self {
            header: WorkloadHeader {
                workload_id: script.workload_id.clone(),
                environment: config.environment.clone(),
                declared_components: declared,
                installed,
                scan_gaps: vec![],
                historical_baseline: config.historical_baseline.clone(),
                dependencies: config.dependencies.clone(),
                phases: script.phases,
                output_program: script.output_program.clone(),
                params: config.params.clone(),
                mitigations: config.mitigations.clone(),
            },
            runtime_events: script.runtime_events.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    VersionBump,
    DefaultParamChange,
    SilentDeprecation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftInjection {
    pub kind: InjectionKind,
    pub target_purl: Purl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement_version: Option<String>,
}

impl DriftInjection {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.kind == InjectionKind::VersionBump && self.replacement_version.is_none() {
            return Err(invalid("version_bump requires replacement_version"));
        }
        Ok(())
    }
}

/// Parse an injection file: a JSON array of injections.
pub fn parse_injections(text: &str) -> Result<Vec<DriftInjection>, WorkloadError> {
    let injections: Vec<DriftInjection> =
        serde_json::from_str(text).map_err(|e| invalid(format!("injections: {e}")))?;
    for i in &injections {
        i.validate()?;
    }
    Ok(injections)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruthTrace {
    pub loaded: BTreeSet<Purl>,
    pub load_times: BTreeMap<Purl, u64>,
}

impl GroundTruthTrace {
    pub fn loaded_packages(&self) -> BTreeSet<String> {
        self.loaded.iter().map(Purl::package_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdcSummary {
    pub threshold: f64,
    pub min_threshold: f64,
    pub passed: bool,
}

/// The workload's released artefact: a table of cell values with low-count
/// rows suppressed, plus summary scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputTable {
    pub workload_id: String,
    pub kind: OutputKind,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub suppression_ratio: f64,
    pub scalars: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub sdc: SdcSummary,
}

impl OutputTable {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        to_canonical_bytes(self).expect("output serializes")
    }

    pub fn sdc_summary_line(&self) -> String {
        let suppressed = self.rows.iter().flatten().filter(|c| c.is_none()).count();
        let total = self.rows.iter().map(Vec::len).sum::<usize>();
        format!(
            "{}: threshold {} (minimum {}), {suppressed} of {total} cells suppressed",
            if self.sdc.passed { "passed" } else { "failed" },
            self.sdc.threshold,
            self.sdc.min_threshold
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    /// The workload after injections. The input is never modified.
    pub spec: WorkloadSpec,
    pub trace: GroundTruthTrace,
    pub telemetry: Vec<LoadEvent>,
    pub output: Vec<u8>,
    pub table: OutputTable,
    pub environment: EnvironmentSnapshot,
    pub warnings: Vec<String>,
}

impl ExecutionResult {
    /// Ground-truth purls that were not in the declared manifest.
    pub fn late_bound(&self) -> BTreeSet<Purl> {
        let declared: BTreeSet<&Purl> = self.spec.header.declared_components.iter().map(|c| &c.purl).collect();
        self.trace
            .loaded
            .iter()
            .filter(|p| !declared.contains(p))
            .cloned()
            .collect()
    }
}

const ROWS: usize = 8;
const COLUMNS: [&str; 4] = ["count", "mean", "sd", "rate"];
const FLOAT_JITTER: f64 = 5e-8;
const DEPRECATION_SCALE: f64 = 1.0 + 1e-3;

pub fn run_workload(spec: &WorkloadSpec, injections: &[DriftInjection]) -> Result<ExecutionResult, WorkloadError> {
    run_workload_replica(spec, injections, 0)
}

/// Run with an explicit replica index. Deterministic workloads ignore it;
/// float workloads add bounded per-replica noise for replicas above zero.
pub fn run_workload_replica(
    spec: &WorkloadSpec,
    injections: &[DriftInjection],
    replica: u64,
) -> Result<ExecutionResult, WorkloadError> {
    spec.validate()?;
    let mut effective = spec.clone();
    let mut deprecations = Vec::new();
    for injection in injections {
        injection.validate()?;
        apply_injection(&mut effective, injection, &mut deprecations)?;
    }
    effective.validate()?;

    let trace = ground_truth_of(&effective);
    let table = generate_output(&effective, &deprecations, replica);
    let mut environment = effective.header.environment.clone();
    environment.load_order = load_order(&trace);
    Ok(ExecutionResult {
        telemetry: effective.runtime_events.clone(),
        output: table.to_bytes(),
        warnings: table.warnings.clone(),
        table,
        trace,
        environment,
        spec: effective,
    })
}

fn apply_injection(
    spec: &mut WorkloadSpec,
    injection: &DriftInjection,
    deprecations: &mut Vec<String>,
) -> Result<(), WorkloadError> {
    let target = &injection.target_purl;
    let present = spec.catalogue(target).is_some() || spec.runtime_events.iter().any(|e| &e.purl == target);
    if !present {
        return Err(invalid(format!("injection target {target} is not in the workload")));
    }
    match injection.kind {
        InjectionKind::VersionBump => {
            let version = injection.replacement_version.as_deref().expect("validated");
            let bumped = target
                .with_version(version)
                .map_err(|e| invalid(e.to_string()))?;
            let h = &mut spec.header;
            for c in h.declared_components.iter_mut().chain(h.installed.iter_mut()) {
                if &c.purl == target {
                    let old_hash = c.sha256().unwrap_or_default().to_string();
                    c.version = version.to_string();
                    c.purl = bumped.clone();
                    c.hashes
                        .insert(SHA256.to_string(), sha256_hex(format!("{bumped}|{old_hash}").as_bytes()));
                }
            }
            for gap in h.scan_gaps.iter_mut() {
                if gap == target {
                    *gap = bumped.clone();
                }
            }
            for edge in h.dependencies.iter_mut() {
                if &edge.parent == target {
                    edge.parent = bumped.clone();
                }
                if &edge.child == target {
                    edge.child = bumped.clone();
                }
            }
            for event in spec.runtime_events.iter_mut() {
                if &event.purl == target {
                    event.purl = bumped.clone();
                }
            }
        }
        InjectionKind::DefaultParamChange => {
            spec.header.params.disclosure_threshold /= 2.0;
        }
        InjectionKind::SilentDeprecation => {
            deprecations.push(format!("{target}: deprecated default silently changed"));
        }
    }
    Ok(())
}

fn ground_truth_of(spec: &WorkloadSpec) -> GroundTruthTrace {
    let mut trace = GroundTruthTrace::default();
    for event in &spec.runtime_events {
        trace.loaded.insert(event.purl.clone());
        trace.load_times.entry(event.purl.clone()).or_insert(event.at);
    }
    let runtime_versions: BTreeMap<String, BTreeSet<&Purl>> =
        spec.runtime_events.iter().fold(BTreeMap::new(), |mut acc, e| {
            acc.entry(e.purl.package_id()).or_insert_with(BTreeSet::new).insert(&e.purl);
            acc
        });
    for c in &spec.header.declared_components {
        // A declared version replaced at runtime by another version was never loaded.
        let superseded = runtime_versions
            .get(&c.package_id())
            .is_some_and(|versions| !versions.contains(&c.purl));
        if !superseded {
            trace.loaded.insert(c.purl.clone());
            trace.load_times.entry(c.purl.clone()).or_insert(0);
        }
    }
    trace
}

/// Ground-truth set of an execution.
pub fn ground_truth(result: &ExecutionResult) -> GroundTruthTrace {
    result.trace.clone()
}

fn load_order(trace: &GroundTruthTrace) -> Vec<Purl> {
    let mut order: Vec<(&u64, &Purl)> = trace.load_times.iter().map(|(p, t)| (t, p)).collect();
    order.sort();
    order.into_iter().map(|(_, p)| p.clone()).collect()
}

fn generate_output(spec: &WorkloadSpec, deprecations: &[String], replica: u64) -> OutputTable {
    let program = &spec.header.output_program;
    let params = &spec.header.params;
    let mut inputs: Vec<String> = program
        .inputs
        .iter()
        .filter_map(|p| spec.resolve_package(p))
        .map(|p| p.to_string())
        .collect();
    inputs.sort();
    let material = json!({
        "workload": spec.header.workload_id,
        "seed": program.seed,
        "inputs": inputs,
        "threshold": params.disclosure_threshold,
    });
    let digest = sha256_hex(&to_canonical_bytes(&material).expect("seed material serializes"));
    let mut seed = [0u8; 32];
    hex::decode_to_slice(&digest, &mut seed).expect("64 hex chars");
    let mut rng = ChaCha8Rng::from_seed(seed);

    let float = program.kind == OutputKind::Float32Noisy;
    let mut jitter = (float && replica > 0).then(|| {
        let mut s = seed;
        s[..8].copy_from_slice(&replica.to_be_bytes());
        ChaCha8Rng::from_seed(s)
    });
    let scale = if deprecations.is_empty() { 1.0 } else { DEPRECATION_SCALE };
    let mut finish = |v: f64| -> f64 {
        let v = if float { v as f32 as f64 } else { v };
        match jitter.as_mut() {
            Some(j) => v + j.random_range(-FLOAT_JITTER..=FLOAT_JITTER),
            None => v,
        }
    };

    let mut rows = Vec::with_capacity(ROWS);
    let mut released_weight = 0.0;
    let mut weighted_mean = 0.0;
    let mut suppressed = 0usize;
    for _ in 0..ROWS {
        let count = rng.random_range(0..60u32) as f64;
        let mean = rng.random::<f64>() * 100.0 * scale;
        let sd = rng.random::<f64>() * 10.0 * scale;
        let rate = rng.random::<f64>() * scale;
        if count < params.disclosure_threshold {
            suppressed += COLUMNS.len();
            rows.push(vec![None; COLUMNS.len()]);
        } else {
            released_weight += count;
            weighted_mean += count * mean;
            rows.push(vec![Some(count), Some(finish(mean)), Some(finish(sd)), Some(finish(rate))]);
        }
    }
    let estimate = if released_weight > 0.0 { weighted_mean / released_weight } else { 0.0 };
    let std_error = if released_weight > 0.0 { 10.0 * scale / released_weight.sqrt() } else { 0.0 };
    let scalars = BTreeMap::from([
        ("estimate".to_string(), finish(estimate)),
        ("std_error".to_string(), finish(std_error)),
    ]);
    OutputTable {
        workload_id: spec.header.workload_id.clone(),
        kind: program.kind,
        columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows,
        suppression_ratio: suppressed as f64 / (ROWS * COLUMNS.len()) as f64,
        scalars,
        warnings: deprecations.to_vec(),
        sdc: SdcSummary {
            threshold: params.disclosure_threshold,
            min_threshold: params.min_threshold,
            passed: params.disclosure_threshold >= params.min_threshold,
        },
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::spec;
    use super::*;

    const A: &str = "pkg:pypi/a@1.0.0";
    const B: &str = "pkg:pypi/b@2.0.0";
    const C: &str = "pkg:pypi/c@3.0.0";

    fn loaded(result: &ExecutionResult) -> Vec<String> {
        ground_truth(result).loaded.iter().map(|p| p.to_string()).collect()
    }

    #[test]
    fn ground_truth_is_union_of_declared_and_runtime() {
        let r = run_workload(&spec(&[A, B], &[(2000, C)]), &[]).unwrap();
        assert_eq!(loaded(&r), vec![A, B, C]);
        assert_eq!(r.late_bound().len(), 1);

        let r = run_workload(&spec(&[A], &[]), &[]).unwrap();
        assert_eq!(loaded(&r), vec![A]);
    }

    #[test]
    fn load_time_is_first_load() {
        let r = run_workload(&spec(&[A], &[(5, A), (9, A)]), &[]).unwrap();
        assert_eq!(r.trace.load_times[&A.parse::<Purl>().unwrap()], 5);
    }

    #[test]
    fn late_bound_events_are_in_ground_truth() {
        let d = "pkg:pypi/d@0.1.0";
        let e = "pkg:pypi/e@0.2.0";
        let r = run_workload(&spec(&[A], &[(1500, C), (2500, d), (6000, e)]), &[]).unwrap();
        for p in [C, d, e] {
            assert!(r.trace.loaded.contains(&p.parse().unwrap()));
        }
        assert_eq!(r.late_bound().len(), 3);
    }

    #[test]
    fn runtime_version_replacing_declared_supersedes_it() {
        let a2 = "pkg:pypi/a@1.0.1";
        let r = run_workload(&spec(&[A], &[(2000, a2)]), &[]).unwrap();
        assert_eq!(loaded(&r), vec![a2]);
    }

    #[test]
    fn runs_are_deterministic() {
        let s = spec(&[A, B], &[(2000, C)]);
        let x = run_workload(&s, &[]).unwrap();
        let y = run_workload(&s, &[]).unwrap();
        assert_eq!(x.output, y.output);
        assert_eq!(x.trace, y.trace);
        assert_eq!(run_workload_replica(&s, &[], 7).unwrap().output, x.output);
    }

    #[test]
    fn version_bump_changes_output_without_mutating_input() {
        let mut s = spec(&[A, B], &[]);
        s.header.output_program.inputs = vec!["pkg:pypi/a".into()];
        let before = s.clone();
        let bump = DriftInjection {
            kind: InjectionKind::VersionBump,
            target_purl: A.parse().unwrap(),
            replacement_version: Some("1.1.0".into()),
        };
        let base = run_workload(&s, &[]).unwrap();
        let drifted = run_workload(&s, &[bump]).unwrap();
        assert_eq!(s, before);
        assert_ne!(base.output, drifted.output);
        assert!(drifted.trace.loaded.contains(&"pkg:pypi/a@1.1.0".parse().unwrap()));
        assert!(!drifted.trace.loaded.contains(&A.parse().unwrap()));
    }

    #[test]
    fn param_change_and_deprecation_perturb_output() {
        let s = spec(&[A], &[]);
        let base = run_workload(&s, &[]).unwrap();
        let target: Purl = A.parse().unwrap();
        let param = run_workload(
            &s,
            &[DriftInjection {
                kind: InjectionKind::DefaultParamChange,
                target_purl: target.clone(),
                replacement_version: None,
            }],
        )
        .unwrap();
        assert!(base.table.sdc.passed);
        assert!(!param.table.sdc.passed);
        assert_ne!(base.output, param.output);

        let dep = run_workload(
            &s,
            &[DriftInjection {
                kind: InjectionKind::SilentDeprecation,
                target_purl: target,
                replacement_version: None,
            }],
        )
        .unwrap();
        assert_ne!(base.output, dep.output);
        assert_eq!(dep.table.warnings.len(), 1);
        assert_eq!(dep.table.suppression_ratio, base.table.suppression_ratio);
    }

    #[test]
    fn bad_injections_are_invalid() {
        let s = spec(&[A], &[]);
        let absent = DriftInjection {
            kind: InjectionKind::SilentDeprecation,
            target_purl: B.parse().unwrap(),
            replacement_version: None,
        };
        assert!(matches!(run_workload(&s, &[absent]), Err(WorkloadError::InvalidSpec(_))));
        let no_version = DriftInjection {
            kind: InjectionKind::VersionBump,
            target_purl: A.parse().unwrap(),
            replacement_version: None,
        };
        assert!(run_workload(&s, &[no_version]).is_err());
        assert!(parse_injections(r#"[{"kind":"version_bump","target_purl":"pkg:pypi/a@1.0.0"}]"#).is_err());
    }

    #[test]
    fn event_order_and_phase_are_checked() {
        let mut s = spec(&[A], &[(2000, B), (3000, C)]);
        s.runtime_events.swap(0, 1);
        assert!(s.validate().is_err());
        let mut s = spec(&[A], &[(2000, B)]);
        s.runtime_events[0].phase = Phase::Post;
        assert!(s.validate().is_err());
    }

    #[test]
    fn float_replicas_stay_within_tolerance() {
        let mut s = spec(&[A], &[]);
        s.header.output_program.kind = OutputKind::Float32Noisy;
        let base = run_workload(&s, &[]).unwrap().table;
        for replica in 1..20 {
            let other = run_workload_replica(&s, &[], replica).unwrap().table;
            assert_eq!(other.suppression_ratio, base.suppression_ratio);
            let cells = base.rows.iter().flatten().zip(other.rows.iter().flatten());
            for (x, y) in cells {
                if let (Some(x), Some(y)) = (x, y) {
                    assert!((x - y).abs() <= 1e-6);
                }
            }
            for (k, v) in &base.scalars {
                assert!((v - other.scalars[k]).abs() <= 1e-6);
            }
        }
        assert_ne!(run_workload_replica(&s, &[], 1).unwrap().output, run_workload(&s, &[]).unwrap().output);
    }

    #[test]
    fn jsonl_roundtrip() {
        let s = spec(&[A, B], &[(2000, C)]);
        let parsed = WorkloadSpec::from_jsonl(&s.to_jsonl()).unwrap();
        assert_eq!(parsed, s);
        assert!(WorkloadSpec::from_jsonl("").is_err());
    }

    #[test]
    fn raw_scan_strips_gap_entries() {
        let mut s = spec(&[A, B], &[]);
        s.header.scan_gaps = vec![B.parse().unwrap()];
        let scan = s.raw_scan();
        assert!(scan[0].sha256().is_some());
        assert!(scan[1].sha256().is_none() && scan[1].licenses.is_empty());
    }
}
