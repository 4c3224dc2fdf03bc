//! The AIBOM document: a CycloneDX-style inventory extended with execution
//! environment, deployment metadata and contextual VEX assertions.
//!
//! Documents are plain values. [`canonical_serialize`] fixes the byte layout
//! used for hashing: object keys sorted, components ordered by purl,
//! dependency edges and VEX assertions sorted, compact UTF-8 JSON.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{is_sha256_hex, sha256_hex, to_canonical_bytes};
use crate::purl::Purl;
use crate::vex::VexAssertion;

/// Hash algorithm key that every component must carry.
pub const SHA256: &str = "SHA-256";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AibomDocument {
    pub metadata: DocMetadata,
    pub components: Vec<Component>,
    pub dependencies: Vec<DependencyEdge>,
    pub environment: EnvironmentSnapshot,
    pub deployment_extensions: DeploymentExtensions,
    #[serde(default)]
    pub vex_assertions: Vec<VexAssertion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DocMetadata {
    /// RFC 3339 UTC instant.
    pub timestamp: String,
    pub tool_version: String,
    pub analyst_pseudonym: String,
    pub execution_run_id: String,
    pub session_id: String,
    /// Set when the session is sealed; excluded from the bytes it covers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite_hash: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentType {
    Library,
    ContainerLayer,
    Binary,
    Runtime,
    Script,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Component {
    pub name: String,
    pub version: String,
    #[serde(rename = "type")]
    pub kind: ComponentType,
    /// Algorithm name to lowercase hex digest.
    pub hashes: BTreeMap<String, String>,
    pub licenses: Vec<String>,
    pub purl: Purl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supplier_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_origin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub license_notes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_notes: Option<String>,
}

impl Component {
    pub fn sha256(&self) -> Option<&str> {
        self.hashes.get(SHA256).map(String::as_str)
    }

    pub fn package_id(&self) -> String {
        self.purl.package_id()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependencyEdge {
    pub parent: Purl,
    pub child: Purl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EnvironmentSnapshot {
    pub os_kernel: String,
    pub os_distro: String,
    pub container_id: String,
    pub base_image_hash: String,
    #[serde(default)]
    pub interpreter_versions: BTreeMap<String, String>,
    #[serde(default)]
    pub resource_constraints: BTreeMap<String, String>,
    /// Components in the order they were first observed during capture.
    #[serde(default)]
    pub load_order: Vec<Purl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DeploymentExtensions {
    pub execution_context_id: String,
    pub module_type: String,
    pub linked_output_id: String,
    pub disclosure_tool_version: String,
    pub output_file_hash: String,
    pub disclosure_threshold: f64,
    pub policy_version: String,
    pub sdc_checks_summary: String,
    pub reviewer_pseudonym: String,
    #[serde(default)]
    pub data_handling_flags: Vec<String>,
    pub retention_class: String,
    #[serde(default)]
    pub csaf_refs: Vec<String>,
    #[serde(default)]
    pub evidence_ptrs: Vec<String>,
    /// Raw advisory matches as `ADVISORY-ID|purl`, present whether or not
    /// contextual VEX reasoning ran.
    #[serde(default)]
    pub cve_refs: Vec<String>,
}

/// One field-level schema violation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    /// Component purl, or `document` for document-level fields.
    pub subject: String,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.subject, self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, subject: impl Into<String>, field: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            subject: subject.into(),
            field: field.to_string(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&lines.join("; "))
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid document: {0}")]
    InvalidDocument(ValidationReport),
    #[error("serialization failed: {0}")]
    Serialization(#[from] serde_json::Error),
}

/// Field checks for a single component. Violations are appended to `report`.
pub fn validate_component(component: &Component, report: &mut ValidationReport) {
    let subject = component.purl.to_string();
    if component.name.trim().is_empty() {
        report.push(&subject, "name", "name is empty");
    }
    if component.version.trim().is_empty() {
        report.push(&subject, "version", "version is empty");
    }
    match component.sha256() {
        None => report.push(&subject, "hashes", "SHA-256 hash missing"),
        Some(h) if !is_sha256_hex(h) => {
            report.push(&subject, "hashes", "SHA-256 hash is not 64 lowercase hex characters")
        }
        Some(_) => {}
    }
    if component.licenses.is_empty() || component.licenses.iter().any(|l| l.trim().is_empty()) {
        report.push(&subject, "licenses", "at least one non-empty license entry required");
    }
    if component.purl.name() != component.name || component.purl.version() != component.version {
        report.push(&subject, "purl", "purl name/version disagree with component fields");
    }
}

pub fn validate_document(doc: &AibomDocument) -> ValidationReport {
    let mut report = ValidationReport::default();

    if chrono::DateTime::parse_from_rfc3339(&doc.metadata.timestamp).is_err() {
        report.push("document", "metadata.timestamp", "not an RFC 3339 instant");
    }
    if doc.metadata.execution_run_id.trim().is_empty() {
        report.push("document", "metadata.executionRunId", "execution run id is empty");
    }
    if !is_sha256_hex(&doc.environment.base_image_hash) {
        report.push(
            "document",
            "environment.baseImageHash",
            "base image hash is not 64 lowercase hex characters",
        );
    }

    let mut seen = BTreeSet::new();
    for component in &doc.components {
        validate_component(component, &mut report);
        if !seen.insert(component.purl.to_string()) {
            report.push(component.purl.to_string(), "purl", "duplicate component purl");
        }
    }

    for edge in &doc.dependencies {
        for end in [&edge.parent, &edge.child] {
            if !seen.contains(&end.to_string()) {
                report.push(
                    end.to_string(),
                    "dependencies",
                    format!("edge {} -> {} references an undeclared component", edge.parent, edge.child),
                );
            }
        }
    }
    if let Some(cycle_at) = find_cycle(&doc.dependencies) {
        report.push(cycle_at, "dependencies", "dependency graph contains a cycle");
    }

    for assertion in &doc.vex_assertions {
        if !seen.contains(&assertion.purl.to_string()) {
            report.push(
                assertion.purl.to_string(),
                "vexAssertions",
                format!("assertion for {} targets an undeclared component", assertion.advisory_id),
            );
        }
    }
    report
}

/// Additional requirements once a document is bound to a released session.
pub fn validate_for_seal(doc: &AibomDocument) -> ValidationReport {
    let mut report = validate_document(doc);
    let ext = &doc.deployment_extensions;
    if ext.execution_context_id.trim().is_empty() {
        report.push("document", "deploymentExtensions.executionContextId", "empty in sealed document");
    }
    if ext.linked_output_id.trim().is_empty() {
        report.push("document", "deploymentExtensions.linkedOutputId", "empty in sealed document");
    }
    report
}

fn find_cycle(edges: &[DependencyEdge]) -> Option<String> {
    let mut adjacency: HashMap<String, Vec<String>> = HashMap::new();
    for edge in edges {
        adjacency
            .entry(edge.parent.to_string())
            .or_default()
            .push(edge.child.to_string());
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: HashMap<String, u8> = HashMap::new();
    let mut roots: Vec<&String> = adjacency.keys().collect();
    roots.sort();
    for root in roots {
        if state.get(root).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(String, usize)> = vec![(root.clone(), 0)];
        state.insert(root.clone(), 1);
        while let Some((node, idx)) = stack.pop() {
            let children = adjacency.get(&node).map(Vec::as_slice).unwrap_or(&[]);
            if idx < children.len() {
                stack.push((node.clone(), idx + 1));
                let child = &children[idx];
                match state.get(child).copied().unwrap_or(0) {
                    1 => return Some(child.clone()),
                    0 => {
                        state.insert(child.clone(), 1);
                        stack.push((child.clone(), 0));
                    }
                    _ => {}
                }
            } else {
                state.insert(node, 2);
            }
        }
    }
    None
}

impl AibomDocument {
    /// Canonical ordering of the unordered collections.
    pub fn normalized(&self) -> AibomDocument {
        let mut doc = self.clone();
        doc.components.sort_by_key(|c| c.purl.to_string());
        doc.dependencies
            .sort_by_key(|e| (e.parent.to_string(), e.child.to_string()));
        doc.dependencies.dedup();
        doc.vex_assertions
            .sort_by_key(|a| (a.advisory_id.clone(), a.purl.to_string()));
        doc
    }

    pub fn component(&self, purl: &Purl) -> Option<&Component> {
        self.components.iter().find(|c| &c.purl == purl)
    }

    /// Copy with the sealing hash removed, i.e. the bytes the hash covers.
    pub fn without_composite_hash(&self) -> AibomDocument {
        let mut doc = self.clone();
        doc.metadata.composite_hash = None;
        doc
    }
}

pub fn canonical_serialize(doc: &AibomDocument) -> Result<Vec<u8>, ModelError> {
    let report = validate_document(doc);
    if !report.is_empty() {
        return Err(ModelError::InvalidDocument(report));
    }
    Ok(to_canonical_bytes(&doc.normalized())?)
}

pub fn document_hash(doc: &AibomDocument) -> Result<String, ModelError> {
    Ok(sha256_hex(&canonical_serialize(doc)?))
}
