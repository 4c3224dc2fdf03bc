//! Declarative compliance rules evaluated against sealed sessions.
//!
//! A ruleset is a JSON array of [`ComplianceRule`]. Each rule names the
//! fields it reads and a procedure; loading a ruleset resolves every field
//! path against the document and record schemas so a typo is a load error
//! rather than a silent pass.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agents::bus::{AgentMessage, Payload};
use crate::canonical::sha256_hex;
use crate::model::AibomDocument;
use crate::purl::Purl;
use crate::store::{
    RetentionClass, SessionRecord, Store, StoreError, StoredSession, CONFIG_FILE, MESSAGES_FILE, OUTPUT_FILE,
    SCRIPT_FILE, TRACE_FILE,
};
use crate::vex::VexStatus;
use crate::workload::{GroundTruthTrace, OutputTable};

const DEFAULT_RULESET: &str = include_str!("../rulesets/default.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    HashVerify,
    FieldPresence,
    DisclosureControl,
    AuditCrossref,
    InventoryCompleteness,
    ScanRecord,
    AttestationPresence,
    SupplierMetadata,
    SnapshotDiffVsPolicy,
    VexCoverage,
    RetentionCheck,
    CsafSchemaCheck,
}

/// Field paths are `aibom.<camelCase path>` (`[]` steps into every array
/// element), `record.<path>` or `artifact:<stored file>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplianceRule {
    pub rule_id: String,
    pub title: String,
    pub required_fields: Vec<String>,
    pub procedure: Procedure,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceResult {
    pub rule_id: String,
    pub status: RuleStatus,
    pub diagnostics: Vec<String>,
    pub evidence_refs: Vec<String>,
}

impl ComplianceResult {
    pub fn passed(&self) -> bool {
        self.status == RuleStatus::Pass
    }
}

#[derive(Debug, Error)]
pub enum ComplianceError {
    #[error("invalid ruleset: {0}")]
    InvalidRuleset(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub fn default_ruleset() -> Vec<ComplianceRule> {
    parse_ruleset(DEFAULT_RULESET).expect("bundled ruleset is valid")
}

pub fn parse_ruleset(text: &str) -> Result<Vec<ComplianceRule>, ComplianceError> {
    let rules: Vec<ComplianceRule> =
        serde_json::from_str(text).map_err(|e| ComplianceError::InvalidRuleset(e.to_string()))?;
    let mut seen = BTreeSet::new();
    let (doc, record) = templates();
    for rule in &rules {
        if !seen.insert(rule.rule_id.as_str()) {
            return Err(ComplianceError::InvalidRuleset(format!("duplicate rule id {}", rule.rule_id)));
        }
        for field in &rule.required_fields {
            let known = match FieldRef::parse(field) {
                Some(FieldRef::Aibom(path)) => !resolve(&doc, path).is_empty(),
                Some(FieldRef::Record(path)) => !resolve(&record, path).is_empty(),
                Some(FieldRef::Artifact(name)) => crate::store::PART_NAMES.contains(&name),
                None => false,
            };
            if !known {
                return Err(ComplianceError::InvalidRuleset(format!(
                    "{}: field `{field}` does not exist",
                    rule.rule_id
                )));
            }
        }
    }
    Ok(rules)
}

enum FieldRef<'a> {
    Aibom(&'a str),
    Record(&'a str),
    Artifact(&'a str),
}

impl<'a> FieldRef<'a> {
    fn parse(field: &'a str) -> Option<Self> {
        if let Some(p) = field.strip_prefix("aibom.") {
            Some(FieldRef::Aibom(p))
        } else if let Some(p) = field.strip_prefix("record.") {
            Some(FieldRef::Record(p))
        } else {
            field.strip_prefix("artifact:").map(FieldRef::Artifact)
        }
    }
}

/// Fully populated document and record, typed through the real structs so a
/// schema change breaks ruleset loading instead of drifting past it.
fn templates() -> (Value, Value) {
    let purl = "pkg:pypi/t@1.0.0";
    let doc: AibomDocument = serde_json::from_value(json!({
        "metadata": {"timestamp": "t", "toolVersion": "t", "analystPseudonym": "t", "executionRunId": "t",
                     "sessionId": "t", "compositeHash": "t"},
        "components": [{"name": "t", "version": "1.0.0", "type": "library", "hashes": {"SHA-256": "t"},
                        "licenses": ["t"], "purl": purl, "supplierName": "t", "componentOrigin": "t",
                        "licenseNotes": "t", "riskNotes": "t"}],
        "dependencies": [{"parent": purl, "child": purl}],
        "environment": {"osKernel": "t", "osDistro": "t", "containerId": "t", "baseImageHash": "t",
                        "interpreterVersions": {"t": "t"}, "resourceConstraints": {"t": "t"}, "loadOrder": [purl]},
        "deploymentExtensions": {"executionContextId": "t", "moduleType": "t", "linkedOutputId": "t",
                                 "disclosureToolVersion": "t", "outputFileHash": "t", "disclosureThreshold": 1.0,
                                 "policyVersion": "t", "sdcChecksSummary": "t", "reviewerPseudonym": "t",
                                 "dataHandlingFlags": ["t"], "retentionClass": "t", "csafRefs": ["t"],
                                 "evidencePtrs": ["t"], "cveRefs": ["t"]},
        "vexAssertions": [{"advisoryId": "t", "purl": purl, "status": "not_affected", "justification": "t",
                           "evidencePtrs": ["t"], "csafRefs": ["t"], "issuedAt": 0}]
    }))
    .expect("document template matches the schema");
    let record: SessionRecord = serde_json::from_value(json!({
        "session_id": "t", "workload_id": "t", "composite_hash": "t", "store_path": "t",
        "index_keys": {"session_id": "t", "output_file_hash": "t"},
        "signature": {"key_id": "t", "digest": "t"},
        "redaction_manifest_hash": "t", "messages_sha256": "t", "trace_sha256": "t", "session_sha256": "t",
        "retention_class": "released-output", "timestamp": "t"
    }))
    .expect("record template matches the schema");
    (
        serde_json::to_value(doc).expect("template serializes"),
        serde_json::to_value(record).expect("template serializes"),
    )
}

/// Every value reached by `path`; `[]` fans out over array elements.
fn resolve<'v>(root: &'v Value, path: &str) -> Vec<&'v Value> {
    let mut current = vec![root];
    for step in path.split('.') {
        let (key, fan_out) = match step.strip_suffix("[]") {
            Some(k) => (k, true),
            None => (step, false),
        };
        current = current
            .into_iter()
            .filter_map(|v| v.get(key))
            .flat_map(|v| match (fan_out, v) {
                (true, Value::Array(items)) => items.iter().collect(),
                (true, _) => vec![],
                (false, v) => vec![v],
            })
            .collect();
    }
    current
}

fn is_empty_value(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::String(s) => s.trim().is_empty(),
        Value::Array(a) => a.is_empty(),
        Value::Object(o) => o.is_empty(),
        _ => false,
    }
}

/// What an evaluation is judged against.
#[derive(Debug, Clone)]
pub struct EvaluationContext {
    pub active_policy_version: String,
}

impl Default for EvaluationContext {
    fn default() -> Self {
        Self {
            active_policy_version: crate::agents::SessionPolicy::default().policy_version,
        }
    }
}

/// Evaluate `rules` against a stored session. A session that failed closed
/// has no sealed evidence, so every rule fails and cites the incident.
pub fn evaluate(
    rules: &[ComplianceRule],
    store: &Store,
    session_id: &str,
    ctx: &EvaluationContext,
) -> Result<Vec<ComplianceResult>, ComplianceError> {
    let stored = match store.load(session_id) {
        Ok(s) => s,
        Err(StoreError::SessionNotFound(_)) => {
            let Some(incident) = store.incident(session_id)? else {
                return Err(StoreError::SessionNotFound(session_id.into()).into());
            };
            return Ok(rules
                .iter()
                .map(|r| ComplianceResult {
                    rule_id: r.rule_id.clone(),
                    status: RuleStatus::Fail,
                    diagnostics: vec![format!(
                        "session {session_id} failed closed ({}); no sealed evidence exists",
                        incident.reason
                    )],
                    evidence_refs: vec![format!("incident:{session_id}")],
                })
                .collect());
        }
        Err(e) => return Err(e.into()),
    };
    let evidence = Evidence::gather(store, &stored, ctx);
    Ok(rules.iter().map(|r| evidence.check(r)).collect())
}

struct Evidence<'a> {
    store: &'a Store,
    stored: &'a StoredSession,
    ctx: &'a EvaluationContext,
    doc: Result<AibomDocument, String>,
    doc_value: Option<Value>,
    record: Result<SessionRecord, String>,
    record_value: Option<Value>,
    messages: Result<Vec<AgentMessage>, String>,
}

#[derive(Default)]
struct Finding {
    failures: Vec<String>,
    notes: Vec<String>,
    refs: Vec<String>,
}

impl Finding {
    fn fail(&mut self, msg: impl Into<String>) {
        self.failures.push(msg.into());
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    fn cite(&mut self, r: impl Into<String>) {
        self.refs.push(r.into());
    }
}

impl<'a> Evidence<'a> {
    fn gather(store: &'a Store, stored: &'a StoredSession, ctx: &'a EvaluationContext) -> Self {
        let doc = stored.document();
        let record = stored.record();
        Self {
            store,
            stored,
            ctx,
            doc_value: doc.as_ref().ok().map(|d| serde_json::to_value(d).expect("document serializes")),
            record_value: record.as_ref().ok().map(|r| serde_json::to_value(r).expect("record serializes")),
            doc,
            record,
            messages: stored.messages(),
        }
    }

    fn check(&self, rule: &ComplianceRule) -> ComplianceResult {
        let mut f = Finding::default();
        match rule.procedure {
            Procedure::HashVerify => self.hash_verify(&mut f),
            Procedure::FieldPresence => self.field_presence(rule, &mut f),
            Procedure::DisclosureControl => self.with_doc(&mut f, |e, d, f| e.disclosure_control(d, f)),
            Procedure::AuditCrossref => self.with_doc(&mut f, |e, d, f| e.audit_crossref(d, f)),
            Procedure::InventoryCompleteness => self.with_doc(&mut f, |e, d, f| e.inventory_completeness(d, f)),
            Procedure::ScanRecord => self.with_doc(&mut f, |_, d, f| scan_record(d, f)),
            Procedure::AttestationPresence => self.with_doc(&mut f, |e, d, f| e.attestation_presence(d, f)),
            Procedure::SupplierMetadata => self.with_doc(&mut f, |_, d, f| supplier_metadata(d, &rule.params, f)),
            Procedure::SnapshotDiffVsPolicy => self.with_doc(&mut f, |e, d, f| e.snapshot_diff_vs_policy(d, f)),
            Procedure::VexCoverage => self.with_doc(&mut f, |_, d, f| vex_coverage(d, f)),
            Procedure::RetentionCheck => self.with_doc(&mut f, |e, d, f| e.retention_check(d, f)),
            Procedure::CsafSchemaCheck => self.with_doc(&mut f, |e, d, f| e.csaf_schema_check(d, f)),
        }
        let status = if f.failures.is_empty() {
            RuleStatus::Pass
        } else {
            RuleStatus::Fail
        };
        let mut diagnostics = f.failures;
        diagnostics.extend(f.notes);
        let refs: BTreeSet<String> = f.refs.into_iter().collect();
        ComplianceResult {
            rule_id: rule.rule_id.clone(),
            status,
            diagnostics,
            evidence_refs: refs.into_iter().collect(),
        }
    }

    fn with_doc(&self, f: &mut Finding, body: impl FnOnce(&Self, &AibomDocument, &mut Finding)) {
        match &self.doc {
            Ok(d) => body(self, d, f),
            Err(e) => f.fail(format!("document unreadable: {e}")),
        }
    }

    fn messages(&self, f: &mut Finding) -> &[AgentMessage] {
        match &self.messages {
            Ok(m) => m,
            Err(e) => {
                f.fail(format!("message log unreadable: {e}"));
                &[]
            }
        }
    }

    fn hash_verify(&self, f: &mut Finding) {
        for problem in self.store.integrity_problems(self.stored) {
            f.fail(problem);
        }
        f.cite(format!("composite:{}", self.stored.row.composite_hash));
        f.cite(format!("store:{}", self.stored.row.store_path));
    }

    fn field_presence(&self, rule: &ComplianceRule, f: &mut Finding) {
        for field in &rule.required_fields {
            let present = match FieldRef::parse(field) {
                Some(FieldRef::Aibom(path)) => self.doc_value.as_ref().is_some_and(|v| {
                    let found = resolve(v, path);
                    !found.is_empty() && !found.iter().any(|x| is_empty_value(x))
                }),
                Some(FieldRef::Record(path)) => self
                    .record_value
                    .as_ref()
                    .is_some_and(|v| resolve(v, path).iter().any(|x| !is_empty_value(x))),
                Some(FieldRef::Artifact(name)) => self.stored.part(name).is_ok_and(|b| !b.is_empty()),
                None => false,
            };
            if present {
                f.cite(field.clone());
            } else {
                f.fail(format!("required field {field} is absent or empty"));
            }
        }
    }

    fn output_table(&self, f: &mut Finding) -> Option<OutputTable> {
        match self.stored.part(OUTPUT_FILE).map(OutputTable::from_bytes) {
            Ok(Ok(t)) => Some(t),
            Ok(Err(e)) => {
                f.fail(format!("{OUTPUT_FILE}: {e}"));
                None
            }
            Err(e) => {
                f.fail(e);
                None
            }
        }
    }

    fn policy_matches(&self, doc: &AibomDocument, f: &mut Finding) {
        let version = &doc.deployment_extensions.policy_version;
        if *version != self.ctx.active_policy_version {
            f.fail(format!(
                "policy version {version} differs from active policy {}",
                self.ctx.active_policy_version
            ));
        }
        f.cite(format!("policy:{version}"));
    }

    fn disclosure_control(&self, doc: &AibomDocument, f: &mut Finding) {
        self.policy_matches(doc, f);
        let ext = &doc.deployment_extensions;
        let Some(table) = self.output_table(f) else { return };
        f.cite(format!("artifact:{OUTPUT_FILE}"));
        if !table.sdc.passed {
            f.fail(format!("output failed disclosure control: {}", table.sdc_summary_line()));
        }
        if table.sdc.threshold < table.sdc.min_threshold {
            f.fail(format!(
                "threshold {} is below the minimum {}",
                table.sdc.threshold, table.sdc.min_threshold
            ));
        }
        if ext.disclosure_threshold != table.sdc.threshold {
            f.fail(format!(
                "recorded threshold {} differs from the applied threshold {}",
                ext.disclosure_threshold, table.sdc.threshold
            ));
        }
        if ext.sdc_checks_summary != table.sdc_summary_line() {
            f.fail("sdcChecksSummary does not describe the stored output");
        }
        f.note(format!("disclosure tool: {}", ext.disclosure_tool_version));
    }

    fn audit_crossref(&self, doc: &AibomDocument, f: &mut Finding) {
        let sid = &doc.metadata.session_id;
        let row = &self.stored.row;
        if row.session_id != *sid {
            f.fail(format!("index session {} differs from document session {sid}", row.session_id));
        }
        match &self.record {
            Ok(record) => {
                if record.session_id != *sid {
                    f.fail(format!("record session {} differs from document session {sid}", record.session_id));
                }
                match self.stored.part(MESSAGES_FILE) {
                    Ok(bytes) if sha256_hex(bytes) == record.messages_sha256 => {
                        f.cite(format!("messages:{}", record.messages_sha256));
                    }
                    Ok(_) => f.fail("message log digest differs from the record"),
                    Err(e) => f.fail(e),
                }
                if record.index_keys.output_file_hash != doc.deployment_extensions.output_file_hash {
                    f.fail("record output hash differs from the document");
                }
            }
            Err(e) => f.fail(format!("record unreadable: {e}")),
        }
        let messages = self.messages(f);
        if messages.windows(2).any(|w| w[1].at < w[0].at) {
            f.fail("message log timestamps regress");
        }
        match self.stored.part(OUTPUT_FILE) {
            Ok(output) => {
                let hash = sha256_hex(output);
                if doc.deployment_extensions.output_file_hash != hash {
                    f.fail("outputFileHash does not match the stored output");
                }
                if doc.deployment_extensions.linked_output_id != format!("out-{}", &hash[..16]) {
                    f.fail("linkedOutputId does not reference the stored output");
                }
                f.cite(format!("output:{hash}"));
            }
            Err(e) => f.fail(e),
        }
        f.note(format!("{} messages in the audit log", messages.len()));
    }

    fn inventory_completeness(&self, doc: &AibomDocument, f: &mut Finding) {
        let trace: GroundTruthTrace = match self.stored.parse(TRACE_FILE) {
            Ok(t) => t,
            Err(e) => return f.fail(e),
        };
        f.cite(format!("artifact:{TRACE_FILE}"));
        let listed: BTreeSet<&Purl> = doc.components.iter().map(|c| &c.purl).collect();
        let missing: Vec<&Purl> = trace.loaded.iter().filter(|p| !listed.contains(p)).collect();
        for p in &missing {
            f.fail(format!("loaded component {p} is missing from the inventory"));
        }
        for c in &doc.components {
            if c.sha256().is_none_or(str::is_empty) {
                f.fail(format!("{} has no SHA-256 digest", c.purl));
            }
        }
        for e in &doc.dependencies {
            if !listed.contains(&e.parent) || !listed.contains(&e.child) {
                f.fail(format!("dependency {} -> {} references an unlisted component", e.parent, e.child));
            }
        }
        let extra = listed.iter().filter(|p| !trace.loaded.contains(*p)).count();
        if extra > 0 {
            f.note(format!("{extra} listed components were not observed loading"));
        }
        f.note(format!(
            "{} of {} loaded components inventoried",
            trace.loaded.len() - missing.len(),
            trace.loaded.len()
        ));
    }

    fn attestation_presence(&self, doc: &AibomDocument, f: &mut Finding) {
        match &self.record {
            Ok(record) => match self.store.verify_signature(record) {
                Ok(true) => f.cite(format!("signature:{}", record.signature.key_id)),
                Ok(false) => f.fail(format!("signature by {} does not verify", record.signature.key_id)),
                Err(e) => f.fail(e.to_string()),
            },
            Err(e) => f.fail(format!("record unreadable: {e}")),
        }
        let unsourced: Vec<String> = doc
            .components
            .iter()
            .filter(|c| c.supplier_name.is_none())
            .map(|c| c.purl.to_string())
            .collect();
        if !unsourced.is_empty() {
            f.fail(format!("components without provenance: {}", unsourced.join(", ")));
        }
    }

    fn snapshot_diff_vs_policy(&self, doc: &AibomDocument, f: &mut Finding) {
        self.policy_matches(doc, f);
        let messages = self.messages(f);
        let mut accounted: BTreeSet<&Purl> = BTreeSet::new();
        let mut material = Vec::new();
        for m in messages {
            match &m.body {
                Payload::BaselineSbomFragment(frag) => {
                    accounted.extend(frag.components.iter().map(|c| &c.purl));
                    f.cite(format!("msg:{}", m.seq));
                }
                Payload::RuntimeDriftSignal(s) => {
                    accounted.insert(&s.component.purl);
                    if s.classification == crate::agents::bus::DriftClass::Material {
                        material.push((m.seq, s));
                    }
                }
                _ => {}
            }
        }
        for c in doc.components.iter().filter(|c| !accounted.contains(&c.purl)) {
            f.fail(format!("{} entered the environment without a recorded baseline or change", c.purl));
        }
        let approved = self
            .store
            .adjudications(&self.stored.row.session_id)
            .map(|a| {
                a.iter()
                    .any(|r| r.adjudication.action == crate::agents::bus::AdjudicationAction::Approve)
            })
            .unwrap_or(false);
        for (seq, s) in material {
            let msg = format!("material change {}: {}", s.component.purl, s.reasons.join("; "));
            f.cite(format!("msg:{seq}"));
            if approved {
                f.note(format!("{msg} (approved by adjudication)"));
            } else {
                f.fail(format!("{msg} awaits adjudication"));
            }
        }
    }

    fn retention_check(&self, doc: &AibomDocument, f: &mut Finding) {
        let class = RetentionClass::of(doc);
        let ext = &doc.deployment_extensions;
        if ![crate::agents::RETENTION_RELEASED, crate::agents::RETENTION_FAILED].contains(&ext.retention_class.as_str()) {
            f.fail(format!("unknown retention class {}", ext.retention_class));
        }
        if self.stored.row.retention_class != class {
            f.fail("index retention class differs from the document");
        }
        if let Ok(record) = &self.record {
            if record.retention_class != class {
                f.fail("record retention class differs from the document");
            }
        }
        if chrono::DateTime::parse_from_rfc3339(&doc.metadata.timestamp).is_err() {
            f.fail(format!("timestamp {} is not RFC 3339", doc.metadata.timestamp));
        }
        if ext.reviewer_pseudonym.trim().is_empty() {
            f.fail("no accountable reviewer recorded");
        }
        if let Some(table) = self.output_table(f) {
            if table.sdc.passed != (class == RetentionClass::ReleasedOutput) {
                f.fail(format!("retention class {} contradicts the disclosure outcome", ext.retention_class));
            }
        }
        for part in [SCRIPT_FILE, CONFIG_FILE] {
            if self.stored.part(part).is_err() {
                f.fail(format!("{part} is not retained"));
            }
        }
        f.cite(format!("retention:{}", ext.retention_class));
    }

    fn csaf_schema_check(&self, doc: &AibomDocument, f: &mut Finding) {
        let messages = self.messages(f);
        let by_seq: BTreeMap<u64, &AgentMessage> = messages.iter().map(|m| (m.seq, m)).collect();
        let doc_csaf: BTreeSet<&String> = doc.deployment_extensions.csaf_refs.iter().collect();
        let mut ptrs: BTreeSet<&String> = BTreeSet::new();
        for r in &doc.deployment_extensions.csaf_refs {
            if !well_formed_csaf_ref(r) {
                f.fail(format!("malformed CSAF reference `{r}`"));
            }
        }
        for a in &doc.vex_assertions {
            let subject = format!("{} on {}", a.advisory_id, a.purl);
            if a.justification.trim().is_empty() {
                f.fail(format!("{subject}: no justification"));
            }
            for r in a.csaf_refs.iter().filter(|r| !doc_csaf.contains(r)) {
                f.fail(format!("{subject}: CSAF reference {r} is not listed in the document"));
            }
            let mut has_policy = false;
            for ptr in &a.evidence_ptrs {
                ptrs.insert(ptr);
                match ptr.split_once(':') {
                    Some(("advisory", id)) if id == a.advisory_id => {}
                    Some(("advisory", id)) => f.fail(format!("{subject}: evidence cites advisory {id}")),
                    Some(("msg", seq)) => {
                        let resolved = seq.parse::<u64>().ok().and_then(|s| by_seq.get(&s)).is_some_and(|m| {
                            matches!(&m.body, Payload::VulnContextPacket(p)
                                if p.purl == a.purl && p.advisory_id == a.advisory_id)
                        });
                        if !resolved {
                            f.fail(format!("{subject}: evidence {ptr} does not resolve to a matching context packet"));
                        }
                    }
                    Some(("policy", id)) => has_policy |= id != "mitigation-register",
                    _ => f.fail(format!("{subject}: unrecognised evidence pointer `{ptr}`")),
                }
            }
            if a.status == VexStatus::AffectedMitigated && !has_policy {
                f.fail(format!("{subject}: mitigated without citing a mitigation policy"));
            }
            f.cite(format!("vex:{}|{}", a.advisory_id, a.purl));
        }
        let listed: BTreeSet<&String> = doc.deployment_extensions.evidence_ptrs.iter().collect();
        if listed != ptrs {
            f.fail("evidencePtrs does not equal the union of assertion evidence");
        }
    }
}

fn well_formed_csaf_ref(r: &str) -> bool {
    r.starts_with("CSAF-")
        && r.len() > 5
        && r.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '-')
}

fn cve_refs(doc: &AibomDocument, f: &mut Finding) -> Vec<(String, Purl)> {
    doc.deployment_extensions
        .cve_refs
        .iter()
        .filter_map(|r| {
            let parsed = r
                .split_once('|')
                .and_then(|(id, purl)| Some((id.to_string(), purl.parse::<Purl>().ok()?)))
                .filter(|(id, _)| !id.trim().is_empty());
            if parsed.is_none() {
                f.fail(format!("malformed cveRef `{r}`"));
            }
            parsed
        })
        .collect()
}

fn scan_record(doc: &AibomDocument, f: &mut Finding) {
    if doc.metadata.tool_version.trim().is_empty() {
        f.fail("scanner tool version missing");
    }
    if doc.metadata.timestamp.trim().is_empty() {
        f.fail("scan timestamp missing");
    }
    let refs = cve_refs(doc, f);
    for (id, purl) in &refs {
        if doc.component(purl).is_none() {
            f.fail(format!("{id} references {purl}, which is not in the inventory"));
        }
        f.cite(format!("cve:{id}|{purl}"));
    }
    f.note(format!("{} advisory matches recorded", refs.len()));
}

fn supplier_metadata(doc: &AibomDocument, params: &Value, f: &mut Finding) {
    let required: Vec<&str> = params
        .get("required")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    for c in &doc.components {
        let value = serde_json::to_value(c).expect("component serializes");
        let absent: Vec<&str> = required
            .iter()
            .copied()
            .filter(|k| value.get(*k).is_none_or(is_empty_value))
            .collect();
        if !absent.is_empty() {
            f.fail(format!("{} lacks {}", c.purl, absent.join(", ")));
        }
    }
    let with_risk = doc.components.iter().filter(|c| c.risk_notes.is_some()).count();
    f.note(format!("{with_risk} of {} components carry risk notes", doc.components.len()));
}

fn vex_coverage(doc: &AibomDocument, f: &mut Finding) {
    let refs = cve_refs(doc, f);
    for (id, purl) in &refs {
        let assertion = doc.vex_assertions.iter().find(|a| a.advisory_id == *id && a.purl == *purl);
        match assertion {
            None => f.fail(format!("no VEX assertion for {id} on {purl}")),
            Some(a) if a.evidence_ptrs.is_empty() => f.fail(format!("VEX assertion for {id} on {purl} cites no evidence")),
            Some(a) => f.cite(format!("vex:{id}|{purl}:{}", a.status)),
        }
    }
    if refs.is_empty() {
        f.note("no advisories matched the inventory");
    }
}
