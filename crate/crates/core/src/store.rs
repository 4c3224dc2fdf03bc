//! Append-only provenance store: composite hashing, session-key signing,
//! sealed artifact directories, indexes, incidents, adjudications and
//! retention.
//!
//! Layout under the store root:
//!
//! ```text
//! store/<uuid>/{aibom.json, output.bin, script.bin, config.bin,
//!               messages.jsonl, manifest.json, record.json, trace.json, session.json}
//! index/{by-session, by-output-hash, incidents, adjudications, purges}.jsonl
//! incidents/<session-id>/{incident.json, messages.jsonl}
//! keys/registry.json
//! registry/packages.json
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use hmac::{Hmac, KeyInit, Mac};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

use crate::agents::bus::{parse_log, to_jsonl, Adjudication, AdjudicationAction, AgentId, AgentMessage, Incident, IncidentCategory, Payload, SCHEMA_VERSION};
use crate::agents::session::{SessionConfig, SessionOutcome, RETENTION_FAILED};
use crate::agents::SupervisorDecision;
use crate::canonical::{sha256_hex, to_canonical_bytes};
use crate::model::{validate_for_seal, AibomDocument, ValidationReport};
use crate::redact::{redact, ViewTier};
use crate::registry::{PackageRegistry, RegistryError};
use crate::workload::GroundTruthTrace;

pub const AIBOM_FILE: &str = "aibom.json";
pub const OUTPUT_FILE: &str = "output.bin";
pub const SCRIPT_FILE: &str = "script.bin";
pub const CONFIG_FILE: &str = "config.bin";
pub const MESSAGES_FILE: &str = "messages.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORD_FILE: &str = "record.json";
pub const TRACE_FILE: &str = "trace.json";
pub const SESSION_FILE: &str = "session.json";
pub const INCIDENT_FILE: &str = "incident.json";

const BY_SESSION: &str = "by-session.jsonl";
const BY_OUTPUT: &str = "by-output-hash.jsonl";
const INCIDENTS: &str = "incidents.jsonl";
const ADJUDICATIONS: &str = "adjudications.jsonl";
const PURGES: &str = "purges.jsonl";
const SEAL_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store conflict: {0}")]
    StoreConflict(String),
    #[error("verification failure for {session_id}: {}", problems.join("; "))]
    VerificationFailure { session_id: String, problems: Vec<String> },
    #[error("session {0} failed closed and cannot be sealed")]
    FailClosedSession(String),
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("document cannot be sealed: {0}")]
    InvalidDocument(ValidationReport),
    #[error("adjudication rejected: {0}")]
    AdjudicationRejected(String),
    #[error("signing key {0} is not in the key registry")]
    UnknownKey(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// SHA-256 over the four parts, each preceded by its length as 8 big-endian
/// bytes, in the order SBOM, output, script, config. Lowercase hex.
pub fn composite_hash(sbom: &[u8], output: &[u8], script: &[u8], config: &[u8]) -> String {
    let mut hasher = Sha256::new();
    for part in [sbom, output, script, config] {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// The SBOM part of the composite hash: canonical document bytes with the
/// composite hash field removed.
pub fn sbom_bytes(doc: &AibomDocument) -> Vec<u8> {
    to_canonical_bytes(&doc.without_composite_hash()).expect("document serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetentionClass {
    ReleasedOutput,
    FailedWithdrawn,
}

impl RetentionClass {
    pub fn of(doc: &AibomDocument) -> Self {
        if doc.deployment_extensions.retention_class == RETENTION_FAILED {
            RetentionClass::FailedWithdrawn
        } else {
            RetentionClass::ReleasedOutput
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub key_id: String,
    /// HMAC-SHA-256 over [`SessionRecord::signing_payload`], hex.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexKeys {
    pub session_id: String,
    pub output_file_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub session_id: String,
    pub workload_id: String,
    pub composite_hash: String,
    /// Relative to the store root.
    pub store_path: String,
    pub index_keys: IndexKeys,
    pub signature: Signature,
    pub redaction_manifest_hash: String,
    pub messages_sha256: String,
    pub trace_sha256: String,
    pub session_sha256: String,
    pub retention_class: RetentionClass,
    pub timestamp: String,
}

impl SessionRecord {
    pub fn signing_payload(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}",
            self.session_id,
            self.composite_hash,
            self.index_keys.output_file_hash,
            self.messages_sha256,
            self.redaction_manifest_hash,
            self.trace_sha256,
            self.session_sha256
        )
    }
}

/// One line of `by-session.jsonl` and `by-output-hash.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub session_id: String,
    pub output_file_hash: String,
    pub composite_hash: String,
    pub store_path: String,
    pub retention_class: RetentionClass,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRow {
    pub session_id: String,
    pub workload_id: String,
    pub timestamp: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationRecord {
    pub session_id: String,
    pub adjudication: Adjudication,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdjudicationOutcome {
    Recorded(AdjudicationRecord),
    /// An identical submission was already on file.
    AlreadyRecorded(AdjudicationRecord),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurgeAction {
    pub session_id: String,
    pub store_path: String,
    pub composite_hash: String,
    pub retention_class: RetentionClass,
    pub purged_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetentionPolicy {
    pub released_days: i64,
    pub failed_days: i64,
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        Self {
            released_days: 90,
            failed_days: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRegistry {
    /// Key id to hex-encoded key.
    pub keys: BTreeMap<String, String>,
}

type HmacSha256 = Hmac<Sha256>;

pub fn hmac_hex(key: &[u8], message: &[u8]) -> String {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(message);
    hex::encode(mac.finalize().into_bytes())
}

/// Two-party rule for full-document access: at least two distinct tokens,
/// each on the authorised list.
pub fn two_party_authorized<S: AsRef<str>>(presented: &[S], authorised: &[String]) -> bool {
    let mut valid: Vec<&str> = presented
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !t.is_empty() && authorised.iter().any(|a| a == t))
        .collect();
    valid.sort_unstable();
    valid.dedup();
    valid.len() >= 2
}

/// Everything needed to seal one session.
#[derive(Debug, Clone, Copy)]
pub struct SealInput<'a> {
    pub document: &'a AibomDocument,
    pub output: &'a [u8],
    pub script: &'a [u8],
    pub config: &'a [u8],
    pub messages: &'a [AgentMessage],
    pub trace: &'a GroundTruthTrace,
    pub session: &'a SessionConfig,
    pub workload_id: &'a str,
}

/// Raw artifacts of a sealed session, read without interpretation so audits
/// can report on missing or damaged parts.
#[derive(Debug, Clone)]
pub struct StoredSession {
    pub row: IndexRow,
    pub dir: PathBuf,
    pub parts: BTreeMap<&'static str, Result<Vec<u8>, String>>,
}

impl StoredSession {
    pub fn part(&self, name: &str) -> Result<&[u8], String> {
        match self.parts.get(name) {
            Some(Ok(bytes)) => Ok(bytes),
            Some(Err(e)) => Err(e.clone()),
            None => Err(format!("{name}: not a store artifact")),
        }
    }

    pub fn parse<T: DeserializeOwned>(&self, name: &str) -> Result<T, String> {
        let bytes = self.part(name)?;
        serde_json::from_slice(bytes).map_err(|e| format!("{name}: {e}"))
    }

    pub fn document(&self) -> Result<AibomDocument, String> {
        self.parse(AIBOM_FILE)
    }

    pub fn record(&self) -> Result<SessionRecord, String> {
        self.parse(RECORD_FILE)
    }

    pub fn messages(&self) -> Result<Vec<AgentMessage>, String> {
        let bytes = self.part(MESSAGES_FILE)?;
        let text = std::str::from_utf8(bytes).map_err(|e| format!("{MESSAGES_FILE}: {e}"))?;
        parse_log(text).map_err(|e| format!("{MESSAGES_FILE}: {e}"))
    }
}

pub const PART_NAMES: [&str; 9] = [
    AIBOM_FILE,
    OUTPUT_FILE,
    SCRIPT_FILE,
    CONFIG_FILE,
    MESSAGES_FILE,
    MANIFEST_FILE,
    RECORD_FILE,
    TRACE_FILE,
    SESSION_FILE,
];

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["store", "index", "keys", "incidents", "registry"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn registry_dir(&self) -> PathBuf {
        self.root.join("registry")
    }

    fn index_path(&self, name: &str) -> PathBuf {
        self.root.join("index").join(name)
    }

    fn read_jsonl<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, StoreError> {
        let path = self.index_path(name);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(io_err(&path, e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| io_err(&path, e)))
            .collect()
    }

    /// Append one row: copy, extend, then rename over the original.
    fn append_jsonl<T: Serialize>(&self, name: &str, row: &T) -> Result<(), StoreError> {
        let path = self.index_path(name);
        let mut body = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => vec![],
            Err(e) => return Err(io_err(&path, e)),
        };
        body.extend(serde_json::to_vec(row).expect("row serializes"));
        body.push(b'\n');
        write_then_rename(&path, &body)
    }

    fn load_keys(&self) -> Result<KeyRegistry, StoreError> {
        let path = self.root.join("keys").join("registry.json");
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| io_err(&path, e)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(KeyRegistry::default()),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    fn save_keys(&self, keys: &KeyRegistry) -> Result<(), StoreError> {
        let path = self.root.join("keys").join("registry.json");
        write_then_rename(&path, &serde_json::to_vec_pretty(keys).expect("keys serialize"))
    }

    pub fn sessions(&self) -> Result<Vec<IndexRow>, StoreError> {
        self.read_jsonl(BY_SESSION)
    }

    pub fn find(&self, session_id: &str) -> Result<IndexRow, StoreError> {
        self.sessions()?
            .into_iter()
            .find(|r| r.session_id == session_id)
            .ok_or_else(|| StoreError::SessionNotFound(session_id.into()))
    }

    pub fn find_by_output_hash(&self, output_hash: &str) -> Result<Vec<IndexRow>, StoreError> {
        Ok(self
            .read_jsonl::<IndexRow>(BY_OUTPUT)?
            .into_iter()
            .filter(|r| r.output_file_hash == output_hash)
            .collect())
    }

    pub fn incidents(&self) -> Result<Vec<IncidentRow>, StoreError> {
        self.read_jsonl(INCIDENTS)
    }

    pub fn incident(&self, session_id: &str) -> Result<Option<Incident>, StoreError> {
        if !self.incidents()?.iter().any(|r| r.session_id == session_id) {
            return Ok(None);
        }
        let path = self.root.join("incidents").join(session_id).join(INCIDENT_FILE);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_slice(&bytes).map(Some).map_err(|e| io_err(&path, e))
    }

    pub fn purges(&self) -> Result<Vec<PurgeAction>, StoreError> {
        self.read_jsonl(PURGES)
    }

    fn session_id_taken(&self, session_id: &str) -> Result<bool, StoreError> {
        Ok(self.sessions()?.iter().any(|r| r.session_id == session_id)
            || self.incidents()?.iter().any(|r| r.session_id == session_id))
    }

    /// Seal a session the supervisor let through and publish its environment
    /// catalogue to the store's package registry.
    pub fn seal_outcome(&self, outcome: &SessionOutcome, session: &SessionConfig) -> Result<SessionRecord, StoreError> {
        if let SupervisorDecision::FailClosed(_) = outcome.decision {
            return Err(StoreError::FailClosedSession(outcome.session_id.clone()));
        }
        let document = outcome
            .document
            .as_ref()
            .ok_or_else(|| StoreError::FailClosedSession(outcome.session_id.clone()))?;
        let spec = &outcome.execution.spec;
        let mut registry = PackageRegistry::load(&self.registry_dir())?;
        let catalogue: Vec<_> = spec
            .header
            .declared_components
            .iter()
            .chain(&spec.header.installed)
            .cloned()
            .collect();
        registry.publish(&catalogue)?;
        let record = self.seal_session(&SealInput {
            document,
            output: &outcome.execution.output,
            script: &spec.script_bytes(),
            config: &spec.config_bytes(),
            messages: &outcome.messages,
            trace: &outcome.execution.trace,
            session,
            workload_id: &spec.header.workload_id,
        })?;
        registry.save(&self.registry_dir())?;
        Ok(record)
    }

    pub fn seal_session(&self, input: &SealInput<'_>) -> Result<SessionRecord, StoreError> {
        self.seal_session_with(input, &mut Uuid::new_v4)
    }

    pub(crate) fn seal_session_with(
        &self,
        input: &SealInput<'_>,
        next_id: &mut dyn FnMut() -> Uuid,
    ) -> Result<SessionRecord, StoreError> {
        let report = validate_for_seal(input.document);
        if !report.is_empty() {
            return Err(StoreError::InvalidDocument(report));
        }
        let session_id = input.document.metadata.session_id.clone();
        if self.session_id_taken(&session_id)? {
            return Err(StoreError::StoreConflict(format!("session {session_id} already stored")));
        }

        let hash = composite_hash(&sbom_bytes(input.document), input.output, input.script, input.config);
        let mut sealed = input.document.clone();
        sealed.metadata.composite_hash = Some(hash.clone());
        let aibom = to_canonical_bytes(&sealed).expect("document serializes");
        let (_, manifest) = redact(&sealed, ViewTier::OperationalReviewer);
        let messages = to_jsonl(input.messages).into_bytes();
        let trace = serde_json::to_vec_pretty(input.trace).expect("trace serializes");
        let session = serde_json::to_vec_pretty(input.session).expect("session serializes");

        let mut keys = self.load_keys()?;
        let key_id = format!("key-{session_id}");
        if keys.keys.contains_key(&key_id) {
            return Err(StoreError::StoreConflict(format!("signing key {key_id} already issued")));
        }
        let key: [u8; 32] = rand::random();
        keys.keys.insert(key_id.clone(), hex::encode(key));

        let dir = (0..SEAL_ATTEMPTS)
            .find_map(|_| {
                let id = next_id();
                let dir = self.root.join("store").join(id.to_string());
                fs::create_dir(&dir).ok().map(|_| (id, dir))
            })
            .ok_or_else(|| StoreError::StoreConflict(format!("no free store directory after {SEAL_ATTEMPTS} attempts")))?;
        let (uuid, dir) = dir;

        let mut record = SessionRecord {
            session_id: session_id.clone(),
            workload_id: input.workload_id.to_string(),
            composite_hash: hash,
            store_path: format!("store/{uuid}"),
            index_keys: IndexKeys {
                session_id: session_id.clone(),
                output_file_hash: sealed.deployment_extensions.output_file_hash.clone(),
            },
            signature: Signature {
                key_id: key_id.clone(),
                digest: String::new(),
            },
            redaction_manifest_hash: manifest.manifest_hash.clone(),
            messages_sha256: sha256_hex(&messages),
            trace_sha256: sha256_hex(&trace),
            session_sha256: sha256_hex(&session),
            retention_class: RetentionClass::of(&sealed),
            timestamp: sealed.metadata.timestamp.clone(),
        };
        record.signature.digest = hmac_hex(&key, record.signing_payload().as_bytes());
        self.save_keys(&keys)?;

        let files: [(&str, Vec<u8>); 9] = [
            (AIBOM_FILE, aibom),
            (OUTPUT_FILE, input.output.to_vec()),
            (SCRIPT_FILE, input.script.to_vec()),
            (CONFIG_FILE, input.config.to_vec()),
            (MESSAGES_FILE, messages),
            (MANIFEST_FILE, to_canonical_bytes(&manifest).expect("manifest serializes")),
            (TRACE_FILE, trace),
            (SESSION_FILE, session),
            (RECORD_FILE, serde_json::to_vec_pretty(&record).expect("record serializes")),
        ];
        for (name, bytes) in &files {
            write_new(&dir.join(name), bytes)?;
        }

        let row = IndexRow {
            session_id,
            output_file_hash: record.index_keys.output_file_hash.clone(),
            composite_hash: record.composite_hash.clone(),
            store_path: record.store_path.clone(),
            retention_class: record.retention_class,
            timestamp: record.timestamp.clone(),
        };
        self.append_jsonl(BY_SESSION, &row)?;
        self.append_jsonl(BY_OUTPUT, &row)?;
        self.verify(&record.session_id)?;
        Ok(record)
    }

    pub fn load(&self, session_id: &str) -> Result<StoredSession, StoreError> {
        let row = self.find(session_id)?;
        let dir = self.root.join(&row.store_path);
        let parts = PART_NAMES
            .iter()
            .map(|name| {
                let path = dir.join(name);
                (*name, fs::read(&path).map_err(|e| format!("{name}: {e}")))
            })
            .collect();
        Ok(StoredSession { row, dir, parts })
    }

    /// Every integrity problem with a sealed session: composite hash against
    /// document, record and index; canonical form of the stored document;
    /// message log, trace and session digests; manifest digest; signature.
    pub fn integrity_problems(&self, stored: &StoredSession) -> Vec<String> {
        let mut problems = Vec::new();
        let record = match stored.record() {
            Ok(r) => Some(r),
            Err(e) => {
                problems.push(e);
                None
            }
        };
        let parts: Result<Vec<&[u8]>, String> =
            [OUTPUT_FILE, SCRIPT_FILE, CONFIG_FILE].iter().map(|n| stored.part(n)).collect();
        match (stored.document(), parts) {
            (Ok(doc), Ok(parts)) => {
                let raw = stored.part(AIBOM_FILE).unwrap_or_default();
                if to_canonical_bytes(&doc).expect("document serializes") != raw {
                    problems.push(format!("{AIBOM_FILE}: stored bytes are not the canonical form"));
                }
                let recomputed = composite_hash(&sbom_bytes(&doc), parts[0], parts[1], parts[2]);
                if doc.metadata.composite_hash.as_deref() != Some(recomputed.as_str()) {
                    problems.push(format!(
                        "recomputed composite hash {recomputed} differs from document value {}",
                        doc.metadata.composite_hash.as_deref().unwrap_or("<none>")
                    ));
                }
                if stored.row.composite_hash != recomputed {
                    problems.push(format!(
                        "recomputed composite hash {recomputed} differs from index value {}",
                        stored.row.composite_hash
                    ));
                }
                if let Some(r) = &record {
                    if r.composite_hash != recomputed {
                        problems.push(format!("recomputed composite hash differs from record value {}", r.composite_hash));
                    }
                }
            }
            (doc, parts) => {
                problems.extend(doc.err());
                problems.extend(parts.err());
            }
        }
        if let Some(record) = &record {
            for (name, digest) in [
                (MESSAGES_FILE, &record.messages_sha256),
                (TRACE_FILE, &record.trace_sha256),
                (SESSION_FILE, &record.session_sha256),
            ] {
                match stored.part(name) {
                    Ok(bytes) if sha256_hex(bytes) != *digest => problems.push(format!("{name}: digest differs from record")),
                    Ok(_) => {}
                    Err(e) => problems.push(e),
                }
            }
            match stored.parse::<crate::redact::RedactionManifest>(MANIFEST_FILE) {
                Ok(m) if !m.hash_is_valid() || m.manifest_hash != record.redaction_manifest_hash => {
                    problems.push(format!("{MANIFEST_FILE}: manifest hash does not verify"));
                }
                Ok(_) => {}
                Err(e) => problems.push(e),
            }
            match self.verify_signature(record) {
                Ok(true) => {}
                Ok(false) => problems.push(format!("signature by {} does not verify", record.signature.key_id)),
                Err(e) => problems.push(e.to_string()),
            }
        }
        problems
    }

    pub fn verify_signature(&self, record: &SessionRecord) -> Result<bool, StoreError> {
        let keys = self.load_keys()?;
        let key = keys
            .keys
            .get(&record.signature.key_id)
            .and_then(|k| hex::decode(k).ok())
            .ok_or_else(|| StoreError::UnknownKey(record.signature.key_id.clone()))?;
        Ok(hmac_hex(&key, record.signing_payload().as_bytes()) == record.signature.digest)
    }

    pub fn verify(&self, session_id: &str) -> Result<(), StoreError> {
        let stored = self.load(session_id)?;
        let problems = self.integrity_problems(&stored);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(StoreError::VerificationFailure {
                session_id: session_id.into(),
                problems,
            })
        }
    }

    /// Record a fail-closed session. No session record or sealed artifacts
    /// are written.
    pub fn record_incident(&self, outcome: &SessionOutcome, session: &SessionConfig) -> Result<IncidentRow, StoreError> {
        let SupervisorDecision::FailClosed(incident) = &outcome.decision else {
            return Err(StoreError::StoreConflict(format!("session {} did not fail closed", outcome.session_id)));
        };
        if self.session_id_taken(&outcome.session_id)? {
            return Err(StoreError::StoreConflict(format!("session {} already stored", outcome.session_id)));
        }
        let dir = self.root.join("incidents").join(&outcome.session_id);
        fs::create_dir(&dir).map_err(|e| match e.kind() {
            ErrorKind::AlreadyExists => StoreError::StoreConflict(format!("incident directory for {} exists", outcome.session_id)),
            _ => io_err(&dir, e),
        })?;
        write_new(&dir.join(INCIDENT_FILE), &serde_json::to_vec_pretty(incident).expect("incident serializes"))?;
        write_new(&dir.join(MESSAGES_FILE), to_jsonl(&outcome.messages).as_bytes())?;
        let row = IncidentRow {
            session_id: outcome.session_id.clone(),
            workload_id: outcome.execution.spec.header.workload_id.clone(),
            timestamp: session.timestamp.clone(),
            reason: incident.reason.clone(),
        };
        self.append_jsonl(INCIDENTS, &row)?;
        Ok(row)
    }

    pub fn adjudications(&self, session_id: &str) -> Result<Vec<AdjudicationRecord>, StoreError> {
        Ok(self
            .read_jsonl::<AdjudicationRecord>(ADJUDICATIONS)?
            .into_iter()
            .filter(|r| r.session_id == session_id)
            .collect())
    }

    /// Record a reviewer decision. Approving a fail-closed session is
    /// refused; resubmitting the same decision returns the stored record.
    pub fn adjudicate(&self, session_id: &str, adjudication: Adjudication) -> Result<AdjudicationOutcome, StoreError> {
        let failed_closed = self.incidents()?.iter().any(|r| r.session_id == session_id);
        if !failed_closed {
            self.find(session_id)?;
        }
        if failed_closed && adjudication.action == AdjudicationAction::Approve {
            return Err(StoreError::AdjudicationRejected(format!(
                "session {session_id} failed closed and cannot be approved"
            )));
        }
        if let Some(existing) = self.adjudications(session_id)?.into_iter().next() {
            let a = &existing.adjudication;
            let same = a.action == adjudication.action
                && a.reviewer_pseudonym == adjudication.reviewer_pseudonym
                && a.note == adjudication.note;
            return if same {
                Ok(AdjudicationOutcome::AlreadyRecorded(existing))
            } else {
                Err(StoreError::AdjudicationRejected(format!("session {session_id} is already adjudicated")))
            };
        }
        let record = AdjudicationRecord {
            session_id: session_id.into(),
            adjudication,
        };
        self.append_jsonl(ADJUDICATIONS, &record)?;
        Ok(AdjudicationOutcome::Recorded(record))
    }

    /// Session message log followed by adjudications as supervisor incident
    /// events, sequence numbers continuing.
    pub fn messages(&self, session_id: &str) -> Result<Vec<AgentMessage>, StoreError> {
        let mut messages = if self.incidents()?.iter().any(|r| r.session_id == session_id) {
            let path = self.root.join("incidents").join(session_id).join(MESSAGES_FILE);
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            parse_log(&text).map_err(|e| io_err(&path, e))?
        } else {
            self.load(session_id)?
                .messages()
                .map_err(|e| io_err(Path::new(session_id), e))?
        };
        let last_seq = messages.last().map_or(0, |m| m.seq);
        let at = messages.last().map_or(0, |m| m.at);
        for (seq, record) in (last_seq + 1..).zip(self.adjudications(session_id)?) {
            messages.push(AgentMessage {
                schema_version: SCHEMA_VERSION,
                seq,
                sender: AgentId::Supervisor,
                at,
                body: Payload::IncidentEvent(Incident {
                    category: IncidentCategory::Adjudication,
                    reason: format!("reviewer {:?}", record.adjudication.action).to_lowercase(),
                    details: vec![record.adjudication.note.clone()],
                    diff: None,
                    adjudication: Some(record.adjudication),
                }),
            });
        }
        Ok(messages)
    }

    /// Purge artifact directories past their retention window. Index rows
    /// and composite hashes stay; each purge is logged once.
    pub fn enforce_retention(&self, now: DateTime<Utc>, policy: &RetentionPolicy) -> Result<Vec<PurgeAction>, StoreError> {
        let done: Vec<String> = self.purges()?.into_iter().map(|p| p.session_id).collect();
        let mut actions = Vec::new();
        for row in self.sessions()? {
            if done.contains(&row.session_id) {
                continue;
            }
            let Ok(sealed_at) = DateTime::parse_from_rfc3339(&row.timestamp) else {
                continue;
            };
            let days = match row.retention_class {
                RetentionClass::ReleasedOutput => policy.released_days,
                RetentionClass::FailedWithdrawn => policy.failed_days,
            };
            if now < sealed_at.with_timezone(&Utc) + Duration::days(days) {
                continue;
            }
            let dir = self.root.join(&row.store_path);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            }
            let action = PurgeAction {
                session_id: row.session_id.clone(),
                store_path: row.store_path.clone(),
                composite_hash: row.composite_hash.clone(),
                retention_class: row.retention_class,
                purged_at: now.to_rfc3339(),
            };
            self.append_jsonl(PURGES, &action)?;
            actions.push(action);
        }
        Ok(actions)
    }
}

fn write_new(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut file = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| match e.kind() {
            ErrorKind::AlreadyExists => StoreError::StoreConflict(format!("{} already exists", path.display())),
            _ => io_err(path, e),
        })?;
    file.write_all(bytes).map_err(|e| io_err(path, e))
}

fn write_then_rename(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisory::FeedSet;
    use crate::agents::run_session;
    use crate::workload::WorkloadSpec;
    use proptest::prelude::*;

    const EMPTY_GOLDEN: &str = "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925";

    #[test]
    fn empty_parts_match_oracle() {
        assert_eq!(composite_hash(b"", b"", b"", b""), EMPTY_GOLDEN);
        assert_eq!(
            composite_hash(b"sbom", b"out", b"script", b"cfg"),
            "af685bb2853ba51c5f7b5613d6dafc5672064029d40dcbe832a41d23585de35c"
        );
    }

    #[test]
    fn swapping_parts_changes_digest() {
        assert_eq!(
            composite_hash(b"sbom", b"script", b"out", b"cfg"),
            "6c19e116e41795be0467a862dd869a11fdb652e964fbf28b3a68fbe4e596cbba"
        );
    }

    proptest! {
        #[test]
        fn repartitioning_changes_digest(
            stream in proptest::collection::vec(any::<u8>(), 0..64),
            a in proptest::collection::vec(0usize..64, 3),
            b in proptest::collection::vec(0usize..64, 3),
        ) {
            let split = |cuts: &[usize]| {
                let mut c: Vec<usize> = cuts.iter().map(|x| x % (stream.len() + 1)).collect();
                c.sort_unstable();
                (c[0], c[1], c[2])
            };
            let (a0, a1, a2) = split(&a);
            let (b0, b1, b2) = split(&b);
            let ha = composite_hash(&stream[..a0], &stream[a0..a1], &stream[a1..a2], &stream[a2..]);
            let hb = composite_hash(&stream[..b0], &stream[b0..b1], &stream[b1..b2], &stream[b2..]);
            prop_assert_eq!(ha == hb, (a0, a1, a2) == (b0, b1, b2));
        }
    }

    #[test]
    fn two_party_rule() {
        let ok = vec!["alpha".to_string(), "beta".to_string()];
        assert!(two_party_authorized(&["alpha", "beta"], &ok));
        assert!(!two_party_authorized(&["alpha", "alpha"], &ok));
        assert!(!two_party_authorized(&["alpha", "gamma"], &ok));
        assert!(!two_party_authorized::<&str>(&[], &ok));
    }

    fn outcome(name: &str, session: &str) -> (SessionOutcome, SessionConfig) {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/workloads");
        let spec = WorkloadSpec::from_jsonl(&fs::read_to_string(format!("{dir}/{name}.jsonl")).unwrap()).unwrap();
        let config = SessionConfig::new(session, "2025-03-01T12:00:00Z");
        (run_session(&spec, &FeedSet::default(), &config).unwrap(), config)
    }

    #[test]
    fn sealed_session_verifies_and_is_indexed_twice() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let (out, cfg) = outcome("logit-glm", "s1");
        let record = store.seal_outcome(&out, &cfg).unwrap();
        store.verify("s1").unwrap();
        assert!(store.verify_signature(&record).unwrap());
        assert_eq!(store.find("s1").unwrap().composite_hash, record.composite_hash);
        let by_hash = store.find_by_output_hash(&record.index_keys.output_file_hash).unwrap();
        assert_eq!(by_hash.len(), 1);
        assert_eq!(by_hash[0].session_id, "s1");
        let doc = store.load("s1").unwrap().document().unwrap();
        assert_eq!(doc.metadata.composite_hash.as_deref(), Some(record.composite_hash.as_str()));
        assert!(!PackageRegistry::load(&store.registry_dir()).unwrap().is_empty());
    }

    #[test]
    fn tampering_any_part_fails_verification() {
        for part in PART_NAMES {
            let tmp = tempfile::tempdir().unwrap();
            let store = Store::open(tmp.path()).unwrap();
            let (out, cfg) = outcome("logit-glm", "s1");
            store.seal_outcome(&out, &cfg).unwrap();
            let path = store.load("s1").unwrap().dir.join(part);
            let mut bytes = fs::read(&path).unwrap();
            let i = bytes.len() / 2;
            bytes[i] ^= 0x01;
            fs::write(&path, bytes).unwrap();
            assert!(
                matches!(store.verify("s1"), Err(StoreError::VerificationFailure { .. })),
                "{part} tamper undetected"
            );
        }
    }

    #[test]
    fn fail_closed_session_is_never_sealed() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let (out, cfg) = outcome("tampered-hash", "bad");
        assert!(matches!(store.seal_outcome(&out, &cfg), Err(StoreError::FailClosedSession(_))));
        store.record_incident(&out, &cfg).unwrap();
        assert!(store.sessions().unwrap().is_empty());
        assert!(store.incident("bad").unwrap().is_some());
        assert!(matches!(store.find("bad"), Err(StoreError::SessionNotFound(_))));
    }

    #[test]
    fn duplicate_session_and_uuid_collisions_conflict() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let (out, cfg) = outcome("logit-glm", "s1");
        store.seal_outcome(&out, &cfg).unwrap();
        assert!(matches!(store.seal_outcome(&out, &cfg), Err(StoreError::StoreConflict(_))));

        let (out2, cfg2) = outcome("logit-glm", "s2");
        let taken = Uuid::parse_str(store.find("s1").unwrap().store_path.trim_start_matches("store/")).unwrap();
        let doc = out2.document.as_ref().unwrap();
        let spec = &out2.execution.spec;
        let input = SealInput {
            document: doc,
            output: &out2.execution.output,
            script: &spec.script_bytes(),
            config: &spec.config_bytes(),
            messages: &out2.messages,
            trace: &out2.execution.trace,
            session: &cfg2,
            workload_id: "logit-glm",
        };
        let err = store.seal_session_with(&input, &mut || taken).unwrap_err();
        assert!(matches!(err, StoreError::StoreConflict(_)));
        let mut ids = [taken, Uuid::new_v4()].into_iter();
        store.seal_session_with(&input, &mut || ids.next().unwrap()).unwrap();
    }

    #[test]
    fn retention_purges_failed_keeps_lineage_and_is_idempotent() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let (out, cfg) = outcome("logit-glm", "kept");
        store.seal_outcome(&out, &cfg).unwrap();
        let (mut failed, cfg_f) = outcome("logit-glm", "withdrawn");
        let doc = failed.document.as_mut().unwrap();
        doc.deployment_extensions.retention_class = RETENTION_FAILED.into();
        store.seal_outcome(&failed, &cfg_f).unwrap();

        let now = DateTime::parse_from_rfc3339("2025-03-10T00:00:00Z").unwrap().with_timezone(&Utc);
        let actions = store.enforce_retention(now, &RetentionPolicy::default()).unwrap();
        assert_eq!(actions.len(), 1);
        assert_eq!(actions[0].session_id, "withdrawn");
        assert!(!tmp.path().join(&actions[0].store_path).exists());
        assert_eq!(store.find("withdrawn").unwrap().composite_hash, actions[0].composite_hash);
        assert!(store.enforce_retention(now, &RetentionPolicy::default()).unwrap().is_empty());

        let later = now + Duration::days(120);
        let actions = store.enforce_retention(later, &RetentionPolicy::default()).unwrap();
        assert_eq!(actions.iter().map(|a| a.session_id.as_str()).collect::<Vec<_>>(), ["kept"]);
    }

    fn adjudication(action: AdjudicationAction, note: &str) -> Adjudication {
        Adjudication {
            action,
            reviewer_pseudonym: "reviewer-3".into(),
            note: note.into(),
            recorded_at: "2025-03-02T09:00:00Z".into(),
        }
    }

    #[test]
    fn adjudication_rules() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let (bad, cfg) = outcome("tampered-hash", "bad");
        store.record_incident(&bad, &cfg).unwrap();
        assert!(matches!(
            store.adjudicate("bad", adjudication(AdjudicationAction::Approve, "ok")),
            Err(StoreError::AdjudicationRejected(_))
        ));
        let first = store.adjudicate("bad", adjudication(AdjudicationAction::Escalate, "check wheel")).unwrap();
        assert!(matches!(first, AdjudicationOutcome::Recorded(_)));
        let again = store.adjudicate("bad", adjudication(AdjudicationAction::Escalate, "check wheel")).unwrap();
        assert!(matches!(again, AdjudicationOutcome::AlreadyRecorded(_)));
        assert_eq!(store.adjudications("bad").unwrap().len(), 1);

        let log = store.messages("bad").unwrap();
        let last = log.last().unwrap();
        assert!(matches!(&last.body, Payload::IncidentEvent(i) if i.adjudication.is_some()));
        assert_eq!(last.seq, log.len() as u64);
        assert!(matches!(store.adjudicate("nope", adjudication(AdjudicationAction::Escalate, "")), Err(StoreError::SessionNotFound(_))));
    }
}
