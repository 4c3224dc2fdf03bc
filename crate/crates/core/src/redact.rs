//! Tiered views of an AIBOM document with verifiable redaction manifests.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::{sha256_hex, to_canonical_bytes};
use crate::model::AibomDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewTier {
    OperationalReviewer,
    SecurityAuditor,
    Administrator,
}

impl ViewTier {
    /// Tiers that expose the unredacted document.
    pub fn is_full(self) -> bool {
        !matches!(self, ViewTier::OperationalReviewer)
    }
}

impl std::str::FromStr for ViewTier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reviewer" | "operational-reviewer" => Ok(ViewTier::OperationalReviewer),
            "auditor" | "security-auditor" => Ok(ViewTier::SecurityAuditor),
            "admin" | "administrator" => Ok(ViewTier::Administrator),
            other => Err(format!("unknown view tier `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedactionAction {
    Hashed,
    Elided,
}

/// `path` is a dot-separated path into the camelCase JSON document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RedactedField {
    pub path: String,
    pub action: RedactionAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RedactionManifest {
    pub view_tier: ViewTier,
    pub redacted_fields: Vec<RedactedField>,
    pub manifest_hash: String,
}

impl RedactionManifest {
    pub fn new(view_tier: ViewTier, mut redacted_fields: Vec<RedactedField>) -> Self {
        redacted_fields.sort();
        let manifest_hash = sha256_hex(&to_canonical_bytes(&redacted_fields).expect("fields serialize"));
        Self {
            view_tier,
            redacted_fields,
            manifest_hash,
        }
    }

    pub fn hash_is_valid(&self) -> bool {
        let mut sorted = self.redacted_fields.clone();
        sorted.sort();
        sorted == self.redacted_fields
            && sha256_hex(&to_canonical_bytes(&sorted).expect("fields serialize")) == self.manifest_hash
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RedactionError {
    #[error("manifest path `{0}` does not resolve")]
    UnresolvedPath(String),
    #[error("manifest path `{0}` cannot be hashed: not a string")]
    NotHashable(String),
    #[error("redacted view is not a valid document: {0}")]
    InvalidView(String),
}

/// `sha256:<hex>` of a redacted string value.
pub fn hash_token(value: &str) -> String {
    format!("sha256:{}", sha256_hex(value.as_bytes()))
}

/// Build the view for `tier`. Reviewers lose host identifiers (hashed) and
/// resource and load-order detail (elided); purls and versions always stay.
pub fn redact(doc: &AibomDocument, tier: ViewTier) -> (AibomDocument, RedactionManifest) {
    let mut view = doc.clone();
    if tier.is_full() {
        return (view, RedactionManifest::new(tier, vec![]));
    }
    let env = &mut view.environment;
    env.os_kernel = hash_token(&env.os_kernel);
    env.base_image_hash = hash_token(&env.base_image_hash);
    env.container_id = hash_token(&env.container_id);
    env.resource_constraints.clear();
    env.load_order.clear();
    let field = |path: &str, action| RedactedField {
        path: path.into(),
        action,
    };
    let manifest = RedactionManifest::new(
        tier,
        vec![
            field("environment.osKernel", RedactionAction::Hashed),
            field("environment.baseImageHash", RedactionAction::Hashed),
            field("environment.containerId", RedactionAction::Hashed),
            field("environment.resourceConstraints", RedactionAction::Elided),
            field("environment.loadOrder", RedactionAction::Elided),
        ],
    );
    (view, manifest)
}

/// Apply a manifest to the full document generically, path by path. The
/// result must equal the view [`redact`] produced for the same tier.
pub fn apply_manifest(doc: &AibomDocument, manifest: &RedactionManifest) -> Result<AibomDocument, RedactionError> {
    let mut value = serde_json::to_value(doc).expect("document serializes");
    for field in &manifest.redacted_fields {
        let target = field
            .path
            .split('.')
            .try_fold(&mut value, |v, key| v.get_mut(key))
            .ok_or_else(|| RedactionError::UnresolvedPath(field.path.clone()))?;
        *target = match field.action {
            RedactionAction::Hashed => {
                let s = target
                    .as_str()
                    .ok_or_else(|| RedactionError::NotHashable(field.path.clone()))?;
                Value::String(hash_token(s))
            }
            RedactionAction::Elided => match target {
                Value::Object(_) => Value::Object(Default::default()),
                Value::Array(_) => Value::Array(vec![]),
                Value::String(_) => Value::String(String::new()),
                _ => Value::Null,
            },
        };
    }
    serde_json::from_value(value).map_err(|e| RedactionError::InvalidView(e.to_string()))
}

/// Manifest paths whose value in `view` still equals the unredacted value.
pub fn leaked_fields(doc: &AibomDocument, view: &AibomDocument, manifest: &RedactionManifest) -> Vec<String> {
    let full = serde_json::to_value(doc).expect("document serializes");
    let shown = serde_json::to_value(view).expect("document serializes");
    manifest
        .redacted_fields
        .iter()
        .filter(|f| {
            let lookup = |v: &Value| f.path.split('.').try_fold(v, |v, k| v.get(k)).cloned();
            let original = lookup(&full);
            let empty = matches!(&original, Some(Value::Object(m)) if m.is_empty())
                || matches!(&original, Some(Value::Array(a)) if a.is_empty());
            !empty && original == lookup(&shown)
        })
        .map(|f| f.path.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::to_canonical_bytes;
    use crate::model::fixtures::{component, document};

    fn doc() -> AibomDocument {
        let mut d = document(
            vec![component("pkg:pypi/a@1.0.0", "a"), component("pkg:cran/b@2.1-3", "b")],
            vec![("pkg:pypi/a@1.0.0", "pkg:cran/b@2.1-3")],
        );
        d.environment.load_order = vec!["pkg:pypi/a@1.0.0".parse().unwrap()];
        d
    }

    #[test]
    fn reviewer_view_hashes_kernel_and_keeps_purls() {
        let d = doc();
        let (view, manifest) = redact(&d, ViewTier::OperationalReviewer);
        assert_eq!(view.environment.os_kernel, hash_token("5.15.0-91-generic"));
        assert_eq!(view.components, d.components);
        assert!(view.environment.load_order.is_empty());
        assert_eq!(manifest.redacted_fields.len(), 5);
        assert!(manifest.hash_is_valid());
    }

    #[test]
    fn auditor_view_is_identity() {
        let d = doc();
        let (view, manifest) = redact(&d, ViewTier::SecurityAuditor);
        assert_eq!(view, d);
        assert!(manifest.redacted_fields.is_empty());
    }

    #[test]
    fn manifest_replays_to_identical_bytes() {
        let d = doc();
        for tier in [ViewTier::OperationalReviewer, ViewTier::SecurityAuditor, ViewTier::Administrator] {
            let (view, manifest) = redact(&d, tier);
            let replayed = apply_manifest(&d, &manifest).unwrap();
            assert_eq!(to_canonical_bytes(&replayed).unwrap(), to_canonical_bytes(&view).unwrap());
        }
    }

    #[test]
    fn reviewer_view_leaks_nothing() {
        let d = doc();
        let (view, manifest) = redact(&d, ViewTier::OperationalReviewer);
        assert!(leaked_fields(&d, &view, &manifest).is_empty());
        assert_eq!(leaked_fields(&d, &d, &manifest).len(), 5);
    }

    #[test]
    fn tampered_manifest_hash_is_detected() {
        let (_, mut manifest) = redact(&doc(), ViewTier::OperationalReviewer);
        manifest.redacted_fields.pop();
        assert!(!manifest.hash_is_valid());
    }

    #[test]
    fn unknown_path_is_an_error() {
        let manifest = RedactionManifest::new(
            ViewTier::OperationalReviewer,
            vec![RedactedField {
                path: "environment.nope".into(),
                action: RedactionAction::Elided,
            }],
        );
        assert!(matches!(apply_manifest(&doc(), &manifest), Err(RedactionError::UnresolvedPath(_))));
    }
}
