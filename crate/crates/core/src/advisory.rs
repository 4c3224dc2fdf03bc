//! Advisory feeds: OSV/NVD-style mirror records, minimal CSAF documents, and
//! matching against AIBOM components.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{AibomDocument, Component};
use crate::version::{compare_versions, in_half_open_range};

#[derive(Debug, Error)]
pub enum AdvisoryError {
    #[error("malformed advisory: {0}")]
    MalformedAdvisory(String),
    #[error("cannot read feed {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse feed {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvisorySource {
    OsvMirror,
    NvdMirror,
    Csaf,
}

/// Affected versions of one package: `introduced <= v < fixed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffectedRange {
    /// Versionless package identity, e.g. `pkg:pypi/pandas`.
    pub package: String,
    pub introduced: String,
    pub fixed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Advisory {
    pub id: String,
    pub affected: Vec<AffectedRange>,
    pub severity: String,
    pub source: AdvisorySource,
    #[serde(default)]
    pub csaf_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remediation_note: Option<String>,
}

impl Advisory {
    pub fn validate(&self) -> Result<(), AdvisoryError> {
        if self.id.trim().is_empty() {
            return Err(AdvisoryError::MalformedAdvisory("empty advisory id".into()));
        }
        for range in &self.affected {
            if !range.package.starts_with("pkg:") || range.package.contains('@') {
                return Err(AdvisoryError::MalformedAdvisory(format!(
                    "{}: `{}` is not a versionless package url",
                    self.id, range.package
                )));
            }
            if compare_versions(&range.introduced, &range.fixed) == std::cmp::Ordering::Greater {
                return Err(AdvisoryError::MalformedAdvisory(format!(
                    "{}: range [{}, {}) is inverted",
                    self.id, range.introduced, range.fixed
                )));
            }
        }
        Ok(())
    }

    pub fn affects(&self, component: &Component) -> bool {
        let package = component.package_id();
        self.affected.iter().any(|r| {
            r.package == package && in_half_open_range(&component.version, &r.introduced, &r.fixed)
        })
    }
}

/// A component paired with an advisory that affects its version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvisoryMatch {
    pub component: Component,
    pub advisory: Advisory,
}

impl AdvisoryMatch {
    /// Stable reference written into `cveRefs`.
    pub fn reference(&self) -> String {
        format!("{}|{}", self.advisory.id, self.component.purl)
    }
}

/// Every (component, advisory) pair where the component version falls inside an
/// affected range, ordered by purl then advisory id.
pub fn match_advisories(doc: &AibomDocument, feed: &[Advisory]) -> Vec<AdvisoryMatch> {
    let mut matches: Vec<AdvisoryMatch> = doc
        .components
        .iter()
        .flat_map(|component| {
            feed.iter()
                .filter(|advisory| advisory.affects(component))
                .map(|advisory| AdvisoryMatch {
                    component: component.clone(),
                    advisory: advisory.clone(),
                })
        })
        .collect();
    matches.sort_by(|a, b| {
        (a.component.purl.to_string(), &a.advisory.id).cmp(&(b.component.purl.to_string(), &b.advisory.id))
    });
    matches.dedup_by(|a, b| a.component.purl == b.component.purl && a.advisory.id == b.advisory.id);
    matches
}

fn field<'a>(value: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(value, |v, key| v.get(*key))
}

fn required_str<'a>(value: &'a Value, path: &[&str]) -> Result<&'a str, AdvisoryError> {
    field(value, path)
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| AdvisoryError::MalformedAdvisory(format!("missing `{}`", path.join("."))))
}

/// Convert a minimal CSAF document (tracking id, product tree of package
/// ranges, one vulnerability with notes) into an [`Advisory`].
pub fn normalize_csaf(record: &Value) -> Result<Advisory, AdvisoryError> {
    let document_id = required_str(record, &["document", "tracking", "id"])?;

    let products = field(record, &["product_tree", "products"])
        .and_then(Value::as_array)
        .filter(|p| !p.is_empty())
        .ok_or_else(|| AdvisoryError::MalformedAdvisory("missing `product_tree.products`".into()))?;

    let mut affected = Vec::new();
    for product in products {
        let package = required_str(product, &["package"])?;
        let versions = product
            .get("versions")
            .and_then(Value::as_array)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| AdvisoryError::MalformedAdvisory(format!("product {package} has no versions")))?;
        for range in versions {
            affected.push(AffectedRange {
                package: package.to_string(),
                introduced: required_str(range, &["introduced"])?.to_string(),
                fixed: required_str(range, &["fixed"])?.to_string(),
            });
        }
    }

    let vulnerabilities = record
        .get("vulnerabilities")
        .and_then(Value::as_array)
        .ok_or_else(|| AdvisoryError::MalformedAdvisory("missing `vulnerabilities`".into()))?;
    let [vulnerability] = vulnerabilities.as_slice() else {
        return Err(AdvisoryError::MalformedAdvisory(format!(
            "expected exactly one vulnerability, found {}",
            vulnerabilities.len()
        )));
    };
    let cve = required_str(vulnerability, &["cve"])?;
    let has_notes = vulnerability
        .get("notes")
        .and_then(Value::as_array)
        .is_some_and(|notes| notes.iter().any(|n| n.get("text").and_then(Value::as_str).is_some()));
    if !has_notes {
        return Err(AdvisoryError::MalformedAdvisory("vulnerability has no notes".into()));
    }
    let severity = vulnerability
        .get("severity")
        .and_then(Value::as_str)
        .unwrap_or("unknown")
        .to_string();
    let remediation_note = vulnerability
        .get("remediations")
        .and_then(Value::as_array)
        .and_then(|r| r.first())
        .and_then(|r| r.get("details"))
        .and_then(Value::as_str)
        .map(str::to_string);

    let advisory = Advisory {
        id: cve.to_string(),
        affected,
        severity,
        source: AdvisorySource::Csaf,
        csaf_refs: vec![document_id.to_string()],
        remediation_note,
    };
    advisory.validate()?;
    Ok(advisory)
}

/// Advisories loaded from one `--feed` argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feed {
    pub name: String,
    pub advisories: Vec<Advisory>,
}

impl Feed {
    /// Parse either a JSON array of advisories or a single CSAF document.
    pub fn from_json(name: impl Into<String>, value: &Value) -> Result<Self, AdvisoryError> {
        let advisories = if value.get("document").is_some() {
            vec![normalize_csaf(value)?]
        } else {
            let advisories: Vec<Advisory> = serde_json::from_value(value.clone())
                .map_err(|e| AdvisoryError::MalformedAdvisory(e.to_string()))?;
            for advisory in &advisories {
                advisory.validate()?;
            }
            advisories
        };
        Ok(Self {
            name: name.into(),
            advisories,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AdvisoryError> {
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| AdvisoryError::Io {
            path: display.clone(),
            source,
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|source| AdvisoryError::Parse {
            path: display.clone(),
            source,
        })?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or(display);
        Self::from_json(name, &value)
    }
}

/// The union of several feeds, remembering which feeds reported each id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedSet {
    advisories: Vec<Advisory>,
    reported_by: BTreeMap<String, BTreeSet<String>>,
    feed_count: usize,
}

impl FeedSet {
    pub fn new(feeds: &[Feed]) -> Self {
        let mut merged: BTreeMap<String, Advisory> = BTreeMap::new();
        let mut reported_by: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for feed in feeds {
            for advisory in &feed.advisories {
                reported_by
                    .entry(advisory.id.clone())
                    .or_default()
                    .insert(feed.name.clone());
                merged
                    .entry(advisory.id.clone())
                    .and_modify(|existing| {
                        for r in &advisory.csaf_refs {
                            if !existing.csaf_refs.contains(r) {
                                existing.csaf_refs.push(r.clone());
                            }
                        }
                    })
                    .or_insert_with(|| advisory.clone());
            }
        }
        Self {
            advisories: merged.into_values().collect(),
            reported_by,
            feed_count: feeds.len(),
        }
    }

    pub fn advisories(&self) -> &[Advisory] {
        &self.advisories
    }

    pub fn feed_count(&self) -> usize {
        self.feed_count
    }

    /// With two or more feeds supplied, an advisory seen in only one of them is
    /// uncorroborated. Returns the single reporting feed in that case.
    pub fn uncorroborated_source(&self, advisory_id: &str) -> Option<&str> {
        if self.feed_count < 2 {
            return None;
        }
        let sources = self.reported_by.get(advisory_id)?;
        match sources.len() {
            1 => sources.iter().next().map(String::as_str),
            _ => None,
        }
    }
}
