//! Phase-tagged inventories, their diffs, and the reconciling merge.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_component, Component, ValidationReport};
use crate::purl::Purl;

#[derive(Debug, Error, PartialEq)]
pub enum SnapshotError {
    #[error("phase order violation: {0}")]
    PhaseOrderViolation(String),
    #[error("snapshot contains invalid components: {0}")]
    InvalidComponents(ValidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotPhase {
    Baseline,
    Mid,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotSource {
    DeclaredScan,
    Telemetry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub phase: SnapshotPhase,
    pub captured_at: u64,
    /// Sorted by purl, at most one version per package.
    pub components: Vec<Component>,
    pub source: SnapshotSource,
}

impl Snapshot {
    pub fn purls(&self) -> BTreeSet<Purl> {
        self.components.iter().map(|c| c.purl.clone()).collect()
    }
}

/// Enforces baseline → mid → final capture order within one session.
#[derive(Debug, Default)]
pub struct SnapshotCapture {
    last: Option<(SnapshotPhase, u64)>,
}

impl SnapshotCapture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn capture(
        &mut self,
        phase: SnapshotPhase,
        captured_at: u64,
        source: SnapshotSource,
        components: &[Component],
    ) -> Result<Snapshot, SnapshotError> {
        let expected = match self.last {
            None => SnapshotPhase::Baseline,
            Some((SnapshotPhase::Baseline, _)) => SnapshotPhase::Mid,
            Some((SnapshotPhase::Mid, _)) => SnapshotPhase::Final,
            Some((SnapshotPhase::Final, _)) => {
                return Err(SnapshotError::PhaseOrderViolation("all three snapshots already captured".into()))
            }
        };
        if phase != expected {
            return Err(SnapshotError::PhaseOrderViolation(format!(
                "{phase:?} requested but {expected:?} is next"
            )));
        }
        let snapshot = capture_snapshot(phase, captured_at, source, components)?;
        self.last = Some((phase, captured_at));
        Ok(snapshot)
    }
}

/// Build a snapshot over the visible components. Later entries for the same
/// package replace earlier ones.
pub fn capture_snapshot(
    phase: SnapshotPhase,
    captured_at: u64,
    source: SnapshotSource,
    components: &[Component],
) -> Result<Snapshot, SnapshotError> {
    let mut report = ValidationReport::default();
    let mut by_package: BTreeMap<String, Component> = BTreeMap::new();
    for c in components {
        validate_component(c, &mut report);
        by_package.insert(c.package_id(), c.clone());
    }
    if !report.is_empty() {
        return Err(SnapshotError::InvalidComponents(report));
    }
    let mut components: Vec<Component> = by_package.into_values().collect();
    components.sort_by_key(|c| c.purl.to_string());
    Ok(Snapshot {
        phase,
        captured_at,
        components,
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VersionChange {
    pub package: String,
    pub old_version: String,
    pub new_version: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotDiff {
    pub added: BTreeSet<Purl>,
    pub removed: BTreeSet<Purl>,
    pub version_changed: BTreeSet<VersionChange>,
    pub hash_mismatched: BTreeSet<Purl>,
}

impl SnapshotDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty()
            && self.removed.is_empty()
            && self.version_changed.is_empty()
            && self.hash_mismatched.is_empty()
    }
}

pub fn diff_snapshots(earlier: &Snapshot, later: &Snapshot) -> Result<SnapshotDiff, SnapshotError> {
    if earlier.phase >= later.phase {
        return Err(SnapshotError::PhaseOrderViolation(format!(
            "cannot diff {:?} against earlier {:?}",
            later.phase, earlier.phase
        )));
    }
    Ok(diff_components(&earlier.components, &later.components))
}

/// Join two inventories by package identity.
pub fn diff_components(earlier: &[Component], later: &[Component]) -> SnapshotDiff {
    let index = |cs: &[Component]| -> BTreeMap<String, Component> {
        cs.iter().map(|c| (c.package_id(), c.clone())).collect()
    };
    let (before, after) = (index(earlier), index(later));
    let mut diff = SnapshotDiff::default();
    for (package, new) in &after {
        match before.get(package) {
            None => {
                diff.added.insert(new.purl.clone());
            }
            Some(old) if old.version != new.version => {
                diff.version_changed.insert(VersionChange {
                    package: package.clone(),
                    old_version: old.version.clone(),
                    new_version: new.version.clone(),
                });
            }
            Some(old) if old.sha256() != new.sha256() => {
                diff.hash_mismatched.insert(new.purl.clone());
            }
            Some(_) => {}
        }
    }
    for (package, old) in &before {
        if !after.contains_key(package) {
            diff.removed.insert(old.purl.clone());
        }
    }
    diff
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconciliationStatus {
    Merged,
    IntegrityViolation,
    ResyncRequired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationOutcome {
    pub status: ReconciliationStatus,
    /// Present only when the merge was accepted.
    pub merged_components: Option<Vec<Component>>,
    pub missing_fraction: f64,
    /// Expected packages absent from every snapshot.
    pub missing: Vec<String>,
    pub hash_mismatched: Vec<Purl>,
    /// Baseline against final, for reviewer drill-down.
    pub diff: SnapshotDiff,
    pub diagnostics: Vec<String>,
}

/// Maximum tolerated share of missing expected components, as a ratio
/// `MISSING_NUM / MISSING_DEN` compared exactly.
const MISSING_NUM: usize = 2;
const MISSING_DEN: usize = 100;

/// Merge the three snapshots and decide whether the result can be trusted.
///
/// Components are joined by package identity with the latest phase winning
/// version changes. The same purl observed with two digests is a mismatch.
/// `expected` is compared by package identity.
pub fn reconcile_and_merge(
    baseline: &Snapshot,
    mid: &Snapshot,
    final_: &Snapshot,
    expected: &BTreeSet<Purl>,
) -> ReconciliationOutcome {
    let mut diagnostics = Vec::new();
    let ordered = baseline.phase == SnapshotPhase::Baseline
        && mid.phase == SnapshotPhase::Mid
        && final_.phase == SnapshotPhase::Final
        && baseline.captured_at <= mid.captured_at
        && mid.captured_at <= final_.captured_at;
    if !ordered {
        diagnostics.push(format!(
            "phase metadata inconsistent: {:?}@{}, {:?}@{}, {:?}@{}",
            baseline.phase, baseline.captured_at, mid.phase, mid.captured_at, final_.phase, final_.captured_at
        ));
    }

    let mut merged: BTreeMap<String, Component> = BTreeMap::new();
    let mut digests: BTreeMap<Purl, Option<String>> = BTreeMap::new();
    let mut mismatched = BTreeSet::new();
    for snapshot in [baseline, mid, final_] {
        for c in &snapshot.components {
            let digest = c.sha256().map(str::to_string);
            match digests.get(&c.purl) {
                Some(seen) if *seen != digest => {
                    mismatched.insert(c.purl.clone());
                }
                Some(_) => {}
                None => {
                    digests.insert(c.purl.clone(), digest);
                }
            }
            merged.insert(c.package_id(), c.clone());
        }
    }
    for purl in &mismatched {
        diagnostics.push(format!("{purl} observed with conflicting SHA-256 digests"));
    }

    let expected_packages: BTreeSet<String> = expected.iter().map(Purl::package_id).collect();
    let missing: Vec<String> = expected_packages
        .iter()
        .filter(|p| !merged.contains_key(*p))
        .cloned()
        .collect();
    let missing_fraction = if expected_packages.is_empty() {
        0.0
    } else {
        missing.len() as f64 / expected_packages.len() as f64
    };
    let over_threshold = missing.len() * MISSING_DEN > expected_packages.len() * MISSING_NUM;
    if !missing.is_empty() {
        diagnostics.push(format!(
            "{} of {} expected components missing: {}",
            missing.len(),
            expected_packages.len(),
            missing.join(", ")
        ));
    }

    let status = if !ordered {
        ReconciliationStatus::ResyncRequired
    } else if over_threshold || !mismatched.is_empty() {
        ReconciliationStatus::IntegrityViolation
    } else {
        ReconciliationStatus::Merged
    };
    let merged_components = (status == ReconciliationStatus::Merged).then(|| {
        let mut cs: Vec<Component> = merged.into_values().collect();
        cs.sort_by_key(|c| c.purl.to_string());
        cs
    });
    ReconciliationOutcome {
        status,
        merged_components,
        missing_fraction,
        missing,
        hash_mismatched: mismatched.into_iter().collect(),
        diff: diff_components(&baseline.components, &final_.components),
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::component;
    use proptest::prelude::*;

    fn snap(phase: SnapshotPhase, at: u64, purls: &[&str]) -> Snapshot {
        let cs: Vec<Component> = purls.iter().map(|p| component(p, p)).collect();
        capture_snapshot(phase, at, SnapshotSource::Telemetry, &cs).unwrap()
    }

    fn purls(ps: &[&str]) -> BTreeSet<Purl> {
        ps.iter().map(|p| p.parse().unwrap()).collect()
    }

    #[test]
    fn capture_follows_phase_order() {
        let a = component("pkg:pypi/a@1", "a");
        let b = component("pkg:pypi/b@1", "b");
        let c = component("pkg:pypi/c@1", "c");
        let mut cap = SnapshotCapture::new();
        let base = cap
            .capture(SnapshotPhase::Baseline, 0, SnapshotSource::DeclaredScan, &[a.clone(), b.clone()])
            .unwrap();
        assert_eq!(base.components.len(), 2);
        assert!(matches!(
            cap.capture(SnapshotPhase::Final, 10, SnapshotSource::Telemetry, std::slice::from_ref(&a)),
            Err(SnapshotError::PhaseOrderViolation(_))
        ));
        let mid = cap
            .capture(SnapshotPhase::Mid, 5, SnapshotSource::Telemetry, &[a, b, c])
            .unwrap();
        assert_eq!(mid.components.len(), 3);
    }

    #[test]
    fn capture_rejects_invalid_components() {
        let mut bad = component("pkg:pypi/a@1", "a");
        bad.hashes.clear();
        assert!(matches!(
            capture_snapshot(SnapshotPhase::Baseline, 0, SnapshotSource::DeclaredScan, &[bad]),
            Err(SnapshotError::InvalidComponents(_))
        ));
    }

    #[test]
    fn diff_examples() {
        let d = diff_snapshots(
            &snap(SnapshotPhase::Baseline, 0, &["pkg:pypi/a@1"]),
            &snap(SnapshotPhase::Mid, 1, &["pkg:pypi/a@1", "pkg:pypi/b@2"]),
        )
        .unwrap();
        assert_eq!(d.added, purls(&["pkg:pypi/b@2"]));
        assert!(d.removed.is_empty() && d.version_changed.is_empty() && d.hash_mismatched.is_empty());

        let d = diff_snapshots(
            &snap(SnapshotPhase::Baseline, 0, &["pkg:pypi/a@1"]),
            &snap(SnapshotPhase::Mid, 1, &["pkg:pypi/a@2"]),
        )
        .unwrap();
        assert_eq!(
            d.version_changed.into_iter().collect::<Vec<_>>(),
            vec![VersionChange {
                package: "pkg:pypi/a".into(),
                old_version: "1".into(),
                new_version: "2".into()
            }]
        );

        let earlier = snap(SnapshotPhase::Baseline, 0, &["pkg:pypi/a@1"]);
        let mut later = snap(SnapshotPhase::Final, 1, &[]);
        later.components = vec![component("pkg:pypi/a@1", "other-bytes")];
        let d = diff_snapshots(&earlier, &later).unwrap();
        assert_eq!(d.hash_mismatched, purls(&["pkg:pypi/a@1"]));
        assert!(d.added.is_empty());

        assert!(diff_snapshots(&later, &earlier).is_err());
    }

    #[test]
    fn clean_merge() {
        let b = snap(SnapshotPhase::Baseline, 0, &["pkg:pypi/a@1", "pkg:pypi/b@1"]);
        let m = snap(SnapshotPhase::Mid, 5, &["pkg:pypi/a@1", "pkg:pypi/b@1", "pkg:pypi/c@1"]);
        let f = snap(SnapshotPhase::Final, 9, &["pkg:pypi/a@1", "pkg:pypi/b@1", "pkg:pypi/c@1"]);
        let out = reconcile_and_merge(&b, &m, &f, &purls(&["pkg:pypi/a@1", "pkg:pypi/b@1"]));
        assert_eq!(out.status, ReconciliationStatus::Merged);
        assert_eq!(out.merged_components.unwrap().len(), 3);
        assert_eq!(out.missing_fraction, 0.0);
    }

    #[test]
    fn latest_phase_wins_version_change() {
        let b = snap(SnapshotPhase::Baseline, 0, &["pkg:cran/sdcMicro@5.5.0"]);
        let m = snap(SnapshotPhase::Mid, 5, &["pkg:cran/sdcMicro@5.5.0"]);
        let f = snap(SnapshotPhase::Final, 9, &["pkg:cran/sdcMicro@5.6.0"]);
        let out = reconcile_and_merge(&b, &m, &f, &purls(&["pkg:cran/sdcMicro@5.5.0"]));
        assert_eq!(out.status, ReconciliationStatus::Merged);
        let merged = out.merged_components.unwrap();
        assert_eq!(merged[0].version, "5.6.0");
        assert_eq!(out.diff.version_changed.len(), 1);
    }

    fn hundred(skip: usize) -> (Snapshot, Snapshot, Snapshot, BTreeSet<Purl>) {
        let all: Vec<String> = (0..100).map(|i| format!("pkg:pypi/p{i:03}@1.0")).collect();
        let present: Vec<&str> = all.iter().skip(skip).map(String::as_str).collect();
        let expected = all.iter().map(|p| p.parse().unwrap()).collect();
        (
            snap(SnapshotPhase::Baseline, 0, &present),
            snap(SnapshotPhase::Mid, 1, &present),
            snap(SnapshotPhase::Final, 2, &present),
            expected,
        )
    }

    #[test]
    fn three_percent_missing_is_integrity_violation() {
        let (b, m, f, e) = hundred(3);
        let out = reconcile_and_merge(&b, &m, &f, &e);
        assert_eq!(out.missing_fraction, 0.03);
        assert_eq!(out.status, ReconciliationStatus::IntegrityViolation);
        assert!(out.merged_components.is_none());
        assert_eq!(out.missing.len(), 3);
    }

    #[test]
    fn threshold_is_strict() {
        let (b, m, f, e) = hundred(2);
        let out = reconcile_and_merge(&b, &m, &f, &e);
        assert_eq!(out.missing_fraction, 0.02);
        assert_eq!(out.status, ReconciliationStatus::Merged);
    }

    #[test]
    fn conflicting_digest_is_integrity_violation() {
        let b = snap(SnapshotPhase::Baseline, 0, &["pkg:pypi/a@1"]);
        let m = snap(SnapshotPhase::Mid, 5, &["pkg:pypi/a@1"]);
        let mut f = m.clone();
        f.phase = SnapshotPhase::Final;
        f.captured_at = 9;
        f.components = vec![component("pkg:pypi/a@1", "tampered")];
        let out = reconcile_and_merge(&b, &m, &f, &purls(&["pkg:pypi/a@1"]));
        assert_eq!(out.status, ReconciliationStatus::IntegrityViolation);
        assert_eq!(out.hash_mismatched, vec!["pkg:pypi/a@1".parse::<Purl>().unwrap()]);
        assert!(!out.diagnostics.is_empty());
    }

    #[test]
    fn inconsistent_capture_times_require_resync() {
        let b = snap(SnapshotPhase::Baseline, 10, &["pkg:pypi/a@1"]);
        let m = snap(SnapshotPhase::Mid, 5, &["pkg:pypi/a@1"]);
        let f = snap(SnapshotPhase::Final, 9, &["pkg:pypi/a@1"]);
        let out = reconcile_and_merge(&b, &m, &f, &purls(&["pkg:pypi/a@1"]));
        assert_eq!(out.status, ReconciliationStatus::ResyncRequired);
        assert!(out.merged_components.is_none());
    }

    proptest! {
        #[test]
        fn merge_ignores_enumeration_order(
            n in 1usize..12,
            extra in 0usize..4,
            seed in any::<u64>(),
        ) {
            let base: Vec<Component> = (0..n).map(|i| component(&format!("pkg:pypi/p{i}@1.0"), &i.to_string())).collect();
            let mut later = base.clone();
            later.extend((0..extra).map(|i| component(&format!("pkg:pypi/late{i}@0.1"), &format!("l{i}"))));
            let expected: BTreeSet<Purl> = base.iter().map(|c| c.purl.clone()).collect();
            let mk = |phase, at, cs: &[Component]| capture_snapshot(phase, at, SnapshotSource::Telemetry, cs).unwrap();
            let reference = reconcile_and_merge(
                &mk(SnapshotPhase::Baseline, 0, &base),
                &mk(SnapshotPhase::Mid, 1, &later),
                &mk(SnapshotPhase::Final, 2, &later),
                &expected,
            );
            let mut shuffled_base = base.clone();
            let mut shuffled_later = later.clone();
            let k = (seed as usize) % shuffled_base.len().max(1);
            shuffled_base.rotate_left(k);
            shuffled_later.reverse();
            let permuted = reconcile_and_merge(
                &mk(SnapshotPhase::Baseline, 0, &shuffled_base),
                &mk(SnapshotPhase::Mid, 1, &shuffled_later),
                &mk(SnapshotPhase::Final, 2, &shuffled_later),
                &expected,
            );
            prop_assert_eq!(&reference, &permuted);

            let merged = reference.merged_components.clone().unwrap();
            let again = reconcile_and_merge(
                &mk(SnapshotPhase::Baseline, 0, &merged),
                &mk(SnapshotPhase::Mid, 1, &merged),
                &mk(SnapshotPhase::Final, 2, &merged),
                &expected,
            );
            prop_assert_eq!(again.merged_components, Some(merged));
        }

        #[test]
        fn violation_iff_over_two_percent(total in 1usize..220, missing in 0usize..10) {
            let missing = missing.min(total);
            let all: Vec<String> = (0..total).map(|i| format!("pkg:pypi/q{i}@1")).collect();
            let present: Vec<&str> = all.iter().skip(missing).map(String::as_str).collect();
            let expected: BTreeSet<Purl> = all.iter().map(|p| p.parse().unwrap()).collect();
            let out = reconcile_and_merge(
                &snap(SnapshotPhase::Baseline, 0, &present),
                &snap(SnapshotPhase::Mid, 1, &present),
                &snap(SnapshotPhase::Final, 2, &present),
                &expected,
            );
            let violation = out.status == ReconciliationStatus::IntegrityViolation;
            prop_assert_eq!(violation, missing * 50 > total);
        }
    }
}
