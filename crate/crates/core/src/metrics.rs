//! Capture metrics against ground truth, output parity, the four-axis
//! reproducibility score and Wilson intervals.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::model::Component;
use crate::purl::Purl;
use crate::snapshot::Snapshot;
use crate::vex::VexAssertion;
use crate::workload::{GroundTruthTrace, OutputKind, OutputTable};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("artifacts are not comparable: {0}")]
    IncomparableArtifacts(String),
    #[error("no replays to score")]
    NoReplays,
    #[error("invalid counts: {k} successes of {n} trials")]
    InvalidCounts { k: u64, n: u64 },
    #[error("invalid score weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMetrics {
    pub capture_rate: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub gt_size: usize,
    pub sbom_size: usize,
    /// Snapshot label to the latest ground-truth load time it had captured.
    pub time_to_completeness: BTreeMap<String, u64>,
}

pub fn capture_metrics(sbom: &BTreeSet<Purl>, gt: &GroundTruthTrace) -> Result<CaptureMetrics, MetricsError> {
    if gt.loaded.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let hit = sbom.intersection(&gt.loaded).count();
    let extra = sbom.difference(&gt.loaded).count();
    let missed = gt.loaded.difference(sbom).count();
    let gt_size = gt.loaded.len();
    Ok(CaptureMetrics {
        capture_rate: hit as f64 / gt_size as f64,
        fpr: if sbom.is_empty() { 0.0 } else { extra as f64 / sbom.len() as f64 },
        fnr: missed as f64 / gt_size as f64,
        gt_size,
        sbom_size: sbom.len(),
        time_to_completeness: BTreeMap::from([("sbom".to_string(), completeness_offset(sbom, gt))]),
    })
}

fn completeness_offset(captured: &BTreeSet<Purl>, gt: &GroundTruthTrace) -> u64 {
    captured
        .iter()
        .filter_map(|p| gt.load_times.get(p))
        .copied()
        .max()
        .unwrap_or(0)
}

/// Per snapshot phase, the offset after which that snapshot's overlap with
/// ground truth stopped growing.
pub fn time_to_completeness(snapshots: &[Snapshot], gt: &GroundTruthTrace) -> BTreeMap<String, u64> {
    snapshots
        .iter()
        .map(|s| (format!("{:?}", s.phase).to_lowercase(), completeness_offset(&s.purls(), gt)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParityConfig {
    pub epsilon_deterministic: f64,
    pub epsilon_float: f64,
}

impl Default for ParityConfig {
    fn default() -> Self {
        Self {
            epsilon_deterministic: 1e-12,
            epsilon_float: 1e-6,
        }
    }
}

impl ParityConfig {
    pub fn epsilon(&self, kind: OutputKind) -> f64 {
        match kind {
            OutputKind::Deterministic => self.epsilon_deterministic,
            OutputKind::Float32Noisy => self.epsilon_float,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityClass {
    Exact,
    BenignDrift,
    /// Semantic parity failed without a policy breach.
    Divergent,
    CriticalDivergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityResult {
    pub ep: bool,
    pub sp: bool,
    pub max_abs_delta: f64,
    pub classification: ParityClass,
    pub notes: Vec<String>,
}

/// Compare two serialized output tables. `sdc_ok = false` makes the result a
/// critical divergence whatever the byte and semantic outcome.
pub fn parity(baseline: &[u8], replay: &[u8], config: &ParityConfig, sdc_ok: bool) -> Result<ParityResult, MetricsError> {
    let ep = crate::canonical::sha256_hex(baseline) == crate::canonical::sha256_hex(replay);
    let parse = |bytes: &[u8], which: &str| {
        OutputTable::from_bytes(bytes).map_err(|e| MetricsError::IncomparableArtifacts(format!("{which} output: {e}")))
    };
    let a = parse(baseline, "baseline")?;
    let b = parse(replay, "replay")?;
    if a.kind != b.kind || a.columns != b.columns || a.workload_id != b.workload_id {
        return Err(MetricsError::IncomparableArtifacts(format!(
            "{} ({:?}) vs {} ({:?})",
            a.workload_id, a.kind, b.workload_id, b.kind
        )));
    }
    if a.scalars.keys().ne(b.scalars.keys()) {
        return Err(MetricsError::IncomparableArtifacts("scalar metrics differ".into()));
    }

    let mut notes = Vec::new();
    let mut structural = true;
    if a.rows.len() != b.rows.len() {
        notes.push(format!("row count {} vs {}", a.rows.len(), b.rows.len()));
        structural = false;
    }
    if a.suppression_ratio != b.suppression_ratio {
        notes.push(format!("suppression ratio {} vs {}", a.suppression_ratio, b.suppression_ratio));
        structural = false;
    }
    let mut max_abs_delta: f64 = 0.0;
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for (ca, cb) in ra.iter().zip(rb) {
            match (ca, cb) {
                (Some(x), Some(y)) => max_abs_delta = max_abs_delta.max((x - y).abs()),
                (None, None) => {}
                _ => structural = false,
            }
        }
    }
    for (key, x) in &a.scalars {
        max_abs_delta = max_abs_delta.max((x - b.scalars[key]).abs());
    }
    for w in b.warnings.iter().filter(|w| !a.warnings.contains(w)) {
        notes.push(format!("replay warning: {w}"));
    }

    let epsilon = config.epsilon(a.kind);
    let sp = ep || (structural && max_abs_delta <= epsilon);
    if !sp && structural {
        notes.push(format!("max |delta| {max_abs_delta:e} exceeds {epsilon:e}"));
    }
    let classification = if !sdc_ok {
        notes.push("disclosure-control check failed".into());
        ParityClass::CriticalDivergence
    } else if ep {
        ParityClass::Exact
    } else if sp {
        ParityClass::BenignDrift
    } else {
        ParityClass::Divergent
    };
    Ok(ParityResult {
        ep,
        sp,
        max_abs_delta,
        classification,
        notes,
    })
}

/// Add `delta` to every released cell and scalar of a table.
pub fn perturb_output(table: &OutputTable, delta: f64) -> OutputTable {
    let mut t = table.clone();
    for cell in t.rows.iter_mut().flatten().flatten() {
        *cell += delta;
    }
    for v in t.scalars.values_mut() {
        *v += delta;
    }
    t
}

/// Matching over a keyed comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub matching: u64,
    pub total: u64,
}

/// Components keyed by package: a package matches when both runs carry it
/// with the same version and digest.
pub fn compare_components(a: &[Component], b: &[Component]) -> Agreement {
    let index = |cs: &[Component]| -> BTreeMap<String, (String, Option<String>)> {
        cs.iter()
            .map(|c| (c.package_id(), (c.version.clone(), c.sha256().map(str::to_string))))
            .collect()
    };
    let (ia, ib) = (index(a), index(b));
    let keys: BTreeSet<&String> = ia.keys().chain(ib.keys()).collect();
    Agreement {
        matching: keys.iter().filter(|k| ia.get(**k).is_some_and(|v| ib.get(**k) == Some(v))).count() as u64,
        total: keys.len() as u64,
    }
}

/// Assertions keyed by (advisory, package): a key matches when both runs
/// assert the same status.
pub fn compare_vex(a: &[VexAssertion], b: &[VexAssertion]) -> Agreement {
    let index = |vs: &[VexAssertion]| -> BTreeMap<(String, String), String> {
        vs.iter()
            .map(|v| ((v.advisory_id.clone(), v.purl.package_id()), v.status.to_string()))
            .collect()
    };
    let (ia, ib) = (index(a), index(b));
    let keys: BTreeSet<&(String, String)> = ia.keys().chain(ib.keys()).collect();
    Agreement {
        matching: keys.iter().filter(|k| ia.get(**k).is_some_and(|v| ib.get(**k) == Some(v))).count() as u64,
        total: keys.len() as u64,
    }
}

pub const CONFIDENCE_95: f64 = 0.95;

/// Wilson score interval at the given two-sided confidence.
pub fn wilson_interval(k: u64, n: u64, confidence: f64) -> Result<(f64, f64), MetricsError> {
    if n == 0 || k > n {
        return Err(MetricsError::InvalidCounts { k, n });
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let (kf, nf) = (k as f64, n as f64);
    let p = kf / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0) };
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub ep: f64,
    pub sp: f64,
    pub env_state_match: f64,
    pub vex_alignment: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            ep: 0.25,
            sp: 0.25,
            env_state_match: 0.25,
            vex_alignment: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisScore {
    /// Absent when the axis is not applicable.
    pub pct: Option<f64>,
    pub not_applicable: bool,
    pub successes: u64,
    pub trials: u64,
    pub wilson: Option<(f64, f64)>,
}

impl AxisScore {
    fn from_counts(k: u64, n: u64) -> Result<Self, MetricsError> {
        if n == 0 {
            return Ok(Self {
                pct: None,
                not_applicable: true,
                successes: 0,
                trials: 0,
                wilson: None,
            });
        }
        Ok(Self {
            pct: Some(100.0 * k as f64 / n as f64),
            not_applicable: false,
            successes: k,
            trials: n,
            wilson: Some(wilson_interval(k, n, CONFIDENCE_95)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedScore {
    pub ep: AxisScore,
    pub sp: AxisScore,
    pub env_state_match: AxisScore,
    pub vex_alignment: AxisScore,
    pub weights: ScoreWeights,
    /// Weighted mean of the applicable axes, weights renormalised over them.
    pub composite_pct: Option<f64>,
}

pub fn decomposed_score(
    parities: &[ParityResult],
    env: &[Agreement],
    vex: &[Agreement],
    weights: ScoreWeights,
) -> Result<DecomposedScore, MetricsError> {
    if parities.is_empty() {
        return Err(MetricsError::NoReplays);
    }
    let w = [weights.ep, weights.sp, weights.env_state_match, weights.vex_alignment];
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(MetricsError::InvalidWeights(format!("{w:?}")));
    }
    let n = parities.len() as u64;
    let sum = |xs: &[Agreement]| xs.iter().fold((0, 0), |(m, t), a| (m + a.matching, t + a.total));
    let (env_k, env_n) = sum(env);
    let (vex_k, vex_n) = sum(vex);
    let axes = [
        AxisScore::from_counts(parities.iter().filter(|p| p.ep).count() as u64, n)?,
        AxisScore::from_counts(parities.iter().filter(|p| p.sp).count() as u64, n)?,
        AxisScore::from_counts(env_k, env_n)?,
        AxisScore::from_counts(vex_k, vex_n)?,
    ];
    let (num, den) = axes
        .iter()
        .zip(w)
        .filter_map(|(a, w)| a.pct.map(|p| (p * w, w)))
        .fold((0.0, 0.0), |(n, d), (x, w)| (n + x, d + w));
    let [ep, sp, env_state_match, vex_alignment] = axes;
    Ok(DecomposedScore {
        ep,
        sp,
        env_state_match,
        vex_alignment,
        weights,
        composite_pct: (den > 0.0).then(|| num / den),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::component;
    use crate::workload::{fixtures::spec, run_workload};
    use proptest::prelude::*;

    fn purls(ps: &[&str]) -> BTreeSet<Purl> {
        ps.iter().map(|p| p.parse().unwrap()).collect()
    }

    fn gt(ps: &[&str]) -> GroundTruthTrace {
        GroundTruthTrace {
            loaded: purls(ps),
            load_times: ps.iter().enumerate().map(|(i, p)| (p.parse().unwrap(), i as u64 * 100)).collect(),
        }
    }

    const P: &str = "pkg:pypi/p@1";
    const Q: &str = "pkg:pypi/q@1";
    const R: &str = "pkg:pypi/r@1";
    const S: &str = "pkg:pypi/s@1";
    const X: &str = "pkg:pypi/x@1";

    #[test]
    fn capture_formulas() {
        let m = capture_metrics(&purls(&[P, Q, R]), &gt(&[P, Q, R, S])).unwrap();
        assert_eq!((m.capture_rate, m.fpr, m.fnr), (0.75, 0.0, 0.25));
        assert_eq!(m.time_to_completeness["sbom"], 200);
        let m = capture_metrics(&purls(&[P, Q]), &gt(&[P, Q])).unwrap();
        assert_eq!((m.capture_rate, m.fpr, m.fnr), (1.0, 0.0, 0.0));
        let m = capture_metrics(&purls(&[P, X]), &gt(&[P, Q])).unwrap();
        assert_eq!((m.capture_rate, m.fpr, m.fnr), (0.5, 0.5, 0.5));
        assert_eq!(capture_metrics(&purls(&[P]), &gt(&[])), Err(MetricsError::EmptyGroundTruth));
    }

    proptest! {
        #[test]
        fn capture_identities(gt_mask in 1u32..(1 << 12), sbom_mask in 0u32..(1 << 12)) {
            let universe: Vec<String> = (0..12).map(|i| format!("pkg:pypi/u{i}@1")).collect();
            let pick = |mask: u32| -> Vec<&str> {
                universe.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, s)| s.as_str()).collect()
            };
            let truth = gt(&pick(gt_mask));
            let m = capture_metrics(&purls(&pick(sbom_mask)), &truth).unwrap();
            prop_assert_eq!(m.capture_rate + m.fnr, 1.0);
            let subset = purls(&pick(sbom_mask & gt_mask));
            prop_assert_eq!(capture_metrics(&subset, &truth).unwrap().fpr, 0.0);
        }
    }

    fn table(kind: OutputKind) -> OutputTable {
        let mut s = spec(&["pkg:pypi/a@1.0.0"], &[]);
        s.header.output_program.kind = kind;
        run_workload(&s, &[]).unwrap().table
    }

    fn check(kind: OutputKind, delta: f64) -> ParityResult {
        let t = table(kind);
        parity(&t.to_bytes(), &perturb_output(&t, delta).to_bytes(), &ParityConfig::default(), true).unwrap()
    }

    #[test]
    fn parity_tolerances() {
        let same = check(OutputKind::Deterministic, 0.0);
        assert!(same.ep && same.sp);
        assert_eq!(same.classification, ParityClass::Exact);
        let r = check(OutputKind::Deterministic, 1e-13);
        assert!(!r.ep && r.sp);
        assert_eq!(r.classification, ParityClass::BenignDrift);
        assert!(!check(OutputKind::Deterministic, 1e-11).sp);
        assert!(check(OutputKind::Float32Noisy, 1e-7).sp);
        let r = check(OutputKind::Float32Noisy, 1e-5);
        assert!(!r.sp);
        assert_eq!(r.classification, ParityClass::Divergent);
    }

    #[test]
    fn sdc_breach_is_critical_even_when_identical() {
        let t = table(OutputKind::Deterministic).to_bytes();
        let r = parity(&t, &t, &ParityConfig::default(), false).unwrap();
        assert!(r.ep);
        assert_eq!(r.classification, ParityClass::CriticalDivergence);
    }

    #[test]
    fn changed_suppression_breaks_semantic_parity() {
        let t = table(OutputKind::Deterministic);
        let mut u = t.clone();
        u.suppression_ratio += 0.125;
        let r = parity(&t.to_bytes(), &u.to_bytes(), &ParityConfig::default(), true).unwrap();
        assert!(!r.sp);
    }

    #[test]
    fn different_workloads_are_incomparable() {
        let t = table(OutputKind::Deterministic);
        let mut u = t.clone();
        u.workload_id = "other".into();
        assert!(matches!(
            parity(&t.to_bytes(), &u.to_bytes(), &ParityConfig::default(), true),
            Err(MetricsError::IncomparableArtifacts(_))
        ));
        assert!(parity(b"x", b"x", &ParityConfig::default(), true).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn shrinking_epsilon_never_restores_parity(delta in 0.0f64..1e-4, e1 in 1e-14f64..1e-3, e2 in 1e-14f64..1e-3) {
            let t = table(OutputKind::Deterministic);
            let (big, small) = if e1 >= e2 { (e1, e2) } else { (e2, e1) };
            let cfg = |e| ParityConfig { epsilon_deterministic: e, epsilon_float: e };
            let b = t.to_bytes();
            let p = perturb_output(&t, delta).to_bytes();
            let loose = parity(&b, &p, &cfg(big), true).unwrap();
            let tight = parity(&b, &p, &cfg(small), true).unwrap();
            prop_assert!(!tight.sp || loose.sp);
            prop_assert!(!loose.ep || loose.sp);
        }
    }

    #[test]
    fn wilson_matches_oracle() {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        let (lo, hi) = wilson_interval(0, 10, CONFIDENCE_95).unwrap();
        assert_eq!(lo, 0.0);
        assert!(close(hi, 0.27753279986288915));
        let (lo, hi) = wilson_interval(10, 10, CONFIDENCE_95).unwrap();
        assert!(close(lo, 0.7224672001371109));
        assert_eq!(hi, 1.0);
        let (lo, hi) = wilson_interval(5, 10, CONFIDENCE_95).unwrap();
        assert!(close(lo, 0.23659309051256405) && close(hi, 0.763406909487436));
        let (lo, hi) = wilson_interval(98, 100, CONFIDENCE_95).unwrap();
        assert!(close(lo, 0.929988209271456) && close(hi, 0.9944980324498376));
        assert!(wilson_interval(3, 2, CONFIDENCE_95).is_err());
        assert!(wilson_interval(0, 0, CONFIDENCE_95).is_err());
    }

    #[test]
    fn wilson_narrows_with_n() {
        for (k, n) in [(1u64, 4u64), (1, 2), (3, 4), (0, 5), (5, 5)] {
            let mut last = f64::INFINITY;
            for scale in [1, 2, 4, 8, 16, 32] {
                let (lo, hi) = wilson_interval(k * scale, n * scale, CONFIDENCE_95).unwrap();
                assert!(lo <= (k as f64 / n as f64) && (k as f64 / n as f64) <= hi);
                assert!(hi - lo < last, "k={k} n={n} scale={scale}");
                last = hi - lo;
            }
        }
    }

    fn ep_result(ep: bool) -> ParityResult {
        ParityResult {
            ep,
            sp: true,
            max_abs_delta: 0.0,
            classification: ParityClass::Exact,
            notes: vec![],
        }
    }

    #[test]
    fn decomposed_axes() {
        let parities = vec![ep_result(true); 10];
        let base: Vec<Component> = (0..50).map(|i| component(&format!("pkg:pypi/c{i}@1.0.0"), "c")).collect();
        let mut drifted = base.clone();
        drifted[7] = component("pkg:pypi/c7@1.0.1", "c");
        let env = [compare_components(&base, &drifted)];
        assert_eq!(env[0], Agreement { matching: 49, total: 50 });
        let s = decomposed_score(&parities, &env, &[], ScoreWeights::default()).unwrap();
        assert_eq!(s.ep.pct, Some(100.0));
        assert_eq!(s.env_state_match.pct, Some(98.0));
        assert!(s.vex_alignment.not_applicable && s.vex_alignment.pct.is_none());
        assert!(s.ep.wilson.unwrap().0 > 0.72);
        assert_eq!(s.composite_pct, Some((100.0 + 100.0 + 98.0) / 3.0));
        assert_eq!(decomposed_score(&[], &[], &[], ScoreWeights::default()), Err(MetricsError::NoReplays));
    }
}
