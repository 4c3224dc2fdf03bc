//! Fixture loading shared by the pipeline benchmarks.

use std::fs;
use std::path::{Path, PathBuf};

use aibom_core::{Feed, FeedSet, WorkloadSpec};

pub const WORKLOADS: [&str; 5] = ["anonymisation-sdc", "etl-merge", "logit-glm", "late-bind-heavy", "gpu-late-bind"];

pub const TIMESTAMP: &str = "2025-03-01T12:00:00Z";

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn workload(name: &str) -> WorkloadSpec {
    let path = fixtures_dir().join("workloads").join(format!("{name}.jsonl"));
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    WorkloadSpec::from_jsonl(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn feeds() -> FeedSet {
    let dir = fixtures_dir().join("feeds");
    let feeds: Vec<Feed> = ["osv.json", "nvd.json", "csaf-tre-2025-0007.json"]
        .iter()
        .map(|f| Feed::load(&dir.join(f)).expect("fixture feed"))
        .collect();
    FeedSet::new(&feeds)
}
