//! Component version ordering: dotted numeric comparison, falling back to a
//! lexicographic comparison for segments that are not plain integers.

use std::cmp::Ordering;

fn segments(version: &str) -> Vec<&str> {
    version.split(['.', '-', '+']).collect()
}

fn compare_segment(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Total order over version strings. Missing trailing segments compare as `0`,
/// so `1.0` and `1.0.0` are equal.
pub fn compare_versions(a: &str, b: &str) -> Ordering {
    let (sa, sb) = (segments(a), segments(b));
    let len = sa.len().max(sb.len());
    for i in 0..len {
        let x = sa.get(i).copied().unwrap_or("0");
        let y = sb.get(i).copied().unwrap_or("0");
        match compare_segment(x, y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// `lo <= version < hi`.
pub fn in_half_open_range(version: &str, lo: &str, hi: &str) -> bool {
    compare_versions(version, lo) != Ordering::Less && compare_versions(version, hi) == Ordering::Less
}

/// Granularity of the most significant segment that differs between two versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeLevel {
    None,
    Major,
    Minor,
    Patch,
}

pub fn change_level(old: &str, new: &str) -> ChangeLevel {
    let (so, sn) = (segments(old), segments(new));
    let len = so.len().max(sn.len());
    for i in 0..len {
        let x = so.get(i).copied().unwrap_or("0");
        let y = sn.get(i).copied().unwrap_or("0");
        if compare_segment(x, y) != Ordering::Equal {
            return match i {
                0 => ChangeLevel::Major,
                1 => ChangeLevel::Minor,
                _ => ChangeLevel::Patch,
            };
        }
    }
    ChangeLevel::None
}
