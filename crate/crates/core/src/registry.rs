//! Simulated package registry backing replay reconstruction.
//!
//! A registry directory holds `packages.json`, a JSON array of component
//! records. Replay can only install what the registry offers, so alternative
//! registry profiles model environments with different preinstalled sets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::Component;
use crate::purl::Purl;

pub const PACKAGES_FILE: &str = "packages.json";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("pinned package {0} is not available in the registry")]
    Unavailable(String),
    #[error("pinned package {purl} digest {locked} does not match registry digest {offered}")]
    DigestMismatch { purl: String, locked: String, offered: String },
    #[error("registry already holds {0} with a different digest")]
    Conflict(String),
    #[error("registry {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PackageRegistry {
    packages: BTreeMap<Purl, Component>,
}

impl PackageRegistry {
    /// A missing directory or file is an empty registry.
    pub fn load(dir: &Path) -> Result<Self, RegistryError> {
        let path = dir.join(PACKAGES_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let io = |message: String| RegistryError::Io {
            path: path.clone(),
            message,
        };
        let text = fs::read_to_string(&path).map_err(|e| io(e.to_string()))?;
        let components: Vec<Component> = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        let mut registry = Self::default();
        registry.publish(&components)?;
        Ok(registry)
    }

    pub fn save(&self, dir: &Path) -> Result<(), RegistryError> {
        let io = |message: String| RegistryError::Io {
            path: dir.to_path_buf(),
            message,
        };
        fs::create_dir_all(dir).map_err(|e| io(e.to_string()))?;
        let body = serde_json::to_string_pretty(&self.packages.values().collect::<Vec<_>>()).expect("components serialize");
        let tmp = dir.join(format!(".{PACKAGES_FILE}.tmp"));
        fs::write(&tmp, body).map_err(|e| io(e.to_string()))?;
        fs::rename(&tmp, dir.join(PACKAGES_FILE)).map_err(|e| io(e.to_string()))
    }

    /// Add records. Republishing an identical record is a no-op; a different
    /// digest for a known purl is refused.
    pub fn publish(&mut self, components: &[Component]) -> Result<(), RegistryError> {
        for c in components {
            match self.packages.get(&c.purl) {
                Some(existing) if existing.sha256() != c.sha256() => {
                    return Err(RegistryError::Conflict(c.purl.to_string()));
                }
                Some(_) => {}
                None => {
                    self.packages.insert(c.purl.clone(), c.clone());
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, purl: &Purl) -> Option<&Component> {
        self.packages.get(purl)
    }

    pub fn len(&self) -> usize {
        self.packages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }

    /// Install every pinned component: each must be offered with the locked digest.
    pub fn install_locked(&self, locked: &[Component]) -> Result<Vec<Component>, RegistryError> {
        locked
            .iter()
            .map(|c| {
                let offered = self.get(&c.purl).ok_or_else(|| RegistryError::Unavailable(c.purl.to_string()))?;
                if offered.sha256() != c.sha256() {
                    return Err(RegistryError::DigestMismatch {
                        purl: c.purl.to_string(),
                        locked: c.sha256().unwrap_or_default().into(),
                        offered: offered.sha256().unwrap_or_default().into(),
                    });
                }
                Ok(offered.clone())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::component;

    #[test]
    fn save_and_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = PackageRegistry::default();
        r.publish(&[component("pkg:pypi/a@1.0.0", "a")]).unwrap();
        r.save(dir.path()).unwrap();
        assert_eq!(PackageRegistry::load(dir.path()).unwrap(), r);
        assert!(PackageRegistry::load(&dir.path().join("absent")).unwrap().is_empty());
    }

    #[test]
    fn conflicting_digest_is_refused() {
        let mut r = PackageRegistry::default();
        r.publish(&[component("pkg:pypi/a@1.0.0", "a")]).unwrap();
        r.publish(&[component("pkg:pypi/a@1.0.0", "a")]).unwrap();
        assert!(matches!(
            r.publish(&[component("pkg:pypi/a@1.0.0", "other")]),
            Err(RegistryError::Conflict(_))
        ));
    }

    #[test]
    fn install_requires_presence_and_matching_digest() {
        let mut r = PackageRegistry::default();
        r.publish(&[component("pkg:pypi/a@1.0.0", "a")]).unwrap();
        assert!(r.install_locked(&[component("pkg:pypi/a@1.0.0", "a")]).is_ok());
        assert!(matches!(
            r.install_locked(&[component("pkg:pypi/b@1.0.0", "b")]),
            Err(RegistryError::Unavailable(_))
        ));
        assert!(matches!(
            r.install_locked(&[component("pkg:pypi/a@1.0.0", "x")]),
            Err(RegistryError::DigestMismatch { .. })
        ));
    }
}
