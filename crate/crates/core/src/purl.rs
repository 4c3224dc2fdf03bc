//! Package URLs restricted to the `pkg:{type}/[{namespace}/]{name}@{version}` form.
//!
//! Qualifiers (`?`) and subpaths (`#`) are rejected so that formatting a parsed
//! value always reproduces the input exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const SCHEME: &str = "pkg:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed purl `{input}`: {reason}")]
pub struct MalformedPurl {
    pub input: String,
    pub reason: &'static str,
}

/// A parsed package URL.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Purl {
    ty: String,
    namespace: Option<String>,
    name: String,
    version: String,
}

impl Purl {
    pub fn new(
        ty: impl Into<String>,
        namespace: Option<String>,
        name: impl Into<String>,
        version: impl Into<String>,
    ) -> Result<Self, MalformedPurl> {
        let purl = Self {
            ty: ty.into(),
            namespace,
            name: name.into(),
            version: version.into(),
        };
        // Route through the parser so constructed values obey the same grammar.
        purl.to_string().parse()
    }

    pub fn ty(&self) -> &str {
        &self.ty
    }

    pub fn namespace(&self) -> Option<&str> {
        self.namespace.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Identity of the package irrespective of version, e.g. `pkg:pypi/pandas`.
    pub fn package_id(&self) -> String {
        match &self.namespace {
            Some(ns) => format!("{SCHEME}{}/{}/{}", self.ty, ns, self.name),
            None => format!("{SCHEME}{}/{}", self.ty, self.name),
        }
    }

    /// Same package at a different version.
    pub fn with_version(&self, version: impl Into<String>) -> Result<Self, MalformedPurl> {
        Self::new(self.ty.clone(), self.namespace.clone(), self.name.clone(), version)
    }
}

pub fn parse_purl(text: &str) -> Result<Purl, MalformedPurl> {
    text.parse()
}

impl FromStr for Purl {
    type Err = MalformedPurl;

    fn from_str(input: &str) -> Result<Self, Self::Err> {
        let fail = |reason| MalformedPurl {
            input: input.to_string(),
            reason,
        };
        let rest = input
            .strip_prefix(SCHEME)
            .ok_or_else(|| fail("missing `pkg:` scheme"))?;
        if rest.contains('?') || rest.contains('#') {
            return Err(fail("qualifiers and subpaths are not supported"));
        }
        if rest.chars().any(char::is_whitespace) {
            return Err(fail("whitespace is not allowed"));
        }
        let (path, version) = rest.rsplit_once('@').ok_or_else(|| fail("missing `@version`"))?;
        if version.is_empty() {
            return Err(fail("empty version"));
        }
        if version.contains('/') {
            return Err(fail("version may not contain `/`"));
        }
        let segments: Vec<&str> = path.split('/').collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(fail("empty path segment"));
        }
        let (ty, namespace, name) = match segments.as_slice() {
            [] | [_] => return Err(fail("missing type or name")),
            [ty, name] => (*ty, None, *name),
            [ty, middle @ .., name] => (*ty, Some(middle.join("/")), *name),
        };
        if !ty
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '+' | '-'))
        {
            return Err(fail("invalid type"));
        }
        if name.contains('@') || namespace.as_deref().is_some_and(|ns| ns.contains('@')) {
            return Err(fail("`@` inside name"));
        }
        Ok(Purl {
            ty: ty.to_string(),
            namespace,
            name: name.to_string(),
            version: version.to_string(),
        })
    }
}

impl fmt::Display for Purl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.package_id(), self.version)
    }
}

impl Serialize for Purl {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Purl {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
