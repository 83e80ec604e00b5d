//! Method signatures, field and array policies, observer level.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::lattice::{ExtLevel, Lattice, Level};
use crate::program::{Pp, Tag};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("no policy for method `{0}`")]
    UnknownMethod(String),
    #[error("no policy for method `{method}` at receiver level {level} or above")]
    NoReceiverEntry { method: String, level: String },
    #[error("policy for `{method}` lacks a kr entry for `{tag}`")]
    MissingReturnLevel { method: String, tag: String },
    #[error("policy for `{method}` has {got} ka entries, expected {expected}")]
    ArityMismatch { method: String, got: usize, expected: usize },
    #[error("program point {pp} of `{method}` has no translated address")]
    Unmapped { method: String, pp: Pp },
}

/// `ka ->kh kr`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodPolicy {
    pub ka: Vec<ExtLevel>,
    pub kh: Level,
    pub kr: BTreeMap<Tag, Level>,
}

impl MethodPolicy {
    pub fn uniform(n_locals: usize, k: Level) -> Self {
        MethodPolicy { ka: vec![ExtLevel::Simple(k); n_locals], kh: k, kr: BTreeMap::from([(Tag::Norm, k)]) }
    }

    pub fn kr_norm(&self, lat: &Lattice) -> Level {
        self.kr.get(&Tag::Norm).copied().unwrap_or(lat.bottom())
    }

    /// Return level for `tag`, bottom when the policy is silent.
    pub fn kr_or_bottom(&self, lat: &Lattice, tag: &Tag) -> Level {
        self.kr.get(tag).copied().unwrap_or(lat.bottom())
    }

    /// Declared level of a local slot; slots past `ka` are unconstrained.
    pub fn ka_or_top(&self, lat: &Lattice, x: usize) -> ExtLevel {
        self.ka.get(x).cloned().unwrap_or(ExtLevel::Simple(lat.top()))
    }
}

/// Γ: method and receiver level to policy.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignatureTable {
    entries: BTreeMap<String, BTreeMap<Level, MethodPolicy>>,
}

impl SignatureTable {
    pub fn insert(&mut self, method: &str, receiver: Level, p: MethodPolicy) {
        self.entries.entry(method.to_string()).or_default().insert(receiver, p);
    }

    pub fn contains(&self, method: &str) -> bool {
        self.entries.contains_key(method)
    }

    pub fn entries(&self, method: &str) -> impl Iterator<Item = (Level, &MethodPolicy)> {
        self.entries.get(method).into_iter().flat_map(|m| m.iter().map(|(k, p)| (*k, p)))
    }

    pub fn methods(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn policies_of(&self, method: &str) -> Result<Vec<&MethodPolicy>, PolicyError> {
        let m = self.entries.get(method).ok_or_else(|| PolicyError::UnknownMethod(method.to_string()))?;
        Ok(m.values().collect())
    }

    /// `Γ_m[k]`, falling back to the least declared level above `k`.
    pub fn lookup(&self, lat: &Lattice, method: &str, k: Level) -> Result<&MethodPolicy, PolicyError> {
        let m = self.entries.get(method).ok_or_else(|| PolicyError::UnknownMethod(method.to_string()))?;
        if let Some(p) = m.get(&k) {
            return Ok(p);
        }
        let above: Vec<Level> = m.keys().copied().filter(|&l| lat.leq(k, l)).collect();
        let least =
            above.iter().copied().find(|&l| above.iter().all(|&o| lat.leq(l, o))).or_else(|| above.first().copied());
        least
            .map(|l| &m[&l])
            .ok_or_else(|| PolicyError::NoReceiverEntry { method: method.to_string(), level: lat.name(k).to_string() })
    }
}

/// Every policy attached to a program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramPolicy {
    pub gamma: SignatureTable,
    pub ft: BTreeMap<String, ExtLevel>,
    /// Content level of arrays, keyed by creating method and program point.
    pub at: BTreeMap<(String, Pp), ExtLevel>,
    pub kobs: Level,
}

impl ProgramPolicy {
    pub fn new(lat: &Lattice) -> Self {
        ProgramPolicy { gamma: SignatureTable::default(), ft: BTreeMap::new(), at: BTreeMap::new(), kobs: lat.bottom() }
    }

    pub fn ft(&self, lat: &Lattice, field: &str) -> ExtLevel {
        self.ft.get(field).cloned().unwrap_or(ExtLevel::Simple(lat.bottom()))
    }

    pub fn at(&self, lat: &Lattice, method: &str, pp: Pp) -> ExtLevel {
        self.at.get(&(method.to_string(), pp)).cloned().unwrap_or(ExtLevel::Simple(lat.bottom()))
    }

    /// Re-keys the array policy of `method` through `map` (source pp to
    /// target pp). Γ and ft pass through unchanged.
    pub fn rekey_arrays<F>(&self, method: &str, map: F) -> Result<ProgramPolicy, PolicyError>
    where
        F: Fn(Pp) -> Option<Pp>,
    {
        let mut out = self.clone();
        out.at.retain(|(m, _), _| m != method);
        for ((m, pp), lvl) in &self.at {
            if m == method {
                let t = map(*pp).ok_or_else(|| PolicyError::Unmapped { method: m.clone(), pp: *pp })?;
                out.at.insert((m.clone(), t), lvl.clone());
            }
        }
        Ok(out)
    }
}
