//! Name-keyed registry for interchangeable strategies (backends, embedders,
//! tools, oracles). Entries are usually boxed trait objects or factories.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown {kind} `{name}` (available: {})", .known.join(", "))]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
    pub known: Vec<String>,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Box<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry { kind, entries: BTreeMap::new() }
    }

    /// Adds or replaces the entry under `name`.
    pub fn register(&mut self, name: impl Into<String>, entry: Box<T>) -> &mut Self {
        self.entries.insert(name.into(), entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T, UnknownName> {
        self.entries.get(name).map(|b| &**b).ok_or_else(|| UnknownName {
            kind: self.kind,
            name: name.to_string(),
            known: self.names(),
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut T, UnknownName> {
        let known = self.names();
        let kind = self.kind;
        self.entries.get_mut(name).map(|b| &mut **b).ok_or(UnknownName { kind, name: name.to_string(), known })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &T)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), &**v))
    }
}
