//! Name → constructor tables for the pluggable pieces (environments,
//! embeddings, trainers). Each module exposes a `registry()` and the CLI
//! resolves config strings through it.

use crate::error::{Error, Result};

/// `C` is the constructor type, usually a plain `fn(..) -> Box<dyn Trait>`.
pub struct Registry<C> {
    kind: &'static str,
    entries: Vec<(&'static str, C)>,
}

impl<C: Copy> Registry<C> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn register(mut self, name: &'static str, make: C) -> Self {
        assert!(
            !self.contains(name),
            "duplicate {} `{name}` in registry",
            self.kind
        );
        self.entries.push((name, make));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn get(&self, name: &str) -> Result<C> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, make)| *make)
            .ok_or_else(|| {
                Error::usage(format!(
                    "unknown {} `{name}` (known: {})",
                    self.kind,
                    self.names().join(", ")
                ))
            })
    }
}
