//! Name-keyed registries of interchangeable implementations.
//!
//! Each registry maps a stable name to a constructor producing a boxed trait
//! object, so callers (CLI flags, config files) pick an implementation at
//! runtime without knowing the concrete type.

use indexmap::IndexMap;

use crate::error::{Error, Result};

pub type Constructor<T, A> = fn(&A) -> Result<Box<T>>;

struct Entry<T: ?Sized, A> {
    description: &'static str,
    construct: Constructor<T, A>,
}

pub struct Registry<T: ?Sized, A = ()> {
    kind: &'static str,
    entries: IndexMap<&'static str, Entry<T, A>>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: IndexMap::new(),
        }
    }

    /// Adds an implementation. Re-registering a name replaces the previous
    /// constructor.
    pub fn register(
        &mut self,
        name: &'static str,
        description: &'static str,
        construct: Constructor<T, A>,
    ) -> &mut Self {
        self.entries.insert(
            name,
            Entry {
                description,
                construct,
            },
        );
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    /// `(name, description)` pairs in registration order.
    pub fn describe(&self) -> Vec<(&'static str, &'static str)> {
        self.entries
            .iter()
            .map(|(k, e)| (*k, e.description))
            .collect()
    }

    pub fn create(&self, name: &str, args: &A) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(entry) => (entry.construct)(args),
            None => Err(Error::Config(format!(
                "unknown {} {name:?}; available: {}",
                self.kind,
                self.names().join(", ")
            ))),
        }
    }
}
