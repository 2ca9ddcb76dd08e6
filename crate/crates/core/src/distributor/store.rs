use std::collections::BTreeMap;

use crate::naming::{ContentName, FolderName};
use crate::objects::NetworkObject;
use crate::time::SimTime;

#[derive(Debug, Clone)]
pub struct CachedObject {
    pub object: NetworkObject,
    /// When the upstream request for this copy was sent.
    pub fetched_at: SimTime,
    last_used: u64,
}

/// Cached objects with least-recently-used eviction.
#[derive(Debug, Clone)]
pub struct ContentStore {
    capacity: usize,
    entries: BTreeMap<ContentName, CachedObject>,
    clock: u64,
}

impl ContentStore {
    pub fn new(capacity: usize) -> Self {
        ContentStore {
            capacity: capacity.max(1),
            entries: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &ContentName) -> bool {
        self.entries.contains_key(name)
    }

    pub fn peek(&self, name: &ContentName) -> Option<&CachedObject> {
        self.entries.get(name)
    }

    /// Looks up and marks as recently used.
    pub fn get(&mut self, name: &ContentName) -> Option<&CachedObject> {
        self.clock += 1;
        let clock = self.clock;
        self.entries.get_mut(name).map(|e| {
            e.last_used = clock;
            &*e
        })
    }

    /// Inserts, evicting the least recently used entry when full. Returns the
    /// evicted name.
    pub fn insert(&mut self, object: NetworkObject, fetched_at: SimTime) -> Option<ContentName> {
        self.clock += 1;
        let name = object.content_name.clone();
        let mut evicted = None;
        if !self.entries.contains_key(&name) && self.entries.len() >= self.capacity {
            let victim = self
                .entries
                .iter()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(n, _)| n.clone())
                .expect("store is full");
            self.entries.remove(&victim);
            evicted = Some(victim);
        }
        self.entries.insert(
            name,
            CachedObject {
                object,
                fetched_at,
                last_used: self.clock,
            },
        );
        evicted
    }

    pub fn remove(&mut self, name: &ContentName) -> Option<CachedObject> {
        self.entries.remove(name)
    }

    pub fn names_under(&self, folder: &FolderName) -> Vec<ContentName> {
        self.entries
            .keys()
            .filter(|n| n.folder() == folder)
            .cloned()
            .collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &ContentName> {
        self.entries.keys()
    }
}
