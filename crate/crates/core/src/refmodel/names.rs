use std::collections::{BTreeMap, HashMap};

use super::{Address32, RefError};
use crate::handle::Handle;
use crate::Timestamp;

/// TTL for name and handle entries bound without an explicit one.
pub const DEFAULT_NAME_TTL: u32 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandleEntry {
    pub address: Address32,
    pub ttl: u32,
}

/// Handle to address. Lookups take no querier context: every querier sees
/// the same table.
#[derive(Debug, Clone, Default)]
pub struct HandleTable {
    entries: BTreeMap<Handle, HandleEntry>,
}

impl HandleTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&self, handle: &Handle) -> Result<HandleEntry, RefError> {
        self.entries
            .get(handle)
            .copied()
            .ok_or_else(|| RefError::UnknownHandle(handle.to_string()))
    }

    pub fn bind(&mut self, handle: Handle, address: Address32, ttl: u32) {
        self.entries.insert(handle, HandleEntry { address, ttl });
    }

    /// Points `handle` at a new address, keeping its TTL.
    pub fn rebind_handle(&mut self, handle: &Handle, address: Address32) {
        let ttl = self.entries.get(handle).map_or(DEFAULT_NAME_TTL, |e| e.ttl);
        self.entries.insert(handle.clone(), HandleEntry { address, ttl });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameEntry {
    pub handle: Handle,
    pub ttl: u32,
}

/// One community's names. Two communities are free to disagree.
#[derive(Debug, Clone, Default)]
pub struct CommunityNameTable {
    pub community: String,
    entries: BTreeMap<String, NameEntry>,
}

impl CommunityNameTable {
    pub fn new(community: impl Into<String>) -> Self {
        CommunityNameTable { community: community.into(), entries: BTreeMap::new() }
    }

    pub fn resolve_name(&self, name: &str) -> Result<&NameEntry, RefError> {
        self.entries
            .get(name)
            .ok_or_else(|| RefError::UnknownName(format!("{name:?} in {}", self.community)))
    }

    pub fn bind(&mut self, name: impl Into<String>, handle: Handle, ttl: u32) {
        self.entries.insert(name.into(), NameEntry { handle, ttl });
    }

    /// Points `name` at another handle, keeping its TTL.
    pub fn rebind_name(&mut self, name: &str, handle: Handle) {
        let ttl = self.entries.get(name).map_or(DEFAULT_NAME_TTL, |e| e.ttl);
        self.entries.insert(name.to_string(), NameEntry { handle, ttl });
    }
}

#[derive(Debug, Clone, Default)]
pub struct Directory {
    communities: BTreeMap<String, CommunityNameTable>,
}

impl Directory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn community(&self, community: &str) -> Option<&CommunityNameTable> {
        self.communities.get(community)
    }

    pub fn community_mut(&mut self, community: &str) -> &mut CommunityNameTable {
        self.communities
            .entry(community.to_string())
            .or_insert_with(|| CommunityNameTable::new(community))
    }

    pub fn resolve(&self, community: &str, name: &str) -> Result<&NameEntry, RefError> {
        self.community(community)
            .ok_or_else(|| RefError::UnknownName(format!("{name:?} in {community}")))?
            .resolve_name(name)
    }
}

/// A name resolved straight to an address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitiveCacheEntry {
    pub name: String,
    pub community: String,
    pub handle: Handle,
    pub address: Address32,
    /// Smaller of the two component TTLs.
    pub ttl: u32,
    pub inserted_at: Timestamp,
}

impl TransitiveCacheEntry {
    pub fn is_live(&self, now: Timestamp) -> bool {
        now < self.inserted_at.saturating_add(self.ttl as u64)
    }
}

/// Composes name→handle and handle→address into one entry.
pub fn compose_cache(
    name: &str,
    community: &str,
    directory: &Directory,
    handles: &HandleTable,
    now: Timestamp,
) -> Result<TransitiveCacheEntry, RefError> {
    let named = directory.resolve(community, name)?;
    let bound = handles.lookup(&named.handle)?;
    Ok(TransitiveCacheEntry {
        name: name.to_string(),
        community: community.to_string(),
        handle: named.handle.clone(),
        address: bound.address,
        ttl: named.ttl.min(bound.ttl),
        inserted_at: now,
    })
}

#[derive(Debug, Default)]
pub struct TransitiveCache {
    entries: HashMap<(String, String), TransitiveCacheEntry>,
    compositions: u64,
    direct_hits: u64,
}

impl TransitiveCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Two-step resolutions performed so far.
    pub fn compositions(&self) -> u64 {
        self.compositions
    }

    pub fn direct_hits(&self) -> u64 {
        self.direct_hits
    }

    pub fn lookup(
        &mut self,
        name: &str,
        community: &str,
        directory: &Directory,
        handles: &HandleTable,
        now: Timestamp,
    ) -> Result<TransitiveCacheEntry, RefError> {
        let key = (community.to_string(), name.to_string());
        if let Some(entry) = self.entries.get(&key).filter(|e| e.is_live(now)) {
            self.direct_hits += 1;
            return Ok(entry.clone());
        }
        self.compositions += 1;
        let entry = compose_cache(name, community, directory, handles, now)?;
        self.entries.insert(key, entry.clone());
        Ok(entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handle::parse_handle;

    fn grampa() -> Handle {
        parse_handle("h0061A38F9A3540B9").unwrap()
    }

    fn bigcorp() -> Handle {
        parse_handle("h1g5kC0FFEE00C0FFEE00").unwrap()
    }

    fn addr(s: &str) -> Address32 {
        s.parse().unwrap()
    }

    #[test]
    fn communities_are_independent() {
        let mut dir = Directory::new();
        dir.community_mut("friends-of-sally").bind("My favorite candy store", grampa(), 300);
        dir.community_mut("trade-press").bind("My favorite candy store", bigcorp(), 300);
        assert_eq!(dir.resolve("friends-of-sally", "My favorite candy store").unwrap().handle, grampa());
        assert_eq!(dir.resolve("trade-press", "My favorite candy store").unwrap().handle, bigcorp());
        assert!(matches!(dir.resolve("friends-of-sally", "ydnac"), Err(RefError::UnknownName(_))));
        assert!(matches!(dir.resolve("nobody", "ydnac"), Err(RefError::UnknownName(_))));
    }

    #[test]
    fn losing_a_name_keeps_the_handle() {
        let mut dir = Directory::new();
        let mut handles = HandleTable::new();
        handles.bind(grampa(), addr("10.0.0.5"), 60);
        handles.bind(bigcorp(), addr("10.9.9.9"), 60);
        let web = dir.community_mut("web");
        web.bind("ydnac", grampa(), 300);
        web.rebind_name("ydnac", bigcorp());
        assert_eq!(dir.resolve("web", "ydnac").unwrap().handle, bigcorp());
        assert_eq!(handles.lookup(&grampa()).unwrap().address, addr("10.0.0.5"));
    }

    #[test]
    fn mobility_through_a_stable_name() {
        let mut dir = Directory::new();
        let mut handles = HandleTable::new();
        dir.community_mut("friends").bind("candy", grampa(), 300);
        for a in ["10.0.0.5", "10.1.0.9", "172.16.0.3"] {
            handles.rebind_handle(&grampa(), addr(a));
            let e = compose_cache("candy", "friends", &dir, &handles, 0).unwrap();
            assert_eq!(e.address, addr(a));
        }
        // Idempotent rebind.
        handles.rebind_handle(&grampa(), addr("172.16.0.3"));
        assert_eq!(handles.lookup(&grampa()).unwrap().address, addr("172.16.0.3"));
        assert_eq!(handles.len(), 1);
    }

    #[test]
    fn composed_ttl_is_the_minimum() {
        let mut dir = Directory::new();
        let mut handles = HandleTable::new();
        dir.community_mut("c").bind("n", grampa(), 300);
        handles.bind(grampa(), addr("10.0.0.1"), 60);
        assert_eq!(compose_cache("n", "c", &dir, &handles, 0).unwrap().ttl, 60);
        handles.bind(grampa(), addr("10.0.0.1"), 900);
        assert_eq!(compose_cache("n", "c", &dir, &handles, 0).unwrap().ttl, 300);
    }

    #[test]
    fn transitive_cache_hits_and_recomposes() {
        let mut dir = Directory::new();
        let mut handles = HandleTable::new();
        dir.community_mut("c").bind("n", grampa(), 300);
        handles.bind(grampa(), addr("10.0.0.1"), 60);
        let mut cache = TransitiveCache::new();
        for t in 0..10 {
            assert_eq!(cache.lookup("n", "c", &dir, &handles, t).unwrap().address, addr("10.0.0.1"));
        }
        assert_eq!(cache.compositions(), 1);
        assert_eq!(cache.direct_hits(), 9);

        handles.rebind_handle(&grampa(), addr("10.0.0.2"));
        assert_eq!(cache.lookup("n", "c", &dir, &handles, 59).unwrap().address, addr("10.0.0.1"));
        assert_eq!(cache.lookup("n", "c", &dir, &handles, 60).unwrap().address, addr("10.0.0.2"));
        assert_eq!(cache.compositions(), 2);
    }
}
