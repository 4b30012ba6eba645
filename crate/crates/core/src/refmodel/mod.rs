//! Executable model of the four resolution layers: names resolve to
//! handles, handles to addresses, addresses to routes.
//!
//! Routes are explicit bang paths (`a!b!c`) checked hop by hop against the
//! topology. Addresses are 32-bit numbers forwarded by per-router range
//! tables. Handles resolve through a single [`HandleTable`] that has no
//! notion of where the query came from; names resolve per community.

mod generate;
mod names;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

pub use generate::{spanning_tree_network, GeneratedNetwork, ADDRESS_BLOCK};
pub use names::{
    compose_cache, CommunityNameTable, Directory, HandleTable, NameEntry, TransitiveCache, TransitiveCacheEntry,
    DEFAULT_NAME_TTL,
};
pub use scenario::{run_scenario, AssertionResult, ScenarioOutcome, BUNDLED_SCENARIOS};

pub type RouterId = String;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RefError {
    #[error("BAD_ROUTE {0}")]
    BadRoute(String),
    #[error("DISCONTIGUOUS {0} does not meet {1}")]
    Discontiguous(String, String),
    #[error("NOT_ADJACENT at index {index}")]
    NotAdjacent { index: usize },
    #[error("START_MISMATCH route starts at {route_start}, not {start}")]
    StartMismatch { start: RouterId, route_start: RouterId },
    #[error("NO_ROUTE at {at}")]
    NoRoute { at: RouterId },
    #[error("LOOP at {at}")]
    Loop { at: RouterId },
    #[error("HOP_LIMIT {0}")]
    HopLimit(usize),
    #[error("OVERLAPPING_RANGES at {0}")]
    OverlappingRanges(Address32),
    #[error("INVERTED_RANGE {0}-{1}")]
    InvertedRange(Address32, Address32),
    #[error("UNKNOWN_ROUTER {0}")]
    UnknownRouter(RouterId),
    #[error("SELF_LINK {0}")]
    SelfLink(RouterId),
    #[error("BAD_ADDRESS {0}")]
    BadAddress(String),
    #[error("UNKNOWN_NAME {0}")]
    UnknownName(String),
    #[error("UNKNOWN_HANDLE {0}")]
    UnknownHandle(String),
    #[error("SCRIPT_ERROR line {line}: {reason}")]
    Script { line: usize, reason: String },
}

impl RefError {
    pub fn code(&self) -> &'static str {
        match self {
            RefError::BadRoute(_) => "BAD_ROUTE",
            RefError::Discontiguous(..) => "DISCONTIGUOUS",
            RefError::NotAdjacent { .. } => "NOT_ADJACENT",
            RefError::StartMismatch { .. } => "START_MISMATCH",
            RefError::NoRoute { .. } => "NO_ROUTE",
            RefError::Loop { .. } => "LOOP",
            RefError::HopLimit(_) => "HOP_LIMIT",
            RefError::OverlappingRanges(_) => "OVERLAPPING_RANGES",
            RefError::InvertedRange(..) => "INVERTED_RANGE",
            RefError::UnknownRouter(_) => "UNKNOWN_ROUTER",
            RefError::SelfLink(_) => "SELF_LINK",
            RefError::BadAddress(_) => "BAD_ADDRESS",
            RefError::UnknownName(_) => "UNKNOWN_NAME",
            RefError::UnknownHandle(_) => "UNKNOWN_HANDLE",
            RefError::Script { .. } => "SCRIPT_ERROR",
        }
    }
}

fn valid_hop(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// A UUCP-style bang path. The empty route stays where it is.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Route {
    pub hops: Vec<RouterId>,
}

impl Route {
    pub fn new<I, S>(hops: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Route { hops: hops.into_iter().map(Into::into).collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn first(&self) -> Option<&RouterId> {
        self.hops.first()
    }

    pub fn last(&self) -> Option<&RouterId> {
        self.hops.last()
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hops.join("!"))
    }
}

impl FromStr for Route {
    type Err = RefError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_route(s)
    }
}

pub fn parse_route(text: &str) -> Result<Route, RefError> {
    if text.is_empty() {
        return Ok(Route::default());
    }
    let hops: Vec<&str> = text.split('!').collect();
    if hops.iter().any(|h| !valid_hop(h)) {
        return Err(RefError::BadRoute(text.to_string()));
    }
    Ok(Route::new(hops))
}

pub fn format_route(route: &Route) -> String {
    route.to_string()
}

/// Joins two routes at their shared host, which appears once.
pub fn concat_routes(prefix: &Route, suffix: &Route) -> Result<Route, RefError> {
    match (prefix.last(), suffix.first()) {
        (None, _) => Ok(suffix.clone()),
        (_, None) => Ok(prefix.clone()),
        (Some(join), Some(start)) if join == start => {
            let mut hops = prefix.hops.clone();
            hops.extend(suffix.hops[1..].iter().cloned());
            Ok(Route { hops })
        }
        _ => Err(RefError::Discontiguous(prefix.to_string(), suffix.to_string())),
    }
}

/// A 32-bit address written `n1.n2.n3.n4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address32(pub u32);

impl fmt::Display for Address32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", Ipv4Addr::from(self.0))
    }
}

impl FromStr for Address32 {
    type Err = RefError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ip: Ipv4Addr = s.parse().map_err(|_| RefError::BadAddress(s.to_string()))?;
        if ip.to_string() != s {
            return Err(RefError::BadAddress(s.to_string()));
        }
        Ok(Address32(u32::from(ip)))
    }
}

/// Routers and the undirected links between them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Topology {
    routers: BTreeSet<RouterId>,
    links: BTreeSet<(RouterId, RouterId)>,
}

fn link_key(a: &str, b: &str) -> (RouterId, RouterId) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_router(&mut self, id: &str) -> Result<(), RefError> {
        if !valid_hop(id) {
            return Err(RefError::UnknownRouter(id.to_string()));
        }
        self.routers.insert(id.to_string());
        Ok(())
    }

    /// Adds both routers if needed, then the link.
    pub fn link(&mut self, a: &str, b: &str) -> Result<(), RefError> {
        if a == b {
            return Err(RefError::SelfLink(a.to_string()));
        }
        self.add_router(a)?;
        self.add_router(b)?;
        self.links.insert(link_key(a, b));
        Ok(())
    }

    pub fn unlink(&mut self, a: &str, b: &str) -> bool {
        self.links.remove(&link_key(a, b))
    }

    pub fn has_router(&self, id: &str) -> bool {
        self.routers.contains(id)
    }

    pub fn linked(&self, a: &str, b: &str) -> bool {
        self.links.contains(&link_key(a, b))
    }

    pub fn routers(&self) -> impl Iterator<Item = &RouterId> {
        self.routers.iter()
    }

    pub fn links(&self) -> impl Iterator<Item = &(RouterId, RouterId)> {
        self.links.iter()
    }

    /// Neighbours in sorted order.
    pub fn neighbours<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a RouterId> + 'a {
        self.links.iter().filter_map(move |(a, b)| {
            if a == id {
                Some(b)
            } else if b == id {
                Some(a)
            } else {
                None
            }
        })
    }
}

/// Walks `route` from `start`, requiring a live link for every step.
pub fn deliver_by_route(t: &Topology, start: &str, route: &Route) -> Result<RouterId, RefError> {
    let Some(first) = route.first() else {
        return Ok(start.to_string());
    };
    if first != start {
        return Err(RefError::StartMismatch { start: start.to_string(), route_start: first.clone() });
    }
    for (index, pair) in route.hops.windows(2).enumerate() {
        if !t.linked(&pair[0], &pair[1]) {
            return Err(RefError::NotAdjacent { index });
        }
    }
    Ok(route.last().expect("non-empty").clone())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeEntry {
    pub lo: Address32,
    pub hi: Address32,
    pub next_hop: RouterId,
}

/// Range-based forwarding: each entry sends an inclusive address range one
/// way; everything else goes to the default, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardingTable {
    owner: RouterId,
    ranges: Vec<RangeEntry>,
    default: Option<RouterId>,
}

impl ForwardingTable {
    pub fn new(owner: &str, mut ranges: Vec<RangeEntry>, default: Option<RouterId>) -> Result<Self, RefError> {
        for r in &ranges {
            if r.lo > r.hi {
                return Err(RefError::InvertedRange(r.lo, r.hi));
            }
        }
        ranges.sort_by_key(|r| r.lo);
        for pair in ranges.windows(2) {
            if pair[1].lo <= pair[0].hi {
                return Err(RefError::OverlappingRanges(pair[1].lo));
            }
        }
        Ok(ForwardingTable { owner: owner.to_string(), ranges, default })
    }

    /// Builds the smallest table that agrees with `next_hops` on every
    /// listed address by merging runs of consecutive entries that share a
    /// next hop. Addresses between merged entries are unassigned.
    pub fn from_next_hops(owner: &str, next_hops: &BTreeMap<Address32, RouterId>) -> Self {
        let mut ranges: Vec<RangeEntry> = Vec::new();
        for (addr, hop) in next_hops {
            match ranges.last_mut() {
                Some(last) if last.next_hop == *hop => last.hi = *addr,
                _ => ranges.push(RangeEntry { lo: *addr, hi: *addr, next_hop: hop.clone() }),
            }
        }
        ForwardingTable { owner: owner.to_string(), ranges, default: None }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn ranges(&self) -> &[RangeEntry] {
        &self.ranges
    }

    pub fn default_hop(&self) -> Option<&RouterId> {
        self.default.as_ref()
    }
}

pub fn forward_lookup(ft: &ForwardingTable, a: Address32) -> Result<RouterId, RefError> {
    let idx = ft.ranges.partition_point(|r| r.lo <= a);
    if idx > 0 && a <= ft.ranges[idx - 1].hi {
        return Ok(ft.ranges[idx - 1].next_hop.clone());
    }
    ft.default.clone().ok_or_else(|| RefError::NoRoute { at: ft.owner.clone() })
}

/// Topology, forwarding tables, and the address ranges each router
/// terminates.
#[derive(Debug, Clone, Default)]
pub struct Network {
    pub topology: Topology,
    pub tables: BTreeMap<RouterId, ForwardingTable>,
    pub local: BTreeMap<RouterId, Vec<(Address32, Address32)>>,
}

impl Network {
    pub fn terminates(&self, router: &str, a: Address32) -> bool {
        self.local
            .get(router)
            .is_some_and(|ranges| ranges.iter().any(|(lo, hi)| *lo <= a && a <= *hi))
    }

    pub fn owner_of(&self, a: Address32) -> Option<&RouterId> {
        self.local
            .iter()
            .find(|(_, ranges)| ranges.iter().any(|(lo, hi)| *lo <= a && a <= *hi))
            .map(|(r, _)| r)
    }
}

/// Hop-by-hop forwarding from `start` until a router terminates `dst`; the
/// trace is the route a traceroute would report.
pub fn route_by_address(net: &Network, start: &str, dst: Address32, max_hops: usize) -> Result<Route, RefError> {
    if !net.topology.has_router(start) {
        return Err(RefError::UnknownRouter(start.to_string()));
    }
    let mut hops = vec![start.to_string()];
    let mut visited: HashSet<RouterId> = HashSet::from([start.to_string()]);
    loop {
        let here = hops.last().expect("never empty").clone();
        if net.terminates(&here, dst) {
            return Ok(Route { hops });
        }
        if hops.len() > max_hops {
            return Err(RefError::HopLimit(max_hops));
        }
        let table = net.tables.get(&here).ok_or_else(|| RefError::NoRoute { at: here.clone() })?;
        let next = forward_lookup(table, dst)?;
        if !net.topology.linked(&here, &next) {
            return Err(RefError::NoRoute { at: here });
        }
        if !visited.insert(next.clone()) {
            return Err(RefError::Loop { at: next });
        }
        hops.push(next);
    }
}
