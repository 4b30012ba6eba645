//! Client-side resolution.
//!
//! A [`ResolutionResult`] carries every signed update it depends on: one
//! DELEGATE or TRANSFER proof line per redirection hop and the ASSIGN proof
//! line of the terminal binding. [`verify_result`] recomputes the answer from
//! those lines alone, so the registry that produced it need not be trusted.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use crate::handle::{AuthType, Handle};
use crate::registry::{Address, HandleState, Operation, Registry, SharedRegistry, UpdateRequest};
use crate::Timestamp;

pub const DEFAULT_MAX_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolveOptions {
    /// Most redirection hops followed before giving up.
    pub max_depth: usize,
    /// Return the retained binding of a compromised handle, marked as such.
    pub allow_compromised: bool,
}

impl Default for ResolveOptions {
    fn default() -> Self {
        ResolveOptions { max_depth: DEFAULT_MAX_DEPTH, allow_compromised: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("NOT_FOUND {handle} chain={}", join(chain))]
    NotFound { handle: Handle, chain: Vec<Handle> },
    #[error("CANCELLED {handle} chain={}", join(chain))]
    Cancelled { handle: Handle, chain: Vec<Handle> },
    #[error("COMPROMISED {handle} chain={}", join(chain))]
    Compromised { handle: Handle, chain: Vec<Handle> },
    #[error("NO_BINDING {0}")]
    NoBinding(Handle),
    #[error("EXPIRED {0}")]
    Expired(Handle),
    #[error("CYCLE chain={}", join(chain))]
    Cycle { chain: Vec<Handle> },
    #[error("CHAIN_TOO_LONG max_depth={max_depth}")]
    ChainTooLong { max_depth: usize },
    /// The authority could not be asked, or answered with something other
    /// than a resolution.
    #[error("{code} {detail}")]
    Remote { code: String, detail: String },
}

fn join(chain: &[Handle]) -> String {
    chain.iter().map(Handle::to_string).collect::<Vec<_>>().join(",")
}

impl ResolveError {
    pub fn code(&self) -> &str {
        match self {
            ResolveError::NotFound { .. } => "NOT_FOUND",
            ResolveError::Cancelled { .. } => "CANCELLED",
            ResolveError::Compromised { .. } => "COMPROMISED",
            ResolveError::NoBinding(_) => "NO_BINDING",
            ResolveError::Expired(_) => "EXPIRED",
            ResolveError::Cycle { .. } => "CYCLE",
            ResolveError::ChainTooLong { .. } => "CHAIN_TOO_LONG",
            ResolveError::Remote { code, .. } => code,
        }
    }

    pub fn detail(&self) -> String {
        let full = self.to_string();
        full.strip_prefix(self.code()).unwrap_or(&full).trim_start().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionResult {
    pub address: Address,
    /// The label path that was asked for.
    pub labels: Vec<String>,
    /// Handles traversed, queried handle first.
    pub chain: Vec<Handle>,
    /// Proof line of the redirection leaving `chain[i]`.
    pub hop_proofs: Vec<String>,
    /// Proof line of the ASSIGN that produced `address`.
    pub binding_proof: String,
    pub verified: bool,
    pub ttl_seconds: u32,
    /// Set only when a compromised handle was resolved on request.
    pub compromised: bool,
}

impl ResolutionResult {
    pub fn terminal(&self) -> &Handle {
        self.chain.last().expect("a result always has at least the queried handle")
    }

    /// Earliest expiry among the signed updates the answer depends on.
    pub fn expires_at(&self) -> Option<Timestamp> {
        std::iter::once(&self.binding_proof)
            .chain(&self.hop_proofs)
            .filter_map(|line| UpdateRequest::parse_proof_line(line).ok())
            .filter_map(|req| match req.update.op {
                Operation::Assign { expiry, .. } | Operation::Delegate { expiry, .. } => Some(expiry),
                _ => None,
            })
            .min()
    }
}

/// Resolves `handle` (and label path) against authoritative state.
pub fn resolve(
    registry: &Registry,
    handle: &Handle,
    labels: &[String],
    now: Timestamp,
    options: ResolveOptions,
) -> Result<ResolutionResult, ResolveError> {
    let mut chain = vec![handle.clone()];
    let mut visited: HashSet<Handle> = HashSet::from([handle.clone()]);
    let mut hop_proofs = Vec::new();
    let mut compromised = false;

    loop {
        let current = chain.last().expect("chain is never empty").clone();
        let Some(record) = registry.get(&current) else {
            return Err(ResolveError::NotFound { handle: current, chain });
        };
        let redirect = match &record.state {
            HandleState::Cancelled => return Err(ResolveError::Cancelled { handle: current, chain }),
            HandleState::Compromised if !options.allow_compromised => {
                return Err(ResolveError::Compromised { handle: current, chain });
            }
            HandleState::Transferred { target } => Some((
                target.clone(),
                record.transfer_proof.clone().expect("transferred records keep their proof"),
            )),
            HandleState::Compromised | HandleState::Active => {
                compromised |= record.state == HandleState::Compromised;
                record
                    .delegation
                    .as_ref()
                    .filter(|d| d.is_live(now))
                    .map(|d| (d.target.clone(), d.proof.clone()))
            }
        };

        if let Some((next, proof)) = redirect {
            if !visited.insert(next.clone()) {
                chain.push(next);
                return Err(ResolveError::Cycle { chain });
            }
            if hop_proofs.len() == options.max_depth {
                return Err(ResolveError::ChainTooLong { max_depth: options.max_depth });
            }
            hop_proofs.push(proof);
            chain.push(next);
            continue;
        }

        let binding = match record.binding(labels).or_else(|| record.binding(&[])) {
            Some(b) if b.is_live(now) => b,
            Some(_) => return Err(ResolveError::Expired(current)),
            None => return Err(ResolveError::NoBinding(current)),
        };
        let mut result = ResolutionResult {
            address: binding.address.clone(),
            labels: labels.to_vec(),
            chain,
            hop_proofs,
            binding_proof: binding.proof.clone(),
            verified: false,
            ttl_seconds: binding.ttl_seconds,
            compromised,
        };
        result.verified = verify_result(&result);
        return Ok(result);
    }
}

/// End-to-end check of a result using only the proofs it carries:
///
/// * the hop proofs link `chain[0]` to the terminal handle, one signed
///   redirection per hop, with no handle repeated;
/// * the terminal ASSIGN is signed by the key embedded in the terminal
///   handle, binds the requested label path (or the handle itself), and
///   names exactly `address` and `ttl_seconds`.
///
/// Intermediate hop signatures are only checked by [`verify_result_strict`].
pub fn verify_result(r: &ResolutionResult) -> bool {
    verify_inner(r, false)
}

/// [`verify_result`] plus the signature of every redirection hop.
pub fn verify_result_strict(r: &ResolutionResult) -> bool {
    verify_inner(r, true)
}

fn verify_inner(r: &ResolutionResult, strict: bool) -> bool {
    if r.chain.is_empty() || r.chain.len() != r.hop_proofs.len() + 1 {
        return false;
    }
    let distinct: HashSet<&Handle> = r.chain.iter().collect();
    if distinct.len() != r.chain.len() {
        return false;
    }
    for (i, line) in r.hop_proofs.iter().enumerate() {
        let Ok(hop) = UpdateRequest::parse_proof_line(line) else {
            return false;
        };
        let target = match &hop.update.op {
            Operation::Delegate { target, .. } | Operation::Transfer { target } => target,
            _ => return false,
        };
        if hop.update.handle != r.chain[i] || *target != r.chain[i + 1] {
            return false;
        }
        if strict && !hop.self_certifies() {
            return false;
        }
    }
    let Ok(proof) = UpdateRequest::parse_proof_line(&r.binding_proof) else {
        return false;
    };
    let Operation::Assign { labels, address, ttl, .. } = &proof.update.op else {
        return false;
    };
    proof.update.handle == *r.terminal()
        && r.terminal().auth_type() == AuthType::PublicKey
        && (labels.is_empty() || *labels == r.labels)
        && *address == r.address
        && *ttl == r.ttl_seconds
        && proof.self_certifies()
}

/// Anything that can answer a resolution authoritatively.
pub trait Authority {
    fn lookup(
        &self,
        handle: &Handle,
        labels: &[String],
        now: Timestamp,
        options: ResolveOptions,
    ) -> Result<ResolutionResult, ResolveError>;
}

impl Authority for Registry {
    fn lookup(
        &self,
        handle: &Handle,
        labels: &[String],
        now: Timestamp,
        options: ResolveOptions,
    ) -> Result<ResolutionResult, ResolveError> {
        resolve(self, handle, labels, now, options)
    }
}

impl Authority for SharedRegistry {
    fn lookup(
        &self,
        handle: &Handle,
        labels: &[String],
        now: Timestamp,
        options: ResolveOptions,
    ) -> Result<ResolutionResult, ResolveError> {
        self.read(|reg| resolve(reg, handle, labels, now, options))
    }
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub result: ResolutionResult,
    pub inserted_at: Timestamp,
}

impl CacheEntry {
    /// Served only while `now < inserted_at + ttl` and before any signed
    /// expiry the answer depends on.
    pub fn is_live(&self, now: Timestamp) -> bool {
        let ttl_end = self.inserted_at.saturating_add(self.result.ttl_seconds as u64);
        now < ttl_end && self.result.expires_at().map_or(true, |e| now < e)
    }
}

type CacheKey = (Handle, Vec<String>);

/// Positive-only TTL cache shared by any number of threads. Concurrent
/// inserts for one key keep whichever lands last.
#[derive(Debug, Default)]
pub struct ResolverCache {
    entries: RwLock<HashMap<CacheKey, CacheEntry>>,
    authoritative_lookups: AtomicU64,
    hits: AtomicU64,
}

impl ResolverCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn authoritative_lookups(&self) -> u64 {
        self.authoritative_lookups.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, handle: &Handle, labels: &[String], now: Timestamp) -> Option<ResolutionResult> {
        let entries = self.entries.read().expect("cache lock poisoned");
        entries
            .get(&(handle.clone(), labels.to_vec()))
            .filter(|e| e.is_live(now))
            .map(|e| e.result.clone())
    }

    pub fn insert(&self, handle: &Handle, labels: &[String], result: ResolutionResult, now: Timestamp) {
        let mut entries = self.entries.write().expect("cache lock poisoned");
        entries.retain(|_, e| e.is_live(now));
        entries.insert((handle.clone(), labels.to_vec()), CacheEntry { result, inserted_at: now });
    }
}

/// Serves from `cache` when it can; otherwise asks `authority`, verifies,
/// and caches the answer. Answers that fail verification are returned (with
/// `verified == false`) but never cached; answers for password handles have
/// nothing to verify and are cached as they are.
pub fn cached_resolve<A: Authority + ?Sized>(
    cache: &ResolverCache,
    authority: &A,
    handle: &Handle,
    labels: &[String],
    now: Timestamp,
) -> Result<ResolutionResult, ResolveError> {
    if let Some(hit) = cache.get(handle, labels, now) {
        cache.hits.fetch_add(1, Ordering::Relaxed);
        return Ok(hit);
    }
    cache.authoritative_lookups.fetch_add(1, Ordering::Relaxed);
    let mut result = authority.lookup(handle, labels, now, ResolveOptions::default())?;
    result.verified = verify_result(&result);
    let cacheable = result.verified || result.terminal().auth_type() == AuthType::SponsorPassword;
    if cacheable && result.ttl_seconds > 0 {
        cache.insert(handle, labels, result.clone(), now);
    }
    Ok(result)
}

/// A resolving client. The identity is carried for logging only; it never
/// influences an answer.
#[derive(Debug)]
pub struct Resolver {
    identity: String,
    cache: ResolverCache,
}

impl Resolver {
    pub fn new(identity: impl Into<String>) -> Self {
        Resolver { identity: identity.into(), cache: ResolverCache::new() }
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn cache(&self) -> &ResolverCache {
        &self.cache
    }

    pub fn resolve<A: Authority + ?Sized>(
        &self,
        authority: &A,
        handle: &Handle,
        labels: &[String],
        now: Timestamp,
    ) -> Result<ResolutionResult, ResolveError> {
        cached_resolve(&self.cache, authority, handle, labels, now)
    }
}
