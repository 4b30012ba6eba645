//! The sponsor's authoritative store.
//!
//! [`Registry`] is a deterministic state machine over [`UpdateRequest`]s.
//! Every accepted update produces exactly one log line
//! (`<proof line>|<accepted-at>`), and replaying those lines through
//! [`apply_log`] rebuilds an identical registry.

mod address;
mod log;
mod update;

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crypto::{self, PasswordVerifier, Signature};
use crate::handle::{labels_to_text, validate_label, AuthType, Handle};
use crate::Timestamp;

pub use address::{Address, BadAddress, MAX_URL_LEN};
pub use log::{read_log_file, LogWriter, SharedRegistry};
pub use update::{
    parse_canonical_u64, parse_lower_hex, Auth, MalformedUpdate, OpKind, Operation, Owner, Update, UpdateRequest,
    PROTOCOL_TAG,
};

/// Digits in a sponsor-issued handle, as in `h0061A38F9A3540B9`.
pub const SPONSOR_HANDLE_DIGITS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("HANDLE_EXISTS {0}")]
    HandleExists(Handle),
    #[error("KEY_MISMATCH {0}")]
    KeyMismatch(Handle),
    #[error("BAD_SIGNATURE {0}")]
    BadSignature(Handle),
    #[error("NOT_FOUND {0}")]
    NotFound(Handle),
    #[error("STATE_FINAL {handle} is {state}")]
    StateFinal { handle: Handle, state: &'static str },
    #[error("SEQ_REPLAY last={last}")]
    SeqReplay { last: u64 },
    #[error("BAD_ADDRESS {0}")]
    BadAddress(String),
    #[error("SELF_DELEGATION {0}")]
    SelfDelegation(Handle),
    #[error("SELF_TRANSFER {0}")]
    SelfTransfer(Handle),
    #[error("BAD_REQUEST {0}")]
    BadRequest(String),
    #[error("CORRUPT_LOG line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("CORRUPT_SNAPSHOT {0}")]
    CorruptSnapshot(String),
    #[error("IO_ERROR {0}")]
    Io(String),
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::HandleExists(_) => "HANDLE_EXISTS",
            RegistryError::KeyMismatch(_) => "KEY_MISMATCH",
            RegistryError::BadSignature(_) => "BAD_SIGNATURE",
            RegistryError::NotFound(_) => "NOT_FOUND",
            RegistryError::StateFinal { .. } => "STATE_FINAL",
            RegistryError::SeqReplay { .. } => "SEQ_REPLAY",
            RegistryError::BadAddress(_) => "BAD_ADDRESS",
            RegistryError::SelfDelegation(_) => "SELF_DELEGATION",
            RegistryError::SelfTransfer(_) => "SELF_TRANSFER",
            RegistryError::BadRequest(_) => "BAD_REQUEST",
            RegistryError::CorruptLog { .. } => "CORRUPT_LOG",
            RegistryError::CorruptSnapshot(_) => "CORRUPT_SNAPSHOT",
            RegistryError::Io(_) => "IO_ERROR",
        }
    }

    /// The message with the code stripped, as sent after `ERR <CODE>`.
    pub fn detail(&self) -> String {
        let full = self.to_string();
        full.strip_prefix(self.code()).unwrap_or(&full).trim_start().to_string()
    }
}

impl From<MalformedUpdate> for RegistryError {
    fn from(e: MalformedUpdate) -> Self {
        RegistryError::BadRequest(e.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandleState {
    Active,
    Cancelled,
    Transferred { target: Handle },
    Compromised,
}

impl HandleState {
    pub fn name(&self) -> &'static str {
        match self {
            HandleState::Active => "active",
            HandleState::Cancelled => "cancelled",
            HandleState::Transferred { .. } => "transferred",
            HandleState::Compromised => "compromised",
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, HandleState::Active)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub labels: Vec<String>,
    pub address: Address,
    pub ttl_seconds: u32,
    pub expiry: Timestamp,
    /// The accepted ASSIGN as a proof line.
    pub proof: String,
}

impl Binding {
    pub fn is_live(&self, now: Timestamp) -> bool {
        now < self.expiry
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delegation {
    pub target: Handle,
    pub expiry: Timestamp,
    pub proof: String,
}

impl Delegation {
    pub fn is_live(&self, now: Timestamp) -> bool {
        now < self.expiry
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandleRecord {
    pub handle: Handle,
    pub state: HandleState,
    pub owner: Owner,
    pub seq: u64,
    /// Keyed by label path text (`@` for the handle itself).
    pub bindings: BTreeMap<String, Binding>,
    pub delegation: Option<Delegation>,
    pub transfer_proof: Option<String>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

impl HandleRecord {
    pub fn binding(&self, labels: &[String]) -> Option<&Binding> {
        self.bindings.get(&labels_to_text(labels))
    }
}

/// A validated update that has not been committed yet.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub record: HandleRecord,
    pub log_line: String,
}

#[derive(Debug, Clone)]
pub struct Registry {
    records: BTreeMap<Handle, HandleRecord>,
    password_iterations: u32,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::new()
    }
}

impl PartialEq for Registry {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Registry {
    pub fn new() -> Self {
        Registry {
            records: BTreeMap::new(),
            password_iterations: PasswordVerifier::DEFAULT_ITERATIONS,
        }
    }

    /// PBKDF2 rounds for newly created password verifiers. Existing
    /// verifiers keep the count they were created with.
    pub fn with_password_iterations(mut self, iterations: u32) -> Self {
        self.password_iterations = iterations.max(1);
        self
    }

    /// A registry holding exactly `records`, as when importing state from
    /// elsewhere. No update history is implied or checked.
    pub fn from_records<I: IntoIterator<Item = HandleRecord>>(records: I) -> Result<Self, RegistryError> {
        let mut registry = Registry::new();
        for record in records {
            let handle = record.handle.clone();
            if registry.records.insert(handle.clone(), record).is_some() {
                return Err(RegistryError::HandleExists(handle));
            }
        }
        Ok(registry)
    }

    pub fn get(&self, handle: &Handle) -> Option<&HandleRecord> {
        self.records.get(handle)
    }

    pub fn records(&self) -> impl Iterator<Item = &HandleRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Applies an externally submitted update.
    pub fn apply(&mut self, req: &UpdateRequest, now: Timestamp) -> Result<Prepared, RegistryError> {
        let prepared = self.prepare(req, now)?;
        self.commit(prepared.clone());
        Ok(prepared)
    }

    /// Validates `req` against the current state without changing it.
    pub fn prepare(&self, req: &UpdateRequest, now: Timestamp) -> Result<Prepared, RegistryError> {
        self.prepare_inner(req, now, false)
    }

    pub fn commit(&mut self, prepared: Prepared) {
        self.records.insert(prepared.record.handle.clone(), prepared.record);
    }

    /// Issues a fresh random type 0 handle owned by `password`.
    pub fn create_sponsored<R: RngCore>(
        &mut self,
        password: &str,
        rng: &mut R,
        now: Timestamp,
    ) -> Result<Prepared, RegistryError> {
        let prepared = self.prepare_sponsored(password, rng, now)?;
        self.commit(prepared.clone());
        Ok(prepared)
    }

    pub fn prepare_sponsored<R: RngCore>(
        &self,
        password: &str,
        rng: &mut R,
        now: Timestamp,
    ) -> Result<Prepared, RegistryError> {
        if password.is_empty() {
            return Err(RegistryError::BadRequest("empty password".into()));
        }
        let handle = loop {
            let digits: String = (0..SPONSOR_HANDLE_DIGITS)
                .map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap())
                .collect();
            let candidate = Handle::sponsor(&digits).expect("15 hex digits form a valid sponsor handle");
            if !self.records.contains_key(&candidate) {
                break candidate;
            }
        };
        let verifier = PasswordVerifier::new(password, self.password_iterations, rng);
        let req = UpdateRequest {
            update: Update::new(handle, 0, Operation::Create { owner: Owner::Password(verifier) }),
            auth: Auth::Sponsor,
        };
        self.prepare_inner(&req, now, true)
    }

    fn prepare_inner(&self, req: &UpdateRequest, now: Timestamp, trusted: bool) -> Result<Prepared, RegistryError> {
        let update = &req.update;
        let handle = &update.handle;
        let log_line = format!("{}|{}", req.proof_line(), now);

        if let Operation::Create { owner } = &update.op {
            if let Some(existing) = self.records.get(handle) {
                return Err(match existing.state {
                    HandleState::Active => RegistryError::HandleExists(handle.clone()),
                    ref terminal => RegistryError::StateFinal { handle: handle.clone(), state: terminal.name() },
                });
            }
            if update.seq != 0 {
                return Err(RegistryError::BadRequest("create must carry seq 0".into()));
            }
            Self::authenticate_create(req, owner, trusted)?;
            let record = HandleRecord {
                handle: handle.clone(),
                state: HandleState::Active,
                owner: owner.clone(),
                seq: 0,
                bindings: BTreeMap::new(),
                delegation: None,
                transfer_proof: None,
                created_at: now,
                updated_at: now,
            };
            return Ok(Prepared { record, log_line });
        }

        let current = self.records.get(handle).ok_or_else(|| RegistryError::NotFound(handle.clone()))?;
        if current.state.is_terminal() {
            return Err(RegistryError::StateFinal { handle: handle.clone(), state: current.state.name() });
        }
        Self::authenticate(req, &current.owner, trusted)?;
        if update.seq <= current.seq {
            return Err(RegistryError::SeqReplay { last: current.seq });
        }

        let mut record = current.clone();
        record.seq = update.seq;
        record.updated_at = now;
        let proof = req.proof_line();
        match &update.op {
            Operation::Create { .. } => unreachable!("handled above"),
            Operation::Assign { labels, address, ttl, expiry } => {
                for label in labels {
                    validate_label(label).map_err(|e| RegistryError::BadRequest(e.to_string()))?;
                }
                // Re-check the text form so a hand-built Address cannot
                // smuggle a separator into the log.
                if address.to_string().parse::<Address>().as_ref() != Ok(address) {
                    return Err(RegistryError::BadAddress(address.to_string()));
                }
                record.bindings.insert(
                    labels_to_text(labels),
                    Binding {
                        labels: labels.clone(),
                        address: address.clone(),
                        ttl_seconds: *ttl,
                        expiry: *expiry,
                        proof,
                    },
                );
            }
            Operation::Delegate { target, expiry } => {
                if target == handle {
                    return Err(RegistryError::SelfDelegation(handle.clone()));
                }
                record.delegation = Some(Delegation { target: target.clone(), expiry: *expiry, proof });
            }
            Operation::Cancel => record.state = HandleState::Cancelled,
            Operation::Transfer { target } => {
                if target == handle {
                    return Err(RegistryError::SelfTransfer(handle.clone()));
                }
                record.state = HandleState::Transferred { target: target.clone() };
                record.transfer_proof = Some(proof);
            }
            Operation::Compromise => record.state = HandleState::Compromised,
        }
        Ok(Prepared { record, log_line })
    }

    fn authenticate_create(req: &UpdateRequest, owner: &Owner, trusted: bool) -> Result<(), RegistryError> {
        let handle = &req.update.handle;
        match (handle.auth_type(), owner) {
            (AuthType::PublicKey, Owner::PublicKey(key)) => {
                let Auth::Signature { public_key, .. } = &req.auth else {
                    return Err(RegistryError::BadSignature(handle.clone()));
                };
                if public_key != key || !matches!(crypto::digest_matches(handle, key), Ok(true)) {
                    return Err(RegistryError::KeyMismatch(handle.clone()));
                }
                Self::authenticate(req, owner, trusted)
            }
            (AuthType::SponsorPassword, Owner::Password(_)) if trusted && req.auth == Auth::Sponsor => Ok(()),
            (AuthType::SponsorPassword, Owner::Password(_)) => Err(RegistryError::BadRequest(
                "type 0 handles are issued by the sponsor".into(),
            )),
            _ => Err(RegistryError::KeyMismatch(handle.clone())),
        }
    }

    fn authenticate(req: &UpdateRequest, owner: &Owner, trusted: bool) -> Result<(), RegistryError> {
        let handle = &req.update.handle;
        let ok = match (&req.auth, owner) {
            (Auth::Signature { signature, public_key }, Owner::PublicKey(key)) if public_key == key => {
                let alg = handle.alg_code().unwrap_or(0);
                let sig = Signature { alg_code: alg, bytes: signature.clone() };
                matches!(crypto::verify_as(alg, req.update.message().as_bytes(), &sig, key), Ok(true))
            }
            (Auth::Password(password), Owner::Password(verifier)) => verifier.check(password),
            (Auth::Sponsor, Owner::Password(_)) => trusted,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(RegistryError::BadSignature(handle.clone()))
        }
    }

    /// One JSON line per record in handle order.
    pub fn canonical_state(&self) -> String {
        let mut out = String::new();
        for record in self.records.values() {
            out.push_str(&serde_json::to_string(record).expect("records always serialize"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of [`Registry::canonical_state`], lowercase hex.
    pub fn state_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_state().as_bytes()))
    }

    /// Canonical state followed by a `state-hash <hex>` trailer.
    pub fn snapshot_text(&self) -> String {
        let state = self.canonical_state();
        let hash = hex::encode(Sha256::digest(state.as_bytes()));
        format!("{state}state-hash {hash}\n")
    }

    pub fn from_snapshot(text: &str) -> Result<Self, RegistryError> {
        let corrupt = |why: String| RegistryError::CorruptSnapshot(why);
        let body = text.strip_suffix('\n').ok_or_else(|| corrupt("missing final newline".into()))?;
        let (state, trailer) = match body.rsplit_once('\n') {
            Some((state, trailer)) => (format!("{state}\n"), trailer),
            None => (String::new(), body),
        };
        let expected = trailer
            .strip_prefix("state-hash ")
            .ok_or_else(|| corrupt("missing state-hash trailer".into()))?;
        if hex::encode(Sha256::digest(state.as_bytes())) != expected {
            return Err(corrupt("state hash mismatch".into()));
        }
        let mut registry = Registry::new();
        for (i, line) in state.lines().enumerate() {
            let record: HandleRecord =
                serde_json::from_str(line).map_err(|e| corrupt(format!("record {}: {e}", i + 1)))?;
            if registry.records.insert(record.handle.clone(), record).is_some() {
                return Err(corrupt(format!("record {} repeats a handle", i + 1)));
            }
        }
        if registry.canonical_state() != state {
            return Err(corrupt("records are not in canonical form".into()));
        }
        Ok(registry)
    }
}

/// Splits a log line into the update it records and its acceptance time.
pub fn parse_log_line(line: &str) -> Result<(UpdateRequest, Timestamp), MalformedUpdate> {
    let (proof, at) = line
        .rsplit_once('|')
        .ok_or_else(|| MalformedUpdate("log line has no timestamp".into()))?;
    let at = parse_canonical_u64(at).ok_or_else(|| MalformedUpdate(format!("bad timestamp {at}")))?;
    Ok((UpdateRequest::parse_proof_line(proof)?, at))
}

/// Rebuilds a registry from log lines in acceptance order. Blank lines are
/// ignored; any entry the registry would reject is `CORRUPT_LOG`.
pub fn apply_log<'a, I>(lines: I) -> Result<Registry, RegistryError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut registry = Registry::new();
    replay_into(&mut registry, lines)?;
    Ok(registry)
}

pub(crate) fn replay_into<'a, I>(registry: &mut Registry, lines: I) -> Result<(), RegistryError>
where
    I: IntoIterator<Item = &'a str>,
{
    for (i, line) in lines.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| RegistryError::CorruptLog { line: i + 1, reason };
        let (req, at) = parse_log_line(line).map_err(|e| corrupt(e.to_string()))?;
        let prepared = registry
            .prepare_inner(&req, at, true)
            .map_err(|e| corrupt(e.to_string()))?;
        if prepared.log_line != line {
            return Err(corrupt("entry is not in canonical form".into()));
        }
        registry.commit(prepared);
    }
    Ok(())
}
