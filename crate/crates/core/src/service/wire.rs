//! The line protocol.
//!
//! ```text
//! CREATE <handle> <pubhex> <sighex>
//! CREATE 0 <password>
//! ASSIGN <handle> <seq> <labels|@> <address> <ttl> <expiry> <auth>
//! DELEGATE <handle> <seq> <target> <expiry> <auth>
//! CANCEL <handle> <seq> <auth>
//! TRANSFER <handle> <seq> <target> <auth>
//! COMPROMISE <handle> <seq> <auth>
//! RESOLVE <handle> <n> <label>... [unsafe]
//! EXPORT-ZONE <origin>
//! ```
//!
//! `<auth>` is `<sighex> <pubhex>` for public-key handles and a single
//! password token for sponsor handles. Responses are one line each:
//!
//! ```text
//! OK <handle> seq=<n> state=<state>
//! OK <address> ttl=<n> chain=<n> verified=<0|1> proof=<hex> [compromised=1]
//! OK <zone hex>
//! ERR <CODE> <detail>
//! ```
//!
//! The RESOLVE proof is the hex of the hop proof lines followed by the
//! ASSIGN proof line, joined by newlines.

use std::fmt;

use crate::handle::{labels_from_text, labels_to_text, parse_handle, validate_label, AuthType, Handle};
use crate::registry::{
    parse_canonical_u64, parse_lower_hex, Address, Auth, Operation, Owner, Update, UpdateRequest,
};
use crate::resolver::{verify_result, verify_result_strict, ResolutionResult, ResolveError};

/// Longest request line accepted, terminator excluded.
pub const MAX_REQUEST_LEN: usize = 8 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireRequest {
    /// A signed update of any kind, including type 1 CREATE.
    Update(UpdateRequest),
    /// `CREATE 0 <password>`: the sponsor issues a fresh type 0 handle.
    CreateSponsored { password: String },
    Resolve { handle: Handle, labels: Vec<String>, unsafe_ok: bool },
    ExportZone { origin: String },
}

/// Why a request line was refused before reaching the registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BadRequest(pub String);

impl fmt::Display for BadRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(why: impl Into<String>) -> BadRequest {
    BadRequest(why.into())
}

/// Handles on the wire must already be in canonical form.
fn handle_field(text: &str) -> Result<Handle, BadRequest> {
    let h = parse_handle(text).map_err(|e| bad(e.to_string()))?;
    if h.to_string() != text {
        return Err(bad(format!("non-canonical handle {text}")));
    }
    Ok(h)
}

fn u64_field(text: &str, what: &str) -> Result<u64, BadRequest> {
    parse_canonical_u64(text).ok_or_else(|| bad(format!("bad {what}")))
}

fn hex_field(text: &str, what: &str) -> Result<Vec<u8>, BadRequest> {
    parse_lower_hex(text).filter(|b| !b.is_empty()).ok_or_else(|| bad(format!("bad {what}")))
}

fn auth_fields(handle: &Handle, fields: &[&str]) -> Result<Auth, BadRequest> {
    match (handle.auth_type(), fields) {
        (AuthType::PublicKey, [sig, key]) => Ok(Auth::Signature {
            signature: hex_field(sig, "signature")?,
            public_key: hex_field(key, "public key")?,
        }),
        (AuthType::SponsorPassword, [password]) => Ok(Auth::Password(password.to_string())),
        (AuthType::PublicKey, _) => Err(bad("expected <sighex> <pubhex>")),
        (AuthType::SponsorPassword, _) => Err(bad("expected <password>")),
    }
}

/// Parses one request line (without its terminator).
pub fn parse_request(line: &str) -> Result<WireRequest, BadRequest> {
    if line.len() > MAX_REQUEST_LEN {
        return Err(bad("request-too-long"));
    }
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.iter().any(|f| f.is_empty()) {
        return Err(bad("empty field"));
    }
    let (verb, args) = fields.split_first().expect("split yields at least one field");

    // Fixed-arity verbs: <handle> <seq> <op fields...> <auth...>
    let update = |n_op: usize, build: &dyn Fn(&[&str]) -> Result<Operation, BadRequest>| {
        if args.len() < 2 + n_op {
            return Err(bad(format!("{verb}: too few fields")));
        }
        let handle = handle_field(args[0])?;
        let seq = u64_field(args[1], "seq")?;
        let op = build(&args[2..2 + n_op])?;
        let auth = auth_fields(&handle, &args[2 + n_op..])?;
        Ok(WireRequest::Update(UpdateRequest { update: Update::new(handle, seq, op), auth }))
    };

    match *verb {
        "CREATE" => match args {
            ["0", password] => Ok(WireRequest::CreateSponsored { password: password.to_string() }),
            [h, key, sig] => {
                let handle = handle_field(h)?;
                if handle.auth_type() != AuthType::PublicKey {
                    return Err(bad("CREATE <handle> needs a public-key handle"));
                }
                let public_key = hex_field(key, "public key")?;
                let update = Update::new(handle, 0, Operation::Create { owner: Owner::PublicKey(public_key.clone()) });
                let auth = Auth::Signature { signature: hex_field(sig, "signature")?, public_key };
                Ok(WireRequest::Update(UpdateRequest { update, auth }))
            }
            _ => Err(bad("CREATE: expected <handle> <pubhex> <sighex> or 0 <password>")),
        },
        "ASSIGN" => update(4, &|f| {
            let labels = labels_from_text(f[0]).map_err(|e| bad(e.to_string()))?;
            let address: Address = f[1].parse().map_err(|e: crate::registry::BadAddress| bad(e.to_string()))?;
            let ttl = u32::try_from(u64_field(f[2], "ttl")?).map_err(|_| bad("bad ttl"))?;
            Ok(Operation::Assign { labels, address, ttl, expiry: u64_field(f[3], "expiry")? })
        }),
        "DELEGATE" => update(2, &|f| {
            Ok(Operation::Delegate { target: handle_field(f[0])?, expiry: u64_field(f[1], "expiry")? })
        }),
        "CANCEL" => update(0, &|_| Ok(Operation::Cancel)),
        "TRANSFER" => update(1, &|f| Ok(Operation::Transfer { target: handle_field(f[0])? })),
        "COMPROMISE" => update(0, &|_| Ok(Operation::Compromise)),
        "RESOLVE" => {
            let [h, n, rest @ ..] = args else {
                return Err(bad("RESOLVE: expected <handle> <n> <label>..."));
            };
            let handle = handle_field(h)?;
            let n = usize::try_from(u64_field(n, "label count")?).map_err(|_| bad("bad label count"))?;
            let (labels, flags) = if n <= rest.len() { rest.split_at(n) } else { return Err(bad("label count mismatch")) };
            let unsafe_ok = match flags {
                [] => false,
                ["unsafe"] => true,
                _ => return Err(bad("label count mismatch")),
            };
            for label in labels {
                validate_label(label).map_err(|e| bad(e.to_string()))?;
            }
            Ok(WireRequest::Resolve { handle, labels: labels.iter().map(|s| s.to_string()).collect(), unsafe_ok })
        }
        "EXPORT-ZONE" => match args {
            [origin] => Ok(WireRequest::ExportZone { origin: origin.to_string() }),
            _ => Err(bad("EXPORT-ZONE: expected <origin>")),
        },
        _ => Err(bad("unknown-verb")),
    }
}

/// The request line for a signed or password-authenticated update.
pub fn format_update_request(req: &UpdateRequest) -> Result<String, BadRequest> {
    let u = &req.update;
    let mut out = match &u.op {
        Operation::Create { owner: Owner::PublicKey(key) } => {
            let Auth::Signature { signature, public_key } = &req.auth else {
                return Err(bad("CREATE needs a signature"));
            };
            if public_key != key || u.seq != 0 {
                return Err(bad("CREATE must be self-signed with seq 0"));
            }
            return Ok(format!("CREATE {} {} {}", u.handle, hex::encode(key), hex::encode(signature)));
        }
        Operation::Create { owner: Owner::Password(_) } => {
            return Err(bad("type 0 handles are issued with CREATE 0 <password>"));
        }
        Operation::Assign { labels, address, ttl, expiry } => {
            format!("ASSIGN {} {} {} {address} {ttl} {expiry}", u.handle, u.seq, labels_to_text(labels))
        }
        Operation::Delegate { target, expiry } => format!("DELEGATE {} {} {target} {expiry}", u.handle, u.seq),
        Operation::Cancel => format!("CANCEL {} {}", u.handle, u.seq),
        Operation::Transfer { target } => format!("TRANSFER {} {} {target}", u.handle, u.seq),
        Operation::Compromise => format!("COMPROMISE {} {}", u.handle, u.seq),
    };
    match &req.auth {
        Auth::Signature { signature, public_key } => {
            out.push_str(&format!(" {} {}", hex::encode(signature), hex::encode(public_key)))
        }
        Auth::Password(pw) if !pw.is_empty() && !pw.contains(char::is_whitespace) => {
            out.push(' ');
            out.push_str(pw);
        }
        Auth::Password(_) => return Err(bad("passwords on the wire cannot contain whitespace")),
        Auth::Sponsor => return Err(bad("sponsor authority cannot be claimed over the wire")),
    }
    Ok(out)
}

pub fn format_resolve_request(handle: &Handle, labels: &[String], unsafe_ok: bool) -> String {
    let mut out = format!("RESOLVE {handle} {}", labels.len());
    for label in labels {
        out.push(' ');
        out.push_str(label);
    }
    if unsafe_ok {
        out.push_str(" unsafe");
    }
    out
}

pub fn format_error(code: &str, detail: &str) -> String {
    // Details are free text but must stay on one line.
    let detail: String = detail.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
    if detail.is_empty() {
        format!("ERR {code}")
    } else {
        format!("ERR {code} {detail}")
    }
}

/// Splits `ERR <CODE> <detail>`.
pub fn parse_error(line: &str) -> Option<(String, String)> {
    let rest = line.strip_prefix("ERR ")?;
    let (code, detail) = rest.split_once(' ').unwrap_or((rest, ""));
    (!code.is_empty()).then(|| (code.to_string(), detail.to_string()))
}

/// `OK <handle> seq=<n> state=<state>`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationReply {
    pub handle: Handle,
    pub seq: u64,
    pub state: String,
}

impl fmt::Display for MutationReply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OK {} seq={} state={}", self.handle, self.seq, self.state)
    }
}

pub fn parse_mutation_reply(line: &str) -> Result<MutationReply, BadRequest> {
    let [ok, h, seq, state] = line.split(' ').collect::<Vec<_>>()[..] else {
        return Err(bad("malformed reply"));
    };
    if ok != "OK" {
        return Err(bad("malformed reply"));
    }
    let seq = seq.strip_prefix("seq=").ok_or_else(|| bad("malformed reply"))?;
    let state = state.strip_prefix("state=").filter(|s| !s.is_empty()).ok_or_else(|| bad("malformed reply"))?;
    Ok(MutationReply { handle: handle_field(h)?, seq: u64_field(seq, "seq")?, state: state.to_string() })
}

/// The RESOLVE success line for `r`.
pub fn format_resolution(r: &ResolutionResult) -> String {
    let bundle: Vec<&str> = r.hop_proofs.iter().map(String::as_str).chain([r.binding_proof.as_str()]).collect();
    let mut out = format!(
        "OK {} ttl={} chain={} verified={} proof={}",
        r.address,
        r.ttl_seconds,
        r.chain.len(),
        u8::from(r.verified),
        hex::encode(bundle.join("\n"))
    );
    if r.compromised {
        out.push_str(" compromised=1");
    }
    out
}

/// A RESOLVE reply, rebuilt from its proof bundle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResolution {
    /// `verified` holds the client's own verdict.
    pub result: ResolutionResult,
    /// What the server claimed.
    pub claimed_verified: bool,
}

/// Parses a RESOLVE reply for `handle`/`labels`. The chain is rebuilt from
/// the signed hops, starting at the handle that was asked for, and the
/// result is verified locally (`strict` also checks every hop signature).
///
/// Any deviation from the exact reply grammar is an error, so a reply
/// either parses to precisely what the server sent or not at all.
pub fn parse_resolution(
    line: &str,
    handle: &Handle,
    labels: &[String],
    unsafe_ok: bool,
    strict: bool,
) -> Result<ParsedResolution, ResolveError> {
    if let Some((code, detail)) = parse_error(line) {
        return Err(ResolveError::Remote { code, detail });
    }
    let malformed = |why: &str| ResolveError::Remote { code: "BAD_REPLY".into(), detail: why.into() };
    let fields: Vec<&str> = line.split(' ').collect();
    let (ok, addr, ttl, chain_len, verified, proof, compromised) = match fields[..] {
        [ok, a, t, c, v, p] => (ok, a, t, c, v, p, false),
        [ok, a, t, c, v, p, "compromised=1"] if unsafe_ok => (ok, a, t, c, v, p, true),
        _ => return Err(malformed("field count")),
    };
    if ok != "OK" {
        return Err(malformed("status"));
    }
    let address: Address = addr.parse().map_err(|_| malformed("address"))?;
    let field = |text: &'static str, f: &str| -> Result<u64, ResolveError> {
        f.strip_prefix(text).and_then(parse_canonical_u64).ok_or_else(|| malformed(text))
    };
    let ttl_seconds = u32::try_from(field("ttl=", ttl)?).map_err(|_| malformed("ttl="))?;
    let chain_len = field("chain=", chain_len)?;
    let claimed_verified = match verified {
        "verified=0" => false,
        "verified=1" => true,
        _ => return Err(malformed("verified=")),
    };
    let bundle = proof
        .strip_prefix("proof=")
        .and_then(parse_lower_hex)
        .and_then(|b| String::from_utf8(b).ok())
        .ok_or_else(|| malformed("proof="))?;
    let mut lines: Vec<String> = bundle.split('\n').map(str::to_string).collect();
    let binding_proof = lines.pop().expect("split yields at least one piece");
    let hop_proofs = lines;
    if chain_len != hop_proofs.len() as u64 + 1 {
        return Err(malformed("chain="));
    }
    let mut chain = vec![handle.clone()];
    for line in &hop_proofs {
        let hop = UpdateRequest::parse_proof_line(line).map_err(|_| malformed("hop proof"))?;
        match hop.update.op {
            Operation::Delegate { target, .. } | Operation::Transfer { target } => chain.push(target),
            _ => return Err(malformed("hop proof")),
        }
    }
    let mut result = ResolutionResult {
        address,
        labels: labels.to_vec(),
        chain,
        hop_proofs,
        binding_proof,
        verified: false,
        ttl_seconds,
        compromised,
    };
    result.verified = if strict { verify_result_strict(&result) } else { verify_result(&result) };
    Ok(ParsedResolution { result, claimed_verified })
}

/// True when `line` is a well-formed reply whose answer verifies and agrees
/// with the server's own verdict.
pub fn response_verifies(line: &str, handle: &Handle, labels: &[String], unsafe_ok: bool, strict: bool) -> bool {
    parse_resolution(line, handle, labels, unsafe_ok, strict)
        .map(|p| p.result.verified && p.claimed_verified)
        .unwrap_or(false)
}
