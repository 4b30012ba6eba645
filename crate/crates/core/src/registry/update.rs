//! The six lifecycle updates and their canonical text.
//!
//! Signed message, UTF-8, `|`-separated, fields in this fixed order:
//!
//! ```text
//! ONHSv1|CREATE|<handle>|0|<owner>
//! ONHSv1|ASSIGN|<handle>|<seq>|<labels or @>|<address>|<ttl>|<expiry>
//! ONHSv1|DELEGATE|<handle>|<seq>|<target>|<expiry>
//! ONHSv1|CANCEL|<handle>|<seq>
//! ONHSv1|TRANSFER|<handle>|<seq>|<target>
//! ONHSv1|COMPROMISE|<handle>|<seq>
//! ```
//!
//! `<owner>` is the lowercase hex public key for type 1 handles and the
//! password verifier for type 0 handles. A proof line appends
//! `|<signature hex>|<public key hex>`, with `-` in both places for updates
//! that were authenticated by password.

use std::fmt;
use std::str::FromStr;

use crate::crypto::{self, KeyPair, PasswordVerifier, Signature};
use crate::handle::{labels_from_text, labels_to_text, parse_handle, Handle};
use crate::registry::address::Address;
use crate::Timestamp;

pub const PROTOCOL_TAG: &str = "ONHSv1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed update: {0}")]
pub struct MalformedUpdate(pub String);

fn malformed(why: impl Into<String>) -> MalformedUpdate {
    MalformedUpdate(why.into())
}

/// Decimal without sign, leading zeros or surrounding space.
pub fn parse_canonical_u64(text: &str) -> Option<u64> {
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) || (text.len() > 1 && text.starts_with('0')) {
        return None;
    }
    text.parse().ok()
}

/// Lowercase, even-length hex only.
pub fn parse_lower_hex(text: &str) -> Option<Vec<u8>> {
    if text.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return None;
    }
    hex::decode(text).ok()
}

fn canonical_handle(text: &str) -> Result<Handle, MalformedUpdate> {
    let h = parse_handle(text).map_err(|e| malformed(e.to_string()))?;
    if h.to_string() != text {
        return Err(malformed(format!("non-canonical handle {text}")));
    }
    Ok(h)
}

/// Who may update a handle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Owner {
    PublicKey(Vec<u8>),
    Password(PasswordVerifier),
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Owner::PublicKey(key) => f.write_str(&hex::encode(key)),
            Owner::Password(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Owner {
    type Err = MalformedUpdate;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.starts_with("pbkdf2-") {
            PasswordVerifier::parse(s)
                .map(Owner::Password)
                .map_err(|e| malformed(e.to_string()))
        } else {
            parse_lower_hex(s)
                .filter(|k| !k.is_empty())
                .map(Owner::PublicKey)
                .ok_or_else(|| malformed("owner key is not lowercase hex"))
        }
    }
}

impl serde::Serialize for Owner {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Owner {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <String as serde::Deserialize>::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Create,
    Assign,
    Delegate,
    Cancel,
    Transfer,
    Compromise,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Create,
        OpKind::Assign,
        OpKind::Delegate,
        OpKind::Cancel,
        OpKind::Transfer,
        OpKind::Compromise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Create => "CREATE",
            OpKind::Assign => "ASSIGN",
            OpKind::Delegate => "DELEGATE",
            OpKind::Cancel => "CANCEL",
            OpKind::Transfer => "TRANSFER",
            OpKind::Compromise => "COMPROMISE",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Number of `|`-separated fields in the signed message.
    fn message_fields(self) -> usize {
        match self {
            OpKind::Create | OpKind::Transfer => 5,
            OpKind::Assign => 8,
            OpKind::Delegate => 6,
            OpKind::Cancel | OpKind::Compromise => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operation {
    Create { owner: Owner },
    Assign { labels: Vec<String>, address: Address, ttl: u32, expiry: Timestamp },
    Delegate { target: Handle, expiry: Timestamp },
    Cancel,
    Transfer { target: Handle },
    Compromise,
}

impl Operation {
    pub fn kind(&self) -> OpKind {
        match self {
            Operation::Create { .. } => OpKind::Create,
            Operation::Assign { .. } => OpKind::Assign,
            Operation::Delegate { .. } => OpKind::Delegate,
            Operation::Cancel => OpKind::Cancel,
            Operation::Transfer { .. } => OpKind::Transfer,
            Operation::Compromise => OpKind::Compromise,
        }
    }
}

/// An unauthenticated update: what gets signed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Update {
    pub handle: Handle,
    pub seq: u64,
    pub op: Operation,
}

impl Update {
    pub fn new(handle: Handle, seq: u64, op: Operation) -> Self {
        Update { handle, seq, op }
    }

    pub fn message(&self) -> String {
        let mut out = format!("{PROTOCOL_TAG}|{}|{}|{}", self.op.kind().name(), self.handle, self.seq);
        match &self.op {
            Operation::Create { owner } => out.push_str(&format!("|{owner}")),
            Operation::Assign { labels, address, ttl, expiry } => {
                out.push_str(&format!("|{}|{address}|{ttl}|{expiry}", labels_to_text(labels)))
            }
            Operation::Delegate { target, expiry } => out.push_str(&format!("|{target}|{expiry}")),
            Operation::Transfer { target } => out.push_str(&format!("|{target}")),
            Operation::Cancel | Operation::Compromise => {}
        }
        out
    }

    pub fn parse_message(text: &str) -> Result<Self, MalformedUpdate> {
        let fields: Vec<&str> = text.split('|').collect();
        Self::from_fields(&fields)
    }

    fn from_fields(fields: &[&str]) -> Result<Self, MalformedUpdate> {
        if fields.len() < 4 || fields[0] != PROTOCOL_TAG {
            return Err(malformed("missing protocol tag"));
        }
        let kind = OpKind::from_name(fields[1]).ok_or_else(|| malformed(format!("unknown op {}", fields[1])))?;
        if fields.len() != kind.message_fields() {
            return Err(malformed(format!("{} takes {} fields", kind.name(), kind.message_fields())));
        }
        let handle = canonical_handle(fields[2])?;
        let seq = parse_canonical_u64(fields[3]).ok_or_else(|| malformed("bad seq"))?;
        let time = |s: &str| parse_canonical_u64(s).ok_or_else(|| malformed(format!("bad time {s}")));
        let op = match kind {
            OpKind::Create => Operation::Create { owner: fields[4].parse()? },
            OpKind::Assign => {
                let labels = labels_from_text(fields[4]).map_err(|e| malformed(e.to_string()))?;
                let address = fields[5].parse().map_err(|e: crate::registry::BadAddress| malformed(e.to_string()))?;
                let ttl = parse_canonical_u64(fields[6])
                    .and_then(|t| u32::try_from(t).ok())
                    .ok_or_else(|| malformed("bad ttl"))?;
                Operation::Assign { labels, address, ttl, expiry: time(fields[7])? }
            }
            OpKind::Delegate => Operation::Delegate {
                target: canonical_handle(fields[4])?,
                expiry: time(fields[5])?,
            },
            OpKind::Transfer => Operation::Transfer { target: canonical_handle(fields[4])? },
            OpKind::Cancel => Operation::Cancel,
            OpKind::Compromise => Operation::Compromise,
        };
        Ok(Update { handle, seq, op })
    }

    /// Signs the canonical message with `kp`.
    pub fn sign(self, kp: &KeyPair) -> UpdateRequest {
        let sig = crypto::sign(self.message().as_bytes(), kp);
        UpdateRequest {
            update: self,
            auth: Auth::Signature {
                signature: sig.bytes,
                public_key: kp.public_key_bytes().to_vec(),
            },
        }
    }

    pub fn with_password(self, password: impl Into<String>) -> UpdateRequest {
        UpdateRequest { update: self, auth: Auth::Password(password.into()) }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub enum Auth {
    /// Type 1: signature over the canonical message plus the signer's key.
    Signature { signature: Vec<u8>, public_key: Vec<u8> },
    /// Type 0: the owner's password, checked against the stored verifier.
    Password(String),
    /// Accepted by the sponsor itself: type 0 creation, or a type 0 entry
    /// replayed from the sponsor's own log.
    Sponsor,
}

impl fmt::Debug for Auth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Auth::Signature { signature, public_key } => f
                .debug_struct("Signature")
                .field("signature", &hex::encode(signature))
                .field("public_key", &hex::encode(public_key))
                .finish(),
            Auth::Password(_) => f.write_str("Password(..)"),
            Auth::Sponsor => f.write_str("Sponsor"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateRequest {
    pub update: Update,
    pub auth: Auth,
}

impl UpdateRequest {
    /// `message|sig|key`. Password material never leaves the request.
    pub fn proof_line(&self) -> String {
        match &self.auth {
            Auth::Signature { signature, public_key } => format!(
                "{}|{}|{}",
                self.update.message(),
                hex::encode(signature),
                hex::encode(public_key)
            ),
            Auth::Password(_) | Auth::Sponsor => format!("{}|-|-", self.update.message()),
        }
    }

    pub fn parse_proof_line(text: &str) -> Result<Self, MalformedUpdate> {
        let fields: Vec<&str> = text.split('|').collect();
        if fields.len() < 6 {
            return Err(malformed("proof line too short"));
        }
        let (message, auth) = fields.split_at(fields.len() - 2);
        let update = Update::from_fields(message)?;
        let auth = match (auth[0], auth[1]) {
            ("-", "-") => Auth::Sponsor,
            (sig, key) => Auth::Signature {
                signature: parse_lower_hex(sig).filter(|s| !s.is_empty()).ok_or_else(|| malformed("bad signature hex"))?,
                public_key: parse_lower_hex(key).filter(|k| !k.is_empty()).ok_or_else(|| malformed("bad key hex"))?,
            },
        };
        Ok(UpdateRequest { update, auth })
    }

    /// Verifies the signature against the message and checks that the
    /// signing key is the one embedded in the handle. Does not consult any
    /// registry state.
    pub fn self_certifies(&self) -> bool {
        let Auth::Signature { signature, public_key } = &self.auth else {
            return false;
        };
        let Some(alg) = self.update.handle.alg_code() else {
            return false;
        };
        if !matches!(crypto::digest_matches(&self.update.handle, public_key), Ok(true)) {
            return false;
        }
        let sig = Signature { alg_code: alg, bytes: signature.clone() };
        matches!(
            crypto::verify_as(alg, self.update.message().as_bytes(), &sig, public_key),
            Ok(true)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn h() -> Handle {
        parse_handle("h1g5k0061A38F9A3540B9").unwrap()
    }

    #[test]
    fn canonical_messages() {
        let target = parse_handle("h1g5kDEADBEEF").unwrap();
        let cases = [
            (
                Operation::Create { owner: Owner::PublicKey(vec![3, 1, 0, 1, 0xab]) },
                0,
                "ONHSv1|CREATE|h1g5k0061A38F9A3540B9|0|03010001ab",
            ),
            (
                Operation::Assign {
                    labels: vec![],
                    address: Address::Ipv4(Ipv4Addr::new(192, 0, 2, 7)),
                    ttl: 3600,
                    expiry: 86400,
                },
                1,
                "ONHSv1|ASSIGN|h1g5k0061A38F9A3540B9|1|@|192.0.2.7|3600|86400",
            ),
            (
                Operation::Assign {
                    labels: vec!["chocolate".into()],
                    address: Address::Url("https://ydnac.example/".into()),
                    ttl: 60,
                    expiry: 10,
                },
                3,
                "ONHSv1|ASSIGN|h1g5k0061A38F9A3540B9|3|chocolate|url:https://ydnac.example/|60|10",
            ),
            (
                Operation::Delegate { target: target.clone(), expiry: 99 },
                4,
                "ONHSv1|DELEGATE|h1g5k0061A38F9A3540B9|4|h1g5kDEADBEEF|99",
            ),
            (Operation::Cancel, 5, "ONHSv1|CANCEL|h1g5k0061A38F9A3540B9|5"),
            (Operation::Transfer { target }, 6, "ONHSv1|TRANSFER|h1g5k0061A38F9A3540B9|6|h1g5kDEADBEEF"),
            (Operation::Compromise, 7, "ONHSv1|COMPROMISE|h1g5k0061A38F9A3540B9|7"),
        ];
        for (op, seq, text) in cases {
            let u = Update::new(h(), seq, op);
            assert_eq!(u.message(), text);
            assert_eq!(Update::parse_message(text).unwrap(), u);
        }
    }

    #[test]
    fn rejects_non_canonical_messages() {
        for text in [
            "ONHSv2|CANCEL|h1g5k0061A38F9A3540B9|5",
            "ONHSv1|CANCEL|h1g5k0061a38f9a3540b9|5",
            "ONHSv1|CANCEL|h1g5k0061A38F9A3540B9|05",
            "ONHSv1|CANCEL|h1g5k0061A38F9A3540B9|5|extra",
            "ONHSv1|FROB|h1g5k0061A38F9A3540B9|5",
            "ONHSv1|ASSIGN|h1g5k0061A38F9A3540B9|1|@|192.0.2.07|3600|86400",
            "ONHSv1|ASSIGN|h1g5k0061A38F9A3540B9|1||192.0.2.7|3600|86400",
            "ONHSv1|ASSIGN|h1g5k0061A38F9A3540B9|1|@|192.0.2.7|99999999999|86400",
            "ONHSv1|CREATE|h1g5k0061A38F9A3540B9|0|0301000AB",
        ] {
            assert!(Update::parse_message(text).is_err(), "{text}");
        }
    }

    #[test]
    fn proof_line_round_trip() {
        let kp = crypto::generate_keypair(5, 512, Some(b"update tests")).unwrap();
        let handle = kp.handle(16).unwrap();
        let req = Update::new(handle, 2, Operation::Cancel).sign(&kp);
        assert!(req.self_certifies());
        let line = req.proof_line();
        let back = UpdateRequest::parse_proof_line(&line).unwrap();
        assert_eq!(back, req);
        assert!(back.self_certifies());

        let pw = Update::new(Handle::sponsor("061A38F9A3540B9").unwrap(), 1, Operation::Cancel).with_password("secret");
        assert_eq!(pw.proof_line(), "ONHSv1|CANCEL|h0061A38F9A3540B9|1|-|-");
        assert!(!pw.self_certifies());
        assert_eq!(UpdateRequest::parse_proof_line(&pw.proof_line()).unwrap().auth, Auth::Sponsor);
    }
}
