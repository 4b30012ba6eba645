//! Handle tokens and their embedding as DNS labels.
//!
//! Grammar:
//!
//! ```text
//! handle := "h" type rest
//! type 1 := "1" "g" alg-decimal "k" digest-hex     (8..=40 hex digits)
//! type 0 := "0" digest-hex                         (15..=40 hex digits)
//! ```
//!
//! Structural characters are lowercase and case-sensitive. Hex digits are
//! accepted in either case and always formatted uppercase.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Longest legal DNS label.
pub const MAX_LABEL_LEN: usize = 63;
/// Digest bounds for public-key handles.
pub const PUBLIC_KEY_DIGEST_LEN: std::ops::RangeInclusive<usize> = 8..=40;
/// Digest bounds for sponsor-password handles.
pub const SPONSOR_DIGEST_LEN: std::ops::RangeInclusive<usize> = 15..=40;
/// Digest length recommended for self-assigned handles.
pub const RECOMMENDED_DIGEST_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HandleError {
    #[error("BAD_HANDLE {0}")]
    BadHandle(String),
    #[error("BAD_LABEL {0}")]
    BadLabel(String),
    #[error("WRONG_ROOT {0}")]
    WrongRoot(String),
}

impl HandleError {
    pub fn code(&self) -> &'static str {
        match self {
            HandleError::BadHandle(_) => "BAD_HANDLE",
            HandleError::BadLabel(_) => "BAD_LABEL",
            HandleError::WrongRoot(_) => "WRONG_ROOT",
        }
    }
}

fn bad(why: impl Into<String>) -> HandleError {
    HandleError::BadHandle(why.into())
}

/// How updates to a handle are authenticated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AuthType {
    /// Type `0`: the sponsor holds a password verifier.
    SponsorPassword,
    /// Type `1`: updates are signed by the key whose hash ends in the digest.
    PublicKey,
}

impl AuthType {
    pub fn code(self) -> char {
        match self {
            AuthType::SponsorPassword => '0',
            AuthType::PublicKey => '1',
        }
    }
}

/// A parsed handle. Construct through [`Handle::public_key`],
/// [`Handle::sponsor`] or parsing so the invariants always hold.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle {
    auth_type: AuthType,
    alg_code: Option<u16>,
    digest_hex: String,
}

fn normalize_digest(digest: &str, bounds: &std::ops::RangeInclusive<usize>) -> Result<String, HandleError> {
    if !bounds.contains(&digest.len()) {
        return Err(bad(format!(
            "digest-length {} outside {}..={}",
            digest.len(),
            bounds.start(),
            bounds.end()
        )));
    }
    if let Some(c) = digest.chars().find(|c| !c.is_ascii_hexdigit()) {
        return Err(bad(format!("non-hex digit {c:?}")));
    }
    Ok(digest.to_ascii_uppercase())
}

impl Handle {
    pub fn public_key(alg_code: u16, digest_hex: &str) -> Result<Self, HandleError> {
        if alg_code == 0 {
            return Err(bad("algorithm code 0"));
        }
        Ok(Handle {
            auth_type: AuthType::PublicKey,
            alg_code: Some(alg_code),
            digest_hex: normalize_digest(digest_hex, &PUBLIC_KEY_DIGEST_LEN)?,
        })
    }

    pub fn sponsor(digest_hex: &str) -> Result<Self, HandleError> {
        Ok(Handle {
            auth_type: AuthType::SponsorPassword,
            alg_code: None,
            digest_hex: normalize_digest(digest_hex, &SPONSOR_DIGEST_LEN)?,
        })
    }

    pub fn auth_type(&self) -> AuthType {
        self.auth_type
    }

    /// Signature algorithm code; `None` for sponsor-password handles.
    pub fn alg_code(&self) -> Option<u16> {
        self.alg_code
    }

    /// Uppercase hex digest.
    pub fn digest_hex(&self) -> &str {
        &self.digest_hex
    }

    pub fn is_public_key(&self) -> bool {
        self.auth_type == AuthType::PublicKey
    }
}

impl fmt::Display for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.alg_code {
            Some(alg) => write!(f, "h1g{}k{}", alg, self.digest_hex),
            None => write!(f, "h0{}", self.digest_hex),
        }
    }
}

impl FromStr for Handle {
    type Err = HandleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_handle(s)
    }
}

impl Serialize for Handle {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Handle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_handle(&text).map_err(serde::de::Error::custom)
    }
}

pub fn parse_handle(text: &str) -> Result<Handle, HandleError> {
    if text.len() > MAX_LABEL_LEN {
        return Err(bad(format!("longer than {MAX_LABEL_LEN} characters")));
    }
    let rest = text.strip_prefix('h').ok_or_else(|| bad("missing h prefix"))?;
    let mut chars = rest.chars();
    match chars.next() {
        Some('1') => {
            let params = chars.as_str().strip_prefix('g').ok_or_else(|| bad("expected g after type 1"))?;
            let k = params.find('k').ok_or_else(|| bad("missing k"))?;
            let alg_text = &params[..k];
            if alg_text.is_empty() || !alg_text.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad("algorithm code is not decimal"));
            }
            if alg_text.len() > 1 && alg_text.starts_with('0') {
                return Err(bad("algorithm code has a leading zero"));
            }
            let alg: u16 = alg_text.parse().map_err(|_| bad("algorithm code out of range"))?;
            Handle::public_key(alg, &params[k + 1..])
        }
        Some('0') => Handle::sponsor(chars.as_str()),
        Some(c) => Err(bad(format!("unknown type {c:?}"))),
        None => Err(bad("empty after h")),
    }
}

pub fn format_handle(h: &Handle) -> String {
    h.to_string()
}

/// Checks a subdomain label: `[a-z]([a-z0-9-]*[a-z0-9])?`, at most 63 characters.
pub fn validate_label(label: &str) -> Result<(), HandleError> {
    let b = label.as_bytes();
    let ok = !b.is_empty()
        && b.len() <= MAX_LABEL_LEN
        && b[0].is_ascii_lowercase()
        && b.iter().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == b'-')
        && *b.last().unwrap() != b'-';
    if ok {
        Ok(())
    } else {
        Err(HandleError::BadLabel(label.to_string()))
    }
}

/// Checks a domain suffix such as `handleroot.nicesponsor.org`.
pub fn validate_root(root: &str) -> Result<(), HandleError> {
    if root.is_empty() || root.len() > 253 {
        return Err(HandleError::WrongRoot(root.to_string()));
    }
    for part in root.split('.') {
        let b = part.as_bytes();
        let ok = !b.is_empty()
            && b.len() <= MAX_LABEL_LEN
            && b[0].is_ascii_alphanumeric()
            && b[b.len() - 1].is_ascii_alphanumeric()
            && b.iter().all(|c| c.is_ascii_alphanumeric() || *c == b'-');
        if !ok {
            return Err(HandleError::WrongRoot(root.to_string()));
        }
    }
    Ok(())
}

/// A handle placed in the DNS tree: `labels... . handle . root`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HandleFqdn {
    pub labels: Vec<String>,
    pub handle: Handle,
    pub root: String,
}

impl fmt::Display for HandleFqdn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for label in &self.labels {
            write!(f, "{label}.")?;
        }
        write!(f, "{}.{}", self.handle, self.root)
    }
}

pub fn embed_fqdn(h: &Handle, labels: &[String], root: &str) -> Result<HandleFqdn, HandleError> {
    for label in labels {
        validate_label(label)?;
    }
    validate_root(root)?;
    Ok(HandleFqdn {
        labels: labels.to_vec(),
        handle: h.clone(),
        root: root.to_string(),
    })
}

/// Splits `labels.handle.root` back into its parts. A trailing dot on
/// `text` (absolute form) is accepted.
pub fn extract_fqdn(text: &str, root: &str) -> Result<HandleFqdn, HandleError> {
    validate_root(root)?;
    let text = text.strip_suffix('.').unwrap_or(text);
    let wrong_root = || HandleError::WrongRoot(format!("{text} is not under {root}"));
    let head = text
        .strip_suffix(root)
        .and_then(|h| h.strip_suffix('.'))
        .ok_or_else(wrong_root)?;
    let mut parts: Vec<&str> = head.split('.').collect();
    let handle_text = parts.pop().ok_or_else(wrong_root)?;
    let handle = parse_handle(handle_text)?;
    let labels = parts.into_iter().map(str::to_string).collect::<Vec<_>>();
    embed_fqdn(&handle, &labels, root)
}

/// Joins a label path for storage and signing; the empty path is `@`.
pub fn labels_to_text(labels: &[String]) -> String {
    if labels.is_empty() {
        "@".to_string()
    } else {
        labels.join(".")
    }
}

pub fn labels_from_text(text: &str) -> Result<Vec<String>, HandleError> {
    if text == "@" {
        return Ok(Vec::new());
    }
    let labels: Vec<String> = text.split('.').map(str::to_string).collect();
    for label in &labels {
        validate_label(label)?;
    }
    Ok(labels)
}
