//! Key pairs, key digests for self-assigned handles, update signatures and
//! password verifiers for sponsor handles.
//!
//! # Public-key encoding
//!
//! RSA public keys are carried in the DNSSEC `DNSKEY` layout:
//!
//! ```text
//! exponent length   1 byte, or 0x00 followed by a 2-byte big-endian length
//! exponent          big-endian, no leading zero bytes
//! modulus           big-endian, no leading zero bytes
//! ```
//!
//! The key digest of a handle is the last `n` hex digits of the hash of
//! exactly these bytes, with no further framing.

use std::fmt;

use pbkdf2::pbkdf2_hmac;
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rsa::pkcs8::{DecodePrivateKey, EncodePrivateKey, LineEnding};
use rsa::traits::PublicKeyParts;
use rsa::{BigUint, Pkcs1v15Sign, RsaPrivateKey, RsaPublicKey};
use sha1::Sha1;
use sha2::{Digest, Sha256};

use crate::handle::{AuthType, Handle, PUBLIC_KEY_DIGEST_LEN};

/// Modulus size used when the caller does not ask for one.
pub const DEFAULT_RSA_BITS: usize = 2048;
/// Smallest modulus accepted; only sensible for tests.
pub const MIN_RSA_BITS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("UNKNOWN_ALG {0}")]
    UnknownAlg(u16),
    #[error("BAD_DIGEST_LEN {0}")]
    BadDigestLen(usize),
    #[error("BAD_KEY {0}")]
    BadKey(String),
    #[error("NOT_PUBLIC_KEY_HANDLE {0}")]
    NotPublicKeyHandle(String),
}

/// Signature algorithms in the registry, keyed by their IANA DNSSEC number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// 5: RSA/SHA-1, the algorithm of the original self-assigned handles.
    RsaSha1,
    /// 8: RSA/SHA-256.
    RsaSha256,
}

impl Algorithm {
    pub fn from_code(code: u16) -> Result<Self, CryptoError> {
        match code {
            5 => Ok(Algorithm::RsaSha1),
            8 => Ok(Algorithm::RsaSha256),
            other => Err(CryptoError::UnknownAlg(other)),
        }
    }

    pub fn code(self) -> u16 {
        match self {
            Algorithm::RsaSha1 => 5,
            Algorithm::RsaSha256 => 8,
        }
    }

    pub fn hash(self, data: &[u8]) -> Vec<u8> {
        match self {
            Algorithm::RsaSha1 => Sha1::digest(data).to_vec(),
            Algorithm::RsaSha256 => Sha256::digest(data).to_vec(),
        }
    }

    fn padding(self) -> Pkcs1v15Sign {
        match self {
            Algorithm::RsaSha1 => Pkcs1v15Sign::new::<Sha1>(),
            Algorithm::RsaSha256 => Pkcs1v15Sign::new::<Sha256>(),
        }
    }
}

#[derive(Clone)]
pub struct KeyPair {
    alg: Algorithm,
    secret: RsaPrivateKey,
    public_key_bytes: Vec<u8>,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("alg", &self.alg.code())
            .field("public_key", &hex::encode(&self.public_key_bytes))
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn alg(&self) -> Algorithm {
        self.alg
    }

    pub fn public_key_bytes(&self) -> &[u8] {
        &self.public_key_bytes
    }

    /// Derives this key's self-assigned handle.
    pub fn handle(&self, digest_len: usize) -> Result<Handle, CryptoError> {
        derive_handle(&self.public_key_bytes, self.alg.code(), digest_len)
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        sign(msg, self)
    }

    /// Secret key file contents: an `alg=<code>` line followed by PKCS#8 PEM.
    pub fn to_secret_text(&self) -> String {
        let pem = self
            .secret
            .to_pkcs8_pem(LineEnding::LF)
            .expect("an RSA key always encodes as PKCS#8");
        format!("alg={}\n{}", self.alg.code(), pem.as_str())
    }

    pub fn from_secret_text(text: &str) -> Result<Self, CryptoError> {
        let (first, pem) = text
            .split_once('\n')
            .ok_or_else(|| CryptoError::BadKey("secret key file is truncated".into()))?;
        let code: u16 = first
            .trim()
            .strip_prefix("alg=")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| CryptoError::BadKey("missing alg= line".into()))?;
        let alg = Algorithm::from_code(code)?;
        let secret = RsaPrivateKey::from_pkcs8_pem(pem.trim())
            .map_err(|e| CryptoError::BadKey(e.to_string()))?;
        let public_key_bytes = encode_public_key(&secret.to_public_key());
        Ok(KeyPair { alg, secret, public_key_bytes })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub alg_code: u16,
    pub bytes: Vec<u8>,
}

pub fn encode_public_key(key: &RsaPublicKey) -> Vec<u8> {
    let e = key.e().to_bytes_be();
    let n = key.n().to_bytes_be();
    let mut out = Vec::with_capacity(3 + e.len() + n.len());
    if e.len() <= 255 {
        out.push(e.len() as u8);
    } else {
        out.push(0);
        out.extend_from_slice(&(e.len() as u16).to_be_bytes());
    }
    out.extend_from_slice(&e);
    out.extend_from_slice(&n);
    out
}

pub fn decode_public_key(bytes: &[u8]) -> Result<RsaPublicKey, CryptoError> {
    let bad = |why: &str| CryptoError::BadKey(why.to_string());
    let (&first, rest) = bytes.split_first().ok_or_else(|| bad("empty key"))?;
    let (exp_len, rest) = if first == 0 {
        if rest.len() < 2 {
            return Err(bad("truncated exponent length"));
        }
        (u16::from_be_bytes([rest[0], rest[1]]) as usize, &rest[2..])
    } else {
        (first as usize, rest)
    };
    if exp_len == 0 || rest.len() <= exp_len {
        return Err(bad("exponent or modulus missing"));
    }
    let (e, n) = rest.split_at(exp_len);
    if e[0] == 0 || n[0] == 0 {
        return Err(bad("non-minimal integer encoding"));
    }
    RsaPublicKey::new(BigUint::from_bytes_be(n), BigUint::from_bytes_be(e))
        .map_err(|e| CryptoError::BadKey(e.to_string()))
}

/// Generates a key pair. With a seed the pair is a pure function of
/// `(alg_code, bits, seed)`; without one it draws from the OS.
pub fn generate_keypair(alg_code: u16, bits: usize, seed: Option<&[u8]>) -> Result<KeyPair, CryptoError> {
    let alg = Algorithm::from_code(alg_code)?;
    if bits < MIN_RSA_BITS {
        return Err(CryptoError::BadKey(format!("modulus of {bits} bits is below {MIN_RSA_BITS}")));
    }
    let secret = match seed {
        Some(seed) => {
            let mut rng = ChaCha20Rng::from_seed(Sha256::digest(seed).into());
            RsaPrivateKey::new(&mut rng, bits)
        }
        None => RsaPrivateKey::new(&mut OsRng, bits),
    }
    .map_err(|e| CryptoError::BadKey(e.to_string()))?;
    let public_key_bytes = encode_public_key(&secret.to_public_key());
    Ok(KeyPair { alg, secret, public_key_bytes })
}

/// Uppercase hex suffix of length `digest_len` of the key hash.
pub fn key_digest(public_key: &[u8], alg_code: u16, digest_len: usize) -> Result<String, CryptoError> {
    let alg = Algorithm::from_code(alg_code)?;
    if !PUBLIC_KEY_DIGEST_LEN.contains(&digest_len) {
        return Err(CryptoError::BadDigestLen(digest_len));
    }
    let full = hex::encode_upper(alg.hash(public_key));
    if digest_len > full.len() {
        return Err(CryptoError::BadDigestLen(digest_len));
    }
    Ok(full[full.len() - digest_len..].to_string())
}

pub fn derive_handle(public_key: &[u8], alg_code: u16, digest_len: usize) -> Result<Handle, CryptoError> {
    let digest = key_digest(public_key, alg_code, digest_len)?;
    Ok(Handle::public_key(alg_code, &digest).expect("digest length already checked"))
}

/// Whether `public_key` is the key embedded in `h`. Unknown algorithms
/// never match.
pub fn digest_matches(h: &Handle, public_key: &[u8]) -> Result<bool, CryptoError> {
    let alg = match (h.auth_type(), h.alg_code()) {
        (AuthType::PublicKey, Some(alg)) => alg,
        _ => return Err(CryptoError::NotPublicKeyHandle(h.to_string())),
    };
    Ok(key_digest(public_key, alg, h.digest_hex().len())
        .map(|d| d == h.digest_hex())
        .unwrap_or(false))
}

pub fn sign(msg: &[u8], kp: &KeyPair) -> Signature {
    let hashed = kp.alg.hash(msg);
    let bytes = kp
        .secret
        .sign(kp.alg.padding(), &hashed)
        .expect("modulus is large enough for the digest info");
    Signature { alg_code: kp.alg.code(), bytes }
}

/// Checks `sig` over exactly `msg` under the algorithm the signature names.
pub fn verify(msg: &[u8], sig: &Signature, public_key: &[u8]) -> Result<bool, CryptoError> {
    let alg = Algorithm::from_code(sig.alg_code)?;
    let Ok(key) = decode_public_key(public_key) else {
        return Ok(false);
    };
    Ok(key.verify(alg.padding(), &alg.hash(msg), &sig.bytes).is_ok())
}

/// Like [`verify`], but a signature claiming any algorithm other than
/// `expected_alg` is rejected outright.
pub fn verify_as(expected_alg: u16, msg: &[u8], sig: &Signature, public_key: &[u8]) -> Result<bool, CryptoError> {
    Algorithm::from_code(expected_alg)?;
    if sig.alg_code != expected_alg {
        return Ok(false);
    }
    verify(msg, sig, public_key)
}

/// Salted PBKDF2-HMAC-SHA256 verifier for sponsor-password handles.
/// Text form: `pbkdf2-sha256$<iterations>$<salt hex>$<hash hex>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PasswordVerifier {
    iterations: u32,
    salt: Vec<u8>,
    hash: Vec<u8>,
}

impl PasswordVerifier {
    pub const DEFAULT_ITERATIONS: u32 = 100_000;

    pub fn new<R: RngCore>(password: &str, iterations: u32, rng: &mut R) -> Self {
        let mut salt = vec![0u8; 16];
        rng.fill_bytes(&mut salt);
        let hash = Self::stretch(password, &salt, iterations);
        PasswordVerifier { iterations, salt, hash }
    }

    fn stretch(password: &str, salt: &[u8], iterations: u32) -> Vec<u8> {
        let mut out = vec![0u8; 32];
        pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations, &mut out);
        out
    }

    pub fn check(&self, password: &str) -> bool {
        let candidate = Self::stretch(password, &self.salt, self.iterations);
        candidate.iter().zip(&self.hash).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
    }

    pub fn parse(text: &str) -> Result<Self, CryptoError> {
        let bad = || CryptoError::BadKey(format!("malformed password verifier {text:?}"));
        let mut parts = text.split('$');
        if parts.next() != Some("pbkdf2-sha256") {
            return Err(bad());
        }
        let iterations = parts.next().and_then(|s| s.parse().ok()).filter(|&i| i > 0).ok_or_else(bad)?;
        let salt = parts.next().and_then(|s| hex::decode(s).ok()).ok_or_else(bad)?;
        let hash = parts.next().and_then(|s| hex::decode(s).ok()).filter(|h| h.len() == 32).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(PasswordVerifier { iterations, salt, hash })
    }
}

impl fmt::Display for PasswordVerifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pbkdf2-sha256${}${}${}",
            self.iterations,
            hex::encode(&self.salt),
            hex::encode(&self.hash)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn test_key() -> &'static KeyPair {
        static KEY: OnceLock<KeyPair> = OnceLock::new();
        KEY.get_or_init(|| generate_keypair(5, 512, Some(b"crypto unit tests")).unwrap())
    }

    // Last 16 hex digits of the FIPS 180-1 vectors, computed with an
    // independent SHA-1 implementation.
    #[test]
    fn empty_key_digest() {
        let h = derive_handle(b"", 5, 16).unwrap();
        assert_eq!(h.digest_hex(), "95601890AFD80709");
        assert_eq!(h.to_string(), "h1g5k95601890AFD80709");
    }

    #[test]
    fn abc_key_digest() {
        assert_eq!(derive_handle(b"abc", 5, 16).unwrap().digest_hex(), "7850C26C9CD0D89D");
        assert_eq!(
            derive_handle(b"abc", 5, 40).unwrap().digest_hex(),
            "A9993E364706816ABA3E25717850C26C9CD0D89D"
        );
    }

    #[test]
    fn digest_length_bounds() {
        assert_eq!(derive_handle(b"x", 5, 7), Err(CryptoError::BadDigestLen(7)));
        assert_eq!(derive_handle(b"x", 5, 41), Err(CryptoError::BadDigestLen(41)));
        assert_eq!(derive_handle(b"x", 99, 16), Err(CryptoError::UnknownAlg(99)));
    }

    #[test]
    fn unknown_alg_on_generate() {
        assert_eq!(generate_keypair(99, 512, None).unwrap_err(), CryptoError::UnknownAlg(99));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = generate_keypair(5, 512, Some(b"seed")).unwrap();
        let b = generate_keypair(5, 512, Some(b"seed")).unwrap();
        let c = generate_keypair(5, 512, Some(b"other seed")).unwrap();
        assert_eq!(a.public_key_bytes(), b.public_key_bytes());
        assert_ne!(a.public_key_bytes(), c.public_key_bytes());
    }

    #[test]
    fn unseeded_generation_is_fresh() {
        let keys: std::collections::HashSet<Vec<u8>> = (0..10)
            .map(|_| generate_keypair(5, 512, None).unwrap().public_key_bytes().to_vec())
            .collect();
        assert_eq!(keys.len(), 10);
    }

    #[test]
    fn public_key_encoding_round_trip() {
        let kp = test_key();
        let bytes = kp.public_key_bytes();
        // 65537 = 0x010001, three exponent bytes.
        assert_eq!(&bytes[..4], &[3, 1, 0, 1]);
        assert_eq!(bytes.len(), 1 + 3 + 64);
        let key = decode_public_key(bytes).unwrap();
        assert_eq!(encode_public_key(&key), bytes);
        assert!(decode_public_key(&[]).is_err());
        assert!(decode_public_key(&[3, 1, 0, 1]).is_err());
    }

    #[test]
    fn sign_and_verify() {
        let kp = test_key();
        let msg = b"ONHSv1|CANCEL|h1g5kDEADBEEF|1";
        let sig = kp.sign(msg);
        assert!(verify(msg, &sig, kp.public_key_bytes()).unwrap());
        let empty = kp.sign(b"");
        assert!(verify(b"", &empty, kp.public_key_bytes()).unwrap());
        for i in 0..msg.len() {
            let mut m = msg.to_vec();
            m[i] ^= 0x01;
            assert!(!verify(&m, &sig, kp.public_key_bytes()).unwrap(), "byte {i}");
        }
        let mut bad = sig.clone();
        bad.bytes[10] ^= 0x80;
        assert!(!verify(msg, &bad, kp.public_key_bytes()).unwrap());
        let other = generate_keypair(5, 512, Some(b"someone else")).unwrap();
        assert!(!verify(msg, &sig, other.public_key_bytes()).unwrap());
    }

    #[test]
    fn cross_algorithm_never_verifies() {
        let kp = test_key();
        let sig = kp.sign(b"hello");
        let relabeled = Signature { alg_code: 8, bytes: sig.bytes.clone() };
        assert!(!verify(b"hello", &relabeled, kp.public_key_bytes()).unwrap());
        assert!(!verify_as(8, b"hello", &sig, kp.public_key_bytes()).unwrap());
        let unknown = Signature { alg_code: 99, bytes: sig.bytes };
        assert_eq!(verify(b"hello", &unknown, kp.public_key_bytes()), Err(CryptoError::UnknownAlg(99)));
    }

    #[test]
    fn sha256_algorithm() {
        let kp = generate_keypair(8, 512, Some(b"alg 8")).unwrap();
        let h = kp.handle(16).unwrap();
        assert_eq!(h.alg_code(), Some(8));
        assert!(digest_matches(&h, kp.public_key_bytes()).unwrap());
        let sig = kp.sign(b"m");
        assert!(verify_as(8, b"m", &sig, kp.public_key_bytes()).unwrap());
    }

    #[test]
    fn digest_matches_rules() {
        let kp = test_key();
        let h = kp.handle(16).unwrap();
        assert!(digest_matches(&h, kp.public_key_bytes()).unwrap());
        let sponsor = Handle::sponsor("0061A38F9A3540B9").unwrap();
        assert!(matches!(
            digest_matches(&sponsor, kp.public_key_bytes()),
            Err(CryptoError::NotPublicKeyHandle(_))
        ));
        let unknown_alg = Handle::public_key(99, h.digest_hex()).unwrap();
        assert!(!digest_matches(&unknown_alg, kp.public_key_bytes()).unwrap());
    }

    #[test]
    fn secret_text_round_trip() {
        let kp = test_key();
        let back = KeyPair::from_secret_text(&kp.to_secret_text()).unwrap();
        assert_eq!(back.public_key_bytes(), kp.public_key_bytes());
        assert_eq!(back.alg(), kp.alg());
        assert!(KeyPair::from_secret_text("alg=5\nnot pem").is_err());
    }

    #[test]
    fn password_verifier() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let v = PasswordVerifier::new("hunter2", 10, &mut rng);
        assert!(v.check("hunter2"));
        assert!(!v.check("hunter3"));
        let parsed = PasswordVerifier::parse(&v.to_string()).unwrap();
        assert_eq!(parsed, v);
        assert!(PasswordVerifier::parse("md5$1$00$00").is_err());
    }
}
