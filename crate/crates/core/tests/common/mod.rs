#![allow(dead_code)]

use std::net::Ipv4Addr;
use std::sync::OnceLock;

use onhs::crypto::{generate_keypair, KeyPair};
use onhs::handle::Handle;
use onhs::registry::{Address, Operation, Owner, Registry, Update, UpdateRequest};
use onhs::Timestamp;

pub const KEY_COUNT: usize = 20;

/// Deterministic 512-bit keys: small enough to be quick, real enough to sign.
pub fn keys() -> &'static [KeyPair] {
    static KEYS: OnceLock<Vec<KeyPair>> = OnceLock::new();
    KEYS.get_or_init(|| {
        let handles: Vec<_> = (0..KEY_COUNT)
            .map(|i| std::thread::spawn(move || generate_keypair(5, 512, Some(format!("fixture key {i}").as_bytes())).unwrap()))
            .collect();
        handles.into_iter().map(|t| t.join().unwrap()).collect()
    })
}

pub fn key(i: usize) -> &'static KeyPair {
    &keys()[i]
}

pub fn handle_of(kp: &KeyPair) -> Handle {
    kp.handle(16).unwrap()
}

pub fn h(i: usize) -> Handle {
    handle_of(key(i))
}

pub fn ip(a: u8, b: u8, c: u8, d: u8) -> Address {
    Address::Ipv4(Ipv4Addr::new(a, b, c, d))
}

pub fn create_req(kp: &KeyPair) -> UpdateRequest {
    let owner = Owner::PublicKey(kp.public_key_bytes().to_vec());
    Update::new(handle_of(kp), 0, Operation::Create { owner }).sign(kp)
}

pub fn signed(i: usize, seq: u64, op: Operation) -> UpdateRequest {
    Update::new(h(i), seq, op).sign(key(i))
}

pub fn assign(labels: &[&str], address: Address, ttl: u32, expiry: Timestamp) -> Operation {
    Operation::Assign { labels: labels.iter().map(|s| s.to_string()).collect(), address, ttl, expiry }
}

pub fn delegate(target: Handle, expiry: Timestamp) -> Operation {
    Operation::Delegate { target, expiry }
}

/// Creates handle `i` in `reg` at `now`.
pub fn create(reg: &mut Registry, i: usize, now: Timestamp) {
    reg.apply(&create_req(key(i)), now).unwrap();
}
