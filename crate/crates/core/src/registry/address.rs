use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Longest URL accepted as a binding target.
pub const MAX_URL_LEN: usize = 2048;

/// Where a handle currently lives.
///
/// Text forms (the only accepted spellings, so parse/format is a bijection):
/// `192.0.2.7`, `192.0.2.7:53`, `url:https://example.org/x`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Address {
    Ipv4(Ipv4Addr),
    Udp(SocketAddrV4),
    Url(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("BAD_ADDRESS {0}")]
pub struct BadAddress(pub String);

impl Address {
    pub fn ipv4(&self) -> Option<Ipv4Addr> {
        match self {
            Address::Ipv4(ip) => Some(*ip),
            _ => None,
        }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Ipv4(ip) => write!(f, "{ip}"),
            Address::Udp(sa) => write!(f, "{sa}"),
            Address::Url(url) => write!(f, "url:{url}"),
        }
    }
}

impl FromStr for Address {
    type Err = BadAddress;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadAddress(s.to_string());
        let addr = if let Some(url) = s.strip_prefix("url:") {
            let ok = !url.is_empty()
                && url.len() <= MAX_URL_LEN
                && url.chars().all(|c| c.is_ascii_graphic() && c != '|');
            if !ok {
                return Err(bad());
            }
            Address::Url(url.to_string())
        } else if s.contains(':') {
            Address::Udp(s.parse().map_err(|_| bad())?)
        } else {
            Address::Ipv4(s.parse().map_err(|_| bad())?)
        };
        // Reject alternative spellings such as leading zeros.
        if addr.to_string() != s {
            return Err(bad());
        }
        Ok(addr)
    }
}

impl Serialize for Address {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_forms() {
        for text in ["192.0.2.7", "0.0.0.0", "255.255.255.255", "192.0.2.7:53", "192.0.2.7:65535", "url:https://ydnac.example/shop?a=1"] {
            assert_eq!(text.parse::<Address>().unwrap().to_string(), text);
        }
    }

    #[test]
    fn rejects_bad_addresses() {
        for text in ["256.0.0.1", "1.2.3", "01.2.3.4", "1.2.3.4:65536", "1.2.3.4:", "url:", "url:a b", "url:a|b", "", "example.org"] {
            assert!(text.parse::<Address>().is_err(), "{text}");
        }
    }
}
