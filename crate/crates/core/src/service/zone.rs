//! Master-file export of the registry.

use crate::handle::{embed_fqdn, validate_root, HandleError};
use crate::registry::{HandleState, Registry};
use crate::Timestamp;

/// TTL of the per-handle TXT records.
pub const TXT_TTL: u32 = 3600;

/// Renders `registry` as a zone under `origin`.
///
/// Each Active handle contributes one A record per live IPv4 binding, at
/// its own labels; every handle contributes one TXT record with its state,
/// sequence number and key digest. Records are sorted by owner name, A
/// before TXT. Identical state and `now` give byte-identical output.
pub fn export_zone(registry: &Registry, origin: &str, now: Timestamp) -> Result<String, HandleError> {
    validate_root(origin)?;
    let mut records: Vec<(String, u8, String)> = Vec::new();
    for record in registry.records() {
        let owner = |labels: &[String]| embed_fqdn(&record.handle, labels, origin).map(|f| format!("{f}."));
        if record.state == HandleState::Active {
            for binding in record.bindings.values().filter(|b| b.is_live(now)) {
                if let Some(ip) = binding.address.ipv4() {
                    let name = owner(&binding.labels)?;
                    records.push((name.clone(), 0, format!("{name} {} IN A {ip}", binding.ttl_seconds)));
                }
            }
        }
        let name = owner(&[])?;
        records.push((
            name.clone(),
            1,
            format!(
                "{name} {TXT_TTL} IN TXT \"state={} seq={} keydigest={}\"",
                record.state.name(),
                record.seq,
                record.handle.digest_hex()
            ),
        ));
    }
    records.sort();
    let mut out = format!("; origin {origin}.\n");
    for (_, _, line) in records {
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}
