//! Network service: line protocol, server, client and zone export.

mod client;
mod server;
pub mod wire;
mod zone;

pub use client::{Client, ClientError};
pub use server::{handle_request, serve, system_clock, Clock, ServerHandle};
pub use wire::{parse_request, response_verifies, BadRequest, MutationReply, ParsedResolution, WireRequest, MAX_REQUEST_LEN};
pub use zone::{export_zone, TXT_TTL};
