use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::wire::{
    format_resolve_request, format_update_request, parse_error, parse_mutation_reply, parse_resolution,
    MutationReply, ParsedResolution,
};
use crate::handle::Handle;
use crate::registry::UpdateRequest;
use crate::resolver::{Authority, ResolutionResult, ResolveError, ResolveOptions};
use crate::Timestamp;

/// Error returned by the server (`ERR <code> <detail>`), or a local failure
/// reported under `IO_ERROR` / `BAD_REPLY` / `BAD_REQUEST`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code} {detail}")]
pub struct ClientError {
    pub code: String,
    pub detail: String,
}

impl ClientError {
    fn new(code: &str, detail: impl Into<String>) -> Self {
        ClientError { code: code.into(), detail: detail.into() }
    }
}

impl From<io::Error> for ClientError {
    fn from(e: io::Error) -> Self {
        ClientError::new("IO_ERROR", e.to_string())
    }
}

impl From<ClientError> for ResolveError {
    fn from(e: ClientError) -> Self {
        ResolveError::Remote { code: e.code, detail: e.detail }
    }
}

/// Talks to a registry server. Each call uses a fresh connection.
#[derive(Debug, Clone)]
pub struct Client {
    addr: SocketAddr,
    timeout: Duration,
    strict: bool,
}

impl Client {
    pub fn new<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        Ok(Client { addr, timeout: Duration::from_secs(30), strict: false })
    }

    /// Also require a valid signature on every redirection hop.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Sends one raw line and returns the one-line reply.
    pub fn request(&self, line: &str) -> Result<String, ClientError> {
        let mut stream = TcpStream::connect_timeout(&self.addr, self.timeout)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        stream.write_all(format!("{line}\n").as_bytes())?;
        stream.flush()?;
        let mut reply = String::new();
        BufReader::new(stream).read_line(&mut reply)?;
        match reply.strip_suffix('\n') {
            Some(r) => Ok(r.to_string()),
            None => Err(ClientError::new("IO_ERROR", "connection closed mid-reply")),
        }
    }

    pub fn submit(&self, req: &UpdateRequest) -> Result<MutationReply, ClientError> {
        let line = format_update_request(req).map_err(|e| ClientError::new("BAD_REQUEST", e.0))?;
        self.mutation(&line)
    }

    /// Asks the sponsor for a new type 0 handle owned by `password`.
    pub fn create_sponsored(&self, password: &str) -> Result<MutationReply, ClientError> {
        if password.is_empty() || password.contains(char::is_whitespace) {
            return Err(ClientError::new("BAD_REQUEST", "passwords on the wire cannot contain whitespace"));
        }
        self.mutation(&format!("CREATE 0 {password}"))
    }

    fn mutation(&self, line: &str) -> Result<MutationReply, ClientError> {
        let reply = self.request(line)?;
        if let Some((code, detail)) = parse_error(&reply) {
            return Err(ClientError { code, detail });
        }
        parse_mutation_reply(&reply).map_err(|e| ClientError::new("BAD_REPLY", e.0))
    }

    /// Resolves remotely and verifies the answer locally.
    pub fn resolve(&self, handle: &Handle, labels: &[String], unsafe_ok: bool) -> Result<ParsedResolution, ResolveError> {
        let reply = self.request(&format_resolve_request(handle, labels, unsafe_ok))?;
        parse_resolution(&reply, handle, labels, unsafe_ok, self.strict)
    }

    pub fn export_zone(&self, origin: &str) -> Result<String, ClientError> {
        let reply = self.request(&format!("EXPORT-ZONE {origin}"))?;
        if let Some((code, detail)) = parse_error(&reply) {
            return Err(ClientError { code, detail });
        }
        reply
            .strip_prefix("OK ")
            .and_then(|h| hex::decode(h).ok())
            .and_then(|b| String::from_utf8(b).ok())
            .ok_or_else(|| ClientError::new("BAD_REPLY", "zone"))
    }
}

impl Authority for Client {
    /// `now` is the server's to decide; it is not sent.
    fn lookup(
        &self,
        handle: &Handle,
        labels: &[String],
        _now: Timestamp,
        options: ResolveOptions,
    ) -> Result<ResolutionResult, ResolveError> {
        self.resolve(handle, labels, options.allow_compromised).map(|p| p.result)
    }
}
